#include "bevcell/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "bevcell/errors.hpp"
#include "bevcell/rng.hpp"

namespace bevcell::enc {

namespace {

constexpr char kMagic[4] = {'B', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

Matrix input_matrix(const PointCloud& cloud, bool center_input) {
    Matrix x(static_cast<Index>(cloud.size()), 4);
    for (Index i = 0; i < x.rows(); ++i) {
        const auto& p = cloud.points[static_cast<std::size_t>(i)];
        x(i, 0) = p.x;
        x(i, 1) = p.y;
        x(i, 2) = p.z;
        x(i, 3) = p.intensity;
    }
    if (center_input && x.rows() > 0) {
        const auto centroid = x.leftCols<3>().colwise().mean().eval();
        x.leftCols<3>().rowwise() -= centroid;
    }
    return x;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("checkpoint: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_matrix(std::ostream& out, const Matrix& m) {
    // row-major contiguous f64; this build targets little-endian hosts
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(Scalar)) * m.size());
}

Matrix read_matrix(std::istream& in, Index rows, Index cols) {
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(Scalar)) * m.size());
    if (!in) throw FormatError("checkpoint: truncated weight data");
    return m;
}

}  // namespace

void EncoderParams::validate() const {
    if (dim < 2) throw ParameterError("EncoderParams: dim must be >= 2");
    if (hidden < 1) throw ParameterError("EncoderParams: hidden must be >= 1");
    if (weights.size() != 3 || biases.size() != 3) {
        throw ContractError("EncoderParams: expected 3 weight and 3 bias matrices");
    }
    const Index sizes[4] = {4, hidden, hidden, dim};
    for (std::size_t l = 0; l < 3; ++l) {
        if (weights[l].rows() != sizes[l] || weights[l].cols() != sizes[l + 1] ||
            biases[l].rows() != 1 || biases[l].cols() != sizes[l + 1]) {
            throw ContractError("EncoderParams: layer " + std::to_string(l) +
                                " shapes inconsistent with [4," + std::to_string(hidden) +
                                "," + std::to_string(hidden) + "," + std::to_string(dim) + "]");
        }
        if (!weights[l].allFinite() || !biases[l].allFinite()) {
            throw DataError("EncoderParams: non-finite entry in layer " + std::to_string(l));
        }
    }
}

EncoderParams init_params(std::uint64_t seed, int hidden, int dim) {
    if (hidden < 1 || dim < 1) throw ParameterError("init_params: hidden and dim must be >= 1");
    EncoderParams p;
    p.hidden = hidden;
    p.dim = dim;
    rng::SplitMix64 g(rng::derive(seed, 0x31cull));
    const Index sizes[4] = {4, hidden, hidden, dim};
    for (std::size_t l = 0; l < 3; ++l) {
        const Index fan_in = sizes[l], fan_out = sizes[l + 1];
        const Scalar s = std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (Index r = 0; r < w.rows(); ++r) {
            for (Index c = 0; c < w.cols(); ++c) {
                w(r, c) = rng::uniform(g, -s, s);
            }
        }
        p.weights.push_back(std::move(w));
        p.biases.push_back(Matrix::Zero(1, fan_out));
    }
    return p;
}

EncoderLeaves attach(ad::Tape& tape, const EncoderParams& params) {
    params.validate();
    EncoderLeaves leaves;
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        leaves.weights.push_back(tape.leaf(params.weights[l]));
        leaves.biases.push_back(tape.leaf(params.biases[l]));
    }
    return leaves;
}

ad::Tensor encode(ad::Tape& tape, const PointCloud& cloud,
                  const EncoderLeaves& leaves, bool center_input) {
    if (cloud.empty()) throw ContractError("encode: empty point cloud");
    ad::Tensor h = tape.constant(input_matrix(cloud, center_input));
    for (std::size_t l = 0; l < leaves.weights.size(); ++l) {
        h = ad::add_rowvec(ad::matmul(h, leaves.weights[l]), leaves.biases[l]);
        if (l + 1 < leaves.weights.size()) h = ad::relu(h);
    }
    return h;
}

Matrix forward(const EncoderParams& params, const PointCloud& cloud, bool center_input) {
    params.validate();
    if (cloud.empty()) throw ContractError("forward: empty point cloud");
    Matrix h = input_matrix(cloud, center_input);
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        Matrix z = h * params.weights[l];
        z.rowwise() += params.biases[l].row(0);
        h = (l + 1 < params.layer_count()) ? z.cwiseMax(0.0).eval() : z;
    }
    return h;
}

void write_params(std::ostream& out, const EncoderParams& params) {
    params.validate();
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(params.hidden));
    write_u32(out, static_cast<std::uint32_t>(params.dim));
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        write_matrix(out, params.weights[l]);
        write_matrix(out, params.biases[l]);
    }
}

EncoderParams read_params(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic");
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    EncoderParams p;
    p.hidden = static_cast<int>(read_u32(in));
    p.dim = static_cast<int>(read_u32(in));
    if (p.hidden < 1 || p.dim < 2) throw FormatError("checkpoint: invalid header dims");
    const Index sizes[4] = {4, p.hidden, p.hidden, p.dim};
    for (std::size_t l = 0; l < 3; ++l) {
        p.weights.push_back(read_matrix(in, sizes[l], sizes[l + 1]));
        p.biases.push_back(read_matrix(in, 1, sizes[l + 1]));
    }
    p.validate();
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot open checkpoint for writing: " + path.string());
    write_params(out, params);
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open checkpoint: " + path.string());
    return read_params(in);
}

}  // namespace bevcell::enc
