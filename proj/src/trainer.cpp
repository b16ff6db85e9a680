#include "bevcell/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "bevcell/bev.hpp"
#include "bevcell/errors.hpp"
#include "bevcell/rng.hpp"

namespace bevcell::train {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<Matrix*> param_list(enc::EncoderParams& p) {
    std::vector<Matrix*> out;
    for (auto& w : p.weights) out.push_back(&w);
    for (auto& b : p.biases) out.push_back(&b);
    return out;
}

// Gradients in the same order as param_list.
std::vector<Matrix> grad_list(ad::Tape& tape, const enc::EncoderLeaves& leaves) {
    std::vector<Matrix> out;
    for (const auto& w : leaves.weights) out.push_back(tape.grad(w));
    for (const auto& b : leaves.biases) out.push_back(tape.grad(b));
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr_max >= 0.0)) throw ParameterError("config: lr_max must be >= 0");
    if (!(weight_decay >= 0.0)) throw ParameterError("config: weight_decay must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ParameterError("config: betas must lie in (0, 1)");
    }
    if (!(eps > 0.0)) throw ParameterError("config: eps must be positive");
    if (epochs < 1) throw ParameterError("config: epochs must be >= 1");
    if (batch_size < 1) throw ParameterError("config: batch_size must be >= 1");
    if (!(delta_time > 0.0) || !(delta_dist > 0.0)) {
        throw ParameterError("config: pairing gaps must be positive");
    }
    if (!(cell_size > 0.0)) throw ParameterError("config: cell_size must be positive");
    if (grid_size < 1) throw ParameterError("config: grid_size must be >= 1");
    if (!(tau > 0.0)) throw ParameterError("config: tau must be positive");
    if (n_samples < 2) throw ParameterError("config: n_samples must be >= 2");
    if (!(occupancy_eps > 0.0)) throw ParameterError("config: occupancy_eps must be positive");
    if (hidden < 1 || dim < 2) throw ParameterError("config: encoder dims invalid");
    if (!(rate_hz > 0.0)) throw ParameterError("config: rate_hz must be positive");
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw FormatError("config: " + std::string(e.what()));
    }
    TrainConfig c;
    c.lr_max = j.value("lr_max", c.lr_max);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("pairing")) {
        const std::string p = j["pairing"];
        if (p == "by_time") c.pairing = io::GapKind::Time;
        else if (p == "by_dist") c.pairing = io::GapKind::Distance;
        else throw ParameterError("config: pairing must be by_time or by_dist");
    }
    c.delta_time = j.value("delta_time", c.delta_time);
    c.delta_dist = j.value("delta_dist", c.delta_dist);
    c.cell_size = j.value("cell_size", c.cell_size);
    c.grid_size = j.value("grid_size", c.grid_size);
    c.tau = j.value("tau", c.tau);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.occupancy_eps = j.value("occupancy_eps", c.occupancy_eps);
    if (j.contains("align_mode")) {
        c.align_mode = contrast::align_mode_from_name(j["align_mode"]);
    }
    c.seed = j.value("seed", c.seed);
    c.hidden = j.value("hidden", c.hidden);
    c.dim = j.value("dim", c.dim);
    c.center_input = j.value("center_input", c.center_input);
    c.rate_hz = j.value("rate_hz", c.rate_hz);
    c.validate();
    return c;
}

void save_config(const std::filesystem::path& path, const TrainConfig& c) {
    json j;
    j["lr_max"] = c.lr_max;
    j["weight_decay"] = c.weight_decay;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["pairing"] = c.pairing == io::GapKind::Time ? "by_time" : "by_dist";
    j["delta_time"] = c.delta_time;
    j["delta_dist"] = c.delta_dist;
    j["cell_size"] = c.cell_size;
    j["grid_size"] = c.grid_size;
    j["tau"] = c.tau;
    j["n_samples"] = c.n_samples;
    j["occupancy_eps"] = c.occupancy_eps;
    j["align_mode"] = contrast::align_mode_name(c.align_mode);
    j["seed"] = c.seed;
    j["hidden"] = c.hidden;
    j["dim"] = c.dim;
    j["center_input"] = c.center_input;
    j["rate_hz"] = c.rate_hz;
    std::ofstream out(path);
    if (!out) throw FileError("cannot open config for writing: " + path.string());
    out << j.dump(2) << "\n";
}

void adamw_step(std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                OptimizerState& state, const TrainConfig& cfg, double lr) {
    if (params.size() != grads.size()) {
        throw ContractError("adamw_step: " + std::to_string(params.size()) +
                            " params vs " + std::to_string(grads.size()) + " grads");
    }
    if (state.m.empty()) {
        for (const Matrix* p : params) {
            state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
            state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("adamw_step: optimizer state does not match parameter list");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& theta = *params[k];
        const Matrix& g = grads[k];
        if (g.rows() != theta.rows() || g.cols() != theta.cols()) {
            throw ContractError("adamw_step: gradient " + std::to_string(k) +
                                " shape mismatch");
        }
        Matrix& m = state.m[k];
        Matrix& v = state.v[k];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        const Matrix m_hat = m / bc1;
        const Matrix v_hat = v / bc2;
        theta -= lr * (m_hat.array() / (v_hat.array().sqrt() + cfg.eps) +
                       cfg.weight_decay * theta.array())
                     .matrix();
    }
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max) {
    if (total_steps == 0) return lr_max;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * lr_max * (1.0 + std::cos(3.14159265358979323846 * frac));
}

PairEvaluation evaluate_pair(const enc::EncoderParams& params, const PairSample& pair,
                             const TrainConfig& cfg, std::uint64_t sample_seed,
                             bool with_grad) {
    ad::Tape tape;
    const enc::EncoderLeaves leaves = enc::attach(tape, params);

    const ad::Tensor feat_a = enc::encode(tape, pair.a, leaves, cfg.center_input);
    const ad::Tensor feat_b = enc::encode(tape, pair.b, leaves, cfg.center_input);
    const bev::BevGrid grid_a = bev::bev_pool(feat_a, pair.a, cfg.cell_size, cfg.grid_size);

    bev::BevGrid aligned;
    if (cfg.align_mode == contrast::AlignMode::Exact3D) {
        aligned = contrast::align_exact3d(feat_b, pair.b, pair.rel, cfg.cell_size,
                                          cfg.grid_size);
    } else {
        const bev::BevGrid grid_b =
            bev::bev_pool(feat_b, pair.b, cfg.cell_size, cfg.grid_size);
        const geom::Affine2D affine = geom::affine2d_from_se3(pair.rel);
        aligned = cfg.align_mode == contrast::AlignMode::Bilinear2D
                      ? contrast::warp_bilinear(grid_b, affine)
                      : contrast::warp_nearest(grid_b, affine);
    }

    contrast::LossConfig loss_cfg;
    loss_cfg.tau = cfg.tau;
    loss_cfg.n_samples = cfg.n_samples;
    loss_cfg.occupancy_eps = cfg.occupancy_eps;
    loss_cfg.seed = sample_seed;

    const std::vector<bev::CellIndex> cells = contrast::sample_cells(grid_a, aligned, loss_cfg);
    if (cells.size() < 2) {
        throw EmptyOverlapError("evaluate_pair: a single overlapping cell is not enough");
    }

    const ad::Tensor loss = contrast::contrastive_loss(grid_a, aligned, cells, cfg.tau);

    PairEvaluation eval;
    eval.loss = loss.value()(0, 0);
    eval.n_cells = static_cast<Index>(cells.size());
    if (with_grad) {
        tape.backward(loss);
        eval.grads = grad_list(tape, leaves);
    }
    return eval;
}

PretrainResult pretrain(const std::vector<PairSample>& pairs, const TrainConfig& cfg,
                        const EpochCallback& on_epoch, const ResumePoint* resume) {
    cfg.validate();
    if (pairs.empty()) throw ContractError("pretrain: need at least one pair");
    for (const auto& p : pairs) {
        if (p.a.empty() || p.b.empty()) throw ContractError("pretrain: empty scan in pair");
    }

    const std::uint64_t batches_per_epoch =
        (pairs.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
        static_cast<std::size_t>(cfg.batch_size);
    const std::uint64_t total_steps =
        batches_per_epoch * static_cast<std::uint64_t>(cfg.epochs);

    PretrainResult result;
    int start_epoch = 0;
    if (resume) {
        result.params = resume->params;
        result.opt = resume->opt;
        start_epoch = static_cast<int>(resume->opt.sched_step / batches_per_epoch);
        if (start_epoch > cfg.epochs) {
            throw ContractError("pretrain: resume point is past the configured epochs");
        }
    } else {
        result.params = enc::init_params(cfg.seed, cfg.hidden, cfg.dim);
    }

    std::vector<Matrix*> params = param_list(result.params);
    std::uint64_t step = result.opt.sched_step;
    Index pairs_processed = 0;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng::SplitMix64 shuffle_rng(
            rng::derive(cfg.seed, 0xe90c0ull + static_cast<std::uint64_t>(epoch)));
        rng::shuffle(order, shuffle_rng);

        for (std::size_t base = 0; base < order.size();
             base += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t batch_end =
                std::min(order.size(), base + static_cast<std::size_t>(cfg.batch_size));

            std::vector<Matrix> grad_sum;
            double loss_sum = 0.0;
            Index cells_total = 0;
            int effective = 0;

            for (std::size_t k = base; k < batch_end; ++k) {
                const PairSample& pair = pairs[order[k]];
                ad::Tape tape;
                const enc::EncoderLeaves leaves = enc::attach(tape, result.params);

                const ad::Tensor feat_a = enc::encode(tape, pair.a, leaves, cfg.center_input);
                const ad::Tensor feat_b = enc::encode(tape, pair.b, leaves, cfg.center_input);
                const bev::BevGrid grid_a =
                    bev::bev_pool(feat_a, pair.a, cfg.cell_size, cfg.grid_size);

                bev::BevGrid aligned;
                if (cfg.align_mode == contrast::AlignMode::Exact3D) {
                    aligned = contrast::align_exact3d(feat_b, pair.b, pair.rel,
                                                      cfg.cell_size, cfg.grid_size);
                } else {
                    const bev::BevGrid grid_b =
                        bev::bev_pool(feat_b, pair.b, cfg.cell_size, cfg.grid_size);
                    const geom::Affine2D affine = geom::affine2d_from_se3(pair.rel);
                    aligned = cfg.align_mode == contrast::AlignMode::Bilinear2D
                                  ? contrast::warp_bilinear(grid_b, affine)
                                  : contrast::warp_nearest(grid_b, affine);
                }

                contrast::LossConfig loss_cfg;
                loss_cfg.tau = cfg.tau;
                loss_cfg.n_samples = cfg.n_samples;
                loss_cfg.occupancy_eps = cfg.occupancy_eps;
                loss_cfg.seed = rng::derive(
                    cfg.seed, 0x5a3ull + step * 1000003ull + static_cast<std::uint64_t>(k - base));

                std::vector<bev::CellIndex> cells;
                try {
                    cells = contrast::sample_cells(grid_a, aligned, loss_cfg);
                } catch (const EmptyOverlapError&) {
                    std::clog << "pretrain: skipping degenerate pair (" << pair.a.scan_id
                              << ", " << pair.b.scan_id << "): no overlapping cells\n";
                    ++result.pairs_skipped;
                    continue;
                }
                if (cells.size() < 2) {
                    std::clog << "pretrain: skipping pair (" << pair.a.scan_id << ", "
                              << pair.b.scan_id << "): a single overlapping cell\n";
                    ++result.pairs_skipped;
                    continue;
                }

                const ad::Tensor loss = contrast::contrastive_loss(grid_a, aligned, cells, cfg.tau);
                tape.backward(loss);

                const std::vector<Matrix> grads = grad_list(tape, leaves);
                if (grad_sum.empty()) {
                    grad_sum = grads;
                } else {
                    for (std::size_t g = 0; g < grads.size(); ++g) grad_sum[g] += grads[g];
                }
                loss_sum += loss.value()(0, 0);
                cells_total += static_cast<Index>(cells.size());
                ++effective;
                ++pairs_processed;
            }

            const double lr = cosine_lr(step, total_steps, cfg.lr_max);
            if (effective > 0) {
                for (auto& g : grad_sum) g /= static_cast<Scalar>(effective);
                adamw_step(params, grad_sum, result.opt, cfg, lr);
                result.metrics.push_back(StepRecord{step, epoch, lr,
                                                    loss_sum / static_cast<double>(effective),
                                                    cells_total});
            }
            ++step;
            result.opt.sched_step = step;
        }
        if (on_epoch) on_epoch(epoch, result.params, result.opt);
    }

    if (pairs_processed == 0) {
        throw RunError("pretrain: every pair was degenerate (no overlapping cells)");
    }
    return result;
}

void write_metrics_csv(const std::filesystem::path& path, const TrainConfig& cfg,
                       const std::vector<StepRecord>& metrics) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot open metrics file for writing: " + path.string());
    out << "# lr_max=" << fmt17(cfg.lr_max) << " weight_decay=" << fmt17(cfg.weight_decay)
        << " beta1=" << fmt17(cfg.beta1) << " beta2=" << fmt17(cfg.beta2)
        << " eps=" << fmt17(cfg.eps) << "\n";
    out << "# epochs=" << cfg.epochs << " batch_size=" << cfg.batch_size
        << " pairing=" << (cfg.pairing == io::GapKind::Time ? "by_time" : "by_dist")
        << " delta_time=" << fmt17(cfg.delta_time) << " delta_dist=" << fmt17(cfg.delta_dist)
        << "\n";
    out << "# cell_size=" << fmt17(cfg.cell_size) << " grid_size=" << cfg.grid_size
        << " tau=" << fmt17(cfg.tau) << " n_samples=" << cfg.n_samples
        << " occupancy_eps=" << fmt17(cfg.occupancy_eps)
        << " align_mode=" << contrast::align_mode_name(cfg.align_mode) << "\n";
    out << "# seed=" << cfg.seed << " hidden=" << cfg.hidden << " dim=" << cfg.dim
        << " center_input=" << (cfg.center_input ? 1 : 0)
        << " rate_hz=" << fmt17(cfg.rate_hz) << "\n";
    out << "step,epoch,lr,loss,n_cells\n";
    for (const auto& r : metrics) {
        out << r.step << "," << r.epoch << "," << fmt17(r.lr) << "," << fmt17(r.loss)
            << "," << r.n_cells << "\n";
    }
}

namespace {

constexpr char kOptMagic[4] = {'A', 'D', 'M', 'W'};

void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw FormatError("checkpoint: truncated optimizer section");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_moments(std::ostream& out, const std::vector<Matrix>& ms) {
    for (const Matrix& m : ms) {
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(sizeof(Scalar)) * m.size());
    }
}

void read_moments(std::istream& in, std::vector<Matrix>& ms) {
    for (Matrix& m : ms) {
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(Scalar)) * m.size());
        if (!in) throw FormatError("checkpoint: truncated moment data");
    }
}

}  // namespace

void save_train_checkpoint(const std::filesystem::path& path,
                           const enc::EncoderParams& params, const OptimizerState& opt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot open checkpoint for writing: " + path.string());
    enc::write_params(out, params);
    out.write(kOptMagic, 4);
    write_u64(out, opt.step);
    write_u64(out, opt.sched_step);
    write_moments(out, opt.m);
    write_moments(out, opt.v);
}

void load_train_checkpoint(const std::filesystem::path& path,
                           enc::EncoderParams& params, OptimizerState& opt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open checkpoint: " + path.string());
    params = enc::read_params(in);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kOptMagic, 4) != 0) {
        throw FormatError("checkpoint: missing optimizer section");
    }
    opt.step = read_u64(in);
    opt.sched_step = read_u64(in);
    opt.m.clear();
    opt.v.clear();
    for (const Matrix& w : params.weights) opt.m.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const Matrix& b : params.biases) opt.m.push_back(Matrix::Zero(b.rows(), b.cols()));
    opt.v = opt.m;
    read_moments(in, opt.m);
    read_moments(in, opt.v);
}

std::vector<PairSample> load_pair_dataset(const std::filesystem::path& data_dir,
                                          const TrainConfig& cfg) {
    const auto velodyne = data_dir / "velodyne";
    if (!std::filesystem::is_directory(velodyne)) {
        throw FileError("dataset: missing scan directory " + velodyne.string());
    }
    std::vector<std::filesystem::path> scan_files;
    for (const auto& entry : std::filesystem::directory_iterator(velodyne)) {
        if (entry.path().extension() == ".bin") scan_files.push_back(entry.path());
    }
    std::sort(scan_files.begin(), scan_files.end());

    io::PoseLoadOptions opts;
    if (std::filesystem::exists(data_dir / "calib.txt")) opts.calib_path = data_dir / "calib.txt";
    if (std::filesystem::exists(data_dir / "times.txt")) {
        opts.times_path = data_dir / "times.txt";
    } else {
        opts.rate_hz = cfg.rate_hz;
    }
    const io::PoseTrack track = io::load_poses(data_dir / "poses.txt", opts);
    if (track.size() != scan_files.size()) {
        throw DataError("dataset: " + std::to_string(scan_files.size()) + " scans vs " +
                        std::to_string(track.size()) + " poses");
    }

    const double gap = cfg.pairing == io::GapKind::Time ? cfg.delta_time : cfg.delta_dist;
    const std::vector<io::ScanPair> index_pairs = io::select_pairs(track, cfg.pairing, gap);

    std::vector<PairSample> samples;
    samples.reserve(index_pairs.size());
    for (const auto& ip : index_pairs) {
        PairSample s;
        s.a = io::load_scan(scan_files[static_cast<std::size_t>(ip.index_a)]);
        s.a.scan_id = ip.index_a;
        s.a.timestamp = track.timestamps[static_cast<std::size_t>(ip.index_a)];
        s.b = io::load_scan(scan_files[static_cast<std::size_t>(ip.index_b)]);
        s.b.scan_id = ip.index_b;
        s.b.timestamp = track.timestamps[static_cast<std::size_t>(ip.index_b)];
        s.rel = ip.rel;
        samples.push_back(std::move(s));
    }
    return samples;
}

PretrainResult run_pretrain(const std::filesystem::path& data_dir, const TrainConfig& cfg,
                            const std::filesystem::path& out_dir,
                            const std::optional<std::filesystem::path>& resume_from) {
    std::filesystem::create_directories(out_dir);
    const std::vector<PairSample> pairs = load_pair_dataset(data_dir, cfg);
    if (pairs.empty()) throw RunError("run_pretrain: pairing produced no pairs");

    ResumePoint resume;
    const ResumePoint* resume_ptr = nullptr;
    if (resume_from) {
        load_train_checkpoint(*resume_from, resume.params, resume.opt);
        resume_ptr = &resume;
    }

    const EpochCallback checkpoint_each_epoch =
        [&out_dir](int epoch, const enc::EncoderParams& p, const OptimizerState& o) {
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.bin", epoch);
            save_train_checkpoint(out_dir / name, p, o);
        };

    PretrainResult result = pretrain(pairs, cfg, checkpoint_each_epoch, resume_ptr);

    write_metrics_csv(out_dir / "metrics.csv", cfg, result.metrics);
    save_train_checkpoint(out_dir / "checkpoint_final.bin", result.params, result.opt);
    enc::save_checkpoint(out_dir / "encoder_final.bin", result.params);
    return result;
}

}  // namespace bevcell::train
