#include "bevcell/kitti_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "bevcell/errors.hpp"

namespace bevcell::io {

namespace {

constexpr std::size_t kRecordBytes = 16;

float read_f32_le(const unsigned char* b) {
    std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                      (static_cast<std::uint32_t>(b[1]) << 8) |
                      (static_cast<std::uint32_t>(b[2]) << 16) |
                      (static_cast<std::uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

void write_f32_le(unsigned char* b, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    b[0] = static_cast<unsigned char>(u & 0xffu);
    b[1] = static_cast<unsigned char>((u >> 8) & 0xffu);
    b[2] = static_cast<unsigned char>((u >> 16) & 0xffu);
    b[3] = static_cast<unsigned char>((u >> 24) & 0xffu);
}

std::vector<double> parse_decimal_lines(const std::filesystem::path& path,
                                        std::size_t per_line, const char* what) {
    std::ifstream in(path);
    if (!in) throw FileError(std::string("cannot open ") + what + ": " + path.string());
    std::vector<double> values;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ss(line);
        double v;
        std::size_t got = 0;
        while (ss >> v) {
            values.push_back(v);
            ++got;
        }
        if (got != per_line) {
            std::ostringstream msg;
            msg << path.filename().string() << ":" << line_no << ": expected "
                << per_line << " values, got " << got;
            throw FormatError(msg.str());
        }
    }
    return values;
}

geom::RigidTransform transform_from_12(const double* v) {
    geom::RigidTransform t;
    t.R << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    t.t = Vec3(v[3], v[7], v[11]);
    return t;
}

}  // namespace

void PoseTrack::validate() const {
    if (poses.size() != timestamps.size()) {
        throw ContractError("PoseTrack: " + std::to_string(poses.size()) + " poses vs " +
                            std::to_string(timestamps.size()) + " timestamps");
    }
    for (std::size_t i = 0; i + 1 < timestamps.size(); ++i) {
        if (!(timestamps[i] < timestamps[i + 1])) {
            throw DataError("PoseTrack: timestamps not strictly increasing at index " +
                            std::to_string(i + 1));
        }
    }
    for (std::size_t i = 0; i < poses.size(); ++i) {
        poses[i].validate(("pose " + std::to_string(i)).c_str());
    }
}

PointCloud load_scan(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FileError("cannot open scan: " + path.string());
    const std::streamoff size = in.tellg();
    in.seekg(0);
    if (static_cast<std::size_t>(size) % kRecordBytes != 0) {
        std::ostringstream msg;
        msg << path.filename().string() << ": file length " << size
            << " is not a multiple of 16; trailing record starts at byte offset "
            << (size - static_cast<std::streamoff>(static_cast<std::size_t>(size) % kRecordBytes));
        throw FormatError(msg.str());
    }
    const std::size_t n = static_cast<std::size_t>(size) / kRecordBytes;
    std::vector<unsigned char> buf(static_cast<std::size_t>(size));
    if (n > 0) {
        in.read(reinterpret_cast<char*>(buf.data()), size);
        if (!in) throw FormatError(path.filename().string() + ": short read");
    }

    PointCloud cloud;
    cloud.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = buf.data() + i * kRecordBytes;
        LidarPoint& p = cloud.points[i];
        p.x = static_cast<double>(read_f32_le(rec + 0));
        p.y = static_cast<double>(read_f32_le(rec + 4));
        p.z = static_cast<double>(read_f32_le(rec + 8));
        p.intensity = static_cast<double>(read_f32_le(rec + 12));
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) ||
            !std::isfinite(p.intensity)) {
            throw DataError(path.filename().string() + ": non-finite value at point index " +
                            std::to_string(i));
        }
    }
    return cloud;
}

void save_scan(const std::filesystem::path& path, const PointCloud& cloud) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot open scan for writing: " + path.string());
    std::vector<unsigned char> buf(cloud.size() * kRecordBytes);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const LidarPoint& p = cloud.points[i];
        unsigned char* rec = buf.data() + i * kRecordBytes;
        write_f32_le(rec + 0, static_cast<float>(p.x));
        write_f32_le(rec + 4, static_cast<float>(p.y));
        write_f32_le(rec + 8, static_cast<float>(p.z));
        write_f32_le(rec + 12, static_cast<float>(p.intensity));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
}

PoseTrack load_poses(const std::filesystem::path& pose_path,
                     const PoseLoadOptions& options) {
    const std::vector<double> raw = parse_decimal_lines(pose_path, 12, "pose file");
    const std::size_t n = raw.size() / 12;

    PoseTrack track;
    track.poses.reserve(n);

    if (options.calib_path) {
        // `Tr:` line, camera-from-lidar; conjugate poses into the sensor frame
        std::ifstream in(*options.calib_path);
        if (!in) throw FileError("cannot open calib: " + options.calib_path->string());
        std::optional<geom::RigidTransform> tr;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.rfind("Tr:", 0) != 0) continue;
            std::istringstream ss(line.substr(3));
            double v[12];
            for (int k = 0; k < 12; ++k) {
                if (!(ss >> v[k])) {
                    std::ostringstream msg;
                    msg << options.calib_path->filename().string() << ":" << line_no
                        << ": Tr line needs 12 values";
                    throw FormatError(msg.str());
                }
            }
            tr = transform_from_12(v);
        }
        if (!tr) {
            throw FormatError(options.calib_path->filename().string() + ": no Tr: line");
        }
        const Mat4 tr_m = tr->matrix();
        const Mat4 tr_inv = tr->inverse().matrix();
        for (std::size_t i = 0; i < n; ++i) {
            const geom::RigidTransform cam = transform_from_12(raw.data() + i * 12);
            track.poses.push_back(geom::RigidTransform::from_matrix(tr_inv * cam.matrix() * tr_m));
        }
    } else {
        std::clog << "load_poses: no calib file given, assuming poses are in the "
                     "sensor frame\n";
        for (std::size_t i = 0; i < n; ++i) {
            track.poses.push_back(transform_from_12(raw.data() + i * 12));
        }
    }

    if (options.times_path) {
        track.timestamps = parse_decimal_lines(*options.times_path, 1, "times file");
        if (track.timestamps.size() != n) {
            throw DataError("times file has " + std::to_string(track.timestamps.size()) +
                            " entries for " + std::to_string(n) + " poses");
        }
    } else if (options.rate_hz) {
        if (!(*options.rate_hz > 0.0)) {
            throw ParameterError("load_poses: rate must be positive");
        }
        for (std::size_t i = 0; i < n; ++i) {
            track.timestamps.push_back(static_cast<double>(i) / *options.rate_hz);
        }
    } else {
        throw ParameterError("load_poses: need a times file or a fixed scan rate");
    }

    track.validate();
    return track;
}

void save_poses(const std::filesystem::path& path, const PoseTrack& track) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot open pose file for writing: " + path.string());
    char buf[32];
    for (const auto& pose : track.poses) {
        const Mat4 m = pose.matrix();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
                out << buf << (r == 2 && c == 3 ? "" : " ");
            }
        }
        out << "\n";
    }
}

void save_times(const std::filesystem::path& path, const std::vector<double>& times) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot open times file for writing: " + path.string());
    char buf[32];
    for (double t : times) {
        std::snprintf(buf, sizeof(buf), "%.17g", t);
        out << buf << "\n";
    }
}

std::vector<ScanPair> select_pairs(const PoseTrack& track, GapKind kind, double gap) {
    if (track.size() == 0) throw ContractError("select_pairs: empty track");
    if (!(gap > 0.0)) throw ParameterError("select_pairs: gap must be positive");
    if (track.poses.size() != track.timestamps.size()) {
        throw ContractError("select_pairs: poses/timestamps length mismatch");
    }

    std::vector<ScanPair> pairs;
    const int n = static_cast<int>(track.size());
    for (int a = 0; a < n; ++a) {
        int partner = -1;
        for (int b = a + 1; b < n; ++b) {
            const double d =
                kind == GapKind::Time
                    ? track.timestamps[static_cast<std::size_t>(b)] -
                          track.timestamps[static_cast<std::size_t>(a)]
                    : (track.poses[static_cast<std::size_t>(b)].t -
                       track.poses[static_cast<std::size_t>(a)].t)
                          .norm();
            if (d >= gap) {
                partner = b;
                break;
            }
        }
        if (partner < 0) continue;
        ScanPair pair;
        pair.index_a = a;
        pair.index_b = partner;
        pair.rel = geom::relative_transform(track.poses[static_cast<std::size_t>(a)],
                                            track.poses[static_cast<std::size_t>(partner)]);
        pairs.push_back(pair);
    }
    return pairs;
}

}  // namespace bevcell::io
