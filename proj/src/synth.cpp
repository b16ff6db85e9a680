#include "bevcell/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "bevcell/errors.hpp"
#include "bevcell/rng.hpp"

namespace bevcell::synth {

namespace {

constexpr Scalar kPi = 3.14159265358979323846;

Scalar class_reflectance(PointClass c) {
    switch (c) {
        case PointClass::Ground: return 0.2;
        case PointClass::Building: return 0.5;
        case PointClass::Car: return 0.7;
        case PointClass::Pole: return 0.9;
    }
    return 0.0;
}

// Smooth world-anchored reflectance variation for ground points. Being a
// function of world position it is consistent across views, which gives
// ground cells distinguishable signatures.
Scalar ground_field(Scalar wx, Scalar wy) {
    return 0.13 * std::sin(0.37 * wx) * std::sin(0.29 * wy + 1.0);
}

Mat3 yaw_rotation(Scalar yaw) {
    Mat3 r;
    const Scalar c = std::cos(yaw), s = std::sin(yaw);
    r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
    return r;
}

// Uniform point on the box surface, top and the four sides weighted by area
// (the bottom face is never visible).
Vec3 sample_box_surface(const Box& box, rng::SplitMix64& g) {
    const Scalar ex = box.half_extents.x(), ey = box.half_extents.y(),
                 ez = box.half_extents.z();
    const Scalar a_top = 4.0 * ex * ey;
    const Scalar a_x = 4.0 * ey * ez;  // each of the two x-normal faces: 2ey*2ez
    const Scalar a_y = 4.0 * ex * ez;
    const Scalar total = a_top + 2.0 * a_x + 2.0 * a_y;
    Scalar pick = rng::uniform01(g) * total;
    Scalar u = rng::uniform(g, -1.0, 1.0), v = rng::uniform(g, -1.0, 1.0);
    Vec3 local;
    if (pick < a_top) {
        local = Vec3(u * ex, v * ey, ez);
    } else if (pick < a_top + 2.0 * a_x) {
        const Scalar side = pick < a_top + a_x ? 1.0 : -1.0;
        local = Vec3(side * ex, u * ey, v * ez);
    } else {
        const Scalar side = pick < a_top + 2.0 * a_x + a_y ? 1.0 : -1.0;
        local = Vec3(u * ex, side * ey, v * ez);
    }
    return box.center + local;
}

Vec3 sample_cylinder_surface(const Cylinder& cyl, rng::SplitMix64& g) {
    const Scalar theta = rng::uniform(g, 0.0, 2.0 * kPi);
    const Scalar z = rng::uniform(g, 0.0, cyl.height);
    return Vec3(cyl.center_xy.x() + cyl.radius * std::cos(theta),
                cyl.center_xy.y() + cyl.radius * std::sin(theta), z);
}

}  // namespace

const char* class_name(PointClass c) {
    switch (c) {
        case PointClass::Ground: return "ground";
        case PointClass::Building: return "building";
        case PointClass::Car: return "car";
        case PointClass::Pole: return "pole";
    }
    return "unknown";
}

SyntheticScene generate_scene(std::uint64_t seed, int n_objects, int traj_len,
                              const SceneParams& params) {
    if (n_objects < 0) throw ParameterError("generate_scene: n_objects must be >= 0");
    if (traj_len < 2) throw ParameterError("generate_scene: traj_len must be >= 2");

    SyntheticScene scene;
    scene.seed = seed;

    rng::SplitMix64 g(rng::derive(seed, 0x5ce9eull));

    // Trajectory: roughly forward, bounded yaw change per step.
    const Scalar max_yaw = params.max_yaw_step_deg * kPi / 180.0;
    Scalar heading = 0.0;
    Vec2 pos(0.0, 0.0);
    for (int k = 0; k < traj_len; ++k) {
        geom::RigidTransform pose;
        pose.R = yaw_rotation(heading);
        pose.t = Vec3(pos.x(), pos.y(), params.sensor_height);
        scene.trajectory.poses.push_back(pose);
        scene.trajectory.timestamps.push_back(static_cast<double>(k) * params.scan_period);
        heading += rng::uniform(g, -max_yaw, max_yaw);
        pos += params.step_length * Vec2(std::cos(heading), std::sin(heading));
    }

    // Objects scattered alongside the path.
    for (int k = 0; k < n_objects; ++k) {
        const std::size_t anchor = static_cast<std::size_t>(
            rng::bounded(g, static_cast<std::uint64_t>(traj_len)));
        const Vec3 at = scene.trajectory.poses[anchor].t;
        const Scalar ahead = rng::uniform(g, -4.0, 8.0);
        const Scalar side = (rng::uniform01(g) < 0.5 ? -1.0 : 1.0);
        const Scalar draw = rng::uniform01(g);
        if (draw < 0.3) {
            Box b;
            b.cls = PointClass::Building;
            const Scalar hx = rng::uniform(g, 2.5, 6.0);
            const Scalar hy = rng::uniform(g, 2.5, 6.0);
            const Scalar h = rng::uniform(g, 6.0, 10.0);
            const Scalar lateral = side * rng::uniform(g, 6.0, 13.0);
            b.half_extents = Vec3(hx, hy, h * 0.5);
            b.center = Vec3(at.x() + ahead, at.y() + lateral, h * 0.5);
            scene.boxes.push_back(b);
        } else if (draw < 0.65) {
            Box b;
            b.cls = PointClass::Car;
            const Scalar lateral = side * rng::uniform(g, 2.5, 7.0);
            b.half_extents = Vec3(2.25, 0.9, 0.75);
            b.center = Vec3(at.x() + ahead, at.y() + lateral, 0.75);
            scene.boxes.push_back(b);
        } else {
            Cylinder c;
            const Scalar lateral = side * rng::uniform(g, 2.0, 8.0);
            c.center_xy = Vec2(at.x() + ahead, at.y() + lateral);
            c.radius = rng::uniform(g, 0.08, 0.2);
            c.height = rng::uniform(g, 3.0, 6.0);
            scene.poles.push_back(c);
        }
    }
    return scene;
}

LabeledCloud render_scan(const SyntheticScene& scene, int pose_index, int n_points,
                         Scalar noise_sigma, const SceneParams& params) {
    if (pose_index < 0 || static_cast<std::size_t>(pose_index) >= scene.trajectory.size()) {
        throw ContractError("render_scan: pose index " + std::to_string(pose_index) +
                            " out of range");
    }
    if (n_points < 0) throw ParameterError("render_scan: n_points must be >= 0");

    rng::SplitMix64 g(rng::derive(scene.seed,
                                  0x4e4d3ull + static_cast<std::uint64_t>(pose_index)));
    const geom::RigidTransform& pose = scene.trajectory.poses[static_cast<std::size_t>(pose_index)];
    const geom::RigidTransform inv = pose.inverse();
    const Vec2 sensor_xy(pose.t.x(), pose.t.y());

    // Objects within reach of this pose.
    struct Visible {
        bool is_box;
        std::size_t index;
    };
    std::vector<Visible> visible;
    for (std::size_t k = 0; k < scene.boxes.size(); ++k) {
        const Vec2 c(scene.boxes[k].center.x(), scene.boxes[k].center.y());
        if ((c - sensor_xy).norm() < params.range_cap) visible.push_back({true, k});
    }
    for (std::size_t k = 0; k < scene.poles.size(); ++k) {
        if ((scene.poles[k].center_xy - sensor_xy).norm() < params.range_cap) {
            visible.push_back({false, k});
        }
    }

    LabeledCloud out;
    out.cloud.scan_id = pose_index;
    out.cloud.timestamp = scene.trajectory.timestamps[static_cast<std::size_t>(pose_index)];
    out.cloud.points.reserve(static_cast<std::size_t>(n_points));
    out.labels.reserve(static_cast<std::size_t>(n_points));

    for (int k = 0; k < n_points; ++k) {
        Vec3 world;
        PointClass cls;
        if (visible.empty() || rng::uniform01(g) < params.ground_fraction) {
            // area-uniform disc around the sensor
            const Scalar r = params.range_cap * std::sqrt(rng::uniform01(g));
            const Scalar theta = rng::uniform(g, 0.0, 2.0 * kPi);
            world = Vec3(sensor_xy.x() + r * std::cos(theta),
                         sensor_xy.y() + r * std::sin(theta), 0.0);
            cls = PointClass::Ground;
        } else {
            const Visible& pick =
                visible[static_cast<std::size_t>(rng::bounded(g, visible.size()))];
            if (pick.is_box) {
                const Box& box = scene.boxes[pick.index];
                world = sample_box_surface(box, g);
                cls = box.cls;
            } else {
                world = sample_cylinder_surface(scene.poles[pick.index], g);
                cls = PointClass::Pole;
            }
        }

        Vec3 local = inv.apply(world);
        if (noise_sigma > 0.0) {
            local += noise_sigma * Vec3(rng::normal(g), rng::normal(g), rng::normal(g));
        }

        Scalar intensity = class_reflectance(cls);
        if (cls == PointClass::Ground) intensity += ground_field(world.x(), world.y());
        intensity += params.intensity_noise * rng::normal(g);
        intensity = std::clamp(intensity, 0.0, 1.0);

        out.cloud.points.push_back(LidarPoint{local.x(), local.y(), local.z(), intensity});
        out.labels.push_back(static_cast<int>(cls));
    }
    return out;
}

Scalar linear_probe(const Matrix& features, const std::vector<int>& labels,
                    std::uint64_t split_seed) {
    const Index n = features.rows();
    if (n < 10) throw ContractError("linear_probe: too few samples");
    if (static_cast<Index>(labels.size()) != n) {
        throw ShapeError("linear_probe: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " feature rows");
    }
    int n_classes = 0;
    for (int l : labels) {
        if (l < 0) throw ContractError("linear_probe: negative label");
        n_classes = std::max(n_classes, l + 1);
    }
    std::vector<Index> per_class(static_cast<std::size_t>(n_classes), 0);
    for (int l : labels) per_class[static_cast<std::size_t>(l)]++;
    if (std::count_if(per_class.begin(), per_class.end(), [](Index c) { return c > 0; }) < 2) {
        throw ContractError("linear_probe: needs at least two classes present");
    }

    // deterministic 70/30 split
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    rng::SplitMix64 g(rng::derive(split_seed, 0x9120beull));
    rng::shuffle(idx, g);
    const Index n_train = (n * 7) / 10;
    const Index n_test = n - n_train;

    // standardize on the training split; zero-variance dims drop out
    const Index d = features.cols();
    Vector mean = Vector::Zero(d), scale = Vector::Zero(d);
    for (Index k = 0; k < n_train; ++k) mean += features.row(idx[static_cast<std::size_t>(k)]).transpose();
    mean /= static_cast<Scalar>(n_train);
    for (Index k = 0; k < n_train; ++k) {
        const auto r = features.row(idx[static_cast<std::size_t>(k)]).transpose();
        scale += (r - mean).cwiseProduct(r - mean);
    }
    scale = (scale / static_cast<Scalar>(n_train)).cwiseSqrt();
    for (Index c = 0; c < d; ++c) scale(c) = scale(c) > 1e-12 ? 1.0 / scale(c) : 0.0;

    Matrix xtr(n_train, d);
    std::vector<int> ytr(static_cast<std::size_t>(n_train));
    for (Index k = 0; k < n_train; ++k) {
        const Index row = idx[static_cast<std::size_t>(k)];
        xtr.row(k) = (features.row(row).transpose() - mean).cwiseProduct(scale).transpose();
        ytr[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(row)];
    }

    // full-batch softmax regression
    Matrix w = Matrix::Zero(d, n_classes);
    Matrix bias = Matrix::Zero(1, n_classes);
    const int iters = 400;
    const Scalar lr = 0.5;
    Matrix onehot = Matrix::Zero(n_train, n_classes);
    for (Index k = 0; k < n_train; ++k) onehot(k, ytr[static_cast<std::size_t>(k)]) = 1.0;

    for (int it = 0; it < iters; ++it) {
        Matrix logits = xtr * w;
        logits.rowwise() += bias.row(0);
        for (Index r = 0; r < n_train; ++r) {
            const Scalar m = logits.row(r).maxCoeff();
            logits.row(r) = (logits.row(r).array() - m).exp();
            logits.row(r) /= logits.row(r).sum();
        }
        const Matrix diff = (logits - onehot) / static_cast<Scalar>(n_train);
        w -= lr * (xtr.transpose() * diff);
        bias -= lr * diff.colwise().sum().matrix();
    }

    Index correct = 0;
    for (Index k = n_train; k < n; ++k) {
        const Index row = idx[static_cast<std::size_t>(k)];
        const Vector x = (features.row(row).transpose() - mean).cwiseProduct(scale);
        Index best = 0;
        (x.transpose() * w + bias).row(0).maxCoeff(&best);
        if (static_cast<int>(best) == labels[static_cast<std::size_t>(row)]) ++correct;
    }
    return static_cast<Scalar>(correct) / static_cast<Scalar>(n_test);
}

void export_dataset(const SyntheticScene& scene, const std::filesystem::path& dir,
                    int n_points, Scalar noise_sigma, const SceneParams& params) {
    std::filesystem::create_directories(dir / "velodyne");
    char name[32];
    for (std::size_t k = 0; k < scene.trajectory.size(); ++k) {
        const LabeledCloud lc = render_scan(scene, static_cast<int>(k), n_points,
                                            noise_sigma, params);
        std::snprintf(name, sizeof(name), "%06zu.bin", k);
        io::save_scan(dir / "velodyne" / name, lc.cloud);
    }
    io::save_poses(dir / "poses.txt", scene.trajectory);
    io::save_times(dir / "times.txt", scene.trajectory.timestamps);
}

}  // namespace bevcell::synth
