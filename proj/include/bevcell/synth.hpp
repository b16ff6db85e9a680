#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bevcell/kitti_io.hpp"
#include "bevcell/point_cloud.hpp"
#include "bevcell/types.hpp"

namespace bevcell::synth {

enum class PointClass : int { Ground = 0, Building = 1, Car = 2, Pole = 3 };
constexpr int kNumClasses = 4;
const char* class_name(PointClass c);

/// Axis-aligned box sitting on the ground plane.
struct Box {
    Vec3 center;        // world frame; center.z() = half height
    Vec3 half_extents;
    PointClass cls = PointClass::Building;
};

/// Vertical cylinder with its base on the ground plane.
struct Cylinder {
    Vec2 center_xy;
    Scalar radius = 0.1;
    Scalar height = 4.0;
};

/// Synthetic urban scene: a ground plane at z = 0, boxes and poles placed
/// along a roughly-forward ego trajectory. Static by construction.
struct SyntheticScene {
    std::vector<Box> boxes;
    std::vector<Cylinder> poles;
    io::PoseTrack trajectory;  // world-from-sensor, sensor 1.8 m above ground
    std::uint64_t seed = 0;
};

/// Knobs of the generator/renderer. The defaults define the desk-scale
/// benchmark regime.
struct SceneParams {
    Scalar sensor_height = 1.8;      // meters above ground
    Scalar step_length = 1.0;        // meters of ego motion per scan
    Scalar max_yaw_step_deg = 5.0;   // keeps the planar-affine regime valid
    Scalar scan_period = 0.1;        // seconds between scans
    Scalar range_cap = 18.0;         // meters; surfaces sampled within this radius
    Scalar ground_fraction = 0.40;   // share of rays hitting the ground
    Scalar intensity_noise = 0.18;   // reflectance jitter, clamped to [0, 1]
};

struct LabeledCloud {
    PointCloud cloud;
    std::vector<int> labels;  // PointClass per point
};

/// Deterministic in seed. Objects are scattered alongside the trajectory;
/// the ego advances ~step_length per scan with at most max_yaw_step_deg of
/// yaw change, so the planar approximation of the grid alignment holds.
SyntheticScene generate_scene(std::uint64_t seed, int n_objects, int traj_len,
                              const SceneParams& params = {});

/// Sample surface points in the world frame within the range cap, move them
/// into the sensor frame via the inverse ego pose, add isotropic Gaussian
/// coordinate noise, and attach class labels plus a per-class reflectance
/// prior (ground 0.2, building 0.5, car 0.7, pole 0.9; ground reflectance
/// additionally varies smoothly with world position). Deterministic in
/// (scene.seed, pose_index).
LabeledCloud render_scan(const SyntheticScene& scene, int pose_index, int n_points,
                         Scalar noise_sigma, const SceneParams& params = {});

/// Multinomial logistic regression on a 70/30 split (deterministic in
/// split_seed), trained by full-batch gradient descent on standardized
/// features; returns held-out accuracy. Throws ContractError when fewer
/// than two classes are present.
Scalar linear_probe(const Matrix& features, const std::vector<int>& labels,
                    std::uint64_t split_seed);

/// Write the scene out in the scan/pose/times layout the loaders read
/// (velodyne/NNNNNN.bin, poses.txt, times.txt).
void export_dataset(const SyntheticScene& scene, const std::filesystem::path& dir,
                    int n_points, Scalar noise_sigma, const SceneParams& params = {});

}  // namespace bevcell::synth
