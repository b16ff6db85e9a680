#pragma once

#include <cstdint>
#include <vector>

#include "bevcell/autodiff.hpp"
#include "bevcell/bev.hpp"
#include "bevcell/geometry.hpp"
#include "bevcell/point_cloud.hpp"
#include "bevcell/types.hpp"

namespace bevcell::contrast {

/// How the second view's grid is brought into the first view's frame.
enum class AlignMode {
    Bilinear2D,  // warp the pooled grid, bilinear interpolation
    Nearest2D,   // warp the pooled grid, nearest-neighbor copy
    Exact3D,     // register the point cloud in 3D, then pool
};

const char* align_mode_name(AlignMode mode);
AlignMode align_mode_from_name(const std::string& name);

struct LossConfig {
    Scalar tau = 0.07;
    int n_samples = 4096;
    std::uint64_t seed = 0;
    Scalar occupancy_eps = 1e-6;
};

/// Backward-warp src into the destination frame of the given metric affine:
/// each destination cell center samples src at the inverse-mapped location,
/// blending the four neighbor cells. Contributions from outside the grid are
/// zero, and there is no per-cell occupancy rescaling; the l2 normalization
/// in the loss absorbs it. Occupancy is the same blend of src counts clamped
/// to {0, 1}.
bev::BevGrid warp_bilinear(const bev::BevGrid& src, const geom::Affine2D& a);

/// As warp_bilinear, but each destination cell copies its single nearest
/// source cell (round-half-up per axis). Occupancy copied as 0/1.
bev::BevGrid warp_nearest(const bev::BevGrid& src, const geom::Affine2D& a);

/// Register the cloud in 3D with rel, then pool: features land directly in
/// the reference frame with no interpolation.
bev::BevGrid align_exact3d(const ad::Tensor& features, const PointCloud& cloud,
                           const geom::RigidTransform& rel, Scalar cell_size,
                           int grid_size);

/// Uniform sample (without replacement, deterministic in cfg.seed) of cells
/// occupied on both sides: ref count > 0 and warped occupancy >
/// cfg.occupancy_eps. Returns all qualifying cells when fewer than
/// cfg.n_samples qualify; throws EmptyOverlapError when none do.
std::vector<bev::CellIndex> sample_cells(const bev::BevGrid& ref,
                                         const bev::BevGrid& warped,
                                         const LossConfig& cfg);

/// Cell-level InfoNCE over the sampled set: rows of both grids at the
/// sampled cells are l2-normalized, each warped cell is the anchor whose
/// positive is the same reference cell and whose negatives are the other
/// sampled reference cells, with temperature tau and a stable log-sum-exp.
/// One-directional. Requires at least two cells.
ad::Tensor contrastive_loss(const bev::BevGrid& ref, const bev::BevGrid& warped,
                            const std::vector<bev::CellIndex>& cells, Scalar tau);

}  // namespace bevcell::contrast
