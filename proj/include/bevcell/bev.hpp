#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "bevcell/autodiff.hpp"
#include "bevcell/point_cloud.hpp"
#include "bevcell/types.hpp"

namespace bevcell::bev {

struct CellIndex {
    int i = 0;  // row, along y
    int j = 0;  // column, along x

    friend bool operator==(const CellIndex& a, const CellIndex& b) {
        return a.i == b.i && a.j == b.j;
    }
};

/// An M x M x D feature grid over the z = 0 plane plus per-cell occupancy.
///
/// Storage is a [M*M x D] tensor with row = i * M + j. The grid is centered
/// on the sensor origin, half extent M * b / 2 per axis. Cells with no
/// contribution hold the all-zero feature. Pooled grids carry integer
/// occupancy counts; warped grids carry fractional occupancy weights.
struct BevGrid {
    ad::Tensor features;  // [M*M x D], on a tape
    Vector occupancy;     // M*M
    int grid_size = 0;    // M, cells per side
    Scalar cell_size = 0.0;  // b, meters
    Index dropped = 0;    // points that fell outside the grid (diagnostics)

    Index dim() const { return features.cols(); }
    Index row_of(const CellIndex& c) const {
        return static_cast<Index>(c.i) * grid_size + c.j;
    }
    CellIndex cell_at(Index row) const {
        return CellIndex{static_cast<int>(row) / grid_size,
                         static_cast<int>(row) % grid_size};
    }
};

/// Cell of a metric (x, y): with half extent H = M*b/2, column
/// j = floor((x + H) / b) and row i = floor((y + H) / b). Half-open cells:
/// a point exactly on the far edge is outside.
std::optional<CellIndex> cell_of(Scalar x, Scalar y, Scalar b, int grid_size);

/// Scatter-average pooling: project points to z = 0 and average the feature
/// rows of points sharing a cell. Differentiable; the gradient of a cell
/// feeds 1/count back to each member row. Out-of-range points are dropped
/// (tallied in BevGrid::dropped). Bit-invariant under input permutation.
BevGrid bev_pool(const ad::Tensor& features, const PointCloud& cloud,
                 Scalar cell_size, int grid_size);

/// Wrap features that were produced directly on a BEV grid by an external
/// backbone, skipping the projection/pooling step. Occupancy flags become
/// 0/1 counts.
BevGrid bev_native_ingest(ad::Tape& tape, const Matrix& grid_features,
                          const std::vector<std::uint8_t>& occupancy,
                          Scalar cell_size, int grid_size);

/// Debug dump of occupied cells: "i,j,count,feat_0..feat_{D-1}", one row per
/// occupied cell in row-major order, preceded by "#"-prefixed provenance.
void write_debug_csv(std::ostream& out, const BevGrid& grid);

}  // namespace bevcell::bev
