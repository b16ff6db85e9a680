#include "bevcell/bev.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <tuple>

#include "bevcell/errors.hpp"

namespace bevcell::bev {

namespace {

void check_grid_params(Scalar cell_size, int grid_size, const char* op) {
    if (!(cell_size > 0.0)) {
        throw ParameterError(std::string(op) + ": cell size must be positive");
    }
    if (grid_size < 1) {
        throw ParameterError(std::string(op) + ": grid size must be >= 1");
    }
}

}  // namespace

std::optional<CellIndex> cell_of(Scalar x, Scalar y, Scalar b, int grid_size) {
    check_grid_params(b, grid_size, "cell_of");
    const Scalar half = static_cast<Scalar>(grid_size) * b * 0.5;
    const Scalar jc = std::floor((x + half) / b);
    const Scalar ic = std::floor((y + half) / b);
    if (jc < 0.0 || jc >= static_cast<Scalar>(grid_size) || ic < 0.0 ||
        ic >= static_cast<Scalar>(grid_size)) {
        return std::nullopt;
    }
    return CellIndex{static_cast<int>(ic), static_cast<int>(jc)};
}

BevGrid bev_pool(const ad::Tensor& features, const PointCloud& cloud,
                 Scalar cell_size, int grid_size) {
    check_grid_params(cell_size, grid_size, "bev_pool");
    if (!features.valid()) throw ContractError("bev_pool: features not on a tape");
    if (features.rows() != static_cast<Index>(cloud.size())) {
        throw ShapeError("bev_pool: " + std::to_string(features.rows()) +
                         " feature rows for " + std::to_string(cloud.size()) + " points");
    }

    const Index n_cells = static_cast<Index>(grid_size) * grid_size;

    // In-range points, keyed by (cell row, point record). Sorting by the
    // point record itself gives each cell a canonical summation order, so
    // pooled features are bit-identical under input permutation.
    struct Member {
        Index cell;
        Index point;
    };
    std::vector<Member> members;
    members.reserve(cloud.size());
    Index dropped = 0;
    for (Index p = 0; p < static_cast<Index>(cloud.size()); ++p) {
        const auto& pt = cloud.points[static_cast<std::size_t>(p)];
        const auto cell = cell_of(pt.x, pt.y, cell_size, grid_size);
        if (!cell) {
            ++dropped;
            continue;
        }
        members.push_back(Member{static_cast<Index>(cell->i) * grid_size + cell->j, p});
    }
    std::sort(members.begin(), members.end(), [&cloud](const Member& a, const Member& b) {
        if (a.cell != b.cell) return a.cell < b.cell;
        const auto& pa = cloud.points[static_cast<std::size_t>(a.point)];
        const auto& pb = cloud.points[static_cast<std::size_t>(b.point)];
        return std::tie(pa.x, pa.y, pa.z, pa.intensity) <
               std::tie(pb.x, pb.y, pb.z, pb.intensity);
    });

    std::vector<Index> order;
    std::vector<int> groups;
    order.reserve(members.size());
    groups.reserve(members.size());
    Vector occupancy = Vector::Zero(n_cells);
    for (const Member& m : members) {
        order.push_back(m.point);
        groups.push_back(static_cast<int>(m.cell));
        occupancy(m.cell) += 1.0;
    }

    BevGrid grid;
    if (members.empty()) {
        grid.features = features.tape->constant(Matrix::Zero(n_cells, features.cols()));
    } else {
        const ad::Tensor picked = ad::gather_rows(features, order);
        grid.features = ad::reduce_mean_by_group(picked, groups, static_cast<int>(n_cells));
    }
    grid.occupancy = std::move(occupancy);
    grid.grid_size = grid_size;
    grid.cell_size = cell_size;
    grid.dropped = dropped;
    return grid;
}

BevGrid bev_native_ingest(ad::Tape& tape, const Matrix& grid_features,
                          const std::vector<std::uint8_t>& occupancy,
                          Scalar cell_size, int grid_size) {
    check_grid_params(cell_size, grid_size, "bev_native_ingest");
    const Index n_cells = static_cast<Index>(grid_size) * grid_size;
    if (grid_features.rows() != n_cells ||
        static_cast<Index>(occupancy.size()) != n_cells) {
        throw ShapeError("bev_native_ingest: got [" + std::to_string(grid_features.rows()) +
                         "x" + std::to_string(grid_features.cols()) + "] features and " +
                         std::to_string(occupancy.size()) + " occupancy flags for M = " +
                         std::to_string(grid_size));
    }
    BevGrid grid;
    grid.features = tape.constant(grid_features);
    grid.occupancy = Vector::Zero(n_cells);
    for (Index c = 0; c < n_cells; ++c) {
        grid.occupancy(c) = occupancy[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
    }
    grid.grid_size = grid_size;
    grid.cell_size = cell_size;
    return grid;
}

void write_debug_csv(std::ostream& out, const BevGrid& grid) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", grid.cell_size);
    out << "# cell_size=" << buf << " grid=" << grid.grid_size
        << " dim=" << grid.dim() << " dropped=" << grid.dropped << "\n";
    out << "i,j,count";
    for (Index d = 0; d < grid.dim(); ++d) out << ",feat_" << d;
    out << "\n";
    const Matrix& f = grid.features.value();
    for (Index r = 0; r < f.rows(); ++r) {
        if (grid.occupancy(r) <= 0.0) continue;
        const CellIndex c = grid.cell_at(r);
        std::snprintf(buf, sizeof(buf), "%.17g", grid.occupancy(r));
        out << c.i << "," << c.j << "," << buf;
        for (Index d = 0; d < f.cols(); ++d) {
            std::snprintf(buf, sizeof(buf), "%.17g", f(r, d));
            out << "," << buf;
        }
        out << "\n";
    }
}

}  // namespace bevcell::bev
