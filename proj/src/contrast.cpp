#include "bevcell/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bevcell/errors.hpp"
#include "bevcell/rng.hpp"

namespace bevcell::contrast {

namespace {

// Lattice snap tolerance, in cell units. Inverse-mapped coordinates that
// land within this distance of a grid node are treated as exactly on it, so
// integer-cell translations and 90-degree rotations survive roundoff and the
// degenerate bilinear weights stay exactly {0, 1}.
constexpr Scalar kSnapEps = 1e-9;

Scalar snap(Scalar v) {
    const Scalar r = std::round(v);
    return std::abs(v - r) < kSnapEps ? r : v;
}

struct WarpPlan {
    std::vector<ad::RowMix> terms;  // feature mixing, sorted by (dst, src)
    Vector occupancy;               // blended src occupancy clamped to {0,1}
};

// Continuous source cell coordinates sampled by destination cell (i, j):
// both grids share the convention that cell (i, j) is centered at metric
// ((j + 0.5) b - H, (i + 0.5) b - H) with H = M b / 2.
WarpPlan build_plan(const bev::BevGrid& src, const geom::Affine2D& a, bool bilinear) {
    const int m = src.grid_size;
    const Scalar b = src.cell_size;
    const Scalar half = static_cast<Scalar>(m) * b * 0.5;
    const geom::Affine2D inv = geom::affine2d_invert(a);

    WarpPlan plan;
    plan.occupancy = Vector::Zero(static_cast<Index>(m) * m);

    const auto src_occ = [&](Index row) { return std::min(src.occupancy(row), 1.0); };

    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            const Vec2 u((static_cast<Scalar>(j) + 0.5) * b - half,
                         (static_cast<Scalar>(i) + 0.5) * b - half);
            const Vec2 p = inv.apply(u);
            const Scalar cx = snap((p.x() + half) / b - 0.5);
            const Scalar cy = snap((p.y() + half) / b - 0.5);
            const Index dst = static_cast<Index>(i) * m + j;

            if (bilinear) {
                const Scalar fx = cx - std::floor(cx);
                const Scalar fy = cy - std::floor(cy);
                const int x0 = static_cast<int>(std::floor(cx));
                const int y0 = static_cast<int>(std::floor(cy));
                const Scalar w[4] = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy),
                                     (1.0 - fx) * fy, fx * fy};
                const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
                const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
                for (int k = 0; k < 4; ++k) {
                    if (w[k] <= 0.0) continue;  // keep lattice-exact cases exact
                    if (xs[k] < 0 || xs[k] >= m || ys[k] < 0 || ys[k] >= m) continue;
                    const Index s = static_cast<Index>(ys[k]) * m + xs[k];
                    plan.terms.push_back(ad::RowMix{dst, s, w[k]});
                    plan.occupancy(dst) += w[k] * src_occ(s);
                }
            } else {
                const int sx = static_cast<int>(std::floor(cx + 0.5));
                const int sy = static_cast<int>(std::floor(cy + 0.5));
                if (sx < 0 || sx >= m || sy < 0 || sy >= m) continue;
                const Index s = static_cast<Index>(sy) * m + sx;
                plan.terms.push_back(ad::RowMix{dst, s, 1.0});
                plan.occupancy(dst) = src_occ(s);
            }
        }
    }
    return plan;
}

bev::BevGrid warp(const bev::BevGrid& src, const geom::Affine2D& a, bool bilinear) {
    if (!src.features.valid()) throw ContractError("warp: source grid not on a tape");
    WarpPlan plan = build_plan(src, a, bilinear);
    bev::BevGrid out;
    out.features = ad::mix_rows(src.features, plan.terms,
                                static_cast<Index>(src.grid_size) * src.grid_size);
    out.occupancy = std::move(plan.occupancy);
    out.grid_size = src.grid_size;
    out.cell_size = src.cell_size;
    return out;
}

}  // namespace

const char* align_mode_name(AlignMode mode) {
    switch (mode) {
        case AlignMode::Bilinear2D: return "bilinear2d";
        case AlignMode::Nearest2D: return "nearest2d";
        case AlignMode::Exact3D: return "exact3d";
    }
    return "unknown";
}

AlignMode align_mode_from_name(const std::string& name) {
    if (name == "bilinear2d") return AlignMode::Bilinear2D;
    if (name == "nearest2d") return AlignMode::Nearest2D;
    if (name == "exact3d") return AlignMode::Exact3D;
    throw ParameterError("unknown align mode: " + name +
                         " (expected bilinear2d, nearest2d or exact3d)");
}

bev::BevGrid warp_bilinear(const bev::BevGrid& src, const geom::Affine2D& a) {
    return warp(src, a, true);
}

bev::BevGrid warp_nearest(const bev::BevGrid& src, const geom::Affine2D& a) {
    return warp(src, a, false);
}

bev::BevGrid align_exact3d(const ad::Tensor& features, const PointCloud& cloud,
                           const geom::RigidTransform& rel, Scalar cell_size,
                           int grid_size) {
    return bev::bev_pool(features, geom::register_3d(cloud, rel), cell_size, grid_size);
}

std::vector<bev::CellIndex> sample_cells(const bev::BevGrid& ref,
                                         const bev::BevGrid& warped,
                                         const LossConfig& cfg) {
    if (ref.grid_size != warped.grid_size) {
        throw ContractError("sample_cells: grids disagree on M (" +
                            std::to_string(ref.grid_size) + " vs " +
                            std::to_string(warped.grid_size) + ")");
    }
    if (cfg.n_samples < 2) throw ParameterError("sample_cells: n_samples must be >= 2");

    std::vector<Index> qualifying;
    const Index n_cells = static_cast<Index>(ref.grid_size) * ref.grid_size;
    for (Index r = 0; r < n_cells; ++r) {
        if (ref.occupancy(r) > 0.0 && warped.occupancy(r) > cfg.occupancy_eps) {
            qualifying.push_back(r);
        }
    }
    if (qualifying.empty()) {
        throw EmptyOverlapError("sample_cells: no cell occupied on both sides");
    }

    if (static_cast<int>(qualifying.size()) > cfg.n_samples) {
        // partial Fisher-Yates: the first n_samples entries are a uniform
        // sample without replacement
        rng::SplitMix64 g(rng::derive(cfg.seed, 0xce11ull));
        for (int k = 0; k < cfg.n_samples; ++k) {
            const std::size_t j = static_cast<std::size_t>(k) +
                static_cast<std::size_t>(rng::bounded(g, qualifying.size() - static_cast<std::size_t>(k)));
            std::swap(qualifying[static_cast<std::size_t>(k)], qualifying[j]);
        }
        qualifying.resize(static_cast<std::size_t>(cfg.n_samples));
    }

    std::vector<bev::CellIndex> cells;
    cells.reserve(qualifying.size());
    for (Index r : qualifying) cells.push_back(ref.cell_at(r));
    return cells;
}

ad::Tensor contrastive_loss(const bev::BevGrid& ref, const bev::BevGrid& warped,
                            const std::vector<bev::CellIndex>& cells, Scalar tau) {
    if (cells.size() < 2) {
        throw ContractError("contrastive_loss: need at least 2 cells, got " +
                            std::to_string(cells.size()));
    }
    if (!(tau > 0.0)) throw ParameterError("contrastive_loss: tau must be positive");
    if (ref.features.tape != warped.features.tape) {
        throw ContractError("contrastive_loss: grids live on different tapes");
    }

    std::vector<Index> rows;
    rows.reserve(cells.size());
    for (const auto& c : cells) rows.push_back(ref.row_of(c));

    // anchors: warped cells; candidates: reference cells (one-directional)
    const ad::Tensor anchors = ad::l2_normalize_rows(ad::gather_rows(warped.features, rows));
    const ad::Tensor refs = ad::l2_normalize_rows(ad::gather_rows(ref.features, rows));

    // L = sum_l [ lse_m(a_l . r_m / tau) - a_l . r_l / tau ]
    const ad::Tensor logits = ad::scale(ad::matmul(anchors, ad::transpose(refs)), 1.0 / tau);
    const ad::Tensor lse = ad::reduce_sum(ad::log_sum_exp_rows(logits));
    const ad::Tensor pos = ad::reduce_sum(ad::mul(anchors, refs));
    return ad::add(lse, ad::scale(pos, -1.0 / tau));
}

}  // namespace bevcell::contrast
