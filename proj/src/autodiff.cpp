#include "bevcell/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "bevcell/errors.hpp"

namespace bevcell::ad {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream s;
    s << "[" << m.rows() << "x" << m.cols() << "]";
    return s.str();
}

void check_finite(const Matrix& m, const char* op) {
    if (!m.allFinite()) {
        throw DataError(std::string(op) + ": non-finite value in result");
    }
}

void check_same_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.valid() || !b.valid() || a.tape != b.tape) {
        throw ContractError(std::string(op) + ": operands live on different tapes");
    }
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                     " vs " + shape_str(b));
}

}  // namespace

const Matrix& Tensor::value() const {
    if (!valid()) throw ContractError("Tensor: empty handle");
    return tape->value(id);
}

int Tape::emit(Matrix value) {
    check_finite(value, "forward");
    nodes_.push_back(Node{std::move(value), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::constant(Matrix value) { return Tensor{this, emit(std::move(value))}; }

Tensor Tape::leaf(Matrix value) { return Tensor{this, emit(std::move(value))}; }

const Matrix& Tape::value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }

void Tape::accumulate(int id, const Matrix& delta) {
    Matrix& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) {
        g = Matrix::Zero(nodes_[static_cast<std::size_t>(id)].value.rows(),
                         nodes_[static_cast<std::size_t>(id)].value.cols());
    }
    g += delta;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.valid() || loss.tape != this) {
        throw ContractError("backward: loss is not a node of this tape");
    }
    const Matrix& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(lv));
    }
    grads_.assign(nodes_.size(), Matrix());
    grads_[static_cast<std::size_t>(loss.id)] = Matrix::Ones(1, 1);
    // Descending ids: every consumer is processed before its producers, and
    // the accumulation order is fixed, so identical tapes give identical bits.
    for (int id = loss.id; id >= 0; --id) {
        const Matrix& g = grads_[static_cast<std::size_t>(id)];
        if (g.size() == 0) continue;
        const auto& pull = nodes_[static_cast<std::size_t>(id)].pull;
        if (pull) pull(*this, g);
    }
}

const Matrix& Tape::grad(const Tensor& t) {
    if (!t.valid() || t.tape != this) {
        throw ContractError("grad: tensor is not a node of this tape");
    }
    if (grads_.size() != nodes_.size()) {
        throw ContractError("grad: backward() has not been run");
    }
    Matrix& g = grads_[static_cast<std::size_t>(t.id)];
    if (g.size() == 0) {
        g = Matrix::Zero(t.rows(), t.cols());
    }
    return g;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b, "matmul");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
    const int id = t.emit(av * bv);
    const int pa = a.id, pb = b.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, pb](Tape& tp, const Matrix& g) {
        tp.accumulate(pa, g * tp.value(pb).transpose());
        tp.accumulate(pb, tp.value(pa).transpose() * g);
    };
    return Tensor{&t, id};
}

Tensor transpose(const Tensor& a) {
    Tape& t = *a.tape;
    const int id = t.emit(t.value(a.id).transpose());
    const int pa = a.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa](Tape& tp, const Matrix& g) {
        tp.accumulate(pa, g.transpose());
    };
    return Tensor{&t, id};
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b, "add");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("add", av, bv);
    const int id = t.emit(av + bv);
    const int pa = a.id, pb = b.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, pb](Tape& tp, const Matrix& g) {
        tp.accumulate(pa, g);
        tp.accumulate(pb, g);
    };
    return Tensor{&t, id};
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    check_same_tape(a, row, "add_rowvec");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& rv = t.value(row.id);
    if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_rowvec", av, rv);
    Matrix out = av;
    out.rowwise() += rv.row(0);
    const int id = t.emit(std::move(out));
    const int pa = a.id, pr = row.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, pr](Tape& tp, const Matrix& g) {
        tp.accumulate(pa, g);
        Matrix gr(1, g.cols());
        gr.row(0) = g.colwise().sum();
        tp.accumulate(pr, gr);
    };
    return Tensor{&t, id};
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_tape(a, b, "mul");
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("mul", av, bv);
    const int id = t.emit(av.cwiseProduct(bv));
    const int pa = a.id, pb = b.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, pb](Tape& tp, const Matrix& g) {
        tp.accumulate(pa, g.cwiseProduct(tp.value(pb)));
        tp.accumulate(pb, g.cwiseProduct(tp.value(pa)));
    };
    return Tensor{&t, id};
}

Tensor relu(const Tensor& a) {
    Tape& t = *a.tape;
    const int id = t.emit(t.value(a.id).cwiseMax(0.0));
    const int pa = a.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa](Tape& tp, const Matrix& g) {
        // subgradient 0 at the kink
        const Matrix mask = (tp.value(pa).array() > 0.0).cast<Scalar>().matrix();
        tp.accumulate(pa, g.cwiseProduct(mask));
    };
    return Tensor{&t, id};
}

Tensor tanh(const Tensor& a) {
    Tape& t = *a.tape;
    const int id = t.emit(t.value(a.id).array().tanh().matrix());
    const int pa = a.id, self = id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, self](Tape& tp, const Matrix& g) {
        const auto y = tp.value(self).array();
        tp.accumulate(pa, (g.array() * (1.0 - y * y)).matrix());
    };
    return Tensor{&t, id};
}

Tensor scale(const Tensor& a, Scalar s) {
    Tape& t = *a.tape;
    const int id = t.emit(t.value(a.id) * s);
    const int pa = a.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, s](Tape& tp, const Matrix& g) {
        tp.accumulate(pa, g * s);
    };
    return Tensor{&t, id};
}

Tensor reduce_sum(const Tensor& a) {
    Tape& t = *a.tape;
    Matrix out(1, 1);
    out(0, 0) = t.value(a.id).sum();
    const int id = t.emit(std::move(out));
    const int pa = a.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa](Tape& tp, const Matrix& g) {
        tp.accumulate(pa, Matrix::Constant(tp.value(pa).rows(), tp.value(pa).cols(), g(0, 0)));
    };
    return Tensor{&t, id};
}

Tensor reduce_mean_by_group(const Tensor& a, const std::vector<int>& groups,
                            int n_groups) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    if (static_cast<Index>(groups.size()) != av.rows()) {
        throw ShapeError("reduce_mean_by_group: " + std::to_string(groups.size()) +
                         " group ids for " + shape_str(av));
    }
    if (n_groups < 1) throw ContractError("reduce_mean_by_group: n_groups < 1");
    std::vector<Index> counts(static_cast<std::size_t>(n_groups), 0);
    Matrix out = Matrix::Zero(n_groups, av.cols());
    for (Index r = 0; r < av.rows(); ++r) {
        const int g = groups[static_cast<std::size_t>(r)];
        if (g < 0) continue;
        if (g >= n_groups) {
            throw ContractError("reduce_mean_by_group: group id " + std::to_string(g) +
                                " out of range [0, " + std::to_string(n_groups) + ")");
        }
        out.row(g) += av.row(r);
        counts[static_cast<std::size_t>(g)]++;
    }
    for (int g = 0; g < n_groups; ++g) {
        if (counts[static_cast<std::size_t>(g)] > 0) {
            out.row(g) /= static_cast<Scalar>(counts[static_cast<std::size_t>(g)]);
        }
    }
    const int id = t.emit(std::move(out));
    const int pa = a.id;
    t.nodes_[static_cast<std::size_t>(id)].pull =
        [pa, groups, counts](Tape& tp, const Matrix& g) {
            Matrix gx = Matrix::Zero(tp.value(pa).rows(), tp.value(pa).cols());
            for (Index r = 0; r < gx.rows(); ++r) {
                const int grp = groups[static_cast<std::size_t>(r)];
                if (grp < 0) continue;
                gx.row(r) = g.row(grp) / static_cast<Scalar>(counts[static_cast<std::size_t>(grp)]);
            }
            tp.accumulate(pa, gx);
        };
    return Tensor{&t, id};
}

Tensor l2_normalize_rows(const Tensor& a, Scalar eps) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    Matrix out(av.rows(), av.cols());
    Vector norms(av.rows());
    for (Index r = 0; r < av.rows(); ++r) {
        norms(r) = std::max(av.row(r).norm(), eps);
        out.row(r) = av.row(r) / norms(r);
    }
    const int id = t.emit(std::move(out));
    const int pa = a.id, self = id;
    t.nodes_[static_cast<std::size_t>(id)].pull =
        [pa, self, norms, eps](Tape& tp, const Matrix& g) {
            const Matrix& x = tp.value(pa);
            const Matrix& y = tp.value(self);
            Matrix gx(x.rows(), x.cols());
            for (Index r = 0; r < x.rows(); ++r) {
                if (x.row(r).norm() > eps) {
                    // J = (I - y y^T) / ||x||; the pulled gradient is
                    // orthogonal to the normalized row.
                    const Scalar dot = g.row(r).dot(y.row(r));
                    gx.row(r) = (g.row(r) - dot * y.row(r)) / norms(r);
                } else {
                    gx.row(r) = g.row(r) / eps;
                }
            }
            tp.accumulate(pa, gx);
        };
    return Tensor{&t, id};
}

Tensor log_sum_exp_rows(const Tensor& a) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    if (av.cols() < 1) throw ShapeError("log_sum_exp_rows: empty rows " + shape_str(av));
    Matrix out(av.rows(), 1);
    for (Index r = 0; r < av.rows(); ++r) {
        const Scalar m = av.row(r).maxCoeff();
        out(r, 0) = m + std::log((av.row(r).array() - m).exp().sum());
    }
    const int id = t.emit(std::move(out));
    const int pa = a.id, self = id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, self](Tape& tp, const Matrix& g) {
        const Matrix& x = tp.value(pa);
        const Matrix& y = tp.value(self);
        Matrix gx(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
            // d lse / dx = softmax(x), recovered from the saved output
            gx.row(r) = g(r, 0) * (x.row(r).array() - y(r, 0)).exp().matrix();
        }
        tp.accumulate(pa, gx);
    };
    return Tensor{&t, id};
}

Tensor gather_rows(const Tensor& a, const std::vector<Index>& rows) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    Matrix out(static_cast<Index>(rows.size()), av.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] < 0 || rows[k] >= av.rows()) {
            throw ContractError("gather_rows: row " + std::to_string(rows[k]) +
                                " out of range [0, " + std::to_string(av.rows()) + ")");
        }
        out.row(static_cast<Index>(k)) = av.row(rows[k]);
    }
    const int id = t.emit(std::move(out));
    const int pa = a.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, rows](Tape& tp, const Matrix& g) {
        Matrix gx = Matrix::Zero(tp.value(pa).rows(), tp.value(pa).cols());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            gx.row(rows[k]) += g.row(static_cast<Index>(k));
        }
        tp.accumulate(pa, gx);
    };
    return Tensor{&t, id};
}

Tensor mix_rows(const Tensor& a, const std::vector<RowMix>& plan, Index out_rows) {
    Tape& t = *a.tape;
    const Matrix& av = t.value(a.id);
    if (out_rows < 0) throw ContractError("mix_rows: negative out_rows");
    Matrix out = Matrix::Zero(out_rows, av.cols());
    for (const RowMix& m : plan) {
        if (m.src < 0 || m.src >= av.rows() || m.dst < 0 || m.dst >= out_rows) {
            throw ContractError("mix_rows: term (" + std::to_string(m.dst) + " <- " +
                                std::to_string(m.src) + ") out of range");
        }
        out.row(m.dst) += m.w * av.row(m.src);
    }
    const int id = t.emit(std::move(out));
    const int pa = a.id;
    t.nodes_[static_cast<std::size_t>(id)].pull = [pa, plan](Tape& tp, const Matrix& g) {
        Matrix gx = Matrix::Zero(tp.value(pa).rows(), tp.value(pa).cols());
        for (const RowMix& m : plan) {
            gx.row(m.src) += m.w * g.row(m.dst);
        }
        tp.accumulate(pa, gx);
    };
    return Tensor{&t, id};
}

}  // namespace bevcell::ad
