#pragma once

#include <functional>
#include <vector>

#include "bevcell/types.hpp"

namespace bevcell::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; the value lives on the tape.
struct Tensor {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
};

/// One term of a fixed row-mixing pattern: out[dst] += w * in[src].
/// This is the differentiable core of grid warping.
struct RowMix {
    Index dst = 0;
    Index src = 0;
    Scalar w = 0.0;
};

/// Append-only record of a forward computation over f64 matrices.
///
/// Nodes are topological by construction (parents precede children), so the
/// reverse sweep visits ids in descending order, which fixes the gradient
/// accumulation order and makes backward bit-deterministic. Every forward op
/// traps non-finite outputs.
///
/// A tape is single-owner during a forward/backward pass; distinct tapes may
/// run on distinct threads.
class Tape {
public:
    /// Node without tracked gradient (inputs, frozen data).
    Tensor constant(Matrix value);
    /// Parameter node; backward() produces a gradient for it.
    Tensor leaf(Matrix value);

    const Matrix& value(int id) const;

    /// Reverse sweep from a scalar loss node. Gradients are retrievable via
    /// grad() afterwards; nodes the loss does not reach get zeros.
    void backward(const Tensor& loss);
    const Matrix& grad(const Tensor& t);

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Matrix value;
        // Pulls the upstream gradient into the parents; null for leaves.
        std::function<void(Tape&, const Matrix&)> pull;
    };

    int emit(Matrix value);
    void accumulate(int id, const Matrix& delta);

    std::vector<Node> nodes_;
    std::vector<Matrix> grads_;

    friend Tensor matmul(const Tensor&, const Tensor&);
    friend Tensor transpose(const Tensor&);
    friend Tensor add(const Tensor&, const Tensor&);
    friend Tensor add_rowvec(const Tensor&, const Tensor&);
    friend Tensor mul(const Tensor&, const Tensor&);
    friend Tensor relu(const Tensor&);
    friend Tensor tanh(const Tensor&);
    friend Tensor scale(const Tensor&, Scalar);
    friend Tensor reduce_sum(const Tensor&);
    friend Tensor reduce_mean_by_group(const Tensor&, const std::vector<int>&, int);
    friend Tensor l2_normalize_rows(const Tensor&, Scalar);
    friend Tensor log_sum_exp_rows(const Tensor&);
    friend Tensor gather_rows(const Tensor&, const std::vector<Index>&);
    friend Tensor mix_rows(const Tensor&, const std::vector<RowMix>&, Index);
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
/// [n x m] + [1 x m], the row vector broadcast over rows (bias add).
Tensor add_rowvec(const Tensor& a, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor scale(const Tensor& a, Scalar s);
/// Sum of all entries -> [1 x 1].
Tensor reduce_sum(const Tensor& a);
/// Segment mean: out[g] = mean of rows r with groups[r] == g. groups[r] == -1
/// drops row r; empty groups yield zero rows. The gradient of a group row
/// distributes 1/count to each member.
Tensor reduce_mean_by_group(const Tensor& a, const std::vector<int>& groups,
                            int n_groups);
/// Each row divided by max(||row||_2, eps).
Tensor l2_normalize_rows(const Tensor& a, Scalar eps = 1e-12);
/// Row-wise log(sum(exp(x))) with the max-shift trick -> [n x 1].
Tensor log_sum_exp_rows(const Tensor& a);
Tensor gather_rows(const Tensor& a, const std::vector<Index>& rows);
/// out[t.dst] += t.w * a[t.src] for every term; out has out_rows rows.
Tensor mix_rows(const Tensor& a, const std::vector<RowMix>& plan, Index out_rows);

}  // namespace bevcell::ad
