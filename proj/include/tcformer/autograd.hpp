#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "tcformer/tensor.hpp"

namespace tcformer::ad {

class Graph;
struct Node;

// Handle to a node owned by a Graph. Cheap to copy; valid while the graph lives.
struct Var {
    Node* node = nullptr;

    const Tensor& val() const;
    Index rows() const { return val().rows(); }
    Index cols() const { return val().cols(); }
    explicit operator bool() const { return node != nullptr; }
};

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool needs_grad = false;
    bool has_grad = false;
    std::function<void(Node&)> backprop;  // pushes this->grad into parents
    Graph* graph = nullptr;

    // Accumulate into this node's gradient (no-op when grads are not needed).
    void accum(const Tensor& g);
    void accum_scaled(const Tensor& g, double s);
    MatMap grad_mat();
    void ensure_grad();
};

// Tape of one forward pass. Create one per forward+backward; nodes are
// destroyed with the graph. Not shared across threads.
class Graph {
public:
    Var make(Tensor value, bool needs_grad, std::function<void(Node&)> backprop);

    // Leaf that does not require gradients (e.g. network input, constants).
    Var constant(Tensor value) { return make(std::move(value), false, nullptr); }

    // Leaf that accumulates gradients (inputs under test, parameters).
    Var leaf(Tensor value) { return make(std::move(value), true, nullptr); }

    // Run reverse-mode accumulation from a scalar loss.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_;
};

inline const Tensor& Var::val() const { return node->value; }

// --- elementwise / shape ops -------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
// x: N x C, v: numel C; adds v to every row (attention bias, residual shifts).
Var add_rowvec(Var x, Var v);
Var gelu(Var x);
Var slice_cols(Var x, Index start, Index len);
Var concat_cols(const std::vector<Var>& parts);

// --- linear algebra ----------------------------------------------------------

// op(a) * op(b) with optional transposes.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
// y = x * W + b (b optional). W: in x out.
Var linear(Var x, Var w, Var b);

// --- normalization / attention -----------------------------------------------

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
Var softmax_rows(Var x);

// --- reductions / losses -----------------------------------------------------

Var mean_rows(Var x);                       // N x C -> 1 x C
Var mean_all(Var x);                        // scalar
Var mse_loss(Var pred, const Tensor& target);
Var dot_const(Var x, const Tensor& w);      // scalar sum(x * w), w fixed

// --- structured ops ----------------------------------------------------------

// y[i, :] = x[index[i], :]
Var gather_rows(Var x, std::vector<int> index);

// Sparse row mixing: y[i, :] = sum_j weights[j] * x[indices[j], :] over the
// CSR range of row i. Used for token<->map transforms and average pooling.
struct MixTable {
    Index out_count = 0;
    Index in_count = 0;
    std::vector<Index> offsets;  // out_count + 1
    std::vector<int> indices;
    std::vector<double> weights;
};
Var apply_mix(Var x, const MixTable& table);
Tensor apply_mix(const Tensor& x, const MixTable& table);

// Importance-weighted cluster merge: y_m = sum_{j in m} exp(p_j) x_j / sum exp(p_j),
// computed with per-cluster max subtraction. p: N x 1, x: N x C.
Var segment_merge(Var x, Var p, const std::vector<int>& assignment, Index merged_count);

// --- convolutions (position-major maps: (H*W) x C) ----------------------------

// weight: (k*k*in_ch) x out_ch, bias: out_ch (optional)
Var conv2d(Var x, Var w, Var b, int h, int w_in, int in_ch, int out_ch, int k, int stride,
           int pad);
// depthwise 3x3, stride 1, zero padding 1. weight: C x 9, bias: C.
Var dwconv3x3(Var x, Var w, Var b, int h, int w_in, int ch);
// transposed conv; weight: in_ch x (k*k*out_ch), bias: out_ch.
// output size: stride*(H-1) + k - 2*pad.
Var conv_transpose2d(Var x, Var w, Var b, int h, int w_in, int in_ch, int out_ch, int k,
                     int stride, int pad);

}  // namespace tcformer::ad
