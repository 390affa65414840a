// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pcrt::nn {

// Dense real tensor with reverse-mode autodiff. A Tensor is a handle to a
// graph node; ops record backward closures while grad mode is on. Data
// buffers are shared between views and never mutated after creation, so
// read-only use from many threads is safe.
class Tensor {
  public:
    struct Node {
        std::vector<std::size_t> shape;
        std::shared_ptr<std::vector<double>> data;
        std::vector<double> grad;  // empty until needed
        bool requires_grad = false;
        std::vector<Tensor> parents;
        std::function<void(Node&)> backward_fn;  // reads node.grad, feeds parents
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data->size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t ndim() const { return node_->shape.size(); }

    double* data() { return node_->data->data(); }
    const double* data() const { return node_->data->data(); }
    double value() const;  // scalar tensors

    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::vector<double>& grad();              // allocates zeros on first use
    const std::vector<double>& grad() const;  // requires allocation
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad();

    // Reverse pass from a scalar output.
    void backward();

    // Leaf sharing this tensor's data buffer with its own gradient storage;
    // used by data-parallel shards so shared weights accumulate privately.
    Tensor shared_data_leaf() const;

    Node* node() const { return node_.get(); }

  private:
    std::shared_ptr<Node> node_;
};

// Grad-mode switch (thread local). Ops called while disabled produce leaves.
bool grad_enabled();
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();

  private:
    bool prev_;
};

// Thrown on shape mismatches; message names both shapes.
class ShapeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::string shape_str(const std::vector<std::size_t>& s);

// --- elementwise and linear algebra ---------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);            // (M,K) x (K,N)
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);  // rows x (I,O) + b
Tensor relu(const Tensor& x);
Tensor transpose2d(const Tensor& x);

// --- normalization and attention pieces ------------------------------------
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);                        // over last axis
Tensor softmax(const Tensor& x);                             // over last axis
Tensor concat_cols(const std::vector<Tensor>& xs);           // along last axis (2-D)
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);

// Max over one axis; gradient flows to the first argmax on ties.
Tensor max_axis(const Tensor& x, std::size_t axis);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Gather rows of a 2-D tensor; backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<std::uint32_t>& idx);

// Rows scaled to unit Euclidean length.
Tensor normalize_rows(const Tensor& x);

// Sinusoidal direction embedding: [sin(2^1 pi d), cos(2^1 pi d), ...,
// sin(2^K pi d), cos(2^K pi d)] per component; (R,3) -> (R,6K).
Tensor posenc(const Tensor& dirs, int K);

// --- fused set-abstraction kernel -------------------------------------------
// One sample-group level: per group g with count[g] live members,
//   in_row(k) = [rel[g*K+k] | feat.row(idx[g*K+k])]
//   out[g, c] = relu(max_k (in_row(k) . W[:, c] + b[c]))
// feat may be undefined for the first level (pure coordinates).
// Gradients flow to W, b and feat (argmax rows only), not to rel.
Tensor sa_group_reduce(const Tensor& feat, const std::shared_ptr<std::vector<double>>& rel,
                       const std::shared_ptr<std::vector<std::uint32_t>>& idx,
                       const std::shared_ptr<std::vector<std::uint32_t>>& counts,
                       std::size_t n_groups, std::size_t K, const Tensor& W, const Tensor& b);

// --- attention ---------------------------------------------------------------
struct AttentionParams {
    Tensor Wq, bq, Wk, bk, Wv, bv, Wo, bo;
};

// Scaled dot-product multi-head self-attention over a (S, D) sequence.
Tensor self_attention(const Tensor& x, const AttentionParams& p, int n_heads);

struct EncoderLayerParams {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    AttentionParams attn;
    Tensor W_ff1, b_ff1, W_ff2, b_ff2;
};

// Pre-norm transformer encoder layer:
//   h' = h + MHA(Norm(h)); h'' = h' + FFN(Norm(h'))
// For batched single-token sequences (seq_as_rows = true) each row of x is
// its own length-1 sequence: attention weights collapse to 1 and the MHA
// reduces exactly to the value/output projections.
Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& p, int n_heads,
                     bool seq_as_rows);

// --- losses -------------------------------------------------------------------
// Mean over rows of (1 - cos(pred_row, truth_row)).
Tensor cosine_direction_loss(const Tensor& pred, const Tensor& truth);

// Mean squared error over all entries.
Tensor mse_loss(const Tensor& pred, const Tensor& truth);

// MSE of 10*log10(row power) with row power = sum of squared entries.
// Rows whose truth power is <= 0 are excluded; *n_excluded reports them.
Tensor log_power_loss(const Tensor& pred, const Tensor& truth, std::size_t* n_excluded);

}  // namespace pcrt::nn
