#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tsanet/rng.hpp"

namespace tsanet {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates this node's grad into its parents. Captures parent pointers
    // only; the node itself is passed in to avoid ownership cycles.
    std::function<void(Node&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

bool grad_enabled();

} // namespace detail

/// Dense row-major tensor of doubles with reverse-mode differentiation.
/// Values are immutable once created except for optimizer updates between
/// passes (mutable_value). Copying a Tensor copies the handle, not the data.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    /// Gaussian init, mean 0 and the given stddev.
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& value() const { return node_->value; }
    /// In-place access for optimizer updates; never call mid-graph.
    std::vector<double>& mutable_value() { return node_->value; }

    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    /// Value of a single-element tensor.
    double item() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Seeds d(loss) = 1 and accumulates
/// gradients into every reachable tensor with requires_grad. Gradients add up
/// across calls until zero_grad.
void backward(const Tensor& loss);

/// Disables graph construction inside its scope (forward evaluation only).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // elementwise
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

/// [n,d] + [d], broadcast over rows (bias add).
Tensor add_rowvec(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);    // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b); // [m,k]x[n,k] -> a.b^T
Tensor bmm(const Tensor& a, const Tensor& b);       // [B,m,k]x[B,k,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);    // [B,m,k]x[B,n,k]

/// Numerically stabilized softmax along the given axis (max subtraction).
Tensor softmax(const Tensor& x, int axis);

/// Selects elements of the flattened input: out.flat[i] = x.flat[idx[i]].
/// Covers permutations, window partitioning, slicing and square extraction.
Tensor gather(const Tensor& x, std::vector<int64_t> idx, Shape out_shape);

Tensor concat_cols(const std::vector<Tensor>& parts); // [n,di] -> [n, sum di]
Tensor concat_vec(const std::vector<Tensor>& parts);  // rank-1/scalar concat

Tensor reshape(const Tensor& x, Shape new_shape);

/// Per-row layernorm over the last axis of [n,d], with learnable gamma/beta.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x); // exact erf form
Tensor sigmoid(const Tensor& x);

Tensor sum_all(const Tensor& x);  // -> scalar
Tensor mean_all(const Tensor& x); // -> scalar
Tensor mean_rows(const Tensor& x); // [n,d] -> [d], mean over rows

/// Mean binary cross-entropy of probabilities against 0/1 targets.
/// Probabilities are clamped to [1e-7, 1-1e-7]; inputs outside [0,1]
/// violate the contract and throw.
Tensor cross_entropy_binary(const Tensor& p, const std::vector<double>& targets);
Tensor cross_entropy_binary(const Tensor& p, double target);

// ---------------------------------------------------------------------------
// Optimizers (in-place updates between passes)
// ---------------------------------------------------------------------------

class SgdMomentum {
public:
    SgdMomentum(std::vector<Tensor> params, double lr, double momentum = 0.9);
    void step();
    double lr;
    double momentum;

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    double lr;
    double beta1;
    double beta2;
    double eps;

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    int64_t t_ = 0;
};

} // namespace tsanet
