#include "tsanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "tsanet/errors.hpp"

namespace tsanet {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

bool grad_enabled() { return g_grad_enabled; }

namespace {

using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ConfigError("tensor data size " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad && g_grad_enabled;
    return n;
}

NodePtr make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p && p->requires_grad) needs = true;
    }
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ConfigError(std::string(op) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

} // namespace
} // namespace detail

using detail::Node;
using detail::NodePtr;

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(detail::make_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                                    requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(detail::make_leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), v),
                                    requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(detail::make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(detail::make_leaf(Shape{1}, {v}, requires_grad));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    auto n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& x : data) x = rng.gauss(0.0, stddev);
    return Tensor(detail::make_leaf(std::move(shape), std::move(data), requires_grad));
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad())
        throw ConfigError("grad(): no gradient present; run backward() first");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

double Tensor::item() const {
    if (!node_ || node_->numel() != 1)
        throw ConfigError("item(): tensor is not a scalar, shape " +
                          (node_ ? shape_str(node_->shape) : std::string("<undefined>")));
    return node_->value[0];
}

void backward(const Tensor& loss) {
    detail::check_defined(loss, "backward");
    if (loss.numel() != 1)
        throw ConfigError("backward(): loss must be scalar, got shape " + shape_str(loss.shape()));
    NodePtr root = loss.node();
    if (!root->requires_grad) return; // nothing reachable requires grad

    // Iterative topological order over the requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "add");
    detail::check_defined(b, "add");
    detail::check_same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    std::vector<double> out(pa->value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + pb->value[i];
    return Tensor(detail::make_op(pa->shape, std::move(out), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        }
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "sub");
    detail::check_defined(b, "sub");
    detail::check_same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    std::vector<double> out(pa->value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] - pb->value[i];
    return Tensor(detail::make_op(pa->shape, std::move(out), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "mul");
    detail::check_defined(b, "mul");
    detail::check_same_shape(a, b, "mul");
    auto pa = a.node(), pb = b.node();
    std::vector<double> out(pa->value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * pb->value[i];
    return Tensor(detail::make_op(pa->shape, std::move(out), {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
        }
    }));
}

Tensor add_scalar(const Tensor& a, double s) {
    detail::check_defined(a, "add_scalar");
    auto pa = a.node();
    std::vector<double> out(pa->value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] + s;
    return Tensor(detail::make_op(pa->shape, std::move(out), {pa}, [pa](Node& self) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }));
}

Tensor mul_scalar(const Tensor& a, double s) {
    detail::check_defined(a, "mul_scalar");
    auto pa = a.node();
    std::vector<double> out(pa->value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = pa->value[i] * s;
    return Tensor(detail::make_op(pa->shape, std::move(out), {pa}, [pa, s](Node& self) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * s;
    }));
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "add_rowvec");
    detail::check_defined(b, "add_rowvec");
    if (a.rank() != 2 || b.rank() != 1 || a.dim(1) != b.dim(0))
        throw ConfigError("add_rowvec: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    auto pa = a.node(), pb = b.node();
    const int64_t n = a.dim(0), d = a.dim(1);
    std::vector<double> out(pa->value.size());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j)
            out[static_cast<size_t>(i * d + j)] =
                pa->value[static_cast<size_t>(i * d + j)] + pb->value[static_cast<size_t>(j)];
    return Tensor(detail::make_op(pa->shape, std::move(out), {pa, pb}, [pa, pb, n, d](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j)
                    pb->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i * d + j)];
        }
    }));
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        double* c_row = C + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double a = a_row[p];
            if (a == 0.0) continue;
            const double* b_row = B + p * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        double* c_row = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* b_row = B + j * k;
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
            c_row[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        const double* b_row = B + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double a = a_row[p];
            if (a == 0.0) continue;
            double* c_row = C + p * n;
            for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "matmul");
    detail::check_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ConfigError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    auto pa = a.node(), pb = b.node();
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    gemm_nn(pa->value.data(), pb->value.data(), out.data(), m, k, n);
    return Tensor(detail::make_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad(); // dA += dC * B^T
            gemm_nt(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad(); // dB += A^T * dC
            gemm_tn(pa->value.data(), self.grad.data(), pb->grad.data(), m, k, n);
        }
    }));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "matmul_nt");
    detail::check_defined(b, "matmul_nt");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw ConfigError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    auto pa = a.node(), pb = b.node();
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    gemm_nt(pa->value.data(), pb->value.data(), out.data(), m, k, n);
    return Tensor(detail::make_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad(); // dA += dC * B
            gemm_nn(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad(); // dB += dC^T * A
            gemm_tn(self.grad.data(), pa->value.data(), pb->grad.data(), m, n, k);
        }
    }));
}

namespace {

void check_bmm(const Tensor& a, const Tensor& b, const char* op, int64_t inner_a, int64_t inner_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || inner_a != inner_b)
        throw ConfigError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

} // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "bmm");
    detail::check_defined(b, "bmm");
    check_bmm(a, b, "bmm", a.rank() == 3 ? a.dim(2) : -1, b.rank() == 3 ? b.dim(1) : -2);
    auto pa = a.node(), pb = b.node();
    const int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<double> out(static_cast<size_t>(B * m * n), 0.0);
    for (int64_t t = 0; t < B; ++t)
        gemm_nn(pa->value.data() + t * m * k, pb->value.data() + t * k * n, out.data() + t * m * n,
                m, k, n);
    return Tensor(detail::make_op({B, m, n}, std::move(out), {pa, pb},
                                  [pa, pb, B, m, k, n](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int64_t t = 0; t < B; ++t)
                gemm_nt(self.grad.data() + t * m * n, pb->value.data() + t * k * n,
                        pa->grad.data() + t * m * k, m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t t = 0; t < B; ++t)
                gemm_tn(pa->value.data() + t * m * k, self.grad.data() + t * m * n,
                        pb->grad.data() + t * k * n, m, k, n);
        }
    }));
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    detail::check_defined(a, "bmm_nt");
    detail::check_defined(b, "bmm_nt");
    check_bmm(a, b, "bmm_nt", a.rank() == 3 ? a.dim(2) : -1, b.rank() == 3 ? b.dim(2) : -2);
    auto pa = a.node(), pb = b.node();
    const int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(B * m * n), 0.0);
    for (int64_t t = 0; t < B; ++t)
        gemm_nt(pa->value.data() + t * m * k, pb->value.data() + t * n * k, out.data() + t * m * n,
                m, k, n);
    return Tensor(detail::make_op({B, m, n}, std::move(out), {pa, pb},
                                  [pa, pb, B, m, k, n](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int64_t t = 0; t < B; ++t)
                gemm_nn(self.grad.data() + t * m * n, pb->value.data() + t * n * k,
                        pa->grad.data() + t * m * k, m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t t = 0; t < B; ++t)
                gemm_tn(self.grad.data() + t * m * n, pa->value.data() + t * m * k,
                        pb->grad.data() + t * n * k, m, n, k);
        }
    }));
}

// ---------------------------------------------------------------------------
// Softmax / normalization / activations
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    detail::check_defined(x, "softmax");
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ConfigError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                          shape_str(x.shape()));
    auto px = x.node();
    const Shape& s = px->shape;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    const int64_t len = s[static_cast<size_t>(axis)];

    std::vector<double> out(px->value.size());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            double mx = px->value[static_cast<size_t>(base)];
            for (int64_t j = 1; j < len; ++j)
                mx = std::max(mx, px->value[static_cast<size_t>(base + j * inner)]);
            double sum = 0.0;
            for (int64_t j = 0; j < len; ++j) {
                double e = std::exp(px->value[static_cast<size_t>(base + j * inner)] - mx);
                out[static_cast<size_t>(base + j * inner)] = e;
                sum += e;
            }
            for (int64_t j = 0; j < len; ++j) out[static_cast<size_t>(base + j * inner)] /= sum;
        }
    }
    return Tensor(detail::make_op(px->shape, std::move(out), {px},
                                  [px, outer, inner, len](Node& self) {
        px->ensure_grad();
        // dx = y * (dy - sum(dy * y)) per slice
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * len * inner + in;
                double dot = 0.0;
                for (int64_t j = 0; j < len; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * inner);
                    dot += self.grad[idx] * self.value[idx];
                }
                for (int64_t j = 0; j < len; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * inner);
                    px->grad[idx] += self.value[idx] * (self.grad[idx] - dot);
                }
            }
        }
    }));
}

Tensor gather(const Tensor& x, std::vector<int64_t> idx, Shape out_shape) {
    detail::check_defined(x, "gather");
    if (shape_numel(out_shape) != static_cast<int64_t>(idx.size()))
        throw ConfigError("gather: index count " + std::to_string(idx.size()) +
                          " does not match output shape " + shape_str(out_shape));
    auto px = x.node();
    const int64_t n = px->numel();
    std::vector<double> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= n)
            throw ConfigError("gather: index " + std::to_string(idx[i]) + " out of range for " +
                              shape_str(px->shape));
        out[i] = px->value[static_cast<size_t>(idx[i])];
    }
    auto indices = std::make_shared<std::vector<int64_t>>(std::move(idx));
    return Tensor(detail::make_op(std::move(out_shape), std::move(out), {px},
                                  [px, indices](Node& self) {
        px->ensure_grad();
        const auto& ix = *indices;
        for (size_t i = 0; i < ix.size(); ++i)
            px->grad[static_cast<size_t>(ix[i])] += self.grad[i];
    }));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ConfigError("concat_cols: no inputs");
    const int64_t n = parts[0].dim(0);
    int64_t total = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        detail::check_defined(p, "concat_cols");
        if (p.rank() != 2 || p.dim(0) != n)
            throw ConfigError("concat_cols: shape mismatch " + shape_str(parts[0].shape()) +
                              " vs " + shape_str(p.shape()));
        total += p.dim(1);
        nodes.push_back(p.node());
    }
    std::vector<double> out(static_cast<size_t>(n * total));
    int64_t off = 0;
    for (const auto& p : nodes) {
        const int64_t d = p->shape[1];
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j)
                out[static_cast<size_t>(i * total + off + j)] = p->value[static_cast<size_t>(i * d + j)];
        off += d;
    }
    auto nodes_copy = nodes;
    return Tensor(detail::make_op({n, total}, std::move(out), std::move(nodes),
                                  [nodes_copy, n, total](Node& self) {
        int64_t off = 0;
        for (const auto& p : nodes_copy) {
            const int64_t d = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < d; ++j)
                        p->grad[static_cast<size_t>(i * d + j)] +=
                            self.grad[static_cast<size_t>(i * total + off + j)];
            }
            off += d;
        }
    }));
}

Tensor concat_vec(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ConfigError("concat_vec: no inputs");
    int64_t total = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        detail::check_defined(p, "concat_vec");
        total += p.numel();
        nodes.push_back(p.node());
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total));
    for (const auto& p : nodes) out.insert(out.end(), p->value.begin(), p->value.end());
    auto nodes_copy = nodes;
    return Tensor(detail::make_op({total}, std::move(out), std::move(nodes),
                                  [nodes_copy](Node& self) {
        size_t off = 0;
        for (const auto& p : nodes_copy) {
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[off + i];
            }
            off += p->value.size();
        }
    }));
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    detail::check_defined(x, "reshape");
    if (shape_numel(new_shape) != x.numel())
        throw ConfigError("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                          shape_str(new_shape));
    auto px = x.node();
    std::vector<double> out = px->value;
    return Tensor(detail::make_op(std::move(new_shape), std::move(out), {px}, [px](Node& self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    }));
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    detail::check_defined(x, "layernorm");
    detail::check_defined(gamma, "layernorm");
    detail::check_defined(beta, "layernorm");
    if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.dim(1) ||
        beta.dim(0) != x.dim(1))
        throw ConfigError("layernorm: shape mismatch x=" + shape_str(x.shape()) +
                          " gamma=" + shape_str(gamma.shape()) + " beta=" + shape_str(beta.shape()));
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    const int64_t n = x.dim(0), d = x.dim(1);

    std::vector<double> out(px->value.size());
    auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(2 * n)); // mean, inv_std
    for (int64_t i = 0; i < n; ++i) {
        const double* row = px->value.data() + i * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(2 * i)] = mean;
        (*stats)[static_cast<size_t>(2 * i + 1)] = inv_std;
        for (int64_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv_std;
            out[static_cast<size_t>(i * d + j)] =
                pg->value[static_cast<size_t>(j)] * xhat + pb->value[static_cast<size_t>(j)];
        }
    }
    return Tensor(detail::make_op(px->shape, std::move(out), {px, pg, pb},
                                  [px, pg, pb, stats, n, d](Node& self) {
        for (int64_t i = 0; i < n; ++i) {
            const double mean = (*stats)[static_cast<size_t>(2 * i)];
            const double inv_std = (*stats)[static_cast<size_t>(2 * i + 1)];
            const double* xrow = px->value.data() + i * d;
            const double* grow = self.grad.data() + i * d;

            if (pg->requires_grad || pb->requires_grad) {
                if (pg->requires_grad) pg->ensure_grad();
                if (pb->requires_grad) pb->ensure_grad();
                for (int64_t j = 0; j < d; ++j) {
                    const double xhat = (xrow[j] - mean) * inv_std;
                    if (pg->requires_grad) pg->grad[static_cast<size_t>(j)] += grow[j] * xhat;
                    if (pb->requires_grad) pb->grad[static_cast<size_t>(j)] += grow[j];
                }
            }
            if (px->requires_grad) {
                px->ensure_grad();
                // dxhat = dy * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    const double xhat = (xrow[j] - mean) * inv_std;
                    const double dxhat = grow[j] * pg->value[static_cast<size_t>(j)];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                const double inv_d = 1.0 / static_cast<double>(d);
                for (int64_t j = 0; j < d; ++j) {
                    const double xhat = (xrow[j] - mean) * inv_std;
                    const double dxhat = grow[j] * pg->value[static_cast<size_t>(j)];
                    px->grad[static_cast<size_t>(i * d + j)] +=
                        inv_std * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                }
            }
        }
    }));
}

Tensor relu(const Tensor& x) {
    detail::check_defined(x, "relu");
    auto px = x.node();
    std::vector<double> out(px->value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = px->value[i] > 0.0 ? px->value[i] : 0.0;
    return Tensor(detail::make_op(px->shape, std::move(out), {px}, [px](Node& self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (px->value[i] > 0.0) px->grad[i] += self.grad[i];
    }));
}

Tensor gelu(const Tensor& x) {
    detail::check_defined(x, "gelu");
    auto px = x.node();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<double> out(px->value.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = px->value[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    return Tensor(detail::make_op(px->shape, std::move(out), {px}, [px](Node& self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double v = px->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            px->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    }));
}

Tensor sigmoid(const Tensor& x) {
    detail::check_defined(x, "sigmoid");
    auto px = x.node();
    std::vector<double> out(px->value.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = px->value[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return Tensor(detail::make_op(px->shape, std::move(out), {px}, [px](Node& self) {
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            px->grad[i] += self.grad[i] * y * (1.0 - y);
        }
    }));
}

Tensor sum_all(const Tensor& x) {
    detail::check_defined(x, "sum_all");
    auto px = x.node();
    double s = 0.0;
    for (double v : px->value) s += v;
    return Tensor(detail::make_op({1}, {s}, {px}, [px](Node& self) {
        px->ensure_grad();
        for (size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += self.grad[0];
    }));
}

Tensor mean_all(const Tensor& x) {
    detail::check_defined(x, "mean_all");
    auto px = x.node();
    const double inv = 1.0 / static_cast<double>(px->numel());
    double s = 0.0;
    for (double v : px->value) s += v;
    return Tensor(detail::make_op({1}, {s * inv}, {px}, [px, inv](Node& self) {
        px->ensure_grad();
        for (size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += self.grad[0] * inv;
    }));
}

Tensor mean_rows(const Tensor& x) {
    detail::check_defined(x, "mean_rows");
    if (x.rank() != 2)
        throw ConfigError("mean_rows: expected rank-2 input, got " + shape_str(x.shape()));
    auto px = x.node();
    const int64_t n = x.dim(0), d = x.dim(1);
    const double inv = 1.0 / static_cast<double>(n);
    std::vector<double> out(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(j)] += px->value[static_cast<size_t>(i * d + j)];
    for (auto& v : out) v *= inv;
    return Tensor(detail::make_op({d}, std::move(out), {px}, [px, n, d, inv](Node& self) {
        px->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j)
                px->grad[static_cast<size_t>(i * d + j)] += self.grad[static_cast<size_t>(j)] * inv;
    }));
}

namespace {
constexpr double kBceClamp = 1e-7;
} // namespace

Tensor cross_entropy_binary(const Tensor& p, const std::vector<double>& targets) {
    detail::check_defined(p, "cross_entropy_binary");
    if (static_cast<int64_t>(targets.size()) != p.numel())
        throw ConfigError("cross_entropy_binary: " + std::to_string(targets.size()) +
                          " targets for " + shape_str(p.shape()) + " probabilities");
    auto pp = p.node();
    const int64_t n = pp->numel();
    const double inv = 1.0 / static_cast<double>(n);
    auto tgt = std::make_shared<std::vector<double>>(targets);
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double v = pp->value[static_cast<size_t>(i)];
        if (!std::isfinite(v))
            throw NumericError("cross_entropy_binary: non-finite probability");
        if (!(v >= -1e-12 && v <= 1.0 + 1e-12))
            throw ConfigError("cross_entropy_binary: probability " + std::to_string(v) +
                              " outside [0,1]");
        const double y = targets[static_cast<size_t>(i)];
        if (y != 0.0 && y != 1.0)
            throw ConfigError("cross_entropy_binary: target " + std::to_string(y) +
                              " is not binary");
        const double c = std::min(1.0 - kBceClamp, std::max(kBceClamp, v));
        loss += -(y * std::log(c) + (1.0 - y) * std::log(1.0 - c));
    }
    return Tensor(detail::make_op({1}, {loss * inv}, {pp}, [pp, tgt, n, inv](Node& self) {
        pp->ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
            const double v = pp->value[static_cast<size_t>(i)];
            if (v < kBceClamp || v > 1.0 - kBceClamp) continue; // clamped region, zero slope
            const double y = (*tgt)[static_cast<size_t>(i)];
            pp->grad[static_cast<size_t>(i)] += self.grad[0] * inv * (v - y) / (v * (1.0 - v));
        }
    }));
}

Tensor cross_entropy_binary(const Tensor& p, double target) {
    return cross_entropy_binary(p, std::vector<double>(static_cast<size_t>(p.numel()), target));
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

SgdMomentum::SgdMomentum(std::vector<Tensor> params, double lr_, double momentum_)
    : lr(lr_), momentum(momentum_), params_(std::move(params)) {
    velocity_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
        velocity_[i].assign(params_[i].value().size(), 0.0);
}

void SgdMomentum::step() {
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& val = p.mutable_value();
        auto& vel = velocity_[i];
        for (size_t j = 0; j < val.size(); ++j) {
            vel[j] = momentum * vel[j] + g[j];
            val[j] -= lr * vel[j];
        }
    }
}

Adam::Adam(std::vector<Tensor> params, double lr_, double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].value().size(), 0.0);
        v_[i].assign(params_[i].value().size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& val = p.mutable_value();
        for (size_t j = 0; j < val.size(); ++j) {
            m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g[j];
            v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            val[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace tsanet
