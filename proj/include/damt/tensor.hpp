#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "damt/common.hpp"
#include "damt/rng.hpp"

namespace damt {

namespace detail {

// c[M,N] += a[M,K] * b[K,N].  axpy form: the inner loop runs over contiguous
// rows of b and c, which the compiler vectorizes.
template <class S>
void gemm_nn(const S* a, const S* b, S* c, size_t M, size_t K, size_t N) {
    for (size_t m = 0; m < M; ++m) {
        const S* ar = a + m * K;
        S* cr = c + m * N;
        for (size_t k = 0; k < K; ++k) {
            const S av = ar[k];
            const S* br = b + k * N;
            for (size_t n = 0; n < N; ++n) cr[n] += av * br[n];
        }
    }
}

// c[K,N] += a[M,K]^T * b[M,N]
template <class S>
void gemm_tn(const S* a, const S* b, S* c, size_t M, size_t K, size_t N) {
    for (size_t m = 0; m < M; ++m) {
        const S* ar = a + m * K;
        const S* br = b + m * N;
        for (size_t k = 0; k < K; ++k) {
            const S av = ar[k];
            S* cr = c + k * N;
            for (size_t n = 0; n < N; ++n) cr[n] += av * br[n];
        }
    }
}

template <class S>
void transpose_into(const S* a, S* t, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
}

template <class S>
std::vector<S>& scratch_buffer() {
    thread_local std::vector<S> buf;
    return buf;
}

// c[M,N] += a[M,K] * b[N,K]^T, via a scratch transpose of b so the hot loop
// stays in axpy form.
template <class S>
void gemm_nt(const S* a, const S* b, S* c, size_t M, size_t K, size_t N) {
    std::vector<S>& t = scratch_buffer<S>();
    if (t.size() < K * N) t.resize(K * N);
    transpose_into(b, t.data(), N, K);
    gemm_nn(a, t.data(), c, M, K, N);
}

}  // namespace detail

inline size_t numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<size_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <class S>
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<S> value;
    std::vector<S> grad;  // materialized lazily, same extent as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backprop;  // accumulates this->grad into parents

    size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

// Thread-local gradient mode; generation passes inside back-translation run
// with gradients disabled.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Value-semantics handle on a graph node.
template <class S>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<S>> node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<S>>();
        n->shape = std::move(shape);
        n->value.assign(numel(n->shape), S(0));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor full(std::vector<size_t> shape, S fill, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), fill);
        return t;
    }

    static Tensor from(std::vector<S> values, std::vector<size_t> shape,
                       bool requires_grad = false) {
        if (numel(shape) != values.size())
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode<S>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(S v) { return from({v}, {1}); }

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t size() const { return node_->value.size(); }
    size_t rows() const { return node_->rows(); }
    size_t cols() const { return node_->cols(); }

    std::vector<S>& data() { return node_->value; }
    const std::vector<S>& data() const { return node_->value; }
    S item() const {
        if (node_->value.size() != 1)
            throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    std::vector<S>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<S>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad() {
        if (node_->requires_grad) node_->grad.assign(node_->value.size(), S(0));
    }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }
    TensorNode<S>* raw() const { return node_.get(); }

  private:
    std::shared_ptr<TensorNode<S>> node_;
};

// Named trainable tensor.
template <class S>
struct Parameter {
    std::string name;
    Tensor<S> tensor;
};

namespace detail {

template <class S>
Tensor<S> make_op(std::vector<size_t> shape, std::vector<Tensor<S>> inputs) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value.assign(numel(n->shape), S(0));
    if (grad_mode()) {
        for (const auto& in : inputs) {
            if (in.raw()->requires_grad) {
                n->requires_grad = true;
                break;
            }
        }
        if (n->requires_grad) {
            n->parents.reserve(inputs.size());
            for (const auto& in : inputs) n->parents.push_back(in.node());
        }
    }
    return Tensor<S>(std::move(n));
}

template <class S>
void require_rank2(const Tensor<S>& t, const char* who) {
    if (t.rank() != 2) throw DimensionError(std::string(who) + ": expected rank-2 tensor, got " +
                                            shape_str(t.shape()));
}

}  // namespace detail

// ---- arithmetic ------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor<S> out = detail::make_op<S>(a.shape(), {a, b});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    size_t n = a.size();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        auto on = out.raw();
        out.raw()->backprop = [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        };
    }
    return out;
}

// a[R,C] + bias[C] broadcast over rows
template <class S>
Tensor<S> add_rowwise(const Tensor<S>& a, const Tensor<S>& bias) {
    detail::require_rank2(a, "add_rowwise");
    if (bias.size() != a.cols())
        throw DimensionError("add_rowwise: bias length " + shape_str(bias.shape()) +
                             " does not match columns of " + shape_str(a.shape()));
    Tensor<S> out = detail::make_op<S>(a.shape(), {a, bias});
    size_t R = a.rows(), C = a.cols();
    const S* pa = a.data().data();
    const S* pb = bias.data().data();
    S* po = out.data().data();
    for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < C; ++c) po[r * C + c] = pa[r * C + c] + pb[c];
    if (out.requires_grad()) {
        auto an = a.node(), bn = bias.node();
        auto on = out.raw();
        out.raw()->backprop = [an, bn, on, R, C] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < R * C; ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t r = 0; r < R; ++r)
                    for (size_t c = 0; c < C; ++c) bn->grad[c] += on->grad[r * C + c];
            }
        };
    }
    return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor<S> out = detail::make_op<S>(a.shape(), {a, b});
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        auto on = out.raw();
        out.raw()->backprop = [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->value[i];
            }
        };
    }
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
    Tensor<S> out = detail::make_op<S>(a.shape(), {a});
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * factor;
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on, factor] {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * factor;
        };
    }
    return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    Tensor<S> out = detail::make_op<S>(a.shape(), {a});
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (size_t i = 0; i < a.size(); ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on] {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i)
                if (an->value[i] > S(0)) an->grad[i] += on->grad[i];
        };
    }
    return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
    Tensor<S> out = detail::make_op<S>({1}, {a});
    S acc = 0;
    for (S v : a.data()) acc += v;
    out.data()[0] = acc;
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on] {
            an->ensure_grad();
            const S g = on->grad[0];
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        };
    }
    return out;
}

// ---- matrix ops ------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    size_t M = a.rows(), K = a.cols(), N = b.cols();
    Tensor<S> out = detail::make_op<S>({M, N}, {a, b});
    detail::gemm_nn(a.data().data(), b.data().data(), out.data().data(), M, K, N);
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        auto on = out.raw();
        out.raw()->backprop = [an, bn, on, M, K, N] {
            if (an->requires_grad) {
                an->ensure_grad();
                // dA += dC * B^T
                detail::gemm_nt(on->grad.data(), bn->value.data(), an->grad.data(), M, N, K);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB += A^T * dC
                detail::gemm_tn(an->value.data(), on->grad.data(), bn->grad.data(), M, K, N);
            }
        };
    }
    return out;
}

// a[M,K] * b[N,K]^T; used for attention scores and the tied output projection.
template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols())
        throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    size_t M = a.rows(), K = a.cols(), N = b.rows();
    Tensor<S> out = detail::make_op<S>({M, N}, {a, b});
    detail::gemm_nt(a.data().data(), b.data().data(), out.data().data(), M, K, N);
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node();
        auto on = out.raw();
        out.raw()->backprop = [an, bn, on, M, K, N] {
            if (an->requires_grad) {
                an->ensure_grad();
                // dA += dC * B
                detail::gemm_nn(on->grad.data(), bn->value.data(), an->grad.data(), M, N, K);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB += dC^T * A
                detail::gemm_tn(on->grad.data(), an->value.data(), bn->grad.data(), M, N, K);
            }
        };
    }
    return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
    detail::require_rank2(a, "transpose");
    size_t R = a.rows(), C = a.cols();
    Tensor<S> out = detail::make_op<S>({C, R}, {a});
    detail::transpose_into(a.data().data(), out.data().data(), R, C);
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on, R, C] {
            an->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t c = 0; c < C; ++c) an->grad[r * C + c] += on->grad[c * R + r];
        };
    }
    return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<size_t> shape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(shape));
    Tensor<S> out = detail::make_op<S>(shape, {a});
    out.data() = a.data();
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on] {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        };
    }
    return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, size_t start, size_t count) {
    detail::require_rank2(a, "slice_cols");
    if (start + count > a.cols())
        throw DimensionError("slice_cols: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") out of " + shape_str(a.shape()));
    size_t R = a.rows(), C = a.cols();
    Tensor<S> out = detail::make_op<S>({R, count}, {a});
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < count; ++c) po[r * count + c] = pa[r * C + start + c];
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on, R, C, start, count] {
            an->ensure_grad();
            for (size_t r = 0; r < R; ++r)
                for (size_t c = 0; c < count; ++c)
                    an->grad[r * C + start + c] += on->grad[r * count + c];
        };
    }
    return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, size_t start, size_t count) {
    detail::require_rank2(a, "slice_rows");
    if (start + count > a.rows())
        throw DimensionError("slice_rows: range [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") out of " + shape_str(a.shape()));
    size_t C = a.cols();
    Tensor<S> out = detail::make_op<S>({count, C}, {a});
    std::copy_n(a.data().data() + start * C, count * C, out.data().data());
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on, C, start, count] {
            an->ensure_grad();
            for (size_t i = 0; i < count * C; ++i) an->grad[start * C + i] += on->grad[i];
        };
    }
    return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input list");
    size_t R = parts[0].rows(), C = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != R)
            throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
        C += p.cols();
    }
    Tensor<S> out = detail::make_op<S>({R, C}, parts);
    S* po = out.data().data();
    size_t col0 = 0;
    for (const auto& p : parts) {
        size_t pc = p.cols();
        const S* pp = p.data().data();
        for (size_t r = 0; r < R; ++r)
            for (size_t c = 0; c < pc; ++c) po[r * C + col0 + c] = pp[r * pc + c];
        col0 += pc;
    }
    if (out.requires_grad()) {
        std::vector<std::shared_ptr<TensorNode<S>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        auto on = out.raw();
        out.raw()->backprop = [nodes, on, R, C] {
            size_t col0 = 0;
            for (const auto& pn : nodes) {
                size_t pc = pn->cols();
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (size_t r = 0; r < R; ++r)
                        for (size_t c = 0; c < pc; ++c)
                            pn->grad[r * pc + c] += on->grad[r * C + col0 + c];
                }
                col0 += pc;
            }
        };
    }
    return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty input list");
    size_t C = parts[0].cols(), R = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != C)
            throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
        R += p.rows();
    }
    Tensor<S> out = detail::make_op<S>({R, C}, parts);
    S* po = out.data().data();
    size_t row0 = 0;
    for (const auto& p : parts) {
        std::copy_n(p.data().data(), p.size(), po + row0 * C);
        row0 += p.rows();
    }
    if (out.requires_grad()) {
        std::vector<std::shared_ptr<TensorNode<S>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        auto on = out.raw();
        out.raw()->backprop = [nodes, on, C] {
            size_t row0 = 0;
            for (const auto& pn : nodes) {
                size_t pr = pn->rows();
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (size_t i = 0; i < pr * C; ++i) pn->grad[i] += on->grad[row0 * C + i];
                }
                row0 += pr;
            }
        };
    }
    return out;
}

// ---- neural-net ops --------------------------------------------------------

// softmax along `axis` with max-subtraction; rank 1 or 2.
template <class S>
Tensor<S> softmax(const Tensor<S>& a, size_t axis) {
    if (a.rank() == 1) {
        if (axis != 0) throw DimensionError("softmax: axis " + std::to_string(axis) +
                                            " invalid for " + shape_str(a.shape()));
        Tensor<S> row = reshape(a, {1, a.size()});
        return reshape(softmax(row, size_t(1)), a.shape());
    }
    detail::require_rank2(a, "softmax");
    if (axis > 1) throw DimensionError("softmax: axis " + std::to_string(axis) +
                                       " invalid for " + shape_str(a.shape()));
    if (axis == 0) return transpose(softmax(transpose(a), size_t(1)));

    size_t R = a.rows(), C = a.cols();
    Tensor<S> out = detail::make_op<S>(a.shape(), {a});
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (size_t r = 0; r < R; ++r) {
        const S* x = pa + r * C;
        S* y = po + r * C;
        S mx = x[0];
        for (size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        S z = 0;
        for (size_t c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        const S inv = S(1) / z;
        for (size_t c = 0; c < C; ++c) y[c] *= inv;
    }
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on, R, C] {
            an->ensure_grad();
            for (size_t r = 0; r < R; ++r) {
                const S* y = on->value.data() + r * C;
                const S* gy = on->grad.data() + r * C;
                S dot = 0;
                for (size_t c = 0; c < C; ++c) dot += y[c] * gy[c];
                S* gx = an->grad.data() + r * C;
                for (size_t c = 0; c < C; ++c) gx[c] += y[c] * (gy[c] - dot);
            }
        };
    }
    return out;
}

// Per-row normalization over the last axis, then affine: gain * xhat + bias.
// Zero-variance rows map to zeros before the affine (epsilon inside the root).
template <class S>
Tensor<S> layer_norm(const Tensor<S>& a, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5)) {
    detail::require_rank2(a, "layer_norm");
    size_t R = a.rows(), C = a.cols();
    if (gain.size() != C || bias.size() != C)
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                             shape_str(bias.shape()) + " do not match last axis of " +
                             shape_str(a.shape()));
    Tensor<S> out = detail::make_op<S>(a.shape(), {a, gain, bias});
    std::vector<S> inv_std(R), mean(R);
    const S* pa = a.data().data();
    const S* pg = gain.data().data();
    const S* pb = bias.data().data();
    S* po = out.data().data();
    for (size_t r = 0; r < R; ++r) {
        const S* x = pa + r * C;
        S mu = 0;
        for (size_t c = 0; c < C; ++c) mu += x[c];
        mu /= S(C);
        S var = 0;
        for (size_t c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
        var /= S(C);
        S istd = S(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = istd;
        S* y = po + r * C;
        for (size_t c = 0; c < C; ++c) y[c] = (x[c] - mu) * istd * pg[c] + pb[c];
    }
    if (out.requires_grad()) {
        auto an = a.node(), gn = gain.node(), bn = bias.node();
        auto on = out.raw();
        out.raw()->backprop = [an, gn, bn, on, R, C, mean, inv_std] {
            for (size_t r = 0; r < R; ++r) {
                const S* x = an->value.data() + r * C;
                const S* gy = on->grad.data() + r * C;
                const S mu = mean[r], istd = inv_std[r];
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (size_t c = 0; c < C; ++c)
                        gn->grad[c] += gy[c] * (x[c] - mu) * istd;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (size_t c = 0; c < C; ++c) bn->grad[c] += gy[c];
                }
                if (an->requires_grad) {
                    an->ensure_grad();
                    // d xhat = gy * gain; dx via standard layer-norm backward
                    S sum_d = 0, sum_dx = 0;
                    for (size_t c = 0; c < C; ++c) {
                        S d = gy[c] * gn->value[c];
                        sum_d += d;
                        sum_dx += d * (x[c] - mu) * istd;
                    }
                    S* gx = an->grad.data() + r * C;
                    for (size_t c = 0; c < C; ++c) {
                        S d = gy[c] * gn->value[c];
                        S xhat = (x[c] - mu) * istd;
                        gx[c] += istd * (d - sum_d / S(C) - xhat * sum_dx / S(C));
                    }
                }
            }
        };
    }
    return out;
}

// Mean negative log-likelihood over rows whose target != ignore_index.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets,
                        int ignore_index = -1) {
    detail::require_rank2(logits, "cross_entropy");
    size_t R = logits.rows(), C = logits.cols();
    if (targets.size() != R)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(R) + " rows");
    size_t kept = 0;
    for (int t : targets) {
        if (t == ignore_index) continue;
        if (t < 0 || size_t(t) >= C)
            throw IndexError("cross_entropy: target index " + std::to_string(t) +
                             " out of range for vocabulary " + std::to_string(C));
        ++kept;
    }
    if (kept == 0) throw ContractError("cross_entropy: no non-ignored targets");
    Tensor<S> out = detail::make_op<S>({1}, {logits});
    const S* pl = logits.data().data();
    // cache row softmax for backward
    auto probs = std::make_shared<std::vector<S>>(R * C);
    S loss = 0;
    for (size_t r = 0; r < R; ++r) {
        const S* x = pl + r * C;
        S* p = probs->data() + r * C;
        S mx = x[0];
        for (size_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
        S z = 0;
        for (size_t c = 0; c < C; ++c) {
            p[c] = std::exp(x[c] - mx);
            z += p[c];
        }
        const S inv = S(1) / z;
        for (size_t c = 0; c < C; ++c) p[c] *= inv;
        if (targets[r] != ignore_index)
            loss -= (x[targets[r]] - mx - std::log(z));
    }
    out.data()[0] = loss / S(kept);
    if (out.requires_grad()) {
        auto ln = logits.node();
        auto on = out.raw();
        auto tgt = targets;
        out.raw()->backprop = [ln, on, probs, tgt, R, C, kept, ignore_index] {
            ln->ensure_grad();
            const S g = on->grad[0] / S(kept);
            for (size_t r = 0; r < R; ++r) {
                if (tgt[r] == ignore_index) continue;
                const S* p = probs->data() + r * C;
                S* gx = ln->grad.data() + r * C;
                for (size_t c = 0; c < C; ++c) gx[c] += g * p[c];
                gx[tgt[r]] -= g;
            }
        };
    }
    return out;
}

// Gather rows of `table` by id; backward scatter-adds.
template <class S>
Tensor<S> embedding_rows(const Tensor<S>& table, const std::vector<int>& ids) {
    detail::require_rank2(table, "embedding_rows");
    size_t V = table.rows(), D = table.cols();
    for (int id : ids)
        if (id < 0 || size_t(id) >= V)
            throw IndexError("embedding_rows: id " + std::to_string(id) +
                             " out of range for table " + shape_str(table.shape()));
    Tensor<S> out = detail::make_op<S>({ids.size(), D}, {table});
    const S* pt = table.data().data();
    S* po = out.data().data();
    for (size_t r = 0; r < ids.size(); ++r)
        std::copy_n(pt + size_t(ids[r]) * D, D, po + r * D);
    if (out.requires_grad()) {
        auto tn = table.node();
        auto on = out.raw();
        auto idv = ids;
        out.raw()->backprop = [tn, on, idv, D] {
            tn->ensure_grad();
            for (size_t r = 0; r < idv.size(); ++r) {
                S* gt = tn->grad.data() + size_t(idv[r]) * D;
                const S* go = on->grad.data() + r * D;
                for (size_t c = 0; c < D; ++c) gt[c] += go[c];
            }
        };
    }
    return out;
}

// Inverted dropout; identity when train is false.
template <class S>
Tensor<S> dropout(const Tensor<S>& a, double p, Rng& rng, bool train) {
    if (!train || p <= 0.0) return a;
    if (p >= 1.0) throw ConfigError("dropout: rate must be < 1");
    Tensor<S> out = detail::make_op<S>(a.shape(), {a});
    auto mask = std::make_shared<std::vector<S>>(a.size());
    const S keep_scale = S(1.0 / (1.0 - p));
    const S* pa = a.data().data();
    S* po = out.data().data();
    for (size_t i = 0; i < a.size(); ++i) {
        S m = rng.bernoulli(p) ? S(0) : keep_scale;
        (*mask)[i] = m;
        po[i] = pa[i] * m;
    }
    if (out.requires_grad()) {
        auto an = a.node();
        auto on = out.raw();
        out.raw()->backprop = [an, on, mask] {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i)
                an->grad[i] += on->grad[i] * (*mask)[i];
        };
    }
    return out;
}

// Value copy with the graph severed: no gradient flows to `a` through the
// result.
template <class S>
Tensor<S> detach(const Tensor<S>& a) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = a.shape();
    n->value = a.data();
    n->requires_grad = false;
    return Tensor<S>(std::move(n));
}

// ---- backward --------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into every
// reachable requires_grad tensor; zeroing is the optimizer's job.
template <class S>
void backward(const Tensor<S>& loss) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // iterative post-order DFS -> topological order with loss last
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> visited;
    std::vector<std::pair<TensorNode<S>*, size_t>> stack;
    stack.emplace_back(loss.raw(), 0);
    visited.insert(loss.raw());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            TensorNode<S>* child = node->parents[next_child++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.raw()->ensure_grad();
    loss.raw()->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop();
    }
}

template <class S>
void zero_grad(std::vector<Parameter<S>>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace damt
