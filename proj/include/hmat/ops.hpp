#pragma once

// Differentiable operations on hmat::Tensor. Every op computes its forward
// values eagerly and, when an input tracks gradients, records the analytic
// backward. Layout is row-major N x C x H x W for feature maps.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "hmat/tensor.hpp"

namespace hmat::ops {

using detail::grad_of;
using detail::record;

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                        to_string(b.shape()));
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t r, const char* op) {
    require(a.rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " + to_string(a.shape()));
}

// Row-major strides with zero stride on broadcast (extent 1) axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& small, const Shape& big) {
    require(small.size() == big.size(), "broadcast: rank mismatch " + to_string(small) + " vs " + to_string(big));
    std::vector<std::size_t> st(small.size(), 0);
    std::size_t acc = 1;
    for (std::size_t i = small.size(); i-- > 0;) {
        require(small[i] == big[i] || small[i] == 1,
                "broadcast: " + to_string(small) + " not broadcastable to " + to_string(big));
        st[i] = small[i] == 1 ? 0 : acc;
        acc *= small[i];
    }
    return st;
}

// Maps each flat index of `big` to the flat index of the broadcast operand.
inline std::vector<std::size_t> broadcast_index(const Shape& small, const Shape& big) {
    auto st = broadcast_strides(small, big);
    std::vector<std::size_t> idx(numel(big));
    std::vector<std::size_t> coord(big.size(), 0);
    for (std::size_t f = 0; f < idx.size(); ++f) {
        std::size_t o = 0;
        for (std::size_t d = 0; d < big.size(); ++d) o += coord[d] * st[d];
        idx[f] = o;
        for (std::size_t d = big.size(); d-- > 0;) {
            if (++coord[d] < big[d]) break;
            coord[d] = 0;
        }
    }
    return idx;
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    require(in + 2 * pad >= k, "conv: kernel larger than padded input");
    return (in + 2 * pad - k) / stride + 1;
}

// Output columns o with 0 <= o*stride + tap - pad < in, as a half-open range.
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t in, std::size_t out, std::size_t stride,
                                                     std::size_t tap, std::size_t pad) {
    long lo = 0;
    long off = static_cast<long>(tap) - static_cast<long>(pad);
    if (off < 0) lo = (-off + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    long hi_incl = (static_cast<long>(in) - 1 - off);
    if (hi_incl < 0) return {0, 0};
    hi_incl /= static_cast<long>(stride);
    long hi = std::min<long>(hi_incl + 1, static_cast<long>(out));
    if (lo >= hi) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
    return record<T>("add", a.shape(), std::move(y), {&a, &b}, [ai = a.impl(), bi = b.impl()] {
        return [ai, bi](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(ai))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
            if (auto* g = grad_of(bi))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
        };
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
    return record<T>("sub", a.shape(), std::move(y), {&a, &b}, [ai = a.impl(), bi = b.impl()] {
        return [ai, bi](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(ai))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
            if (auto* g = grad_of(bi))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= out.grad[i];
        };
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
    return record<T>("mul", a.shape(), std::move(y), {&a, &b}, [ai = a.impl(), bi = b.impl()] {
        return [ai, bi](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(ai))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * bi->data[i];
            if (auto* g = grad_of(bi))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * ai->data[i];
        };
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * c;
    return record<T>("scale", a.shape(), std::move(y), {&a}, [ai = a.impl(), c] {
        return [ai, c](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(ai))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * c;
        };
    });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
    return record<T>("leaky_relu", x.shape(), std::move(y), {&x}, [xi = x.impl(), slope] {
        return [xi, slope](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t i = 0; i < g->size(); ++i)
                    (*g)[i] += out.grad[i] * (xi->data[i] > T(0) ? T(1) : slope);
        };
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
    auto yv = y;
    return record<T>("sigmoid", x.shape(), std::move(y), {&x}, [xi = x.impl(), yv = std::move(yv)] {
        return [xi, yv](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * yv[i] * (T(1) - yv[i]);
        };
    });
}

/// |x| with subgradient 0 at exactly 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::abs(x[i]);
    return record<T>("abs", x.shape(), std::move(y), {&x}, [xi = x.impl()] {
        return [xi](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t i = 0; i < g->size(); ++i) {
                    T v = xi->data[i];
                    (*g)[i] += out.grad[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
                }
        };
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (T v : x.data()) s += v;
    return record<T>("sum", {1}, {s}, {&x}, [xi = x.impl()] {
        return [xi](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (auto& v : *g) v += out.grad[0];
        };
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Multiplies by a constant mask broadcast to x's shape (extent-1 axes repeat).
template <typename T>
Tensor<T> mul_mask(const Tensor<T>& x, const Tensor<T>& mask) {
    auto idx = detail::broadcast_index(mask.shape(), x.shape());
    std::vector<T> w(idx.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = mask[idx[i]];
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * w[i];
    return record<T>("mul_mask", x.shape(), std::move(y), {&x}, [xi = x.impl(), w = std::move(w)] {
        return [xi, w](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * w[i];
        };
    });
}

/// Exact elementwise selection: out = on_one where mask == 1, on_zero where
/// mask == 0. The mask is a constant broadcast over extent-1 axes. Gradient
/// reaches on_one only through mask == 1 positions and on_zero only through
/// mask == 0 positions.
template <typename T>
Tensor<T> select(const Tensor<T>& mask, const Tensor<T>& on_one, const Tensor<T>& on_zero) {
    detail::require_same_shape(on_one, on_zero, "select");
    auto idx = detail::broadcast_index(mask.shape(), on_one.shape());
    std::vector<std::uint8_t> pick(idx.size());
    for (std::size_t i = 0; i < pick.size(); ++i) {
        T m = mask[idx[i]];
        if (m != T(0) && m != T(1)) throw ShapeError("select: mask must be binary");
        pick[i] = m == T(1);
    }
    std::vector<T> y(on_one.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = pick[i] ? on_one[i] : on_zero[i];
    return record<T>("select", on_one.shape(), std::move(y), {&on_one, &on_zero},
                     [ai = on_one.impl(), bi = on_zero.impl(), pick = std::move(pick)] {
                         return [ai, bi, pick](const hmat::detail::Impl<T>& out) {
                             if (auto* g = grad_of(ai))
                                 for (std::size_t i = 0; i < g->size(); ++i)
                                     if (pick[i]) (*g)[i] += out.grad[i];
                             if (auto* g = grad_of(bi))
                                 for (std::size_t i = 0; i < g->size(); ++i)
                                     if (!pick[i]) (*g)[i] += out.grad[i];
                         };
                     });
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    detail::require(numel(shape) == x.size(), "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    std::vector<T> y(x.data().begin(), x.data().end());
    return record<T>("reshape", std::move(shape), std::move(y), {&x}, [xi = x.impl()] {
        return [xi](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
        };
    });
}

/// Axis permutation; output axis i is input axis axes[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const auto& in = x.shape();
    detail::require(axes.size() == in.size(), "permute: axis count mismatch");
    Shape os(in.size());
    std::vector<std::size_t> in_strides(in.size());
    std::size_t acc = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
        in_strides[d] = acc;
        acc *= in[d];
    }
    for (std::size_t i = 0; i < axes.size(); ++i) os[i] = in.at(axes[i]);
    // src[f_out] = flat input index feeding output position f_out
    std::vector<std::size_t> src(x.size());
    std::vector<std::size_t> coord(os.size(), 0);
    for (std::size_t f = 0; f < src.size(); ++f) {
        std::size_t o = 0;
        for (std::size_t d = 0; d < os.size(); ++d) o += coord[d] * in_strides[axes[d]];
        src[f] = o;
        for (std::size_t d = os.size(); d-- > 0;) {
            if (++coord[d] < os[d]) break;
            coord[d] = 0;
        }
    }
    std::vector<T> y(x.size());
    for (std::size_t f = 0; f < y.size(); ++f) y[f] = x[src[f]];
    return record<T>("permute", std::move(os), std::move(y), {&x}, [xi = x.impl(), src = std::move(src)] {
        return [xi, src](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t f = 0; f < src.size(); ++f) (*g)[src[f]] += out.grad[f];
        };
    });
}

/// Concatenates along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis = 1) {
    detail::require(!xs.empty(), "concat: no inputs");
    Shape os = xs[0].shape();
    detail::require(axis < os.size(), "concat: axis out of range");
    os[axis] = 0;
    for (const auto& t : xs) {
        detail::require(t.rank() == os.size(), "concat: rank mismatch");
        for (std::size_t d = 0; d < os.size(); ++d)
            if (d != axis) detail::require(t.dim(d) == xs[0].dim(d), "concat: extent mismatch off-axis");
        os[axis] += t.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= os[d];
    for (std::size_t d = axis + 1; d < os.size(); ++d) inner *= os[d];
    std::vector<T> y(numel(os));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& t : xs) {
        offsets.push_back(off);
        std::size_t chunk = t.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(t.data().begin() + o * chunk, chunk, y.begin() + o * os[axis] * inner + off);
        off += chunk;
    }
    std::vector<std::shared_ptr<hmat::detail::Impl<T>>> impls;
    for (const auto& t : xs) impls.push_back(t.impl());
    // record() takes a fixed initializer list; route requires_grad through a node over all inputs.
    auto out = std::make_shared<hmat::detail::Impl<T>>();
    for (T v : y)
        if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by concat");
    out->shape = os;
    out->data = std::move(y);
    bool any = false;
    if (!hmat::detail::grad_mode_disabled())
        for (const auto& t : xs) any = any || t.requires_grad();
    if (any) {
        auto node = std::make_shared<hmat::detail::Node<T>>();
        node->seq = hmat::detail::sequence_counter().fetch_add(1) + 1;
        node->name = "concat";
        node->inputs = impls;
        std::size_t total = os[axis] * inner;
        node->backward = [impls, offsets, outer, inner, total, axis](const hmat::detail::Impl<T>& o) {
            for (std::size_t k = 0; k < impls.size(); ++k) {
                auto* g = grad_of(impls[k]);
                if (!g) continue;
                std::size_t chunk = impls[k]->shape[axis] * inner;
                for (std::size_t oi = 0; oi < outer; ++oi)
                    for (std::size_t j = 0; j < chunk; ++j) (*g)[oi * chunk + j] += o.grad[oi * total + offsets[k] + j];
            }
        };
        out->requires_grad = true;
        out->grad_fn = std::move(node);
    }
    return Tensor<T>(std::move(out));
}

/// Treats x as rows of its trailing extent and gathers rows by index:
/// out[i, :] = x[rows[i], :]. Output shape is `shape` (its product must equal
/// rows.size() * row_len). Backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows, Shape shape) {
    std::size_t row_len = x.shape().back();
    std::size_t nrows = x.size() / row_len;
    detail::require(numel(shape) == rows.size() * row_len, "gather_rows: output shape mismatch");
    std::vector<T> y(rows.size() * row_len);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        detail::require(rows[i] < nrows, "gather_rows: index out of range");
        std::copy_n(x.data().begin() + rows[i] * row_len, row_len, y.begin() + i * row_len);
    }
    return record<T>("gather_rows", std::move(shape), std::move(y), {&x}, [xi = x.impl(), rows, row_len] {
        return [xi, rows, row_len](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t i = 0; i < rows.size(); ++i)
                    for (std::size_t j = 0; j < row_len; ++j) (*g)[rows[i] * row_len + j] += out.grad[i * row_len + j];
        };
    });
}

/// y[b, ...] = x[b, ...] + bias[...]: bias repeats over the leading axis.
template <typename T>
Tensor<T> add_leading_broadcast(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require(bias.size() > 0 && x.size() % bias.size() == 0 && x.rank() == bias.rank() + 1,
                    "add_leading_broadcast: " + to_string(bias.shape()) + " vs " + to_string(x.shape()));
    for (std::size_t d = 0; d < bias.rank(); ++d)
        detail::require(bias.dim(d) == x.dim(d + 1), "add_leading_broadcast: trailing extent mismatch");
    std::size_t n = bias.size();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + bias[i % n];
    return record<T>("add_leading_broadcast", x.shape(), std::move(y), {&x, &bias},
                     [xi = x.impl(), bi = bias.impl(), n] {
                         return [xi, bi, n](const hmat::detail::Impl<T>& out) {
                             if (auto* g = grad_of(xi))
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
                             if (auto* g = grad_of(bi))
                                 for (std::size_t i = 0; i < out.grad.size(); ++i) (*g)[i % n] += out.grad[i];
                         };
                     });
}

// ---------------------------------------------------------------- dense

/// y = x w^T + b for x[N, Din], w[Dout, Din], b[Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    detail::require_rank(x, 2, "linear");
    detail::require_rank(w, 2, "linear");
    const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
    detail::require(w.dim(1) == din, "linear: Din mismatch, x " + to_string(x.shape()) + " w " + to_string(w.shape()));
    detail::require(b.rank() == 1 && b.dim(0) == dout, "linear: bias must be [Dout]");
    std::vector<T> y(n * dout);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < dout; ++o) {
            T acc = b[o];
            const T* xr = x.data().data() + r * din;
            const T* wr = w.data().data() + o * din;
            for (std::size_t i = 0; i < din; ++i) acc += xr[i] * wr[i];
            y[r * dout + o] = acc;
        }
    return record<T>("linear", {n, dout}, std::move(y), {&x, &w, &b},
                     [xi = x.impl(), wi = w.impl(), bi = b.impl(), n, din, dout] {
                         return [=](const hmat::detail::Impl<T>& out) {
                             const auto& go = out.grad;
                             if (auto* g = grad_of(xi))
                                 for (std::size_t r = 0; r < n; ++r)
                                     for (std::size_t o = 0; o < dout; ++o) {
                                         T gv = go[r * dout + o];
                                         const T* wr = wi->data.data() + o * din;
                                         T* gr = g->data() + r * din;
                                         for (std::size_t i = 0; i < din; ++i) gr[i] += gv * wr[i];
                                     }
                             if (auto* g = grad_of(wi))
                                 for (std::size_t r = 0; r < n; ++r)
                                     for (std::size_t o = 0; o < dout; ++o) {
                                         T gv = go[r * dout + o];
                                         const T* xr = xi->data.data() + r * din;
                                         T* gw = g->data() + o * din;
                                         for (std::size_t i = 0; i < din; ++i) gw[i] += gv * xr[i];
                                     }
                             if (auto* g = grad_of(bi))
                                 for (std::size_t r = 0; r < n; ++r)
                                     for (std::size_t o = 0; o < dout; ++o) (*g)[o] += go[r * dout + o];
                         };
                     });
}

/// Batched product a[B,M,K] @ b[B,K,N] (or b[B,N,K] transposed when trans_b).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
    detail::require_rank(a, 3, "matmul");
    detail::require_rank(b, 3, "matmul");
    const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2);
    const std::size_t N = trans_b ? b.dim(1) : b.dim(2);
    detail::require(b.dim(0) == B && (trans_b ? b.dim(2) : b.dim(1)) == K,
                    "matmul: inner extent mismatch " + to_string(a.shape()) + " @ " + to_string(b.shape()));
    // element (k, n) of batch bb of the right operand
    auto bidx = [=](std::size_t bb, std::size_t k, std::size_t n) {
        return trans_b ? (bb * N + n) * K + k : (bb * K + k) * N + n;
    };
    std::vector<T> y(B * M * N, T(0));
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) {
                T acc = 0;
                for (std::size_t k = 0; k < K; ++k) acc += a[(bb * M + m) * K + k] * b[bidx(bb, k, n)];
                y[(bb * M + m) * N + n] = acc;
            }
    return record<T>("matmul", {B, M, N}, std::move(y), {&a, &b}, [ai = a.impl(), bi = b.impl(), B, M, K, N, bidx] {
        return [=](const hmat::detail::Impl<T>& out) {
            const auto& go = out.grad;
            auto* ga = grad_of(ai);
            auto* gb = grad_of(bi);
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t n = 0; n < N; ++n) {
                        T gv = go[(bb * M + m) * N + n];
                        if (gv == T(0)) continue;
                        for (std::size_t k = 0; k < K; ++k) {
                            if (ga) (*ga)[(bb * M + m) * K + k] += gv * bi->data[bidx(bb, k, n)];
                            if (gb) (*gb)[bidx(bb, k, n)] += gv * ai->data[(bb * M + m) * K + k];
                        }
                    }
        };
    });
}

// ---------------------------------------------------------------- convolution

/// Zero-padded 2-D cross-correlation: x[N,Cin,H,W], w[Cout,Cin,k,k], b[Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 1,
                 std::size_t pad = 0) {
    detail::require_rank(x, 4, "conv2d");
    detail::require_rank(w, 4, "conv2d");
    const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = w.dim(0), k = w.dim(2);
    detail::require(w.dim(1) == Cin, "conv2d: Cin mismatch, x " + to_string(x.shape()) + " w " + to_string(w.shape()));
    detail::require(w.dim(3) == k && k % 2 == 1, "conv2d: kernel must be square with odd extent");
    detail::require(stride >= 1, "conv2d: stride must be >= 1");
    detail::require(b.rank() == 1 && b.dim(0) == Cout, "conv2d: bias must be [Cout]");
    const std::size_t Ho = detail::conv_out(H, k, stride, pad), Wo = detail::conv_out(W, k, stride, pad);

    std::vector<T> y(N * Cout * Ho * Wo);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
            T* yp = y.data() + (n * Cout + co) * Ho * Wo;
            std::fill_n(yp, Ho * Wo, b[co]);
            for (std::size_t ci = 0; ci < Cin; ++ci) {
                const T* xp = x.data().data() + (n * Cin + ci) * H * W;
                for (std::size_t kh = 0; kh < k; ++kh) {
                    auto [oh0, oh1] = detail::tap_range(H, Ho, stride, kh, pad);
                    for (std::size_t kw = 0; kw < k; ++kw) {
                        auto [ow0, ow1] = detail::tap_range(W, Wo, stride, kw, pad);
                        const T wv = w[((co * Cin + ci) * k + kh) * k + kw];
                        for (std::size_t oh = oh0; oh < oh1; ++oh) {
                            const T* xr = xp + (oh * stride + kh - pad) * W + kw - pad;
                            T* yr = yp + oh * Wo;
                            for (std::size_t ow = ow0; ow < ow1; ++ow) yr[ow] += wv * xr[ow * stride];
                        }
                    }
                }
            }
        }
    return record<T>("conv2d", {N, Cout, Ho, Wo}, std::move(y), {&x, &w, &b},
                     [xi = x.impl(), wi = w.impl(), bi = b.impl(), N, Cin, H, W, Cout, k, Ho, Wo, stride, pad] {
                         return [=](const hmat::detail::Impl<T>& out) {
                             const auto& go = out.grad;
                             auto* gx = grad_of(xi);
                             auto* gw = grad_of(wi);
                             auto* gb = grad_of(bi);
                             for (std::size_t n = 0; n < N; ++n)
                                 for (std::size_t co = 0; co < Cout; ++co) {
                                     const T* gp = go.data() + (n * Cout + co) * Ho * Wo;
                                     if (gb)
                                         for (std::size_t i = 0; i < Ho * Wo; ++i) (*gb)[co] += gp[i];
                                     for (std::size_t ci = 0; ci < Cin; ++ci) {
                                         const std::size_t xoff = (n * Cin + ci) * H * W;
                                         for (std::size_t kh = 0; kh < k; ++kh) {
                                             auto [oh0, oh1] = detail::tap_range(H, Ho, stride, kh, pad);
                                             for (std::size_t kw = 0; kw < k; ++kw) {
                                                 auto [ow0, ow1] = detail::tap_range(W, Wo, stride, kw, pad);
                                                 const std::size_t widx = ((co * Cin + ci) * k + kh) * k + kw;
                                                 const T wv = wi->data[widx];
                                                 T wacc = 0;
                                                 for (std::size_t oh = oh0; oh < oh1; ++oh) {
                                                     const std::size_t row = xoff + (oh * stride + kh - pad) * W + kw - pad;
                                                     const T* gr = gp + oh * Wo;
                                                     for (std::size_t ow = ow0; ow < ow1; ++ow) {
                                                         if (gx) (*gx)[row + ow * stride] += wv * gr[ow];
                                                         wacc += gr[ow] * xi->data[row + ow * stride];
                                                     }
                                                 }
                                                 if (gw) (*gw)[widx] += wacc;
                                             }
                                         }
                                     }
                                 }
                         };
                     });
}

/// Sliding k x k neighborhoods as channels: x[N,C,H,W] -> [N, C*k*k, Ho, Wo],
/// zero padded, channel index c*k*k + kh*k + kw.
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad) {
    detail::require_rank(x, 4, "unfold");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = detail::conv_out(H, k, stride, pad), Wo = detail::conv_out(W, k, stride, pad);
    const std::size_t K2 = k * k;
    // src[f] = flat input index for output f, or npos for padding
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> src(N * C * K2 * Ho * Wo, npos);
    std::vector<T> y(src.size(), T(0));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t kh = 0; kh < k; ++kh)
                for (std::size_t kw = 0; kw < k; ++kw)
                    for (std::size_t oh = 0; oh < Ho; ++oh)
                        for (std::size_t ow = 0; ow < Wo; ++ow) {
                            long ih = static_cast<long>(oh * stride + kh) - static_cast<long>(pad);
                            long iw = static_cast<long>(ow * stride + kw) - static_cast<long>(pad);
                            std::size_t f = (((n * C + c) * K2 + kh * k + kw) * Ho + oh) * Wo + ow;
                            if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) || iw >= static_cast<long>(W)) continue;
                            src[f] = ((n * C + c) * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw);
                            y[f] = x[src[f]];
                        }
    return record<T>("unfold", {N, C * K2, Ho, Wo}, std::move(y), {&x}, [xi = x.impl(), src = std::move(src)] {
        return [xi, src](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t f = 0; f < src.size(); ++f)
                    if (src[f] != static_cast<std::size_t>(-1)) (*g)[src[f]] += out.grad[f];
        };
    });
}

/// Spatially variant depthwise filtering. kernels[N, k*k, Ho, Wo] holds one
/// k x k kernel per output location, shared by every channel:
/// y[n,c,p] = sum_q kernels[n,q,p] * x[n,c,p*stride + q - pad].
template <typename T>
Tensor<T> dynamic_depthwise_conv(const Tensor<T>& x, const Tensor<T>& kernels, std::size_t k, std::size_t stride,
                                 std::size_t pad) {
    detail::require_rank(x, 4, "dynamic_depthwise_conv");
    detail::require_rank(kernels, 4, "dynamic_depthwise_conv");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = detail::conv_out(H, k, stride, pad), Wo = detail::conv_out(W, k, stride, pad);
    detail::require(kernels.shape() == Shape{N, k * k, Ho, Wo},
                    "dynamic_depthwise_conv: kernels " + to_string(kernels.shape()) + " do not match output grid " +
                        to_string(Shape{N, k * k, Ho, Wo}));
    std::vector<T> y(N * C * Ho * Wo, T(0));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* xp = x.data().data() + (n * C + c) * H * W;
            T* yp = y.data() + (n * C + c) * Ho * Wo;
            for (std::size_t kh = 0; kh < k; ++kh) {
                auto [oh0, oh1] = detail::tap_range(H, Ho, stride, kh, pad);
                for (std::size_t kw = 0; kw < k; ++kw) {
                    auto [ow0, ow1] = detail::tap_range(W, Wo, stride, kw, pad);
                    const T* kp = kernels.data().data() + (n * k * k + kh * k + kw) * Ho * Wo;
                    for (std::size_t oh = oh0; oh < oh1; ++oh) {
                        const T* xr = xp + (oh * stride + kh - pad) * W + kw - pad;
                        for (std::size_t ow = ow0; ow < ow1; ++ow) yp[oh * Wo + ow] += kp[oh * Wo + ow] * xr[ow * stride];
                    }
                }
            }
        }
    return record<T>(
        "dynamic_depthwise_conv", {N, C, Ho, Wo}, std::move(y), {&x, &kernels},
        [xi = x.impl(), ki = kernels.impl(), N, C, H, W, Ho, Wo, k, stride, pad] {
            return [=](const hmat::detail::Impl<T>& out) {
                auto* gx = grad_of(xi);
                auto* gk = grad_of(ki);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t xoff = (n * C + c) * H * W;
                        const T* gp = out.grad.data() + (n * C + c) * Ho * Wo;
                        for (std::size_t kh = 0; kh < k; ++kh) {
                            auto [oh0, oh1] = detail::tap_range(H, Ho, stride, kh, pad);
                            for (std::size_t kw = 0; kw < k; ++kw) {
                                auto [ow0, ow1] = detail::tap_range(W, Wo, stride, kw, pad);
                                const std::size_t koff = (n * k * k + kh * k + kw) * Ho * Wo;
                                for (std::size_t oh = oh0; oh < oh1; ++oh) {
                                    const std::size_t row = xoff + (oh * stride + kh - pad) * W + kw - pad;
                                    for (std::size_t ow = ow0; ow < ow1; ++ow) {
                                        T gv = gp[oh * Wo + ow];
                                        if (gx) (*gx)[row + ow * stride] += gv * ki->data[koff + oh * Wo + ow];
                                        if (gk) (*gk)[koff + oh * Wo + ow] += gv * xi->data[row + ow * stride];
                                    }
                                }
                            }
                        }
                    }
            };
        });
}

// ---------------------------------------------------------------- pooling / resampling

namespace detail {
template <typename T>
void require_even_spatial(const Tensor<T>& x, const char* op) {
    require_rank(x, 4, op);
    require(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, std::string(op) + ": H and W must be even, got " +
                                                         to_string(x.shape()));
}
}  // namespace detail

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
    detail::require_even_spatial(x, "avg_pool2");
    const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), Ho = H / 2, Wo = W / 2;
    std::vector<T> y(NC * Ho * Wo);
    for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                const T* r0 = x.data().data() + (p * H + 2 * i) * W + 2 * j;
                y[(p * Ho + i) * Wo + j] = (r0[0] + r0[1] + r0[W] + r0[W + 1]) * T(0.25);
            }
    return record<T>("avg_pool2", {x.dim(0), x.dim(1), Ho, Wo}, std::move(y), {&x}, [xi = x.impl(), NC, H, W] {
        return [=](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t p = 0; p < NC; ++p)
                    for (std::size_t i = 0; i < H; ++i)
                        for (std::size_t j = 0; j < W; ++j)
                            (*g)[(p * H + i) * W + j] += T(0.25) * out.grad[(p * (H / 2) + i / 2) * (W / 2) + j / 2];
        };
    });
}

/// 2x2 minimum; the gradient goes to the first minimal element of each block.
template <typename T>
Tensor<T> min_pool2(const Tensor<T>& x) {
    detail::require_even_spatial(x, "min_pool2");
    const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), Ho = H / 2, Wo = W / 2;
    std::vector<T> y(NC * Ho * Wo);
    std::vector<std::size_t> arg(y.size());
    for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                std::size_t base = (p * H + 2 * i) * W + 2 * j;
                std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
                std::size_t best = cand[0];
                for (auto c : cand)
                    if (x[c] < x[best]) best = c;
                y[(p * Ho + i) * Wo + j] = x[best];
                arg[(p * Ho + i) * Wo + j] = best;
            }
    return record<T>("min_pool2", {x.dim(0), x.dim(1), Ho, Wo}, std::move(y), {&x}, [xi = x.impl(), arg = std::move(arg)] {
        return [xi, arg](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t f = 0; f < arg.size(); ++f) (*g)[arg[f]] += out.grad[f];
        };
    });
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
    detail::require_rank(x, 4, "upsample_nearest2");
    const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), Ho = 2 * H, Wo = 2 * W;
    std::vector<T> y(NC * Ho * Wo);
    for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) y[(p * Ho + i) * Wo + j] = x[(p * H + i / 2) * W + j / 2];
    return record<T>("upsample_nearest2", {x.dim(0), x.dim(1), Ho, Wo}, std::move(y), {&x}, [xi = x.impl(), NC, H, W] {
        return [=](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t p = 0; p < NC; ++p)
                    for (std::size_t i = 0; i < 2 * H; ++i)
                        for (std::size_t j = 0; j < 2 * W; ++j)
                            (*g)[(p * H + i / 2) * W + j / 2] += out.grad[(p * 2 * H + i) * 2 * W + j];
        };
    });
}

/// Global average pool: [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> gap(const Tensor<T>& x) {
    detail::require_rank(x, 4, "gap");
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<T> y(N * C);
    for (std::size_t p = 0; p < N * C; ++p) {
        T s = 0;
        for (std::size_t i = 0; i < HW; ++i) s += x[p * HW + i];
        y[p] = s / static_cast<T>(HW);
    }
    return record<T>("gap", {N, C}, std::move(y), {&x}, [xi = x.impl(), N, C, HW] {
        return [=](const hmat::detail::Impl<T>& out) {
            if (auto* g = grad_of(xi))
                for (std::size_t p = 0; p < N * C; ++p)
                    for (std::size_t i = 0; i < HW; ++i) (*g)[p * HW + i] += out.grad[p] / static_cast<T>(HW);
        };
    });
}

// ---------------------------------------------------------------- normalization

namespace detail {

// Standardizes `groups` contiguous-or-strided groups of `len` elements.
// Element j of group g lives at base(g) + j * step.
template <typename T>
struct GroupView {
    std::size_t groups, len;
    std::function<std::size_t(std::size_t)> base;
    std::size_t step;
};

template <typename T>
Tensor<T> standardize(const Tensor<T>& x, const GroupView<T>& gv, T eps, const char* name) {
    std::vector<T> y(x.size());
    std::vector<T> inv_std(gv.groups);
    for (std::size_t g = 0; g < gv.groups; ++g) {
        const std::size_t b0 = gv.base(g);
        T mu = 0;
        for (std::size_t j = 0; j < gv.len; ++j) mu += x[b0 + j * gv.step];
        mu /= static_cast<T>(gv.len);
        T var = 0;
        for (std::size_t j = 0; j < gv.len; ++j) {
            T d = x[b0 + j * gv.step] - mu;
            var += d * d;
        }
        var /= static_cast<T>(gv.len);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[g] = is;
        for (std::size_t j = 0; j < gv.len; ++j) y[b0 + j * gv.step] = (x[b0 + j * gv.step] - mu) * is;
    }
    auto yv = y;
    return record<T>(name, x.shape(), std::move(y), {&x}, [xi = x.impl(), gv, yv = std::move(yv), inv_std] {
        return [xi, gv, yv, inv_std](const hmat::detail::Impl<T>& out) {
            auto* gx = grad_of(xi);
            if (!gx) return;
            const T n = static_cast<T>(gv.len);
            for (std::size_t g = 0; g < gv.groups; ++g) {
                const std::size_t b0 = gv.base(g);
                T sg = 0, sgy = 0;
                for (std::size_t j = 0; j < gv.len; ++j) {
                    std::size_t i = b0 + j * gv.step;
                    sg += out.grad[i];
                    sgy += out.grad[i] * yv[i];
                }
                for (std::size_t j = 0; j < gv.len; ++j) {
                    std::size_t i = b0 + j * gv.step;
                    (*gx)[i] += inv_std[g] * (out.grad[i] - sg / n - yv[i] * sgy / n);
                }
            }
        };
    });
}

}  // namespace detail

/// Per-sample, per-channel standardization over H x W (mean 0, variance 1).
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
    detail::require_rank(x, 4, "instance_norm");
    const std::size_t HW = x.dim(2) * x.dim(3);
    detail::GroupView<T> gv{x.dim(0) * x.dim(1), HW, [HW](std::size_t g) { return g * HW; }, 1};
    return detail::standardize(x, gv, eps, "instance_norm");
}

/// Standardization over the last axis, then optional per-feature affine.
/// Pass undefined gamma/beta for the affine-free variant.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma = {}, const Tensor<T>& beta = {}, T eps = T(1e-5)) {
    const std::size_t C = x.shape().back();
    detail::GroupView<T> gv{x.size() / C, C, [C](std::size_t g) { return g * C; }, 1};
    auto y = detail::standardize(x, gv, eps, "layer_norm");
    if (!gamma.defined()) return y;
    detail::require(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, "layer_norm: gamma/beta must be [C]");
    // broadcast affine over all leading axes
    auto rows = reshape(y, {x.size() / C, C});
    std::vector<T> yy(rows.size());
    for (std::size_t i = 0; i < yy.size(); ++i) yy[i] = rows[i] * gamma[i % C] + beta[i % C];
    auto out = record<T>("layer_norm_affine", x.shape(), std::move(yy), {&rows, &gamma, &beta},
                         [ri = rows.impl(), gi = gamma.impl(), bi = beta.impl(), C] {
                             return [=](const hmat::detail::Impl<T>& o) {
                                 auto* gr = grad_of(ri);
                                 auto* gg = grad_of(gi);
                                 auto* gb = grad_of(bi);
                                 for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                     if (gr) (*gr)[i] += o.grad[i] * gi->data[i % C];
                                     if (gg) (*gg)[i % C] += o.grad[i] * ri->data[i];
                                     if (gb) (*gb)[i % C] += o.grad[i];
                                 }
                             };
                         });
    return out;
}

/// y = gamma[n,c] * x + beta[n,c], broadcast over every other axis of x.
/// channel_axis is 1 for N x C x H x W maps and rank-1 for N x L x C tokens.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t channel_axis) {
    detail::require(x.rank() >= 2 && channel_axis >= 1 && channel_axis < x.rank(), "channel_affine: bad axis");
    const std::size_t N = x.dim(0), C = x.dim(channel_axis);
    detail::require(gamma.shape() == Shape{N, C} && beta.shape() == Shape{N, C},
                    "channel_affine: gamma/beta must be " + to_string(Shape{N, C}));
    std::size_t inner = 1;
    for (std::size_t d = channel_axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
    const std::size_t per_sample = x.size() / N;
    // index into [N,C] for flat element f
    auto nc = [=](std::size_t f) { return (f / per_sample) * C + (f / inner) % C; };
    std::vector<T> y(x.size());
    for (std::size_t f = 0; f < y.size(); ++f) y[f] = gamma[nc(f)] * x[f] + beta[nc(f)];
    return record<T>("channel_affine", x.shape(), std::move(y), {&x, &gamma, &beta},
                     [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), nc] {
                         return [=](const hmat::detail::Impl<T>& o) {
                             auto* gx = grad_of(xi);
                             auto* gg = grad_of(gi);
                             auto* gb = grad_of(bi);
                             for (std::size_t f = 0; f < o.grad.size(); ++f) {
                                 const std::size_t j = nc(f);
                                 if (gx) (*gx)[f] += o.grad[f] * gi->data[j];
                                 if (gg) (*gg)[j] += o.grad[f] * xi->data[f];
                                 if (gb) (*gb)[j] += o.grad[f];
                             }
                         };
                     });
}

// ---------------------------------------------------------------- attention primitives

/// Softmax over the last axis, stabilized by max subtraction. -inf entries are
/// the masking sentinel and map to exactly 0. A slice with no finite entry is
/// a contract violation. NaN and +inf are rejected.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const std::size_t K = x.shape().back();
    const std::size_t rows = x.size() / K;
    constexpr T ninf = -std::numeric_limits<T>::infinity();
    std::vector<T> y(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * K;
        T mx = ninf;
        for (std::size_t j = 0; j < K; ++j) {
            if (std::isnan(xr[j]) || xr[j] == std::numeric_limits<T>::infinity())
                throw NonFiniteError("softmax_lastdim: NaN or +inf logit");
            mx = std::max(mx, xr[j]);
        }
        if (mx == ninf) throw GraphError("softmax_lastdim: slice has no finite entry (all keys masked)");
        T s = 0;
        for (std::size_t j = 0; j < K; ++j) {
            T e = xr[j] == ninf ? T(0) : std::exp(xr[j] - mx);
            y[r * K + j] = e;
            s += e;
        }
        for (std::size_t j = 0; j < K; ++j) y[r * K + j] /= s;
    }
    auto yv = y;
    return record<T>("softmax_lastdim", x.shape(), std::move(y), {&x}, [xi = x.impl(), yv = std::move(yv), K, rows] {
        return [=](const hmat::detail::Impl<T>& out) {
            auto* g = grad_of(xi);
            if (!g) return;
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = 0;
                for (std::size_t j = 0; j < K; ++j) dot += out.grad[r * K + j] * yv[r * K + j];
                for (std::size_t j = 0; j < K; ++j) (*g)[r * K + j] += yv[r * K + j] * (out.grad[r * K + j] - dot);
            }
        };
    });
}

/// Attention key mask for scores[B, heads, T, T]: score (b,h,i,j) becomes -inf
/// when key_valid[b*T + j] == 0. Windows with no valid key are left unmasked
/// (their outputs must be discarded by the caller).
template <typename T>
Tensor<T> mask_keys(const Tensor<T>& scores, std::span<const std::uint8_t> key_valid) {
    detail::require_rank(scores, 4, "mask_keys");
    const std::size_t B = scores.dim(0), Hh = scores.dim(1), Tq = scores.dim(2), Tk = scores.dim(3);
    detail::require(key_valid.size() == B * Tk, "mask_keys: validity length mismatch");
    std::vector<std::uint8_t> keep(B * Tk, 1);
    for (std::size_t b = 0; b < B; ++b) {
        bool any = false;
        for (std::size_t j = 0; j < Tk; ++j) any = any || key_valid[b * Tk + j];
        if (any)
            for (std::size_t j = 0; j < Tk; ++j) keep[b * Tk + j] = key_valid[b * Tk + j] != 0;
    }
    constexpr T ninf = -std::numeric_limits<T>::infinity();
    std::vector<T> y(scores.size());
    for (std::size_t f = 0; f < y.size(); ++f) {
        std::size_t j = f % Tk, b = f / (Hh * Tq * Tk);
        y[f] = keep[b * Tk + j] ? scores[f] : ninf;
    }
    return record<T>(
        "mask_keys", scores.shape(), std::move(y), {&scores},
        [si = scores.impl(), keep = std::move(keep), Hh, Tq, Tk] {
            return [=](const hmat::detail::Impl<T>& out) {
                if (auto* g = grad_of(si))
                    for (std::size_t f = 0; f < out.grad.size(); ++f) {
                        std::size_t j = f % Tk, b = f / (Hh * Tq * Tk);
                        if (keep[b * Tk + j]) (*g)[f] += out.grad[f];
                    }
            };
        },
        hmat::detail::FiniteCheck::AllowNegInf);
}

}  // namespace hmat::ops
