#pragma once

// Windowed multi-head self-attention over bottleneck tokens. Keys whose token
// holds no observed content are excluded from every softmax; token validity
// dilates window by window after each block.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmat/config.hpp"
#include "hmat/mask.hpp"
#include "hmat/ops.hpp"
#include "hmat/params.hpp"
#include "hmat/style.hpp"

namespace hmat {

/// Per-head width. When heads does not divide the model width (180 with 8
/// heads at full scale) it is rounded up and q/k/v project to heads * d.
inline std::size_t head_dim(std::size_t dim, std::size_t heads) {
    if (heads == 0 || heads > dim)
        throw ShapeError("attention: " + std::to_string(heads) + " heads for width " + std::to_string(dim));
    return (dim + heads - 1) / heads;
}

template <typename T>
struct AttentionParams {
    Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
    /// [(2w-1)^2, heads] relative position bias; optional.
    Tensor<T> rel_bias;
    std::size_t window = 0;

    static AttentionParams build(ParamBuilder<T>& pb, const std::string& prefix, std::size_t dim, std::size_t heads,
                                 std::size_t window) {
        const std::size_t inner = heads * head_dim(dim, heads);
        AttentionParams p;
        p.q_w = pb.param(prefix + ".q.w", {inner, dim});
        p.q_b = pb.param(prefix + ".q.b", {inner}, Init::Zeros);
        p.k_w = pb.param(prefix + ".k.w", {inner, dim});
        p.k_b = pb.param(prefix + ".k.b", {inner}, Init::Zeros);
        p.v_w = pb.param(prefix + ".v.w", {inner, dim});
        p.v_b = pb.param(prefix + ".v.b", {inner}, Init::Zeros);
        p.out_w = pb.param(prefix + ".out.w", {dim, inner});
        p.out_b = pb.param(prefix + ".out.b", {dim}, Init::Zeros);
        if (window > 0) {
            p.rel_bias = pb.param(prefix + ".rel_bias", {(2 * window - 1) * (2 * window - 1), heads}, Init::Zeros);
            p.window = window;
        }
        return p;
    }
};

template <typename T>
struct AttentionResult {
    Tensor<T> out;      // [B,T,C]
    Tensor<T> weights;  // [B,heads,T,T] attention probabilities
};

namespace detail {

inline std::vector<std::size_t> relative_position_index(std::size_t w) {
    std::vector<std::size_t> idx(w * w * w * w);
    for (std::size_t i = 0; i < w * w; ++i)
        for (std::size_t j = 0; j < w * w; ++j) {
            std::size_t dr = i / w + w - 1 - j / w, dc = i % w + w - 1 - j % w;
            idx[i * w * w + j] = dr * (2 * w - 1) + dc;
        }
    return idx;
}

// [B*T, C] rows -> [B*heads, T, d]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& rows, std::size_t B, std::size_t Tn, std::size_t heads, std::size_t d) {
    return ops::reshape(ops::permute(ops::reshape(rows, {B, Tn, heads, d}), {0, 2, 1, 3}), {B * heads, Tn, d});
}

}  // namespace detail

/// Multi-head attention inside B windows of T tokens. Scores of keys with
/// v_j = 0 are set to -inf before the softmax, so every output is a convex
/// combination of valid tokens only. Windows with no valid key return their
/// input unchanged.
template <typename T>
AttentionResult<T> masked_attention(const Tensor<T>& x, std::span<const std::uint8_t> valid, std::size_t heads,
                                    const AttentionParams<T>& p) {
    if (x.rank() != 3) throw ShapeError("masked_attention: input must be [B,T,C]");
    const std::size_t B = x.dim(0), Tn = x.dim(1), C = x.dim(2);
    const std::size_t d = head_dim(C, heads);
    if (p.q_w.dim(0) != heads * d || p.q_w.dim(1) != C)
        throw ShapeError("masked_attention: projections do not match C=" + std::to_string(C) + " with " +
                         std::to_string(heads) + " heads");
    if (valid.size() != B * Tn) throw ShapeError("masked_attention: validity length mismatch");

    auto rows = ops::reshape(x, {B * Tn, C});
    auto q = detail::split_heads(ops::linear(rows, p.q_w, p.q_b), B, Tn, heads, d);
    auto k = detail::split_heads(ops::linear(rows, p.k_w, p.k_b), B, Tn, heads, d);
    auto v = detail::split_heads(ops::linear(rows, p.v_w, p.v_b), B, Tn, heads, d);

    auto scores = ops::reshape(ops::scale(ops::matmul(q, k, true), T(1) / std::sqrt(static_cast<T>(d))),
                               {B, heads, Tn, Tn});
    if (p.rel_bias.defined()) {
        if (p.window * p.window != Tn) throw ShapeError("masked_attention: relative bias window does not match T");
        auto table = ops::gather_rows(p.rel_bias, detail::relative_position_index(p.window), {Tn * Tn, heads});
        auto bias = ops::reshape(ops::permute(table, {1, 0}), {heads, Tn, Tn});
        scores = ops::add_leading_broadcast(scores, bias);
    }
    auto alpha = ops::softmax_lastdim(ops::mask_keys(scores, valid));
    auto ctx = ops::matmul(ops::reshape(alpha, {B * heads, Tn, Tn}), v);
    auto merged = ops::reshape(ops::permute(ops::reshape(ctx, {B, heads, Tn, d}), {0, 2, 1, 3}), {B * Tn, heads * d});
    auto out = ops::reshape(ops::linear(merged, p.out_w, p.out_b), {B, Tn, C});

    std::vector<T> alive(B, T(0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < Tn; ++j)
            if (valid[b * Tn + j]) alive[b] = T(1);
    auto gate = Tensor<T>::from({B, 1, 1}, std::move(alive));
    return {ops::select(gate, out, x), alpha};
}

template <typename T>
struct BlockParams {
    Tensor<T> norm1_g, norm1_b;
    AttentionParams<T> attn;
    ModulationHead<T> ffn_mod;
    Tensor<T> ffn1_w, ffn1_b, ffn2_w, ffn2_b;

    static BlockParams build(ParamBuilder<T>& pb, const std::string& prefix, const ModelConfig& cfg) {
        const std::size_t C = cfg.dim(), hidden = C * cfg.ffn_expansion;
        BlockParams p;
        p.norm1_g = pb.param(prefix + ".norm1.g", {C}, Init::Ones);
        p.norm1_b = pb.param(prefix + ".norm1.b", {C}, Init::Zeros);
        p.attn = AttentionParams<T>::build(pb, prefix + ".attn", C, cfg.heads, cfg.window);
        p.ffn_mod = ModulationHead<T>::build(pb, prefix + ".ffn_mod", C, cfg.style_dim);
        p.ffn1_w = pb.param(prefix + ".ffn1.w", {hidden, C});
        p.ffn1_b = pb.param(prefix + ".ffn1.b", {hidden}, Init::Zeros);
        p.ffn2_w = pb.param(prefix + ".ffn2.w", {C, hidden});
        p.ffn2_b = pb.param(prefix + ".ffn2.b", {C}, Init::Zeros);
        return p;
    }
};

template <typename T>
struct BottleneckParams {
    std::vector<BlockParams<T>> blocks;

    static BottleneckParams build(ParamBuilder<T>& pb, const ModelConfig& cfg) {
        BottleneckParams p;
        for (std::size_t b = 0; b < cfg.blocks; ++b)
            p.blocks.push_back(BlockParams<T>::build(pb, "bottleneck.block" + std::to_string(b), cfg));
        return p;
    }
};

/// Tokens of N samples on an H_t x W_t grid.
template <typename T>
struct TokenState {
    Tensor<T> x;                    // [N, H_t*W_t, C]
    std::vector<std::uint8_t> v;    // N*H_t*W_t
    std::size_t grid_h = 0, grid_w = 0;
};

namespace detail {

// Token row (n*L + r*W + c) for position t of window wi under a cyclic shift.
inline std::vector<std::size_t> window_rows(std::size_t N, const WindowPartition& part, std::size_t shift) {
    const std::size_t H = part.grid_h, W = part.grid_w, w = part.window, L = H * W;
    std::vector<std::size_t> rows;
    rows.reserve(N * L);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t wr = 0; wr < H / w; ++wr)
            for (std::size_t wc = 0; wc < W / w; ++wc)
                for (std::size_t tr = 0; tr < w; ++tr)
                    for (std::size_t tc = 0; tc < w; ++tc)
                        rows.push_back(n * L + ((wr * w + tr + shift) % H) * W + (wc * w + tc + shift) % W);
    return rows;
}

}  // namespace detail

/// One pre-norm block: masked window attention with residual, then a
/// style-modulated feed-forward with residual, then validity dilation over the
/// same partition. Tokens of windows with no valid token pass through both
/// sublayers untouched.
template <typename T>
TokenState<T> transformer_block(const TokenState<T>& state, const StyleVector<T>& style, std::size_t block_idx,
                                const BlockParams<T>& p, const ModelConfig& cfg,
                                std::vector<Tensor<T>>* attention_out = nullptr) {
    const WindowPartition part{state.grid_h, state.grid_w, cfg.window};
    part.validate();
    const std::size_t N = state.x.dim(0), L = state.x.dim(1), C = state.x.dim(2);
    if (L != part.grid_h * part.grid_w || state.v.size() != N * L)
        throw ShapeError("transformer_block: token state inconsistent with grid");
    const std::size_t Tn = part.tokens_per_window(), nW = N * part.windows_per_sample();

    const auto rows = detail::window_rows(N, part, part.shift_for_block(block_idx));
    std::vector<std::size_t> inverse(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) inverse[rows[i]] = i;

    std::vector<std::uint8_t> vw(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) vw[i] = state.v[rows[i]];
    std::vector<T> alive(nW, T(0));
    for (std::size_t b = 0; b < nW; ++b)
        for (std::size_t t = 0; t < Tn; ++t)
            if (vw[b * Tn + t]) alive[b] = T(1);

    auto xw = ops::gather_rows(state.x, rows, {nW, Tn, C});
    auto normed = ops::layer_norm(xw, p.norm1_g, p.norm1_b);
    auto attn = masked_attention(normed, vw, cfg.heads, p.attn);
    if (attention_out) attention_out->push_back(attn.weights);
    auto window_gate = Tensor<T>::from({nW, 1, 1}, alive);
    auto x1w = ops::select(window_gate, ops::add(xw, attn.out), xw);
    auto x1 = ops::gather_rows(x1w, inverse, {N, L, C});

    auto h = ops::layer_norm(x1);
    h = ops::channel_affine(h, p.ffn_mod.gamma(style), p.ffn_mod.beta(style), 2);
    auto f = ops::leaky_relu(ops::linear(ops::reshape(h, {N * L, C}), p.ffn1_w, p.ffn1_b));
    f = ops::reshape(ops::linear(f, p.ffn2_w, p.ffn2_b), {N, L, C});

    std::vector<T> token_alive(N * L);
    for (std::size_t i = 0; i < rows.size(); ++i) token_alive[rows[i]] = alive[i / Tn];
    auto token_gate = Tensor<T>::from({N, L, 1}, token_alive);
    auto x2 = ops::select(token_gate, ops::add(x1, f), x1);

    TokenState<T> next{x2, std::vector<std::uint8_t>(N * L), state.grid_h, state.grid_w};
    for (std::size_t i = 0; i < N * L; ++i) next.v[i] = token_alive[i] != T(0);
    return next;
}

template <typename T>
struct BottleneckOutput {
    Tensor<T> features;                             // [N,C,H_t,W_t]
    std::vector<std::vector<std::uint8_t>> validity;  // after each block
};

/// Flattens F_enc to row-major tokens, runs every block, reshapes back.
template <typename T>
BottleneckOutput<T> bottleneck_forward(const Tensor<T>& f_enc, const std::vector<std::uint8_t>& v,
                                       const StyleVector<T>& style, const BottleneckParams<T>& p,
                                       const ModelConfig& cfg) {
    if (f_enc.rank() != 4) throw ShapeError("bottleneck_forward: input must be [N,C,H,W]");
    const std::size_t N = f_enc.dim(0), C = f_enc.dim(1), H = f_enc.dim(2), W = f_enc.dim(3);
    if (C != cfg.dim()) throw ShapeError("bottleneck_forward: channel count does not match model dim");
    WindowPartition{H, W, cfg.window}.validate();
    if (v.size() != N * H * W) throw ShapeError("bottleneck_forward: validity length mismatch");

    TokenState<T> st{ops::reshape(ops::permute(f_enc, {0, 2, 3, 1}), {N, H * W, C}), v, H, W};
    BottleneckOutput<T> out;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        st = transformer_block(st, style, b, p.blocks[b], cfg);
        out.validity.push_back(st.v);
    }
    out.features = ops::permute(ops::reshape(st.x, {N, H, W, C}), {0, 3, 1, 2});
    return out;
}

}  // namespace hmat
