#pragma once

// Mask-conditional style fusion: semantic, latent and mask-geometry codes are
// concatenated and mapped to one conditioning vector, which drives per-channel
// scale and shift of standardized features.

#include <string>

#include "hmat/config.hpp"
#include "hmat/ops.hpp"
#include "hmat/params.hpp"

namespace hmat {

template <typename T>
struct StyleVector {
    Tensor<T> s;  // [N, style_dim]
    Tensor<T> s_img, s_latent, s_mask;
};

template <typename T>
struct StyleParams {
    StyleDims dims;
    std::size_t style_dim = 0;
    Tensor<T> sem_w, sem_b;
    Tensor<T> lat1_w, lat1_b, lat2_w, lat2_b;
    Tensor<T> shape1_w, shape1_b, shape2_w, shape2_b, shape3_w, shape3_b, shape_fc_w, shape_fc_b;
    Tensor<T> fuse1_w, fuse1_b, fuse2_w, fuse2_b;

    static StyleParams build(ParamBuilder<T>& pb, const ModelConfig& cfg) {
        StyleParams p;
        p.dims = cfg.style;
        p.style_dim = cfg.style_dim;
        const auto& d = cfg.style;
        const auto& mc = cfg.mask_encoder_channels;
        p.sem_w = pb.param("style.sem.w", {d.img, cfg.dim()});
        p.sem_b = pb.param("style.sem.b", {d.img}, Init::Zeros);
        p.lat1_w = pb.param("style.lat1.w", {d.latent, cfg.z_dim});
        p.lat1_b = pb.param("style.lat1.b", {d.latent}, Init::Zeros);
        p.lat2_w = pb.param("style.lat2.w", {d.latent, d.latent});
        p.lat2_b = pb.param("style.lat2.b", {d.latent}, Init::Zeros);
        p.shape1_w = pb.param("style.shape1.w", {mc[0], 1, 3, 3});
        p.shape1_b = pb.param("style.shape1.b", {mc[0]}, Init::Zeros);
        p.shape2_w = pb.param("style.shape2.w", {mc[1], mc[0], 3, 3});
        p.shape2_b = pb.param("style.shape2.b", {mc[1]}, Init::Zeros);
        p.shape3_w = pb.param("style.shape3.w", {mc[2], mc[1], 3, 3});
        p.shape3_b = pb.param("style.shape3.b", {mc[2]}, Init::Zeros);
        p.shape_fc_w = pb.param("style.shape_fc.w", {d.mask, mc[2]});
        p.shape_fc_b = pb.param("style.shape_fc.b", {d.mask}, Init::Zeros);
        p.fuse1_w = pb.param("style.fuse1.w", {cfg.style_dim, d.concat()});
        p.fuse1_b = pb.param("style.fuse1.b", {cfg.style_dim}, Init::Zeros);
        p.fuse2_w = pb.param("style.fuse2.w", {cfg.style_dim, cfg.style_dim});
        p.fuse2_b = pb.param("style.fuse2.b", {cfg.style_dim}, Init::Zeros);
        return p;
    }
};

/// Global average pool of a feature map followed by a projection to dim_img.
template <typename T>
Tensor<T> semantic_style(const Tensor<T>& features, const StyleParams<T>& p) {
    return ops::linear(ops::gap(features), p.sem_w, p.sem_b);
}

/// Two-layer mapping network z -> dim_latent.
template <typename T>
Tensor<T> latent_style(const Tensor<T>& z, const StyleParams<T>& p) {
    auto h = ops::leaky_relu(ops::linear(z, p.lat1_w, p.lat1_b));
    return ops::linear(h, p.lat2_w, p.lat2_b);
}

/// Shape encoder over the binary mask [N,1,H,W]: three stride-2 convolutions,
/// pooling, projection to dim_mask.
template <typename T>
Tensor<T> mask_style(const Tensor<T>& mask, const StyleParams<T>& p) {
    auto h = ops::leaky_relu(ops::conv2d(mask, p.shape1_w, p.shape1_b, 2, 1));
    h = ops::leaky_relu(ops::conv2d(h, p.shape2_w, p.shape2_b, 2, 1));
    h = ops::leaky_relu(ops::conv2d(h, p.shape3_w, p.shape3_b, 2, 1));
    return ops::linear(ops::gap(h), p.shape_fc_w, p.shape_fc_b);
}

/// s = mapping([s_img, s_latent, s_mask]) in that order.
template <typename T>
StyleVector<T> fuse(const Tensor<T>& s_img, const Tensor<T>& s_latent, const Tensor<T>& s_mask,
                    const StyleParams<T>& p) {
    if (s_img.rank() != 2 || s_img.dim(1) != p.dims.img || s_latent.dim(1) != p.dims.latent ||
        s_mask.dim(1) != p.dims.mask)
        throw ShapeError("fuse: part dims " + to_string(s_img.shape()) + " " + to_string(s_latent.shape()) + " " +
                         to_string(s_mask.shape()) + " do not match preset " + p.dims.name);
    auto cat = ops::concat<T>({s_img, s_latent, s_mask}, 1);
    auto h = ops::leaky_relu(ops::linear(cat, p.fuse1_w, p.fuse1_b));
    return {ops::linear(h, p.fuse2_w, p.fuse2_b), s_img, s_latent, s_mask};
}

/// Linear heads producing per-channel (gamma, beta) from the style vector.
/// gamma's bias starts at 1 so a fresh head is close to the identity scale.
template <typename T>
struct ModulationHead {
    Tensor<T> gamma_w, gamma_b, beta_w, beta_b;

    static ModulationHead build(ParamBuilder<T>& pb, const std::string& prefix, std::size_t channels,
                                std::size_t style_dim) {
        return {pb.param(prefix + ".gamma.w", {channels, style_dim}),
                pb.param(prefix + ".gamma.b", {channels}, Init::Ones),
                pb.param(prefix + ".beta.w", {channels, style_dim}),
                pb.param(prefix + ".beta.b", {channels}, Init::Zeros)};
    }

    Tensor<T> gamma(const StyleVector<T>& s) const { return ops::linear(s.s, gamma_w, gamma_b); }
    Tensor<T> beta(const StyleVector<T>& s) const { return ops::linear(s.s, beta_w, beta_b); }
};

/// gamma(s) * instance_norm(f) + beta(s) for f [N,C,H,W], eps = 1e-5.
template <typename T>
Tensor<T> modulate(const Tensor<T>& f, const StyleVector<T>& s, const ModulationHead<T>& head) {
    return ops::channel_affine(ops::instance_norm(f, T(1e-5)), head.gamma(s), head.beta(s), 1);
}

}  // namespace hmat
