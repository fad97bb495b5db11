#pragma once

// Mask-aware dynamic filtering encoder. Each layer predicts a k x k kernel per
// output location from the k x k neighborhood of the soft validity map, applies
// it depthwise, then mixes channels with a 1x1 convolution.

#include <string>
#include <vector>

#include "hmat/config.hpp"
#include "hmat/mask.hpp"
#include "hmat/ops.hpp"
#include "hmat/params.hpp"

namespace hmat {

template <typename T>
struct MadfLayer {
    std::size_t k = 3, stride = 1, in_channels = 0, out_channels = 0;
    // kernel prediction: k*k mask taps -> hidden -> k*k kernel taps, all 1x1
    Tensor<T> phi1_w, phi1_b, phi2_w, phi2_b;
    Tensor<T> mix_w, mix_b;

    static MadfLayer build(ParamBuilder<T>& pb, const std::string& prefix, std::size_t cin, std::size_t cout,
                           std::size_t k, std::size_t stride, std::size_t hidden) {
        MadfLayer l;
        l.k = k;
        l.stride = stride;
        l.in_channels = cin;
        l.out_channels = cout;
        const std::size_t taps = k * k;
        l.phi1_w = pb.param(prefix + ".phi1.w", {hidden, taps, 1, 1});
        l.phi1_b = pb.param(prefix + ".phi1.b", {hidden}, Init::Zeros);
        l.phi2_w = pb.param(prefix + ".phi2.w", {taps, hidden, 1, 1});
        l.phi2_b = pb.param(prefix + ".phi2.b", {taps}, Init::Zeros);
        l.mix_w = pb.param(prefix + ".mix.w", {cout, cin, 1, 1});
        l.mix_b = pb.param(prefix + ".mix.b", {cout}, Init::Zeros);
        return l;
    }

    std::size_t pad() const { return k / 2; }
};

/// Per-location kernels [N, k*k, Ho, Wo] predicted from the mask feature.
template <typename T>
Tensor<T> predict_kernels(const Tensor<T>& mfeat, const MadfLayer<T>& layer) {
    auto nb = ops::unfold(mfeat, layer.k, layer.stride, layer.pad());
    auto h = ops::leaky_relu(ops::conv2d(nb, layer.phi1_w, layer.phi1_b));
    return ops::conv2d(h, layer.phi2_w, layer.phi2_b);
}

template <typename T>
Tensor<T> madf_conv(const Tensor<T>& x, const Tensor<T>& mfeat, const MadfLayer<T>& layer) {
    if (x.rank() != 4 || mfeat.rank() != 4 || mfeat.dim(1) != 1 || mfeat.dim(0) != x.dim(0) ||
        mfeat.dim(2) != x.dim(2) || mfeat.dim(3) != x.dim(3))
        throw ShapeError("madf_conv: mask feature " + to_string(mfeat.shape()) + " not aligned with input " +
                         to_string(x.shape()));
    if (x.dim(1) != layer.in_channels)
        throw ShapeError("madf_conv: expected " + std::to_string(layer.in_channels) + " input channels, got " +
                         std::to_string(x.dim(1)));
    if (layer.stride > 1 && (x.dim(2) % layer.stride || x.dim(3) % layer.stride))
        throw ShapeError("madf_conv: stride " + std::to_string(layer.stride) + " incompatible with extents " +
                         to_string(x.shape()));
    auto kernels = predict_kernels(mfeat, layer);
    auto y = ops::dynamic_depthwise_conv(x, kernels, layer.k, layer.stride, layer.pad());
    return ops::leaky_relu(ops::conv2d(y, layer.mix_w, layer.mix_b));
}

template <typename T>
struct EncoderParams {
    MadfLayer<T> stem, down1, down2, down3;

    static EncoderParams build(ParamBuilder<T>& pb, const ModelConfig& cfg) {
        const auto& c = cfg.channels;
        const auto k = cfg.kernel, hd = cfg.kernel_hidden;
        return {MadfLayer<T>::build(pb, "enc.stem", 3, c[0], k, 1, hd),
                MadfLayer<T>::build(pb, "enc.down1", c[0], c[0], k, 2, hd),
                MadfLayer<T>::build(pb, "enc.down2", c[0], c[1], k, 2, hd),
                MadfLayer<T>::build(pb, "enc.down3", c[1], c[2], k, 2, hd)};
    }
};

template <typename T>
struct EncoderOutput {
    /// skips[0] at H/2 (channels[0]), skips[1] at H/4 (channels[1])
    std::vector<Tensor<T>> skips;
    Tensor<T> bottleneck;
};

/// x_obs [N,3,H,W] with a 3-level validity pyramid of the same masks.
template <typename T>
EncoderOutput<T> encode(const Tensor<T>& x_obs, const ValidityPyramid<T>& pyr, const EncoderParams<T>& p) {
    if (x_obs.rank() != 4 || x_obs.dim(1) != 3) throw ShapeError("encode: input must be [N,3,H,W]");
    if (x_obs.dim(2) % 8 || x_obs.dim(3) % 8)
        throw ShapeError("encode: extents " + to_string(x_obs.shape()) + " must be divisible by 8");
    if (pyr.levels.size() < 3) throw ShapeError("encode: pyramid needs at least 2 levels");
    auto f0 = madf_conv(x_obs, pyr.at(0).soft, p.stem);
    auto f1 = madf_conv(f0, pyr.at(0).soft, p.down1);
    auto f2 = madf_conv(f1, pyr.at(1).soft, p.down2);
    auto f3 = madf_conv(f2, pyr.at(2).soft, p.down3);
    return {{f1, f2}, f3};
}

}  // namespace hmat
