#pragma once

// Teacher-forcing decoder, output compositing and the full generator.

#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "hmat/config.hpp"
#include "hmat/madf.hpp"
#include "hmat/mask.hpp"
#include "hmat/ops.hpp"
#include "hmat/params.hpp"
#include "hmat/style.hpp"
#include "hmat/transformer.hpp"

namespace hmat {

/// F = D * (1 - m) + S * m, realized as exact selection. m [N,1,H,W] is
/// broadcast over channels. Gradients reach D only where m = 0 and S only
/// where m = 1.
template <typename T>
Tensor<T> hard_gate_fuse(const Tensor<T>& decoder_features, const Tensor<T>& skip, const Tensor<T>& mask) {
    const auto& d = decoder_features.shape();
    if (d.size() != 4 || skip.shape() != d || mask.rank() != 4 || mask.dim(0) != d[0] || mask.dim(1) != 1 ||
        mask.dim(2) != d[2] || mask.dim(3) != d[3])
        throw ShapeError("hard_gate_fuse: misaligned extents D " + to_string(d) + " S " + to_string(skip.shape()) +
                         " m " + to_string(mask.shape()));
    return ops::select(mask, skip, decoder_features);
}

/// x_out = x where m = 1, generated where m = 0; valid pixels are copied bit-exactly.
template <typename T>
Tensor<T> composite(const Tensor<T>& x, const Tensor<T>& mask, const Tensor<T>& generated) {
    if (x.shape() != generated.shape() || x.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 ||
        mask.dim(0) != x.dim(0) || mask.dim(2) != x.dim(2) || mask.dim(3) != x.dim(3))
        throw ShapeError("composite: misaligned extents");
    return ops::select(mask, x, generated);
}

template <typename T>
struct DecoderScale {
    Tensor<T> conv_w, conv_b;
    ModulationHead<T> mod;
};

template <typename T>
struct DecoderParams {
    std::vector<DecoderScale<T>> scales;  // coarse to fine: H/4, H/2
    Tensor<T> out_w, out_b;

    static DecoderParams build(ParamBuilder<T>& pb, const ModelConfig& cfg) {
        DecoderParams p;
        const auto& c = cfg.channels;
        const std::size_t io[2][2] = {{c[2], c[1]}, {c[1], c[0]}};
        for (std::size_t i = 0; i < 2; ++i) {
            const std::string pre = "dec.scale" + std::to_string(i);
            DecoderScale<T> s;
            s.conv_w = pb.param(pre + ".conv.w", {io[i][1], io[i][0], 3, 3});
            s.conv_b = pb.param(pre + ".conv.b", {io[i][1]}, Init::Zeros);
            s.mod = ModulationHead<T>::build(pb, pre + ".mod", io[i][1], cfg.style_dim);
            p.scales.push_back(std::move(s));
        }
        p.out_w = pb.param("dec.out.w", {3, c[0], 3, 3});
        p.out_b = pb.param("dec.out.b", {3}, Init::Zeros);
        return p;
    }
};

template <typename T>
struct DecoderOutput {
    Tensor<T> image;               // x-tilde in [0,1], [N,3,H,W]
    std::vector<Tensor<T>> fused;  // gated features per scale, coarse to fine
};

/// skips = {H/2, H/4} from the encoder; the pyramid's hard masks at levels 2
/// and 1 gate the H/4 and H/2 scales.
template <typename T>
DecoderOutput<T> decode(const Tensor<T>& f_global, const std::vector<Tensor<T>>& skips, const ValidityPyramid<T>& pyr,
                        const StyleVector<T>& style, const DecoderParams<T>& p) {
    if (skips.size() != 2 || pyr.levels.size() < 3) throw ShapeError("decode: expects two skips and a 2+ level pyramid");
    DecoderOutput<T> out;
    Tensor<T> h = f_global;
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& sc = p.scales[i];
        const auto& skip = skips[1 - i];
        const auto& hard = pyr.at(2 - i).hard;
        h = ops::conv2d(ops::upsample_nearest2(h), sc.conv_w, sc.conv_b, 1, 1);
        h = ops::leaky_relu(modulate(h, style, sc.mod));
        h = hard_gate_fuse(h, skip, hard);
        out.fused.push_back(h);
    }
    out.image = ops::sigmoid(ops::conv2d(ops::upsample_nearest2(h), p.out_w, p.out_b, 1, 1));
    return out;
}

/// Post-compositing refinement slot: (composited, mask, z) -> image. It must
/// leave valid pixels untouched; this is checked after every call.
template <typename T>
using RefinementHook = std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&)>;

template <typename T>
RefinementHook<T> identity_refinement() {
    return [](const Tensor<T>& x, const Tensor<T>&, const Tensor<T>&) { return x; };
}

template <typename T>
struct GenerationResult {
    Tensor<T> restored;     // after the refinement hook
    Tensor<T> composited;   // x * m + x-tilde * (1 - m)
    Tensor<T> structural;   // x-tilde
    EncoderOutput<T> encoded;
    BottleneckOutput<T> bottleneck;
    StyleVector<T> style_bottleneck, style_decoder;
    std::vector<Tensor<T>> fused;
    ValidityPyramid<T> pyramid;
};

/// Throws InvariantViolation unless `out` equals `reference` bit-for-bit at
/// every pixel whose mask value is 1.
template <typename T>
void assert_valid_pixels_unchanged(const Tensor<T>& reference, const Tensor<T>& mask, const Tensor<T>& out) {
    if (out.shape() != reference.shape()) throw InvariantViolation("refinement changed the image shape");
    const std::size_t N = reference.dim(0), C = reference.dim(1), HW = reference.dim(2) * reference.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
            if (mask[n * HW + p] != T(1)) continue;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t i = (n * C + c) * HW + p;
                if (std::memcmp(&out.data()[i], &reference.data()[i], sizeof(T)) != 0)
                    throw InvariantViolation("valid pixel " + std::to_string(p) + " of sample " + std::to_string(n) +
                                             " was altered");
            }
        }
}

/// The complete restoration network with its parameters.
template <typename T>
class Generator {
   public:
    Generator(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        auto pb = ParamBuilder<T>::creating(params_, seed);
        build(pb);
    }

    Generator(ModelConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
        auto pb = ParamBuilder<T>::binding(params_);
        build(pb);
        if (params_.size() != expected_count_)
            throw DataError("parameter archive holds " + std::to_string(params_.size()) + " tensors, model expects " +
                            std::to_string(expected_count_));
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const EncoderParams<T>& encoder() const { return enc_; }
    const BottleneckParams<T>& bottleneck() const { return bott_; }
    const StyleParams<T>& style() const { return style_; }
    const DecoderParams<T>& decoder() const { return dec_; }

    /// image [N,3,H,W], masks [N,1,H,W] binary, z [N, z_dim]. Pixels under
    /// m = 0 in `image` are ignored.
    GenerationResult<T> generate(const Tensor<T>& image, const Tensor<T>& masks, const Tensor<T>& z,
                                 const RefinementHook<T>& hook = identity_refinement<T>()) const {
        if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError("generate: image must be [N,3,H,W]");
        if (masks.rank() != 4 || masks.dim(0) != image.dim(0) || masks.dim(1) != 1 || masks.dim(2) != image.dim(2) ||
            masks.dim(3) != image.dim(3))
            throw ShapeError("generate: mask " + to_string(masks.shape()) + " does not match image " +
                             to_string(image.shape()));
        if (z.rank() != 2 || z.dim(0) != image.dim(0) || z.dim(1) != cfg_.z_dim)
            throw ShapeError("generate: z must be [N," + std::to_string(cfg_.z_dim) + "]");

        GenerationResult<T> r;
        r.pyramid = propagate_validity(masks, 3);
        const auto x_obs = ops::mul_mask(image, masks);
        r.encoded = encode(x_obs, r.pyramid, enc_);

        const auto s_latent = latent_style(z, style_);
        const auto s_mask = mask_style(masks, style_);
        r.style_bottleneck = fuse(semantic_style(r.encoded.bottleneck, style_), s_latent, s_mask, style_);
        r.bottleneck = bottleneck_forward(r.encoded.bottleneck, token_validity(r.pyramid, 3), r.style_bottleneck, bott_,
                                          cfg_);
        r.style_decoder = fuse(semantic_style(r.bottleneck.features, style_), s_latent, s_mask, style_);

        auto dec = decode(r.bottleneck.features, r.encoded.skips, r.pyramid, r.style_decoder, dec_);
        r.structural = dec.image;
        r.fused = std::move(dec.fused);
        r.composited = composite(image, masks, r.structural);
        r.restored = hook(r.composited, masks, z);
        assert_valid_pixels_unchanged(image, masks, r.restored);
        return r;
    }

   private:
    void build(ParamBuilder<T>& pb) {
        enc_ = EncoderParams<T>::build(pb, cfg_);
        style_ = StyleParams<T>::build(pb, cfg_);
        bott_ = BottleneckParams<T>::build(pb, cfg_);
        dec_ = DecoderParams<T>::build(pb, cfg_);
        expected_count_ = pb.count();
    }

    ModelConfig cfg_;
    ParamStore<T> params_;
    EncoderParams<T> enc_;
    StyleParams<T> style_;
    BottleneckParams<T> bott_;
    DecoderParams<T> dec_;
    std::size_t expected_count_ = 0;
};

}  // namespace hmat
