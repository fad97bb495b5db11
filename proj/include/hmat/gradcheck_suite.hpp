#pragma once

// Finite-difference checks of every differentiable operation and module, in
// wide precision on small shapes.

#include <functional>
#include <string>
#include <vector>

#include "hmat/decoder.hpp"
#include "hmat/gradcheck.hpp"
#include "hmat/madf.hpp"
#include "hmat/mask.hpp"
#include "hmat/ops.hpp"
#include "hmat/style.hpp"
#include "hmat/train.hpp"
#include "hmat/transformer.hpp"

namespace hmat {

struct GradcheckCase {
    std::string module;
    std::string name;
    std::function<GradcheckReport()> run;
};

namespace suite_detail {

using D = double;
using Inputs = std::vector<Tensor<D>>;

inline Tensor<D> rnd(Rng& r, Shape s, double lo = -1.0, double hi = 1.0) {
    return r.uniform_tensor<D>(std::move(s), lo, hi, true);
}

// Random magnitudes in [0.2, 1] with random sign: keeps |x| away from kinks.
inline Tensor<D> away_from_zero(Rng& r, Shape s) {
    Tensor<D> t(std::move(s), 0.0, true);
    for (auto& v : t.mutable_data()) v = r.uniform(0.2, 1.0) * (r.bernoulli(0.5) ? 1.0 : -1.0);
    return t;
}

inline Tensor<D> binary(Rng& r, Shape s, double p_one = 0.5) {
    Tensor<D> t(std::move(s));
    for (auto& v : t.mutable_data()) v = r.bernoulli(p_one) ? 1.0 : 0.0;
    return t;
}

// Zero-initialized biases put leaky-ReLU inputs at exactly 0 wherever the
// incoming features vanish (fully masked regions), which is a true kink.
// Checks run at a generic point instead: every parameter gets a small offset.
inline Inputs with_params(Inputs in, const ParamStore<D>& store, std::uint64_t seed = 7) {
    Rng r(seed);
    for (const auto& e : store) {
        auto t = e.second;
        for (auto& v : t.mutable_data()) v += r.uniform(-0.1, 0.1);
        in.push_back(t);
    }
    return in;
}

inline BinaryMask brush(std::size_t h, std::size_t w, std::uint64_t seed) {
    return generate_brush_mask(h, w, CoverageBand::moderate(), seed);
}

// C=8, 2 heads, 2 blocks, window 4 on an 8x8 token grid.
inline ModelConfig small_bottleneck_config() {
    auto c = ModelConfig::toy();
    c.channels = {8, 8, 8};
    c.style_dim = 6;
    return c;
}

inline StyleVector<D> random_style(Rng& r, std::size_t n, std::size_t dim) {
    auto s = rnd(r, {n, dim});
    return {s, s, s, s};
}

}  // namespace suite_detail

/// Every case builds its inputs from `seed`. Parameter-heavy cases probe
/// `entries` random entries per tensor.
inline std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed = 1, std::size_t entries = 6) {
    using namespace suite_detail;
    std::vector<GradcheckCase> cs;
    GradcheckOptions full;
    full.seed = seed;
    GradcheckOptions sub = full;
    sub.max_entries_per_input = entries;

    auto op = [&](std::string name, std::function<Inputs(Rng&)> make, std::function<Tensor<D>(const Inputs&)> f) {
        cs.push_back({"tensor-core", std::move(name), [make, f, full, seed] {
                          Rng r(seed);
                          return gradcheck(f, make(r), full);
                      }});
    };

    // -------------------------------------------------------- tensor-core
    op("identity", [](Rng& r) { return Inputs{rnd(r, {5})}; }, [](const Inputs& in) { return in[0]; });
    op("add", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4}), rnd(r, {2, 3, 4})}; },
       [](const Inputs& in) { return ops::add(in[0], in[1]); });
    op("sub", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4}), rnd(r, {2, 3, 4})}; },
       [](const Inputs& in) { return ops::sub(in[0], in[1]); });
    op("mul", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4}), rnd(r, {2, 3, 4})}; },
       [](const Inputs& in) { return ops::mul(in[0], in[1]); });
    op("mul_shared_input", [](Rng& r) { return Inputs{rnd(r, {3, 4})}; },
       [](const Inputs& in) { return ops::mul(in[0], in[0]); });
    op("scale", [](Rng& r) { return Inputs{rnd(r, {3, 4})}; }, [](const Inputs& in) { return ops::scale(in[0], 1.7); });
    op("leaky_relu", [](Rng& r) { return Inputs{away_from_zero(r, {3, 5})}; },
       [](const Inputs& in) { return ops::leaky_relu(in[0]); });
    op("sigmoid", [](Rng& r) { return Inputs{rnd(r, {3, 5}, -3, 3)}; },
       [](const Inputs& in) { return ops::sigmoid(in[0]); });
    op("abs", [](Rng& r) { return Inputs{away_from_zero(r, {3, 5})}; }, [](const Inputs& in) { return ops::abs(in[0]); });
    op("sum", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4})}; }, [](const Inputs& in) { return ops::sum(in[0]); });
    op("mean", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4})}; }, [](const Inputs& in) { return ops::mean(in[0]); });
    {
        Rng mr(seed + 100);
        auto m = binary(mr, {2, 1, 4, 4});
        op("mul_mask", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4, 4})}; },
           [m](const Inputs& in) { return ops::mul_mask(in[0], m); });
        op("select", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4, 4}), rnd(r, {2, 3, 4, 4})}; },
           [m](const Inputs& in) { return ops::select(m, in[0], in[1]); });
    }
    op("reshape", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4})}; },
       [](const Inputs& in) { return ops::reshape(in[0], {6, 4}); });
    op("permute", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4, 5})}; },
       [](const Inputs& in) { return ops::permute(in[0], {0, 2, 3, 1}); });
    op("concat_axis1", [](Rng& r) { return Inputs{rnd(r, {2, 3}), rnd(r, {2, 2}), rnd(r, {2, 4})}; },
       [](const Inputs& in) { return ops::concat<D>({in[0], in[1], in[2]}, 1); });
    op("concat_axis0", [](Rng& r) { return Inputs{rnd(r, {1, 3, 2}), rnd(r, {2, 3, 2})}; },
       [](const Inputs& in) { return ops::concat<D>({in[0], in[1]}, 0); });
    op("gather_rows", [](Rng& r) { return Inputs{rnd(r, {4, 3})}; },
       [](const Inputs& in) { return ops::gather_rows(in[0], {3, 0, 0, 2, 1, 3}, {2, 3, 3}); });
    op("add_leading_broadcast", [](Rng& r) { return Inputs{rnd(r, {3, 2, 4}), rnd(r, {2, 4})}; },
       [](const Inputs& in) { return ops::add_leading_broadcast(in[0], in[1]); });
    op("linear", [](Rng& r) { return Inputs{rnd(r, {3, 5}), rnd(r, {4, 5}), rnd(r, {4})}; },
       [](const Inputs& in) { return ops::linear(in[0], in[1], in[2]); });
    op("matmul", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4}), rnd(r, {2, 4, 5})}; },
       [](const Inputs& in) { return ops::matmul(in[0], in[1]); });
    op("matmul_trans_b", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4}), rnd(r, {2, 5, 4})}; },
       [](const Inputs& in) { return ops::matmul(in[0], in[1], true); });
    op("conv2d_k3_s1", [](Rng& r) { return Inputs{rnd(r, {2, 3, 5, 6}), rnd(r, {4, 3, 3, 3}), rnd(r, {4})}; },
       [](const Inputs& in) { return ops::conv2d(in[0], in[1], in[2], 1, 1); });
    op("conv2d_k3_s2", [](Rng& r) { return Inputs{rnd(r, {1, 2, 6, 6}), rnd(r, {3, 2, 3, 3}), rnd(r, {3})}; },
       [](const Inputs& in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); });
    op("conv2d_k1", [](Rng& r) { return Inputs{rnd(r, {1, 3, 4, 4}), rnd(r, {2, 3, 1, 1}), rnd(r, {2})}; },
       [](const Inputs& in) { return ops::conv2d(in[0], in[1], in[2], 1, 0); });
    op("unfold_s1", [](Rng& r) { return Inputs{rnd(r, {1, 2, 4, 5})}; },
       [](const Inputs& in) { return ops::unfold(in[0], 3, 1, 1); });
    op("unfold_s2", [](Rng& r) { return Inputs{rnd(r, {1, 1, 6, 6})}; },
       [](const Inputs& in) { return ops::unfold(in[0], 3, 2, 1); });
    op("dynamic_depthwise_conv_s1", [](Rng& r) { return Inputs{rnd(r, {1, 2, 4, 5}), rnd(r, {1, 9, 4, 5})}; },
       [](const Inputs& in) { return ops::dynamic_depthwise_conv(in[0], in[1], 3, 1, 1); });
    op("dynamic_depthwise_conv_s2", [](Rng& r) { return Inputs{rnd(r, {2, 2, 6, 6}), rnd(r, {2, 9, 3, 3})}; },
       [](const Inputs& in) { return ops::dynamic_depthwise_conv(in[0], in[1], 3, 2, 1); });
    op("avg_pool2", [](Rng& r) { return Inputs{rnd(r, {2, 2, 4, 6})}; },
       [](const Inputs& in) { return ops::avg_pool2(in[0]); });
    op("min_pool2", [](Rng& r) { return Inputs{rnd(r, {2, 2, 4, 6})}; },
       [](const Inputs& in) { return ops::min_pool2(in[0]); });
    op("upsample_nearest2", [](Rng& r) { return Inputs{rnd(r, {1, 2, 3, 2})}; },
       [](const Inputs& in) { return ops::upsample_nearest2(in[0]); });
    op("gap", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4, 4})}; }, [](const Inputs& in) { return ops::gap(in[0]); });
    op("instance_norm", [](Rng& r) { return Inputs{rnd(r, {2, 3, 4, 4})}; },
       [](const Inputs& in) { return ops::instance_norm(in[0], 1e-5); });
    op("layer_norm", [](Rng& r) { return Inputs{rnd(r, {2, 3, 6})}; },
       [](const Inputs& in) { return ops::layer_norm(in[0]); });
    op("layer_norm_affine", [](Rng& r) { return Inputs{rnd(r, {2, 3, 6}), rnd(r, {6}), rnd(r, {6})}; },
       [](const Inputs& in) { return ops::layer_norm(in[0], in[1], in[2]); });
    op("channel_affine_axis1", [](Rng& r) { return Inputs{rnd(r, {2, 3, 2, 2}), rnd(r, {2, 3}), rnd(r, {2, 3})}; },
       [](const Inputs& in) { return ops::channel_affine(in[0], in[1], in[2], 1); });
    op("channel_affine_axis2", [](Rng& r) { return Inputs{rnd(r, {2, 5, 3}), rnd(r, {2, 3}), rnd(r, {2, 3})}; },
       [](const Inputs& in) { return ops::channel_affine(in[0], in[1], in[2], 2); });
    op("softmax_lastdim", [](Rng& r) { return Inputs{rnd(r, {3, 5}, -3, 3)}; },
       [](const Inputs& in) { return ops::softmax_lastdim(in[0]); });
    {
        Rng vr(seed + 200);
        std::vector<std::uint8_t> valid(2 * 4);
        for (auto& v : valid) v = vr.bernoulli(0.5);
        valid[0] = 1;
        std::fill(valid.begin() + 4, valid.end(), 0);  // second window: no valid key
        op("mask_keys_softmax", [](Rng& r) { return Inputs{rnd(r, {2, 2, 4, 4}, -2, 2)}; },
           [valid](const Inputs& in) { return ops::softmax_lastdim(ops::mask_keys(in[0], valid)); });
    }

    // -------------------------------------------------------- madf-encoder
    cs.push_back({"madf-encoder", "predict_kernels", [=] {
                      Rng r(seed);
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto layer = MadfLayer<D>::build(pb, "l", 2, 3, 3, 1, 4);
                      auto mfeat = rnd(r, {1, 1, 4, 4}, 0, 1);
                      return gradcheck([&](const Inputs& in) { return predict_kernels(in[0], layer); },
                                       with_params({mfeat}, st), full);
                  }});
    for (std::size_t stride : {1, 2}) {
        cs.push_back({"madf-encoder", "madf_conv_s" + std::to_string(stride), [=] {
                          Rng r(seed);
                          ParamStore<D> st;
                          auto pb = ParamBuilder<D>::creating(st, seed);
                          auto layer = MadfLayer<D>::build(pb, "l", 2, 3, 3, stride, 4);
                          auto x = rnd(r, {1, 2, 4, 4});
                          auto mfeat = rnd(r, {1, 1, 4, 4}, 0, 1);
                          return gradcheck([&](const Inputs& in) { return madf_conv(in[0], in[1], layer); },
                                           with_params({x, mfeat}, st), full);
                      }});
    }
    cs.push_back({"madf-encoder", "encode", [=] {
                      Rng r(seed);
                      auto cfg = ModelConfig::toy();
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto enc = EncoderParams<D>::build(pb, cfg);
                      auto pyr = propagate_validity<D>(brush(32, 32, seed), 3);
                      auto x = rnd(r, {1, 3, 32, 32}, 0, 1);
                      return gradcheck(
                          [&](const Inputs& in) {
                              auto o = encode(in[0], pyr, enc);
                              return ops::concat<D>({ops::reshape(o.skips[0], {1, o.skips[0].size()}),
                                                     ops::reshape(o.skips[1], {1, o.skips[1].size()}),
                                                     ops::reshape(o.bottleneck, {1, o.bottleneck.size()})},
                                                    1);
                          },
                          with_params({x}, st), sub);
                  }});

    // -------------------------------------------------------- masked-transformer
    cs.push_back({"masked-transformer", "masked_attention", [=] {
                      Rng r(seed);
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto p = AttentionParams<D>::build(pb, "a", 4, 2, 2);
                      auto rb = st.get("a.rel_bias");
                      for (auto& v : rb.mutable_data()) v = r.uniform(-0.5, 0.5);
                      std::vector<std::uint8_t> valid{1, 0, 1, 0, 0, 0, 0, 0, 1, 1, 1, 1};
                      auto x = rnd(r, {3, 4, 4});
                      return gradcheck([&](const Inputs& in) { return masked_attention(in[0], valid, 2, p).out; },
                                       with_params({x}, st), full);
                  }});
    cs.push_back({"masked-transformer", "masked_attention_uneven_heads", [=] {
                      Rng r(seed);
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto p = AttentionParams<D>::build(pb, "a", 5, 2, 0);
                      std::vector<std::uint8_t> valid{0, 1, 1, 1, 0, 1};
                      auto x = rnd(r, {2, 3, 5});
                      return gradcheck([&](const Inputs& in) { return masked_attention(in[0], valid, 2, p).out; },
                                       with_params({x}, st), full);
                  }});
    cs.push_back({"masked-transformer", "transformer_block", [=] {
                      Rng r(seed);
                      auto cfg = small_bottleneck_config();
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto bp = BlockParams<D>::build(pb, "b", cfg);
                      auto x = rnd(r, {1, 64, 8});
                      auto s = rnd(r, {1, cfg.style_dim});
                      std::vector<std::uint8_t> v(64, 0);
                      v[9] = v[40] = 1;
                      return gradcheck(
                          [&](const Inputs& in) {
                              StyleVector<D> sv{in[1], in[1], in[1], in[1]};
                              return transformer_block(TokenState<D>{in[0], v, 8, 8}, sv, 1, bp, cfg).x;
                          },
                          with_params({x, s}, st), sub);
                  }});
    cs.push_back({"masked-transformer", "bottleneck_forward", [=] {
                      Rng r(seed);
                      auto cfg = small_bottleneck_config();
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto bp = BottleneckParams<D>::build(pb, cfg);
                      auto f = rnd(r, {1, 8, 8, 8});
                      auto s = rnd(r, {1, cfg.style_dim});
                      std::vector<std::uint8_t> v(64, 0);
                      v[0] = v[27] = v[50] = 1;
                      return gradcheck(
                          [&](const Inputs& in) {
                              StyleVector<D> sv{in[1], in[1], in[1], in[1]};
                              return bottleneck_forward(in[0], v, sv, bp, cfg).features;
                          },
                          with_params({f, s}, st), sub);
                  }});

    // -------------------------------------------------------- style-fusion
    auto style_case = [&](std::string name, std::function<Tensor<D>(const Inputs&, const StyleParams<D>&)> f,
                          std::function<Inputs(Rng&, const ModelConfig&)> make) {
        cs.push_back({"style-fusion", std::move(name), [=] {
                          Rng r(seed);
                          auto cfg = ModelConfig::toy();
                          ParamStore<D> st;
                          auto pb = ParamBuilder<D>::creating(st, seed);
                          auto sp = StyleParams<D>::build(pb, cfg);
                          return gradcheck([&](const Inputs& in) { return f(in, sp); }, with_params(make(r, cfg), st),
                                           sub);
                      }});
    };
    style_case("semantic_style", [](const Inputs& in, const StyleParams<D>& p) { return semantic_style(in[0], p); },
               [](Rng& r, const ModelConfig& c) { return Inputs{rnd(r, {2, c.dim(), 4, 4})}; });
    style_case("latent_style", [](const Inputs& in, const StyleParams<D>& p) { return latent_style(in[0], p); },
               [](Rng& r, const ModelConfig& c) { return Inputs{rnd(r, {2, c.z_dim})}; });
    style_case("mask_style", [](const Inputs& in, const StyleParams<D>& p) { return mask_style(in[0], p); },
               [](Rng& r, const ModelConfig&) { return Inputs{rnd(r, {1, 1, 16, 16}, 0, 1)}; });
    style_case("fuse", [](const Inputs& in, const StyleParams<D>& p) { return fuse(in[0], in[1], in[2], p).s; },
               [](Rng& r, const ModelConfig& c) {
                   return Inputs{rnd(r, {2, c.style.img}), rnd(r, {2, c.style.latent}), rnd(r, {2, c.style.mask})};
               });
    cs.push_back({"style-fusion", "modulate", [=] {
                      Rng r(seed);
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto head = ModulationHead<D>::build(pb, "m", 3, 5);
                      auto f = rnd(r, {2, 3, 4, 4});
                      auto s = rnd(r, {2, 5});
                      return gradcheck(
                          [&](const Inputs& in) { return modulate(in[0], StyleVector<D>{in[1], in[1], in[1], in[1]}, head); },
                          with_params({f, s}, st), full);
                  }});

    // -------------------------------------------------------- tf-decoder
    cs.push_back({"tf-decoder", "hard_gate_fuse", [=] {
                      Rng r(seed);
                      auto m = binary(r, {1, 1, 4, 4});
                      return gradcheck([m](const Inputs& in) { return hard_gate_fuse(in[0], in[1], m); },
                                       {rnd(r, {1, 3, 4, 4}), rnd(r, {1, 3, 4, 4})}, full);
                  }});
    cs.push_back({"tf-decoder", "composite", [=] {
                      Rng r(seed);
                      auto m = binary(r, {1, 1, 4, 4});
                      return gradcheck([m](const Inputs& in) { return composite(in[0], m, in[1]); },
                                       {rnd(r, {1, 3, 4, 4}), rnd(r, {1, 3, 4, 4})}, full);
                  }});
    cs.push_back({"tf-decoder", "decode", [=] {
                      Rng r(seed);
                      auto cfg = ModelConfig::toy();
                      ParamStore<D> st;
                      auto pb = ParamBuilder<D>::creating(st, seed);
                      auto dp = DecoderParams<D>::build(pb, cfg);
                      auto pyr = propagate_validity<D>(brush(32, 32, seed), 3);
                      auto fg = rnd(r, {1, cfg.channels[2], 4, 4});
                      auto s1 = rnd(r, {1, cfg.channels[0], 16, 16});
                      auto s2 = rnd(r, {1, cfg.channels[1], 8, 8});
                      auto s = rnd(r, {1, cfg.style_dim});
                      return gradcheck(
                          [&](const Inputs& in) {
                              StyleVector<D> sv{in[3], in[3], in[3], in[3]};
                              return decode(in[0], {in[1], in[2]}, pyr, sv, dp).image;
                          },
                          with_params({fg, s1, s2, s}, st), sub);
                  }});

    // -------------------------------------------------------- training
    for (auto region : {metrics::Region::Missing, metrics::Region::Full}) {
        cs.push_back({"training", region == metrics::Region::Missing ? "l1_loss_missing" : "l1_loss_full", [=] {
                          Rng r(seed);
                          auto m = binary(r, {2, 1, 4, 4});
                          auto x = rnd(r, {2, 3, 4, 4});
                          auto y = x.detach();
                          auto d = y.mutable_data();
                          for (std::size_t i = 0; i < d.size(); ++i) d[i] += r.uniform(0.2, 1.0) * (r.bernoulli(0.5) ? 1 : -1);
                          return gradcheck([&](const Inputs& in) { return l1_loss(in[0], y, m, region); }, {x}, full);
                      }});
    }
    cs.push_back({"training", "generator_l1_end_to_end", [=] {
                      Rng r(seed);
                      Generator<D> g(ModelConfig::toy(), seed);
                      auto m = brush(32, 32, seed + 1).to_tensor<D>();
                      auto x = rnd(r, {1, 3, 32, 32}, 0, 1);
                      auto z = rnd(r, {1, g.config().z_dim});
                      auto target = r.uniform_tensor<D>({1, 3, 32, 32}, 0, 1);
                      return gradcheck(
                          [&](const Inputs& in) {
                              auto res = g.generate(in[0], m, in[1]);
                              return l1_loss(res.restored, target, m);
                          },
                          with_params({x, z}, g.params()), sub);
                  }});
    return cs;
}

}  // namespace hmat
