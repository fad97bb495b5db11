#pragma once

// Executable table of the closed-form examples: each entry throws
// SelfTestFailure with a short reason when its expectation does not hold.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmat/commands.hpp"
#include "hmat/decoder.hpp"
#include "hmat/gradcheck.hpp"
#include "hmat/metrics.hpp"
#include "hmat/train.hpp"

namespace hmat {

struct SelfTestFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SelfTest {
    std::string module;
    std::string name;
    std::function<void()> run;
};

namespace selftest_detail {

inline void expect(bool ok, const std::string& what) {
    if (!ok) throw SelfTestFailure(what);
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <typename E, typename F>
void expect_throw(F&& f, const std::string& what) {
    try {
        f();
    } catch (const E&) {
        return;
    }
    throw SelfTestFailure(what);
}

/// Scratch directory removed on destruction.
class TempDir {
   public:
    explicit TempDir(const std::string& tag) {
        Rng r(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(
                                                   std::chrono::steady_clock::now().time_since_epoch().count()));
        path_ = std::filesystem::temp_directory_path() / ("hmat-" + tag + "-" + std::to_string(r.next() % 1000000007));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

   private:
    std::filesystem::path path_;
};

inline std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) { return checkpoint::read_bytes(p.string()); }

inline io::Image8 noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
    Rng r(seed);
    io::Image8 im{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
    for (auto& v : im.pixels) v = static_cast<std::uint8_t>(r.uniform_int(0, 255));
    return im;
}

}  // namespace selftest_detail

inline std::vector<SelfTest> selftest_table() {
    using namespace selftest_detail;
    using F = float;
    std::vector<SelfTest> t;
    auto add = [&](std::string m, std::string n, std::function<void()> f) { t.push_back({std::move(m), std::move(n), std::move(f)}); };

    // ------------------------------------------------------------ tensor-core
    add("tensor-core", "conv2d ones 3x3 pad 1: center 9, corner 4", [] {
        Tensor<F> x({1, 1, 3, 3}, 1), w({1, 1, 3, 3}, 1), b({1}, 0);
        auto y = ops::conv2d(x, w, b, 1, 1);
        expect(y[4] == 9 && y[0] == 4 && y[2] == 4 && y[6] == 4 && y[8] == 4, "unexpected conv values");
    });
    add("tensor-core", "conv2d identity 1x1 kernel", [] {
        Rng r(1);
        auto x = r.uniform_tensor<F>({1, 1, 4, 5}, -1, 1);
        expect(bit_equal(ops::conv2d(x, Tensor<F>({1, 1, 1, 1}, 1), Tensor<F>({1}, 0)), x), "output differs from input");
    });
    add("tensor-core", "linear identity weights", [] {
        Rng r(2);
        auto x = r.uniform_tensor<F>({3, 4}, -1, 1);
        Tensor<F> w({4, 4});
        for (std::size_t i = 0; i < 4; ++i) w.mutable_data()[i * 5] = 1;
        expect(bit_equal(ops::linear(x, w, Tensor<F>({4})), x), "y != x");
    });
    add("tensor-core", "linear x = 0 gives bias", [] {
        auto b = Tensor<F>::from({3}, {0.5f, -1.f, 2.f});
        auto y = ops::linear(Tensor<F>({2, 4}), Tensor<F>({3, 4}, 0.3f), b);
        for (std::size_t i = 0; i < 6; ++i) expect(y[i] == b[i % 3], "y != broadcast b");
    });
    add("tensor-core", "softmax [0,0] = [0.5,0.5]", [] {
        auto y = ops::softmax_lastdim(Tensor<F>::from({2}, {0, 0}));
        expect(y[0] == 0.5f && y[1] == 0.5f, "not uniform");
    });
    add("tensor-core", "softmax [0,-inf] = [1,0]", [] {
        auto y = ops::softmax_lastdim(Tensor<F>::from({2}, {0, -std::numeric_limits<F>::infinity()}));
        expect(y[0] == 1 && y[1] == 0, "sentinel not exact");
    });
    add("tensor-core", "softmax [1000,1000,1000] stable", [] {
        auto y = ops::softmax_lastdim(Tensor<F>::from({3}, {1000, 1000, 1000}));
        for (std::size_t i = 0; i < 3; ++i) expect(std::abs(y[i] - 1.f / 3) < 1e-7, "not 1/3");
    });
    add("tensor-core", "pools of all-ones", [] {
        Tensor<F> x({1, 1, 4, 4}, 1);
        const auto a = ops::avg_pool2(x), m = ops::min_pool2(x);
        for (F v : a.data()) expect(v == 1, "avg != 1");
        for (F v : m.data()) expect(v == 1, "min != 1");
    });
    add("tensor-core", "2x2 block [1,1,1,0]: avg 0.75, min 0", [] {
        auto x = Tensor<F>::from({1, 1, 2, 2}, {1, 1, 1, 0});
        expect(ops::avg_pool2(x)[0] == 0.75f && ops::min_pool2(x)[0] == 0, "wrong pooled values");
    });
    add("tensor-core", "gap of constant map", [] {
        auto y = ops::gap(Tensor<F>({2, 3, 4, 4}, 0.375f));
        for (F v : y.data()) expect(v == 0.375f, "gap != c");
    });
    add("tensor-core", "gap of 4x4 one-hot", [] {
        Tensor<F> x({1, 1, 4, 4});
        x.mutable_data()[5] = 1;
        expect(ops::gap(x)[0] == 1.f / 16, "gap != 1/16");
    });
    add("tensor-core", "grad of sum x^2 is 2x", [] {
        Rng r(3);
        auto x = r.uniform_tensor<F>({5}, -1, 1, true);
        ops::sum(ops::mul(x, x)).backward();
        auto g = x.grad();
        for (std::size_t i = 0; i < 5; ++i) expect(g[i] == 2 * x[i], "grad != 2x");
    });
    add("tensor-core", "grad of sum a*b wrt a is b", [] {
        Rng r(4);
        auto a = r.uniform_tensor<F>({6}, -1, 1, true), b = r.uniform_tensor<F>({6}, -1, 1);
        ops::sum(ops::mul(a, b)).backward();
        auto g = a.grad();
        for (std::size_t i = 0; i < 6; ++i) expect(g[i] == b[i], "grad != b");
    });
    add("tensor-core", "gradcheck of identity has deviation 0", [] {
        Rng r(5);
        auto rep = gradcheck([](const std::vector<Tensor<double>>& in) { return in[0]; },
                             {r.uniform_tensor<double>({4}, -1, 1)});
        expect(rep.passed && rep.max_error < 1e-9, "identity deviates");
    });

    // ------------------------------------------------------------ mask-engine
    add("mask-engine", "band [0,1] with zero strokes: all valid", [] {
        BrushConfig c;
        c.min_strokes = c.max_strokes = 0;
        auto m = generate_brush_mask(64, 64, CoverageBand(0.0, 1.0), 3, c);
        expect(m.coverage() == 0.0, "coverage != 0");
    });
    add("mask-engine", "brush mask deterministic per seed", [] {
        expect(generate_brush_mask(64, 48, CoverageBand::severe(), 9) ==
                   generate_brush_mask(64, 48, CoverageBand::severe(), 9),
               "masks differ");
    });
    add("mask-engine", "all-valid pyramid", [] {
        auto p = propagate_validity<F>(BinaryMask(32, 32), 3);
        for (const auto& l : p.levels)
            for (std::size_t i = 0; i < l.soft.size(); ++i) expect(l.soft[i] == 1 && l.hard[i] == 1, "not all valid");
    });
    add("mask-engine", "single zero pixel at 256x256 erodes to one zero per level", [] {
        BinaryMask m(256, 256);
        m.at(101, 77) = 0;
        auto p = propagate_validity<F>(m, 3);
        for (std::size_t l = 0; l <= 3; ++l) {
            std::size_t zeros = 0;
            for (F v : p.at(l).hard.data()) zeros += v == 0;
            expect(zeros == 1, "level " + std::to_string(l) + " has " + std::to_string(zeros) + " zeros");
        }
        expect(p.at(1).soft[(101 / 2) * 128 + 77 / 2] == 0.75f, "soft level 1 != 0.75");
    });
    add("mask-engine", "token validity of all-valid mask", [] {
        for (auto v : token_validity(propagate_validity<F>(BinaryMask(32, 32), 3), 3)) expect(v == 1, "invalid token");
    });
    add("mask-engine", "token validity of all-missing mask", [] {
        for (auto v : token_validity(propagate_validity<F>(BinaryMask(32, 32, 0), 3), 3)) expect(v == 0, "valid token");
    });
    add("mask-engine", "one valid pixel gives one valid token", [] {
        BinaryMask m(64, 64, 0);
        m.at(45, 19) = 1;
        auto v = token_validity(propagate_validity<F>(m, 3), 3);
        for (std::size_t i = 0; i < v.size(); ++i) expect(v[i] == (i == (45 / 8) * 8 + 19 / 8), "wrong token set");
    });
    add("mask-engine", "oracle: one valid token fills its 8x8 window", [] {
        std::vector<std::uint8_t> v(16 * 16, 0);
        v[3 * 16 + 5] = 1;
        auto out = dilate_validity_oracle(v, {16, 16, 8}, 1);
        for (std::size_t r = 0; r < 16; ++r)
            for (std::size_t c = 0; c < 16; ++c) expect(out[r * 16 + c] == (r < 8 && c < 8), "wrong dilation");
    });
    add("mask-engine", "oracle: zeros stay zeros", [] {
        for (auto x : dilate_validity_oracle(std::vector<std::uint8_t>(32 * 32, 0), {32, 32, 8}, 5))
            expect(x == 0, "became valid");
    });
    add("mask-engine", "all-valid mask: coverage 0, other", [] {
        BinaryMask m(32, 32);
        expect(coverage(m) == 0 && classify(m) == "other", "wrong class");
    });
    add("mask-engine", "checkerboard: coverage 0.5, other", [] {
        BinaryMask m(32, 32);
        for (std::size_t r = 0; r < 32; ++r)
            for (std::size_t c = 0; c < 32; ++c) m.at(r, c) = (r + c) % 2;
        expect(coverage(m) == 0.5 && classify(m) == "other", "wrong class");
    });

    // ------------------------------------------------------------ madf-encoder
    add("madf-encoder", "delta kernel with identity mixing gives leaky(x)", [] {
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 1);
        auto layer = MadfLayer<F>::build(pb, "l", 3, 3, 3, 1, 4);
        auto set = [&](const char* n, auto fn) {
            auto p = st.get(n);
            auto d = p.mutable_data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = fn(i);
        };
        set("l.phi2.w", [](std::size_t) { return 0.f; });
        set("l.phi2.b", [](std::size_t i) { return i == 4 ? 1.f : 0.f; });
        set("l.mix.w", [](std::size_t i) { return i % 4 == 0 ? 1.f : 0.f; });
        set("l.mix.b", [](std::size_t) { return 0.f; });
        Rng r(2);
        auto x = r.uniform_tensor<F>({1, 3, 6, 6}, -1, 1);
        auto mf6 = r.uniform_tensor<F>({1, 1, 6, 6}, 0, 1);
        auto y6 = madf_conv(x, mf6, layer);
        auto ref = ops::leaky_relu(x);
        for (std::size_t i = 0; i < ref.size(); ++i) expect(y6[i] == ref[i], "output != leaky(x)");
    });
    add("madf-encoder", "toy encoder on 32x32 gives 1x24x4x4", [] {
        Generator<F> g(ModelConfig::toy(), 1);
        auto pyr = propagate_validity<F>(BinaryMask(32, 32), 3);
        auto o = encode(Tensor<F>({1, 3, 32, 32}, 0.5f), pyr, g.encoder());
        expect(o.bottleneck.shape() == Shape{1, 24, 4, 4}, "bottleneck " + to_string(o.bottleneck.shape()));
    });

    // ------------------------------------------------------------ masked-transformer
    add("masked-transformer", "one valid key takes all attention", [] {
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 3);
        auto p = AttentionParams<F>::build(pb, "a", 8, 2, 0);
        Rng r(4);
        auto x = r.uniform_tensor<F>({1, 5, 8}, -1, 1);
        std::vector<std::uint8_t> v{0, 0, 1, 0, 0};
        auto res = masked_attention(x, v, 2, p);
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 5; ++j)
                    expect(res.weights[(h * 5 + i) * 5 + j] == (j == 2 ? 1.f : 0.f), "alpha not one-hot");
        // output_i = out-projection of V_{j*}, identical for every query
        auto vrow = ops::linear(ops::reshape(x, {5, 8}), p.v_w, p.v_b);
        std::vector<F> vj(vrow.data().begin() + 16, vrow.data().begin() + 24);
        auto proj = ops::linear(Tensor<F>::from({1, 8}, vj), p.out_w, p.out_b);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t c = 0; c < 8; ++c)
                expect(std::abs(res.out[i * 8 + c] - proj[c]) < 1e-6f, "output != projected V_j*");
    });
    add("masked-transformer", "identical keys give uniform attention", [] {
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 5);
        auto p = AttentionParams<F>::build(pb, "a", 4, 2, 2);
        Tensor<F> x({1, 4, 4}, 0.3f);
        auto res = masked_attention(x, std::vector<std::uint8_t>(4, 1), 2, p);
        for (F a : res.weights.data()) expect(std::abs(a - 0.25f) < 1e-7f, "alpha != 1/T");
    });
    auto block_setup = [] {
        auto cfg = ModelConfig::toy();
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 6);
        auto bp = BlockParams<F>::build(pb, "b", cfg);
        Rng r(7);
        auto s = r.normal_tensor<F>({1, cfg.style_dim});
        return std::make_tuple(cfg, st, bp, StyleVector<F>{s, s, s, s}, r.uniform_tensor<F>({1, 64, 24}, -1, 1));
    };
    add("masked-transformer", "all-valid block keeps all tokens valid", [block_setup] {
        auto [cfg, st, bp, s, x] = block_setup();
        std::vector<Tensor<F>> attn;
        auto out = transformer_block(TokenState<F>{x, std::vector<std::uint8_t>(64, 1), 8, 8}, s, 1, bp, cfg, &attn);
        for (auto v : out.v) expect(v == 1, "token became invalid");
        for (F a : attn[0].data()) expect(a > 0, "masked entry in unmasked attention");
    });
    add("masked-transformer", "all-invalid block is a passthrough", [block_setup] {
        auto [cfg, st, bp, s, x] = block_setup();
        auto out = transformer_block(TokenState<F>{x, std::vector<std::uint8_t>(64, 0), 8, 8}, s, 0, bp, cfg);
        expect(bit_equal(out.x, x), "X changed");
        for (auto v : out.v) expect(v == 0, "token became valid");
    });
    add("masked-transformer", "zero blocks is the identity", [] {
        auto cfg = ModelConfig::toy();
        cfg.blocks = 0;
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 1);
        auto bp = BottleneckParams<F>::build(pb, cfg);
        Rng r(8);
        auto f = r.uniform_tensor<F>({1, 24, 4, 4}, -1, 1);
        auto s = r.normal_tensor<F>({1, cfg.style_dim});
        auto out = bottleneck_forward(f, std::vector<std::uint8_t>(16, 1), StyleVector<F>{s, s, s, s}, bp, cfg);
        expect(bit_equal(out.features, f), "features changed");
    });

    // ------------------------------------------------------------ style-fusion
    auto style_setup = [](std::uint64_t seed) {
        auto cfg = ModelConfig::toy();
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, seed);
        return std::make_pair(cfg, StyleParams<F>::build(pb, cfg));
    };
    add("style-fusion", "constant features with averaging projection give constant s_img", [style_setup] {
        auto [cfg, p] = style_setup(1);
        for (auto& v : p.sem_w.mutable_data()) v = 1.f / static_cast<F>(cfg.dim());
        auto s = semantic_style(Tensor<F>({1, cfg.dim(), 4, 4}, 0.25f), p);
        for (F v : s.data()) expect(std::abs(v - 0.25f) < 1e-6f, "s_img not constant 0.25");
    });
    add("style-fusion", "z = 0 with zero biases gives s_latent = 0", [style_setup] {
        auto [cfg, p] = style_setup(2);
        const auto s = latent_style(Tensor<F>({2, cfg.z_dim}), p);
        for (F v : s.data()) expect(v == 0, "s_latent != 0");
    });
    add("style-fusion", "zero parts with zero biases give s = 0", [style_setup] {
        auto [cfg, p] = style_setup(3);
        auto s = fuse(Tensor<F>({1, cfg.style.img}), Tensor<F>({1, cfg.style.latent}), Tensor<F>({1, cfg.style.mask}), p);
        for (F v : s.s.data()) expect(v == 0, "s != 0");
    });
    auto head_setup = [] {
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 4);
        auto h = ModulationHead<F>::build(pb, "m", 3, 5);
        for (auto& v : h.gamma_w.mutable_data()) v = 0;
        for (auto& v : h.beta_w.mutable_data()) v = 0;
        Rng r(9);
        auto s = r.normal_tensor<F>({2, 5});
        return std::make_tuple(h, StyleVector<F>{s, s, s, s}, r.uniform_tensor<F>({2, 3, 4, 4}, -1, 1));
    };
    add("style-fusion", "gamma 1, beta 0 gives instance normalization", [head_setup] {
        auto [h, s, f] = head_setup();
        expect(bit_equal(modulate(f, s, h), ops::instance_norm(f, 1e-5f)), "output != normalize(f)");
    });
    add("style-fusion", "gamma 0 gives beta broadcast", [head_setup] {
        auto [h, s, f] = head_setup();
        for (auto& v : h.gamma_b.mutable_data()) v = 0;
        auto bb = h.beta_b.mutable_data();
        for (std::size_t i = 0; i < bb.size(); ++i) bb[i] = 0.1f * static_cast<F>(i + 1);
        auto y = modulate(f, s, h);
        for (std::size_t i = 0; i < y.size(); ++i) expect(y[i] == bb[(i / 16) % 3], "output depends on f");
    });

    // ------------------------------------------------------------ tf-decoder
    add("tf-decoder", "gate with all-ones mask returns S", [] {
        Rng r(1);
        auto d = r.uniform_tensor<F>({1, 2, 4, 4}, -1, 1), s = r.uniform_tensor<F>({1, 2, 4, 4}, -1, 1);
        expect(bit_equal(hard_gate_fuse(d, s, Tensor<F>({1, 1, 4, 4}, 1)), s), "F != S");
    });
    add("tf-decoder", "gate with all-zeros mask returns D", [] {
        Rng r(2);
        auto d = r.uniform_tensor<F>({1, 2, 4, 4}, -1, 1), s = r.uniform_tensor<F>({1, 2, 4, 4}, -1, 1);
        expect(bit_equal(hard_gate_fuse(d, s, Tensor<F>({1, 1, 4, 4}, 0)), d), "F != D");
    });
    add("tf-decoder", "full decoder maps 1x180x32x32 to 1x3x256x256 in [0,1]", [] {
        auto cfg = ModelConfig::full();
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 1);
        auto dp = DecoderParams<F>::build(pb, cfg);
        Rng r(3);
        auto pyr = propagate_validity<F>(generate_brush_mask(256, 256, CoverageBand::moderate(), 1), 3);
        auto s = r.normal_tensor<F>({1, cfg.style_dim});
        NoGradGuard ng;
        auto out = decode(r.uniform_tensor<F>({1, 180, 32, 32}, -1, 1),
                          {r.uniform_tensor<F>({1, 64, 128, 128}, -1, 1), r.uniform_tensor<F>({1, 128, 64, 64}, -1, 1)},
                          pyr, StyleVector<F>{s, s, s, s}, dp);
        expect(out.image.shape() == Shape{1, 3, 256, 256}, "shape " + to_string(out.image.shape()));
        for (F v : out.image.data()) expect(v >= 0 && v <= 1, "value outside [0,1]");
    });
    auto toy_decode = [](const BinaryMask& m) {
        Generator<F> g(ModelConfig::toy(), 2);
        Rng r(4);
        auto pyr = propagate_validity<F>(m, 3);
        auto s = r.normal_tensor<F>({1, g.config().style_dim});
        std::vector<Tensor<F>> skips{r.uniform_tensor<F>({1, 8, 16, 16}, -1, 1), r.uniform_tensor<F>({1, 16, 8, 8}, -1, 1)};
        auto out = decode(r.uniform_tensor<F>({1, 24, 4, 4}, -1, 1), skips, pyr, StyleVector<F>{s, s, s, s}, g.decoder());
        return std::make_pair(out, skips);
    };
    add("tf-decoder", "toy decoder gives 1x3x32x32", [toy_decode] {
        auto [out, skips] = toy_decode(generate_brush_mask(32, 32, CoverageBand::severe(), 5));
        expect(out.image.shape() == Shape{1, 3, 32, 32}, "shape " + to_string(out.image.shape()));
    });
    add("tf-decoder", "all-valid mask: fused features equal skips", [toy_decode] {
        auto [out, skips] = toy_decode(BinaryMask(32, 32));
        expect(bit_equal(out.fused[0], skips[1]) && bit_equal(out.fused[1], skips[0]), "fused != skip");
    });
    add("tf-decoder", "composite with all-ones mask returns x", [] {
        Rng r(5);
        auto x = r.uniform_tensor<F>({1, 3, 4, 4}, 0, 1), g = r.uniform_tensor<F>({1, 3, 4, 4}, 0, 1);
        expect(bit_equal(composite(x, Tensor<F>({1, 1, 4, 4}, 1), g), x), "x_out != x");
    });
    add("tf-decoder", "composite with all-zeros mask returns generated", [] {
        Rng r(6);
        auto x = r.uniform_tensor<F>({1, 3, 4, 4}, 0, 1), g = r.uniform_tensor<F>({1, 3, 4, 4}, 0, 1);
        expect(bit_equal(composite(x, Tensor<F>({1, 1, 4, 4}, 0), g), g), "x_out != x~");
    });
    add("tf-decoder", "generate with all-valid mask returns the input", [] {
        Generator<F> g(ModelConfig::toy(), 7);
        Rng r(8);
        auto x = r.uniform_tensor<F>({1, 3, 32, 32}, 0, 1);
        auto res = g.generate(x, Tensor<F>({1, 1, 32, 32}, 1), r.normal_tensor<F>({1, 8}));
        expect(bit_equal(res.restored, x), "x^ != x");
    });
    add("tf-decoder", "generate is deterministic", [] {
        auto run = [] {
            Generator<F> g(ModelConfig::toy(), 9);
            Rng r(10);
            auto x = r.uniform_tensor<F>({1, 3, 32, 32}, 0, 1);
            auto m = generate_brush_mask(32, 32, CoverageBand::severe(), 11).to_tensor<F>();
            return g.generate(x, m, r.normal_tensor<F>({1, 8})).restored;
        };
        expect(bit_equal(run(), run()), "runs differ");
    });
    add("tf-decoder", "hook altering a valid pixel is rejected", [] {
        Generator<F> g(ModelConfig::toy(), 12);
        Rng r(13);
        auto x = r.uniform_tensor<F>({1, 3, 32, 32}, 0, 1);
        auto m = generate_brush_mask(32, 32, CoverageBand::moderate(), 14);
        std::size_t valid = 0;
        while (!m.values()[valid]) ++valid;
        RefinementHook<F> bad = [valid](const Tensor<F>& img, const Tensor<F>&, const Tensor<F>&) {
            auto c = img.clone_leaf(false);
            c.mutable_data()[valid] += 0.01f;
            return c;
        };
        expect_throw<InvariantViolation>([&] { g.generate(x, m.to_tensor<F>(), r.normal_tensor<F>({1, 8}), bad); },
                                         "no InvariantViolation");
    });

    // ------------------------------------------------------------ metrics
    add("metrics", "psnr of identical images is inf", [] {
        Rng r(1);
        auto a = r.uniform_tensor<double>({3, 16, 16}, 0, 1);
        expect(std::isinf(metrics::psnr(a, a)), "psnr finite");
    });
    add("metrics", "psnr with offset 0.1 is 20 dB", [] {
        Rng r(2);
        auto a = r.uniform_tensor<double>({3, 16, 16}, 0.1, 0.8);
        auto b = a.clone_leaf(false);
        for (auto& v : b.mutable_data()) v += 0.1;
        expect(std::abs(metrics::psnr(a, b) - 20.0) < 1e-6, "psnr != 20");
    });
    add("metrics", "ssim of identical images is exactly 1", [] {
        Rng r(3);
        auto a = r.uniform_tensor<double>({3, 16, 16}, 0, 1);
        expect(metrics::ssim(a, a) == 1.0, "ssim != 1");
    });
    add("metrics", "ssim of constant 0 vs constant 1 is C1/(1+C1)", [] {
        const double c1 = 1e-4;
        expect(std::abs(metrics::ssim(Tensor<double>({3, 16, 16}, 0.0), Tensor<double>({3, 16, 16}, 1.0)) - c1 / (1 + c1)) <
                   1e-12,
               "wrong closed form");
    });
    add("metrics", "l1 of identical images is 0", [] {
        Tensor<double> a({3, 8, 8}, 0.4);
        expect(metrics::l1(a, a).value == 0, "l1 != 0");
    });
    add("metrics", "l1 with half the pixels off by 0.5 is 0.25", [] {
        Tensor<double> a({3, 8, 8}, 0.5);
        auto b = a.clone_leaf(false);
        auto d = b.mutable_data();
        for (std::size_t i = 0; i < d.size(); i += 2) d[i] += (i % 4 ? 0.5 : -0.5);
        expect(metrics::l1(a, b).value == 0.25, "l1 != 0.25");
    });

    // ------------------------------------------------------------ training
    add("training", "adam with zero gradient leaves parameters", [] {
        ParamStore<F> st;
        auto pb = ParamBuilder<F>::creating(st, 1);
        auto p = pb.param("w", {4});
        auto before = p.detach();
        AdamState s;
        adam_step(st, s, 2e-3);
        expect(bit_equal(p.detach(), before) && s.step == 1, "parameters moved or step not counted");
    });
    add("training", "l1 loss of x against itself is 0", [] {
        Rng r(2);
        auto x = r.uniform_tensor<F>({2, 3, 8, 8}, 0, 1);
        expect(l1_loss(x, x, Tensor<F>({2, 1, 8, 8}, 0)).item() == 0, "loss != 0");
    });
    add("training", "composite: valid pixels contribute nothing in full-image mode", [] {
        Rng r(3);
        auto x = r.uniform_tensor<double>({1, 3, 32, 32}, 0, 1), g = r.uniform_tensor<double>({1, 3, 32, 32}, 0, 1);
        auto mb = generate_brush_mask(32, 32, CoverageBand::severe(), 3);
        auto m = mb.to_tensor<double>();
        auto out = composite(x, m, g);
        const double holes = mb.coverage() * 1024;
        const double full = l1_loss(out, x, m, metrics::Region::Full).item() * 3 * 1024;
        const double miss = l1_loss(out, x, m, metrics::Region::Missing).item() * 3 * holes;
        expect(std::abs(full - miss) < 1e-9, "valid pixels contributed");
    });
    add("training", "zero steps leave the initialization", [] {
        Generator<F> init(ModelConfig::toy(), 4), g(ModelConfig::toy(), 4);
        TrainConfig c;
        c.steps = 0;
        train(g, synthetic_patches(2, 32, 1), c);
        expect(checkpoint::serialize(g.params()) == checkpoint::serialize(init.params()), "parameters changed");
    });
    add("training", "same config and seed give identical loss curves", [] {
        auto run = [] {
            Generator<F> g(ModelConfig::toy(), 5);
            TrainConfig c;
            c.steps = 3;
            c.batch = 2;
            c.seed = 6;
            return train(g, synthetic_patches(4, 32, 2), c);
        };
        expect(run() == run(), "curves differ");
    });

    // ------------------------------------------------------------ cli
    add("cli", "mask-gen with count 0 writes an empty manifest", [] {
        TempDir d("maskgen0");
        auto r = cmd::mask_gen(d.path(), 0, "moderate", 64, 64, 1);
        expect(r.files.empty() && file_bytes(d.path() / "manifest.csv").size() == std::string("filename,coverage,band\n").size(),
               "manifest not empty");
    });
    add("cli", "mask-gen twice gives identical files", [] {
        TempDir a("maskgenA"), b("maskgenB");
        auto ra = cmd::mask_gen(a.path(), 3, "severe", 64, 64, 7);
        cmd::mask_gen(b.path(), 3, "severe", 64, 64, 7);
        for (const auto& f : ra.files) expect(file_bytes(a.path() / f) == file_bytes(b.path() / f), f + " differs");
        expect(file_bytes(a.path() / "manifest.csv") == file_bytes(b.path() / "manifest.csv"), "manifest differs");
    });
    add("cli", "patchify 1024x768 by 256 gives 12 patches", [] {
        TempDir d("patch12");
        auto r = cmd::patchify(noise_image(1024, 768, 1), 256, d.path());
        expect(r.files.size() == 12 && r.cols == 4 && r.rows == 3, "wrong patch grid");
    });
    add("cli", "patchify 200x200 by 256 gives none", [] {
        TempDir d("patch0");
        expect(cmd::patchify(noise_image(200, 200, 2), 256, d.path()).files.empty(), "patches produced");
    });
    auto toy_ckpt = [](const std::filesystem::path& dir) {
        Generator<F> g(ModelConfig::toy(), 21);
        checkpoint::save((dir / "toy.hmat").string(), g.params());
        return cmd::load_generator(dir / "toy.hmat");
    };
    add("cli", "infer with all-valid mask reproduces the input bytes", [toy_ckpt] {
        TempDir d("infer1");
        auto img = noise_image(32, 32, 3);
        io::write_png((d.path() / "in.png").string(), img);
        auto g = toy_ckpt(d.path());
        cmd::infer(g, io::read_png((d.path() / "in.png").string(), 3), BinaryMask(32, 32), 1, d.path() / "out.png");
        expect(file_bytes(d.path() / "in.png") == file_bytes(d.path() / "out.png"), "output bytes differ");
    });
    add("cli", "infer twice gives identical bytes", [toy_ckpt] {
        TempDir d("infer2");
        auto g = toy_ckpt(d.path());
        auto img = noise_image(32, 32, 4);
        auto m = generate_brush_mask(32, 32, CoverageBand::severe(), 5);
        cmd::infer(g, img, m, 9, d.path() / "a.png");
        cmd::infer(g, img, m, 9, d.path() / "b.png");
        expect(file_bytes(d.path() / "a.png") == file_bytes(d.path() / "b.png"), "outputs differ");
    });
    add("cli", "infer rejects mismatched image and mask", [toy_ckpt] {
        TempDir d("infer3");
        auto g = toy_ckpt(d.path());
        expect_throw<DataError>([&] { cmd::infer(g, noise_image(32, 32, 5), BinaryMask(64, 64), 1, d.path() / "o.png"); },
                                "no DataError");
    });
    add("cli", "eval of identical pairs: psnr inf, ssim 1, l1 0", [] {
        TempDir d("eval");
        io::write_png((d.path() / "a.png").string(), noise_image(32, 32, 6));
        cmd::write_text(d.path() / "pairs.csv", "restored,reference\na.png,a.png\n");
        cmd::eval(d.path() / "pairs.csv", d.path() / "report.json");
        auto j = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(file_bytes(d.path() / "report.json").data()),
                                                   file_bytes(d.path() / "report.json").size()));
        const auto& p = j["pairs"][0];
        expect(p["psnr"] == "inf" && p["ssim"] == 1.0 && p["l1"] == 0.0 && p["fid"] == "n/a", "wrong pair metrics");
        expect(j["aggregate"]["psnr"] == "inf", "aggregate psnr not inf");
    });
    add("cli", "train config with lambda_adv = 1 is rejected", [] {
        expect_throw<ConfigError>([] { parse_run_config(std::string(R"({"train": {"lambda_adv": 1}})")); }, "no ConfigError");
    });
    return t;
}

}  // namespace hmat
