#include "support.hpp"

using namespace hmat;
using testing_support::bit_equal;

namespace {

AttentionParams<double> attention(ParamStore<double>& st, std::size_t dim, std::size_t heads, std::size_t window,
                                  std::uint64_t seed) {
    auto pb = ParamBuilder<double>::creating(st, seed);
    auto p = AttentionParams<double>::build(pb, "a", dim, heads, window);
    if (window) {
        Rng r(seed + 1);
        for (auto& v : p.rel_bias.mutable_data()) v = r.uniform(-1, 1);
    }
    return p;
}

ModelConfig small_config(std::size_t window) {
    auto cfg = ModelConfig::toy();
    cfg.channels = {8, 8, 16};
    cfg.heads = 2;
    cfg.window = window;
    cfg.blocks = 5;
    return cfg;
}

StyleVector<float> random_style(std::size_t n, std::size_t dim, Rng& r) {
    auto s = r.normal_tensor<float>({n, dim});
    return {s, s, s, s};
}

}  // namespace

TEST(MaskedAttention, InvalidKeysReceiveExactlyZeroMassAndRowsSumToOne) {
    Rng r(1);
    ParamStore<double> st;
    const auto p = attention(st, 8, 2, 3, 2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t B = 3, Tn = 9;
        auto x = r.uniform_tensor<double>({B, Tn, 8}, -2, 2);
        std::vector<std::uint8_t> v(B * Tn);
        for (auto& b : v) b = r.bernoulli(0.4);
        const auto res = masked_attention(x, v, 2, p);
        for (std::size_t b = 0; b < B; ++b) {
            bool any = false;
            for (std::size_t j = 0; j < Tn; ++j) any |= v[b * Tn + j] != 0;
            if (!any) continue;
            for (std::size_t h = 0; h < 2; ++h)
                for (std::size_t i = 0; i < Tn; ++i) {
                    double s = 0;
                    for (std::size_t j = 0; j < Tn; ++j) {
                        const double a = res.weights[((b * 2 + h) * Tn + i) * Tn + j];
                        if (!v[b * Tn + j]) {
                            EXPECT_EQ(a, 0.0);
                        }
                        s += a;
                    }
                    EXPECT_NEAR(s, 1.0, 1e-6);
                }
        }
    }
}

TEST(MaskedAttention, AllInvalidWindowIsBitwisePassthrough) {
    Rng r(3);
    ParamStore<double> st;
    const auto p = attention(st, 8, 4, 2, 4);
    auto x = r.uniform_tensor<double>({2, 4, 8}, -1, 1);
    const auto res = masked_attention(x, std::vector<std::uint8_t>{0, 0, 0, 0, 1, 0, 0, 0}, 4, p);
    for (std::size_t i = 0; i < 32; ++i) EXPECT_EQ(res.out[i], x[i]);
}

TEST(MaskedAttention, IndivisibleWidthRoundsHeadDimUp) {
    ParamStore<double> st;
    const auto p = attention(st, 10, 4, 0, 1);
    EXPECT_EQ(p.q_w.shape(), (Shape{12, 10}));
    EXPECT_EQ(p.out_w.shape(), (Shape{10, 12}));
    Rng r(2);
    const auto res = masked_attention(r.uniform_tensor<double>({1, 3, 10}, -1, 1), std::vector<std::uint8_t>(3, 1), 4, p);
    EXPECT_EQ(res.out.shape(), (Shape{1, 3, 10}));
    EXPECT_EQ(head_dim(180, 8), 23u);
    EXPECT_EQ(head_dim(16, 2), 8u);
}

TEST(MaskedAttention, HeadCountMustMatchProjectionsAndWidth) {
    ParamStore<double> st;
    const auto p = attention(st, 6, 2, 0, 1);
    EXPECT_THROW(masked_attention(Tensor<double>({1, 3, 6}), std::vector<std::uint8_t>(3, 1), 4, p), ShapeError);
    EXPECT_THROW(masked_attention(Tensor<double>({1, 3, 6}), std::vector<std::uint8_t>(3, 1), 0, p), ShapeError);
    EXPECT_THROW(masked_attention(Tensor<double>({1, 3, 6}), std::vector<std::uint8_t>(3, 1), 7, p), ShapeError);
}

TEST(MaskedAttention, PermutingTokensPermutesOutputsWithoutPositionBias) {
    Rng r(5);
    ParamStore<double> st;
    const auto p = attention(st, 8, 2, 0, 6);
    const std::size_t Tn = 6;
    auto x = r.uniform_tensor<double>({1, Tn, 8}, -1, 1);
    std::vector<std::uint8_t> v{1, 0, 1, 1, 0, 1};
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    std::vector<double> xp(Tn * 8);
    std::vector<std::uint8_t> vp(Tn);
    for (std::size_t i = 0; i < Tn; ++i) {
        vp[i] = v[perm[i]];
        for (std::size_t c = 0; c < 8; ++c) xp[i * 8 + c] = x[perm[i] * 8 + c];
    }
    const auto a = masked_attention(x, v, 2, p).out;
    const auto b = masked_attention(Tensor<double>::from({1, Tn, 8}, xp), vp, 2, p).out;
    for (std::size_t i = 0; i < Tn; ++i)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(b[i * 8 + c], a[perm[i] * 8 + c], 1e-12);
}

TEST(TransformerBlock, ValidityIsMonotoneAndMatchesTheDilationOracleEveryBlock) {
    const auto cfg = small_config(8);
    ParamStore<float> st;
    auto pb = ParamBuilder<float>::creating(st, 9);
    const auto bp = BottleneckParams<float>::build(pb, cfg);
    Rng r(10);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::uint8_t> v(32 * 32, 0);
        v[r.uniform_int(0, 1023)] = 1;
        NoGradGuard ng;
        const auto out = bottleneck_forward(r.uniform_tensor<float>({1, 16, 32, 32}, -1, 1), v,
                                            random_style(1, cfg.style_dim, r), bp, cfg);
        ASSERT_EQ(out.validity.size(), 5u);
        auto prev = v;
        for (std::size_t b = 0; b < 5; ++b) {
            EXPECT_EQ(out.validity[b], dilate_validity_oracle(v, {32, 32, 8}, b + 1)) << "block " << b;
            for (std::size_t i = 0; i < v.size(); ++i) EXPECT_GE(out.validity[b][i], prev[i]);
            prev = out.validity[b];
        }
    }
}

TEST(TransformerBlock, TokensOfDeadWindowsPassThroughBothSublayers) {
    const auto cfg = small_config(4);
    ParamStore<float> st;
    auto pb = ParamBuilder<float>::creating(st, 11);
    const auto bp = BlockParams<float>::build(pb, "b", cfg);
    Rng r(12);
    auto x = r.uniform_tensor<float>({1, 64, 16}, -1, 1);
    std::vector<std::uint8_t> v(64, 0);
    v[0] = 1;  // only the top-left window of the unshifted partition is alive
    const auto out = transformer_block(TokenState<float>{x, v, 8, 8}, random_style(1, cfg.style_dim, r), 0, bp, cfg);
    for (std::size_t t = 0; t < 64; ++t) {
        const bool alive = t / 8 < 4 && t % 8 < 4;
        EXPECT_EQ(out.v[t], alive);
        bool same = true;
        for (std::size_t c = 0; c < 16; ++c) same &= out.x[t * 16 + c] == x[t * 16 + c];
        EXPECT_EQ(same, !alive) << "token " << t;
    }
}

TEST(Bottleneck, FullScaleKeepsShapeOver1024Tokens) {
    const auto cfg = ModelConfig::full();
    ParamStore<float> st;
    auto pb = ParamBuilder<float>::creating(st, 13);
    const auto bp = BottleneckParams<float>::build(pb, cfg);
    Rng r(14);
    NoGradGuard ng;
    const auto f = r.uniform_tensor<float>({1, 180, 32, 32}, -1, 1);
    const auto out = bottleneck_forward(f, std::vector<std::uint8_t>(1024, 1), random_style(1, 256, r), bp, cfg);
    EXPECT_EQ(out.features.shape(), (Shape{1, 180, 32, 32}));
    EXPECT_EQ(out.validity.size(), 5u);
    EXPECT_EQ(out.validity.back().size(), 1024u);
    EXPECT_FALSE(bit_equal(out.features, f));
}

TEST(Bottleneck, RejectsWindowNotDividingGrid) {
    auto cfg = small_config(3);
    ParamStore<float> st;
    auto pb = ParamBuilder<float>::creating(st, 15);
    const auto bp = BottleneckParams<float>::build(pb, cfg);
    Rng r(16);
    EXPECT_THROW(bottleneck_forward(Tensor<float>({1, 16, 4, 4}), std::vector<std::uint8_t>(16, 1),
                                    random_style(1, cfg.style_dim, r), bp, cfg),
                 ShapeError);
}
