#include <cmath>

#include "support.hpp"

using namespace hmat;
using testing_support::bit_equal;

namespace {

double distance(const Tensor<float>& a, const Tensor<float>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * static_cast<double>(a[i] - b[i]);
    return std::sqrt(s);
}

StyleParams<float> full_style(const std::string& preset, ParamStore<float>& st, std::uint64_t seed = 1) {
    auto pb = ParamBuilder<float>::creating(st, seed);
    return StyleParams<float>::build(pb, ModelConfig::full(preset));
}

// Random nonzero biases so that no branch is trivially linear through 0.
void randomize_biases(ParamStore<float>& st, std::uint64_t seed) {
    Rng r(seed);
    for (auto& [name, t] : st)
        if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0)
            for (auto& v : t.mutable_data()) v = static_cast<float>(r.uniform(-0.5, 0.5));
}

BinaryMask blotch(std::size_t cy, std::size_t cx) {
    BinaryMask m(64, 64);
    for (std::size_t r = cy; r < cy + 10; ++r)
        for (std::size_t c = cx; c < cx + 10; ++c) m.at(r, c) = 0;
    return m;
}

BinaryMask crack(std::size_t row) {
    BinaryMask m(64, 64);
    for (std::size_t c = 0; c < 64; ++c)
        for (std::size_t r = row; r < row + 2; ++r) m.at(r, c) = 0;
    return m;
}

}  // namespace

TEST(StylePresets, DimensionsMatchTheCapacityTable) {
    struct Row {
        const char* name;
        std::size_t img, latent, mask, concat;
    };
    for (const auto& row : {Row{"Baseline", 360, 180, 64, 604}, Row{"EqualCapacity", 180, 180, 180, 540},
                            Row{"HeavySemanticBias", 360, 64, 16, 440}}) {
        ParamStore<float> st;
        const auto p = full_style(row.name, st);
        EXPECT_EQ(p.dims.img, row.img) << row.name;
        EXPECT_EQ(p.dims.latent, row.latent) << row.name;
        EXPECT_EQ(p.dims.mask, row.mask) << row.name;
        EXPECT_EQ(p.dims.concat(), row.concat) << row.name;
        EXPECT_EQ(p.sem_w.shape(), (Shape{row.img, 180})) << row.name;
        EXPECT_EQ(p.lat1_w.shape(), (Shape{row.latent, 64})) << row.name;
        EXPECT_EQ(p.lat2_w.shape(), (Shape{row.latent, row.latent})) << row.name;
        EXPECT_EQ(p.shape_fc_w.shape(), (Shape{row.mask, 32})) << row.name;
        EXPECT_EQ(p.fuse1_w.shape(), (Shape{256, row.concat})) << row.name;
        EXPECT_EQ(p.fuse2_w.shape(), (Shape{256, 256})) << row.name;
    }
    EXPECT_THROW(StyleDims::preset("Wide"), ConfigError);
}

TEST(StyleFusion, BaselineOutputsHaveTheConfiguredWidths) {
    ParamStore<float> st;
    const auto p = full_style("Baseline", st);
    Rng r(2);
    NoGradGuard ng;
    const auto s_img = semantic_style(r.uniform_tensor<float>({2, 180, 4, 4}, -1, 1), p);
    const auto s_lat = latent_style(r.normal_tensor<float>({2, 64}), p);
    const auto masks = testing_support::stack_masks<float>({blotch(3, 4), crack(30)});
    const auto s_mask = mask_style(masks, p);
    EXPECT_EQ(s_img.shape(), (Shape{2, 360}));
    EXPECT_EQ(s_lat.shape(), (Shape{2, 180}));
    EXPECT_EQ(s_mask.shape(), (Shape{2, 64}));
    const auto s = fuse(s_img, s_lat, s_mask, p);
    EXPECT_EQ(s.s.shape(), (Shape{2, 256}));
    EXPECT_TRUE(bit_equal(s.s_img, s_img));
    EXPECT_TRUE(bit_equal(s.s_latent, s_lat));
    EXPECT_TRUE(bit_equal(s.s_mask, s_mask));
}

TEST(StyleFusion, FuseShapeDependsOnlyOnDims) {
    ParamStore<float> st;
    const auto p = full_style("EqualCapacity", st);
    Rng r(3);
    NoGradGuard ng;
    for (double scale : {0.0, 1.0, 100.0}) {
        const auto s = fuse(r.uniform_tensor<float>({1, 180}, -scale, scale), r.uniform_tensor<float>({1, 180}, -scale, scale),
                            r.uniform_tensor<float>({1, 180}, -scale, scale), p);
        EXPECT_EQ(s.s.shape(), (Shape{1, 256}));
    }
    EXPECT_THROW(fuse(Tensor<float>({1, 360}), Tensor<float>({1, 180}), Tensor<float>({1, 180}), p), ShapeError);
}

TEST(LatentStyle, DifferentLatentsGiveDifferentCodes) {
    ParamStore<float> st;
    const auto p = full_style("Baseline", st, 4);
    Rng r(5);
    NoGradGuard ng;
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = latent_style(r.normal_tensor<float>({1, 64}), p);
        const auto b = latent_style(r.normal_tensor<float>({1, 64}), p);
        EXPECT_GT(distance(a, b), 0.0);
    }
}

TEST(MaskStyle, AllValidAndAllMissingMasksAreDistinguished) {
    ParamStore<float> st;
    const auto p = full_style("Baseline", st, 6);
    randomize_biases(st, 7);
    NoGradGuard ng;
    const auto a = mask_style(BinaryMask(64, 64).to_tensor<float>(), p);
    const auto b = mask_style(BinaryMask(64, 64, 0).to_tensor<float>(), p);
    EXPECT_GT(distance(a, b), 0.0);
}

// Characterization at fixed parameters: moving a blotch a few pixels should
// perturb the mask code less than turning it into a crack.
TEST(MaskStyle, TranslationMovesTheCodeLessThanShapeReplacement) {
    ParamStore<float> st;
    const auto p = full_style("Baseline", st, 8);
    randomize_biases(st, 9);
    NoGradGuard ng;
    const auto base = mask_style(blotch(20, 20).to_tensor<float>(), p);
    const auto moved = mask_style(blotch(24, 22).to_tensor<float>(), p);
    const auto replaced = mask_style(crack(24).to_tensor<float>(), p);
    EXPECT_LT(distance(base, moved), distance(base, replaced));
}

TEST(Modulate, OutputHasPerChannelStatisticsGammaAndBeta) {
    ParamStore<float> st;
    auto pb = ParamBuilder<float>::creating(st, 10);
    const auto head = ModulationHead<float>::build(pb, "m", 4, 6);
    Rng r(11);
    const auto sv = r.normal_tensor<float>({2, 6});
    const StyleVector<float> s{sv, sv, sv, sv};
    const auto f = r.uniform_tensor<float>({2, 4, 8, 8}, -3, 5);
    const auto y = modulate(f, s, head);
    const auto g = head.gamma(s), b = head.beta(s);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 4; ++c) {
            double mean = 0, var = 0;
            for (std::size_t i = 0; i < 64; ++i) mean += y[(n * 4 + c) * 64 + i];
            mean /= 64;
            for (std::size_t i = 0; i < 64; ++i) var += std::pow(y[(n * 4 + c) * 64 + i] - mean, 2);
            var /= 64;
            EXPECT_NEAR(mean, b[n * 4 + c], 1e-5);
            EXPECT_NEAR(std::sqrt(var), std::abs(g[n * 4 + c]), 1e-3);
        }
}
