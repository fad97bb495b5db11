#include <algorithm>

#include "support.hpp"

using namespace hmat;
using testing_support::random_mask;

TEST(BrushMask, ModerateSeed7LandsInBand) {
    const auto m = generate_brush_mask(256, 256, CoverageBand::moderate(), 7);
    EXPECT_GE(m.coverage(), 0.20);
    EXPECT_LE(m.coverage(), 0.30);
    EXPECT_EQ(classify(m), "Moderate");
}

TEST(BrushMask, SevereLandsInBandAcrossSeeds) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto m = generate_brush_mask(64, 64, CoverageBand::severe(), s);
        EXPECT_TRUE(CoverageBand::severe().contains(m.coverage())) << "seed " << s << " coverage " << m.coverage();
    }
}

TEST(BrushMask, ValuesAreBinary) {
    const auto m = generate_brush_mask(48, 80, CoverageBand::severe(), 3);
    EXPECT_EQ(m.height(), 48u);
    EXPECT_EQ(m.width(), 80u);
    for (auto v : m.values()) EXPECT_TRUE(v == 0 || v == 1);
}

TEST(BrushMask, UnsatisfiableBandIsAnError) {
    EXPECT_THROW(generate_brush_mask(32, 32, CoverageBand(0.0, 0.0005), 1), DataError);
}

TEST(BrushMask, TooSmallCanvasIsRejected) { EXPECT_THROW(generate_brush_mask(16, 64, CoverageBand::moderate(), 1), ShapeError); }

TEST(CoverageBand, InvalidIntervalsAreRejected) {
    EXPECT_THROW(CoverageBand(0.5, 0.4), ConfigError);
    EXPECT_THROW(CoverageBand(-0.1, 0.4), ConfigError);
    EXPECT_THROW(band_from_name("mild"), ConfigError);
}

TEST(Classify, QuarterMissingIsModerate) {
    BinaryMask m(32, 32);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 32; ++c) m.at(r, c) = 0;
    EXPECT_DOUBLE_EQ(coverage(m), 0.25);
    EXPECT_EQ(classify(m), "Moderate");
}

TEST(Classify, BandEdges) {
    auto with_zeros = [](std::size_t zeros) {
        BinaryMask m(40, 50);
        for (std::size_t i = 0; i < zeros; ++i) m.at(i / 50, i % 50) = 0;
        return m;
    };
    EXPECT_EQ(classify(with_zeros(400)), "Moderate");  // 0.20
    EXPECT_EQ(classify(with_zeros(800)), "Severe");    // 0.40
    EXPECT_EQ(classify(with_zeros(1000)), "other");    // 0.50
    EXPECT_EQ(classify(with_zeros(700)), "other");     // 0.35
}

TEST(Pyramid, HardLevelsAreBlockMinimaAndSoftLevelsBlockMeans) {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = random_mask(32, 48, 0.85, rng);
        const auto p = propagate_validity<double>(m, 3);
        ASSERT_EQ(p.levels.size(), 4u);
        for (std::size_t l = 0; l <= 3; ++l) {
            const std::size_t b = std::size_t{1} << l, H = 32 / b, W = 48 / b;
            ASSERT_EQ(p.at(l).hard.shape(), (Shape{1, 1, H, W}));
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    int mn = 1, sum = 0;
                    for (std::size_t di = 0; di < b; ++di)
                        for (std::size_t dj = 0; dj < b; ++dj) {
                            const int v = m.at(i * b + di, j * b + dj);
                            mn = std::min(mn, v);
                            sum += v;
                        }
                    EXPECT_EQ(p.at(l).hard[i * W + j], mn);
                    EXPECT_DOUBLE_EQ(p.at(l).soft[i * W + j], static_cast<double>(sum) / static_cast<double>(b * b));
                }
        }
    }
}

TEST(Pyramid, HardCoverageNeverDecreasesWithScale) {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = propagate_validity<float>(random_mask(64, 64, 0.95, rng), 3);
        double prev = 0;
        for (std::size_t l = 0; l <= 3; ++l) {
            double zeros = 0;
            for (float v : p.at(l).hard.data()) zeros += v == 0;
            const double cov = zeros / static_cast<double>(p.at(l).hard.size());
            EXPECT_GE(cov, prev);
            prev = cov;
        }
    }
}

TEST(Pyramid, NonDivisibleExtentsAreRejected) {
    EXPECT_THROW(propagate_validity<float>(BinaryMask(36, 32), 3), ShapeError);
}

TEST(TokenValidity, MonotoneInTheMask) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_mask(64, 64, 0.02, rng);
        const auto before = token_validity(propagate_validity<float>(m, 3), 3);
        auto more = m;
        for (std::size_t i = 0; i < 30; ++i) more.at(rng.uniform_int(0, 63), rng.uniform_int(0, 63)) = 1;
        const auto after = token_validity(propagate_validity<float>(more, 3), 3);
        for (std::size_t j = 0; j < before.size(); ++j) EXPECT_GE(after[j], before[j]);
    }
}

namespace {

// Second dilation reference: window membership by index arithmetic rather
// than scanning. A token at (r, c) belongs to window ((r - s) mod H) / w.
std::vector<std::uint8_t> dilate_by_window_index(std::vector<std::uint8_t> v, std::size_t H, std::size_t W,
                                                 std::size_t w, std::size_t blocks) {
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t s = b % 2 ? w / 2 : 0, nwc = W / w;
        std::vector<std::uint8_t> any((H / w) * nwc, 0);
        auto win = [&](std::size_t r, std::size_t c) { return ((r + H - s) % H) / w * nwc + ((c + W - s) % W) / w; };
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) any[win(r, c)] |= v[r * W + c];
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) v[r * W + c] = any[win(r, c)];
    }
    return v;
}

}  // namespace

TEST(DilationOracle, SingleSeedFiveBlocksOn32GridMatchesIndexArithmetic) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::uint8_t> v(32 * 32, 0);
        v[rng.uniform_int(0, 32 * 32 - 1)] = 1;
        for (std::size_t blocks = 1; blocks <= 5; ++blocks)
            EXPECT_EQ(dilate_validity_oracle(v, {32, 32, 8}, blocks), dilate_by_window_index(v, 32, 32, 8, blocks));
    }
}

TEST(DilationOracle, MonotoneAndIdempotentOnceSaturated) {
    Rng rng(9);
    std::vector<std::uint8_t> v(16 * 16, 0);
    v[rng.uniform_int(0, 255)] = 1;
    auto prev = v;
    for (std::size_t b = 1; b <= 6; ++b) {
        const auto cur = dilate_validity_oracle(v, {16, 16, 4}, b);
        for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_GE(cur[i], prev[i]);
        prev = cur;
    }
    const auto sat = dilate_validity_oracle(std::vector<std::uint8_t>(256, 1), {16, 16, 4}, 3);
    EXPECT_TRUE(std::all_of(sat.begin(), sat.end(), [](auto x) { return x == 1; }));
}

TEST(DilationOracle, WindowMustDivideGrid) {
    EXPECT_THROW(dilate_validity_oracle(std::vector<std::uint8_t>(100, 0), {10, 10, 8}, 1), ShapeError);
}

TEST(MaskImage, ThresholdAt128) {
    io::Image8 im{4, 1, 1, {0, 127, 128, 255}};
    const auto m = io::mask_from_image(im);
    EXPECT_EQ(m.values(), (std::vector<std::uint8_t>{0, 0, 1, 1}));
    EXPECT_EQ(io::mask_to_image(m).pixels, (std::vector<std::uint8_t>{0, 0, 255, 255}));
}
