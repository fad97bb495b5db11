#include <cmath>

#include "support.hpp"

using namespace hmat;

namespace {

ParamStore<double> scalar_store(double value) {
    ParamStore<double> st;
    st.add("p", Tensor<double>::from({1}, {value}, true));
    return st;
}

void set_grad(ParamStore<double>& st, double g) {
    auto p = st.get("p");
    st.zero_grad();
    ops::scale(p, g).backward();
}

}  // namespace

TEST(Adam, FirstStepMatchesHandRolledFormula) {
    for (double g : {0.5, -3.0, 1e-4}) {
        auto st = scalar_store(1.25);
        set_grad(st, g);
        AdamState s;
        adam_step(st, s, 2e-3);
        const double m = 0.1 * g, v = 0.001 * g * g;
        const double mh = m / (1 - 0.9), vh = v / (1 - 0.999);
        EXPECT_DOUBLE_EQ(st.get("p")[0], 1.25 - 2e-3 * mh / (std::sqrt(vh) + 1e-8));
        EXPECT_NEAR(st.get("p")[0], 1.25 - 2e-3 * g / (std::abs(g) + 1e-8), 1e-15);
    }
}

TEST(Adam, ConstantGradientStepsApproachLrTimesSign) {
    const double g = -0.7, lr = 2e-3;
    auto st = scalar_store(0.0);
    AdamState s;
    double m = 0, v = 0, p = 0;
    for (int t = 1; t <= 500; ++t) {
        set_grad(st, g);
        const double before = st.get("p")[0];
        adam_step(st, s, lr);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        p -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(st.get("p")[0], p, 1e-12);
        EXPECT_NEAR(st.get("p")[0] - before, lr, 1e-9);  // -lr * sign(g)
    }
    EXPECT_EQ(s.step, 500u);
}

TEST(L1Loss, EmptyMissingRegionGivesZeroLossAndGradient) {
    Rng r(1);
    auto a = r.uniform_tensor<double>({1, 3, 4, 4}, 0, 1, true);
    const auto b = r.uniform_tensor<double>({1, 3, 4, 4}, 0, 1);
    const auto loss = l1_loss(a, b, Tensor<double>({1, 1, 4, 4}, 1.0));
    EXPECT_EQ(loss.item(), 0.0);
    loss.backward();
    for (double v : a.grad()) EXPECT_EQ(v, 0.0);
}

TEST(L1Loss, MissingRegionMeanMatchesDirectSum) {
    Rng r(2);
    const auto a = r.uniform_tensor<double>({2, 3, 8, 8}, 0, 1), b = r.uniform_tensor<double>({2, 3, 8, 8}, 0, 1);
    const auto m = testing_support::stack_masks<double>(
        {testing_support::random_mask(8, 8, 0.5, r), testing_support::random_mask(8, 8, 0.5, r)});
    double s = 0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < 64; ++p)
                if (m[k * 64 + p] == 0) {
                    s += std::abs(a[(k * 3 + c) * 64 + p] - b[(k * 3 + c) * 64 + p]);
                    ++n;
                }
    EXPECT_NEAR(l1_loss(a, b, m).item(), s / static_cast<double>(n), 1e-14);
}

TEST(TrainConfig, OutOfScopeLossTermsAreRejected) {
    TrainConfig c;
    c.lambda_r1 = 10;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.lambda_perc = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.lr = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, EmptyDatasetIsAnError) {
    Generator<float> g(ModelConfig::toy(), 1);
    TrainConfig c;
    c.steps = 1;
    EXPECT_THROW(train(g, {}, c), DataError);
}

TEST(Train, NonFiniteInputHaltsWithDiagnostics) {
    Generator<float> g(ModelConfig::toy(), 2);
    auto patches = synthetic_patches(1, 32, 3);
    patches[0].mutable_data()[5] = std::nanf("");
    TrainConfig c;
    c.steps = 1;
    c.batch = 1;
    EXPECT_THROW(train(g, patches, c), NonFiniteError);
}

TEST(Train, LossDecreasesOverAShortRun) {
    Generator<float> g(ModelConfig::toy(), 4);
    TrainConfig c;
    c.steps = 400;
    c.batch = 8;
    c.seed = 5;
    // The first ~250 steps are a plateau; the drop comes after.
    const auto losses = train(g, synthetic_patches(40, 32, 6), c);
    ASSERT_EQ(losses.size(), 400u);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < 25; ++i) {
        first += losses[i];
        last += losses[375 + i];
    }
    EXPECT_LT(last, 0.85 * first);
}

TEST(Train, CheckpointHookFiresAtIntervalsAndAtTheEnd) {
    Generator<float> g(ModelConfig::toy(), 7);
    TrainConfig c;
    c.steps = 5;
    c.batch = 1;
    c.checkpoint_interval = 2;
    std::vector<std::size_t> seen;
    TrainHooks h;
    h.on_checkpoint = [&](std::size_t s) { seen.push_back(s); };
    train(g, synthetic_patches(2, 32, 1), c, h);
    EXPECT_EQ(seen, (std::vector<std::size_t>{2, 4, 5}));
}

TEST(SyntheticPatches, DeterministicShapedAndInRange) {
    const auto a = synthetic_patches(5, 32, 9), b = synthetic_patches(5, 32, 9), c = synthetic_patches(5, 32, 10);
    ASSERT_EQ(a.size(), 5u);
    bool differs = false;
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a[i].shape(), (Shape{3, 32, 32}));
        EXPECT_TRUE(testing_support::bit_equal(a[i], b[i]));
        differs |= !testing_support::bit_equal(a[i], c[i]);
        for (float v : a[i].data()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
    }
    EXPECT_TRUE(differs);
}

TEST(MeanColorFill, FillsHolesWithTheValidMeanPerChannel) {
    Rng r(11);
    const auto x = r.uniform_tensor<float>({1, 3, 8, 8}, 0, 1);
    const auto mb = testing_support::random_mask(8, 8, 0.5, r);
    const auto out = mean_color_fill(x, mb.to_tensor<float>());
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        std::size_t n = 0;
        for (std::size_t p = 0; p < 64; ++p)
            if (mb.values()[p]) {
                s += x[c * 64 + p];
                ++n;
            }
        for (std::size_t p = 0; p < 64; ++p) {
            if (mb.values()[p]) {
                EXPECT_EQ(out[c * 64 + p], x[c * 64 + p]);
            } else {
                EXPECT_NEAR(out[c * 64 + p], s / static_cast<double>(n), 1e-6);
            }
        }
    }
}

// --------------------------------------------------------------- persistence

TEST(Checkpoint, RoundTripIsBitIdenticalAndConfigIsRecovered) {
    for (const auto& cfg : {ModelConfig::toy(), ModelConfig::toy("EqualCapacity"), ModelConfig::full()}) {
        Generator<float> g(cfg, 3);
        const auto bytes = checkpoint::serialize(g.params());
        const auto back = checkpoint::deserialize(bytes);
        EXPECT_EQ(checkpoint::serialize(back), bytes);
        const auto inferred = checkpoint::infer_model_config(back);
        EXPECT_EQ(inferred.channels, cfg.channels);
        EXPECT_EQ(inferred.blocks, cfg.blocks);
        EXPECT_EQ(inferred.heads, cfg.heads);
        EXPECT_EQ(inferred.window, cfg.window);
        EXPECT_EQ(inferred.style, cfg.style);
        EXPECT_EQ(inferred.z_dim, cfg.z_dim);
        EXPECT_EQ(inferred.style_dim, cfg.style_dim);
        EXPECT_NO_THROW(Generator<float>(inferred, std::move(back)));
    }
}

TEST(Checkpoint, HeaderLayout) {
    ParamStore<float> st;
    st.add("ab", Tensor<float>::from({2}, {1.0f, -2.0f}));
    const auto b = checkpoint::serialize(st);
    const std::vector<std::uint8_t> head{'H', 'M', 'A', 'T', 1, 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 2, 0, 0, 0};
    ASSERT_EQ(b.size(), head.size() + 8 + 4);
    EXPECT_TRUE(std::equal(head.begin(), head.end(), b.begin()));
    float v;
    std::memcpy(&v, &b[head.size() + 4], 4);
    EXPECT_EQ(v, -2.0f);
}

TEST(Checkpoint, EverySingleByteCorruptionIsDetected) {
    Generator<float> g(ModelConfig::toy(), 4);
    const auto bytes = checkpoint::serialize(g.params());
    Rng r(5);
    for (std::size_t i = 0; i < bytes.size(); i += 1 + static_cast<std::size_t>(r.uniform_int(0, 400))) {
        auto bad = bytes;
        bad[i] ^= static_cast<std::uint8_t>(1 + r.uniform_int(0, 254));
        EXPECT_THROW(checkpoint::deserialize(bad), DataError) << "byte " << i;
    }
}

TEST(Checkpoint, TruncationAndUnknownVersionAreRejected) {
    Generator<float> g(ModelConfig::toy(), 6);
    auto bytes = checkpoint::serialize(g.params());
    EXPECT_THROW(checkpoint::deserialize({bytes.begin(), bytes.begin() + 100}), DataError);
    EXPECT_THROW(checkpoint::deserialize({}), DataError);
    bytes[4] = 2;
    const auto crc = checkpoint::detail::crc(bytes.data(), bytes.size() - 4);
    for (int k = 0; k < 4; ++k) bytes[bytes.size() - 4 + k] = static_cast<std::uint8_t>(crc >> (8 * k));
    EXPECT_THROW(checkpoint::deserialize(bytes), DataError);
}

TEST(Checkpoint, LoadingIntoAMismatchedModelFails) {
    Generator<float> g(ModelConfig::toy(), 7);
    auto store = g.params().deep_copy();
    EXPECT_THROW(Generator<float>(ModelConfig::full(), std::move(store)), DataError);
}

// --------------------------------------------------------------- run config

TEST(RunConfig, DefaultsMatchTheReferenceArchitecture) {
    const auto rc = parse_run_config(std::string("{}"));
    EXPECT_DOUBLE_EQ(rc.train.lr, 2e-3);
    EXPECT_EQ(rc.train.batch, 4u);
    EXPECT_DOUBLE_EQ(rc.train.lambda_l1, 1.0);
    EXPECT_EQ(rc.model.channels, (std::array<std::size_t, 3>{64, 128, 180}));
    EXPECT_EQ(rc.model.blocks, 5u);
    EXPECT_EQ(rc.model.heads, 8u);
    EXPECT_EQ(rc.model.style.name, "Baseline");
    EXPECT_EQ(rc.model.style.concat(), 604u);
}

TEST(RunConfig, ToyPresetDefaultsToBatchEight) {
    const auto rc = parse_run_config(std::string(R"({"model": {"preset": "toy"}})"));
    EXPECT_EQ(rc.train.batch, 8u);
    EXPECT_EQ(rc.model.channels, (std::array<std::size_t, 3>{8, 16, 24}));
    EXPECT_EQ(rc.model.style, StyleDims::baseline().scaled_down(8));
}

TEST(RunConfig, UnknownKeysAndBadValuesAreRejected) {
    for (const char* text : {R"({"modle": {}})", R"({"model": {"depth": 3}})", R"({"train": {"lr": "fast"}})",
                             R"({"data": {"bands": ["mild"]}})", R"({"train": {"lambda_r1": 10}})",
                             R"({"model": {"preset": "huge"}})", R"({"model": {"heads": 500}})", R"([1, 2])", "{"})
        EXPECT_THROW(parse_run_config(std::string(text)), ConfigError) << text;
}

TEST(RunConfig, BandsSetTheSevereShare) {
    EXPECT_DOUBLE_EQ(parse_run_config(std::string(R"({"data": {"bands": ["severe"]}})")).train.severe_fraction, 1.0);
    EXPECT_DOUBLE_EQ(parse_run_config(std::string(R"({"data": {"bands": ["moderate"]}})")).train.severe_fraction, 0.0);
    EXPECT_DOUBLE_EQ(parse_run_config(std::string("{}")).train.severe_fraction, 0.5);
}
