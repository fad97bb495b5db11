// Acceptance run: one PASS/FAIL line per criterion, repeated as a summary at exit.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "support.hpp"

using namespace hmat;
using testing_support::bit_equal;
using testing_support::random_mask;

namespace {

std::map<int, std::string>& verdicts() {
    static std::map<int, std::string> v;
    return v;
}

class Verdict {
   public:
    Verdict(int id, std::string title) : id_(id), title_(std::move(title)), start_(std::chrono::steady_clock::now()) {}
    ~Verdict() {
        const bool ok = !::testing::Test::HasFailure();
        char line[512];
        std::snprintf(line, sizeof line, "criterion %2d %s  %s (%.1f s)%s%s", id_, ok ? "PASS" : "FAIL", title_.c_str(),
                      seconds(), note_.empty() ? "" : "  ", note_.c_str());
        std::printf("%s\n", line);
        std::fflush(stdout);
        verdicts()[id_] = line;
    }
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }
    void note(std::string s) { note_ = std::move(s); }

   private:
    int id_;
    std::string title_;
    std::chrono::steady_clock::time_point start_;
    std::string note_;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// Non-separable 2-D Gaussian window, recomputed per position.
double naive_ssim(const Tensor<double>& a, const Tensor<double>& b) {
    const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2), K = 11;
    std::vector<double> g1(K);
    double gs = 0;
    for (std::size_t i = 0; i < K; ++i) {
        const double d = static_cast<double>(i) - 5.0;
        gs += g1[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    }
    const double C1 = 1e-4, C2 = 9e-4;
    double total = 0;
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t i = 0; i + K <= H; ++i)
            for (std::size_t j = 0; j + K <= W; ++j) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (std::size_t u = 0; u < K; ++u)
                    for (std::size_t v = 0; v < K; ++v) {
                        const double w = g1[u] * g1[v] / (gs * gs);
                        const double x = a[(c * H + i + u) * W + j + v], y = b[(c * H + i + u) * W + j + v];
                        mx += w * x;
                        my += w * y;
                        xx += w * x * x;
                        yy += w * y * y;
                        xy += w * x * y;
                    }
                const double vx = xx - mx * mx, vy = yy - my * my, cv = xy - mx * my;
                s += (2 * mx * my + C1) * (2 * cv + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
            }
        total += s / static_cast<double>((H - K + 1) * (W - K + 1));
    }
    return total / static_cast<double>(C);
}

}  // namespace

TEST(Acceptance, C01_ValidPixelsAreReproducedBitExactly) {
    Verdict verdict(1, "valid-pixel fidelity over 1000 toy instances");
    const auto cfg = ModelConfig::toy();
    Rng r(101);
    std::size_t instances = 0, violations = 0, valid_pixels = 0;
    NoGradGuard ng;
    for (std::size_t draw = 0; draw < 125; ++draw) {
        Generator<float> g(cfg, 1000 + draw);
        const std::size_t B = 8;
        const auto x = r.uniform_tensor<float>({B, 3, 32, 32}, 0, 1);
        std::vector<BinaryMask> ms;
        for (std::size_t b = 0; b < B; ++b)
            ms.push_back(draw % 3 == 2 ? random_mask(32, 32, r.uniform(0.05, 0.95), r)
                                       : generate_brush_mask(32, 32, b % 2 ? CoverageBand::severe() : CoverageBand::moderate(),
                                                             r.next()));
        const auto m = testing_support::stack_masks<float>(ms);
        const auto out = g.generate(x, m, r.normal_tensor<float>({B, cfg.z_dim})).restored;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < 1024; ++p) {
                if (!ms[b].values()[p]) continue;
                ++valid_pixels;
                for (std::size_t c = 0; c < 3; ++c) {
                    const std::size_t i = (b * 3 + c) * 1024 + p;
                    violations += std::memcmp(&out.data()[i], &x.data()[i], sizeof(float)) != 0;
                }
            }
        instances += B;
    }
    EXPECT_GE(instances, 1000u);
    EXPECT_EQ(violations, 0u);
    EXPECT_LT(verdict.seconds(), 60.0);
    verdict.note(std::to_string(instances) + " instances, " + std::to_string(valid_pixels) + " valid pixels, " +
                 std::to_string(violations) + " violations");
}

TEST(Acceptance, C02_ValidLocationsBlockDecoderGradients) {
    Verdict verdict(2, "gradient blocking at eroded-valid locations over 100 seeds");
    std::size_t analytic_bad = 0, fd_bad = 0, checked = 0;
    double worst_fd = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng r(seed);
        const auto mask = generate_brush_mask(32, 32, seed % 2 ? CoverageBand::severe() : CoverageBand::moderate(), seed);
        const auto pyr = propagate_validity<double>(mask, 3);
        const std::size_t level = seed % pyr.levels.size();
        const auto& hard = pyr.at(level).hard;
        const std::size_t h = hard.dim(2), w = hard.dim(3), C = 2 + seed % 3;
        auto d = r.uniform_tensor<double>({1, C, h, w}, -1, 1, true);
        const auto s = r.uniform_tensor<double>({1, C, h, w}, -1, 1);
        const auto wts = r.uniform_tensor<double>({1, C, h, w}, -1, 1);
        // Random smooth loss: sum w * F^2 + sigmoid(F).
        auto loss_of = [&](const Tensor<double>& dd) {
            const auto f = hard_gate_fuse(dd, s, hard);
            return ops::sum(ops::add(ops::mul(wts, ops::mul(f, f)), ops::sigmoid(f)));
        };
        loss_of(d).backward();
        const auto g = d.grad();
        const double eps = 1e-5;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < h * w; ++p) {
                if (hard[p] != 1.0) continue;
                const std::size_t i = c * h * w + p;
                analytic_bad += g[i] != 0.0;
                auto plus = d.clone_leaf(false), minus = d.clone_leaf(false);
                plus.mutable_data()[i] += eps;
                minus.mutable_data()[i] -= eps;
                NoGradGuard ng;
                const double fd = (loss_of(plus).item() - loss_of(minus).item()) / (2 * eps);
                worst_fd = std::max(worst_fd, std::abs(fd));
                fd_bad += !(std::abs(fd) < 1e-8);
                ++checked;
            }
    }
    EXPECT_GT(checked, 0u);
    EXPECT_EQ(analytic_bad, 0u);
    EXPECT_EQ(fd_bad, 0u);
    verdict.note(std::to_string(checked) + " locations, worst |fd| " + fmt("%.1e", worst_fd));
}

TEST(Acceptance, C03_MaskedAttentionSourcesOnlyValidKeys) {
    Verdict verdict(3, "masked attention: all 512 patterns on 3x3 plus 100 random 8x8 windows");
    std::size_t mass_bad = 0, sum_bad = 0, pass_bad = 0, rows = 0;
    double worst_sum = 0;
    auto check = [&](std::size_t window, std::size_t heads, const std::vector<std::uint8_t>& v, std::size_t B,
                     std::uint64_t seed) {
        ParamStore<double> st;
        auto pb = ParamBuilder<double>::creating(st, seed);
        auto p = AttentionParams<double>::build(pb, "a", 8, heads, window);
        Rng r(seed + 1);
        for (auto& b : p.rel_bias.mutable_data()) b = r.uniform(-2, 2);
        const std::size_t T = window * window;
        const auto x = r.uniform_tensor<double>({B, T, 8}, -2, 2);
        const auto res = masked_attention(x, v, heads, p);
        for (std::size_t b = 0; b < B; ++b) {
            bool any = false;
            for (std::size_t j = 0; j < T; ++j) any |= v[b * T + j] != 0;
            if (!any) {
                for (std::size_t i = 0; i < T * 8; ++i) pass_bad += res.out[b * T * 8 + i] != x[b * T * 8 + i];
                continue;
            }
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < T; ++i) {
                    double s = 0;
                    for (std::size_t j = 0; j < T; ++j) {
                        const double a = res.weights[((b * heads + h) * T + i) * T + j];
                        if (!v[b * T + j]) mass_bad += a != 0.0;
                        s += a;
                    }
                    worst_sum = std::max(worst_sum, std::abs(s - 1));
                    sum_bad += !(std::abs(s - 1) <= 1e-6);
                    ++rows;
                }
        }
    };
    std::vector<std::uint8_t> all(512 * 9);
    for (std::size_t pat = 0; pat < 512; ++pat)
        for (std::size_t j = 0; j < 9; ++j) all[pat * 9 + j] = (pat >> j) & 1;
    check(3, 2, all, 512, 7);
    Rng r(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::uint8_t> v(64);
        const double pv = trial < 5 ? 0.0 : r.uniform(0.01, 0.9);
        for (auto& b : v) b = r.bernoulli(pv);
        check(8, 4, v, 1, 100 + trial);
    }
    EXPECT_EQ(mass_bad, 0u);
    EXPECT_EQ(sum_bad, 0u);
    EXPECT_EQ(pass_bad, 0u);
    verdict.note(std::to_string(rows) + " rows, worst |sum-1| " + fmt("%.1e", worst_sum));
}

TEST(Acceptance, C04_TokenValidityFollowsDilationOracle) {
    Verdict verdict(4, "transformer validity equals dilation oracle, 5 blocks, 50 masks");
    auto cfg = ModelConfig::toy();
    cfg.channels = {8, 8, 16};
    cfg.heads = 2;
    cfg.window = 8;
    cfg.blocks = 5;
    ParamStore<float> st;
    auto pb = ParamBuilder<float>::creating(st, 41);
    const auto bp = BottleneckParams<float>::build(pb, cfg);
    Rng r(42);
    std::size_t mismatches = 0;
    NoGradGuard ng;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::uint8_t> v(1024, 0);
        const int seeds = 1 + trial % 6;
        for (int k = 0; k < seeds; ++k) v[static_cast<std::size_t>(r.uniform_int(0, 1023))] = 1;
        if (trial % 5 == 4)
            for (auto& b : v) b |= r.bernoulli(0.05);
        auto s = r.normal_tensor<float>({1, cfg.style_dim});
        const auto out =
            bottleneck_forward(r.uniform_tensor<float>({1, 16, 32, 32}, -1, 1), v, StyleVector<float>{s, s, s, s}, bp, cfg);
        if (out.validity.size() != 5) {
            ++mismatches;
            continue;
        }
        for (std::size_t b = 0; b < 5; ++b) mismatches += out.validity[b] != dilate_validity_oracle(v, {32, 32, 8}, b + 1);
    }
    EXPECT_EQ(mismatches, 0u);
    verdict.note(std::to_string(mismatches) + " block mismatches out of 250");
}

TEST(Acceptance, C05_MadfMatchesConvolutionAndIsLocal) {
    Verdict verdict(5, "MADF constant-kernel equivalence and kernel locality over 20 pairs");
    double worst = 0;
    for (std::size_t stride : {1u, 2u}) {
        ParamStore<float> st;
        auto pb = ParamBuilder<float>::creating(st, 50 + stride);
        auto l = MadfLayer<float>::build(pb, "l", 4, 5, 3, stride, 8);
        Rng r(60 + stride);
        std::vector<float> kernel(9);
        for (auto& v : kernel) v = static_cast<float>(r.uniform(-1, 1));
        for (auto& v : l.phi1_w.mutable_data()) v = 0;
        for (auto& v : l.phi1_b.mutable_data()) v = 0;
        for (auto& v : l.phi2_w.mutable_data()) v = 0;
        std::copy(kernel.begin(), kernel.end(), l.phi2_b.mutable_data().begin());
        const auto x = r.uniform_tensor<float>({1, 4, 16, 16}, -1, 1);
        const auto y = madf_conv(x, Tensor<float>({1, 1, 16, 16}, 1), l);
        const auto k = Tensor<float>::from({1, 1, 3, 3}, kernel);
        std::vector<Tensor<float>> chans;
        for (std::size_t c = 0; c < 4; ++c) {
            std::vector<float> plane(x.data().begin() + static_cast<long>(c * 256),
                                     x.data().begin() + static_cast<long>((c + 1) * 256));
            chans.push_back(ops::conv2d(Tensor<float>::from({1, 1, 16, 16}, plane), k, Tensor<float>({1}), stride, 1));
        }
        const auto ref = ops::leaky_relu(ops::conv2d(ops::concat(chans, 1), l.mix_w, l.mix_b));
        ASSERT_EQ(y.shape(), ref.shape());
        for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(y[i] - ref[i])));
    }
    EXPECT_LE(worst, 1e-5);

    Rng rng(70);
    std::size_t leaks = 0, insensitive = 0;
    for (int pair = 0; pair < 20; ++pair) {
        const std::size_t stride = pair % 2 ? 2 : 1;
        ParamStore<float> st;
        auto pb = ParamBuilder<float>::creating(st, 200 + pair);
        auto l = MadfLayer<float>::build(pb, "l", 3, 3, 3, stride, 8);
        const auto m1 = generate_brush_mask(32, 32, CoverageBand::moderate(), 300 + pair);
        auto m2 = m1;
        for (std::size_t i = 0; i < m1.size(); ++i)
            if (rng.bernoulli(0.05)) m2.at(i / 32, i % 32) ^= 1;
        const auto k1 = predict_kernels(m1.to_tensor<float>(), l), k2 = predict_kernels(m2.to_tensor<float>(), l);
        const std::size_t Ho = k1.dim(2), Wo = k1.dim(3);
        std::size_t differing = 0;
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                bool same_nbhd = true;
                for (long di = -1; di <= 1; ++di)
                    for (long dj = -1; dj <= 1; ++dj) {
                        const long rr = static_cast<long>(i * stride) + di, cc = static_cast<long>(j * stride) + dj;
                        if (rr >= 0 && cc >= 0 && rr < 32 && cc < 32) same_nbhd &= m1.at(rr, cc) == m2.at(rr, cc);
                    }
                bool same_kernel = true;
                for (std::size_t t = 0; t < 9; ++t) same_kernel &= k1[(t * Ho + i) * Wo + j] == k2[(t * Ho + i) * Wo + j];
                leaks += same_nbhd && !same_kernel;
                differing += !same_kernel;
            }
        insensitive += differing == 0;
    }
    EXPECT_EQ(leaks, 0u);
    EXPECT_EQ(insensitive, 0u);
    verdict.note("max |madf - conv| " + fmt("%.1e", worst) + ", " + std::to_string(leaks) + " locality leaks");
}

TEST(Acceptance, C06_FullGradcheckSuite) {
    Verdict verdict(6, "gradcheck of every differentiable op and the toy generator");
    double worst = 0;
    std::string worst_case;
    std::size_t cases = 0, checked = 0;
    for (const auto& c : gradcheck_suite(1, 24)) {
        const auto rep = c.run();
        ++cases;
        checked += rep.checked;
        EXPECT_TRUE(rep.passed) << c.module << "/" << c.name << " error " << rep.max_error << " at " << rep.worst;
        EXPECT_GT(rep.checked, 0u) << c.name;
        if (rep.max_error >= worst) {
            worst = rep.max_error;
            worst_case = c.module + "/" + c.name;
        }
    }
    EXPECT_LT(worst, 1e-6);
    EXPECT_LT(verdict.seconds(), 600.0);
    verdict.note(std::to_string(cases) + " cases, " + std::to_string(checked) + " entries, worst " + fmt("%.1e", worst) +
                 " (" + worst_case + ")");
}

TEST(Acceptance, C07_StylePresetDimensions) {
    Verdict verdict(7, "style preset dimensions");
    struct Row {
        const char* name;
        std::size_t img, latent, mask;
    };
    for (const auto& row : {Row{"Baseline", 360, 180, 64}, Row{"EqualCapacity", 180, 180, 180},
                            Row{"HeavySemanticBias", 360, 64, 16}}) {
        ParamStore<float> st;
        auto pb = ParamBuilder<float>::creating(st, 1);
        const auto p = StyleParams<float>::build(pb, ModelConfig::full(row.name));
        EXPECT_EQ(p.sem_w.shape(), (Shape{row.img, 180})) << row.name;
        EXPECT_EQ(p.lat2_w.shape(), (Shape{row.latent, row.latent})) << row.name;
        EXPECT_EQ(p.shape_fc_w.shape(), (Shape{row.mask, 32})) << row.name;
        EXPECT_EQ(p.fuse1_w.shape(), (Shape{256, row.img + row.latent + row.mask})) << row.name;
        Rng r(2);
        NoGradGuard ng;
        const auto si = semantic_style(r.uniform_tensor<float>({1, 180, 4, 4}, -1, 1), p);
        const auto sl = latent_style(r.normal_tensor<float>({1, 64}), p);
        const auto sm = mask_style(BinaryMask(64, 64).to_tensor<float>(), p);
        EXPECT_EQ(si.shape(), (Shape{1, row.img})) << row.name;
        EXPECT_EQ(sl.shape(), (Shape{1, row.latent})) << row.name;
        EXPECT_EQ(sm.shape(), (Shape{1, row.mask})) << row.name;
    }
}

TEST(Acceptance, C08_MetricOracles) {
    Verdict verdict(8, "PSNR offset case, SSIM identity and SSIM window oracle");
    Rng r(80);
    const auto a = r.uniform_tensor<double>({3, 32, 32}, 0, 0.9);
    auto b = a.clone_leaf(false);
    for (auto& v : b.mutable_data()) v += 0.1;
    const double p = metrics::psnr(a, b);
    EXPECT_NEAR(p, 20.0, 1e-6);
    std::size_t ident_bad = 0;
    for (int t = 0; t < 10; ++t) {
        const auto x = r.uniform_tensor<double>({3, 24, 24}, 0, 1);
        ident_bad += metrics::ssim(x, x) != 1.0;
    }
    EXPECT_EQ(ident_bad, 0u);
    double worst = 0;
    for (int t = 0; t < 20; ++t) {
        const auto x = r.uniform_tensor<double>({3, static_cast<std::size_t>(20 + t % 5), 24}, 0, 1);
        auto y = x.clone_leaf(false);
        const double sigma = 0.02 + 0.02 * t;
        for (auto& v : y.mutable_data()) v = std::clamp(v + sigma * r.normal(), 0.0, 1.0);
        worst = std::max(worst, std::abs(metrics::ssim(x, y) - naive_ssim(x, y)));
    }
    EXPECT_LE(worst, 1e-5);
    verdict.note("psnr " + fmt("%.9f", p) + " dB, worst ssim gap " + fmt("%.1e", worst));
}

TEST(Acceptance, C09_MaskProtocol) {
    Verdict verdict(9, "1000 Moderate and 1000 Severe brush masks in band, deterministic");
    std::size_t out_of_band = 0, nondet = 0;
    std::vector<BinaryMask> kept;
    for (const auto& band : {CoverageBand::moderate(), CoverageBand::severe()})
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            auto m = generate_brush_mask(256, 256, band, seed);
            out_of_band += !band.contains(m.coverage()) || classify(m) != band.name;
            if (seed % 50 == 0) kept.push_back(std::move(m));
        }
    const double gen_seconds = verdict.seconds();
    std::size_t k = 0;
    for (const auto& band : {CoverageBand::moderate(), CoverageBand::severe()})
        for (std::uint64_t seed = 0; seed < 1000; seed += 50) nondet += generate_brush_mask(256, 256, band, seed) != kept[k++];
    EXPECT_EQ(out_of_band, 0u);
    EXPECT_EQ(nondet, 0u);
    EXPECT_LT(gen_seconds, 60.0);
    verdict.note(std::to_string(out_of_band) + " out of band, generation " + fmt("%.1f s", gen_seconds));
}

TEST(Acceptance, C10_ToyTrainingLearns) {
    Verdict verdict(10, "toy training: loss ratio <= 0.5 and >= 2 dB over mean fill");
    const auto data = synthetic_patches(200, 32, 1);
    const auto held = synthetic_patches(50, 32, 999);
    Generator<float> g(ModelConfig::toy(), 7);
    TrainConfig tc;
    tc.batch = 8;
    tc.steps = 2000;
    tc.lr = 2e-3;
    tc.seed = 11;
    const auto losses = train(g, data, tc);
    ASSERT_EQ(losses.size(), 2000u);
    const double first = std::accumulate(losses.begin(), losses.begin() + 100, 0.0) / 100;
    const double last = std::accumulate(losses.end() - 100, losses.end(), 0.0) / 100;
    const auto rep = evaluate_holdout(g, held, 5);
    EXPECT_LE(last, 0.5 * first);
    EXPECT_GE(rep.model_psnr - rep.baseline_psnr, 2.0);
    EXPECT_LT(verdict.seconds(), 1800.0);
    verdict.note("loss ratio " + fmt("%.3f", last / first) + ", model " + fmt("%.2f dB vs mean fill %.2f dB", rep.model_psnr,
                                                                               rep.baseline_psnr));
}

TEST(Acceptance, C11_CheckpointPersistence) {
    Verdict verdict(11, "checkpoint save-load-save identity and single-byte corruption detection");
    testing_support::TempDir dir;
    Generator<float> g(ModelConfig::toy(), 110);
    const auto first = (dir / "a.hmat").string(), second = (dir / "b.hmat").string();
    checkpoint::save(first, g.params());
    checkpoint::save(second, checkpoint::load(first));
    const auto bytes = checkpoint::read_bytes(first);
    EXPECT_EQ(bytes, checkpoint::read_bytes(second));

    Rng r(111);
    std::size_t undetected = 0;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        auto bad = bytes;
        bad[i] ^= static_cast<std::uint8_t>(r.uniform_int(1, 255));
        try {
            checkpoint::deserialize(bad);
            ++undetected;
        } catch (const DataError&) {
        }
    }
    EXPECT_EQ(undetected, 0u);
    verdict.note(std::to_string(bytes.size()) + " byte positions corrupted, " + std::to_string(undetected) + " undetected");
}

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    const int rc = RUN_ALL_TESTS();
    std::printf("\n==== acceptance summary ====\n");
    for (const auto& [id, line] : verdicts()) std::printf("%s\n", line.c_str());
    return rc;
}
