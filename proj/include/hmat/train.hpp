#pragma once

// L1-only optimization of the generator: Adam, the reconstruction loss, a
// procedural patch dataset and the training loop.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hmat/decoder.hpp"
#include "hmat/errors.hpp"
#include "hmat/mask.hpp"
#include "hmat/metrics.hpp"
#include "hmat/ops.hpp"
#include "hmat/params.hpp"
#include "hmat/rng.hpp"

namespace hmat {

struct TrainConfig {
    double lr = 2e-3;
    std::size_t batch = 4;
    std::size_t steps = 0;
    double lambda_l1 = 1.0;
    // Terms of the full objective that are not implemented; must stay 0.
    double lambda_adv = 0.0;
    double lambda_r1 = 0.0;
    double lambda_perc = 0.0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
    metrics::Region loss_region = metrics::Region::Missing;
    double severe_fraction = 0.5;  // share of Severe masks, rest Moderate

    void validate() const {
        if (lambda_adv != 0.0) throw ConfigError("lambda_adv must be 0: adversarial loss is not implemented");
        if (lambda_r1 != 0.0) throw ConfigError("lambda_r1 must be 0: R1 penalty is not implemented");
        if (lambda_perc != 0.0) throw ConfigError("lambda_perc must be 0: perceptual loss is not implemented");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
        if (batch == 0) throw ConfigError("batch size must be positive");
        if (!(lambda_l1 >= 0.0)) throw ConfigError("lambda_l1 must be non-negative");
        if (severe_fraction < 0.0 || severe_fraction > 1.0) throw ConfigError("severe_fraction must lie in [0,1]");
    }
};

// ------------------------------------------------------------------- Adam

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;
};

/// One canonical Adam update of every parameter from its accumulated gradient.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState& st, double lr) {
    if (st.m.empty()) {
        for (const auto& e : params) {
            st.m.emplace_back(e.second.size(), 0.0);
            st.v.emplace_back(e.second.size(), 0.0);
        }
    }
    if (st.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter count");
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    std::size_t k = 0;
    for (auto& [name, p] : params) {
        auto& m = st.m[k];
        auto& v = st.v[k];
        ++k;
        if (m.size() != p.size()) throw ShapeError("adam_step: moment shape mismatch for '" + name + "'");
        const auto g = p.grad();
        auto d = p.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
            const double mh = m[i] / c1, vh = v[i] / c2;
            d[i] = static_cast<T>(static_cast<double>(d[i]) - lr * mh / (std::sqrt(vh) + st.eps));
        }
    }
}

// ------------------------------------------------------------------- loss

/// Mean |x_out - x| over the missing region (default) or the whole image.
/// An empty missing region yields 0 with zero gradients.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& x_out, const Tensor<T>& x, const Tensor<T>& mask,
                  metrics::Region region = metrics::Region::Missing) {
    ops::detail::require_same_shape(x_out, x, "l1_loss");
    const auto diff = ops::abs(ops::sub(x_out, x));
    if (region == metrics::Region::Full) return ops::mean(diff);
    if (mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != x.dim(0) || mask.dim(2) != x.dim(2) ||
        mask.dim(3) != x.dim(3))
        throw ShapeError("l1_loss: mask " + to_string(mask.shape()) + " does not match " + to_string(x.shape()));
    std::vector<T> hole(mask.size());
    std::size_t n = 0;
    for (std::size_t i = 0; i < hole.size(); ++i) {
        hole[i] = mask[i] == T(0) ? T(1) : T(0);
        n += mask[i] == T(0);
    }
    const auto sel = ops::mul_mask(diff, Tensor<T>::from(mask.shape(), std::move(hole)));
    const double denom = static_cast<double>(std::max<std::size_t>(n * x.dim(1), 1));
    return ops::scale(ops::sum(sel), static_cast<T>(1.0 / denom));
}

// ------------------------------------------------------------------- data

/// Procedural mural-like patches: flat color regions from a jittered Voronoi
/// partition, dark contours along region borders and a few free strokes.
/// Returns [3,size,size] tensors in [0,1].
inline std::vector<Tensor<float>> synthetic_patches(std::size_t count, std::size_t size, std::uint64_t seed) {
    static constexpr float palette[][3] = {
        {0.80f, 0.66f, 0.45f}, {0.62f, 0.25f, 0.18f}, {0.20f, 0.42f, 0.45f}, {0.88f, 0.82f, 0.68f},
        {0.45f, 0.55f, 0.30f}, {0.70f, 0.48f, 0.22f}, {0.30f, 0.32f, 0.55f}, {0.92f, 0.72f, 0.55f},
    };
    constexpr std::size_t kColors = std::size(palette);
    Rng rng(seed);
    std::vector<Tensor<float>> out;
    out.reserve(count);
    const double S = static_cast<double>(size);
    for (std::size_t n = 0; n < count; ++n) {
        const int cells = rng.uniform_int(2, 5);
        std::vector<double> cx(cells), cy(cells);
        std::vector<std::array<float, 3>> col(cells);
        for (int c = 0; c < cells; ++c) {
            cx[c] = rng.uniform(0.0, S);
            cy[c] = rng.uniform(0.0, S);
            const auto& p = palette[static_cast<std::size_t>(rng.uniform_int(0, kColors - 1))];
            const double j = rng.uniform(-0.06, 0.06);
            for (int k = 0; k < 3; ++k) col[c][k] = static_cast<float>(std::clamp(p[k] + j, 0.0, 1.0));
        }
        const float ink[3] = {0.12f, 0.09f, 0.07f};
        Tensor<float> img({3, size, size});
        auto d = img.mutable_data();
        const std::size_t hw = size * size;
        for (std::size_t r = 0; r < size; ++r)
            for (std::size_t c = 0; c < size; ++c) {
                const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
                double best = 1e30, second = 1e30;
                int arg = 0;
                for (int k = 0; k < cells; ++k) {
                    const double dist = std::hypot(x - cx[k], y - cy[k]);
                    if (dist < best) {
                        second = best;
                        best = dist;
                        arg = k;
                    } else if (dist < second) {
                        second = dist;
                    }
                }
                const bool contour = second - best < 0.9;
                for (int k = 0; k < 3; ++k) d[k * hw + r * size + c] = contour ? ink[k] : col[arg][k];
            }
        // free contour strokes
        const int strokes = rng.uniform_int(0, 2);
        for (int s = 0; s < strokes; ++s) {
            double x = rng.uniform(0.0, S), y = rng.uniform(0.0, S), a = rng.uniform(0.0, 6.283185307179586);
            const int segs = rng.uniform_int(2, 4);
            for (int g = 0; g < segs; ++g) {
                a += rng.uniform(-0.8, 0.8);
                const double len = rng.uniform(0.2, 0.4) * S;
                const int steps = static_cast<int>(len * 2);
                for (int t = 0; t <= steps; ++t) {
                    const double px = x + std::cos(a) * len * t / steps, py = y + std::sin(a) * len * t / steps;
                    const long ir = std::lround(py - 0.5), ic = std::lround(px - 0.5);
                    if (ir < 0 || ic < 0 || ir >= static_cast<long>(size) || ic >= static_cast<long>(size)) continue;
                    for (int k = 0; k < 3; ++k) d[k * hw + static_cast<std::size_t>(ir) * size + static_cast<std::size_t>(ic)] = ink[k];
                }
                x += std::cos(a) * len;
                y += std::sin(a) * len;
            }
        }
        out.push_back(img);
    }
    return out;
}

/// Fills missing pixels with the per-channel mean of the valid ones.
template <typename T>
Tensor<T> mean_color_fill(const Tensor<T>& image, const Tensor<T>& mask) {
    const std::size_t C = image.dim(image.rank() - 3), HW = mask.size();
    std::vector<T> out(image.data().begin(), image.data().end());
    std::size_t valid = 0;
    for (std::size_t i = 0; i < HW; ++i) valid += mask[i] == T(1);
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0;
        for (std::size_t i = 0; i < HW; ++i)
            if (mask[i] == T(1)) s += static_cast<double>(image[c * HW + i]);
        const T fill = static_cast<T>(valid ? s / static_cast<double>(valid) : 0.5);
        for (std::size_t i = 0; i < HW; ++i)
            if (mask[i] != T(1)) out[c * HW + i] = fill;
    }
    return Tensor<T>::from(image.shape(), std::move(out));
}

// ------------------------------------------------------------------- loop

struct TrainHooks {
    std::function<void(std::size_t step, double loss)> on_step;
    /// Called with the number of completed steps at each checkpoint interval
    /// and once at the end (also when steps == 0).
    std::function<void(std::size_t step)> on_checkpoint;
};

/// Stacks [3,H,W] patches into a [N,3,H,W] batch.
template <typename T>
Tensor<T> stack_patches(const std::vector<Tensor<T>>& patches, const std::vector<std::size_t>& idx) {
    const auto& s = patches.at(idx.at(0)).shape();
    std::vector<T> v;
    v.reserve(idx.size() * numel(s));
    for (auto i : idx) {
        if (patches.at(i).shape() != s) throw DataError("dataset patches differ in shape");
        v.insert(v.end(), patches[i].data().begin(), patches[i].data().end());
    }
    return Tensor<T>::from({idx.size(), s[0], s[1], s[2]}, std::move(v));
}

/// Fresh brush masks for a batch, drawn Moderate or Severe per sample.
template <typename T>
Tensor<T> sample_training_masks(std::size_t n, std::size_t h, std::size_t w, double severe_fraction, Rng& rng) {
    std::vector<T> v;
    v.reserve(n * h * w);
    for (std::size_t i = 0; i < n; ++i) {
        const auto band = rng.bernoulli(severe_fraction) ? CoverageBand::severe() : CoverageBand::moderate();
        const auto m = generate_brush_mask(h, w, band, rng.next());
        v.insert(v.end(), m.values().begin(), m.values().end());
    }
    return Tensor<T>::from({n, 1, h, w}, std::move(v));
}

/// Optimizes `gen` in place; returns the loss of every step.
template <typename T>
std::vector<double> train(Generator<T>& gen, const std::vector<Tensor<T>>& patches, const TrainConfig& cfg,
                          const TrainHooks& hooks = {}) {
    cfg.validate();
    if (patches.empty()) throw DataError("training dataset is empty");
    for (const auto& p : patches)
        if (p.rank() != 3 || p.dim(0) != 3) throw DataError("training patches must be [3,H,W]");
    const std::size_t H = patches[0].dim(1), W = patches[0].dim(2);
    Rng rng(cfg.seed);
    AdamState adam;
    std::vector<double> losses;
    losses.reserve(cfg.steps);
    auto& params = gen.params();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::size_t> idx(cfg.batch);
        for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(patches.size()) - 1));
        const auto x = stack_patches(patches, idx);
        const auto m = sample_training_masks<T>(cfg.batch, H, W, cfg.severe_fraction, rng);
        const auto z = rng.normal_tensor<T>({cfg.batch, gen.config().z_dim});

        params.zero_grad();
        const auto r = gen.generate(x, m, z);
        const auto loss = ops::scale(l1_loss(r.composited, x, m, cfg.loss_region), static_cast<T>(cfg.lambda_l1));
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw NonFiniteError("training loss became non-finite at step " + std::to_string(step));
        loss.backward();
        for (const auto& [name, p] : params) {
            const auto g = p.grad();
            if (!std::all_of(g.begin(), g.end(), [](T v) { return std::isfinite(v); }))
                throw NonFiniteError("non-finite gradient for '" + name + "' at step " + std::to_string(step));
        }
        adam_step(params, adam, cfg.lr);
        for (const auto& [name, p] : params)
            if (!p.all_finite())
                throw NonFiniteError("parameter '" + name + "' became non-finite at step " + std::to_string(step));
        losses.push_back(lv);
        if (hooks.on_step) hooks.on_step(step, lv);
        if (hooks.on_checkpoint && cfg.checkpoint_interval && (step + 1) % cfg.checkpoint_interval == 0 &&
            step + 1 != cfg.steps)
            hooks.on_checkpoint(step + 1);
    }
    params.zero_grad();
    if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.steps);
    return losses;
}

/// Mean over held-out samples of the missing-region PSNR for the model and
/// for mean-color fill, on identical masks.
struct HoldoutReport {
    double model_psnr = 0.0;
    double baseline_psnr = 0.0;
    std::size_t samples = 0;
};

template <typename T>
HoldoutReport evaluate_holdout(const Generator<T>& gen, const std::vector<Tensor<T>>& patches, std::uint64_t seed,
                               double severe_fraction = 0.5) {
    NoGradGuard ng;
    Rng rng(seed);
    HoldoutReport rep;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto x = stack_patches(patches, {i});
        const auto m = sample_training_masks<T>(1, x.dim(2), x.dim(3), severe_fraction, rng);
        const auto z = rng.normal_tensor<T>({1, gen.config().z_dim});
        const auto out = gen.generate(x, m, z).restored;
        const auto base = mean_color_fill(x, m);
        rep.model_psnr += metrics::psnr_missing(out, x, m).value();
        rep.baseline_psnr += metrics::psnr_missing(base, x, m).value();
        ++rep.samples;
    }
    if (rep.samples) {
        rep.model_psnr /= static_cast<double>(rep.samples);
        rep.baseline_psnr /= static_cast<double>(rep.samples);
    }
    return rep;
}

}  // namespace hmat
