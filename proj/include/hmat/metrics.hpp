#pragma once

// Image quality metrics on [0,1] images shaped [C,H,W] or [1,C,H,W].
// Accumulation is always in double.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "hmat/errors.hpp"
#include "hmat/tensor.hpp"

namespace hmat::metrics {

enum class Region { Full, Missing };

struct RegionValue {
    double value = 0.0;
    /// True when the selected region holds no pixel (value is then 0).
    bool empty_region = false;
};

struct MetricReport {
    double psnr = 0.0;  // +inf for identical images
    double ssim = 0.0;
    double l1 = 0.0;
    double l1_missing = 0.0;
    bool missing_empty = true;
};

namespace detail {

struct Planes {
    std::size_t c, h, w;
};

template <typename T>
Planes planes_of(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("metrics: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    const auto& s = a.shape();
    if (s.size() == 3) return {s[0], s[1], s[2]};
    if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3]};
    throw ShapeError("metrics: expected [C,H,W] or [1,C,H,W], got " + to_string(s));
}

template <typename T>
void check_mask(const Tensor<T>& m, const Planes& p) {
    if (m.size() != p.h * p.w) throw ShapeError("metrics: mask extents do not match image");
}

}  // namespace detail

/// Mean squared error over the whole image or only where mask == 0.
template <typename T>
RegionValue mse(const Tensor<T>& a, const Tensor<T>& b, Region region = Region::Full, const Tensor<T>* mask = nullptr) {
    const auto p = detail::planes_of(a, b);
    if (region == Region::Missing) {
        if (!mask) throw ShapeError("metrics: missing-region selection needs a mask");
        detail::check_mask(*mask, p);
    }
    double s = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < p.c; ++c)
        for (std::size_t i = 0; i < p.h * p.w; ++i) {
            if (region == Region::Missing && (*mask)[i] != T(0)) continue;
            const double d = static_cast<double>(a[c * p.h * p.w + i]) - static_cast<double>(b[c * p.h * p.w + i]);
            s += d * d;
            ++n;
        }
    if (n == 0) return {0.0, true};
    return {s / static_cast<double>(n), false};
}

/// -10 log10(MSE) with peak 1; +inf when MSE is zero.
inline double psnr_from_mse(double m) {
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(m);
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    return psnr_from_mse(mse(a, b).value);
}

/// PSNR restricted to the missing region; nullopt if the region is empty.
template <typename T>
std::optional<double> psnr_missing(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask) {
    auto m = mse(a, b, Region::Missing, &mask);
    if (m.empty_region) return std::nullopt;
    return psnr_from_mse(m.value);
}

/// Mean absolute difference over the selected region.
template <typename T>
RegionValue l1(const Tensor<T>& a, const Tensor<T>& b, Region region = Region::Full, const Tensor<T>* mask = nullptr) {
    const auto p = detail::planes_of(a, b);
    if (region == Region::Missing) {
        if (!mask) throw ShapeError("metrics: missing-region selection needs a mask");
        detail::check_mask(*mask, p);
    }
    double s = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < p.c; ++c)
        for (std::size_t i = 0; i < p.h * p.w; ++i) {
            if (region == Region::Missing && (*mask)[i] != T(0)) continue;
            s += std::abs(static_cast<double>(a[c * p.h * p.w + i]) - static_cast<double>(b[c * p.h * p.w + i]));
            ++n;
        }
    if (n == 0) return {0.0, true};
    return {s / static_cast<double>(n), false};
}

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps(std::size_t n, double sigma) {
    std::vector<double> g(n);
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) - c;
        g[i] = std::exp(-(x * x) / (2.0 * sigma * sigma));
        s += g[i];
    }
    for (auto& v : g) v /= s;
    return g;
}

/// Single-scale SSIM: Gaussian-weighted local statistics over every window
/// fully inside the image (no padding), averaged over windows and channels.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
    const auto p = detail::planes_of(a, b);
    if (p.h < opt.window || p.w < opt.window) throw ShapeError("ssim: image smaller than the window");
    const auto g = gaussian_taps(opt.window, opt.sigma);
    const double C1 = opt.k1 * opt.k1, C2 = opt.k2 * opt.k2;
    const std::size_t oh = p.h - opt.window + 1, ow = p.w - opt.window + 1, K = opt.window;

    // separable filtering of the five moment planes
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> tmp(p.h * ow), out(oh * ow);
        for (std::size_t r = 0; r < p.h; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                double s = 0;
                for (std::size_t k = 0; k < K; ++k) s += g[k] * src[r * p.w + c + k];
                tmp[r * ow + c] = s;
            }
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                double s = 0;
                for (std::size_t k = 0; k < K; ++k) s += g[k] * tmp[(r + k) * ow + c];
                out[r * ow + c] = s;
            }
        return out;
    };

    double total = 0;
    const std::size_t hw = p.h * p.w;
    for (std::size_t ch = 0; ch < p.c; ++ch) {
        std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw);
        for (std::size_t i = 0; i < hw; ++i) {
            x[i] = static_cast<double>(a[ch * hw + i]);
            y[i] = static_cast<double>(b[ch * hw + i]);
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
        double s = 0;
        for (std::size_t i = 0; i < oh * ow; ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
            s += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
        }
        total += s / static_cast<double>(oh * ow);
    }
    return total / static_cast<double>(p.c);
}

/// All metrics for one pair; `mask` selects the missing region for l1_missing.
template <typename T>
MetricReport evaluate(const Tensor<T>& restored, const Tensor<T>& reference, const Tensor<T>* mask = nullptr) {
    MetricReport r;
    r.psnr = psnr(restored, reference);
    r.ssim = ssim(restored, reference);
    r.l1 = l1(restored, reference).value;
    if (mask) {
        auto lm = l1(restored, reference, Region::Missing, mask);
        r.l1_missing = lm.value;
        r.missing_empty = lm.empty_region;
    }
    return r;
}

}  // namespace hmat::metrics
