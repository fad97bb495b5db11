#pragma once

// Visibility masks: free-form degradation simulation, validity pyramids and
// token validity. Convention: 1 = authentic (valid) pixel, 0 = missing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hmat/errors.hpp"
#include "hmat/ops.hpp"
#include "hmat/rng.hpp"
#include "hmat/tensor.hpp"

namespace hmat {

class BinaryMask {
   public:
    BinaryMask() = default;
    BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 1) : h_(h), w_(w), v_(h * w, fill) {
        if (h == 0 || w == 0) throw ShapeError("mask extents must be positive");
        if (fill > 1) throw ShapeError("mask values must be 0 or 1");
    }

    static BinaryMask from_values(std::size_t h, std::size_t w, std::vector<std::uint8_t> v) {
        if (v.size() != h * w) throw ShapeError("mask value count mismatch");
        for (auto x : v)
            if (x > 1) throw ShapeError("mask values must be 0 or 1");
        BinaryMask m(h, w);
        m.v_ = std::move(v);
        return m;
    }

    /// Binarizes a tensor [1,1,H,W] or [H,W]; any value other than 0/1 is an error.
    template <typename T>
    static BinaryMask from_tensor(const Tensor<T>& t) {
        const auto& s = t.shape();
        if (!(s.size() == 4 && s[0] == 1 && s[1] == 1) && s.size() != 2)
            throw ShapeError("mask tensor must be [1,1,H,W] or [H,W], got " + to_string(s));
        std::size_t h = s[s.size() - 2], w = s.back();
        std::vector<std::uint8_t> v(h * w);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (t[i] != T(0) && t[i] != T(1)) throw ShapeError("mask tensor is not binary");
            v[i] = t[i] == T(1);
        }
        return from_values(h, w, std::move(v));
    }

    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    std::size_t size() const { return v_.size(); }
    std::uint8_t operator()(std::size_t r, std::size_t c) const { return v_[r * w_ + c]; }
    std::uint8_t& at(std::size_t r, std::size_t c) { return v_[r * w_ + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return v_[r * w_ + c]; }
    const std::vector<std::uint8_t>& values() const { return v_; }

    template <typename T>
    Tensor<T> to_tensor() const {
        std::vector<T> d(v_.begin(), v_.end());
        return Tensor<T>::from({1, 1, h_, w_}, std::move(d));
    }

    /// Fraction of missing pixels.
    double coverage() const {
        std::size_t zeros = std::count(v_.begin(), v_.end(), std::uint8_t{0});
        return static_cast<double>(zeros) / static_cast<double>(v_.size());
    }

    bool operator==(const BinaryMask&) const = default;

   private:
    std::size_t h_ = 0, w_ = 0;
    std::vector<std::uint8_t> v_;
};

/// Closed interval of missing-area fraction.
struct CoverageBand {
    double lo = 0.0, hi = 1.0;
    std::string name = "custom";

    CoverageBand() = default;
    CoverageBand(double l, double h, std::string n = "custom") : lo(l), hi(h), name(std::move(n)) {
        if (!(0.0 <= lo && lo < hi && hi <= 1.0))
            throw ConfigError("coverage band must satisfy 0 <= lo < hi <= 1");
    }
    // Half-open, so a mask at exactly 50% is not Severe; a band ending at 1 keeps 1.
    bool contains(double c) const { return c >= lo && (c < hi || hi == 1.0); }

    static CoverageBand moderate() { return {0.20, 0.30, "Moderate"}; }
    static CoverageBand severe() { return {0.40, 0.50, "Severe"}; }
};

inline CoverageBand band_from_name(const std::string& s) {
    if (s == "moderate" || s == "Moderate") return CoverageBand::moderate();
    if (s == "severe" || s == "Severe") return CoverageBand::severe();
    throw ConfigError("unknown coverage band '" + s + "' (expected moderate|severe)");
}

inline double coverage(const BinaryMask& m) { return m.coverage(); }

/// "Moderate", "Severe", or "other".
inline std::string classify(const BinaryMask& m) {
    const double c = m.coverage();
    if (CoverageBand::moderate().contains(c)) return "Moderate";
    if (CoverageBand::severe().contains(c)) return "Severe";
    return "other";
}

// ------------------------------------------------------------ brush strokes

/// Free parameters of the stroke generator. Lengths are given for a 256 px
/// canvas and scale with min(h, w).
struct BrushConfig {
    int min_strokes = 1;
    int max_strokes = 8;
    int min_vertices = 4;
    int max_vertices = 12;
    double min_width = 8.0;
    double max_width = 40.0;
    double min_segment = 10.0;
    double max_segment = 60.0;
    double blotch_probability = 0.3;
    double reference_size = 256.0;
    int max_attempts = 100;
};

namespace detail {

class StrokeCanvas {
   public:
    StrokeCanvas(std::size_t h, std::size_t w) : mask_(h, w, 1) {}

    // Marks pixels whose center is within radius of segment a-b.
    void capsule(double ax, double ay, double bx, double by, double radius) {
        const double vx = bx - ax, vy = by - ay, len2 = vx * vx + vy * vy;
        paint_box(std::min(ax, bx) - radius, std::min(ay, by) - radius, std::max(ax, bx) + radius,
                  std::max(ay, by) + radius, [&](double px, double py) {
                      double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
                      t = std::clamp(t, 0.0, 1.0);
                      const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
                      return dx * dx + dy * dy <= radius * radius;
                  });
    }

    void ellipse(double cx, double cy, double rx, double ry, double angle) {
        const double c = std::cos(angle), s = std::sin(angle), r = std::max(rx, ry);
        paint_box(cx - r, cy - r, cx + r, cy + r, [&](double px, double py) {
            const double dx = px - cx, dy = py - cy;
            const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
            return u * u + v * v <= 1.0;
        });
    }

    double coverage() const { return static_cast<double>(missing_) / static_cast<double>(mask_.size()); }
    BinaryMask take() { return std::move(mask_); }

   private:
    template <typename Inside>
    void paint_box(double x0, double y0, double x1, double y1, Inside inside) {
        const long H = static_cast<long>(mask_.height()), W = static_cast<long>(mask_.width());
        const long r0 = std::max<long>(0, static_cast<long>(std::floor(y0))), r1 = std::min<long>(H - 1, static_cast<long>(std::ceil(y1)));
        const long c0 = std::max<long>(0, static_cast<long>(std::floor(x0))), c1 = std::min<long>(W - 1, static_cast<long>(std::ceil(x1)));
        for (long r = r0; r <= r1; ++r)
            for (long c = c0; c <= c1; ++c) {
                auto& px = mask_.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                if (px && inside(c + 0.5, r + 0.5)) {
                    px = 0;
                    ++missing_;
                }
            }
    }

    BinaryMask mask_;
    std::size_t missing_ = 0;
};

}  // namespace detail

/// Free-form mask from random polyline brush strokes with occasional
/// elliptical blotches. Each attempt paints toward a coverage target drawn
/// inside the band; attempts that land outside the band are redrawn.
inline BinaryMask generate_brush_mask(std::size_t h, std::size_t w, const CoverageBand& band, std::uint64_t seed,
                                      const BrushConfig& cfg = {}) {
    if (h < 32 || w < 32) throw ShapeError("brush masks need h, w >= 32");
    if (cfg.max_strokes < 0 || cfg.min_strokes > cfg.max_strokes) throw ConfigError("bad stroke count range");
    const double scale = static_cast<double>(std::min(h, w)) / cfg.reference_size;
    Rng rng(seed);
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        detail::StrokeCanvas canvas(h, w);
        const double target = rng.uniform(band.lo, band.hi);
        const int strokes = cfg.max_strokes == 0 ? 0 : rng.uniform_int(std::max(cfg.min_strokes, 1), cfg.max_strokes);
        bool reached = target <= 0.0;
        for (int s = 0; s < strokes && !reached; ++s) {
            double x = rng.uniform(0.0, static_cast<double>(w));
            double y = rng.uniform(0.0, static_cast<double>(h));
            double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double width = rng.uniform(cfg.min_width, cfg.max_width) * scale;
            const int vertices = rng.uniform_int(cfg.min_vertices, cfg.max_vertices);
            for (int v = 1; v < vertices && !reached; ++v) {
                angle += rng.uniform(-0.5, 0.5) * std::numbers::pi;
                const double len = rng.uniform(cfg.min_segment, cfg.max_segment) * scale;
                double nx = std::clamp(x + len * std::cos(angle), 0.0, static_cast<double>(w));
                double ny = std::clamp(y + len * std::sin(angle), 0.0, static_cast<double>(h));
                canvas.capsule(x, y, nx, ny, width / 2.0);
                x = nx;
                y = ny;
                reached = canvas.coverage() >= target;
            }
            if (!reached && rng.bernoulli(cfg.blotch_probability)) {
                canvas.ellipse(x, y, rng.uniform(1.0, 3.0) * width, rng.uniform(1.0, 3.0) * width,
                               rng.uniform(0.0, std::numbers::pi));
                reached = canvas.coverage() >= target;
            }
        }
        if (band.contains(canvas.coverage())) return canvas.take();
    }
    throw DataError("could not generate a mask inside coverage band [" + std::to_string(band.lo) + ", " +
                    std::to_string(band.hi) + ") after " + std::to_string(cfg.max_attempts) + " attempts");
}

// ------------------------------------------------------------ validity pyramid

/// Per-scale validity for a batch of masks [N,1,H,W]. Level 0 is the input.
/// Soft maps average-pool (validity fraction of the source block), hard maps
/// min-pool (valid only if the whole source block is valid).
template <typename T>
struct ValidityPyramid {
    struct Level {
        Tensor<T> soft;
        Tensor<T> hard;
        std::size_t scale = 1;
    };
    std::vector<Level> levels;

    std::size_t num_levels() const { return levels.size() - 1; }
    const Level& at(std::size_t l) const { return levels.at(l); }
};

template <typename T>
ValidityPyramid<T> propagate_validity(const Tensor<T>& masks, std::size_t num_levels) {
    if (masks.rank() != 4 || masks.dim(1) != 1) throw ShapeError("validity input must be [N,1,H,W]");
    const std::size_t div = std::size_t{1} << num_levels;
    if (masks.dim(2) % div || masks.dim(3) % div)
        throw ShapeError("mask extents " + to_string(masks.shape()) + " not divisible by 2^" + std::to_string(num_levels));
    for (T v : masks.data())
        if (v != T(0) && v != T(1)) throw ShapeError("validity input must be binary");
    NoGradGuard ng;
    ValidityPyramid<T> p;
    auto base = masks.detach();
    p.levels.push_back({base, base, 1});
    for (std::size_t l = 1; l <= num_levels; ++l) {
        const auto& prev = p.levels.back();
        p.levels.push_back({ops::avg_pool2(prev.soft), ops::min_pool2(prev.hard), prev.scale * 2});
    }
    return p;
}

template <typename T>
ValidityPyramid<T> propagate_validity(const BinaryMask& m, std::size_t num_levels) {
    return propagate_validity(m.to_tensor<T>(), num_levels);
}

/// v_j = 1 iff the soft validity at token j is > 0 (its footprint holds at
/// least one authentic pixel). Row-major token order, concatenated per sample.
template <typename T>
std::vector<std::uint8_t> token_validity(const ValidityPyramid<T>& p, std::size_t level) {
    if (level >= p.levels.size()) throw ShapeError("token_validity: level " + std::to_string(level) + " not in pyramid");
    const auto& soft = p.levels[level].soft;
    std::vector<std::uint8_t> v(soft.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = soft[i] > T(0);
    return v;
}

// ------------------------------------------------------------ token windows

/// Square windows over an H x W token grid, cyclically shifted on odd blocks.
struct WindowPartition {
    std::size_t grid_h = 0, grid_w = 0, window = 8;

    std::size_t shift_for_block(std::size_t block) const { return block % 2 ? window / 2 : 0; }
    std::size_t windows_per_sample() const { return (grid_h / window) * (grid_w / window); }
    std::size_t tokens_per_window() const { return window * window; }

    void validate() const {
        if (window == 0 || grid_h % window || grid_w % window)
            throw ShapeError("window " + std::to_string(window) + " must divide token grid " + std::to_string(grid_h) +
                             "x" + std::to_string(grid_w));
    }
};

/// Brute-force reference for token-validity dilation: for every block, a token
/// becomes valid when any token of its window (under that block's shift) is
/// valid. Window membership is found by scanning every window for every token.
inline std::vector<std::uint8_t> dilate_validity_oracle(std::vector<std::uint8_t> v, const WindowPartition& part,
                                                        std::size_t num_blocks) {
    part.validate();
    const std::size_t H = part.grid_h, W = part.grid_w, w = part.window;
    if (v.size() % (H * W)) throw ShapeError("dilate_validity_oracle: validity length not a multiple of grid size");
    const std::size_t samples = v.size() / (H * W);
    for (std::size_t b = 0; b < num_blocks; ++b) {
        const std::size_t s = part.shift_for_block(b);
        std::vector<std::uint8_t> next(v.size());
        const std::size_t nwr = H / w, nwc = W / w;
        auto member = [&](std::size_t r, std::size_t c, std::size_t wr, std::size_t wc) {
            return (r + H - (s + wr * w) % H) % H < w && (c + W - (s + wc * w) % W) % W < w;
        };
        for (std::size_t n = 0; n < samples; ++n) {
            const std::uint8_t* cur = v.data() + n * H * W;
            std::vector<std::uint8_t> window_max(nwr * nwc, 0);
            for (std::size_t wr = 0; wr < nwr; ++wr)
                for (std::size_t wc = 0; wc < nwc; ++wc)
                    for (std::size_t r = 0; r < H; ++r)
                        for (std::size_t c = 0; c < W; ++c)
                            if (member(r, c, wr, wc))
                                window_max[wr * nwc + wc] = std::max(window_max[wr * nwc + wc], cur[r * W + c]);
            for (std::size_t r = 0; r < H; ++r)
                for (std::size_t c = 0; c < W; ++c)
                    for (std::size_t wr = 0; wr < nwr; ++wr)
                        for (std::size_t wc = 0; wc < nwc; ++wc)
                            if (member(r, c, wr, wc)) next[n * H * W + r * W + c] = window_max[wr * nwc + wc];
        }
        v = std::move(next);
    }
    return v;
}

}  // namespace hmat
