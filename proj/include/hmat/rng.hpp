#pragma once

#include <cstdint>
#include <random>

#include "hmat/tensor.hpp"

namespace hmat {

/// Seeded generator used everywhere randomness appears; one seed, one stream.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t next() { return engine_(); }

    template <typename T>
    Tensor<T> uniform_tensor(Shape shape, double lo, double hi, bool requires_grad = false) {
        Tensor<T> t(std::move(shape), T(0), requires_grad);
        for (auto& v : t.mutable_data()) v = static_cast<T>(uniform(lo, hi));
        return t;
    }

    template <typename T>
    Tensor<T> normal_tensor(Shape shape, bool requires_grad = false) {
        Tensor<T> t(std::move(shape), T(0), requires_grad);
        for (auto& v : t.mutable_data()) v = static_cast<T>(normal());
        return t;
    }

   private:
    std::mt19937_64 engine_;
};

}  // namespace hmat
