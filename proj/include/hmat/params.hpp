#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hmat/errors.hpp"
#include "hmat/rng.hpp"
#include "hmat/tensor.hpp"

namespace hmat {

/// Ordered collection of named parameter tensors. Order is registration order
/// and is the order used by checkpoints.
template <typename T>
class ParamStore {
   public:
    void add(const std::string& name, Tensor<T> t) {
        if (find(name)) throw ConfigError("duplicate parameter '" + name + "'");
        entries_.emplace_back(name, std::move(t));
    }

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [n, t] : entries_)
            if (n == name) return &t;
        return nullptr;
    }

    const Tensor<T>& get(const std::string& name) const {
        if (auto* t = find(name)) return *t;
        throw DataError("missing parameter '" + name + "'");
    }

    bool contains(const std::string& name) const { return find(name) != nullptr; }

    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second.size();
        return n;
    }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void zero_grad() {
        for (auto& e : entries_) e.second.zero_grad();
    }

    /// Deep copy of values into fresh leaves of another scalar type.
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [n, t] : entries_) out.add(n, hmat::cast<U>(t, true));
        return out;
    }

    ParamStore deep_copy() const { return cast<T>(); }

   private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

enum class Init { Uniform, Zeros, Ones };

/// Single code path for building modules: in create mode parameters are
/// initialized and registered; in bind mode they are looked up by name and
/// their extents verified.
template <typename T>
class ParamBuilder {
   public:
    static ParamBuilder creating(ParamStore<T>& store, std::uint64_t seed) { return ParamBuilder(store, seed, true); }
    static ParamBuilder binding(ParamStore<T>& store) { return ParamBuilder(store, 0, false); }

    /// Uniform init draws from +-1/sqrt(fan_in), fan_in = product of all
    /// extents but the first.
    Tensor<T> param(const std::string& name, Shape shape, Init init = Init::Uniform) {
        ++count_;
        if (!create_) {
            const auto& t = store_.get(name);
            if (t.shape() != shape)
                throw DataError("parameter '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                                to_string(shape));
            return t;
        }
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
        Tensor<T> t(shape, T(0), true);
        auto d = t.mutable_data();
        if (init == Init::Uniform) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : d) v = static_cast<T>(rng_.uniform(-bound, bound));
        } else if (init == Init::Ones) {
            for (auto& v : d) v = T(1);
        }
        store_.add(name, t);
        return t;
    }

    bool creating_mode() const { return create_; }
    std::size_t count() const { return count_; }

   private:
    ParamBuilder(ParamStore<T>& s, std::uint64_t seed, bool create) : store_(s), rng_(seed), create_(create) {}
    ParamStore<T>& store_;
    Rng rng_;
    bool create_;
    std::size_t count_ = 0;
};

}  // namespace hmat
