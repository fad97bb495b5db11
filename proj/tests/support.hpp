#pragma once

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "hmat/hmat.hpp"

namespace testing_support {

using hmat::Rng;
using hmat::Tensor;

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

/// Independent Bernoulli mask; `p_valid` is the chance a pixel is valid.
inline hmat::BinaryMask random_mask(std::size_t h, std::size_t w, double p_valid, Rng& rng) {
    std::vector<std::uint8_t> v(h * w);
    for (auto& x : v) x = rng.bernoulli(p_valid);
    return hmat::BinaryMask::from_values(h, w, std::move(v));
}

/// Stack of masks as [N,1,H,W].
template <typename T>
Tensor<T> stack_masks(const std::vector<hmat::BinaryMask>& ms) {
    std::vector<T> v;
    for (const auto& m : ms) v.insert(v.end(), m.values().begin(), m.values().end());
    return Tensor<T>::from({ms.size(), 1, ms[0].height(), ms[0].width()}, std::move(v));
}

class TempDir {
   public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string tag = info ? std::string(info->test_suite_name()) + "_" + info->name() : "hmat";
        for (auto& c : tag)
            if (c == '/') c = '_';
        path_ = std::filesystem::temp_directory_path() / ("hmat_test_" + tag);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

   private:
    std::filesystem::path path_;
};

}  // namespace testing_support
