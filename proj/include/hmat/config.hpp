#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "hmat/errors.hpp"

namespace hmat {

/// Capacity split of the style code between its three sources.
struct StyleDims {
    std::size_t img = 360;
    std::size_t latent = 180;
    std::size_t mask = 64;
    std::string name = "Baseline";

    std::size_t concat() const { return img + latent + mask; }
    bool operator==(const StyleDims&) const = default;

    static StyleDims baseline() { return {360, 180, 64, "Baseline"}; }
    static StyleDims equal_capacity() { return {180, 180, 180, "EqualCapacity"}; }
    static StyleDims heavy_semantic_bias() { return {360, 64, 16, "HeavySemanticBias"}; }

    static StyleDims preset(const std::string& name) {
        if (name == "Baseline") return baseline();
        if (name == "EqualCapacity") return equal_capacity();
        if (name == "HeavySemanticBias") return heavy_semantic_bias();
        throw ConfigError("unknown style preset '" + name + "' (Baseline|EqualCapacity|HeavySemanticBias)");
    }

    /// Every dimension divided by `factor` (floor, at least 1).
    StyleDims scaled_down(std::size_t factor) const {
        auto f = [factor](std::size_t d) { return std::max<std::size_t>(1, d / factor); };
        return {f(img), f(latent), f(mask), name};
    }
};

struct ModelConfig {
    std::array<std::size_t, 3> channels{64, 128, 180};
    std::size_t kernel = 3;
    std::size_t kernel_hidden = 16;  // width of the kernel-prediction network
    std::size_t blocks = 5;
    std::size_t heads = 8;
    std::size_t window = 8;
    std::size_t ffn_expansion = 4;
    StyleDims style = StyleDims::baseline();
    std::size_t z_dim = 64;
    std::size_t style_dim = 256;
    std::array<std::size_t, 3> mask_encoder_channels{8, 16, 32};
    std::string preset = "full";

    std::size_t dim() const { return channels[2]; }

    static ModelConfig full(const std::string& style_preset = "Baseline") {
        ModelConfig c;
        c.style = StyleDims::preset(style_preset);
        return c;
    }

    /// Desk-scale variant: 32x32 inputs, 4x4 token grid.
    static ModelConfig toy(const std::string& style_preset = "Baseline") {
        ModelConfig c;
        c.channels = {8, 16, 24};
        c.blocks = 2;
        c.heads = 2;
        c.window = 4;
        c.style = StyleDims::preset(style_preset).scaled_down(8);
        c.z_dim = 8;
        c.style_dim = 32;
        c.preset = "toy";
        return c;
    }

    void validate() const {
        for (auto ch : channels)
            if (ch == 0) throw ConfigError("channel counts must be positive");
        if (kernel % 2 == 0) throw ConfigError("kernel size must be odd");
        if (heads == 0 || heads > dim()) throw ConfigError("head count must lie in [1, model dim]");
        if (window == 0) throw ConfigError("window must be positive");
        if (style.img == 0 || style.latent == 0 || style.mask == 0 || z_dim == 0 || style_dim == 0)
            throw ConfigError("style dimensions must be positive");
    }
};

}  // namespace hmat
