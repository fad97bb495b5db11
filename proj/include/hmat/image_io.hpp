#pragma once

// 8-bit PNG input/output through libpng's simplified API. Pixel values map to
// scalars as v = byte / 255 and back as round(v * 255).

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hmat/errors.hpp"
#include "hmat/mask.hpp"
#include "hmat/tensor.hpp"

namespace hmat::io {

/// Interleaved 8-bit pixels, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    std::size_t width = 0, height = 0, channels = 3;
    std::vector<std::uint8_t> pixels;

    bool operator==(const Image8&) const = default;
};

inline Image8 read_png(const std::string& path, std::size_t channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("cannot read PNG '" + path + "': " + img.message);
    img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Image8 out{img.width, img.height, channels, {}};
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw DataError("cannot decode PNG '" + path + "': " + msg);
    }
    return out;
}

inline void write_png(const std::string& path, const Image8& im) {
    if (im.channels != 1 && im.channels != 3) throw DataError("PNG writer supports 1 or 3 channels");
    if (im.pixels.size() != im.width * im.height * im.channels) throw DataError("PNG pixel buffer size mismatch");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(im.width);
    img.height = static_cast<png_uint_32>(im.height);
    img.format = im.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, im.pixels.data(), 0, nullptr))
        throw DataError("cannot write PNG '" + path + "': " + img.message);
}

/// Interleaved RGB bytes -> [1,3,H,W] in [0,1].
template <typename T>
Tensor<T> to_tensor(const Image8& im) {
    if (im.channels != 3) throw DataError("expected an RGB image");
    const std::size_t H = im.height, W = im.width;
    std::vector<T> v(3 * H * W);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < H * W; ++i) v[c * H * W + i] = static_cast<T>(im.pixels[i * 3 + c]) / T(255);
    return Tensor<T>::from({1, 3, H, W}, std::move(v));
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

/// [1,3,H,W] or [3,H,W] in [0,1] -> interleaved RGB bytes.
template <typename T>
Image8 from_tensor(const Tensor<T>& t) {
    const auto& s = t.shape();
    if (!((s.size() == 4 && s[0] == 1 && s[1] == 3) || (s.size() == 3 && s[0] == 3)))
        throw ShapeError("expected a [1,3,H,W] image tensor, got " + to_string(s));
    const std::size_t H = s[s.size() - 2], W = s.back();
    Image8 im{W, H, 3, std::vector<std::uint8_t>(3 * H * W)};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < H * W; ++i)
            im.pixels[i * 3 + c] = to_byte(static_cast<double>(static_cast<float>(t[c * H * W + i])));
    return im;
}

/// Grayscale intensity >= 128 is valid (1).
inline BinaryMask mask_from_image(const Image8& im) {
    if (im.channels != 1) throw DataError("mask images must be single-channel");
    std::vector<std::uint8_t> v(im.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = im.pixels[i] >= 128;
    return BinaryMask::from_values(im.height, im.width, std::move(v));
}

inline Image8 mask_to_image(const BinaryMask& m) {
    Image8 im{m.width(), m.height(), 1, std::vector<std::uint8_t>(m.size())};
    for (std::size_t i = 0; i < m.size(); ++i) im.pixels[i] = m.values()[i] ? 255 : 0;
    return im;
}

inline BinaryMask read_mask_png(const std::string& path) { return mask_from_image(read_png(path, 1)); }
inline void write_mask_png(const std::string& path, const BinaryMask& m) { write_png(path, mask_to_image(m)); }

}  // namespace hmat::io
