#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cot/tensor.hpp"

namespace cot {

// Planar (CHW) float image.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
};

// Single-channel map plus per-pixel validity (1 = valid).
struct DisparityMap {
    int height = 0;
    int width = 0;
    std::vector<float> values;
    std::vector<std::uint8_t> valid;

    DisparityMap() = default;
    DisparityMap(int h, int w, float fill = 0.0f)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill),
          valid(static_cast<std::size_t>(h) * w, 1) {}
};

// Batches same-sized images into an N x C x H x W tensor.
template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& images);

// Copies sample `n` of an N x C x H x W tensor out as an Image.
template <typename T>
Image from_tensor(const Tensor<T>& t, int n = 0);

// 8-bit PNG codecs (gray or RGB, values mapped to [0,1]).
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// 16-bit single-channel PNG. Throws WrongBitDepth when the file is not 16-bit
// and UnsupportedFormat when it has more than one channel.
std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int& height, int& width);
void write_png16(const std::filesystem::path& path, const std::vector<std::uint16_t>& values, int height, int width);

}  // namespace cot
