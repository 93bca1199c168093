#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sail/tensor.hpp"

namespace sail {

/// Interleaved RGB image with channel values in [0,1].
class ImageRGB {
public:
    ImageRGB() = default;
    ImageRGB(int height, int width);
    ImageRGB(int height, int width, std::vector<float> values);

    int height() const { return height_; }
    int width() const { return width_; }

    float& at(int y, int x, int c) { return values_[index(y, x, c)]; }
    float at(int y, int x, int c) const { return values_[index(y, x, c)]; }

    const std::vector<float>& values() const { return values_; }
    std::vector<float>& values() { return values_; }

    bool operator==(const ImageRGB&) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<float> values_;
};

/// 8-bit single-channel image, used for label grids.
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    bool operator==(const GrayImage&) const = default;
};

ImageRGB read_image(const std::filesystem::path& path);
/// Writes binary PPM; values are clamped and rounded half-up to 8 bits.
void write_image(const ImageRGB& image, const std::filesystem::path& path);

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

/// Min-max normalizes to 0..255 with round-half-up; a constant map becomes 128.
GrayImage heatmap_bytes(const Eigen::Ref<const RowMatrixXd>& values);
void write_heatmap(const Eigen::Ref<const RowMatrixXd>& values, const std::filesystem::path& path);

}  // namespace sail
