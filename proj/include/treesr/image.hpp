// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace treesr {

// Planar RGB raster of doubles. Loaded and saved content lives in [0, 1];
// raw network outputs may stray outside until clamped.
class Image {
public:
    Image() = default;
    Image(int height, int width, double fill = 0.0);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
    double at(int c, int y, int x) const { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

    std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
    std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    // Crop [y0, y0+h) x [x0, x0+w).
    Image crop(int y0, int x0, int h, int w) const;
    Image clamped() const;
    bool same_size(const Image& o) const { return height_ == o.height_ && width_ == o.width_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

// Single-channel plane (luma or chroma).
class LumaPlane {
public:
    LumaPlane() = default;
    LumaPlane(int height, int width, double fill = 0.0)
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    LumaPlane crop(int y0, int x0, int h, int w) const;

    friend bool operator==(const LumaPlane&, const LumaPlane&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

// Full-range ITU-R BT.601 luma weights.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

struct YCbCr {
    LumaPlane y, cb, cr;
};

YCbCr rgb_to_ycbcr(const Image& img);
Image ycbcr_to_rgb(const YCbCr& ycc);
LumaPlane extract_y(const Image& img);

// Bicubic resampling (a = -0.5, symmetric border extension, kernel widened
// by the scale factor when shrinking). Output is clamped to [0, 1].
Image bicubic_resize(const Image& img, int out_h, int out_w);

// Loads an 8- or 16-bit RGB PNG. Codes map to [0, 1] by division by the
// maximum code.
Image load_png(const std::filesystem::path& path);
// Reads only the sample depth of a PNG (8 or 16).
int png_bit_depth(const std::filesystem::path& path);
// Quantizes with round-half-up after clamping to [0, 1].
void save_png(const Image& img, const std::filesystem::path& path, int bit_depth = 8);

}  // namespace treesr
