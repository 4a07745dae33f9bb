// SPDX-License-Identifier: Apache-2.0
#include "treesr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "treesr/error.hpp"

namespace treesr {

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
        throw ShapeError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    data_.assign(3 * plane_size(), fill);
}

Image Image::crop(int y0, int x0, int h, int w) const {
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > height_ || x0 + w > width_) {
        throw ShapeError("crop window outside image");
    }
    Image out(h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = at(c, y0 + y, x0 + x);
    return out;
}

Image Image::clamped() const {
    Image out = *this;
    for (double& v : out.data_) v = std::clamp(v, 0.0, 1.0);
    return out;
}

LumaPlane LumaPlane::crop(int y0, int x0, int h, int w) const {
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > height_ || x0 + w > width_) {
        throw ShapeError("crop window outside plane");
    }
    LumaPlane out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = at(y0 + y, x0 + x);
    return out;
}

// Cb/Cr use the scaled colour differences so the inverse is exact up to
// rounding: R = Y + 2(1-Kr)(Cr-1/2), B = Y + 2(1-Kb)(Cb-1/2).
YCbCr rgb_to_ycbcr(const Image& img) {
    const int h = img.height(), w = img.width();
    YCbCr out{LumaPlane(h, w), LumaPlane(h, w), LumaPlane(h, w)};
    const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    for (std::size_t i = 0; i < img.plane_size(); ++i) {
        const double y = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
        out.y[i] = y;
        out.cb[i] = 0.5 + (b[i] - y) / (2.0 * (1.0 - kLumaB));
        out.cr[i] = 0.5 + (r[i] - y) / (2.0 * (1.0 - kLumaR));
    }
    return out;
}

Image ycbcr_to_rgb(const YCbCr& ycc) {
    Image out(ycc.y.height(), ycc.y.width());
    auto r = out.plane(0), g = out.plane(1), b = out.plane(2);
    for (std::size_t i = 0; i < ycc.y.size(); ++i) {
        const double y = ycc.y[i];
        r[i] = y + 2.0 * (1.0 - kLumaR) * (ycc.cr[i] - 0.5);
        b[i] = y + 2.0 * (1.0 - kLumaB) * (ycc.cb[i] - 0.5);
        g[i] = (y - kLumaR * r[i] - kLumaB * b[i]) / kLumaG;
    }
    return out;
}

LumaPlane extract_y(const Image& img) {
    LumaPlane y(img.height(), img.width());
    const auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    for (std::size_t i = 0; i < img.plane_size(); ++i) y[i] = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
    return y;
}

namespace {

double cubic(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

int mirror(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

struct Tap {
    int index;
    double weight;
};

// Per-output-sample taps along one axis.
std::vector<std::vector<Tap>> axis_taps(int in, int out) {
    const double scale = static_cast<double>(out) / in;
    const double kscale = std::min(scale, 1.0);
    const double support = 2.0 / kscale;
    std::vector<std::vector<Tap>> taps(out);
    for (int o = 0; o < out; ++o) {
        const double center = (o + 0.5) / scale - 0.5;
        const int first = static_cast<int>(std::floor(center - support));
        const int last = static_cast<int>(std::ceil(center + support));
        double sum = 0.0;
        for (int k = first; k <= last; ++k) {
            const double wgt = cubic((center - k) * kscale);
            if (wgt == 0.0) continue;
            taps[o].push_back({mirror(k, in), wgt});
            sum += wgt;
        }
        for (Tap& t : taps[o]) t.weight /= sum;
    }
    return taps;
}

}  // namespace

Image bicubic_resize(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: output size must be positive");
    if (out_h == img.height() && out_w == img.width()) return img.clamped();
    const auto ty = axis_taps(img.height(), out_h);
    const auto tx = axis_taps(img.width(), out_w);
    Image out(out_h, out_w);
    std::vector<double> rows(static_cast<std::size_t>(img.height()) * out_w);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (const Tap& t : tx[x]) acc += t.weight * img.at(c, y, t.index);
                rows[static_cast<std::size_t>(y) * out_w + x] = acc;
            }
        }
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (const Tap& t : ty[y]) acc += t.weight * rows[static_cast<std::size_t>(t.index) * out_w + x];
                out.at(c, y, x) = std::clamp(acc, 0.0, 1.0);
            }
        }
    }
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::filesystem::path& path, const std::string& cause) {
    throw IoError(path.string() + ": " + cause);
}

void png_error_handler(png_structp png, png_const_charp msg) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text) *text = msg;
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

struct ReadInfo {
    png_uint_32 width = 0, height = 0;
    int bit_depth = 0, color_type = 0;
};

}  // namespace

namespace {

// Reads header (and optionally rows) of an RGB PNG. Throws IoError on any
// failure; all libpng state is released before throwing.
ReadInfo read_png(const std::filesystem::path& path, std::vector<std::uint8_t>* pixels) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) png_fail(path, "cannot open file");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) png_fail(path, "not a PNG file");

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
    if (!png) png_fail(path, "libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    ReadInfo ri;
    std::vector<png_bytep> rows;
    volatile bool failed = false;
    if (setjmp(png_jmpbuf(png))) {
        failed = true;
    } else {
        png_init_io(png, fp.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        ri.width = png_get_image_width(png, info);
        ri.height = png_get_image_height(png, info);
        ri.bit_depth = png_get_bit_depth(png, info);
        ri.color_type = png_get_color_type(png, info);
        if (pixels && ri.color_type == PNG_COLOR_TYPE_RGB && (ri.bit_depth == 8 || ri.bit_depth == 16)) {
            if (ri.bit_depth == 16) png_set_swap(png);  // little-endian uint16 in memory
            const std::size_t stride = static_cast<std::size_t>(ri.width) * 3 * (ri.bit_depth / 8);
            pixels->assign(stride * ri.height, 0);
            rows.resize(ri.height);
            for (png_uint_32 y = 0; y < ri.height; ++y) rows[y] = pixels->data() + y * stride;
            png_read_image(png, rows.data());
            png_read_end(png, nullptr);
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    if (failed) png_fail(path, "malformed PNG (" + err + ")");
    return ri;
}

}  // namespace

int png_bit_depth(const std::filesystem::path& path) { return read_png(path, nullptr).bit_depth; }

Image load_png(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) png_fail(path, "file does not exist");
    std::vector<std::uint8_t> bytes;
    const ReadInfo ri = read_png(path, &bytes);
    if (ri.color_type != PNG_COLOR_TYPE_RGB) {
        png_fail(path, "unsupported color type " + std::to_string(ri.color_type) + " (expected RGB without alpha)");
    }
    if (ri.bit_depth != 8 && ri.bit_depth != 16) {
        png_fail(path, "unsupported bit depth " + std::to_string(ri.bit_depth));
    }
    Image img(static_cast<int>(ri.height), static_cast<int>(ri.width));
    const double maxcode = ri.bit_depth == 8 ? 255.0 : 65535.0;
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const std::size_t idx = (static_cast<std::size_t>(y) * img.width() + x) * 3 + c;
                unsigned code;
                if (ri.bit_depth == 8) {
                    code = bytes[idx];
                } else {
                    code = static_cast<unsigned>(bytes[2 * idx]) | (static_cast<unsigned>(bytes[2 * idx + 1]) << 8);
                }
                img.at(c, y, x) = code / maxcode;
            }
        }
    }
    return img;
}

void save_png(const Image& img, const std::filesystem::path& path, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw IoError(path.string() + ": bit depth must be 8 or 16");
    if (img.empty()) throw IoError(path.string() + ": cannot save empty image");
    const double maxcode = bit_depth == 8 ? 255.0 : 65535.0;
    const std::size_t bpp = bit_depth / 8;
    const std::size_t stride = static_cast<std::size_t>(img.width()) * 3 * bpp;
    std::vector<std::uint8_t> bytes(stride * img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                const auto code = static_cast<unsigned>(std::floor(v * maxcode + 0.5));
                const std::size_t idx = (static_cast<std::size_t>(y) * img.width() + x) * 3 + c;
                if (bpp == 1) {
                    bytes[idx] = static_cast<std::uint8_t>(code);
                } else {
                    bytes[2 * idx] = static_cast<std::uint8_t>(code >> 8);  // PNG is big-endian
                    bytes[2 * idx + 1] = static_cast<std::uint8_t>(code & 0xff);
                }
            }
        }
    }

    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) png_fail(path, "cannot open for writing");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_handler, png_warning_handler);
    if (!png) png_fail(path, "libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep> rows(img.height());
    for (int y = 0; y < img.height(); ++y) rows[y] = bytes.data() + y * stride;
    volatile bool failed = false;
    if (setjmp(png_jmpbuf(png))) {
        failed = true;
    } else {
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, img.width(), img.height(), bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    if (failed) png_fail(path, "write failed (" + err + ")");
    if (std::fflush(fp.get()) != 0) png_fail(path, "write failed");
}

}  // namespace treesr
