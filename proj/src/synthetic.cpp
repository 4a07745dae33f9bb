// SPDX-License-Identifier: Apache-2.0
#include "treesr/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "treesr/error.hpp"
#include "treesr/rng.hpp"

namespace treesr {

namespace {

constexpr int kSupersample = 4;

struct Color {
    double r, g, b;
};

Color random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

enum class ShapeKind { Disc, Rect, Grating };

struct Primitive {
    ShapeKind kind;
    Color color;
    double cx, cy, a, b;  // centre and extents (radius / half sizes)
    double angle, period, phase;
    double opacity;
};

}  // namespace

Image synthesize_image(int height, int width, std::uint64_t seed) {
    if (height < 1 || width < 1) throw ShapeError("synthesize_image: dimensions must be positive");
    Rng rng(seed);
    const Color c0 = random_color(rng), c1 = random_color(rng);
    const double bg_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);

    std::vector<Primitive> prims;
    const int count = 6 + static_cast<int>(rng.below(6));
    for (int i = 0; i < count; ++i) {
        Primitive p;
        const auto pick = rng.below(3);
        p.kind = pick == 0 ? ShapeKind::Disc : (pick == 1 ? ShapeKind::Rect : ShapeKind::Grating);
        p.color = random_color(rng);
        p.cx = rng.uniform(0.0, width);
        p.cy = rng.uniform(0.0, height);
        p.a = rng.uniform(0.08, 0.35) * std::min(height, width);
        p.b = rng.uniform(0.08, 0.35) * std::min(height, width);
        p.angle = rng.uniform(0.0, std::numbers::pi);
        p.period = rng.uniform(4.5, 12.0);
        p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        p.opacity = rng.uniform(0.6, 1.0);
        prims.push_back(p);
    }

    Image img(height, width);
    const double inv = 1.0 / (kSupersample * kSupersample);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc[3] = {0.0, 0.0, 0.0};
            for (int sy = 0; sy < kSupersample; ++sy) {
                for (int sx = 0; sx < kSupersample; ++sx) {
                    const double px = x + (sx + 0.5) / kSupersample;
                    const double py = y + (sy + 0.5) / kSupersample;
                    const double t = 0.5 + 0.5 * std::sin((px * std::cos(bg_angle) + py * std::sin(bg_angle)) /
                                                          (0.9 * std::max(height, width)) * std::numbers::pi);
                    double r = c0.r + (c1.r - c0.r) * t, g = c0.g + (c1.g - c0.g) * t, b = c0.b + (c1.b - c0.b) * t;
                    for (const Primitive& p : prims) {
                        const double dx = px - p.cx, dy = py - p.cy;
                        const double u = dx * std::cos(p.angle) + dy * std::sin(p.angle);
                        const double v = -dx * std::sin(p.angle) + dy * std::cos(p.angle);
                        double alpha = 0.0;
                        Color col = p.color;
                        switch (p.kind) {
                            case ShapeKind::Disc:
                                alpha = (u * u) / (p.a * p.a) + (v * v) / (p.b * p.b) <= 1.0 ? p.opacity : 0.0;
                                break;
                            case ShapeKind::Rect:
                                alpha = std::abs(u) <= p.a && std::abs(v) <= p.b ? p.opacity : 0.0;
                                break;
                            case ShapeKind::Grating:
                                if (std::abs(u) <= p.a && std::abs(v) <= p.b) {
                                    const double s = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / p.period + p.phase);
                                    alpha = p.opacity * s;
                                }
                                break;
                        }
                        r += alpha * (col.r - r);
                        g += alpha * (col.g - g);
                        b += alpha * (col.b - b);
                    }
                    acc[0] += r;
                    acc[1] += g;
                    acc[2] += b;
                }
            }
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(acc[c] * inv, 0.0, 1.0);
        }
    }
    return img;
}

std::vector<std::filesystem::path> synthesize_corpus(const std::filesystem::path& out_dir, int count, int height,
                                                     int width, std::uint64_t seed) {
    if (count < 1) throw ConfigError("synthesize_corpus: count must be positive");
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%03d.png", i);
        const auto path = out_dir / name;
        save_png(synthesize_image(height, width, derive_seed(seed, static_cast<std::uint64_t>(i))), path);
        written.push_back(path);
    }
    return written;
}

}  // namespace treesr
