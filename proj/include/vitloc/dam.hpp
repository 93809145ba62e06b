#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vitloc/common.hpp"
#include "vitloc/fingerprint.hpp"

namespace vitloc {

enum class DamMode { train, eval };
enum class DropoutGranularity { per_pixel, per_column };

struct DamConfig {
    std::size_t image_size = 206;   // R; requires R >= AP count
    double dropout_prob = 0.1;      // p in [0, 1)
    double infill_mean = 0.0;       // normalized units
    double infill_sigma = 0.05;
    DamMode mode = DamMode::train;
    DropoutGranularity granularity = DropoutGranularity::per_pixel;
    std::uint64_t seed = 0;

    void validate() const {
        if (image_size == 0) throw ConfigError("dam image_size must be positive");
        if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw ConfigError("dam dropout_prob must be in [0, 1)");
        if (!(infill_sigma >= 0.0)) throw ConfigError("dam infill_sigma must be >= 0");
        if (!std::isfinite(dropout_prob) || !std::isfinite(infill_mean) || !std::isfinite(infill_sigma)) {
            throw ConfigError("dam parameters must be finite");
        }
    }
};

/// R x R x 3 image, all channels in [0, 1], layout [row][col][channel].
template <typename T>
struct RssiImage2d {
    std::size_t size = 0;
    std::size_t data_pixels = 0;  // columns < data_pixels hold AP features, the rest is padding
    std::vector<T> values;

    T at(std::size_t row, std::size_t col, std::size_t ch) const {
        return values[(row * size + col) * 3 + ch];
    }
    T& at(std::size_t row, std::size_t col, std::size_t ch) {
        return values[(row * size + col) * 3 + ch];
    }
};

/// Affine map from the fixed physical range: v -> (v + 100) / 100.
/// -100 dB (not visible) -> 0, 0 dB -> 1.
inline std::vector<double> dam_normalize(const RssiImage1d& img) {
    std::vector<double> out(img.values.size());
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const double v = img.values[i];
        if (!(v >= kRssiFloorDb && v <= kRssiCeilDb)) {
            throw ValueError("dam normalize: RSSI value " + std::to_string(v) + " outside [-100, 0]");
        }
        out[i] = (v - kRssiFloorDb) / (kRssiCeilDb - kRssiFloorDb);
    }
    return out;
}

/// Pad the normalized 1D image to R pixels with the no-visibility value 0,
/// then stack R identical rows.
template <typename T>
RssiImage2d<T> dam_replicate(const std::vector<double>& normalized, std::size_t pixels, std::size_t image_size) {
    if (normalized.size() != 3 * pixels) throw ShapeError("dam replicate: values/pixels mismatch");
    if (pixels > image_size) {
        throw ValueError("dam replicate: " + std::to_string(pixels) + " APs exceed image size " +
                         std::to_string(image_size));
    }
    RssiImage2d<T> img;
    img.size = image_size;
    img.data_pixels = pixels;
    img.values.assign(3 * image_size * image_size, T(0));
    for (std::size_t c = 0; c < pixels; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(0, c, ch) = static_cast<T>(normalized[3 * c + ch]);
    for (std::size_t r = 1; r < image_size; ++r) {
        std::copy(img.values.begin(), img.values.begin() + 3 * image_size,
                  img.values.begin() + r * 3 * image_size);
    }
    return img;
}

/// Train-mode augmentation. Row 0 keeps the original features; every other
/// row drops non-padding pixels with probability p and infills all three
/// channels with Normal(mean, sigma) draws clamped to [0, 1].
template <typename T>
void dam_dropout_and_infill(RssiImage2d<T>& img, const DamConfig& cfg, Rng& rng) {
    if (cfg.mode != DamMode::train) throw ValueError("dam dropout requires train mode");
    cfg.validate();
    auto infill = [&](std::size_t r, std::size_t c) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const double n = rng.normal(cfg.infill_mean, cfg.infill_sigma);
            img.at(r, c, ch) = static_cast<T>(std::clamp(n, 0.0, 1.0));
        }
    };
    if (cfg.granularity == DropoutGranularity::per_pixel) {
        for (std::size_t r = 1; r < img.size; ++r)
            for (std::size_t c = 0; c < img.data_pixels; ++c)
                if (rng.bernoulli(cfg.dropout_prob)) infill(r, c);
    } else {
        std::vector<char> dropped(img.data_pixels, 0);
        for (std::size_t c = 0; c < img.data_pixels; ++c) dropped[c] = rng.bernoulli(cfg.dropout_prob);
        for (std::size_t r = 1; r < img.size; ++r)
            for (std::size_t c = 0; c < img.data_pixels; ++c)
                if (dropped[c]) infill(r, c);
    }
}

/// Full pipeline: normalize -> replicate -> (train mode only) dropout+infill.
/// Eval mode never touches the RNG and is a pure function of the input.
template <typename T>
RssiImage2d<T> dam_apply(const RssiImage1d& img1d, const DamConfig& cfg, Rng& rng) {
    cfg.validate();
    RssiImage2d<T> img = dam_replicate<T>(dam_normalize(img1d), img1d.pixels, cfg.image_size);
    if (cfg.mode == DamMode::train) dam_dropout_and_infill(img, cfg, rng);
    return img;
}

template <typename T>
RssiImage2d<T> dam_apply_eval(const RssiImage1d& img1d, const DamConfig& cfg) {
    DamConfig eval_cfg = cfg;
    eval_cfg.mode = DamMode::eval;
    Rng unused(0);
    return dam_apply<T>(img1d, eval_cfg, unused);
}

}  // namespace vitloc
