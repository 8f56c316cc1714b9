#pragma once

#include <cstdint>
#include <string>
#include <array>
#include <vector>

namespace gpsgen {

/// H x W x 3 image, float values in [0, 1], row-major HWC.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // size h*w*3

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0.0f) {}

    float* at(int y, int x) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
    const float* at(int y, int x) const {
        return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
    }

    void fill(float r, float g, float b) {
        for (size_t i = 0; i < pixels.size(); i += 3) {
            pixels[i] = r;
            pixels[i + 1] = g;
            pixels[i + 2] = b;
        }
    }
};

/// Mean color over all pixels, returned as {r,g,b}.
std::array<float, 3> mean_color(const Image& img);

/// 8-bit RGB PNG. Encoding is deterministic (fixed filter and zlib settings),
/// so identical images produce identical bytes.
std::vector<uint8_t> encode_png(const Image& img);
void write_png(const std::string& path, const Image& img);
/// Reads 8-bit gray/RGB/RGBA non-interlaced PNG (alpha discarded).
Image read_png(const std::string& path);

/// Quantize to the 8-bit grid the PNG codec uses (round half up).
uint8_t quantize8(float v);

}  // namespace gpsgen
