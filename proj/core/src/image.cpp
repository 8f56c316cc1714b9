#include "gpsgen/image.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gpsgen {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

constexpr uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

uint8_t quantize8(float v) {
    float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

std::array<float, 3> mean_color(const Image& img) {
    std::array<double, 3> acc{0, 0, 0};
    size_t n = img.pixels.size() / 3;
    for (size_t i = 0; i < img.pixels.size(); i += 3) {
        acc[0] += img.pixels[i];
        acc[1] += img.pixels[i + 1];
        acc[2] += img.pixels[i + 2];
    }
    return {static_cast<float>(acc[0] / n), static_cast<float>(acc[1] / n),
            static_cast<float>(acc[2] / n)};
}

std::vector<uint8_t> encode_png(const Image& img) {
    if (img.height <= 0 || img.width <= 0) throw std::invalid_argument("encode_png: empty image");
    const int w = img.width, h = img.height;
    // raw scanlines, filter byte 0 (None) per row
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * 3));
    size_t o = 0;
    for (int y = 0; y < h; ++y) {
        raw[o++] = 0;
        for (int x = 0; x < w; ++x) {
            const float* p = img.at(y, x);
            raw[o++] = quantize8(p[0]);
            raw[o++] = quantize8(p[1]);
            raw[o++] = quantize8(p[2]);
        }
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("encode_png: deflate failed");
    compressed.resize(bound);

    std::vector<uint8_t> out(kSig, kSig + 8);
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(w));
    put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type RGB
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});
    return out;
}

void write_png(const std::string& path, const Image& img) {
    auto bytes = encode_png(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_png: cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kSig, 8) != 0)
        throw std::runtime_error("read_png: not a PNG: " + path);

    int w = 0, h = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        uint32_t len = get_u32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw std::runtime_error("read_png: truncated chunk");
        std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
        const uint8_t* payload = buf.data() + pos + 8;
        if (type == "IHDR") {
            w = static_cast<int>(get_u32(payload));
            h = static_cast<int>(get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw std::runtime_error("read_png: interlaced PNG unsupported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw std::runtime_error("read_png: missing IHDR");
    if (bit_depth != 8) throw std::runtime_error("read_png: only 8-bit supported");
    int channels;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default: throw std::runtime_error("read_png: unsupported color type");
    }
    size_t stride = static_cast<size_t>(w) * channels;
    std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("read_png: inflate failed");

    // unfilter in place into scanlines
    std::vector<uint8_t> img_bytes(static_cast<size_t>(h) * stride);
    for (int y = 0; y < h; ++y) {
        uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
        const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        uint8_t* cur = img_bytes.data() + static_cast<size_t>(y) * stride;
        const uint8_t* up = y > 0 ? img_bytes.data() + static_cast<size_t>(y - 1) * stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(channels) ? cur[i - channels] : 0;
            int b = up ? up[i] : 0;
            int c = (up && i >= static_cast<size_t>(channels)) ? up[i - channels] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw std::runtime_error("read_png: bad filter byte");
            }
            cur[i] = static_cast<uint8_t>(v & 0xff);
        }
    }

    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const uint8_t* p = img_bytes.data() + (static_cast<size_t>(y) * w + x) * channels;
            float* q = out.at(y, x);
            if (channels == 1) {
                q[0] = q[1] = q[2] = p[0] / 255.0f;
            } else {
                q[0] = p[0] / 255.0f;
                q[1] = p[1] / 255.0f;
                q[2] = p[2] / 255.0f;
            }
        }
    return out;
}

}  // namespace gpsgen
