#pragma once

#include <stdexcept>
#include <vector>

#include "gpsgen/nn.hpp"
#include "gpsgen/tensor.hpp"

namespace gpsgen::geo {

struct GeoTag {
    double lon = 0.0;  // paper x
    double lat = 0.0;  // paper y
};

struct BoundingBox {
    double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
    bool valid() const { return x_min < x_max && y_min < y_max; }
    bool contains(const GeoTag& t) const {
        return t.lon >= x_min && t.lon <= x_max && t.lat >= y_min && t.lat <= y_max;
    }
};

struct NormalizedGeo {
    double u = 0.0, v = 0.0;  // each in [-1, 1]
};

struct Azimuth {
    double alpha = 0.0;  // degrees in (-180, 180]
};

inline constexpr int kAngleBins = 36;

struct AngleBin {
    int index = 0;  // 0..35, bin k centered at -180 + 10k degrees
};

class OutOfBoxError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};
class UndefinedAzimuthError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Affine map of tag into [-1,1]^2; box corners map to the unit-square corners.
NormalizedGeo normalize(const GeoTag& tag, const BoundingBox& box);
GeoTag denormalize(const NormalizedGeo& n, const BoundingBox& box);

/// [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{F-1} pi v), cos(2^{F-1} pi v)].
/// Dimension 2F+1; the raw value is kept as the first component.
std::vector<float> positional_encode(double v, int frequencies);
inline constexpr int kDefaultFrequencies = 10;
inline int encode_dim(int frequencies) { return 2 * frequencies + 1; }

/// Full-range bearing of (tag - center): north -> 0°, east -> 90°, range (-180, 180].
Azimuth azimuth(const GeoTag& tag, const GeoTag& center);

/// Nearest 10° bin with wraparound; -180 and 180 share bin 0's antipode, i.e.
/// bin k covers center -180 + 10k, and angles near ±180 both land in bin 0.
AngleBin discretize_angle(const Azimuth& a);
double bin_center_degrees(const AngleBin& b);
/// Bin center mapped to [-1, 1] (the conditional input before encoding).
double bin_normalized_value(const AngleBin& b);

/// Two-layer MLP head turning one positionally-encoded scalar into one token
/// of width D. Used for both GPS coordinates and the angle bin value.
struct CoordHead {
    nn::Linear l1, l2;
    int frequencies = kDefaultFrequencies;
    int width = 0;

    CoordHead() = default;
    CoordHead(nn::ParamStore& ps, const std::string& name, int frequencies_, int hidden, int width_,
              Rng& rng)
        : frequencies(frequencies_), width(width_) {
        l1 = nn::Linear(ps, name + ".l1", encode_dim(frequencies_), hidden, rng);
        l2 = nn::Linear(ps, name + ".l2", hidden, width_, rng);
    }

    /// One token per input scalar: [n, D].
    ag::Var operator()(const std::vector<double>& values) const;
};

/// g = [f(u), f(v)]: 2 x D token matrix.
ag::Var embed_gps(const NormalizedGeo& n, const CoordHead& head);
/// g' = f'(normalized bin center): 1 x D token.
ag::Var embed_angle(const AngleBin& b, const CoordHead& head);

}  // namespace gpsgen::geo
