#include "gpsgen/geo.hpp"

#include <cmath>

namespace gpsgen::geo {

NormalizedGeo normalize(const GeoTag& tag, const BoundingBox& box) {
    if (!box.valid()) throw std::invalid_argument("normalize: degenerate bounding box");
    if (!std::isfinite(tag.lon) || !std::isfinite(tag.lat))
        throw OutOfBoxError("normalize: non-finite coordinate");
    if (!box.contains(tag)) throw OutOfBoxError("normalize: tag outside bounding box");
    NormalizedGeo n;
    n.u = -1.0 + 2.0 * (tag.lon - box.x_min) / (box.x_max - box.x_min);
    n.v = -1.0 + 2.0 * (tag.lat - box.y_min) / (box.y_max - box.y_min);
    return n;
}

GeoTag denormalize(const NormalizedGeo& n, const BoundingBox& box) {
    GeoTag t;
    t.lon = box.x_min + (n.u + 1.0) * 0.5 * (box.x_max - box.x_min);
    t.lat = box.y_min + (n.v + 1.0) * 0.5 * (box.y_max - box.y_min);
    return t;
}

std::vector<float> positional_encode(double v, int frequencies) {
    if (frequencies < 1) throw std::invalid_argument("positional_encode: frequencies must be >= 1");
    std::vector<float> out;
    out.reserve(static_cast<size_t>(encode_dim(frequencies)));
    out.push_back(static_cast<float>(v));
    double f = 1.0;
    for (int k = 0; k < frequencies; ++k) {
        out.push_back(static_cast<float>(std::sin(f * M_PI * v)));
        out.push_back(static_cast<float>(std::cos(f * M_PI * v)));
        f *= 2.0;
    }
    return out;
}

Azimuth azimuth(const GeoTag& tag, const GeoTag& center) {
    double dx = tag.lon - center.lon;
    double dy = tag.lat - center.lat;
    if (dx == 0.0 && dy == 0.0)
        throw UndefinedAzimuthError("azimuth: tag coincides with landmark center");
    double a = std::atan2(dx, dy) * 180.0 / M_PI;  // north 0°, east 90°
    if (a <= -180.0) a = 180.0;
    return Azimuth{a};
}

AngleBin discretize_angle(const Azimuth& a) {
    if (!(a.alpha > -180.0 && a.alpha <= 180.0))
        throw std::invalid_argument("discretize_angle: angle outside (-180, 180]");
    long k = std::lround(a.alpha / 10.0);
    int idx = static_cast<int>(((k % kAngleBins) + kAngleBins) % kAngleBins);
    return AngleBin{idx};
}

double bin_center_degrees(const AngleBin& b) {
    if (b.index < 0 || b.index >= kAngleBins)
        throw std::invalid_argument("bin_center_degrees: invalid bin");
    double c = 10.0 * b.index;
    if (c > 180.0) c -= 360.0;
    return c;
}

double bin_normalized_value(const AngleBin& b) { return bin_center_degrees(b) / 180.0; }

ag::Var CoordHead::operator()(const std::vector<double>& values) const {
    if (width <= 0) throw std::logic_error("CoordHead: head not initialized");
    int dim = encode_dim(frequencies);
    Tensor in({static_cast<int>(values.size()), dim});
    for (size_t i = 0; i < values.size(); ++i) {
        auto enc = positional_encode(values[i], frequencies);
        std::copy(enc.begin(), enc.end(), in.data.begin() + static_cast<int64_t>(i) * dim);
    }
    return l2(ag::silu(l1(ag::constant(std::move(in)))));
}

ag::Var embed_gps(const NormalizedGeo& n, const CoordHead& head) {
    return head({n.u, n.v});  // 2 x D, one token per coordinate
}

ag::Var embed_angle(const AngleBin& b, const CoordHead& head) {
    return head({bin_normalized_value(b)});  // 1 x D
}

}  // namespace gpsgen::geo
