#include "gpsgen/worldgen.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gpsgen/hash.hpp"
#include "gpsgen/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace gpsgen::worldgen {

namespace {

std::array<float, 3> hsv(double h, double s, double v) {
    h = h - std::floor(h);
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

const std::vector<std::string> kCityVocabulary = {
    "statue", "tree",  "bus",    "fountain", "cafe", "museum",
    "bridge", "tower", "market", "park",     "station", "harbor"};

void paint_background(Image& img, const District& d) {
    const auto& c0 = d.palette[0];
    const auto& c1 = d.palette[1];
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            bool alt = false;
            switch (d.texture) {
                case TextureKind::Solid: alt = false; break;
                case TextureKind::Stripes: alt = (y / 4) % 2 == 1; break;
                case TextureKind::Checker: alt = ((x / 4) + (y / 4)) % 2 == 1; break;
                case TextureKind::Dots: {
                    int cx = (x / 8) * 8 + 4, cy = (y / 8) * 8 + 4;
                    int dx = x - cx, dy = y - cy;
                    alt = dx * dx + dy * dy <= 4;
                    break;
                }
            }
            const auto& c = alt ? c1 : c0;
            float* p = img.at(y, x);
            p[0] = c[0];
            p[1] = c[1];
            p[2] = c[2];
        }
}

// Simple filled glyph masks drawn around (cx, cy) with half-size r.
bool glyph_hit(int shape, int x, int y, int cx, int cy, int r) {
    int dx = x - cx, dy = y - cy;
    int ax = std::abs(dx), ay = std::abs(dy);
    switch (shape % 12) {
        case 0: return dx * dx + dy * dy <= r * r;                       // circle
        case 1: return dy >= -r && dy <= r && ax <= (dy + r) / 2;        // triangle
        case 2: return ax <= r && ay <= r;                               // square
        case 3: return (ax <= r / 3 && ay <= r) || (ay <= r / 3 && ax <= r);  // cross
        case 4: return ax + ay <= r;                                     // diamond
        case 5: {                                                        // ring
            int d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= (r - 2) * (r - 2);
        }
        case 6: return ay <= r / 3 && ax <= r;                           // horizontal bar
        case 7: return ax <= r / 3 && ay <= r;                           // vertical bar
        case 8: return (dy <= -r / 3 && ay <= r && ax <= r) ||           // T
                       (ax <= r / 3 && ay <= r);
        case 9: return (dx <= -r / 3 && ax <= r && ay <= r) ||           // L
                       (dy >= r / 3 && ay <= r && ax <= r);
        case 10: return ay <= r && ax <= r && std::abs(ax - ay) <= r / 3;  // X
        default: {                                                       // 2x2 dot grid
            int gx = std::abs(ax - r / 2), gy = std::abs(ay - r / 2);
            return gx * gx + gy * gy <= (r / 3) * (r / 3);
        }
    }
}

int vocab_index(const std::vector<std::string>& vocab, const std::string& token) {
    for (size_t i = 0; i < vocab.size(); ++i)
        if (vocab[i] == token) return static_cast<int>(i);
    return -1;
}

// ---- landmark ray tracing ----

struct Vec3 {
    double x = 0, y = 0, z = 0;
};
Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Vec3 normalized(Vec3 a) {
    double n = std::sqrt(dot(a, a));
    return {a.x / n, a.y / n, a.z / n};
}

struct Hit {
    double t = 1e30;
    Vec3 normal;
    std::array<float, 3> color{1, 1, 1};
    bool hit = false;
};

void intersect_sphere(const Primitive& p, Vec3 o, Vec3 d, Hit& best) {
    Vec3 c{p.center[0], p.center[1], p.center[2]};
    Vec3 oc = o - c;
    double b = dot(oc, d);
    double q = dot(oc, oc) - p.radius * p.radius;
    double disc = b * b - q;
    if (disc < 0) return;
    double t = -b - std::sqrt(disc);
    if (t < 1e-6) t = -b + std::sqrt(disc);
    if (t < 1e-6 || t >= best.t) return;
    best.t = t;
    best.normal = normalized(o + d * t - c);
    best.color = p.color;
    best.hit = true;
}

void intersect_box(const Primitive& p, Vec3 o, Vec3 d, Hit& best) {
    double tmin = -1e30, tmax = 1e30;
    int axis = -1;
    const double oo[3] = {o.x, o.y, o.z};
    const double dd[3] = {d.x, d.y, d.z};
    for (int i = 0; i < 3; ++i) {
        double lo = p.center[i] - p.half[i], hi = p.center[i] + p.half[i];
        if (std::fabs(dd[i]) < 1e-12) {
            if (oo[i] < lo || oo[i] > hi) return;
            continue;
        }
        double t1 = (lo - oo[i]) / dd[i];
        double t2 = (hi - oo[i]) / dd[i];
        if (t1 > t2) std::swap(t1, t2);
        if (t1 > tmin) {
            tmin = t1;
            axis = i;
        }
        tmax = std::min(tmax, t2);
        if (tmin > tmax) return;
    }
    double t = tmin;
    if (t < 1e-6) return;  // camera inside or behind: skip
    if (t >= best.t) return;
    best.t = t;
    Vec3 n{0, 0, 0};
    Vec3 hitp = o + d * t;
    const double hp[3] = {hitp.x, hitp.y, hitp.z};
    double sgn = hp[axis] > p.center[axis] ? 1.0 : -1.0;
    if (axis == 0) n.x = sgn;
    if (axis == 1) n.y = sgn;
    if (axis == 2) n.z = sgn;
    best.normal = n;
    best.color = p.color;
    best.hit = true;
}

struct CameraFrame {
    Vec3 origin, fwd, right, up;
    double tan_half;
};

CameraFrame camera_frame(const WorldSpec& spec, double azimuth_deg, double elevation_deg) {
    double a = azimuth_deg * M_PI / 180.0;
    double e = elevation_deg * M_PI / 180.0;
    CameraFrame f;
    f.origin = Vec3{std::sin(a) * std::cos(e), std::cos(a) * std::cos(e), std::sin(e)} *
               spec.camera_radius;
    f.fwd = normalized(Vec3{0, 0, 0} - f.origin);
    Vec3 world_up{0, 0, 1};
    f.right = normalized(cross(f.fwd, world_up));
    f.up = cross(f.right, f.fwd);
    f.tan_half = std::tan(spec.fov_deg * 0.5 * M_PI / 180.0);
    return f;
}

Hit trace(const WorldSpec& spec, Vec3 o, Vec3 d) {
    Hit best;
    for (const auto& p : spec.primitives) {
        if (p.kind == Primitive::Kind::Sphere)
            intersect_sphere(p, o, d, best);
        else
            intersect_box(p, o, d, best);
    }
    return best;
}

const Vec3 kLightDir = normalized({0.4, 0.25, 0.88});

// ---- serde helpers ----

json box_to_json(const geo::BoundingBox& b) {
    return json{{"x_min", b.x_min}, {"x_max", b.x_max}, {"y_min", b.y_min}, {"y_max", b.y_max}};
}

geo::BoundingBox box_from_json(const json& j) {
    geo::BoundingBox b;
    b.x_min = j.at("x_min");
    b.x_max = j.at("x_max");
    b.y_min = j.at("y_min");
    b.y_max = j.at("y_max");
    return b;
}

std::string texture_name(TextureKind t) {
    switch (t) {
        case TextureKind::Stripes: return "stripes";
        case TextureKind::Checker: return "checker";
        case TextureKind::Dots: return "dots";
        default: return "solid";
    }
}

TextureKind texture_from_name(const std::string& s) {
    if (s == "stripes") return TextureKind::Stripes;
    if (s == "checker") return TextureKind::Checker;
    if (s == "dots") return TextureKind::Dots;
    if (s == "solid") return TextureKind::Solid;
    throw std::invalid_argument("unknown texture kind: " + s);
}

}  // namespace

WorldSpec WorldSpec::make_city(uint64_t seed, int image_size, int grid_x, int grid_y) {
    WorldSpec s;
    s.mode = Mode::City;
    s.seed = seed;
    s.image_size = image_size;
    s.box = {0.0, 10.0, 0.0, 10.0};
    s.vocabulary = kCityVocabulary;
    s.grid_x = grid_x;
    s.grid_y = grid_y;
    Rng rng(seed);
    int k = grid_x * grid_y;
    double dw = (s.box.x_max - s.box.x_min) / grid_x;
    double dh = (s.box.y_max - s.box.y_min) / grid_y;
    for (int gy = 0; gy < grid_y; ++gy) {
        for (int gx = 0; gx < grid_x; ++gx) {
            District d;
            d.x0 = s.box.x_min + gx * dw;
            d.x1 = d.x0 + dw;
            d.y0 = s.box.y_min + gy * dh;
            d.y1 = d.y0 + dh;
            int idx = gy * grid_x + gx;
            double hue = static_cast<double>(idx) / k + 0.03 * rng.uniform();
            d.palette[0] = hsv(hue, 0.75, 0.85);
            d.palette[1] = hsv(hue, 0.45, 0.55);
            d.palette[2] = hsv(hue + 0.5, 0.9, 0.95);
            d.texture = static_cast<TextureKind>(idx % 4);
            d.glyph_style = idx % 3;
            s.districts.push_back(d);
        }
    }
    // declared separation: half the min pairwise distance of background means,
    // leaving headroom for glyphs and brightness jitter
    double min_dist = 1e9;
    for (size_t i = 0; i < s.districts.size(); ++i)
        for (size_t j = i + 1; j < s.districts.size(); ++j) {
            auto a = district_mean_color(s.districts[i], image_size);
            auto b = district_mean_color(s.districts[j], image_size);
            double d2 = 0;
            for (int c = 0; c < 3; ++c) d2 += (a[c] - b[c]) * (a[c] - b[c]);
            min_dist = std::min(min_dist, std::sqrt(d2));
        }
    s.palette_separation = 0.5 * min_dist;
    return s;
}

WorldSpec WorldSpec::make_landmark(uint64_t seed, int image_size) {
    WorldSpec s;
    s.mode = Mode::Landmark;
    s.seed = seed;
    s.image_size = image_size;
    s.box = {-1.0, 1.0, -1.0, 1.0};
    s.landmark_center = {0.0, 0.0};
    s.landmark_name = "landmark";
    s.vocabulary = {"a", "photo", "of", s.landmark_name};
    s.camera_radius = 3.0;
    s.fov_deg = 45.0;
    Rng rng(seed ^ 0x1a2b3c4dull);
    auto jit = [&](double m) { return m * (rng.uniform() - 0.5); };
    // composite deliberately without rotational symmetry about z
    Primitive base;
    base.kind = Primitive::Kind::Box;
    base.center = {0.0, 0.0, -0.45};
    base.half = {0.7 + jit(0.05), 0.5 + jit(0.05), 0.15};
    base.color = {0.75f, 0.72f, 0.65f};
    Primitive tower;
    tower.kind = Primitive::Kind::Box;
    tower.center = {0.28 + jit(0.04), 0.08, 0.12};
    tower.half = {0.18, 0.18, 0.45};
    tower.color = {0.85f, 0.25f, 0.2f};
    Primitive dome;
    dome.kind = Primitive::Kind::Sphere;
    dome.center = {-0.4, -0.12 + jit(0.04), 0.05};
    dome.radius = 0.3;
    dome.color = {0.2f, 0.7f, 0.3f};
    Primitive marker;
    marker.kind = Primitive::Kind::Box;
    marker.center = {-0.05, 0.42, 0.3};
    marker.half = {0.1, 0.08, 0.25};
    marker.color = {0.2f, 0.35f, 0.9f};
    Primitive pebble;
    pebble.kind = Primitive::Kind::Sphere;
    pebble.center = {0.52, -0.38, -0.12};
    pebble.radius = 0.18;
    pebble.color = {0.95f, 0.85f, 0.2f};
    s.primitives = {base, tower, dome, marker, pebble};
    if (!check_azimuth_asymmetry(s))
        throw std::logic_error("make_landmark: generated composite is azimuth-symmetric");
    return s;
}

json WorldSpec::to_json() const {
    json j;
    j["mode"] = mode == Mode::City ? "city" : "landmark";
    j["seed"] = seed;
    j["image_size"] = image_size;
    j["box"] = box_to_json(box);
    j["vocabulary"] = vocabulary;
    if (mode == Mode::City) {
        j["grid_x"] = grid_x;
        j["grid_y"] = grid_y;
        j["palette_separation"] = palette_separation;
        json ds = json::array();
        for (const auto& d : districts) {
            json dj;
            dj["x0"] = d.x0;
            dj["x1"] = d.x1;
            dj["y0"] = d.y0;
            dj["y1"] = d.y1;
            dj["palette"] = d.palette;
            dj["texture"] = texture_name(d.texture);
            dj["glyph_style"] = d.glyph_style;
            ds.push_back(dj);
        }
        j["districts"] = ds;
    } else {
        j["landmark_center"] = {{"lon", landmark_center.lon}, {"lat", landmark_center.lat}};
        j["camera_radius"] = camera_radius;
        j["fov_deg"] = fov_deg;
        j["landmark_name"] = landmark_name;
        json ps = json::array();
        for (const auto& p : primitives) {
            json pj;
            pj["kind"] = p.kind == Primitive::Kind::Box ? "box" : "sphere";
            pj["center"] = p.center;
            pj["half"] = p.half;
            pj["radius"] = p.radius;
            pj["color"] = p.color;
            ps.push_back(pj);
        }
        j["primitives"] = ps;
    }
    return j;
}

WorldSpec WorldSpec::from_json(const json& j) {
    WorldSpec s;
    s.mode = j.at("mode") == "city" ? Mode::City : Mode::Landmark;
    s.seed = j.at("seed");
    s.image_size = j.at("image_size");
    s.box = box_from_json(j.at("box"));
    s.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    if (s.mode == Mode::City) {
        s.grid_x = j.at("grid_x");
        s.grid_y = j.at("grid_y");
        s.palette_separation = j.at("palette_separation");
        for (const auto& dj : j.at("districts")) {
            District d;
            d.x0 = dj.at("x0");
            d.x1 = dj.at("x1");
            d.y0 = dj.at("y0");
            d.y1 = dj.at("y1");
            d.palette = dj.at("palette");
            d.texture = texture_from_name(dj.at("texture"));
            d.glyph_style = dj.at("glyph_style");
            s.districts.push_back(d);
        }
    } else {
        s.landmark_center = {j.at("landmark_center").at("lon"), j.at("landmark_center").at("lat")};
        s.camera_radius = j.at("camera_radius");
        s.fov_deg = j.at("fov_deg");
        s.landmark_name = j.at("landmark_name");
        for (const auto& pj : j.at("primitives")) {
            Primitive p;
            p.kind = pj.at("kind") == "box" ? Primitive::Kind::Box : Primitive::Kind::Sphere;
            p.center = pj.at("center");
            p.half = pj.at("half");
            p.radius = pj.at("radius");
            p.color = pj.at("color");
            s.primitives.push_back(p);
        }
    }
    return s;
}

uint64_t WorldSpec::hash() const { return fnv1a64(to_json().dump()); }

int WorldSpec::district_of(const geo::GeoTag& tag) const {
    if (mode != Mode::City) throw std::logic_error("district_of: not a city world");
    if (!box.contains(tag)) throw geo::OutOfBoxError("district_of: tag outside box");
    for (size_t i = 0; i < districts.size(); ++i) {
        const auto& d = districts[i];
        // half-open cells; the box's max edges belong to the last cell
        bool in_x = tag.lon >= d.x0 && (tag.lon < d.x1 || d.x1 == box.x_max);
        bool in_y = tag.lat >= d.y0 && (tag.lat < d.y1 || d.y1 == box.y_max);
        if (in_x && in_y) return static_cast<int>(i);
    }
    throw std::logic_error("district_of: districts do not cover the box");
}

std::array<float, 3> district_mean_color(const District& d, int image_size) {
    Image img(image_size, image_size);
    paint_background(img, d);
    return mean_color(img);
}

BeaconRect beacon_u_rect(int image_size) {
    int w = std::max(1, image_size / 16);
    int b = std::max(3, image_size / 8);
    return {image_size - w - 1 - b, w + 1, b};
}

BeaconRect beacon_v_rect(int image_size) {
    int w = std::max(1, image_size / 16);
    int b = std::max(3, image_size / 8);
    return {w + 1, image_size - w - 1 - b, b};
}

std::array<float, 3> beacon_u_color(double u) {
    return {static_cast<float>(0.1 + 0.8 * u), static_cast<float>(0.9 - 0.8 * u), 0.1f};
}

std::array<float, 3> beacon_v_color(double v) {
    return {0.1f, static_cast<float>(0.1 + 0.8 * v), static_cast<float>(0.9 - 0.8 * v)};
}

namespace {

void paint_beacon(Image& img, const BeaconRect& r, const std::array<float, 3>& c) {
    for (int y = r.y0; y < r.y0 + r.size; ++y)
        for (int x = r.x0; x < r.x0 + r.size; ++x) {
            float* p = img.at(y, x);
            p[0] = c[0];
            p[1] = c[1];
            p[2] = c[2];
        }
}

}  // namespace

Sample render_city_sample(const WorldSpec& spec, const geo::GeoTag& tag,
                          const std::vector<std::string>& caption, uint64_t rng_seed) {
    if (spec.mode != Mode::City) throw std::logic_error("render_city_sample: not a city world");
    if (caption.empty()) throw VocabularyError("render_city_sample: empty caption");
    for (const auto& tok : caption)
        if (vocab_index(spec.vocabulary, tok) < 0)
            throw VocabularyError("render_city_sample: unknown token '" + tok + "'");
    int didx = spec.district_of(tag);
    const District& d = spec.districts[static_cast<size_t>(didx)];

    Rng rng(rng_seed);
    int jx = static_cast<int>(rng.below(5)) - 2;  // translation jitter in [-2, 2]
    int jy = static_cast<int>(rng.below(5)) - 2;
    float brightness = static_cast<float>(rng.uniform(0.95, 1.05));

    Image img(spec.image_size, spec.image_size);
    paint_background(img, d);

    int s = spec.image_size;
    int shape = vocab_index(spec.vocabulary, caption[0]);
    int r = s / 4 + d.glyph_style;  // district-dependent glyph size
    int cx = s / 2 + jx, cy = s / 2 + jy;
    const auto& accent = d.palette[2];
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            if (glyph_hit(shape, x, y, cx, cy, r)) {
                float* p = img.at(y, x);
                p[0] = accent[0];
                p[1] = accent[1];
                p[2] = accent[2];
            }
    // secondary tokens add small corner marks
    for (size_t ti = 1; ti < caption.size() && ti < 3; ++ti) {
        int tok = vocab_index(spec.vocabulary, caption[ti]);
        int bx = ti == 1 ? 1 : s - 5;
        int by = ti == 1 ? 1 : s - 5;
        float shade = 0.3f + 0.7f * static_cast<float>(tok) /
                                 static_cast<float>(spec.vocabulary.size());
        for (int y = by; y < by + 4; ++y)
            for (int x = bx; x < bx + 4; ++x) {
                float* p = img.at(y, x);
                p[0] = accent[0] * shade;
                p[1] = accent[1] * shade;
                p[2] = accent[2] * shade;
            }
    }
    for (auto& v : img.pixels) v = std::min(1.0f, std::max(0.0f, v * brightness));

    // location beacons last, over jitter: they carry the exact coordinates
    double u = (tag.lon - spec.box.x_min) / (spec.box.x_max - spec.box.x_min);
    double v = (tag.lat - spec.box.y_min) / (spec.box.y_max - spec.box.y_min);
    paint_beacon(img, beacon_u_rect(s), beacon_u_color(u));
    paint_beacon(img, beacon_v_rect(s), beacon_v_color(v));

    Sample out;
    out.image = std::move(img);
    out.tag = tag;
    out.caption = caption;
    return out;
}

Image render_landmark_view(const WorldSpec& spec, double azimuth_deg, double elevation_deg) {
    CameraFrame cam = camera_frame(spec, azimuth_deg, elevation_deg);
    int s = spec.image_size;
    Image img(s, s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double u = (2.0 * (x + 0.5) / s - 1.0) * cam.tan_half;
            double v = (1.0 - 2.0 * (y + 0.5) / s) * cam.tan_half;
            Vec3 dir = normalized(cam.fwd + cam.right * u + cam.up * v);
            Hit h = trace(spec, cam.origin, dir);
            float* p = img.at(y, x);
            if (h.hit) {
                double shade = 0.35 + 0.65 * std::max(0.0, dot(h.normal, kLightDir));
                p[0] = static_cast<float>(h.color[0] * shade);
                p[1] = static_cast<float>(h.color[1] * shade);
                p[2] = static_cast<float>(h.color[2] * shade);
            } else {
                p[0] = p[1] = p[2] = 1.0f;  // white background
            }
        }
    return img;
}

std::vector<uint8_t> landmark_silhouette(const WorldSpec& spec, double azimuth_deg,
                                         double elevation_deg) {
    CameraFrame cam = camera_frame(spec, azimuth_deg, elevation_deg);
    int s = spec.image_size;
    std::vector<uint8_t> mask(static_cast<size_t>(s) * s, 0);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            double u = (2.0 * (x + 0.5) / s - 1.0) * cam.tan_half;
            double v = (1.0 - 2.0 * (y + 0.5) / s) * cam.tan_half;
            Vec3 dir = normalized(cam.fwd + cam.right * u + cam.up * v);
            mask[static_cast<size_t>(y) * s + x] = trace(spec, cam.origin, dir).hit ? 1 : 0;
        }
    return mask;
}

Sample render_landmark_sample(const WorldSpec& spec, const geo::GeoTag& tag, uint64_t rng_seed) {
    if (spec.mode != Mode::Landmark)
        throw std::logic_error("render_landmark_sample: not a landmark world");
    geo::Azimuth az = geo::azimuth(tag, spec.landmark_center);
    Rng rng(rng_seed);
    double elevation = rng.uniform(-30.0, 0.0);
    Sample out;
    out.image = render_landmark_view(spec, az.alpha, elevation);
    out.tag = tag;
    out.caption = {"a", "photo", "of", spec.landmark_name};
    out.azimuth_bin = geo::discretize_angle(az).index;
    return out;
}

bool landmark_occupied(const WorldSpec& spec, double x, double y, double z) {
    for (const auto& p : spec.primitives) {
        if (p.kind == Primitive::Kind::Sphere) {
            double dx = x - p.center[0], dy = y - p.center[1], dz = z - p.center[2];
            if (dx * dx + dy * dy + dz * dz <= p.radius * p.radius) return true;
        } else {
            if (std::fabs(x - p.center[0]) <= p.half[0] && std::fabs(y - p.center[1]) <= p.half[1] &&
                std::fabs(z - p.center[2]) <= p.half[2])
                return true;
        }
    }
    return false;
}

double landmark_scene_bound(const WorldSpec& spec) {
    double b = 0.0;
    for (const auto& p : spec.primitives) {
        for (int i = 0; i < 3; ++i) {
            double ext = p.kind == Primitive::Kind::Sphere ? p.radius : p.half[i];
            b = std::max(b, std::fabs(p.center[i]) + ext);
        }
    }
    return b * 1.15;
}

std::vector<uint8_t> landmark_occupancy_grid(const WorldSpec& spec, int resolution, double bound) {
    std::vector<uint8_t> grid(static_cast<size_t>(resolution) * resolution * resolution, 0);
    for (int iz = 0; iz < resolution; ++iz)
        for (int iy = 0; iy < resolution; ++iy)
            for (int ix = 0; ix < resolution; ++ix) {
                double x = -bound + (2.0 * bound) * (ix + 0.5) / resolution;
                double y = -bound + (2.0 * bound) * (iy + 0.5) / resolution;
                double z = -bound + (2.0 * bound) * (iz + 0.5) / resolution;
                if (landmark_occupied(spec, x, y, z))
                    grid[(static_cast<size_t>(iz) * resolution + iy) * resolution + ix] = 1;
            }
    return grid;
}

bool check_azimuth_asymmetry(const WorldSpec& spec) {
    std::vector<Image> views;
    for (int k = 0; k < geo::kAngleBins; ++k)
        views.push_back(render_landmark_view(spec, -180.0 + 10.0 * k, -15.0));
    for (size_t i = 0; i < views.size(); ++i)
        for (size_t j = i + 1; j < views.size(); ++j) {
            double diff = 0.0;
            for (size_t p = 0; p < views[i].pixels.size(); ++p)
                diff += std::fabs(views[i].pixels[p] - views[j].pixels[p]);
            diff /= static_cast<double>(views[i].pixels.size());
            if (diff < 1e-3) return false;
        }
    return true;
}

namespace {

/// Mean color over the outer border ring, which the centered caption glyph
/// never reaches (at 32x32 its maximal extent stays 2+ pixels off the edge),
/// so the estimate reflects the district background alone.
std::array<float, 3> border_mean_color(const Image& img) {
    int w = std::max(1, img.width / 16);
    std::array<double, 3> acc{0, 0, 0};
    int64_t n = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (y >= w && y < img.height - w && x >= w && x < img.width - w) continue;
            size_t at = (static_cast<size_t>(y) * img.width + x) * 3;
            for (int c = 0; c < 3; ++c) acc[static_cast<size_t>(c)] += img.pixels[at + c];
            ++n;
        }
    std::array<float, 3> out{};
    for (int c = 0; c < 3; ++c)
        out[static_cast<size_t>(c)] = static_cast<float>(acc[static_cast<size_t>(c)] / n);
    return out;
}

}  // namespace

int classify_by_palette(const WorldSpec& spec, const Image& img) {
    if (spec.mode != Mode::City) throw std::logic_error("classify_by_palette: not a city world");
    auto m = border_mean_color(img);
    int best = -1;
    double best_d = 1e30;
    for (size_t i = 0; i < spec.districts.size(); ++i) {
        Image bg(spec.image_size, spec.image_size);
        paint_background(bg, spec.districts[i]);
        auto e = border_mean_color(bg);
        double d2 = 0;
        for (int c = 0; c < 3; ++c) d2 += (m[c] - e[c]) * (m[c] - e[c]);
        if (d2 < best_d) {
            best_d = d2;
            best = static_cast<int>(i);
        }
    }
    return best;
}

DatasetManifest generate_dataset(const WorldSpec& spec, int n, const std::string& out_dir,
                                 uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    // probe writability before doing any work
    {
        std::ofstream probe(root / ".write_probe", std::ios::trunc);
        if (!probe) throw std::runtime_error("generate_dataset: target directory not writable: " + out_dir);
    }
    fs::remove(root / ".write_probe", ec);

    Rng rng(seed);
    DatasetManifest man;
    man.spec_hash = spec.hash();
    man.box = spec.box;
    man.count = n;
    man.vocabulary = spec.vocabulary;
    man.mode = spec.mode;
    man.image_size = spec.image_size;

    std::ofstream jsonl(root / "samples.jsonl", std::ios::trunc);
    if (!jsonl) throw std::runtime_error("generate_dataset: cannot write samples.jsonl");
    char namebuf[32];
    for (int i = 0; i < n; ++i) {
        Sample s;
        uint64_t sample_seed = rng.next();
        if (spec.mode == Mode::City) {
            geo::GeoTag tag{rng.uniform(spec.box.x_min, spec.box.x_max),
                            rng.uniform(spec.box.y_min, spec.box.y_max)};
            size_t len = 1 + rng.below(3);
            std::vector<std::string> caption;
            for (size_t t = 0; t < len; ++t)
                caption.push_back(spec.vocabulary[rng.below(spec.vocabulary.size())]);
            s = render_city_sample(spec, tag, caption, sample_seed);
        } else {
            double az = rng.uniform(-180.0, 180.0);
            double half = std::min(spec.box.x_max - spec.landmark_center.lon,
                                   spec.box.y_max - spec.landmark_center.lat);
            double dist = rng.uniform(0.25, 0.95) * half;
            geo::GeoTag tag{spec.landmark_center.lon + dist * std::sin(az * M_PI / 180.0),
                            spec.landmark_center.lat + dist * std::cos(az * M_PI / 180.0)};
            s = render_landmark_sample(spec, tag, sample_seed);
        }
        snprintf(namebuf, sizeof(namebuf), "img_%05d.png", i);
        write_png((root / namebuf).string(), s.image);
        man.files.push_back(namebuf);

        json line;
        line["file"] = namebuf;
        line["lon"] = s.tag.lon;
        line["lat"] = s.tag.lat;
        line["caption"] = s.caption;
        if (s.azimuth_bin >= 0) line["azimuth_bin"] = s.azimuth_bin;
        jsonl << line.dump() << "\n";
    }
    jsonl.close();
    if (!jsonl) throw std::runtime_error("generate_dataset: failed writing samples.jsonl");

    // manifest written last: its presence marks a complete dataset
    json mj;
    mj["spec_hash"] = hash_hex(man.spec_hash);
    mj["box"] = box_to_json(man.box);
    mj["count"] = man.count;
    mj["files"] = man.files;
    mj["vocabulary"] = man.vocabulary;
    mj["mode"] = spec.mode == Mode::City ? "city" : "landmark";
    mj["image_size"] = man.image_size;
    mj["world_spec"] = spec.to_json();
    std::ofstream mf(root / "manifest.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("generate_dataset: cannot write manifest.json");
    mf << mj.dump(2) << "\n";
    mf.close();
    if (!mf) throw std::runtime_error("generate_dataset: failed writing manifest.json");
    return man;
}

Dataset Dataset::open(const std::string& dir) {
    fs::path root(dir);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw std::runtime_error("Dataset::open: no manifest.json in " + dir);
    json mj = json::parse(mf);
    Dataset d;
    d.root = dir;
    d.spec = WorldSpec::from_json(mj.at("world_spec"));
    d.manifest.spec_hash = std::stoull(mj.at("spec_hash").get<std::string>(), nullptr, 16);
    if (d.manifest.spec_hash != d.spec.hash())
        throw std::runtime_error("Dataset::open: manifest hash does not match world spec");
    d.manifest.box = box_from_json(mj.at("box"));
    d.manifest.count = mj.at("count");
    d.manifest.files = mj.at("files").get<std::vector<std::string>>();
    d.manifest.vocabulary = mj.at("vocabulary").get<std::vector<std::string>>();
    d.manifest.mode = mj.at("mode") == "city" ? Mode::City : Mode::Landmark;
    d.manifest.image_size = mj.at("image_size");

    std::ifstream jsonl(root / "samples.jsonl");
    if (!jsonl) throw std::runtime_error("Dataset::open: no samples.jsonl in " + dir);
    std::string line;
    while (std::getline(jsonl, line)) {
        if (line.empty()) continue;
        json lj = json::parse(line);
        SampleMeta m;
        m.file = lj.at("file");
        m.tag = {lj.at("lon"), lj.at("lat")};
        m.caption = lj.at("caption").get<std::vector<std::string>>();
        m.azimuth_bin = lj.value("azimuth_bin", -1);
        d.metas.push_back(std::move(m));
    }
    if (static_cast<int>(d.metas.size()) != d.manifest.count)
        throw std::runtime_error("Dataset::open: sample count mismatch");
    return d;
}

Image Dataset::load_image(size_t i) const {
    return read_png((fs::path(root) / metas.at(i).file).string());
}

}  // namespace gpsgen::worldgen
