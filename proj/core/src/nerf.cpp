#include "gpsgen/nerf.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace gpsgen::nerf {

using ag::Var;

// ---- field ----

RadianceField::RadianceField(const NerfConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    int in = 3 * geo::encode_dim(cfg.frequencies);
    for (int i = 0; i < cfg.trunk_layers; ++i) {
        trunk_.emplace_back(ps_, "trunk" + std::to_string(i), i == 0 ? in : cfg.width, cfg.width,
                            rng);
    }
    density_head_ = nn::Linear(ps_, "density", cfg.width, 1, rng);
    color_head_ = nn::Linear(ps_, "color", cfg.width, 3, rng);
}

Tensor RadianceField::encode(const Tensor& points) const {
    if (points.rank() != 2 || points.dim(1) != 3)
        throw std::invalid_argument("RadianceField: points must be [P,3]");
    int p = points.dim(0);
    int d = geo::encode_dim(cfg_.frequencies);
    Tensor enc({p, 3 * d});
    for (int i = 0; i < p; ++i)
        for (int axis = 0; axis < 3; ++axis) {
            auto e = geo::positional_encode(points[i * 3 + axis] / cfg_.bound, cfg_.frequencies);
            std::copy(e.begin(), e.end(), enc.data.begin() + static_cast<int64_t>(i) * 3 * d +
                                              static_cast<int64_t>(axis) * d);
        }
    return enc;
}

std::pair<Var, Var> RadianceField::query(const Tensor& points) const {
    Var h = ag::constant(encode(points));
    for (const auto& l : trunk_) h = ag::silu(l(h));
    Var sigma = ag::softplus(ag::add_scalar(density_head_(h), cfg_.density_bias));
    Var color = ag::sigmoid(color_head_(h));
    return {sigma, color};
}

std::vector<float> RadianceField::density_at(const Tensor& points) const {
    ag::NoGradGuard ng;
    Var sigma = query(points).first;
    return {sigma->value.data.begin(), sigma->value.data.end()};
}

// ---- rendering ----

ag::Var composite_weights(const ag::Var& sigma_rs, const Tensor& deltas_rs) {
    if (!sigma_rs->value.same_shape(deltas_rs))
        throw std::invalid_argument("composite_weights: shape mismatch");
    Var sdt = ag::mul(sigma_rs, ag::constant(deltas_rs));
    Var transmittance = ag::exp_v(ag::neg(ag::cumsum_excl_rows(sdt)));
    Var alpha = ag::add_scalar(ag::neg(ag::exp_v(ag::neg(sdt))), 1.0f);
    return ag::mul(transmittance, alpha);
}

RenderOutput render(const RadianceField& field, const CameraPose& pose, int samples_per_ray) {
    if (samples_per_ray < 2) throw std::invalid_argument("render: samples_per_ray must be >= 2");
    const int res = pose.resolution, s = samples_per_ray;
    const int r = res * res;
    const double rb = field.config().bound * std::sqrt(3.0);
    const double near = std::max(0.05, pose.radius - rb);
    const double far = pose.radius + rb;
    if (far <= near) throw std::invalid_argument("render: degenerate near/far");
    const double delta = (far - near) / s;

    // camera frame matching the analytic landmark renderer
    double a = pose.azimuth_deg * M_PI / 180.0;
    double e = pose.elevation_deg * M_PI / 180.0;
    double ox = std::sin(a) * std::cos(e) * pose.radius;
    double oy = std::cos(a) * std::cos(e) * pose.radius;
    double oz = std::sin(e) * pose.radius;
    double fn = std::sqrt(ox * ox + oy * oy + oz * oz);
    double fx = -ox / fn, fy = -oy / fn, fz = -oz / fn;
    double rx = fy, ry = -fx, rz = 0.0;  // cross(fwd, +z)
    double rn = std::sqrt(rx * rx + ry * ry);
    rx /= rn;
    ry /= rn;
    double ux = ry * fz - rz * fy, uy = rz * fx - rx * fz, uz = rx * fy - ry * fx;  // cross(right, fwd)
    double tan_half = std::tan(pose.fov_deg * 0.5 * M_PI / 180.0);

    RenderOutput out;
    out.resolution = res;
    out.samples = s;
    out.dirs = Tensor({r, 3});
    out.points = Tensor({r * s, 3});
    out.deltas = Tensor::full({r, s}, static_cast<float>(delta));
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            double u = (2.0 * (x + 0.5) / res - 1.0) * tan_half;
            double v = (1.0 - 2.0 * (y + 0.5) / res) * tan_half;
            double dx = fx + rx * u + ux * v;
            double dy = fy + ry * u + uy * v;
            double dz = fz + rz * u + uz * v;
            double dn = std::sqrt(dx * dx + dy * dy + dz * dz);
            dx /= dn;
            dy /= dn;
            dz /= dn;
            int ray = y * res + x;
            out.dirs[ray * 3 + 0] = static_cast<float>(dx);
            out.dirs[ray * 3 + 1] = static_cast<float>(dy);
            out.dirs[ray * 3 + 2] = static_cast<float>(dz);
            for (int i = 0; i < s; ++i) {
                double t = near + (i + 0.5) * delta;
                int64_t row = static_cast<int64_t>(ray) * s + i;
                out.points[row * 3 + 0] = static_cast<float>(ox + t * dx);
                out.points[row * 3 + 1] = static_cast<float>(oy + t * dy);
                out.points[row * 3 + 2] = static_cast<float>(oz + t * dz);
            }
        }

    auto [sigma, color] = field.query(out.points);           // [r*s,1], [r*s,3]
    Var sigma_rs = ag::reshape(sigma, {r, s});
    out.weights = composite_weights(sigma_rs, out.deltas);   // [r,s]
    out.opacity = ag::sum_rows(out.weights);                 // [r,1]
    Var w_flat = ag::reshape(out.weights, {r * s, 1});
    Var fg = ag::segment_sum_rows(ag::scale_rows(color, w_flat), s);  // [r,3]
    Var bg = ag::scale_rows(ag::constant(Tensor::full({r, 3}, 1.0f)),
                            ag::add_scalar(ag::neg(out.opacity), 1.0f));
    out.rgb = ag::add(fg, bg);

    out.depth = Tensor({r, 1});
    for (int ray = 0; ray < r; ++ray) {
        float d = 0.0f;
        for (int i = 0; i < s; ++i)
            d += out.weights->value[static_cast<int64_t>(ray) * s + i] *
                 static_cast<float>(near + (i + 0.5) * delta);
        out.depth[ray] = d;
    }
    return out;
}

Image RenderOutput::image() const {
    Image img(resolution, resolution);
    for (size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = std::min(1.0f, std::max(0.0f, rgb->value[static_cast<int64_t>(i)]));
    return img;
}

Tensor RenderOutput::rgb_tensor() const {
    Tensor t({resolution, resolution, 3});
    t.data = rgb->value.data;
    return t;
}

// ---- regularizers ----

ag::Var orientation_reg(const RadianceField& field, const RenderOutput& out, int ray_stride) {
    if (ray_stride < 1) throw std::invalid_argument("orientation_reg: stride must be >= 1");
    const int r = out.resolution * out.resolution, s = out.samples;
    std::vector<int> rays;
    for (int ray = 0; ray < r; ray += ray_stride) rays.push_back(ray);
    const int nsub = static_cast<int>(rays.size());
    const int p = nsub * s;
    const float eps = static_cast<float>(0.01 * field.config().bound);

    // one batched query: base points then the three axis-shifted copies
    Tensor pts({4 * p, 3});
    Tensor dcomp[3] = {Tensor({p, 1}), Tensor({p, 1}), Tensor({p, 1})};
    std::vector<int> widx;
    widx.reserve(static_cast<size_t>(p));
    for (int i = 0; i < nsub; ++i)
        for (int j = 0; j < s; ++j) {
            int64_t src = static_cast<int64_t>(rays[static_cast<size_t>(i)]) * s + j;
            int64_t dst = static_cast<int64_t>(i) * s + j;
            widx.push_back(static_cast<int>(src));
            for (int axis = 0; axis < 3; ++axis) {
                float base = out.points[src * 3 + axis];
                pts[dst * 3 + axis] = base;
                for (int shift = 0; shift < 3; ++shift)
                    pts[(static_cast<int64_t>(shift + 1) * p + dst) * 3 + axis] =
                        base + (shift == axis ? eps : 0.0f);
                dcomp[axis][dst] = out.dirs[static_cast<int64_t>(rays[static_cast<size_t>(i)]) * 3 + axis];
            }
        }

    Var sigma = field.query(pts).first;  // [4p,1]
    Var s0 = ag::slice_rows(sigma, 0, p);
    Var g[3];
    for (int axis = 0; axis < 3; ++axis)
        g[axis] = ag::scale(ag::sub(ag::slice_rows(sigma, static_cast<int64_t>(axis + 1) * p, p), s0),
                            1.0f / eps);

    Var gdotd = ag::add(ag::add(ag::mul(g[0], ag::constant(dcomp[0])),
                                ag::mul(g[1], ag::constant(dcomp[1]))),
                        ag::mul(g[2], ag::constant(dcomp[2])));
    Var gnorm = ag::sqrt_v(ag::add_scalar(
        ag::add(ag::add(ag::square(g[0]), ag::square(g[1])), ag::square(g[2])), 1e-8f));
    // normal = -grad/|grad|; penalize the component facing away from the camera
    Var ndotd = ag::mul(ag::neg(gdotd), ag::exp_v(ag::neg(ag::log_v(gnorm))));
    Var penalty = ag::square(ag::relu(ndotd));

    Var w_flat = ag::reshape(out.weights, {r * s, 1});
    Var w = ag::gather_rows(w_flat, widx);
    return ag::scale(ag::sum_all(ag::mul(w, penalty)), 1.0f / static_cast<float>(nsub));
}

namespace {

// x * log x with 0 log 0 = 0 (clamp only inside the log)
ag::Var plogp(const Var& x) { return ag::mul(x, ag::log_v(ag::clamp(x, 1e-6f, 1.0f))); }

}  // namespace

ag::Var opacity_reg(const RenderOutput& out) {
    Var o = out.opacity;
    Var h = ag::neg(ag::add(plogp(o), plogp(ag::add_scalar(ag::neg(o), 1.0f))));
    return ag::mean_all(h);
}

// ---- density export ----

OccupancyGrid export_density_fn(const std::function<float(double, double, double)>& density,
                                int resolution, double bound, float threshold) {
    if (resolution < 8) throw std::invalid_argument("export_density: resolution must be >= 8");
    OccupancyGrid g;
    g.resolution = resolution;
    g.bound = bound;
    g.threshold = threshold;
    g.voxels.assign(static_cast<size_t>(resolution) * resolution * resolution, 0);
    for (int iz = 0; iz < resolution; ++iz)
        for (int iy = 0; iy < resolution; ++iy)
            for (int ix = 0; ix < resolution; ++ix) {
                double x = -bound + (2.0 * bound) * (ix + 0.5) / resolution;
                double y = -bound + (2.0 * bound) * (iy + 0.5) / resolution;
                double z = -bound + (2.0 * bound) * (iz + 0.5) / resolution;
                if (density(x, y, z) > threshold)
                    g.voxels[(static_cast<size_t>(iz) * resolution + iy) * resolution + ix] = 1;
            }
    return g;
}

OccupancyGrid export_density(const RadianceField& field, int resolution, float threshold) {
    if (resolution < 8) throw std::invalid_argument("export_density: resolution must be >= 8");
    const double bound = field.config().bound;
    OccupancyGrid g;
    g.resolution = resolution;
    g.bound = bound;
    g.threshold = threshold;
    g.voxels.assign(static_cast<size_t>(resolution) * resolution * resolution, 0);
    // one z-slab of points per query keeps the peak tensor size modest
    for (int iz = 0; iz < resolution; ++iz) {
        Tensor pts({resolution * resolution, 3});
        for (int iy = 0; iy < resolution; ++iy)
            for (int ix = 0; ix < resolution; ++ix) {
                int64_t row = static_cast<int64_t>(iy) * resolution + ix;
                pts[row * 3 + 0] = static_cast<float>(-bound + (2.0 * bound) * (ix + 0.5) / resolution);
                pts[row * 3 + 1] = static_cast<float>(-bound + (2.0 * bound) * (iy + 0.5) / resolution);
                pts[row * 3 + 2] = static_cast<float>(-bound + (2.0 * bound) * (iz + 0.5) / resolution);
            }
        auto dens = field.density_at(pts);
        for (size_t i = 0; i < dens.size(); ++i)
            if (dens[i] > threshold)
                g.voxels[static_cast<size_t>(iz) * resolution * resolution + i] = 1;
    }
    return g;
}

double occupancy_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("occupancy_iou: size mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] && b[i]) ++inter;
        if (a[i] || b[i]) ++uni;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void save_occupancy(const OccupancyGrid& g, const std::string& path) {
    json header{{"resolution", g.resolution}, {"bound", g.bound}, {"threshold", g.threshold}};
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_occupancy: cannot open " + path);
    f << header.dump() << "\n";
    f.write(reinterpret_cast<const char*>(g.voxels.data()),
            static_cast<std::streamsize>(g.voxels.size()));
    if (!f) throw std::runtime_error("save_occupancy: write failed for " + path);
}

OccupancyGrid load_occupancy(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_occupancy: cannot open " + path);
    std::string line;
    std::getline(f, line);
    json header = json::parse(line);
    OccupancyGrid g;
    g.resolution = header.at("resolution");
    g.bound = header.at("bound");
    g.threshold = header.at("threshold");
    size_t n = static_cast<size_t>(g.resolution) * g.resolution * g.resolution;
    g.voxels.resize(n);
    f.read(reinterpret_cast<char*>(g.voxels.data()), static_cast<std::streamsize>(n));
    if (f.gcount() != static_cast<std::streamsize>(n))
        throw std::runtime_error("load_occupancy: truncated voxel data in " + path);
    return g;
}

}  // namespace gpsgen::nerf
