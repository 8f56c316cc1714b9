#pragma once

#include <functional>
#include <string>

#include "gpsgen/geo.hpp"
#include "gpsgen/image.hpp"
#include "gpsgen/nn.hpp"

namespace gpsgen::nerf {

struct CameraPose {
    double azimuth_deg = 0.0;    // (-180, 180], north = 0, east = 90
    double elevation_deg = 0.0;  // below horizon is negative
    double radius = 3.0;         // orbit radius, scene units
    double fov_deg = 45.0;
    int resolution = 64;
};

struct NerfConfig {
    int width = 32;            // hidden width of the coordinate MLP
    int trunk_layers = 3;
    int frequencies = 6;       // Fourier frequencies per axis
    double bound = 1.5;        // scene half-extent; rays clip to the bound sphere
    float density_bias = -1.0f;  // pre-softplus shift so the field starts mostly empty
};

/// Differentiable render of one camera. `rgb`/`opacity`/`weights` stay on the
/// autograd tape; geometry buffers (points, dirs, depth) are plain data.
struct RenderOutput {
    int resolution = 0;
    int samples = 0;
    ag::Var rgb;      // [R,3], R = resolution^2, rows in image scan order
    ag::Var opacity;  // [R,1], sum of weights per ray
    ag::Var weights;  // [R,S]
    Tensor depth;     // [R,1], expected termination distance (value-only)
    Tensor points;    // [R*S,3] sample positions
    Tensor dirs;      // [R,3] unit ray directions
    Tensor deltas;    // [R*S,1] quadrature widths

    Image image() const;       // clamp to [0,1]
    Tensor rgb_tensor() const; // [res,res,3] value copy
};

/// Coordinate MLP: position -> (density >= 0, color in [0,1]^3).
class RadianceField {
  public:
    RadianceField(const NerfConfig& cfg, uint64_t seed);

    /// points: [P,3] plain data. Returns (sigma [P,1], color [P,3]) on the tape.
    std::pair<ag::Var, ag::Var> query(const Tensor& points) const;
    /// Density only, no tape (exports / oracles).
    std::vector<float> density_at(const Tensor& points) const;

    const NerfConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return ps_; }
    const nn::ParamStore& params() const { return ps_; }

  private:
    Tensor encode(const Tensor& points) const;  // [P, 3*(2F+1)]

    NerfConfig cfg_;
    nn::ParamStore ps_;
    std::vector<nn::Linear> trunk_;
    nn::Linear density_head_, color_head_;
};

/// w_i = T_i (1 - e^{-sigma_i delta_i}) per row, T_i = exp(-sum_{j<i} sigma_j delta_j).
ag::Var composite_weights(const ag::Var& sigma_rs, const Tensor& deltas_rs);

/// Quadrature volume rendering with white background. Sample positions are the
/// midpoints of `samples_per_ray` even segments of the ray's bound-sphere span.
RenderOutput render(const RadianceField& field, const CameraPose& pose, int samples_per_ray);

/// Penalizes density normals (negative finite-difference density gradient)
/// that face away from the camera, weighted by rendering weights.
/// `ray_stride` > 1 subsamples rays to bound the cost.
ag::Var orientation_reg(const RadianceField& field, const RenderOutput& out, int ray_stride = 1);

/// Mean binary entropy of per-ray opacity: zero at opacity 0 or 1, maximum
/// ln 2 at 0.5.
ag::Var opacity_reg(const RenderOutput& out);

struct OccupancyGrid {
    int resolution = 0;
    double bound = 0.0;
    float threshold = 0.0f;
    std::vector<uint8_t> voxels;  // index = (iz*res + iy)*res + ix, cell centers
};

/// Density thresholded on a regular grid over [-bound, bound]^3 (same layout
/// as worldgen::landmark_occupancy_grid).
OccupancyGrid export_density(const RadianceField& field, int resolution, float threshold = 5.0f);
/// Same sampling for an arbitrary density function (test oracles).
OccupancyGrid export_density_fn(const std::function<float(double, double, double)>& density,
                                int resolution, double bound, float threshold);

double occupancy_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

/// Flat binary voxels with a JSON sidecar header (resolution, bound, threshold).
void save_occupancy(const OccupancyGrid& g, const std::string& path);
OccupancyGrid load_occupancy(const std::string& path);

}  // namespace gpsgen::nerf
