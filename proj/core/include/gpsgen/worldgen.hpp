#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gpsgen/geo.hpp"
#include "gpsgen/image.hpp"

namespace gpsgen::worldgen {

enum class Mode { City, Landmark };

enum class TextureKind { Stripes, Checker, Dots, Solid };

struct District {
    // rectangular cell of the bounding-box grid
    double x0, x1, y0, y1;
    std::array<std::array<float, 3>, 3> palette;  // base, secondary, accent
    TextureKind texture = TextureKind::Solid;
    int glyph_style = 0;  // per-district glyph rendering variant
};

struct Primitive {
    enum class Kind { Box, Sphere };
    Kind kind = Kind::Box;
    std::array<double, 3> center{0, 0, 0};
    std::array<double, 3> half{0.5, 0.5, 0.5};  // box half extents
    double radius = 0.5;                        // sphere
    std::array<float, 3> color{0.8f, 0.8f, 0.8f};
};

/// Deterministic synthetic world. Everything downstream (datasets, metrics,
/// oracles) derives from this description, so it doubles as ground truth.
struct WorldSpec {
    Mode mode = Mode::City;
    uint64_t seed = 0;
    int image_size = 32;
    geo::BoundingBox box;
    std::vector<std::string> vocabulary;

    // city
    int grid_x = 0, grid_y = 0;
    std::vector<District> districts;
    double palette_separation = 0.0;  // guaranteed min mean-color distance between districts

    // landmark
    std::vector<Primitive> primitives;
    geo::GeoTag landmark_center;
    double camera_radius = 3.0;
    double fov_deg = 45.0;
    std::string landmark_name = "landmark";

    static WorldSpec make_city(uint64_t seed, int image_size = 32, int grid_x = 3, int grid_y = 3);
    static WorldSpec make_landmark(uint64_t seed, int image_size = 32);

    nlohmann::json to_json() const;
    static WorldSpec from_json(const nlohmann::json& j);
    uint64_t hash() const;

    /// Exact ground-truth district index of a tag (city mode).
    int district_of(const geo::GeoTag& tag) const;
};

struct Sample {
    Image image;
    geo::GeoTag tag;
    std::vector<std::string> caption;
    int azimuth_bin = -1;  // -1 = absent (city mode)
};

class VocabularyError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Pure function of (spec, tag, caption, seed); seeded jitter is at most
/// 2 px translation and 5% brightness. Two corner beacons (see below) encode
/// the exact position and are exempt from jitter.
Sample render_city_sample(const WorldSpec& spec, const geo::GeoTag& tag,
                          const std::vector<std::string>& caption, uint64_t rng_seed);

/// Location beacons: two small square patches drawn last (unjittered) whose
/// colors encode the normalized position (u, v) of the tag within the box.
/// They give city tiles fine-grained location information beyond the district
/// palette — without them, image-to-tag retrieval is capped at district
/// granularity. They sit inside the border ring (so the palette classifier
/// never sees them) and away from the caption corner marks.
struct BeaconRect {
    int x0 = 0, y0 = 0, size = 0;
};
BeaconRect beacon_u_rect(int image_size);  ///< top-right: encodes u = normalized lon
BeaconRect beacon_v_rect(int image_size);  ///< bottom-left: encodes v = normalized lat
std::array<float, 3> beacon_u_color(double u);
std::array<float, 3> beacon_v_color(double v);

/// Pinhole render of the primitive composite from the tag's azimuth; elevation
/// drawn from the seed in [-30°, 0°].
Sample render_landmark_sample(const WorldSpec& spec, const geo::GeoTag& tag, uint64_t rng_seed);

/// Deterministic renderer core: camera on the orbit sphere looking at origin.
Image render_landmark_view(const WorldSpec& spec, double azimuth_deg, double elevation_deg);
/// Hit mask of the same camera (1 = primitive, 0 = background).
std::vector<uint8_t> landmark_silhouette(const WorldSpec& spec, double azimuth_deg,
                                         double elevation_deg);

/// True if the point is inside any primitive (analytic occupancy oracle).
bool landmark_occupied(const WorldSpec& spec, double x, double y, double z);
/// Analytic occupancy on a regular grid over [-bound, bound]^3.
std::vector<uint8_t> landmark_occupancy_grid(const WorldSpec& spec, int resolution, double bound);
/// Scene bound: radius of a cube guaranteed to contain all primitives.
double landmark_scene_bound(const WorldSpec& spec);

/// Renders all 36 bin-center azimuths and checks pairwise distinctness.
bool check_azimuth_asymmetry(const WorldSpec& spec);

/// Expected mean rendered color of a district's background (no glyph, no jitter).
std::array<float, 3> district_mean_color(const District& d, int image_size);
/// Nearest-palette ground-truth classifier: image -> district index.
int classify_by_palette(const WorldSpec& spec, const Image& img);

struct SampleMeta {
    std::string file;
    geo::GeoTag tag;
    std::vector<std::string> caption;
    int azimuth_bin = -1;
};

struct DatasetManifest {
    uint64_t spec_hash = 0;
    geo::BoundingBox box;
    int count = 0;
    std::vector<std::string> files;
    std::vector<std::string> vocabulary;
    Mode mode = Mode::City;
    int image_size = 32;
};

/// Writes n samples + samples.jsonl, then manifest.json last (a directory with
/// a manifest is complete by construction).
DatasetManifest generate_dataset(const WorldSpec& spec, int n, const std::string& out_dir,
                                 uint64_t seed);

/// On-disk dataset handle; images are loaded lazily.
struct Dataset {
    std::string root;
    WorldSpec spec;
    DatasetManifest manifest;
    std::vector<SampleMeta> metas;

    static Dataset open(const std::string& dir);
    Image load_image(size_t i) const;
    size_t size() const { return metas.size(); }
};

}  // namespace gpsgen::worldgen
