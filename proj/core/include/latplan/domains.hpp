#pragma once

// Procedural image domains (LightsOut, Twisted LightsOut, sliding tile,
// Towers of Hanoi), transition datasets and planning-instance sampling.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "latplan/common/normalization.hpp"
#include "latplan/common/rng.hpp"
#include "latplan/networks.hpp"

namespace latplan::domains {

using ad::Matrix;
using ad::RowVector;

enum class DomainKind { lights_out, twisted_lights_out, sliding_tile, hanoi };

std::string to_string(DomainKind k);
DomainKind domain_kind_from_string(const std::string& s);

struct SwirlParams {
  double strength = 3.0;
  double radius_factor = 0.75;  ///< radius = factor * image side
};

struct DomainSpec {
  DomainKind kind = DomainKind::lights_out;
  int n = 3;             ///< LightsOut side
  int cell = 9;          ///< LightsOut cell size in pixels
  int rows = 3;          ///< sliding tile grid
  int cols = 3;
  int tile = 12;         ///< sliding tile patch size in pixels
  std::string atlas;     ///< optional tile atlas image (PGM), one tile per column block
  int disks = 3;         ///< Hanoi
  int towers = 3;
  int disk_height = 1;
  int disk_width = 4;
  SwirlParams swirl;

  void validate() const;
  nlohmann::json to_json() const;
  static DomainSpec from_json(const nlohmann::json& j);
};

/// Compact ground-truth state: LightsOut cell bits (row-major), the tile id at
/// each board position (0 = blank), or the tower index of each Hanoi disk
/// (disk 0 is the smallest).
using Config = std::vector<int>;

/// Grid geometry used by renderers and validators: the image is a
/// grid_rows x grid_cols array of patch_h x patch_w patches.
struct PatchGeometry {
  int grid_rows = 0;
  int grid_cols = 0;
  int patch_h = 0;
  int patch_w = 0;
  int channels = 1;
};

class Domain {
 public:
  explicit Domain(DomainSpec spec) : spec_(std::move(spec)) {}
  virtual ~Domain() = default;

  const DomainSpec& spec() const { return spec_; }
  virtual nn::Shape image_shape() const = 0;
  virtual PatchGeometry geometry() const = 0;

  /// Pixel values in [0, 1], channel-major (C, H, W).
  virtual std::vector<double> render(const Config& c) const = 0;
  virtual std::vector<Config> neighbors(const Config& c) const = 0;
  virtual Config goal() const = 0;
  /// Uniform over valid states.
  virtual Config sample_state(Rng& rng) const = 0;
  virtual bool valid(const Config& c) const = 0;
  virtual std::uint64_t num_states() const = 0;
  /// Ground-truth patch patterns (each patch_h * patch_w * channels values,
  /// channel-major within the patch). Pattern 0 is the empty / off patch.
  virtual std::vector<std::vector<double>> patterns() const = 0;

  std::uint64_t key(const Config& c) const;

 protected:
  DomainSpec spec_;
};

std::unique_ptr<Domain> make_domain(const DomainSpec& spec);

// ---- image transforms ----

/// Inverse-mapped swirl with bilinear sampling and mirror-reflected borders:
/// the source of output pixel (r, theta) about (W/2, H/2) is
/// (r, theta + strength * exp(-r / (ln 2 * radius / 5))). A negative strength
/// undoes a positive one.
std::vector<double> swirl(const std::vector<double>& image, nn::Shape shape, double strength, double radius);

/// Extracts patch (gr, gc) from an image.
std::vector<double> extract_patch(const std::vector<double>& image, nn::Shape shape, const PatchGeometry& g,
                                  int gr, int gc);

// ---- datasets ----

struct TransitionDataset {
  DomainSpec spec;
  nn::Shape shape;
  Matrix raw0;  ///< N x D pre-transition images in [0, 1]
  Matrix raw1;
  std::vector<Config> config0;
  std::vector<Config> config1;
  Normalization norm;
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  Eigen::Index size() const { return raw0.rows(); }
};

/// Uniform state, uniform successor; then 90/5/5 split and normalization fit
/// on the training split.
TransitionDataset sample_transitions(const Domain& domain, int count, Rng& rng);

/// Random disjoint split with the given fractions of train and val.
void split_dataset(TransitionDataset& ds, Rng& rng, double train_frac = 0.9, double val_frac = 0.05);

inline constexpr const char* kDatasetFormat = "latplan-dataset";
inline constexpr int kDatasetVersion = 1;

void save_dataset(const TransitionDataset& ds, const std::filesystem::path& path);
TransitionDataset load_dataset(const std::filesystem::path& path);

// ---- planning instances ----

struct Instance {
  Config init;
  Config goal;
  int g = 0;
};

/// Breadth-first distances from `goal` up to depth `max_depth`; returns the
/// layers (layer k = states at distance exactly k).
std::vector<std::vector<Config>> distance_layers(const Domain& domain, const Config& goal, int max_depth);

/// Draws `count` initial states from the exact-g frontier of a backward
/// search from the canonical goal, without replacement while possible.
/// Throws ConfigError naming the largest available g when the frontier is empty.
std::vector<Instance> sample_instances(const Domain& domain, int g, int count, Rng& rng);

/// Shortest path length between two states by breadth-first search, or -1.
int bfs_distance(const Domain& domain, const Config& from, const Config& to, int max_depth = 64);

/// Adds N(0, sigma) to every entry.
Matrix corrupt(const Matrix& images, double sigma, Rng& rng);

inline constexpr const char* kInstancesFormat = "latplan-instances";
inline constexpr int kInstancesVersion = 1;

void save_instances(const DomainSpec& spec, const std::vector<Instance>& instances,
                    const std::filesystem::path& path);
std::vector<Instance> load_instances(const std::filesystem::path& path, DomainSpec* spec = nullptr);

}  // namespace latplan::domains
