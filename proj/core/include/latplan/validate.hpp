#pragma once

// Ground-truth plan validators: patch matching against the generators' tile
// patterns, per-domain state and transition rules, plan verdicts and trace
// visualization.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latplan/common/image_io.hpp"
#include "latplan/common/rng.hpp"
#include "latplan/domains.hpp"
#include "latplan/models.hpp"

namespace latplan::validate {

using ad::Matrix;
using domains::Config;
using Image = std::vector<double>;

/// Mean absolute error of every patch (rows, row-major over the grid)
/// against every pattern (columns).
Matrix patch_distances(const Image& image, nn::Shape shape, const domains::PatchGeometry& geometry,
                       const std::vector<Image>& patterns);

struct MatchCounts {
  int ambiguous = 0;  ///< n1: patches within theta of two or more patterns
  int unmatched = 0;  ///< n2: patches within theta of none
};

MatchCounts count_matches(const Matrix& distances, double theta);

struct ThresholdSearch {
  double theta = 0.0;
  int iterations = 0;
  MatchCounts counts;
};

/// Bisection of theta over [0, 0.5]: raised while n1 < n2, lowered while
/// n1 > n2, stopping once |n1 - n2| <= 1 or after `max_iterations`.
ThresholdSearch search_threshold(const Matrix& distances, int max_iterations = 30);

/// Nearest pattern of each patch when within theta, else -1.
std::vector<int> assign_patterns(const Matrix& distances, double theta);

struct ImageParse {
  std::vector<int> patches;  ///< pattern id per patch, -1 when unresolved
  Config config;             ///< domain configuration; empty when the image is invalid
  MatchCounts counts;
  double theta = 0.0;
  int iterations = 0;
  bool valid = false;
  std::string reason;
};

struct TraceCheck {
  std::vector<ImageParse> states;
  bool valid = true;
  int failure_step = -1;  ///< image index for a state failure, source index for a transition failure
  std::string reason;
};

class Validator {
 public:
  virtual ~Validator() = default;

  /// Parses an image in the generator's [0, 1] range.
  virtual ImageParse parse(const Image& image) const = 0;
  /// Empty when `to` is a legal successor of `from`, else the violated rule.
  virtual std::string check_transition(const Config& from, const Config& to) const = 0;

  /// States first, then consecutive transitions; stops at the first failure.
  TraceCheck check_trace(const std::vector<Image>& images) const;
};

/// Sliding tile: theta search per image, an invalid image has n1 != 0 and
/// n2 != 0 or does not parse to a permutation of the tiles; a transition
/// swaps the blank with a grid-adjacent tile.
class TileValidator : public Validator {
 public:
  explicit TileValidator(const domains::Domain& domain);
  ImageParse parse(const Image& image) const override;
  std::string check_transition(const Config& from, const Config& to) const override;

 private:
  nn::Shape shape_;
  domains::PatchGeometry geometry_;
  std::vector<Image> patterns_;
};

/// LightsOut: fixed threshold (0.01, or 0.04 after unswirling a twisted
/// image); every cell must match exactly one of the on/off patterns; a
/// transition toggles exactly one button's plus-shaped mask. Twisted boards
/// are matched against references that went through the same swirl and
/// unswirl, so bilinear resampling loss is not counted as error.
class LightsOutValidator : public Validator {
 public:
  explicit LightsOutValidator(const domains::Domain& domain);
  ImageParse parse(const Image& image) const override;
  std::string check_transition(const Config& from, const Config& to) const override;

  double threshold() const { return threshold_; }

 private:
  bool twisted() const;
  Image unswirl(const Image& image) const;

  domains::DomainSpec spec_;
  nn::Shape shape_;
  domains::PatchGeometry geometry_;
  std::vector<Image> patterns_;
  double threshold_;
  std::vector<std::vector<int>> masks_;
  std::vector<std::vector<Image>> references_;  ///< per cell: off, on
};

/// Towers of Hanoi: tile matching against the disk colours; each disk
/// appears once, stacks rest on the floor without gaps and every disk sits
/// on a larger one; a transition moves one top disk onto a larger disk or
/// an empty tower.
class HanoiValidator : public Validator {
 public:
  explicit HanoiValidator(const domains::Domain& domain);
  ImageParse parse(const Image& image) const override;
  std::string check_transition(const Config& from, const Config& to) const override;

 private:
  domains::DomainSpec spec_;
  nn::Shape shape_;
  domains::PatchGeometry geometry_;
  std::vector<Image> patterns_;
};

std::unique_ptr<Validator> make_validator(const domains::Domain& domain);

// ---- mutations ----

/// Image-level corruption of one state of a legal trace that no validator
/// may accept: LightsOut flips one cell, sliding tile overwrites a tile with
/// a copy of another, Hanoi erases one disk.
std::vector<Image> mutate_trace(const domains::Domain& domain, const std::vector<Config>& trace, Rng& rng);

/// Random walk of `steps` legal moves from a uniform state.
std::vector<Config> random_walk(const domains::Domain& domain, int steps, Rng& rng);

// ---- verdicts ----

struct ValidationVerdict {
  bool found = false;
  bool valid = false;
  std::optional<bool> optimal;
  std::optional<int> failure_step;
  std::string failure_reason;
  int plan_length = -1;
  double theta = 0.0;  ///< largest threshold used while parsing the trace
};

/// `trace` holds the decoded images of the plan's states, init first; it is
/// ignored when `found` is false. Valid requires every state and transition
/// to pass and the endpoints to parse to the instance's init and goal.
/// Optimal is set when the instance carries g >= 0.
ValidationVerdict judge(const domains::Instance& instance, bool found, const std::vector<Image>& trace,
                        const Validator& validator);

struct VerdictRow {
  std::string domain;
  std::string model;
  std::string heuristic;
  std::string hyperparameters;
  int instance = 0;
  int g = -1;
  std::string status;  ///< planner status
  std::int64_t expansions = 0;
  ValidationVerdict verdict;
};

void write_verdict_header(std::ostream& out);
void write_verdict_row(std::ostream& out, const VerdictRow& row);

// ---- visualization ----

/// Decodes every latent state, maps it back to the generator's range with
/// the training statistics and clips to [0, 1].
std::vector<Image> visualize(models::StateAutoencoder& model, const Normalization& norm,
                             const std::vector<std::vector<int>>& latents);

/// Writes `prefix`_NNN images plus `prefix`_sheet, upscaled by `scale`.
void write_trace_images(const std::filesystem::path& dir, const std::string& prefix, const std::vector<Image>& images,
                        nn::Shape shape, int scale = 4);

}  // namespace latplan::validate
