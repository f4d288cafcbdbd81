#include "latplan/validate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "latplan/common/error.hpp"

namespace latplan::validate {

namespace {

constexpr double kLightsOutThreshold = 0.01;
constexpr double kTwistedThreshold = 0.04;

std::string step_text(const std::string& what, int i) { return what + " " + std::to_string(i); }

std::string clean(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
  return s;
}

void put_patch(Image& image, nn::Shape shape, const domains::PatchGeometry& g, int gr, int gc, const Image& patch) {
  const int area = g.patch_h * g.patch_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < g.patch_h; ++y) {
      for (int x = 0; x < g.patch_w; ++x) {
        const int row = gr * g.patch_h + y;
        const int col = gc * g.patch_w + x;
        image[static_cast<std::size_t>((c * shape.height + row) * shape.width + col)] = patch[c * area + y * g.patch_w + x];
      }
    }
  }
}

// Parse via the theta search shared by the tile and Hanoi validators.
ImageParse searched_parse(const Image& image, nn::Shape shape, const domains::PatchGeometry& g,
                          const std::vector<Image>& patterns) {
  if (static_cast<int>(image.size()) != shape.size()) throw ConfigError("validator: image size does not match the domain");
  const Matrix d = patch_distances(image, shape, g, patterns);
  const auto s = search_threshold(d);
  ImageParse p;
  p.theta = s.theta;
  p.iterations = s.iterations;
  p.counts = s.counts;
  p.patches = assign_patterns(d, s.theta);
  if (s.counts.ambiguous != 0 && s.counts.unmatched != 0) {
    p.reason = "ambiguous and unmatched patches (n1=" + std::to_string(s.counts.ambiguous) +
               ", n2=" + std::to_string(s.counts.unmatched) + ")";
    return p;
  }
  const auto bad = std::find(p.patches.begin(), p.patches.end(), -1);
  if (bad != p.patches.end()) {
    p.reason = step_text("unmatched patch", static_cast<int>(bad - p.patches.begin()));
    return p;
  }
  p.valid = true;
  return p;
}

}  // namespace

Matrix patch_distances(const Image& image, nn::Shape shape, const domains::PatchGeometry& geometry,
                       const std::vector<Image>& patterns) {
  const int n = geometry.grid_rows * geometry.grid_cols;
  Matrix d(n, static_cast<Eigen::Index>(patterns.size()));
  for (int p = 0; p < n; ++p) {
    const auto patch = domains::extract_patch(image, shape, geometry, p / geometry.grid_cols, p % geometry.grid_cols);
    for (std::size_t k = 0; k < patterns.size(); ++k) {
      double e = 0.0;
      for (std::size_t i = 0; i < patch.size(); ++i) e += std::abs(patch[i] - patterns[k][i]);
      d(p, static_cast<Eigen::Index>(k)) = e / static_cast<double>(patch.size());
    }
  }
  return d;
}

MatchCounts count_matches(const Matrix& distances, double theta) {
  MatchCounts c;
  for (Eigen::Index p = 0; p < distances.rows(); ++p) {
    const auto hits = (distances.row(p).array() <= theta).count();
    if (hits == 0) ++c.unmatched;
    if (hits > 1) ++c.ambiguous;
  }
  return c;
}

ThresholdSearch search_threshold(const Matrix& distances, int max_iterations) {
  double lo = 0.0, hi = 0.5;
  ThresholdSearch s;
  for (int it = 1; it <= max_iterations; ++it) {
    s.theta = 0.5 * (lo + hi);
    s.iterations = it;
    s.counts = count_matches(distances, s.theta);
    const int n1 = s.counts.ambiguous, n2 = s.counts.unmatched;
    if (std::abs(n1 - n2) <= 1) break;
    if (n1 < n2) lo = s.theta;
    else hi = s.theta;
  }
  return s;
}

std::vector<int> assign_patterns(const Matrix& distances, double theta) {
  std::vector<int> out(static_cast<std::size_t>(distances.rows()), -1);
  for (Eigen::Index p = 0; p < distances.rows(); ++p) {
    Eigen::Index best = 0;
    const double v = distances.row(p).minCoeff(&best);
    if (v <= theta) out[p] = static_cast<int>(best);
  }
  return out;
}

TraceCheck Validator::check_trace(const std::vector<Image>& images) const {
  TraceCheck t;
  for (std::size_t i = 0; i < images.size(); ++i) {
    t.states.push_back(parse(images[i]));
    if (!t.states.back().valid && t.valid) {
      t.valid = false;
      t.failure_step = static_cast<int>(i);
      t.reason = "state " + std::to_string(i) + ": " + t.states.back().reason;
    }
  }
  if (!t.valid) return t;
  for (std::size_t i = 0; i + 1 < images.size(); ++i) {
    const auto why = check_transition(t.states[i].config, t.states[i + 1].config);
    if (!why.empty()) {
      t.valid = false;
      t.failure_step = static_cast<int>(i);
      t.reason = "transition " + std::to_string(i) + ": " + why;
      break;
    }
  }
  return t;
}

// ---- sliding tile ----

TileValidator::TileValidator(const domains::Domain& domain)
    : shape_(domain.image_shape()), geometry_(domain.geometry()), patterns_(domain.patterns()) {}

ImageParse TileValidator::parse(const Image& image) const {
  ImageParse p = searched_parse(image, shape_, geometry_, patterns_);
  if (!p.valid) return p;
  std::vector<int> seen(patterns_.size(), 0);
  for (std::size_t i = 0; i < p.patches.size(); ++i) {
    if (seen[p.patches[i]]++) {
      p.valid = false;
      p.reason = "duplicate tile " + std::to_string(p.patches[i]) + " at position " + std::to_string(i);
      return p;
    }
  }
  p.config = p.patches;
  return p;
}

std::string TileValidator::check_transition(const Config& from, const Config& to) const {
  std::vector<int> changed;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i] != to[i]) changed.push_back(static_cast<int>(i));
  }
  if (changed.size() != 2) return std::to_string(changed.size()) + " tiles changed";
  const int a = changed[0], b = changed[1];
  if (from[a] != to[b] || from[b] != to[a]) return "tiles are not swapped";
  const int cols = geometry_.grid_cols;
  if (std::abs(a / cols - b / cols) + std::abs(a % cols - b % cols) != 1) return "swapped tiles are not adjacent";
  if (from[a] != 0 && from[b] != 0) return "no blank tile moved";
  return {};
}

// ---- lights out ----

LightsOutValidator::LightsOutValidator(const domains::Domain& domain)
    : spec_(domain.spec()),
      shape_(domain.image_shape()),
      geometry_(domain.geometry()),
      patterns_(domain.patterns()),
      threshold_(spec_.kind == domains::DomainKind::twisted_lights_out ? kTwistedThreshold : kLightsOutThreshold) {
  const int n = spec_.n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      std::vector<int> m(static_cast<std::size_t>(n * n), 0);
      m[r * n + c] = 1;
      if (r > 0) m[(r - 1) * n + c] = 1;
      if (r + 1 < n) m[(r + 1) * n + c] = 1;
      if (c > 0) m[r * n + c - 1] = 1;
      if (c + 1 < n) m[r * n + c + 1] = 1;
      masks_.push_back(std::move(m));
    }
  }
  // per-cell references: the generator's patterns, or for a twisted board a
  // lone off/on cell passed through swirl and unswirl at its own position
  for (int p = 0; p < n * n; ++p) {
    if (!twisted()) {
      references_.push_back(patterns_);
      continue;
    }
    std::vector<Image> refs;
    for (int v = 0; v < 2; ++v) {
      Config c(static_cast<std::size_t>(n * n), 0);
      c[p] = v;
      refs.push_back(domains::extract_patch(unswirl(domain.render(c)), shape_, geometry_, p / n, p % n));
    }
    references_.push_back(std::move(refs));
  }
}

bool LightsOutValidator::twisted() const { return spec_.kind == domains::DomainKind::twisted_lights_out; }

Image LightsOutValidator::unswirl(const Image& image) const {
  return domains::swirl(image, shape_, -spec_.swirl.strength, spec_.swirl.radius_factor * shape_.width);
}

ImageParse LightsOutValidator::parse(const Image& image) const {
  if (static_cast<int>(image.size()) != shape_.size()) throw ConfigError("validator: image size does not match the domain");
  const Image flat = twisted() ? unswirl(image) : image;
  const int cells = spec_.n * spec_.n;
  Matrix d(cells, 2);
  for (int p = 0; p < cells; ++p) {
    const auto patch = domains::extract_patch(flat, shape_, geometry_, p / spec_.n, p % spec_.n);
    for (int v = 0; v < 2; ++v) {
      double e = 0.0;
      for (std::size_t i = 0; i < patch.size(); ++i) e += std::abs(patch[i] - references_[p][v][i]);
      d(p, v) = e / static_cast<double>(patch.size());
    }
  }
  ImageParse p;
  p.theta = threshold_;
  p.counts = count_matches(d, threshold_);
  p.patches = assign_patterns(d, threshold_);
  if (p.counts.ambiguous != 0 || p.counts.unmatched != 0) {
    const auto bad = std::find(p.patches.begin(), p.patches.end(), -1);
    p.reason = bad != p.patches.end() ? step_text("unmatched cell", static_cast<int>(bad - p.patches.begin()))
                                      : "ambiguous cell";
    return p;
  }
  p.valid = true;
  p.config = p.patches;
  return p;
}

std::string LightsOutValidator::check_transition(const Config& from, const Config& to) const {
  std::vector<int> diff(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) diff[i] = from[i] != to[i] ? 1 : 0;
  for (const auto& m : masks_) {
    if (m == diff) return {};
  }
  return "cell difference is not a single button press";
}

// ---- hanoi ----

HanoiValidator::HanoiValidator(const domains::Domain& domain)
    : spec_(domain.spec()), shape_(domain.image_shape()), geometry_(domain.geometry()), patterns_(domain.patterns()) {}

ImageParse HanoiValidator::parse(const Image& image) const {
  ImageParse p = searched_parse(image, shape_, geometry_, patterns_);
  if (!p.valid) return p;
  p.valid = false;
  const int rows = geometry_.grid_rows, cols = geometry_.grid_cols;
  Config config(static_cast<std::size_t>(spec_.disks), -1);
  for (int t = 0; t < cols; ++t) {
    int below = spec_.disks;  // disk index under the current row; the floor is larger than any disk
    bool top_reached = false;
    for (int r = rows - 1; r >= 0; --r) {
      const int id = p.patches[r * cols + t];
      if (id == 0) {
        top_reached = true;
        continue;
      }
      const int disk = id - 1;
      if (top_reached) {
        p.reason = "disk " + std::to_string(disk) + " floats above a gap on tower " + std::to_string(t);
        return p;
      }
      if (config[disk] != -1) {
        p.reason = "disk " + std::to_string(disk) + " appears twice";
        return p;
      }
      if (disk >= below) {
        p.reason = "disk " + std::to_string(disk) + " rests on smaller disk " + std::to_string(below);
        return p;
      }
      config[disk] = t;
      below = disk;
    }
  }
  const auto missing = std::find(config.begin(), config.end(), -1);
  if (missing != config.end()) {
    p.reason = "disk " + std::to_string(missing - config.begin()) + " is missing";
    return p;
  }
  p.valid = true;
  p.config = std::move(config);
  return p;
}

std::string HanoiValidator::check_transition(const Config& from, const Config& to) const {
  int moved = -1, count = 0;
  for (std::size_t d = 0; d < from.size(); ++d) {
    if (from[d] != to[d]) moved = static_cast<int>(d), ++count;
  }
  if (count != 1) return std::to_string(count) + " disks moved";
  for (int d = 0; d < moved; ++d) {
    if (from[d] == from[moved]) return "disk " + std::to_string(moved) + " was not on top";
    if (to[d] == to[moved]) return "disk " + std::to_string(moved) + " landed on smaller disk " + std::to_string(d);
  }
  return {};
}

std::unique_ptr<Validator> make_validator(const domains::Domain& domain) {
  switch (domain.spec().kind) {
    case domains::DomainKind::lights_out:
    case domains::DomainKind::twisted_lights_out: return std::make_unique<LightsOutValidator>(domain);
    case domains::DomainKind::sliding_tile: return std::make_unique<TileValidator>(domain);
    case domains::DomainKind::hanoi: return std::make_unique<HanoiValidator>(domain);
  }
  throw ConfigError("make_validator: unknown domain kind");
}

// ---- mutations ----

std::vector<Config> random_walk(const domains::Domain& domain, int steps, Rng& rng) {
  std::vector<Config> out{domain.sample_state(rng)};
  for (int i = 0; i < steps; ++i) {
    const auto next = domain.neighbors(out.back());
    if (next.empty()) break;
    out.push_back(next[rng.below(next.size())]);
  }
  return out;
}

std::vector<Image> mutate_trace(const domains::Domain& domain, const std::vector<Config>& trace, Rng& rng) {
  if (trace.empty()) throw ConfigError("mutate_trace: empty trace");
  std::vector<Image> images;
  for (const auto& c : trace) images.push_back(domain.render(c));
  const std::size_t step = rng.below(trace.size());
  const auto& spec = domain.spec();
  switch (spec.kind) {
    case domains::DomainKind::lights_out:
    case domains::DomainKind::twisted_lights_out: {
      Config c = trace[step];
      const std::size_t cell = rng.below(c.size());
      c[cell] = 1 - c[cell];
      images[step] = domain.render(c);
      break;
    }
    case domains::DomainKind::sliding_tile: {
      const auto& c = trace[step];
      const auto pats = domain.patterns();
      const std::size_t target = rng.below(c.size());
      std::size_t source = rng.below(c.size() - 1);
      if (source >= target) ++source;
      put_patch(images[step], domain.image_shape(), domain.geometry(), static_cast<int>(target) / spec.cols,
                static_cast<int>(target) % spec.cols, pats[c[source]]);
      break;
    }
    case domains::DomainKind::hanoi: {
      const auto& c = trace[step];
      const auto pats = domain.patterns();
      const int disk = static_cast<int>(rng.below(c.size()));
      int height = 0;
      for (int d = disk + 1; d < spec.disks; ++d) height += c[d] == c[disk];
      put_patch(images[step], domain.image_shape(), domain.geometry(), spec.disks - 1 - height, c[disk], pats[0]);
      break;
    }
  }
  return images;
}

// ---- verdicts ----

ValidationVerdict judge(const domains::Instance& instance, bool found, const std::vector<Image>& trace,
                        const Validator& validator) {
  ValidationVerdict v;
  v.found = found;
  if (!found) {
    v.failure_reason = "no plan";
    if (instance.g >= 0) v.optimal = false;
    return v;
  }
  if (trace.empty()) throw ConfigError("judge: a found plan needs at least the initial state");
  v.plan_length = static_cast<int>(trace.size()) - 1;
  const auto t = validator.check_trace(trace);
  for (const auto& s : t.states) v.theta = std::max(v.theta, s.theta);
  if (!t.valid) {
    v.failure_step = t.failure_step;
    v.failure_reason = t.reason;
  } else if (t.states.front().config != instance.init) {
    v.failure_step = 0;
    v.failure_reason = "decoded init does not match the instance";
  } else if (t.states.back().config != instance.goal) {
    v.failure_step = v.plan_length;
    v.failure_reason = "decoded goal does not match the instance";
  } else {
    v.valid = true;
  }
  if (instance.g >= 0) v.optimal = v.valid && v.plan_length == instance.g;
  return v;
}

void write_verdict_header(std::ostream& out) {
  out << "domain\tmodel\theuristic\thyperparameters\tinstance\tstatus\tfound\tvalid\toptimal\tplan_length\tg"
         "\texpansions\ttheta\tfailure_step\tfailure_reason\n";
}

void write_verdict_row(std::ostream& out, const VerdictRow& r) {
  const auto& v = r.verdict;
  char theta[32];
  std::snprintf(theta, sizeof theta, "%.6g", v.theta);
  out << clean(r.domain) << '\t' << clean(r.model) << '\t' << clean(r.heuristic) << '\t' << clean(r.hyperparameters)
      << '\t' << r.instance << '\t' << clean(r.status) << '\t' << v.found << '\t' << v.valid << '\t'
      << (v.optimal ? (*v.optimal ? "1" : "0") : "-") << '\t' << v.plan_length << '\t' << r.g << '\t' << r.expansions
      << '\t' << theta << '\t' << (v.failure_step ? std::to_string(*v.failure_step) : "-") << '\t'
      << (v.failure_reason.empty() ? "-" : clean(v.failure_reason)) << '\n';
}

// ---- visualization ----

std::vector<Image> visualize(models::StateAutoencoder& model, const Normalization& norm,
                             const std::vector<std::vector<int>>& latents) {
  if (latents.empty()) return {};
  const int F = model.config().latent.F;
  Matrix z(static_cast<Eigen::Index>(latents.size()), F);
  for (std::size_t r = 0; r < latents.size(); ++r) {
    if (static_cast<int>(latents[r].size()) != F) throw ConfigError("visualize: latent width does not match the model");
    for (int f = 0; f < F; ++f) z(static_cast<Eigen::Index>(r), f) = latents[r][f];
  }
  const Matrix x = norm.invert(model.decode(z)).cwiseMax(0.0).cwiseMin(1.0);
  std::vector<Image> out;
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.emplace_back(x.row(r).begin(), x.row(r).end());
  return out;
}

void write_trace_images(const std::filesystem::path& dir, const std::string& prefix, const std::vector<Image>& images,
                        nn::Shape shape, int scale) {
  std::filesystem::create_directories(dir);
  const std::string ext = shape.channels == 3 ? ".ppm" : ".pgm";
  std::vector<RasterImage> raster;
  for (std::size_t i = 0; i < images.size(); ++i) {
    raster.push_back(upscale(RasterImage{shape, images[i]}, scale));
    char name[32];
    std::snprintf(name, sizeof name, "_%03zu", i);
    write_pnm(dir / (prefix + name + ext), raster.back());
  }
  if (!raster.empty()) {
    write_pnm(dir / (prefix + "_sheet" + ext), contact_sheet(raster, static_cast<int>(std::min<std::size_t>(8, raster.size()))));
  }
}

}  // namespace latplan::validate
