#include "latplan/domains.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "latplan/common/archive.hpp"
#include "latplan/common/error.hpp"
#include "latplan/common/image_io.hpp"
#include "latplan/tensor/matrix_io.hpp"

namespace latplan::domains {

std::string to_string(DomainKind k) {
  switch (k) {
    case DomainKind::lights_out: return "lights_out";
    case DomainKind::twisted_lights_out: return "twisted_lights_out";
    case DomainKind::sliding_tile: return "sliding_tile";
    case DomainKind::hanoi: return "hanoi";
  }
  return "?";
}

DomainKind domain_kind_from_string(const std::string& s) {
  if (s == "lights_out" || s == "lightsout") return DomainKind::lights_out;
  if (s == "twisted_lights_out" || s == "twisted") return DomainKind::twisted_lights_out;
  if (s == "sliding_tile" || s == "puzzle") return DomainKind::sliding_tile;
  if (s == "hanoi") return DomainKind::hanoi;
  throw ConfigError("unknown domain kind '" + s + "'");
}

namespace {

int bits_for(int max_value) { return std::max(1, static_cast<int>(std::bit_width(static_cast<unsigned>(max_value)))); }

}  // namespace

void DomainSpec::validate() const {
  switch (kind) {
    case DomainKind::lights_out:
    case DomainKind::twisted_lights_out:
      if (n < 1 || n * n > 64) throw ConfigError("lights_out: n must be in [1, 8]");
      if (cell < 3) throw ConfigError("lights_out: cell must be >= 3");
      if (kind == DomainKind::twisted_lights_out && swirl.radius_factor <= 0.0) {
        throw ConfigError("twisted_lights_out: swirl radius factor must be positive");
      }
      break;
    case DomainKind::sliding_tile:
      if (rows < 2 || cols < 2) throw ConfigError("sliding_tile: grid must be at least 2x2");
      if (rows * cols * bits_for(rows * cols - 1) > 64) throw ConfigError("sliding_tile: at most 16 positions");
      if (atlas.empty() && rows * cols > 16) throw ConfigError("sliding_tile: the built-in atlas has 16 glyphs");
      if (tile < 7) throw ConfigError("sliding_tile: tile must be >= 7 pixels");
      break;
    case DomainKind::hanoi:
      if (disks < 1 || towers < 2) throw ConfigError("hanoi: need >= 1 disk and >= 2 towers");
      if (disks * bits_for(towers - 1) > 64) throw ConfigError("hanoi: configuration does not fit in 64 bits");
      if (disk_height < 1 || disk_width < 1) throw ConfigError("hanoi: disk size must be positive");
      break;
  }
}

nlohmann::json DomainSpec::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)}};
  switch (kind) {
    case DomainKind::twisted_lights_out:
      j["swirl"] = {{"strength", swirl.strength}, {"radius_factor", swirl.radius_factor}};
      [[fallthrough]];
    case DomainKind::lights_out:
      j["n"] = n;
      j["cell"] = cell;
      break;
    case DomainKind::sliding_tile:
      j["rows"] = rows;
      j["cols"] = cols;
      j["tile"] = tile;
      j["atlas"] = atlas;
      break;
    case DomainKind::hanoi:
      j["disks"] = disks;
      j["towers"] = towers;
      j["disk_height"] = disk_height;
      j["disk_width"] = disk_width;
      break;
  }
  return j;
}

DomainSpec DomainSpec::from_json(const nlohmann::json& j) {
  DomainSpec s;
  try {
    s.kind = domain_kind_from_string(j.at("kind").get<std::string>());
    s.n = j.value("n", s.n);
    s.cell = j.value("cell", s.cell);
    s.rows = j.value("rows", s.rows);
    s.cols = j.value("cols", s.cols);
    s.tile = j.value("tile", s.tile);
    s.atlas = j.value("atlas", s.atlas);
    s.disks = j.value("disks", s.disks);
    s.towers = j.value("towers", s.towers);
    s.disk_height = j.value("disk_height", s.disk_height);
    s.disk_width = j.value("disk_width", s.disk_width);
    if (j.contains("swirl")) {
      s.swirl.strength = j["swirl"].value("strength", s.swirl.strength);
      s.swirl.radius_factor = j["swirl"].value("radius_factor", s.swirl.radius_factor);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("domain spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::uint64_t Domain::key(const Config& c) const {
  int maxv = 1;
  switch (spec_.kind) {
    case DomainKind::lights_out:
    case DomainKind::twisted_lights_out: maxv = 1; break;
    case DomainKind::sliding_tile: maxv = spec_.rows * spec_.cols - 1; break;
    case DomainKind::hanoi: maxv = spec_.towers - 1; break;
  }
  const int b = bits_for(maxv);
  std::uint64_t k = 0;
  for (std::size_t i = 0; i < c.size(); ++i) k |= static_cast<std::uint64_t>(c[i]) << (i * b);
  return k;
}

// ---- image transforms ----

namespace {

// numpy-style 'reflect' (mirror without repeating the edge sample).
double reflect(double x, int n) {
  if (n == 1) return 0.0;
  const double period = 2.0 * (n - 1);
  x = std::fmod(std::abs(x), period);
  return x > n - 1 ? period - x : x;
}

}  // namespace

std::vector<double> swirl(const std::vector<double>& image, nn::Shape shape, double strength, double radius) {
  if (static_cast<int>(image.size()) != shape.size()) throw ConfigError("swirl: image size mismatch");
  if (radius <= 0.0) throw ConfigError("swirl: radius must be positive");
  const int H = shape.height, W = shape.width;
  const double cy = H / 2.0, cx = W / 2.0;
  const double falloff = std::log(2.0) * radius / 5.0;
  std::vector<double> out(image.size());
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double rho = std::hypot(dx, dy);
      const double theta = std::atan2(dy, dx) + strength * std::exp(-rho / falloff);
      const double sx = reflect(cx + rho * std::cos(theta), W);
      const double sy = reflect(cy + rho * std::sin(theta), H);
      const int x0 = std::min(static_cast<int>(sx), W - 1), y0 = std::min(static_cast<int>(sy), H - 1);
      const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < shape.channels; ++c) {
        const double* p = image.data() + static_cast<std::size_t>(c) * H * W;
        const double top = p[y0 * W + x0] * (1 - fx) + p[y0 * W + x1] * fx;
        const double bot = p[y1 * W + x0] * (1 - fx) + p[y1 * W + x1] * fx;
        out[(static_cast<std::size_t>(c) * H + y) * W + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

std::vector<double> extract_patch(const std::vector<double>& image, nn::Shape shape, const PatchGeometry& g,
                                  int gr, int gc) {
  if (gr < 0 || gr >= g.grid_rows || gc < 0 || gc >= g.grid_cols) throw ConfigError("extract_patch: out of range");
  std::vector<double> patch(static_cast<std::size_t>(g.channels * g.patch_h * g.patch_w));
  std::size_t i = 0;
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < g.patch_h; ++y) {
      for (int x = 0; x < g.patch_w; ++x) {
        patch[i++] = image[(static_cast<std::size_t>(c) * shape.height + gr * g.patch_h + y) * shape.width +
                           gc * g.patch_w + x];
      }
    }
  }
  return patch;
}

namespace {

// Writes a patch into an image at grid cell (gr, gc).
void put_patch(std::vector<double>& image, nn::Shape shape, const PatchGeometry& g, int gr, int gc,
               const std::vector<double>& patch) {
  std::size_t i = 0;
  for (int c = 0; c < g.channels; ++c) {
    for (int y = 0; y < g.patch_h; ++y) {
      for (int x = 0; x < g.patch_w; ++x) {
        image[(static_cast<std::size_t>(c) * shape.height + gr * g.patch_h + y) * shape.width + gc * g.patch_w +
              x] = patch[i++];
      }
    }
  }
}

// ---- LightsOut ----

class LightsOut : public Domain {
 public:
  explicit LightsOut(DomainSpec spec) : Domain(std::move(spec)) {
    const int cell = spec_.cell;
    const int mid = cell / 2;
    const int half_width = std::max(0, cell / 6);
    on_.assign(static_cast<std::size_t>(cell * cell), 0.0);
    for (int y = 1; y < cell - 1; ++y) {
      for (int x = 1; x < cell - 1; ++x) {
        if (std::abs(y - mid) <= half_width || std::abs(x - mid) <= half_width) on_[y * cell + x] = 1.0;
      }
    }
  }

  nn::Shape image_shape() const override { return {1, spec_.n * spec_.cell, spec_.n * spec_.cell}; }
  PatchGeometry geometry() const override { return {spec_.n, spec_.n, spec_.cell, spec_.cell, 1}; }

  std::vector<double> render(const Config& c) const override {
    check(c);
    const nn::Shape s = image_shape();
    std::vector<double> img(static_cast<std::size_t>(s.size()), 0.0);
    const auto g = geometry();
    for (int i = 0; i < spec_.n * spec_.n; ++i) {
      if (c[i]) put_patch(img, s, g, i / spec_.n, i % spec_.n, on_);
    }
    if (spec_.kind == DomainKind::twisted_lights_out) {
      img = swirl(img, s, spec_.swirl.strength, spec_.swirl.radius_factor * s.width);
    }
    return img;
  }

  std::vector<Config> neighbors(const Config& c) const override {
    check(c);
    const int n = spec_.n;
    std::vector<Config> out;
    out.reserve(static_cast<std::size_t>(n * n));
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < n; ++k) {
        Config next = c;
        next[r * n + k] ^= 1;
        if (r > 0) next[(r - 1) * n + k] ^= 1;
        if (r + 1 < n) next[(r + 1) * n + k] ^= 1;
        if (k > 0) next[r * n + k - 1] ^= 1;
        if (k + 1 < n) next[r * n + k + 1] ^= 1;
        out.push_back(std::move(next));
      }
    }
    return out;
  }

  Config goal() const override { return Config(static_cast<std::size_t>(spec_.n * spec_.n), 0); }

  Config sample_state(Rng& rng) const override {
    Config c(static_cast<std::size_t>(spec_.n * spec_.n));
    for (auto& v : c) v = static_cast<int>(rng.below(2));
    return c;
  }

  bool valid(const Config& c) const override {
    if (static_cast<int>(c.size()) != spec_.n * spec_.n) return false;
    return std::all_of(c.begin(), c.end(), [](int v) { return v == 0 || v == 1; });
  }

  std::uint64_t num_states() const override {
    const int cells = spec_.n * spec_.n;
    return cells >= 64 ? ~std::uint64_t{0} : std::uint64_t{1} << cells;
  }

  std::vector<std::vector<double>> patterns() const override {
    return {std::vector<double>(on_.size(), 0.0), on_};
  }

 private:
  void check(const Config& c) const {
    if (!valid(c)) throw ConfigError("lights_out: invalid configuration");
  }
  std::vector<double> on_;
};

// ---- sliding tile ----

// 3x5 hexadecimal glyphs, one row per string.
constexpr const char* kGlyphs[16][5] = {
    {"111", "101", "101", "101", "111"}, {"010", "110", "010", "010", "111"}, {"111", "001", "111", "100", "111"},
    {"111", "001", "111", "001", "111"}, {"101", "101", "111", "001", "001"}, {"111", "100", "111", "001", "111"},
    {"111", "100", "111", "101", "111"}, {"111", "001", "001", "010", "010"}, {"111", "101", "111", "101", "111"},
    {"111", "101", "111", "001", "111"}, {"010", "101", "111", "101", "101"}, {"110", "101", "110", "101", "110"},
    {"011", "100", "100", "100", "011"}, {"110", "101", "101", "101", "110"}, {"111", "100", "111", "100", "111"},
    {"111", "100", "111", "100", "100"}};

std::vector<double> glyph_tile(int id, int size) {
  std::vector<double> t(static_cast<std::size_t>(size * size), 0.0);
  if (id == 0) return t;
  for (int i = 0; i < size; ++i) {
    t[i] = t[(size - 1) * size + i] = t[i * size] = t[i * size + size - 1] = 1.0;
  }
  const int scale = std::max(1, std::min((size - 2) / 5, (size - 2) / 3));
  const int gh = 5 * scale, gw = 3 * scale;
  const int oy = (size - gh) / 2, ox = (size - gw) / 2;
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      if (kGlyphs[id][y / scale][x / scale] == '1') t[(oy + y) * size + ox + x] = 1.0;
    }
  }
  return t;
}

class SlidingTile : public Domain {
 public:
  explicit SlidingTile(DomainSpec spec) : Domain(std::move(spec)) {
    const int n = spec_.rows * spec_.cols;
    const int t = spec_.tile;
    if (spec_.atlas.empty()) {
      for (int i = 0; i < n; ++i) tiles_.push_back(glyph_tile(i, t));
      return;
    }
    const RasterImage atlas = read_pnm(spec_.atlas);
    if (atlas.shape.channels != 1 || atlas.shape.height != t || atlas.shape.width < n * t) {
      throw ConfigError("sliding_tile: atlas must be a grayscale image of height " + std::to_string(t) +
                        " holding " + std::to_string(n) + " tiles side by side");
    }
    for (int i = 0; i < n; ++i) {
      std::vector<double> tile(static_cast<std::size_t>(t * t));
      for (int y = 0; y < t; ++y) {
        for (int x = 0; x < t; ++x) tile[y * t + x] = atlas.pixels[y * atlas.shape.width + i * t + x];
      }
      tiles_.push_back(std::move(tile));
    }
  }

  nn::Shape image_shape() const override { return {1, spec_.rows * spec_.tile, spec_.cols * spec_.tile}; }
  PatchGeometry geometry() const override { return {spec_.rows, spec_.cols, spec_.tile, spec_.tile, 1}; }

  std::vector<double> render(const Config& c) const override {
    if (!valid(c)) throw ConfigError("sliding_tile: invalid configuration");
    const nn::Shape s = image_shape();
    std::vector<double> img(static_cast<std::size_t>(s.size()), 0.0);
    for (int p = 0; p < static_cast<int>(c.size()); ++p) put_patch(img, s, geometry(), p / spec_.cols, p % spec_.cols, tiles_[c[p]]);
    return img;
  }

  std::vector<Config> neighbors(const Config& c) const override {
    if (!valid(c)) throw ConfigError("sliding_tile: invalid configuration");
    const int blank = static_cast<int>(std::find(c.begin(), c.end(), 0) - c.begin());
    const int r = blank / spec_.cols, k = blank % spec_.cols;
    std::vector<Config> out;
    const int dr[4] = {-1, 1, 0, 0}, dk[4] = {0, 0, -1, 1};
    for (int d = 0; d < 4; ++d) {
      const int nr = r + dr[d], nk = k + dk[d];
      if (nr < 0 || nr >= spec_.rows || nk < 0 || nk >= spec_.cols) continue;
      Config next = c;
      std::swap(next[blank], next[nr * spec_.cols + nk]);
      out.push_back(std::move(next));
    }
    return out;
  }

  Config goal() const override {
    Config c(static_cast<std::size_t>(spec_.rows * spec_.cols));
    std::iota(c.begin(), c.end(), 0);
    return c;
  }

  Config sample_state(Rng& rng) const override {
    Config c = goal();
    std::shuffle(c.begin(), c.end(), rng);
    if (!solvable(c)) {
      // swapping two non-blank tiles flips the permutation parity only
      int a = -1, b = -1;
      for (int i = 0; i < static_cast<int>(c.size()); ++i) {
        if (c[i] == 0) continue;
        if (a < 0) a = i;
        else if (b < 0) b = i;
      }
      std::swap(c[a], c[b]);
    }
    return c;
  }

  bool valid(const Config& c) const override {
    const int n = spec_.rows * spec_.cols;
    if (static_cast<int>(c.size()) != n) return false;
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (int v : c) {
      if (v < 0 || v >= n || seen[v]) return false;
      seen[v] = true;
    }
    return solvable(c);
  }

  std::uint64_t num_states() const override {
    std::uint64_t f = 1;
    for (int i = 2; i <= spec_.rows * spec_.cols; ++i) f *= static_cast<std::uint64_t>(i);
    return f / 2;
  }

  std::vector<std::vector<double>> patterns() const override { return tiles_; }

 private:
  // Reachable from the goal iff the permutation parity equals the parity of
  // the blank's Manhattan distance from its goal position.
  bool solvable(const Config& c) const {
    const int n = static_cast<int>(c.size());
    std::vector<bool> visited(static_cast<std::size_t>(n), false);
    int transpositions = 0;
    for (int i = 0; i < n; ++i) {
      if (visited[i]) continue;
      int len = 0;
      for (int j = i; !visited[j]; j = c[j]) {
        if (c[j] < 0 || c[j] >= n) return false;
        visited[j] = true;
        ++len;
      }
      transpositions += len - 1;
    }
    const int blank = static_cast<int>(std::find(c.begin(), c.end(), 0) - c.begin());
    const int dist = blank / spec_.cols + blank % spec_.cols;
    return (transpositions % 2) == (dist % 2);
  }

  std::vector<std::vector<double>> tiles_;
};

// ---- Towers of Hanoi ----

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  std::array<double, 3> rgb{};
  const int sector = static_cast<int>(hp) % 6;
  switch (sector) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (auto& e : rgb) e += m;
  return rgb;
}

class Hanoi : public Domain {
 public:
  explicit Hanoi(DomainSpec spec) : Domain(std::move(spec)) {
    const int area = spec_.disk_height * spec_.disk_width;
    patterns_.push_back(std::vector<double>(static_cast<std::size_t>(3 * area), kBackground));
    for (int d = 0; d < spec_.disks; ++d) {
      // alternate brightness so neighbouring hues stay far apart
      const auto rgb = hsv_to_rgb(static_cast<double>(d) / spec_.disks, 1.0, d % 2 == 0 ? 1.0 : 0.6);
      std::vector<double> p(static_cast<std::size_t>(3 * area));
      for (int c = 0; c < 3; ++c) std::fill(p.begin() + c * area, p.begin() + (c + 1) * area, rgb[c]);
      patterns_.push_back(std::move(p));
    }
  }

  nn::Shape image_shape() const override {
    return {3, spec_.disks * spec_.disk_height, spec_.towers * spec_.disk_width};
  }
  PatchGeometry geometry() const override {
    return {spec_.disks, spec_.towers, spec_.disk_height, spec_.disk_width, 3};
  }

  std::vector<double> render(const Config& c) const override {
    if (!valid(c)) throw ConfigError("hanoi: invalid configuration");
    const nn::Shape s = image_shape();
    std::vector<double> img(static_cast<std::size_t>(s.size()), kBackground);
    std::vector<int> height(static_cast<std::size_t>(spec_.towers), 0);
    // largest disk first so it sits at the bottom row
    for (int d = spec_.disks - 1; d >= 0; --d) {
      const int t = c[d];
      const int row = spec_.disks - 1 - height[t]++;
      put_patch(img, s, geometry(), row, t, patterns_[d + 1]);
    }
    return img;
  }

  std::vector<Config> neighbors(const Config& c) const override {
    if (!valid(c)) throw ConfigError("hanoi: invalid configuration");
    std::vector<int> top(static_cast<std::size_t>(spec_.towers), -1);
    for (int d = spec_.disks - 1; d >= 0; --d) top[c[d]] = d;
    std::vector<Config> out;
    for (int from = 0; from < spec_.towers; ++from) {
      if (top[from] < 0) continue;
      for (int to = 0; to < spec_.towers; ++to) {
        if (to == from || (top[to] >= 0 && top[to] < top[from])) continue;
        Config next = c;
        next[top[from]] = to;
        out.push_back(std::move(next));
      }
    }
    return out;
  }

  Config goal() const override { return Config(static_cast<std::size_t>(spec_.disks), spec_.towers - 1); }

  Config sample_state(Rng& rng) const override {
    Config c(static_cast<std::size_t>(spec_.disks));
    for (auto& v : c) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec_.towers)));
    return c;
  }

  bool valid(const Config& c) const override {
    if (static_cast<int>(c.size()) != spec_.disks) return false;
    return std::all_of(c.begin(), c.end(), [&](int v) { return v >= 0 && v < spec_.towers; });
  }

  std::uint64_t num_states() const override {
    std::uint64_t n = 1;
    for (int i = 0; i < spec_.disks; ++i) n *= static_cast<std::uint64_t>(spec_.towers);
    return n;
  }

  std::vector<std::vector<double>> patterns() const override { return patterns_; }

 private:
  static constexpr double kBackground = 0.5;
  std::vector<std::vector<double>> patterns_;
};

}  // namespace

std::unique_ptr<Domain> make_domain(const DomainSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DomainKind::lights_out:
    case DomainKind::twisted_lights_out: return std::make_unique<LightsOut>(spec);
    case DomainKind::sliding_tile: return std::make_unique<SlidingTile>(spec);
    case DomainKind::hanoi: return std::make_unique<Hanoi>(spec);
  }
  throw ConfigError("unknown domain kind");
}

// ---- datasets ----

TransitionDataset sample_transitions(const Domain& domain, int count, Rng& rng) {
  if (count <= 0) throw ConfigError("sample_transitions: count must be positive");
  TransitionDataset ds;
  ds.spec = domain.spec();
  ds.shape = domain.image_shape();
  const int D = ds.shape.size();
  ds.raw0.resize(count, D);
  ds.raw1.resize(count, D);
  ds.config0.resize(static_cast<std::size_t>(count));
  ds.config1.resize(static_cast<std::size_t>(count));
  const Rng base = rng.split("transitions");
  for (int i = 0; i < count; ++i) {
    Rng r = base.split(static_cast<std::uint64_t>(i));
    Config c0 = domain.sample_state(r);
    const auto next = domain.neighbors(c0);
    if (next.empty()) throw ConfigError("sample_transitions: state without successors");
    Config c1 = next[r.below(next.size())];
    const auto img0 = domain.render(c0);
    const auto img1 = domain.render(c1);
    ds.raw0.row(i) = Eigen::Map<const RowVector>(img0.data(), D);
    ds.raw1.row(i) = Eigen::Map<const RowVector>(img1.data(), D);
    ds.config0[i] = std::move(c0);
    ds.config1[i] = std::move(c1);
  }
  Rng split_rng = rng.split("split");
  split_dataset(ds, split_rng);
  return ds;
}

void split_dataset(TransitionDataset& ds, Rng& rng, double train_frac, double val_frac) {
  if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac > 1.0) {
    throw ConfigError("split_dataset: invalid fractions");
  }
  const int n = static_cast<int>(ds.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_train = std::max(1, static_cast<int>(std::lround(n * train_frac)));
  const int n_val = std::min(n - n_train, static_cast<int>(std::lround(n * val_frac)));
  ds.train.assign(order.begin(), order.begin() + n_train);
  ds.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  ds.test.assign(order.begin() + n_train + n_val, order.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.val.begin(), ds.val.end());
  std::sort(ds.test.begin(), ds.test.end());

  Matrix stacked(2 * n_train, ds.raw0.cols());
  for (int i = 0; i < n_train; ++i) {
    stacked.row(2 * i) = ds.raw0.row(ds.train[i]);
    stacked.row(2 * i + 1) = ds.raw1.row(ds.train[i]);
  }
  std::vector<int> all(static_cast<std::size_t>(2 * n_train));
  std::iota(all.begin(), all.end(), 0);
  ds.norm = fit_normalization(stacked, all);
}

namespace {

void put_configs(Archive& ar, const std::string& name, const std::vector<Config>& configs) {
  const std::int64_t width = configs.empty() ? 0 : static_cast<std::int64_t>(configs.front().size());
  std::vector<std::int64_t> data;
  data.reserve(configs.size() * static_cast<std::size_t>(width));
  for (const auto& c : configs) {
    if (static_cast<std::int64_t>(c.size()) != width) throw ConfigError("configurations differ in length");
    data.insert(data.end(), c.begin(), c.end());
  }
  ar.put_ints(name, {static_cast<std::int64_t>(configs.size()), width}, std::move(data));
}

std::vector<Config> get_configs(const Archive& ar, const std::string& name) {
  const auto& a = ar.get_ints(name);
  if (a.shape.size() != 2) throw ConfigError("archive array '" + name + "' is not a matrix");
  std::vector<Config> out(static_cast<std::size_t>(a.shape[0]));
  for (std::int64_t i = 0; i < a.shape[0]; ++i) {
    out[i].assign(a.data.begin() + i * a.shape[1], a.data.begin() + (i + 1) * a.shape[1]);
  }
  return out;
}

void put_indices(Archive& ar, const std::string& name, const std::vector<int>& idx) {
  ar.put_ints(name, {static_cast<std::int64_t>(idx.size())}, std::vector<std::int64_t>(idx.begin(), idx.end()));
}

std::vector<int> get_indices(const Archive& ar, const std::string& name, Eigen::Index n) {
  const auto& a = ar.get_ints(name);
  std::vector<int> out;
  for (auto v : a.data) {
    if (v < 0 || v >= n) throw ConfigError("archive split '" + name + "' has an out-of-range index");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

void save_dataset(const TransitionDataset& ds, const std::filesystem::path& path) {
  Archive ar(kDatasetFormat, kDatasetVersion);
  ar.meta()["domain"] = ds.spec.to_json();
  ar.meta()["shape"] = {ds.shape.channels, ds.shape.height, ds.shape.width};
  put_matrix(ar, "x0", ds.raw0);
  put_matrix(ar, "x1", ds.raw1);
  put_configs(ar, "config0", ds.config0);
  put_configs(ar, "config1", ds.config1);
  put_matrix(ar, "norm.mean", ds.norm.mean);
  put_matrix(ar, "norm.scale", ds.norm.scale);
  put_indices(ar, "split.train", ds.train);
  put_indices(ar, "split.val", ds.val);
  put_indices(ar, "split.test", ds.test);
  ar.save(path);
}

TransitionDataset load_dataset(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path, kDatasetFormat, kDatasetVersion);
  TransitionDataset ds;
  ds.spec = DomainSpec::from_json(ar.meta().at("domain"));
  const auto& s = ar.meta().at("shape");
  ds.shape = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
  ds.raw0 = get_matrix(ar, "x0");
  const Eigen::Index n = ds.raw0.rows();
  ds.raw1 = get_matrix(ar, "x1", n, ds.shape.size());
  if (ds.raw0.cols() != ds.shape.size()) throw ConfigError("dataset image width does not match its shape");
  ds.config0 = get_configs(ar, "config0");
  ds.config1 = get_configs(ar, "config1");
  if (static_cast<Eigen::Index>(ds.config0.size()) != n || static_cast<Eigen::Index>(ds.config1.size()) != n) {
    throw ConfigError("dataset configuration count mismatch");
  }
  ds.norm.mean = get_matrix(ar, "norm.mean", 1, ds.shape.size());
  ds.norm.scale = get_matrix(ar, "norm.scale", 1, ds.shape.size());
  ds.train = get_indices(ar, "split.train", n);
  ds.val = get_indices(ar, "split.val", n);
  ds.test = get_indices(ar, "split.test", n);
  return ds;
}

// ---- planning instances ----

std::vector<std::vector<Config>> distance_layers(const Domain& domain, const Config& goal, int max_depth) {
  std::vector<std::vector<Config>> layers{{goal}};
  std::unordered_set<std::uint64_t> seen{domain.key(goal)};
  for (int depth = 1; depth <= max_depth; ++depth) {
    std::vector<Config> next;
    for (const auto& c : layers.back()) {
      for (auto& n : domain.neighbors(c)) {
        if (seen.insert(domain.key(n)).second) next.push_back(std::move(n));
      }
    }
    if (next.empty()) break;
    layers.push_back(std::move(next));
  }
  return layers;
}

std::vector<Instance> sample_instances(const Domain& domain, int g, int count, Rng& rng) {
  if (g < 0) throw ConfigError("sample_instances: g must be non-negative");
  if (count <= 0) throw ConfigError("sample_instances: count must be positive");
  const Config goal = domain.goal();
  auto layers = distance_layers(domain, goal, g);
  if (static_cast<int>(layers.size()) <= g) {
    throw ConfigError("sample_instances: no state at distance " + std::to_string(g) +
                      " from the goal; the maximum available g is " + std::to_string(layers.size() - 1));
  }
  auto& frontier = layers[g];
  std::shuffle(frontier.begin(), frontier.end(), rng);
  std::vector<Instance> out;
  for (int i = 0; i < count; ++i) {
    const std::size_t k = i < static_cast<int>(frontier.size()) ? static_cast<std::size_t>(i) : rng.below(frontier.size());
    out.push_back({frontier[k], goal, g});
  }
  return out;
}

int bfs_distance(const Domain& domain, const Config& from, const Config& to, int max_depth) {
  const std::uint64_t target = domain.key(to);
  if (domain.key(from) == target) return 0;
  std::vector<Config> layer{from};
  std::unordered_set<std::uint64_t> seen{domain.key(from)};
  for (int depth = 1; depth <= max_depth && !layer.empty(); ++depth) {
    std::vector<Config> next;
    for (const auto& c : layer) {
      for (auto& n : domain.neighbors(c)) {
        const auto k = domain.key(n);
        if (k == target) return depth;
        if (seen.insert(k).second) next.push_back(std::move(n));
      }
    }
    layer = std::move(next);
  }
  return -1;
}

Matrix corrupt(const Matrix& images, double sigma, Rng& rng) {
  if (sigma < 0.0) throw ConfigError("corrupt: sigma must be non-negative");
  Matrix out = images;
  if (sigma == 0.0) return out;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += sigma * rng.normal();
  return out;
}

void save_instances(const DomainSpec& spec, const std::vector<Instance>& instances,
                    const std::filesystem::path& path) {
  Archive ar(kInstancesFormat, kInstancesVersion);
  ar.meta()["domain"] = spec.to_json();
  std::vector<Config> init, goal;
  std::vector<std::int64_t> g;
  for (const auto& in : instances) {
    init.push_back(in.init);
    goal.push_back(in.goal);
    g.push_back(in.g);
  }
  put_configs(ar, "init", init);
  put_configs(ar, "goal", goal);
  const auto n = static_cast<std::int64_t>(g.size());
  ar.put_ints("g", {n}, std::move(g));
  ar.save(path);
}

std::vector<Instance> load_instances(const std::filesystem::path& path, DomainSpec* spec) {
  const Archive ar = Archive::load(path, kInstancesFormat, kInstancesVersion);
  const DomainSpec s = DomainSpec::from_json(ar.meta().at("domain"));
  if (spec) *spec = s;
  const auto init = get_configs(ar, "init");
  const auto goal = get_configs(ar, "goal");
  const auto& g = ar.get_ints("g").data;
  if (init.size() != goal.size() || init.size() != g.size()) throw ConfigError("instance archive: length mismatch");
  std::vector<Instance> out;
  for (std::size_t i = 0; i < init.size(); ++i) out.push_back({init[i], goal[i], static_cast<int>(g[i])});
  return out;
}

}  // namespace latplan::domains
