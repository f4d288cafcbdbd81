#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "latplan/common/error.hpp"
#include "latplan/validate.hpp"

using namespace latplan;
using namespace latplan::validate;
using domains::DomainKind;
using domains::DomainSpec;

namespace {

DomainSpec lights(int n, bool twisted = false) {
  DomainSpec s;
  s.kind = twisted ? DomainKind::twisted_lights_out : DomainKind::lights_out;
  s.n = n;
  return s;
}

DomainSpec tiles(int rows, int cols) {
  DomainSpec s;
  s.kind = DomainKind::sliding_tile;
  s.rows = rows;
  s.cols = cols;
  return s;
}

DomainSpec hanoi(int disks, int towers) {
  DomainSpec s;
  s.kind = DomainKind::hanoi;
  s.disks = disks;
  s.towers = towers;
  return s;
}

std::vector<Image> render_all(const domains::Domain& d, const std::vector<Config>& trace) {
  std::vector<Image> out;
  for (const auto& c : trace) out.push_back(d.render(c));
  return out;
}

// Shortest path by BFS, used to build traces of known length.
std::vector<Config> shortest_path(const domains::Domain& d, const Config& from, const Config& to) {
  std::map<Config, Config> parent{{from, from}};
  std::vector<Config> frontier{from};
  while (!frontier.empty() && !parent.count(to)) {
    std::vector<Config> next;
    for (const auto& c : frontier) {
      for (const auto& s : d.neighbors(c)) {
        if (parent.emplace(s, c).second) next.push_back(s);
      }
    }
    frontier = std::move(next);
  }
  std::vector<Config> path{to};
  while (path.back() != from) path.push_back(parent.at(path.back()));
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace

TEST_CASE("threshold search balances ambiguous and unmatched patches") {
  Matrix d(4, 3);
  d << 0.0, 0.3, 0.4,  //
      0.3, 0.02, 0.3,  //
      0.4, 0.35, 0.1,  //
      0.2, 0.21, 0.45;
  const auto s = search_threshold(d);
  CHECK(s.iterations <= 30);
  CHECK(std::abs(s.counts.ambiguous - s.counts.unmatched) <= 1);
  const auto again = search_threshold(d);
  CHECK(again.theta == s.theta);
  CHECK(again.iterations == s.iterations);
  // theta = 0.25 first: rows 0, 1 and 2 match one pattern, row 3 two
  CHECK(count_matches(d, 0.25).ambiguous == 1);
  CHECK(count_matches(d, 0.25).unmatched == 0);
  CHECK(count_matches(d, 0.05).unmatched == 2);
  CHECK(assign_patterns(d, 0.05) == std::vector<int>{0, 1, -1, -1});
}

TEST_CASE("threshold search stops within the iteration cap") {
  // every patch equidistant from both patterns: n1 jumps from 0 to all at 0.3
  Matrix d = Matrix::Constant(6, 2, 0.3);
  const auto s = search_threshold(d);
  CHECK(s.iterations <= 30);
  CHECK(search_threshold(d, 5).iterations <= 5);
}

TEST_CASE("tile validator parses ground truth exactly") {
  auto d = domains::make_domain(tiles(3, 3));
  TileValidator v(*d);
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    const auto c = d->sample_state(rng);
    const auto p = v.parse(d->render(c));
    CHECK(p.valid);
    CHECK(p.counts.ambiguous == 0);
    CHECK(p.counts.unmatched == 0);
    CHECK(p.config == c);
    CHECK(p.iterations <= 30);
  }
}

TEST_CASE("tile validator rejects duplicates and illegal swaps") {
  auto d = domains::make_domain(tiles(3, 3));
  TileValidator v(*d);
  const Config goal = d->goal();  // 0 1 2 / 3 4 5 / 6 7 8
  // duplicate tile: position 8 shows tile 7
  auto img = d->render(goal);
  const auto geo = d->geometry();
  const auto t7 = domains::extract_patch(img, d->image_shape(), geo, 2, 1);
  for (int y = 0; y < geo.patch_h; ++y) {
    for (int x = 0; x < geo.patch_w; ++x) img[(2 * geo.patch_h + y) * d->image_shape().width + 2 * geo.patch_w + x] = t7[y * geo.patch_w + x];
  }
  const auto p = v.parse(img);
  CHECK_FALSE(p.valid);
  CHECK(p.reason.find("duplicate") != std::string::npos);

  CHECK(v.check_transition(goal, Config{1, 0, 2, 3, 4, 5, 6, 7, 8}).empty());
  CHECK(v.check_transition(goal, Config{3, 1, 2, 0, 4, 5, 6, 7, 8}).empty());
  // non-adjacent swap with the blank
  CHECK_FALSE(v.check_transition(goal, Config{2, 1, 0, 3, 4, 5, 6, 7, 8}).empty());
  // adjacent swap without the blank
  CHECK_FALSE(v.check_transition(goal, Config{0, 2, 1, 3, 4, 5, 6, 7, 8}).empty());
  // no change, three changes
  CHECK_FALSE(v.check_transition(goal, goal).empty());
  CHECK_FALSE(v.check_transition(goal, Config{1, 2, 0, 3, 4, 5, 6, 7, 8}).empty());
}

TEST_CASE("lights out validator") {
  for (int n : {3, 5}) {
    auto d = domains::make_domain(lights(n));
    LightsOutValidator v(*d);
    CHECK(v.threshold() == 0.01);
    Rng rng(n);
    for (int i = 0; i < 20; ++i) {
      const auto c = d->sample_state(rng);
      const auto p = v.parse(d->render(c));
      CHECK(p.valid);
      CHECK(p.config == c);
      for (const auto& s : d->neighbors(c)) CHECK(v.check_transition(c, s).empty());
    }
    // every simultaneous two-button press is rejected
    const Config zero(static_cast<std::size_t>(n * n), 0);
    const auto singles = d->neighbors(zero);
    REQUIRE(singles.size() == static_cast<std::size_t>(n * n));
    for (std::size_t a = 0; a < singles.size(); ++a) {
      for (std::size_t b = a + 1; b < singles.size(); ++b) {
        Config two = zero;
        for (int k = 0; k < n * n; ++k) two[k] = singles[a][k] ^ singles[b][k];
        CHECK_FALSE(v.check_transition(zero, two).empty());
      }
    }
    CHECK_FALSE(v.check_transition(zero, zero).empty());
  }
}

TEST_CASE("lights out validator rejects a half-drawn cell") {
  auto d = domains::make_domain(lights(3));
  LightsOutValidator v(*d);
  auto img = d->render(Config(9, 0));
  for (std::size_t k = 0; k < img.size(); ++k) img[k] = 0.5 * d->render(Config(9, 1))[k];
  CHECK_FALSE(v.parse(img).valid);
}

TEST_CASE("twisted lights out validator unswirls before matching") {
  auto d = domains::make_domain(lights(3, true));
  LightsOutValidator v(*d);
  CHECK(v.threshold() == 0.04);
  Rng rng(2);
  int ok = 0;
  const int trials = 40;
  for (int i = 0; i < trials; ++i) {
    const auto c = d->sample_state(rng);
    const auto p = v.parse(d->render(c));
    if (p.valid && p.config == c) ++ok;
  }
  CHECK(ok == trials);
}

TEST_CASE("hanoi validator") {
  auto d = domains::make_domain(hanoi(3, 3));
  HanoiValidator v(*d);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto c = d->sample_state(rng);
    const auto p = v.parse(d->render(c));
    CHECK(p.valid);
    CHECK(p.config == c);
    for (const auto& s : d->neighbors(c)) CHECK(v.check_transition(c, s).empty());
  }
  // larger on smaller: swap the bottom two rows of a full tower
  const auto geo = d->geometry();
  const auto shape = d->image_shape();
  auto img = d->render(Config{0, 0, 0});
  const auto row1 = domains::extract_patch(img, shape, geo, 1, 0);
  const auto row2 = domains::extract_patch(img, shape, geo, 2, 0);
  const int area = geo.patch_h * geo.patch_w;
  for (int ch = 0; ch < 3; ++ch) {
    for (int x = 0; x < geo.patch_w; ++x) {
      img[(ch * shape.height + 1) * shape.width + x] = row2[ch * area + x];
      img[(ch * shape.height + 2) * shape.width + x] = row1[ch * area + x];
    }
  }
  const auto bad = v.parse(img);
  CHECK_FALSE(bad.valid);
  CHECK(bad.reason.find("smaller") != std::string::npos);

  CHECK(v.check_transition({0, 0, 0}, {1, 0, 0}).empty());
  CHECK_FALSE(v.check_transition({0, 0, 0}, {1, 1, 0}).empty());     // two disks
  CHECK_FALSE(v.check_transition({0, 0, 0}, {0, 1, 0}).empty());     // not the top disk
  CHECK_FALSE(v.check_transition({1, 0, 0}, {1, 1, 0}).empty());     // onto a smaller disk
  CHECK_FALSE(v.check_transition({0, 0, 0}, {0, 0, 0}).empty());
}

TEST_CASE("validators accept legal walks and reject every mutation") {
  const std::vector<DomainSpec> specs{lights(3), lights(3, true), tiles(3, 3), hanoi(3, 3), hanoi(4, 4)};
  for (const auto& spec : specs) {
    auto d = domains::make_domain(spec);
    auto v = make_validator(*d);
    Rng rng(17);
    for (int w = 0; w < 60; ++w) {
      const auto trace = random_walk(*d, 1 + static_cast<int>(rng.below(6)), rng);
      const auto ok = v->check_trace(render_all(*d, trace));
      CHECK_MESSAGE(ok.valid, domains::to_string(spec.kind) << ": " << ok.reason);
      for (std::size_t i = 0; i < trace.size(); ++i) CHECK(ok.states[i].config == trace[i]);
      const auto bad = v->check_trace(mutate_trace(*d, trace, rng));
      CHECK_FALSE_MESSAGE(bad.valid, domains::to_string(spec.kind));
    }
  }
}

TEST_CASE("judge accounting") {
  auto d = domains::make_domain(lights(3));
  auto v = make_validator(*d);
  Rng rng(6);
  auto inst = domains::sample_instances(*d, 3, 1, rng).front();
  CHECK(inst.g == 3);

  const auto none = judge(inst, false, {}, *v);
  CHECK_FALSE(none.found);
  CHECK_FALSE(none.valid);
  CHECK(none.optimal == false);

  auto path = shortest_path(*d, inst.init, inst.goal);
  REQUIRE(path.size() == 4);
  const auto best = judge(inst, true, render_all(*d, path), *v);
  CHECK(best.found);
  CHECK(best.valid);
  CHECK(best.optimal == true);
  CHECK(best.plan_length == 3);

  // detour of two extra moves
  auto detour = path;
  const auto side = d->neighbors(path.front()).front();
  detour.insert(detour.begin() + 1, {side, path.front()});
  const auto longer = judge(inst, true, render_all(*d, detour), *v);
  CHECK(longer.valid);
  CHECK(longer.optimal == false);
  CHECK(longer.plan_length == 5);

  // legal trace that ends elsewhere
  auto wrong = path;
  wrong.pop_back();
  const auto miss = judge(inst, true, render_all(*d, wrong), *v);
  CHECK_FALSE(miss.valid);
  CHECK(miss.failure_reason.find("goal") != std::string::npos);

  // optimal is unset without a ground-truth g
  inst.g = -1;
  CHECK_FALSE(judge(inst, true, render_all(*d, path), *v).optimal.has_value());
}

TEST_CASE("verdict rows") {
  VerdictRow r;
  r.domain = "lights_out";
  r.model = "bicsae";
  r.heuristic = "blind";
  r.hyperparameters = "F=36";
  r.instance = 2;
  r.g = 3;
  r.status = "solved";
  r.verdict.found = true;
  r.verdict.failure_reason = "state 1:\tbad";
  r.verdict.optimal = false;
  std::ostringstream out;
  write_verdict_header(out);
  write_verdict_row(out, r);
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(std::count(header.begin(), header.end(), '\t') == std::count(row.begin(), row.end(), '\t'));
  CHECK(row.find("state 1: bad") != std::string::npos);
}

TEST_CASE("visualize decodes and de-normalizes") {
  models::ModelConfig mc;
  mc.kind = models::ModelKind::sae;
  mc.image = {1, 3, 3};
  mc.latent.F = 5;
  mc.arch.style = "mlp";
  mc.arch.hidden = 8;
  auto model = models::make_model(mc, 3);
  auto& sae = dynamic_cast<models::StateAutoencoder&>(*model);

  Matrix raw(4, 9);
  Rng rng(1);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = rng.uniform();
  const auto norm = fit_normalization(raw, {0, 1, 2, 3});
  CHECK((norm.invert(norm.apply(raw)) - raw).cwiseAbs().maxCoeff() < 1e-6);

  CHECK(visualize(sae, norm, {}).empty());
  const std::vector<std::vector<int>> trace{{0, 1, 0, 1, 1}, {1, 1, 0, 0, 0}, {0, 0, 0, 0, 1}};
  const auto imgs = visualize(sae, norm, trace);
  REQUIRE(imgs.size() == 3);
  Matrix z(1, 5);
  z << 1, 1, 0, 0, 0;
  const Matrix expect = norm.invert(sae.decode(z)).cwiseMax(0.0).cwiseMin(1.0);
  for (int k = 0; k < 9; ++k) {
    CHECK(imgs[1][k] == doctest::Approx(expect(0, k)));
    CHECK(imgs[1][k] >= 0.0);
    CHECK(imgs[1][k] <= 1.0);
  }
  CHECK_THROWS_AS(visualize(sae, norm, {{0, 1}}), ConfigError);

  const auto dir = std::filesystem::temp_directory_path() / "latplan_vis_test";
  std::filesystem::remove_all(dir);
  write_trace_images(dir, "plan", imgs, mc.image, 2);
  CHECK(std::filesystem::exists(dir / "plan_000.pgm"));
  CHECK(std::filesystem::exists(dir / "plan_002.pgm"));
  CHECK(std::filesystem::exists(dir / "plan_sheet.pgm"));
  CHECK(read_pnm(dir / "plan_000.pgm").shape.width == 6);
  std::filesystem::remove_all(dir);
}
