// Acceptance runner: one PASS/FAIL line per criterion. Exits 0 unless
// --strict is given, so unattained criteria are reported without aborting
// the test suite.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "latplan/cli.hpp"
#include "latplan/common/error.hpp"
#include "latplan/discrete_latent.hpp"
#include "latplan/extraction.hpp"
#include "latplan/metrics.hpp"
#include "latplan/strips.hpp"
#include "latplan/validate.hpp"

using namespace latplan;
namespace fs = std::filesystem;
using ad::Matrix;

namespace tol {
constexpr double kl_bernoulli = 1e-4;
constexpr double kl_categorical = 1e-6;
constexpr double tau = 1e-5;
constexpr double sampling_sigmas = 3.0;
constexpr double grad_rel_error = 1e-3;
constexpr double c1_seconds = 1.0;
constexpr double c2_seconds = 30.0;
constexpr double c3_seconds = 60.0;
constexpr double c4_seconds = 60.0;
constexpr double c7_seconds = 120.0;
constexpr double c8_train_seconds = 30.0 * 60.0;
constexpr int c8_found = 15;
constexpr int c8_valid = 12;
}  // namespace tol

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  std::string failures;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failures += " [failed: " + what + "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- 1 ----

void closed_form(Outcome& o) {
  const auto t0 = Clock::now();
  const double kb = latent::kl_bernoulli(0.9, 0.1);
  const double kc = latent::kl_categorical_uniform(std::vector<double>{1, 0, 0, 0});
  const double tau = latent::anneal_tau(latent::AnnealSchedule{}, 500);
  o.require(std::abs(kb - 1.75778) < tol::kl_bernoulli, "kl_bernoulli");
  o.require(std::abs(kc - std::log(4.0)) < tol::kl_categorical, "kl_categorical_uniform");
  o.require(std::abs(tau - 1.58114) < tol::tau, "tau(500)");
  const double s = since(t0);
  o.require(s < tol::c1_seconds, "runtime");
  o.detail << "kl_bernoulli=" << kb << " kl_cat=" << kc << " tau500=" << tau << " (" << s << " s)";
}

// ---- 2 ----

void sampling(Outcome& o) {
  const auto t0 = Clock::now();
  constexpr int n = 100000;
  Rng rng(7);
  double worst = 0.0;
  for (double l : {-2.0, 0.0, 2.0}) {
    int ones = 0;
    for (int i = 0; i < n; ++i) ones += latent::binary_concrete_sample(l, 0.05, rng) >= 0.5;
    const double p = latent::sigmoid(l);
    const double z = std::abs(static_cast<double>(ones) / n - p) / std::sqrt(p * (1 - p) / n);
    worst = std::max(worst, z);
    o.require(z < tol::sampling_sigmas, "binary concrete l=" + std::to_string(l));
  }
  const std::vector<double> logits{0.5, -1.0, 1.5, 0.0};
  const auto p = latent::softmax(logits);
  std::vector<int> counts(logits.size(), 0);
  for (int i = 0; i < n; ++i) counts[latent::argmax(latent::gumbel_softmax_sample(logits, 0.05, rng))]++;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double z = std::abs(static_cast<double>(counts[k]) / n - p[k]) / std::sqrt(p[k] * (1 - p[k]) / n);
    worst = std::max(worst, z);
    o.require(z < tol::sampling_sigmas, "gumbel softmax class " + std::to_string(k));
  }
  const double s = since(t0);
  o.require(s < tol::c2_seconds, "runtime");
  o.detail << "worst deviation " << worst << " sigma (" << s << " s)";
}

// ---- 3 ----

void gradients(Outcome& o) {
  using namespace ad;
  using testing::random_matrix;
  const auto t0 = Clock::now();
  Rng rng(11);
  double worst = 0.0;
  int ops = 0;
  auto check = [&](const std::string& name, std::vector<Var> params,
                   const std::function<Var(const std::vector<Var>&)>& f) {
    const auto r = testing::gradcheck(params, f);
    worst = std::max(worst, r.max_rel_error);
    ++ops;
    o.require(r.max_rel_error < tol::grad_rel_error, name);
  };
  const Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 3, 4);
  const Matrix row = random_matrix(rng, 1, 4), w = random_matrix(rng, 4, 5), bias = random_matrix(rng, 1, 5);
  const Matrix side = random_matrix(rng, 3, 2);
  const Matrix p34 = random_matrix(rng, 3, 4), p35 = random_matrix(rng, 3, 5), p36 = random_matrix(rng, 3, 6);
  const Matrix p31 = random_matrix(rng, 3, 1);
  auto proj = [](const Var& v, const Matrix& m) { return sum(mul(v, constant(m))); };
  Matrix away = a;  // relu away from its kink
  for (Eigen::Index k = 0; k < away.size(); ++k) {
    if (std::abs(away.data()[k]) < 0.05) away.data()[k] = 0.5;
  }
  Matrix bits(3, 4);
  for (Eigen::Index k = 0; k < bits.size(); ++k) bits.data()[k] = rng.below(2);

  check("add", {parameter(a), parameter(b)}, [&](const auto& p) { return proj(add(p[0], p[1]), p34); });
  check("sub", {parameter(a), parameter(b)}, [&](const auto& p) { return proj(sub(p[0], p[1]), p34); });
  check("mul", {parameter(a), parameter(b)}, [&](const auto& p) { return proj(mul(p[0], p[1]), p34); });
  check("scale", {parameter(a)}, [&](const auto& p) { return proj(scale(p[0], -1.3), p34); });
  check("add_scalar", {parameter(a)}, [&](const auto& p) { return proj(mul(add_scalar(p[0], 0.4), p[0]), p34); });
  check("add_row", {parameter(a), parameter(row)}, [&](const auto& p) { return proj(add_row(p[0], p[1]), p34); });
  check("mul_row", {parameter(a), parameter(row)}, [&](const auto& p) { return proj(mul_row(p[0], p[1]), p34); });
  check("matmul", {parameter(a), parameter(w)}, [&](const auto& p) { return proj(matmul(p[0], p[1]), p35); });
  check("linear", {parameter(a), parameter(w), parameter(bias)},
        [&](const auto& p) { return proj(linear(p[0], p[1], p[2]), p35); });
  check("concat_cols", {parameter(a), parameter(side)},
        [&](const auto& p) { return proj(concat_cols(p[0], p[1]), p36); });
  check("relu", {parameter(away)}, [&](const auto& p) { return proj(relu(p[0]), p34); });
  check("sigmoid", {parameter(a)}, [&](const auto& p) { return proj(sigmoid(p[0]), p34); });
  check("softmax_rows", {parameter(a)}, [&](const auto& p) { return proj(softmax_rows(p[0]), p34); });
  check("log_softmax_rows", {parameter(a)}, [&](const auto& p) { return proj(log_softmax_rows(p[0]), p34); });
  check("sum", {parameter(a)}, [&](const auto& p) { return sum(mul(p[0], p[0])); });
  check("mean", {parameter(a)}, [&](const auto& p) { return mean(mul(p[0], p[0])); });
  check("sum_cols", {parameter(a)}, [&](const auto& p) { return proj(sum_cols(mul(p[0], p[0])), p31); });
  check("squared_error_rows", {parameter(a)}, [&](const auto& p) { return proj(squared_error_rows(b, p[0]), p31); });
  check("kl_bernoulli_logits_rows", {parameter(a), parameter(b)},
        [&](const auto& p) { return proj(kl_bernoulli_logits_rows(p[0], p[1]), p31); });
  check("kl_bernoulli_prior_rows", {parameter(a)},
        [&](const auto& p) { return proj(kl_bernoulli_prior_rows(p[0], 0.1), p31); });
  check("kl_categorical_logits_rows", {parameter(a), parameter(b)},
        [&](const auto& p) { return proj(kl_categorical_logits_rows(p[0], p[1]), p31); });
  check("kl_categorical_uniform_rows", {parameter(a)},
        [&](const auto& p) { return proj(kl_categorical_uniform_rows(p[0]), p31); });
  check("bce_logits_rows", {parameter(a)}, [&](const auto& p) { return proj(bce_logits_rows(p[0], bits), p31); });

  const ConvGeometry g{2, 4, 3, 3, 2};
  const Matrix cx = random_matrix(rng, 2, 24), cw = random_matrix(rng, 2, 18), cb = random_matrix(rng, 1, 2);
  const Matrix pc = random_matrix(rng, 2, 24);
  check("conv2d", {parameter(cx), parameter(cw), parameter(cb)},
        [&](const auto& p) { return proj(conv2d(p[0], p[1], p[2], g), pc); });

  const Matrix bx = random_matrix(rng, 5, 6, 1.5), gamma = random_matrix(rng, 1, 2), beta = random_matrix(rng, 1, 2);
  const Matrix pb = random_matrix(rng, 5, 6);
  RowVector m(2), v(2);
  m << 0.3, -0.2;
  v << 1.1, 0.7;
  check("batch_norm_train", {parameter(bx), parameter(gamma), parameter(beta)},
        [&](const auto& p) { return proj(batch_norm_train(p[0], p[1], p[2], 2, 3, 1e-3, nullptr), pb); });
  check("batch_norm_eval", {parameter(bx), parameter(gamma), parameter(beta)},
        [&](const auto& p) { return proj(batch_norm_eval(p[0], p[1], p[2], m, v, 2, 3, 1e-3), pb); });

  const double s = since(t0);
  o.require(s < tol::c3_seconds, "runtime");
  o.detail << ops << " ops, worst relative error " << worst << " (" << s << " s)";
}

// ---- 4 ----

std::vector<strips::GroundAction> lights_out_actions(int n) {
  std::vector<strips::GroundAction> out;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      std::vector<int> cells{r * n + c};
      if (r > 0) cells.push_back((r - 1) * n + c);
      if (r + 1 < n) cells.push_back((r + 1) * n + c);
      if (c > 0) cells.push_back(r * n + c - 1);
      if (c + 1 < n) cells.push_back(r * n + c + 1);
      for (int val = 0; val < (1 << cells.size()); ++val) {
        strips::GroundAction a;
        a.name = "press-" + std::to_string(r * n + c) + "-" + std::to_string(val);
        for (std::size_t k = 0; k < cells.size(); ++k) {
          if ((val >> k) & 1) {
            a.pos.push_back(cells[k]);
            a.del.push_back(cells[k]);
          } else {
            a.neg.push_back(cells[k]);
            a.add.push_back(cells[k]);
          }
        }
        a.pos = strips::normalized(a.pos);
        a.neg = strips::normalized(a.neg);
        a.add = strips::normalized(a.add);
        a.del = strips::normalized(a.del);
        out.push_back(a);
      }
    }
  }
  return out;
}

// on(d, t) = d * towers + t
std::vector<strips::GroundAction> hanoi_actions(int disks, int towers) {
  std::vector<strips::GroundAction> out;
  for (int d = 0; d < disks; ++d) {
    for (int from = 0; from < towers; ++from) {
      for (int to = 0; to < towers; ++to) {
        if (from == to) continue;
        strips::GroundAction a;
        a.name = "move-" + std::to_string(d) + "-" + std::to_string(from) + "-" + std::to_string(to);
        a.pos = {d * towers + from};
        for (int s = 0; s < d; ++s) {
          a.neg.push_back(s * towers + from);
          a.neg.push_back(s * towers + to);
        }
        a.neg = strips::normalized(a.neg);
        a.add = {d * towers + to};
        a.del = {d * towers + from};
        out.push_back(a);
      }
    }
  }
  return out;
}

strips::State hanoi_state(const domains::Config& c, int towers) {
  strips::State s(static_cast<int>(c.size()) * towers);
  for (std::size_t d = 0; d < c.size(); ++d) s.set(static_cast<int>(d) * towers + c[d]);
  return s;
}

void strips_oracles(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(21);
  int agree = 0, total = 0;
  {
    domains::DomainSpec spec;
    const auto dom = domains::make_domain(spec);
    const auto actions = lights_out_actions(3);
    strips::PlanningProblem p;
    p.F = 9;
    p.actions = actions;
    for (int f = 0; f < 9; ++f) p.goal_neg.push_back(f);
    for (int i = 0; i < 50; ++i) {
      const auto c = dom->sample_state(rng);
      p.init = strips::State::from_bits(c);
      const auto r = strips::astar(p, strips::Heuristic::blind);
      ++total;
      agree += r.status == strips::SearchStatus::solved &&
               static_cast<int>(r.plan.size()) == domains::bfs_distance(*dom, c, dom->goal());
    }
  }
  {
    domains::DomainSpec spec;
    spec.kind = domains::DomainKind::hanoi;
    spec.disks = 3;
    spec.towers = 3;
    const auto dom = domains::make_domain(spec);
    strips::PlanningProblem p;
    p.F = 9;
    p.actions = hanoi_actions(3, 3);
    const auto goal = hanoi_state(dom->goal(), 3);
    for (int f = 0; f < 9; ++f) (goal.get(f) ? p.goal_pos : p.goal_neg).push_back(f);
    for (int i = 0; i < 50; ++i) {
      const auto c = dom->sample_state(rng);
      p.init = hanoi_state(c, 3);
      const auto r = strips::astar(p, strips::Heuristic::blind);
      ++total;
      agree += r.status == strips::SearchStatus::solved &&
               static_cast<int>(r.plan.size()) == domains::bfs_distance(*dom, c, dom->goal());
    }
  }
  o.require(agree == total, "blind A* equals BFS");

  Matrix z0(1, 4), z1(1, 4);
  z0 << 0, 0, 1, 1;
  z1 << 0, 1, 0, 1;
  const strips::Domain d{"latent", 4, extraction::ama1_translate(z0, z1)};
  const auto back = strips::parse_domain(strips::emit_domain(d));
  bool round_trip = back.actions.size() == 1 && back.actions == d.actions;
  if (round_trip) {
    const auto trace = strips::simulate({0}, strips::State::from_string("0011"), back.actions);
    round_trip = trace.back().to_string() == "0101";
  }
  o.require(round_trip, "0011 -> 0101 round trip");
  const double s = since(t0);
  o.require(s < tol::c4_seconds, "runtime");
  o.detail << agree << "/" << total << " lengths equal BFS, example round trip " << (round_trip ? "exact" : "broken")
           << " (" << s << " s)";
}

// ---- 6 ----

void xor_counts(Outcome& o) {
  extraction::ExtractedAction five;
  five.name = "a0";
  five.xor_effect = {0, 1, 2, 3, 4};
  const auto v5 = extraction::compile_xor({five});
  o.require(v5.size() == 32, "5 xor bits -> 32 variants");

  std::vector<extraction::ExtractedAction> acts;
  for (int i = 0; i < 5; ++i) {
    extraction::ExtractedAction a;
    a.label = i;
    a.name = "a" + std::to_string(i);
    a.xor_effect = {i};
    acts.push_back(a);
  }
  const auto v1 = extraction::compile_xor(acts);
  o.require(v1.size() == acts.size() + 5, "1 xor bit in 5 actions -> +5");

  Rng rng(31);
  int malformed = 0, fuzzed = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int F = 2 + static_cast<int>(rng.below(10));
    extraction::ExtractedAction a;
    a.name = "f" + std::to_string(trial);
    for (int f = 0; f < F; ++f) {
      switch (rng.below(4)) {
        case 0: a.pos.push_back(f); break;
        case 1: a.neg.push_back(f); break;
        case 2: a.prevail.push_back(f); break;
        default: break;
      }
      switch (rng.below(5)) {
        case 0: a.add.push_back(f); break;
        case 1: a.del.push_back(f); break;
        case 2: a.xor_effect.push_back(f); break;
        default: break;
      }
      if (rng.below(8) == 0) a.xor_precondition.push_back(f);
    }
    std::set<int> xs(a.xor_effect.begin(), a.xor_effect.end());
    xs.insert(a.xor_precondition.begin(), a.xor_precondition.end());
    const auto v = extraction::compile_xor({a});
    ++fuzzed;
    bool ok = v.size() == (std::size_t{1} << xs.size());
    std::set<std::string> names;
    for (const auto& x : v) {
      names.insert(x.name);
      ok = ok && x.xor_effect.empty() && x.xor_precondition.empty();
      try {
        x.to_ground().validate(F);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    ok = ok && names.size() == v.size();
    malformed += !ok;
  }
  o.require(malformed == 0, "well-formedness");
  o.detail << "32 variants: " << v5.size() << ", 5 single-bit actions -> " << v1.size() << ", malformed " << malformed
           << "/" << fuzzed;
}

// ---- 7 ----

void validators(Outcome& o) {
  const auto t0 = Clock::now();
  auto spec_of = [](domains::DomainKind k) {
    domains::DomainSpec s;
    s.kind = k;
    return s;
  };
  const std::vector<domains::DomainSpec> specs{
      spec_of(domains::DomainKind::lights_out), spec_of(domains::DomainKind::twisted_lights_out),
      spec_of(domains::DomainKind::sliding_tile), spec_of(domains::DomainKind::hanoi)};
  for (const auto& spec : specs) {
    const auto d = domains::make_domain(spec);
    const auto v = validate::make_validator(*d);
    Rng rng(41);
    int accepted = 0, rejected = 0;
    for (int w = 0; w < 200; ++w) {
      const auto trace = validate::random_walk(*d, 1 + static_cast<int>(rng.below(8)), rng);
      std::vector<validate::Image> images;
      for (const auto& c : trace) images.push_back(d->render(c));
      accepted += v->check_trace(images).valid;
      rejected += !v->check_trace(validate::mutate_trace(*d, trace, rng)).valid;
    }
    const auto name = domains::to_string(spec.kind);
    o.require(accepted == 200, name + " legal traces");
    o.require(rejected == 200, name + " mutations");
    o.detail << name << " " << accepted << "/200 legal, " << rejected << "/200 mutations rejected; ";
  }
  const double s = since(t0);
  o.require(s < tol::c7_seconds, "runtime");
  o.detail << "(" << s << " s)";
}

// ---- trained runs ----

struct Desk {
  fs::path dir;
  double train_seconds = -1.0;
  bool ok = false;
  std::string error;
};

cli::StageOptions quiet() {
  cli::StageOptions opts;
  opts.force = true;
  return opts;
}

Desk run_desk(const fs::path& workdir, bool reuse) {
  Desk d;
  d.dir = workdir / "desk";
  const fs::path timing = workdir / "desk_train_seconds.txt";
  try {
    if (reuse && fs::exists(d.dir / "validate/verdicts.tsv") && fs::exists(timing)) {
      std::ifstream(timing) >> d.train_seconds;
    } else {
      const auto opts = quiet();
      cli::init_experiment(d.dir, cli::ExperimentConfig{}, true);
      cli::generate_data(d.dir, opts);
      const auto t1 = Clock::now();
      cli::train(d.dir, opts);
      d.train_seconds = since(t1);
      std::ofstream(timing) << d.train_seconds << '\n';
      cli::export_pddl(d.dir, opts);
      cli::make_instances(d.dir, opts);
      cli::plan(d.dir, opts);
      cli::validate(d.dir, opts);
    }
    d.ok = true;
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  return d;
}

std::vector<std::map<std::string, std::string>> read_tsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<std::map<std::string, std::string>> rows;
  std::string line;
  std::vector<std::string> header;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream s(l);
    for (std::string f; std::getline(s, f, '\t');) out.push_back(f);
    return out;
  };
  if (std::getline(in, line)) header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) break;
    const auto f = split(line);
    std::map<std::string, std::string> r;
    for (std::size_t i = 0; i < header.size() && i < f.size(); ++i) r[header[i]] = f[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

models::StateAutoencoder& sae_of(models::LoadedCheckpoint& ck) {
  auto* sae = dynamic_cast<models::StateAutoencoder*>(ck.model.get());
  if (!sae) throw ConfigError("checkpoint does not hold a state autoencoder");
  return *sae;
}

// ---- 8 ----

void end_to_end(Outcome& o, const Desk& desk) {
  if (!desk.ok) {
    o.require(false, "desk run: " + desk.error);
    return;
  }
  const auto rows = read_tsv(desk.dir / "validate/verdicts.tsv");
  int found = 0, valid = 0, optimal = 0, accounting = 0, unproven = 0;
  for (const auto& r : rows) {
    const bool f = r.at("found") == "1", v = r.at("valid") == "1", opt = r.at("optimal") == "1";
    found += f;
    valid += v;
    optimal += opt;
    accounting += (v && !f) || (opt && !v);
    if (v && std::stoi(r.at("plan_length")) == std::stoi(r.at("g")) && !opt) ++unproven;
  }
  o.require(rows.size() == 20, "20 instances");
  o.require(found >= tol::c8_found, "found >= 15");
  o.require(valid >= tol::c8_valid, "valid >= 12");
  o.require(accounting == 0 && found >= valid && valid >= optimal, "found >= valid >= optimal");
  o.require(unproven == 0, "length-g valid plans are optimal");
  const double ts = desk.train_seconds;
  o.require(ts >= 0 && ts <= tol::c8_train_seconds, "training time");
  o.detail << "found " << found << "/" << rows.size() << ", valid " << valid << ", optimal " << optimal
           << "; training " << ts << " s";
}

// ---- 5 ----

void monotonicity(Outcome& o, const std::vector<fs::path>& checkpoints, const Desk& desk) {
  int checked = 0, blocks = 0, bad_behaviour = 0, violating = 0;
  for (const auto& path : checkpoints) {
    auto ck = models::load_checkpoint(path);
    auto* cs = dynamic_cast<models::CubeSpaceAE*>(ck.model.get());
    if (!cs) continue;
    ++checked;
    const auto violations = nn::check_monotonicity(cs->apply_btl(), cs->regress_btl());
    if (!violations.empty()) {
      ++violating;
      continue;
    }
    std::vector<const nn::BackToLogit*> btls{&cs->apply_btl()};
    if (cs->regress_btl()) btls.push_back(cs->regress_btl());
    for (const auto* btl : btls) {
      ++blocks;
      const int F = btl->F();
      for (int a = 0; a < btl->A(); ++a) {
        for (int f = 0; f < F; ++f) {
          // every other bit at 0 and at 1: the per-bit behaviour must not depend on it
          for (int background : {0, 1}) {
            std::vector<int> z(static_cast<std::size_t>(F), background);
            z[f] = 0;
            const int out0 = btl->eval_bits(z, a)[f];
            z[f] = 1;
            const int out1 = btl->eval_bits(z, a)[f];
            const bool set = out0 == 1 && out1 == 1, clear = out0 == 0 && out1 == 0, copy = out0 == 0 && out1 == 1;
            bad_behaviour += !(set || clear || copy);
          }
        }
      }
    }
  }
  o.require(checked > 0, "no cube-space checkpoint");
  o.require(bad_behaviour == 0, "set/clear/copy");
  o.detail << checked << " checkpoints, " << blocks << " BTL blocks swept, " << bad_behaviour
           << " non-monotone bits, " << violating << " with negative slopes";

  if (!desk.ok) return;
  const auto ds = domains::load_dataset(desk.dir / "data/dataset.lpa");
  auto ck = models::load_checkpoint(desk.dir / "model/checkpoint.lpa");
  auto* cs = dynamic_cast<models::CubeSpaceAE*>(ck.model.get());
  if (!cs) return;
  const auto train = models::PairSet{ds.norm.apply(ds.raw0), ds.norm.apply(ds.raw1)}.subset(ds.train);
  const auto data = extraction::encode_transitions(*cs, train.x0, train.x1);
  const auto domain = extraction::generate_domain(*cs, data);
  const auto& r = domain.report;
  o.require(r.xor_free_matches == r.xor_free_transitions, "extraction fidelity");

  // mismatches split by whether prevail reconciliation dropped an effect of the label
  std::set<int> dropped, with_xor;
  for (const auto& n : r.notes) {
    if (n.resolution == "dropped-effect") dropped.insert(n.label);
  }
  for (const auto& a : r.actions) {
    if (a.xor_effect_bits + a.xor_precondition_bits > 0) with_xor.insert(a.label);
  }
  std::map<std::string, const extraction::ExtractedAction*> by_name;
  for (const auto& a : domain.actions) by_name[a.name] = &a;
  int clean = 0, clean_miss = 0;
  for (std::size_t i = 0; i < data.z0.size(); ++i) {
    const int label = data.labels[i];
    if (with_xor.count(label) || dropped.count(label)) continue;
    const auto* act = by_name.at("a" + std::to_string(label));
    auto z = data.z0[i];
    for (int f : act->del) z[f] = 0;
    for (int f : act->add) z[f] = 1;
    ++clean;
    clean_miss += z != cs->apply_btl().eval_bits(data.z0[i], label);
  }
  o.require(clean_miss == 0, "fidelity on labels without dropped effects");
  o.detail << "; extraction fidelity " << r.xor_free_matches << "/" << r.xor_free_transitions
           << " xor-free training transitions (" << dropped.size() << " labels with dropped effects; "
           << clean - clean_miss << "/" << clean << " on the other labels)";
}

// ---- 9 ----

struct StabilityRun {
  double variance = 0.0;
  fs::path checkpoint;
};

StabilityRun stability_run(const fs::path& workdir, double epsilon, std::uint64_t seed, bool reuse) {
  std::ostringstream name;
  name << "stability_eps" << epsilon << "_seed" << seed;
  const fs::path dir = workdir / name.str();
  if (!(reuse && fs::exists(dir / "model/checkpoint.lpa"))) {
    cli::ExperimentConfig c;
    c.latent.epsilon = epsilon;
    c.train.seed = seed;
    cli::init_experiment(dir, c, true);
    cli::generate_data(dir, quiet());
    cli::train(dir, quiet());
  }
  const auto ds = domains::load_dataset(dir / "data/dataset.lpa");
  auto ck = models::load_checkpoint(dir / "model/checkpoint.lpa");
  Matrix raw(static_cast<Eigen::Index>(ds.test.size()), ds.raw0.cols());
  for (std::size_t i = 0; i < ds.test.size(); ++i) raw.row(static_cast<Eigen::Index>(i)) = ds.raw0.row(ds.test[i]);
  return {metrics::state_variance(sae_of(ck), ck.norm, raw), dir / "model/checkpoint.lpa"};
}

void stability(Outcome& o, const std::vector<StabilityRun>& low, const std::vector<StabilityRun>& high) {
  double a = 0.0, b = 0.0;
  for (const auto& r : low) a += r.variance;
  for (const auto& r : high) b += r.variance;
  a /= static_cast<double>(low.size());
  b /= static_cast<double>(high.size());
  o.require(low.size() >= 3 && low.size() == high.size(), "3 seed pairs");
  o.require(a <= b, "variance(eps=0.1) <= variance(eps=0.5)");
  o.detail << "mean state variance eps=0.1: " << a << ", eps=0.5: " << b << " over " << low.size() << " seed pairs (";
  for (std::size_t i = 0; i < low.size(); ++i) o.detail << (i ? ", " : "") << low[i].variance << " vs " << high[i].variance;
  o.detail << ")";
}

// ---- 10 ----

void partition_and_elbo(Outcome& o, const std::vector<fs::path>& checkpoints, const fs::path& dataset) {
  const auto ds = domains::load_dataset(dataset);
  int partitions = 0, inequalities = 0;
  double worst_gap = std::numeric_limits<double>::infinity();
  for (const auto& path : checkpoints) {
    auto ck = models::load_checkpoint(path);
    auto& sae = sae_of(ck);
    const auto pairs = models::PairSet{ck.norm.apply(ds.raw0), ck.norm.apply(ds.raw1)}.subset(ds.test);
    const auto u = metrics::bit_usage(sae, pairs.x0);
    const int F = ck.model->config().latent.F;
    partitions += u.effective + u.constant_zero + u.constant_one == F;
    const double elbo = metrics::eval_neg_elbo(*ck.model, pairs);
    const double trained = metrics::trained_objective(*ck.model, pairs);
    inequalities += elbo <= trained;
    worst_gap = std::min(worst_gap, trained - elbo);
  }
  const int n = static_cast<int>(checkpoints.size());
  o.require(n > 0, "no checkpoints");
  o.require(partitions == n, "bit partition");
  o.require(inequalities == n, "elbo inequality");
  o.detail << "partition holds on " << partitions << "/" << n << ", elbo <= objective on " << inequalities << "/" << n
           << " (smallest gap " << worst_gap << ")";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latplan acceptance criteria"};
  fs::path workdir = fs::temp_directory_path() / "latplan_acceptance";
  std::vector<int> only;
  fs::path results_file;
  bool strict = false, reuse = false;
  app.add_option("--workdir", workdir, "scratch directory for trained runs");
  app.add_option("--only", only, "criteria to run")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_flag("--strict", strict, "exit non-zero when a criterion fails");
  app.add_flag("--reuse", reuse, "reuse finished runs in the workdir");
  app.add_option("--results", results_file, "also write the PASS/FAIL lines to this file");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, Outcome> results;
  std::ofstream results_out;
  if (!results_file.empty()) results_out.open(results_file);
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    if (results_out) results_out << line << std::endl;
  };
  auto run = [&](int c, const std::function<void(Outcome&)>& fn) {
    if (!wanted(c)) return;
    Outcome& o = results[c];
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    emit("criterion " + std::to_string(c) + ": " + (o.pass ? "PASS" : "FAIL") + "  " + o.detail.str() + o.failures);
  };

  run(1, closed_form);
  run(2, sampling);
  run(3, gradients);
  run(4, strips_oracles);
  run(6, xor_counts);
  run(7, validators);

  const bool trained = wanted(5) || wanted(8) || wanted(9) || wanted(10);
  if (trained) {
    fs::create_directories(workdir);
    const Desk desk = run_desk(workdir, reuse);
    std::vector<StabilityRun> low, high;
    std::string stability_error;
    if (wanted(5) || wanted(9) || wanted(10)) {
      try {
        for (std::uint64_t seed : {1, 2, 3}) {
          low.push_back(stability_run(workdir, 0.1, seed, reuse));
          high.push_back(stability_run(workdir, 0.5, seed, reuse));
        }
      } catch (const std::exception& e) {
        stability_error = e.what();
      }
    }
    std::vector<fs::path> checkpoints;
    if (desk.ok) checkpoints.push_back(desk.dir / "model/checkpoint.lpa");
    for (const auto& r : low) checkpoints.push_back(r.checkpoint);
    for (const auto& r : high) checkpoints.push_back(r.checkpoint);

    run(5, [&](Outcome& o) { monotonicity(o, checkpoints, desk); });
    run(8, [&](Outcome& o) { end_to_end(o, desk); });
    run(9, [&](Outcome& o) {
      o.require(stability_error.empty(), stability_error);
      stability(o, low, high);
    });
    run(10, [&](Outcome& o) {
      o.require(desk.ok, "desk run: " + desk.error);
      if (desk.ok) partition_and_elbo(o, checkpoints, desk.dir / "data/dataset.lpa");
    });
  }

  int failed = 0;
  for (const auto& [c, o] : results) failed += !o.pass;
  emit("summary: " + std::to_string(results.size() - failed) + "/" + std::to_string(results.size()) + " criteria pass");
  return strict && failed ? 1 : 0;
}
