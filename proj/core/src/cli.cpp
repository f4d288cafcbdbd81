#include "latplan/cli.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "latplan/common/error.hpp"
#include "latplan/common/image_io.hpp"
#include "latplan/extraction.hpp"
#include "latplan/metrics.hpp"
#include "latplan/validate.hpp"

#ifndef LATPLAN_VERSION
#define LATPLAN_VERSION "0.0.0"
#endif

namespace latplan::cli {

using ad::Matrix;
using nlohmann::json;

std::string to_string(Approach a) {
  switch (a) {
    case Approach::ama1: return "ama1";
    case Approach::ama2: return "ama2";
    case Approach::ama3plus: return "ama3plus";
    case Approach::ama4plus: return "ama4plus";
  }
  return "?";
}

Approach approach_from_string(const std::string& s) {
  if (s == "ama1") return Approach::ama1;
  if (s == "ama2") return Approach::ama2;
  if (s == "ama3plus") return Approach::ama3plus;
  if (s == "ama4plus") return Approach::ama4plus;
  throw ConfigError("unknown approach '" + s + "' (expected ama1, ama2, ama3plus or ama4plus)");
}

std::string to_string(PlannerKind p) {
  switch (p) {
    case PlannerKind::internal_blind: return "internal_blind";
    case PlannerKind::internal_goal_count: return "internal_goal_count";
    case PlannerKind::external: return "external";
  }
  return "?";
}

PlannerKind planner_kind_from_string(const std::string& s) {
  if (s == "internal_blind") return PlannerKind::internal_blind;
  if (s == "internal_goal_count") return PlannerKind::internal_goal_count;
  if (s == "external") return PlannerKind::external;
  throw ConfigError("unknown planner '" + s + "' (expected internal_blind, internal_goal_count or external)");
}

// ---- config ----

namespace {

models::ModelKind state_model_kind(Approach a) {
  switch (a) {
    case Approach::ama1:
    case Approach::ama2: return models::ModelKind::sae;
    case Approach::ama3plus: return models::ModelKind::csae;
    case Approach::ama4plus: return models::ModelKind::bicsae;
  }
  return models::ModelKind::bicsae;
}

// Every key of `given` must exist in `known`, recursively through objects.
void check_keys(const json& given, const json& known, const std::string& prefix) {
  if (!given.is_object() || !known.is_object()) return;
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    check_keys(it.value(), known.at(it.key()), path);
  }
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  latent.F = 36;
  latent.A = 128;
  arch.style = "mlp";
  train = models::TrainConfig::desk();
}

void ExperimentConfig::validate() const {
  domain.validate();
  latent.validate();
  arch.validate();
  train.validate();
  if (data.transitions < 10) throw ConfigError("data.transitions must be at least 10");
  if (instances.g.empty()) throw ConfigError("instances.g must list at least one distance");
  for (int g : instances.g) {
    if (g < 0) throw ConfigError("instances.g values must be non-negative");
  }
  if (instances.count < 1) throw ConfigError("instances.count must be positive");
  if (instances.noise < 0.0) throw ConfigError("instances.noise must be non-negative");
  if (planner.max_seconds <= 0.0) throw ConfigError("planner.max_seconds must be positive");
  if (planner.max_expansions < 1) throw ConfigError("planner.max_expansions must be positive");
}

json ExperimentConfig::to_json() const {
  const auto mc = model_config({1, 1, 1}).to_json();
  return {{"domain", domain.to_json()},
          {"approach", to_string(approach)},
          {"latent", mc.at("latent")},
          {"arch", arch.to_json()},
          {"train", train.to_json()},
          {"data", {{"transitions", data.transitions}, {"seed", data.seed}}},
          {"instances",
           {{"g", instances.g}, {"count", instances.count}, {"noise", instances.noise}, {"seed", instances.seed}}},
          {"planner",
           {{"kind", to_string(planner.kind)},
            {"command", planner.command},
            {"max_seconds", planner.max_seconds},
            {"max_expansions", planner.max_expansions}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  check_keys(j, c.to_json(), "");
  try {
    if (j.contains("domain")) {
      json d = c.domain.to_json();
      d.merge_patch(j.at("domain"));
      c.domain = domains::DomainSpec::from_json(d);
    }
    if (j.contains("approach")) c.approach = approach_from_string(j.at("approach").get<std::string>());
    if (j.contains("latent") || j.contains("arch")) {
      json mc = c.model_config({1, 1, 1}).to_json();
      if (j.contains("latent")) mc["latent"].merge_patch(j.at("latent"));
      if (j.contains("arch")) mc["arch"].merge_patch(j.at("arch"));
      const auto parsed = models::ModelConfig::from_json(mc);
      c.latent = parsed.latent;
      c.arch = parsed.arch;
    }
    if (j.contains("train")) {
      json t = c.train.to_json();
      t.merge_patch(j.at("train"));
      c.train = models::TrainConfig::from_json(t);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.transitions = d.value("transitions", c.data.transitions);
      c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("instances")) {
      const auto& in = j.at("instances");
      c.instances.g = in.value("g", c.instances.g);
      c.instances.count = in.value("count", c.instances.count);
      c.instances.noise = in.value("noise", c.instances.noise);
      c.instances.seed = in.value("seed", c.instances.seed);
    }
    if (j.contains("planner")) {
      const auto& p = j.at("planner");
      if (p.contains("kind")) c.planner.kind = planner_kind_from_string(p.at("kind").get<std::string>());
      c.planner.command = p.value("command", c.planner.command);
      c.planner.max_seconds = p.value("max_seconds", c.planner.max_seconds);
      c.planner.max_expansions = p.value("max_expansions", c.planner.max_expansions);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

models::ModelConfig ExperimentConfig::model_config(nn::Shape image) const {
  models::ModelConfig mc;
  mc.kind = state_model_kind(approach);
  mc.image = image;
  mc.latent = latent;
  mc.arch = arch;
  return mc;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"generate-data", "train",    "export-pddl", "make-instances",
                                              "plan",          "validate", "report"};
  return names;
}

// ---- experiment directory ----

namespace {

constexpr const char* kManifestFormat = "latplan-experiment";
constexpr int kManifestVersion = 1;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { strips::write_text_file(path, j.dump(2) + "\n"); }

json fresh_manifest(const ExperimentConfig& c) {
  return {{"format", kManifestFormat},
          {"version", kManifestVersion},
          {"latplan_version", LATPLAN_VERSION},
          {"compiler", __VERSION__},
          {"config_hash", c.hash()},
          {"seeds", {{"data", c.data.seed}, {"train", c.train.seed}, {"instances", c.instances.seed}}},
          {"stages", json::object()}};
}

void require(const fs::path& dir, const fs::path& rel, const std::string& producer) {
  if (!fs::exists(dir / rel)) {
    throw ConfigError("missing " + (dir / rel).string() + "; run `latplan " + producer + " " + dir.string() +
                      "` first");
  }
}

void claim_outputs(const fs::path& dir, const std::string& stage, const std::vector<fs::path>& outputs, bool force) {
  for (const auto& rel : outputs) {
    if (!fs::exists(dir / rel)) continue;
    if (!force) {
      throw ConfigError(stage + ": " + (dir / rel).string() + " already exists; pass --force to overwrite");
    }
    fs::remove_all(dir / rel);
  }
}

void record_stage(const fs::path& dir, const std::string& stage, const std::vector<fs::path>& outputs,
                  const std::vector<fs::path>& inputs) {
  json m = read_manifest(dir);
  json out = json::array(), in = json::array();
  for (const auto& p : outputs) out.push_back(p.generic_string());
  for (const auto& p : inputs) in.push_back(p.generic_string());
  m["stages"][stage] = {{"outputs", out}, {"inputs", in}};
  write_json(dir / "manifest.json", m);
}

void note(const StageOptions& o, const std::string& msg) {
  if (o.progress) *o.progress << msg << '\n' << std::flush;
}

std::string three(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

struct Experiment {
  fs::path dir;
  ExperimentConfig config;
  std::unique_ptr<domains::Domain> domain;
};

Experiment open_experiment(const fs::path& dir) {
  Experiment e{dir, load_experiment_config(dir), nullptr};
  e.domain = domains::make_domain(e.config.domain);
  return e;
}

models::PairSet normalized_pairs(const domains::TransitionDataset& ds, const std::vector<int>& rows) {
  return models::PairSet{ds.norm.apply(ds.raw0), ds.norm.apply(ds.raw1)}.subset(rows);
}

std::vector<int> all_rows(const domains::TransitionDataset& ds) {
  std::vector<int> rows(static_cast<std::size_t>(ds.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  return rows;
}

models::StateAutoencoder& state_model(models::LoadedCheckpoint& ck) {
  auto* sae = dynamic_cast<models::StateAutoencoder*>(ck.model.get());
  if (!sae) throw ConfigError("checkpoint does not hold a state autoencoder");
  return *sae;
}

struct Extraction {
  extraction::LatentTransitions data;
  extraction::ExtractedDomain domain;
};

Extraction extract(const Experiment& e, models::LoadedCheckpoint& ck, const domains::TransitionDataset& ds) {
  auto& sae = state_model(ck);
  Extraction x;
  x.data = extraction::encode_transitions(sae, ds.norm.apply(ds.raw0), ds.norm.apply(ds.raw1));
  switch (e.config.approach) {
    case Approach::ama1: x.domain = extraction::generate_domain_ama1(x.data); break;
    case Approach::ama2: {
      require(e.dir, "model/aae.lpa", "train");
      auto aae_ck = models::load_checkpoint(e.dir / "model/aae.lpa");
      auto* aae = dynamic_cast<models::ActionAutoencoder*>(aae_ck.model.get());
      if (!aae) throw ConfigError("model/aae.lpa does not hold an action autoencoder");
      x.domain = extraction::generate_domain_ama2(*aae, x.data);
      break;
    }
    case Approach::ama3plus:
    case Approach::ama4plus: {
      auto* cs = dynamic_cast<models::CubeSpaceAE*>(ck.model.get());
      if (!cs) throw ConfigError("checkpoint does not hold a Cube-Space AE");
      x.domain = extraction::generate_domain(*cs, x.data);
      break;
    }
  }
  return x;
}

std::string hyperparameters(const ExperimentConfig& c) {
  std::ostringstream s;
  s << "F=" << c.latent.F << ",A=" << c.latent.A << ",beta1=" << c.latent.beta1 << ",beta3=" << c.latent.beta3
    << ",eps=" << c.latent.epsilon;
  return s.str();
}

// Minimal TSV reader keyed by header names.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("table has no column '" + name + "'");
    return static_cast<int>(it - header.begin());
  }
};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, '\t')) out.push_back(cell);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  Table t;
  std::string line;
  if (std::getline(in, line)) t.header = split_tabs(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split_tabs(line));
  }
  return t;
}

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  return s;
}

}  // namespace

ExperimentConfig load_experiment_config(const fs::path& dir) {
  if (!fs::exists(dir / "config.json")) {
    throw ConfigError("missing " + (dir / "config.json").string() + "; run `latplan init " + dir.string() +
                      "` or `latplan run` first");
  }
  return ExperimentConfig::from_json(read_json(dir / "config.json"));
}

json read_manifest(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  if (m.value("format", std::string()) != kManifestFormat) throw ConfigError("manifest.json: wrong format tag");
  if (m.value("version", 0) > kManifestVersion) throw ConfigError("manifest.json: unsupported version");
  return m;
}

void init_experiment(const fs::path& dir, const ExperimentConfig& config, bool force) {
  config.validate();
  fs::create_directories(dir);
  if (fs::exists(dir / "config.json")) {
    const auto old = load_experiment_config(dir);
    if (old.hash() == config.hash() && fs::exists(dir / "manifest.json")) return;
    if (!force) {
      throw ConfigError(dir.string() + " holds a different config (hash " + old.hash() + " vs " + config.hash() +
                        "); use another directory or pass --force");
    }
  }
  write_json(dir / "config.json", config.to_json());
  write_json(dir / "manifest.json", fresh_manifest(config));
}

// ---- stages ----

void generate_data(const fs::path& dir, const StageOptions& opts) {
  const auto e = open_experiment(dir);
  const fs::path out = "data/dataset.lpa";
  claim_outputs(dir, "generate-data", {out}, opts.force);
  fs::create_directories(dir / "data");
  Rng rng(e.config.data.seed);
  const auto ds = domains::sample_transitions(*e.domain, e.config.data.transitions, rng);
  domains::save_dataset(ds, dir / out);
  note(opts, "generate-data: " + std::to_string(ds.size()) + " transitions (" + std::to_string(ds.train.size()) +
                 " train, " + std::to_string(ds.val.size()) + " val, " + std::to_string(ds.test.size()) + " test)");
  record_stage(dir, "generate-data", {out}, {"config.json"});
}

void train(const fs::path& dir, const StageOptions& opts) {
  const auto e = open_experiment(dir);
  require(dir, "data/dataset.lpa", "generate-data");
  const bool two_phase = e.config.approach == Approach::ama2;
  std::vector<fs::path> outputs{"model/checkpoint.lpa", "model/train_log.tsv"};
  if (two_phase) outputs.insert(outputs.end(), {"model/aae.lpa", "model/aae_log.tsv"});
  claim_outputs(dir, "train", outputs, opts.force);
  fs::create_directories(dir / "model");

  const auto ds = domains::load_dataset(dir / "data/dataset.lpa");
  const auto train_set = normalized_pairs(ds, ds.train);
  const auto val_set = normalized_pairs(ds, ds.val);
  const json extra{{"config_hash", e.config.hash()}, {"approach", to_string(e.config.approach)}};

  auto model = models::make_model(e.config.model_config(ds.shape), e.config.train.seed);
  {
    std::ofstream log(dir / "model/train_log.tsv");
    models::train(*model, train_set, val_set.size() ? &val_set : nullptr, e.config.train, &log);
  }
  models::save_checkpoint(*model, ds.norm, extra, dir / "model/checkpoint.lpa");
  note(opts, "train: " + to_string(model->kind()) + " checkpoint written");

  if (two_phase) {
    auto& sae = dynamic_cast<models::StateAutoencoder&>(*model);
    const models::PairSet ztrain{sae.encode_bits(train_set.x0), sae.encode_bits(train_set.x1)};
    const models::PairSet zval{sae.encode_bits(val_set.x0), sae.encode_bits(val_set.x1)};
    auto mc = e.config.model_config(ds.shape);
    mc.kind = models::ModelKind::aae;
    auto aae = models::make_model(mc, Rng(e.config.train.seed).split("aae").next());
    {
      std::ofstream log(dir / "model/aae_log.tsv");
      models::train(*aae, ztrain, zval.size() ? &zval : nullptr, e.config.train, &log);
    }
    models::save_checkpoint(*aae, Normalization{}, extra, dir / "model/aae.lpa");
    note(opts, "train: aae checkpoint written");
  }
  record_stage(dir, "train", outputs, {"data/dataset.lpa"});
}

void export_pddl(const fs::path& dir, const StageOptions& opts) {
  const auto e = open_experiment(dir);
  require(dir, "data/dataset.lpa", "generate-data");
  require(dir, "model/checkpoint.lpa", "train");
  const std::vector<fs::path> outputs{"pddl/domain.pddl", "pddl/extraction_report.tsv"};
  claim_outputs(dir, "export-pddl", outputs, opts.force);
  fs::create_directories(dir / "pddl");

  const auto ds = domains::load_dataset(dir / "data/dataset.lpa");
  auto ck = models::load_checkpoint(dir / "model/checkpoint.lpa");
  const auto x = extract(e, ck, ds);
  strips::write_text_file(dir / "pddl/domain.pddl", strips::emit_domain(x.domain.domain));
  {
    std::ofstream out(dir / "pddl/extraction_report.tsv");
    extraction::write_report(out, x.domain.report);
  }
  note(opts, "export-pddl: " + std::to_string(x.domain.domain.actions.size()) + " actions over " +
                 std::to_string(x.domain.domain.F) + " propositions");
  std::vector<fs::path> inputs{"data/dataset.lpa", "model/checkpoint.lpa"};
  if (e.config.approach == Approach::ama2) inputs.emplace_back("model/aae.lpa");
  record_stage(dir, "export-pddl", outputs, inputs);
}

void make_instances(const fs::path& dir, const StageOptions& opts) {
  const auto e = open_experiment(dir);
  const std::vector<fs::path> outputs{"instances"};
  claim_outputs(dir, "make-instances", outputs, opts.force);
  fs::create_directories(dir / "instances");

  const Rng base(e.config.instances.seed);
  std::vector<domains::Instance> all;
  for (int g : e.config.instances.g) {
    Rng rng = base.split(static_cast<std::uint64_t>(g));
    const auto batch = domains::sample_instances(*e.domain, g, e.config.instances.count, rng);
    all.insert(all.end(), batch.begin(), batch.end());
  }
  domains::save_instances(e.config.domain, all, dir / "instances/instances.lpa");
  const auto shape = e.domain->image_shape();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const std::string id = three(static_cast<int>(i));
    write_pnm(dir / "instances" / (id + "_init.pgm"), upscale({shape, e.domain->render(all[i].init)}, 4));
    write_pnm(dir / "instances" / (id + "_goal.pgm"), upscale({shape, e.domain->render(all[i].goal)}, 4));
  }
  note(opts, "make-instances: " + std::to_string(all.size()) + " instances");
  record_stage(dir, "make-instances", outputs, {"config.json"});
}

ExternalResult run_external_planner(const std::string& command_template, const fs::path& domain,
                                    const fs::path& problem, const fs::path& plan, double max_seconds) {
  if (command_template.empty()) throw ConfigError("external planner: empty command template");
  const bool plan_placeholder = command_template.find("{plan}") != std::string::npos;
  std::string cmd = replace_all(command_template, "{domain}", shell_quote(domain.string()));
  cmd = replace_all(cmd, "{problem}", shell_quote(problem.string()));
  cmd = replace_all(cmd, "{plan}", shell_quote(plan.string()));
  if (!plan_placeholder) cmd = "(" + cmd + ") > " + shell_quote(plan.string());
  const fs::path log = plan.string() + ".log";
  std::error_code ec;
  fs::remove(plan, ec);
  char secs[32];
  std::snprintf(secs, sizeof secs, "%.3f", max_seconds);
  const std::string full =
      "timeout -k 5 " + std::string(secs) + " sh -c " + shell_quote(cmd) + " > " + shell_quote(log.string()) + " 2>&1";
  const int rc = std::system(full.c_str());
  const int code = rc != -1 && WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;

  ExternalResult r;
  if (fs::exists(log)) r.log = strips::read_text_file(log);
  if (code == 124 || code == 137) {
    r.status = strips::SearchStatus::timeout;
    fs::remove(plan, ec);
    return r;
  }
  if (fs::exists(plan)) {
    std::ifstream in(plan);
    r.plan = strips::read_plan(in);
  }
  r.status = fs::exists(plan) && (code == 0 || !r.plan.empty()) ? strips::SearchStatus::solved
                                                                 : strips::SearchStatus::exhausted;
  if (r.status != strips::SearchStatus::solved) fs::remove(plan, ec);
  return r;
}

void plan(const fs::path& dir, const StageOptions& opts) {
  const auto e = open_experiment(dir);
  require(dir, "model/checkpoint.lpa", "train");
  require(dir, "pddl/domain.pddl", "export-pddl");
  require(dir, "instances/instances.lpa", "make-instances");
  const std::vector<fs::path> outputs{"plans"};
  claim_outputs(dir, "plan", outputs, opts.force);
  fs::create_directories(dir / "plans");

  auto ck = models::load_checkpoint(dir / "model/checkpoint.lpa");
  auto& sae = state_model(ck);
  const auto domain = strips::parse_domain(strips::read_text_file(dir / "pddl/domain.pddl"));
  const auto instances = domains::load_instances(dir / "instances/instances.lpa");
  const auto shape = e.domain->image_shape();
  const Rng noise_base = Rng(e.config.instances.seed).split("noise");

  // problems are encoded serially; only the searches run in parallel
  std::vector<strips::Problem> problems;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto init = e.domain->render(instances[i].init);
    auto goal = e.domain->render(instances[i].goal);
    if (e.config.instances.noise > 0.0) {
      Rng rng = noise_base.split(i);
      auto noisy = [&](std::vector<double> img) {
        Matrix m = Eigen::Map<const Matrix>(img.data(), 1, shape.size());
        m = domains::corrupt(m, e.config.instances.noise, rng);
        return std::vector<double>(m.data(), m.data() + m.size());
      };
      init = noisy(init);
      goal = noisy(goal);
    }
    problems.push_back(extraction::generate_problem(sae, ck.norm, init, goal, "problem_" + three(static_cast<int>(i))));
    strips::write_text_file(dir / "plans" / ("problem_" + three(static_cast<int>(i)) + ".pddl"),
                            strips::emit_problem(problems.back()));
  }

  const auto& pc = e.config.planner;
  std::string command = pc.command;
  if (pc.kind == PlannerKind::external && command.empty()) {
    if (const char* env = std::getenv("LATPLAN_PLANNER")) command = env;
    if (command.empty()) throw ConfigError("planner.kind is external but neither planner.command nor LATPLAN_PLANNER is set");
  }

  struct Outcome {
    strips::SearchStatus status = strips::SearchStatus::exhausted;
    std::vector<std::string> plan;
    std::int64_t expansions = -1;
    std::int64_t generated = -1;
    double seconds = 0.0;
    std::string error;
  };
  std::vector<Outcome> outcomes(problems.size());
  auto solve = [&](std::size_t i) {
    Outcome& o = outcomes[i];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (pc.kind == PlannerKind::external) {
        const auto r = run_external_planner(command, dir / "pddl/domain.pddl",
                                            dir / "plans" / ("problem_" + three(static_cast<int>(i)) + ".pddl"),
                                            dir / "plans" / ("plan_" + three(static_cast<int>(i)) + ".txt"),
                                            pc.max_seconds);
        o.status = r.status;
        o.plan = r.plan;
      } else {
        const auto p = strips::make_problem(domain, problems[i]);
        const auto h = pc.kind == PlannerKind::internal_blind ? strips::Heuristic::blind : strips::Heuristic::goal_count;
        const auto r = strips::astar(p, h, {pc.max_expansions, pc.max_seconds});
        o.status = r.status;
        o.expansions = r.expansions;
        o.generated = r.generated;
        for (int a : r.plan) o.plan.push_back(p.actions[static_cast<std::size_t>(a)].name);
      }
    } catch (const std::exception& ex) {
      o.status = strips::SearchStatus::exhausted;
      o.error = ex.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(problems.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < problems.size();) solve(i);
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::ofstream search(dir / "plans/search.tsv");
  std::ofstream timing(dir / "plans/timing.tsv");
  search << "instance\tg\tplanner\tstatus\tplan_length\texpansions\tgenerated\terror\n";
  timing << "instance\tseconds\n";
  int solved = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    const bool ok = o.status == strips::SearchStatus::solved;
    if (ok) {
      ++solved;
      if (pc.kind != PlannerKind::external) {
        std::ofstream out(dir / "plans" / ("plan_" + three(static_cast<int>(i)) + ".txt"));
        strips::write_plan(out, o.plan);
      }
    }
    std::string err = o.error.empty() ? "-" : o.error;
    std::replace(err.begin(), err.end(), '\t', ' ');
    std::replace(err.begin(), err.end(), '\n', ' ');
    search << i << '\t' << instances[i].g << '\t' << to_string(pc.kind) << '\t' << strips::to_string(o.status) << '\t'
           << (ok ? static_cast<int>(o.plan.size()) : -1) << '\t' << o.expansions << '\t' << o.generated << '\t' << err
           << '\n';
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.4f", o.seconds);
    timing << i << '\t' << secs << '\n';
  }
  note(opts, "plan: " + std::to_string(solved) + "/" + std::to_string(outcomes.size()) + " solved");
  record_stage(dir, "plan", outputs, {"model/checkpoint.lpa", "pddl/domain.pddl", "instances/instances.lpa"});
}

void validate(const fs::path& dir, const StageOptions& opts) {
  const auto e = open_experiment(dir);
  require(dir, "model/checkpoint.lpa", "train");
  require(dir, "pddl/domain.pddl", "export-pddl");
  require(dir, "instances/instances.lpa", "make-instances");
  require(dir, "plans/search.tsv", "plan");
  const std::vector<fs::path> outputs{"validate"};
  claim_outputs(dir, "validate", outputs, opts.force);
  fs::create_directories(dir / "validate");

  auto ck = models::load_checkpoint(dir / "model/checkpoint.lpa");
  auto& sae = state_model(ck);
  const auto domain = strips::parse_domain(strips::read_text_file(dir / "pddl/domain.pddl"));
  const auto instances = domains::load_instances(dir / "instances/instances.lpa");
  const auto validator = validate::make_validator(*e.domain);
  const auto search = read_table(dir / "plans/search.tsv");
  const int c_inst = search.column("instance"), c_status = search.column("status"),
            c_exp = search.column("expansions");
  if (search.rows.size() != instances.size()) throw ConfigError("plans/search.tsv does not cover every instance; re-run `latplan plan`");

  std::ofstream out(dir / "validate/verdicts.tsv");
  validate::write_verdict_header(out);
  int valid = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& row = search.rows[i];
    if (std::stoul(row.at(c_inst)) != i) throw ConfigError("plans/search.tsv rows are out of order");
    validate::VerdictRow v;
    v.domain = domains::to_string(e.config.domain.kind);
    v.model = to_string(e.config.approach);
    v.heuristic = to_string(e.config.planner.kind);
    v.hyperparameters = hyperparameters(e.config);
    v.instance = static_cast<int>(i);
    v.g = instances[i].g;
    v.status = row.at(c_status);
    v.expansions = std::stoll(row.at(c_exp));

    const std::string id = three(static_cast<int>(i));
    const fs::path plan_file = dir / "plans" / ("plan_" + id + ".txt");
    const bool found = v.status == "solved" && fs::exists(plan_file);
    if (!found) {
      v.verdict = validate::judge(instances[i], false, {}, *validator);
    } else {
      const auto problem = strips::parse_problem(strips::read_text_file(dir / "plans" / ("problem_" + id + ".pddl")), domain.F);
      std::ifstream in(plan_file);
      const auto names = strips::read_plan(in);
      try {
        const auto states = strips::simulate(strips::resolve_plan(names, domain.actions), problem.init, domain.actions);
        std::vector<std::vector<int>> latents;
        for (const auto& s : states) latents.push_back(s.to_bits());
        const auto images = validate::visualize(sae, ck.norm, latents);
        v.verdict = validate::judge(instances[i], true, images, *validator);
        validate::write_trace_images(dir / "validate", "trace_" + id, images, e.domain->image_shape());
      } catch (const SimulationError& ex) {
        v.verdict.found = true;
        v.verdict.plan_length = static_cast<int>(names.size());
        v.verdict.failure_step = static_cast<int>(ex.step());
        v.verdict.failure_reason = std::string("plan does not execute in the domain: ") + ex.what();
        if (instances[i].g >= 0) v.verdict.optimal = false;
      } catch (const ConfigError& ex) {
        v.verdict.found = true;
        v.verdict.failure_reason = std::string("plan does not resolve: ") + ex.what();
        if (instances[i].g >= 0) v.verdict.optimal = false;
      }
    }
    valid += v.verdict.valid;
    validate::write_verdict_row(out, v);
  }
  note(opts, "validate: " + std::to_string(valid) + "/" + std::to_string(instances.size()) + " valid");
  record_stage(dir, "validate", outputs,
               {"model/checkpoint.lpa", "pddl/domain.pddl", "instances/instances.lpa", "plans/search.tsv"});
}

PlanningSummary summarize_verdicts(const fs::path& dir) {
  const auto t = read_table(dir / "validate/verdicts.tsv");
  const int cf = t.column("found"), cv = t.column("valid"), co = t.column("optimal");
  PlanningSummary s;
  for (const auto& r : t.rows) {
    ++s.instances;
    s.found += r.at(cf) == "1";
    s.valid += r.at(cv) == "1";
    s.optimal += r.at(co) == "1";
  }
  return s;
}

namespace {

metrics::MetricsReport measure(const Experiment& e) {
  require(e.dir, "data/dataset.lpa", "generate-data");
  require(e.dir, "model/checkpoint.lpa", "train");
  const auto ds = domains::load_dataset(e.dir / "data/dataset.lpa");
  auto ck = models::load_checkpoint(e.dir / "model/checkpoint.lpa");
  auto& sae = state_model(ck);
  const auto& rows = ds.test.empty() ? ds.val : ds.test;
  const auto test = normalized_pairs(ds, rows.empty() ? all_rows(ds) : rows);

  metrics::MetricsReport r;
  r.domain = domains::to_string(e.config.domain.kind);
  r.model = to_string(e.config.approach);
  r.F = e.config.latent.F;
  r.beta1 = e.config.latent.beta1;
  r.beta3 = e.config.latent.beta3;
  r.epsilon = e.config.latent.epsilon;
  r.seed = e.config.train.seed;
  r.neg_elbo_beta1 = metrics::eval_neg_elbo(sae, test);
  r.trained_objective = metrics::trained_objective(sae, test);
  Matrix raw(static_cast<Eigen::Index>(rows.size()), ds.raw0.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) raw.row(static_cast<Eigen::Index>(i)) = ds.raw0.row(rows[i]);
  if (raw.rows() > 0) r.state_variance = metrics::state_variance(sae, ck.norm, raw);
  r.bits = metrics::bit_usage(sae, test.x0);
  auto* cs = dynamic_cast<models::CubeSpaceAE*>(ck.model.get());
  r.successor_abs_error = cs ? metrics::successor_error(*cs, test) : -1.0;
  const auto x = extract(e, ck, ds);
  r.pddl = metrics::pddl_statistics(x.domain, x.data);
  return r;
}

RasterImage training_curve(const fs::path& log_path) {
  const auto t = read_table(log_path);
  const int cs = t.column("split"), ce = t.column("epoch"), ct = t.column("total");
  metrics::Series train{{}, {}, 0.0}, val{{}, {}, 0.5};
  for (const auto& r : t.rows) {
    auto& s = r.at(cs) == "val" ? val : train;
    s.x.push_back(std::stod(r.at(ce)));
    s.y.push_back(std::stod(r.at(ct)));
  }
  return metrics::plot({train, val}, false);
}

}  // namespace

void report(const std::vector<fs::path>& dirs, const fs::path& out, const StageOptions& opts) {
  if (dirs.empty()) throw ConfigError("report: no experiment directories");
  const std::vector<fs::path> outputs{"metrics.tsv", "summary.tsv", "train_curve.pgm", "elbo_scatter.pgm",
                                      "elbo_scatter.tsv"};
  claim_outputs(out, "report", outputs, opts.force);
  for (std::size_t k = 0; fs::exists(out / ("train_curve_" + three(static_cast<int>(k)) + ".pgm")); ++k) {
    claim_outputs(out, "report", {"train_curve_" + three(static_cast<int>(k)) + ".pgm"}, opts.force);
  }
  fs::create_directories(out);

  std::ofstream mt(out / "metrics.tsv");
  std::ofstream st(out / "summary.tsv");
  metrics::write_metrics_header(mt);
  st << "experiment\tg\tinstances\tfound\tvalid\toptimal\n";
  metrics::Series scatter{{}, {}, 0.0};
  std::ostringstream scatter_rows;
  scatter_rows << "experiment\tneg_elbo_beta1\tvalid_fraction\n";
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    const auto e = open_experiment(dirs[k]);
    const auto m = measure(e);
    metrics::write_metrics_row(mt, m);
    const std::string name = dirs[k].filename().empty() ? dirs[k].parent_path().filename().string()
                                                        : dirs[k].filename().string();

    if (fs::exists(dirs[k] / "validate/verdicts.tsv")) {
      const auto t = read_table(dirs[k] / "validate/verdicts.tsv");
      const int cg = t.column("g"), cf = t.column("found"), cv = t.column("valid"), co = t.column("optimal");
      std::map<int, PlanningSummary> by_g;
      PlanningSummary all;
      for (const auto& r : t.rows) {
        for (auto* s : {&by_g[std::stoi(r.at(cg))], &all}) {
          ++s->instances;
          s->found += r.at(cf) == "1";
          s->valid += r.at(cv) == "1";
          s->optimal += r.at(co) == "1";
        }
      }
      for (const auto& [g, s] : by_g) {
        st << name << '\t' << g << '\t' << s.instances << '\t' << s.found << '\t' << s.valid << '\t' << s.optimal << '\n';
      }
      st << name << "\tall\t" << all.instances << '\t' << all.found << '\t' << all.valid << '\t' << all.optimal << '\n';
      const double frac = all.instances ? static_cast<double>(all.valid) / all.instances : 0.0;
      scatter.x.push_back(m.neg_elbo_beta1);
      scatter.y.push_back(frac);
      scatter_rows << name << '\t' << m.neg_elbo_beta1 << '\t' << frac << '\n';
    }

    if (fs::exists(dirs[k] / "model/train_log.tsv")) {
      const std::string file = dirs.size() == 1 ? "train_curve.pgm" : "train_curve_" + three(static_cast<int>(k)) + ".pgm";
      write_pnm(out / file, training_curve(dirs[k] / "model/train_log.tsv"));
    }
    note(opts, "report: " + name + " measured");
  }
  if (dirs.size() > 1) {
    write_pnm(out / "elbo_scatter.pgm", metrics::plot({scatter}, true));
    strips::write_text_file(out / "elbo_scatter.tsv", scatter_rows.str());
  }
  if (dirs.size() == 1 && fs::exists(dirs[0] / "manifest.json")) {
    std::error_code ec;
    if (!fs::equivalent(out.parent_path(), dirs[0], ec)) return;
    record_stage(dirs[0], "report", {"report"}, {"model/checkpoint.lpa", "data/dataset.lpa"});
  }
}

void run_all(const fs::path& dir, const StageOptions& opts) {
  generate_data(dir, opts);
  train(dir, opts);
  export_pddl(dir, opts);
  make_instances(dir, opts);
  plan(dir, opts);
  validate(dir, opts);
  report({dir}, dir / "report", opts);
}

}  // namespace latplan::cli
