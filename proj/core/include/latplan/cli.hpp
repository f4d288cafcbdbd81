#pragma once

// Experiment directories and the pipeline stages behind the command-line
// tool: generate-data, train, export-pddl, make-instances, plan, validate
// and report.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "latplan/domains.hpp"
#include "latplan/models.hpp"
#include "latplan/strips.hpp"

namespace latplan::cli {

namespace fs = std::filesystem;

enum class Approach { ama1, ama2, ama3plus, ama4plus };

std::string to_string(Approach a);
Approach approach_from_string(const std::string& s);

enum class PlannerKind { internal_blind, internal_goal_count, external };

std::string to_string(PlannerKind p);
PlannerKind planner_kind_from_string(const std::string& s);

struct DataConfig {
  int transitions = 500;
  std::uint64_t seed = 1;
};

struct InstanceConfig {
  std::vector<int> g{3, 5};
  int count = 10;       ///< per g value
  double noise = 0.0;   ///< N(0, noise) added to the instance images before encoding
  std::uint64_t seed = 2;
};

struct PlannerConfig {
  PlannerKind kind = PlannerKind::internal_blind;
  /// External command template with {domain}, {problem} and {plan}
  /// placeholders; empty means the LATPLAN_PLANNER environment variable.
  std::string command;
  double max_seconds = 600.0;
  std::int64_t max_expansions = 5'000'000;
};

struct ExperimentConfig {
  domains::DomainSpec domain;
  Approach approach = Approach::ama4plus;
  latent::LatentConfig latent;
  models::ArchitectureConfig arch;
  models::TrainConfig train;
  DataConfig data;
  InstanceConfig instances;
  PlannerConfig planner;

  /// 3x3 LightsOut, AMA4+, F=36, A=128, 500 transitions, CPU training.
  ExperimentConfig();

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are an error.
  static ExperimentConfig from_json(const nlohmann::json& j);

  /// Model configuration of the approach's state-space network.
  models::ModelConfig model_config(nn::Shape image) const;
  /// FNV-1a of the canonical JSON text.
  std::string hash() const;
};

/// Applies "a.b.c=value" to `j`; the value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Stage names in pipeline order.
const std::vector<std::string>& stage_names();

struct StageOptions {
  bool force = false;   ///< overwrite the stage's existing outputs
  int jobs = 1;         ///< parallel instances in plan/validate
  std::ostream* progress = nullptr;
};

/// Creates `dir` with config.json and manifest.json, or checks that an
/// existing experiment's config matches `config`. With `force` a differing
/// config replaces the old one and the manifest's stage records are cleared.
void init_experiment(const fs::path& dir, const ExperimentConfig& config, bool force = false);
ExperimentConfig load_experiment_config(const fs::path& dir);

/// Manifest content: config hash, seeds, versions and per-stage outputs.
nlohmann::json read_manifest(const fs::path& dir);

void generate_data(const fs::path& dir, const StageOptions& opts = {});
void train(const fs::path& dir, const StageOptions& opts = {});
void export_pddl(const fs::path& dir, const StageOptions& opts = {});
void make_instances(const fs::path& dir, const StageOptions& opts = {});
void plan(const fs::path& dir, const StageOptions& opts = {});
void validate(const fs::path& dir, const StageOptions& opts = {});
/// Metric tables and plots for one or more experiments, written to `out`.
void report(const std::vector<fs::path>& dirs, const fs::path& out, const StageOptions& opts = {});

/// All stages in order, report into dir/report.
void run_all(const fs::path& dir, const StageOptions& opts = {});

struct ExternalResult {
  strips::SearchStatus status = strips::SearchStatus::exhausted;
  std::vector<std::string> plan;
  std::string log;
};

/// Runs an external planner: substitutes the placeholders, enforces the time
/// budget with timeout(1), and reads the plan from {plan} or, without that
/// placeholder, from standard output (one action per line).
ExternalResult run_external_planner(const std::string& command_template, const fs::path& domain,
                                    const fs::path& problem, const fs::path& plan, double max_seconds);

/// Planning summary counts read from validate/verdicts.tsv.
struct PlanningSummary {
  int instances = 0;
  int found = 0;
  int valid = 0;
  int optimal = 0;
};

PlanningSummary summarize_verdicts(const fs::path& dir);

}  // namespace latplan::cli
