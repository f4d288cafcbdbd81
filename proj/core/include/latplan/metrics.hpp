#pragma once

// Evaluation of trained checkpoints: beta=1 ELBO, latent stability and bit
// usage, successor accuracy, PDDL statistics, report tables and plots.

#include <iosfwd>
#include <string>
#include <vector>

#include "latplan/common/image_io.hpp"
#include "latplan/extraction.hpp"
#include "latplan/models.hpp"

namespace latplan::metrics {

using ad::Matrix;

/// Mean beta=1 objective over `data` (determinized latents, eval mode, no
/// Gaussian constant). Lower is better.
double eval_neg_elbo(models::Model& model, const models::PairSet& data);

/// The same pairs under the model's own training betas.
double trained_objective(models::Model& model, const models::PairSet& data);

/// Mean over examples and bits of the unbiased variance across `k` draws
/// of z ~ Bernoulli(sigmoid(encoder logits)) where each draw re-corrupts
/// the raw image with N(0, sigma) before normalization. Encoder in eval mode.
double state_variance(models::StateAutoencoder& model, const Normalization& norm, const Matrix& raw,
                      double sigma = 0.3, int k = 10, std::uint64_t seed = 1);

struct BitUsage {
  int effective = 0;      ///< bits taking both values over the data
  int constant_zero = 0;
  int constant_one = 0;
};

/// Over determinized encodings of every row of `normalized`.
BitUsage bit_usage(models::StateAutoencoder& model, const Matrix& normalized);
BitUsage bit_usage(const std::vector<std::vector<int>>& codes, int F);

/// Mean over pairs and bits of |z1 - z2|, z2 the apply block's successor of
/// z0 under the pair's action label.
double successor_error(models::CubeSpaceAE& model, const models::PairSet& data);

struct PddlStatistics {
  int actions_A1 = 0;  ///< before XOR compilation
  int actions_A2 = 0;  ///< after
  double mean_add = 0.0;
  double mean_del = 0.0;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
  double xor_effect_mean = 0.0;        ///< per pre-compilation action
  double xor_precondition_mean = 0.0;
  double mean_state_difference = 0.0;  ///< mean Hamming distance of the transitions
};

PddlStatistics pddl_statistics(const extraction::ExtractedDomain& domain, const extraction::LatentTransitions& data);

struct MetricsReport {
  std::string domain;
  std::string model;
  int F = 0;
  double beta1 = 0.0;
  double beta3 = 0.0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  double neg_elbo_beta1 = 0.0;
  double trained_objective = 0.0;
  double state_variance = 0.0;
  BitUsage bits;
  double successor_abs_error = 0.0;  ///< -1 when the model has no apply block
  PddlStatistics pddl;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsReport& r);

// ---- plots ----

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  double intensity = 0.0;  ///< gray level of the marks
};

/// White canvas with a frame; line series are drawn as polylines, scatter
/// series as 3x3 marks. With `diagonal` a y = x guide is drawn.
RasterImage plot(const std::vector<Series>& series, bool scatter, int width = 320, int height = 240,
                 bool diagonal = false);

}  // namespace latplan::metrics
