#pragma once

// Framework-independent math for the discrete latent space: temperature
// annealing, Binary Concrete / Gumbel-Softmax relaxations, their test-time
// determinization, and the closed-form KL and reconstruction terms.

#include <span>
#include <vector>

#include "latplan/common/rng.hpp"

namespace latplan::latent {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

struct AnnealSchedule {
  double tau_max = 5.0;
  double tau_min = 0.5;
  int anneal_epochs = 1000;

  /// Throws ConfigError unless tau_max >= tau_min > 0 and anneal_epochs > 0.
  void validate() const;
};

struct LatentConfig {
  int F = 50;             ///< latent propositions
  int A = 128;            ///< maximum number of action labels
  int C = 2;              ///< Gumbel-Softmax classes per categorical variable
  double epsilon = 0.1;   ///< Bernoulli prior parameter
  double sigma_rec = 0.1; ///< Gaussian reconstruction stddev
  double beta1 = 1.0;
  double beta2 = 1.0;
  double beta3 = 1.0;

  void validate() const;
};

/// tau_max * (tau_min / tau_max)^(min(epoch, anneal_epochs) / anneal_epochs)
double anneal_tau(const AnnealSchedule& schedule, int epoch);

/// Logistic noise log(u) - log(1 - u) for a uniform u; u is kept inside
/// (kProbClamp, 1 - kProbClamp) so the result is always finite.
double logistic_noise(double u);
double logistic_noise(Rng& rng);

/// Standard Gumbel noise -log(-log(u)) with the same guard on u.
double gumbel_noise(double u);
double gumbel_noise(Rng& rng);

/// Sigmoid((logit + logistic_noise(u)) / tau) for an explicit u.
double binary_concrete(double logit, double tau, double u);
double binary_concrete_sample(double logit, double tau, Rng& rng);

/// softmax((logits + noise) / tau). `noise` may be empty, meaning no noise.
std::vector<double> gumbel_softmax(std::span<const double> logits, double tau,
                                   std::span<const double> noise);
std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng);

/// 1 iff logit >= 0.
int determinize_bc(double logit);
/// One-hot argmax; ties go to the lowest index.
std::vector<int> determinize_gs(std::span<const double> logits);
/// Index form of determinize_gs.
std::size_t argmax(std::span<const double> values);

double sigmoid(double x);
std::vector<double> softmax(std::span<const double> logits);

/// KL(Bern(q) || Bern(eps)).
double kl_bernoulli(double q, double eps);
/// sum_k q_k log q_k + log C, with 0 log 0 := 0.
double kl_categorical_uniform(std::span<const double> q);
/// sum_k q_k log(q_k / p_k), p clamped from below.
double kl_categorical(std::span<const double> q, std::span<const double> p);
/// sum_f KL(Bern(q_f) || Bern(p_f)).
double kl_bernoulli_pair(std::span<const double> q, std::span<const double> p);

/// sum_d (x_d - xhat_d)^2 / (2 sigma^2), plus D log sqrt(2 pi sigma^2) when
/// include_constant is set.
double gaussian_nll(std::span<const double> x, std::span<const double> xhat, double sigma,
                    bool include_constant = false);

}  // namespace latplan::latent
