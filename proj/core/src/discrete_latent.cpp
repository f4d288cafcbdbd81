#include "latplan/discrete_latent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "latplan/common/error.hpp"

namespace latplan::latent {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ConfigError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                      std::to_string(b) + ")");
  }
}

}  // namespace

void AnnealSchedule::validate() const {
  if (!(tau_min > 0.0) || !(tau_max >= tau_min)) {
    throw ConfigError("anneal schedule requires tau_max >= tau_min > 0");
  }
  if (anneal_epochs <= 0) throw ConfigError("anneal schedule requires anneal_epochs > 0");
}

void LatentConfig::validate() const {
  if (F <= 0 || A <= 0 || C <= 0) throw ConfigError("latent config requires F, A, C > 0");
  if (!(epsilon > 0.0 && epsilon <= 0.5)) throw ConfigError("epsilon must lie in (0, 0.5]");
  if (!(sigma_rec > 0.0)) throw ConfigError("sigma_rec must be positive");
  if (beta1 < 1.0 || beta2 < 1.0 || beta3 < 1.0) throw ConfigError("beta1..3 must be >= 1");
}

double anneal_tau(const AnnealSchedule& schedule, int epoch) {
  schedule.validate();
  if (epoch < 0) throw ConfigError("anneal_tau: epoch must be non-negative");
  const double progress =
      static_cast<double>(std::min(epoch, schedule.anneal_epochs)) / schedule.anneal_epochs;
  return schedule.tau_max * std::pow(schedule.tau_min / schedule.tau_max, progress);
}

double logistic_noise(double u) {
  u = clamp_prob(u);
  return std::log(u) - std::log1p(-u);
}

double logistic_noise(Rng& rng) { return logistic_noise(rng.uniform()); }

double gumbel_noise(double u) {
  u = clamp_prob(u);
  return -std::log(-std::log(u));
}

double gumbel_noise(Rng& rng) { return gumbel_noise(rng.uniform()); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double binary_concrete(double logit, double tau, double u) {
  if (!(tau > 0.0)) throw ConfigError("binary_concrete: tau must be positive");
  return sigmoid((logit + logistic_noise(u)) / tau);
}

double binary_concrete_sample(double logit, double tau, Rng& rng) {
  return binary_concrete(logit, tau, rng.uniform());
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double m = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (auto& v : out) {
    v = std::exp(v - m);
    total += v;
  }
  for (auto& v : out) v /= total;
  return out;
}

std::vector<double> gumbel_softmax(std::span<const double> logits, double tau,
                                   std::span<const double> noise) {
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: tau must be positive");
  if (!noise.empty()) require_same_size(logits.size(), noise.size(), "gumbel_softmax");
  std::vector<double> scaled(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    scaled[k] = (logits[k] + (noise.empty() ? 0.0 : noise[k])) / tau;
  }
  auto out = softmax(scaled);
  // Softmax underflow at tiny tau can produce exact zeros; keep the support open.
  for (auto& v : out) v = std::max(v, std::numeric_limits<double>::min());
  return out;
}

std::vector<double> gumbel_softmax_sample(std::span<const double> logits, double tau, Rng& rng) {
  std::vector<double> noise(logits.size());
  for (auto& g : noise) g = gumbel_noise(rng);
  return gumbel_softmax(logits, tau, noise);
}

int determinize_bc(double logit) { return logit >= 0.0 ? 1 : 0; }

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

std::vector<int> determinize_gs(std::span<const double> logits) {
  std::vector<int> out(logits.size(), 0);
  if (!logits.empty()) out[argmax(logits)] = 1;
  return out;
}

double kl_bernoulli(double q, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("kl_bernoulli: eps must lie in (0, 1)");
  q = clamp_prob(q);
  return q * std::log(q / eps) + (1.0 - q) * std::log((1.0 - q) / (1.0 - eps));
}

double kl_categorical_uniform(std::span<const double> q) {
  double total = std::log(static_cast<double>(q.size()));
  for (double v : q) {
    if (v > 0.0) total += v * std::log(v);
  }
  return std::max(total, 0.0);
}

double kl_categorical(std::span<const double> q, std::span<const double> p) {
  require_same_size(q.size(), p.size(), "kl_categorical");
  double total = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] > 0.0) total += q[k] * std::log(q[k] / std::max(p[k], kProbClamp));
  }
  return std::max(total, 0.0);
}

double kl_bernoulli_pair(std::span<const double> q, std::span<const double> p) {
  require_same_size(q.size(), p.size(), "kl_bernoulli_pair");
  double total = 0.0;
  for (std::size_t f = 0; f < q.size(); ++f) {
    const double qf = clamp_prob(q[f]);
    const double pf = clamp_prob(p[f]);
    total += qf * std::log(qf / pf) + (1.0 - qf) * std::log((1.0 - qf) / (1.0 - pf));
  }
  return total;
}

double gaussian_nll(std::span<const double> x, std::span<const double> xhat, double sigma,
                    bool include_constant) {
  require_same_size(x.size(), xhat.size(), "gaussian_nll");
  if (!(sigma > 0.0)) throw ConfigError("gaussian_nll: sigma must be positive");
  double sq = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - xhat[d];
    sq += diff * diff;
  }
  double total = sq / (2.0 * sigma * sigma);
  if (include_constant) {
    total += static_cast<double>(x.size()) * std::log(std::sqrt(2.0 * std::numbers::pi * sigma * sigma));
  }
  return total;
}

}  // namespace latplan::latent
