#include "latplan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "latplan/common/error.hpp"
#include "latplan/common/rng.hpp"
#include "latplan/domains.hpp"

namespace latplan::metrics {

double eval_neg_elbo(models::Model& model, const models::PairSet& data) {
  const auto parts = models::evaluate(model, data);
  auto latent = model.config().latent;
  latent.beta1 = latent.beta2 = latent.beta3 = 1.0;
  return models::weighted_total(model.kind(), latent, parts);
}

double trained_objective(models::Model& model, const models::PairSet& data) {
  return models::evaluate(model, data).total;
}

double state_variance(models::StateAutoencoder& model, const Normalization& norm, const Matrix& raw, double sigma,
                      int k, std::uint64_t seed) {
  if (raw.rows() == 0) throw ConfigError("state_variance: no images");
  if (k < 2) throw ConfigError("state_variance: need at least two draws");
  Rng rng(seed);
  const int F = model.config().latent.F;
  Matrix sum = Matrix::Zero(raw.rows(), F);
  Matrix sum_sq = Matrix::Zero(raw.rows(), F);
  for (int draw = 0; draw < k; ++draw) {
    const Matrix logits = model.encode_logits(norm.apply(domains::corrupt(raw, sigma, rng)));
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logits.data()[i]));
      const double z = rng.uniform() < p ? 1.0 : 0.0;
      sum.data()[i] += z;
      sum_sq.data()[i] += z * z;
    }
  }
  const Matrix var = (sum_sq - sum.cwiseProduct(sum) / k) / (k - 1);
  return var.mean();
}

BitUsage bit_usage(const std::vector<std::vector<int>>& codes, int F) {
  BitUsage u;
  for (int f = 0; f < F; ++f) {
    bool zero = false, one = false;
    for (const auto& z : codes) (z[f] ? one : zero) = true;
    if (zero && one) ++u.effective;
    else if (one) ++u.constant_one;
    else ++u.constant_zero;
  }
  return u;
}

BitUsage bit_usage(models::StateAutoencoder& model, const Matrix& normalized) {
  const Matrix z = model.encode_bits(normalized);
  std::vector<std::vector<int>> codes(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) codes[r].push_back(z(r, c) >= 0.5 ? 1 : 0);
  }
  return bit_usage(codes, model.config().latent.F);
}

double successor_error(models::CubeSpaceAE& model, const models::PairSet& data) {
  if (data.size() == 0) throw ConfigError("successor_error: empty dataset");
  const auto t = extraction::encode_transitions(model, data.x0, data.x1);
  double err = 0.0;
  for (std::size_t i = 0; i < t.z0.size(); ++i) {
    const auto z2 = model.apply_btl().eval_bits(t.z0[i], t.labels[i]);
    for (std::size_t f = 0; f < z2.size(); ++f) err += std::abs(t.z1[i][f] - z2[f]);
  }
  return err / (static_cast<double>(t.z0.size()) * model.config().latent.F);
}

PddlStatistics pddl_statistics(const extraction::ExtractedDomain& domain, const extraction::LatentTransitions& data) {
  PddlStatistics s;
  const auto& r = domain.report;
  s.actions_A1 = r.used;
  s.actions_A2 = static_cast<int>(domain.domain.actions.size());
  if (!domain.domain.actions.empty()) {
    for (const auto& a : domain.domain.actions) {
      s.mean_add += static_cast<double>(a.add.size());
      s.mean_del += static_cast<double>(a.del.size());
      s.mean_pos += static_cast<double>(a.pos.size());
      s.mean_neg += static_cast<double>(a.neg.size());
    }
    const double n = static_cast<double>(domain.domain.actions.size());
    s.mean_add /= n;
    s.mean_del /= n;
    s.mean_pos /= n;
    s.mean_neg /= n;
  }
  if (!r.actions.empty()) {
    for (const auto& a : r.actions) {
      s.xor_effect_mean += a.xor_effect_bits;
      s.xor_precondition_mean += a.xor_precondition_bits;
    }
    s.xor_effect_mean /= static_cast<double>(r.actions.size());
    s.xor_precondition_mean /= static_cast<double>(r.actions.size());
  }
  if (!data.z0.empty()) {
    double d = 0.0;
    for (std::size_t i = 0; i < data.z0.size(); ++i) {
      for (std::size_t f = 0; f < data.z0[i].size(); ++f) d += data.z0[i][f] != data.z1[i][f];
    }
    s.mean_state_difference = d / static_cast<double>(data.z0.size());
  }
  return s;
}

void write_metrics_header(std::ostream& out) {
  out << "domain\tmodel\tF\tbeta1\tbeta3\tepsilon\tseed\tneg_elbo_beta1\ttrained_objective\tstate_variance"
         "\teffective_bits\tconstant_zero_bits\tconstant_one_bits\tsuccessor_abs_error\tactions_A1\tactions_A2"
         "\txor_effect_mean\txor_precondition_mean\tmean_state_difference\tmean_add\tmean_del\tmean_pos\tmean_neg\n";
}

void write_metrics_row(std::ostream& out, const MetricsReport& r) {
  const auto& p = r.pddl;
  out << r.domain << '\t' << r.model << '\t' << r.F << '\t' << r.beta1 << '\t' << r.beta3 << '\t' << r.epsilon << '\t'
      << r.seed << '\t' << r.neg_elbo_beta1 << '\t' << r.trained_objective << '\t' << r.state_variance << '\t'
      << r.bits.effective << '\t' << r.bits.constant_zero << '\t' << r.bits.constant_one << '\t'
      << r.successor_abs_error << '\t' << p.actions_A1 << '\t' << p.actions_A2 << '\t' << p.xor_effect_mean << '\t'
      << p.xor_precondition_mean << '\t' << p.mean_state_difference << '\t' << p.mean_add << '\t' << p.mean_del << '\t'
      << p.mean_pos << '\t' << p.mean_neg << '\n';
}

// ---- plots ----

namespace {

struct Canvas {
  int w, h;
  std::vector<double> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_ * h_), 1.0) {}
  void set(int x, int y, double v) {
    if (x >= 0 && x < w && y >= 0 && y < h) px[static_cast<std::size_t>(y * w + x)] = v;
  }
  void line(int x0, int y0, int x1, int y1, double v) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, v);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) err += dy, x0 += sx;
      if (e2 <= dx) err += dx, y0 += sy;
    }
  }
};

}  // namespace

RasterImage plot(const std::vector<Series>& series, bool scatter, int width, int height, bool diagonal) {
  if (width < 16 || height < 16) throw ConfigError("plot: canvas too small");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ConfigError("plot: series x and y differ in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]), xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]), ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = ymin = 0.0, xmax = ymax = 1.0;
  if (diagonal) {
    xmin = ymin = std::min(xmin, ymin);
    xmax = ymax = std::max(xmax, ymax);
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;

  Canvas c(width, height);
  const int m = 8;
  auto px = [&](double x) { return m + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (width - 2 * m - 1))); };
  auto py = [&](double y) {
    return height - 1 - m - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (height - 2 * m - 1)));
  };
  c.line(m - 1, m - 1, width - m, m - 1, 0.0);
  c.line(m - 1, height - m, width - m, height - m, 0.0);
  c.line(m - 1, m - 1, m - 1, height - m, 0.0);
  c.line(width - m, m - 1, width - m, height - m, 0.0);
  if (diagonal) c.line(px(xmin), py(ymin), px(xmax), py(ymax), 0.75);
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      const int x = px(s.x[i]), y = py(s.y[i]);
      if (scatter) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) c.set(x + dx, y + dy, s.intensity);
        }
      } else if (i > 0 && std::isfinite(s.x[i - 1]) && std::isfinite(s.y[i - 1])) {
        c.line(px(s.x[i - 1]), py(s.y[i - 1]), x, y, s.intensity);
      } else {
        c.set(x, y, s.intensity);
      }
    }
  }
  return RasterImage{{1, height, width}, std::move(c.px)};
}

}  // namespace latplan::metrics
