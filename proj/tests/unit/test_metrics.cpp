#include <doctest.h>

#include <sstream>

#include "latplan/common/error.hpp"
#include "latplan/common/rng.hpp"
#include "latplan/metrics.hpp"

using namespace latplan;
using namespace latplan::metrics;

namespace {

models::ModelConfig tiny(models::ModelKind kind, double beta = 1.0) {
  models::ModelConfig mc;
  mc.kind = kind;
  mc.image = {1, 4, 4};
  mc.latent.F = 8;
  mc.latent.A = 5;
  mc.latent.beta1 = mc.latent.beta3 = beta;
  mc.arch.style = "mlp";
  mc.arch.hidden = 12;
  mc.arch.action_hidden = 12;
  return mc;
}

Matrix random_images(int n, int d, Rng& rng) {
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return m;
}

// Sets the encoder's last dense layer to zero weights and a constant bias.
void constant_encoder(models::StateAutoencoder& m, double bias) {
  auto params = m.encoder().parameters();
  REQUIRE(params.size() >= 2);
  auto& w = params[params.size() - 2].var.mutable_value();
  auto& b = params[params.size() - 1].var.mutable_value();
  REQUIRE(b.size() == m.config().latent.F);
  w.setZero();
  b.setConstant(bias);
}

}  // namespace

TEST_CASE("beta=1 ELBO is below the beta-weighted objective") {
  Rng rng(1);
  models::PairSet data{random_images(30, 16, rng), random_images(30, 16, rng)};
  for (auto kind : {models::ModelKind::sae, models::ModelKind::csae, models::ModelKind::bicsae}) {
    auto model = models::make_model(tiny(kind, 10.0), 2);
    models::finalize_batchnorm(*model, data);
    const double elbo = eval_neg_elbo(*model, data);
    const double trained = trained_objective(*model, data);
    CHECK(elbo <= trained);
    CHECK(eval_neg_elbo(*model, data) == elbo);
    auto same = models::make_model(tiny(kind, 1.0), 2);
    models::finalize_batchnorm(*same, data);
    CHECK(eval_neg_elbo(*same, data) == doctest::Approx(trained_objective(*same, data)));
  }
}

TEST_CASE("state variance") {
  auto model = models::make_model(tiny(models::ModelKind::sae), 3);
  auto& sae = dynamic_cast<models::StateAutoencoder&>(*model);
  Rng rng(4);
  const Matrix raw = random_images(200, 16, rng);
  Normalization none;

  constant_encoder(sae, 40.0);
  CHECK(state_variance(sae, none, raw) == 0.0);

  // p = 0.5 on every bit: Bernoulli variance 0.25
  constant_encoder(sae, 0.0);
  const double v = state_variance(sae, none, raw, 0.3, 10, 7);
  CHECK(v == doctest::Approx(0.25).epsilon(0.03));
  CHECK(state_variance(sae, none, raw, 0.3, 10, 7) == v);
  CHECK_THROWS_AS(state_variance(sae, none, raw, 0.3, 1), ConfigError);
}

TEST_CASE("bit usage partitions the latent") {
  const std::vector<std::vector<int>> codes{{0, 1, 1, 0}, {0, 1, 0, 0}, {0, 1, 1, 0}};
  const auto u = bit_usage(codes, 4);
  CHECK(u.effective == 1);
  CHECK(u.constant_one == 1);
  CHECK(u.constant_zero == 2);
  const auto collapsed = bit_usage({{1, 0, 1}, {1, 0, 1}}, 3);
  CHECK(collapsed.effective == 0);
  CHECK(bit_usage({{0, 1, 0}, {1, 0, 1}}, 3).effective == 3);

  Rng rng(5);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto model = models::make_model(tiny(models::ModelKind::sae), seed);
    auto& sae = dynamic_cast<models::StateAutoencoder&>(*model);
    const auto b = bit_usage(sae, random_images(50, 16, rng));
    CHECK(b.effective + b.constant_zero + b.constant_one == 8);
  }
}

TEST_CASE("successor error") {
  auto model = models::make_model(tiny(models::ModelKind::bicsae), 6);
  auto& cs = dynamic_cast<models::CubeSpaceAE&>(*model);
  Rng rng(7);
  models::PairSet data{random_images(40, 16, rng), random_images(40, 16, rng)};
  const double e = successor_error(cs, data);
  CHECK(e >= 0.0);
  CHECK(e <= 1.0);
  // recompute from whole-batch encodings
  const Matrix z0 = cs.encode_bits(data.x0);
  const Matrix z1 = cs.encode_bits(data.x1);
  const auto labels = cs.action_labels(data.x0, data.x1);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < z0.rows(); ++r) {
    std::vector<int> z(8);
    for (int f = 0; f < 8; ++f) z[f] = static_cast<int>(z0(r, f));
    const auto z2 = cs.apply_btl().eval_bits(z, labels[r]);
    for (int f = 0; f < 8; ++f) sum += std::abs(z1(r, f) - z2[f]);
  }
  CHECK(e == doctest::Approx(sum / (40.0 * 8.0)));
}

TEST_CASE("pddl statistics") {
  extraction::ExtractedDomain empty;
  const auto s0 = pddl_statistics(empty, {});
  CHECK(s0.actions_A1 == 0);
  CHECK(s0.actions_A2 == 0);
  CHECK(s0.mean_add == 0.0);
  CHECK(s0.mean_state_difference == 0.0);

  extraction::LatentTransitions data;
  data.z0 = {{0, 0, 1, 1}, {1, 0, 0, 0}, {1, 1, 1, 1}};
  data.z1 = {{0, 1, 0, 1}, {1, 1, 0, 0}, {0, 0, 0, 0}};
  const auto d = extraction::generate_domain_ama1(data);
  const auto s = pddl_statistics(d, data);
  CHECK(s.actions_A1 == 3);
  CHECK(s.actions_A2 == 3);
  CHECK(s.mean_state_difference == doctest::Approx((2 + 1 + 4) / 3.0));
  CHECK(s.mean_add == doctest::Approx((1 + 1 + 0) / 3.0));
  CHECK(s.mean_del == doctest::Approx((1 + 0 + 4) / 3.0));
  CHECK(s.mean_pos + s.mean_neg == doctest::Approx(4.0));
}

TEST_CASE("metrics rows") {
  MetricsReport r;
  r.domain = "lights_out";
  r.model = "bicsae";
  std::ostringstream out;
  write_metrics_header(out);
  write_metrics_row(out, r);
  std::istringstream in(out.str());
  std::string h, row;
  std::getline(in, h);
  std::getline(in, row);
  CHECK(std::count(h.begin(), h.end(), '\t') == std::count(row.begin(), row.end(), '\t'));
}

TEST_CASE("plots") {
  Series s{{0, 1, 2, 3}, {3, 1, 2, 0}, 0.0};
  const auto img = plot({s}, false, 100, 80);
  CHECK(img.shape.width == 100);
  CHECK(img.shape.height == 80);
  CHECK(img.pixels.size() == 8000u);
  // frame corner and a data endpoint are dark
  CHECK(img.pixels[7 * 100 + 7] == 0.0);
  CHECK(img.pixels[(80 - 1 - 8) * 100 + 8] == 1.0);
  const auto sc = plot({Series{{1, 2}, {1, 2}, 0.2}}, true, 64, 64, true);
  CHECK(sc.pixels[(64 - 1 - 8) * 64 + 8] == 0.2);
  CHECK_NOTHROW(plot({}, true));
  CHECK_THROWS_AS(plot({Series{{1}, {}, 0}}, true), ConfigError);
}
