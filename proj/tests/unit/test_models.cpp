#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "latplan/common/error.hpp"
#include "latplan/common/rng.hpp"
#include "latplan/models.hpp"

using namespace latplan;
using namespace latplan::models;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ModelConfig small(ModelKind kind, nn::Shape image = {1, 4, 4}) {
  ModelConfig mc;
  mc.kind = kind;
  mc.image = image;
  mc.latent.F = 6;
  mc.latent.A = 5;
  mc.latent.beta1 = 2.0;
  mc.latent.beta2 = 3.0;
  mc.latent.beta3 = 7.0;
  mc.arch.style = "mlp";
  mc.arch.hidden = 16;
  mc.arch.action_hidden = 16;
  return mc;
}

using Weights = std::array<double, kNumTerms>;

double& at(Weights& w, Term t) { return w[static_cast<std::size_t>(t)]; }

// rec(x0|z0) + 1/2 rec(x1|z1) + 1/2 rec(x1|z2) + b1 KL(z0) + b2 KL(a) + 1/2 b3 KL(z1 || z2)
Weights forward_objective(const latent::LatentConfig& l) {
  Weights w{};
  at(w, Term::rec_x0) = 1.0;
  at(w, Term::rec_x1_direct) = 0.5;
  at(w, Term::rec_x1_applied) = 0.5;
  at(w, Term::kl_prior) = l.beta1;
  at(w, Term::kl_action) = l.beta2;
  at(w, Term::kl_effect) = 0.5 * l.beta3;
  return w;
}

// the same objective anchored at x1 with the regression branch
Weights backward_objective(const latent::LatentConfig& l) {
  Weights w{};
  at(w, Term::rec_x1_direct) = 1.0;
  at(w, Term::rec_x0) = 0.5;
  at(w, Term::rec_x0_regressed) = 0.5;
  at(w, Term::kl_prior_x1) = l.beta1;
  at(w, Term::kl_regaction) = l.beta2;
  at(w, Term::kl_precondition) = 0.5 * l.beta3;
  return w;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("latplan_test_models_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config json round trips") {
  auto mc = small(ModelKind::bicsae, {3, 5, 7});
  mc.latent.epsilon = 0.5;
  mc.arch.style = "conv";
  mc.arch.kernel = 3;
  const auto back = ModelConfig::from_json(mc.to_json());
  CHECK(back.to_json() == mc.to_json());
  CHECK(back.image == mc.image);

  auto tc = TrainConfig::desk();
  tc.optimizer = "adam";
  tc.schedule.tau_min = 0.7;
  CHECK(TrainConfig::from_json(tc.to_json()).to_json() == tc.to_json());
  CHECK(TrainConfig::desk().epochs == 300);
  CHECK(TrainConfig::desk().batch_size <= 100);
  CHECK(TrainConfig{}.epochs == 2000);
  CHECK(TrainConfig{}.batch_size == 400);
  CHECK(TrainConfig{}.learning_rate == 1e-3);
  CHECK(TrainConfig{}.grad_clip_norm == 0.1);

  for (auto k : {ModelKind::sae, ModelKind::aae, ModelKind::csae, ModelKind::bicsae}) {
    CHECK(model_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(model_kind_from_string("vae"), ConfigError);
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  mc.arch.style = "rnn";
  CHECK_THROWS_AS(mc.validate(), ConfigError);
}

TEST_CASE("objective weights") {
  const auto l = small(ModelKind::csae).latent;
  CHECK(term_weights(ModelKind::csae, l) == forward_objective(l));
  const auto f = forward_objective(l), b = backward_objective(l);
  const auto bi = term_weights(ModelKind::bicsae, l);
  for (std::size_t i = 0; i < kNumTerms; ++i) CHECK(bi[i] == doctest::Approx(0.5 * (f[i] + b[i])));

  const auto sae = term_weights(ModelKind::sae, l);
  CHECK(sae[static_cast<std::size_t>(Term::rec_x0)] > 0.0);
  CHECK(sae[static_cast<std::size_t>(Term::kl_prior)] == doctest::Approx(l.beta1 * sae[static_cast<std::size_t>(Term::rec_x0)]));
  CHECK(sae[static_cast<std::size_t>(Term::kl_effect)] == 0.0);
  const auto aae = term_weights(ModelKind::aae, l);
  CHECK(aae[static_cast<std::size_t>(Term::bce_successor)] == 1.0);
  CHECK(aae[static_cast<std::size_t>(Term::kl_action)] == 1.0);
}

TEST_CASE("loss totals and KL signs") {
  Rng rng(1);
  for (auto kind : {ModelKind::sae, ModelKind::csae, ModelKind::bicsae}) {
    auto model = make_model(small(kind), 2);
    const Matrix x0 = random_matrix(9, 16, rng), x1 = random_matrix(9, 16, rng);
    for (auto sampling : {Sampling::stochastic, Sampling::deterministic}) {
      Rng noise(3);
      nn::ForwardContext ctx{sampling == Sampling::stochastic, &noise, nullptr};
      const auto r = model->loss(x0, x1, 1.0, ctx, sampling);
      CHECK(r.parts.total == doctest::Approx(weighted_total(kind, model->config().latent, r.parts)));
      CHECK(r.total.value()(0, 0) == doctest::Approx(r.parts.total).epsilon(1e-9));
      for (std::size_t t = 0; t < kNumTerms; ++t) {
        if (term_is_kl(static_cast<Term>(t))) CHECK(r.parts.terms[t] >= 0.0);
      }
    }
  }
}

TEST_CASE("bidirectional model shares the encoder across directions") {
  auto model = make_model(small(ModelKind::bicsae), 4);
  auto& cs = dynamic_cast<CubeSpaceAE&>(*model);
  CHECK(cs.bidirectional());
  REQUIRE(cs.regress_btl() != nullptr);
  auto uni = make_model(small(ModelKind::csae), 4);
  CHECK_FALSE(dynamic_cast<CubeSpaceAE&>(*uni).bidirectional());

  std::set<std::string> names;
  for (const auto& p : model->parameters()) CHECK(names.insert(p.name).second);
  // one encoder and one decoder; the backward branch adds only its own head and block
  std::size_t uni_count = uni->parameters().size();
  CHECK(model->parameters().size() > uni_count);
  CHECK(model->parameters().size() < 2 * uni_count);
}

TEST_CASE("labels and successors") {
  Rng rng(5);
  auto model = make_model(small(ModelKind::csae), 6);
  auto& cs = dynamic_cast<CubeSpaceAE&>(*model);
  const auto labels = cs.action_labels(random_matrix(20, 16, rng), random_matrix(20, 16, rng));
  REQUIRE(labels.size() == 20);
  for (int a : labels) CHECK((a >= 0 && a < 5));

  auto aae_model = make_model(small(ModelKind::aae), 7);
  auto& aae = dynamic_cast<ActionAutoencoder&>(*aae_model);
  Matrix z0(4, 6), z1(4, 6);
  for (Eigen::Index i = 0; i < z0.size(); ++i) {
    z0.data()[i] = static_cast<double>(rng.below(2));
    z1.data()[i] = static_cast<double>(rng.below(2));
  }
  const auto al = aae.action_labels(z0, z1);
  const Matrix s = aae.successors(z0, al);
  CHECK(s.rows() == 4);
  CHECK(s.cols() == 6);
  for (Eigen::Index i = 0; i < s.size(); ++i) CHECK((s.data()[i] == 0.0 || s.data()[i] == 1.0));
}

TEST_CASE("checkpoints round trip") {
  const auto dir = scratch("ckpt");
  Rng rng(8);
  for (auto kind : {ModelKind::sae, ModelKind::csae, ModelKind::bicsae}) {
    auto model = make_model(small(kind), 9);
    const Matrix x0 = random_matrix(12, 16, rng), x1 = random_matrix(12, 16, rng);
    finalize_batchnorm(*model, {x0, x1});
    Normalization norm;
    norm.mean = random_matrix(1, 16, rng);
    norm.scale = random_matrix(1, 16, rng).cwiseAbs();
    save_checkpoint(*model, norm, {{"note", "x"}}, dir / "m.lpa");
    auto ck = load_checkpoint(dir / "m.lpa");
    CHECK(ck.model->kind() == kind);
    CHECK(ck.model->config().to_json() == model->config().to_json());
    CHECK(ck.extra["note"] == "x");
    CHECK(ck.norm.mean == norm.mean);
    CHECK(ck.norm.scale == norm.scale);
    auto& a = dynamic_cast<StateAutoencoder&>(*model);
    auto& b = dynamic_cast<StateAutoencoder&>(*ck.model);
    CHECK(a.encode_logits(x0) == b.encode_logits(x0));
    CHECK(evaluate(*model, {x0, x1}).total == evaluate(*ck.model, {x0, x1}).total);
  }
  std::ofstream(dir / "bad.lpa") << "not an archive";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.lpa"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("training is reproducible and logs both splits") {
  Rng rng(10);
  const PairSet train_set{random_matrix(30, 16, rng), random_matrix(30, 16, rng)};
  const PairSet val_set{random_matrix(8, 16, rng), random_matrix(8, 16, rng)};
  auto cfg = TrainConfig::desk();
  cfg.epochs = 3;
  cfg.batch_size = 10;
  std::string logs[2];
  for (auto& log : logs) {
    auto model = make_model(small(ModelKind::bicsae), 11);
    std::ostringstream out;
    const auto r = train(*model, train_set, &val_set, cfg, &out);
    CHECK(r.log.size() == 6);
    log = out.str();
  }
  CHECK(logs[0] == logs[1]);
  CHECK(logs[0].rfind(log_header(), 0) == 0);
  CHECK(logs[0].find("\nval\t2\t") != std::string::npos);
}

TEST_CASE("a non-finite loss aborts training") {
  Rng rng(12);
  PairSet data{random_matrix(10, 16, rng), random_matrix(10, 16, rng)};
  data.x0(3, 4) = std::nan("");
  auto model = make_model(small(ModelKind::sae), 13);
  auto cfg = TrainConfig::desk();
  cfg.epochs = 2;
  cfg.batch_size = 10;
  CHECK_THROWS_AS(train(*model, data, nullptr, cfg), DivergenceError);
}

TEST_CASE("state autoencoder memorizes 16 toy images") {
  // 16 distinct 6x6 binary images: the 4 bits of i drawn as 3x3 quadrants
  Matrix x(16, 36);
  for (int i = 0; i < 16; ++i) {
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) x(i, r * 6 + c) = (i >> ((r / 3) * 2 + c / 3)) & 1;
    }
  }
  ModelConfig mc;
  mc.kind = ModelKind::sae;
  mc.image = {1, 6, 6};
  mc.latent.F = 8;
  mc.arch.style = "mlp";
  mc.arch.hidden = 64;
  mc.arch.input_noise = 0.0;
  mc.arch.dropout = 0.0;
  auto model = make_model(mc, 14);
  auto cfg = TrainConfig::desk();
  cfg.epochs = 2000;
  cfg.batch_size = 16;
  cfg.schedule.anneal_epochs = 1000;
  train(*model, {x, x}, nullptr, cfg);

  auto& sae = dynamic_cast<StateAutoencoder&>(*model);
  const Matrix z = sae.encode_bits(x);
  std::set<std::vector<double>> codes;
  for (int i = 0; i < 16; ++i) codes.insert(std::vector<double>(z.row(i).begin(), z.row(i).end()));
  CHECK(codes.size() == 16);
  const double mse = (sae.decode(z) - x).array().square().mean();
  CHECK(mse < 0.01);
}

TEST_CASE("action autoencoder memorizes a 4-state chain") {
  // states 0..3 as one-hot codes; label 0 moves right, label 1 moves left
  std::vector<std::pair<int, int>> moves{{0, 1}, {1, 2}, {2, 3}, {1, 0}, {2, 1}, {3, 2}};
  Matrix z0 = Matrix::Zero(6, 4), z1 = Matrix::Zero(6, 4);
  for (std::size_t i = 0; i < moves.size(); ++i) {
    z0(static_cast<Eigen::Index>(i), moves[i].first) = 1.0;
    z1(static_cast<Eigen::Index>(i), moves[i].second) = 1.0;
  }
  ModelConfig mc;
  mc.kind = ModelKind::aae;
  mc.latent.F = 4;
  mc.latent.A = 2;
  mc.arch.hidden = 32;
  mc.arch.dropout = 0.0;
  auto model = make_model(mc, 15);
  auto cfg = TrainConfig::desk();
  cfg.epochs = 3000;
  cfg.batch_size = 6;
  cfg.schedule.anneal_epochs = 1500;
  train(*model, {z0, z1}, nullptr, cfg);
  const auto parts = evaluate(*model, {z0, z1});
  CHECK(parts[Term::bce_successor] < 0.05);
  auto& aae = dynamic_cast<ActionAutoencoder&>(*model);
  CHECK(aae.successors(z0, aae.action_labels(z0, z1)) == z1);
}
