#include "latplan/models.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "latplan/common/error.hpp"
#include "latplan/tensor/matrix_io.hpp"
#include "latplan/tensor/optim.hpp"

namespace latplan::models {

namespace {

constexpr std::size_t idx(Term t) { return static_cast<std::size_t>(t); }

constexpr std::array<Term, kNumTerms> kAllTerms{
    Term::rec_x0,   Term::rec_x1_direct, Term::rec_x1_applied, Term::rec_x0_regressed,
    Term::kl_prior, Term::kl_prior_x1,   Term::kl_action,      Term::kl_effect,
    Term::kl_regaction, Term::kl_precondition, Term::bce_successor};

using TermRows = std::vector<std::pair<Term, Var>>;

// Mean of each per-row term, combined with the kind's weights. KL parts are
// reported clamped at zero per row so that rounding never makes them negative.
LossResult assemble(ModelKind kind, const latent::LatentConfig& latent, const TermRows& rows) {
  const auto w = term_weights(kind, latent);
  LossResult out;
  Var total;
  for (const auto& [term, r] : rows) {
    const double n = static_cast<double>(r.rows());
    out.parts[term] = term_is_kl(term) ? r.value().cwiseMax(0.0).sum() / n : r.value().sum() / n;
    if (w[idx(term)] == 0.0) continue;
    Var m = ad::scale(ad::sum(r), w[idx(term)] / n);
    total = total.defined() ? ad::add(total, m) : m;
  }
  out.parts.total = weighted_total(kind, latent, out.parts);
  out.total = total.defined() ? total : ad::constant(Matrix::Zero(1, 1));
  return out;
}

nn::Shape flat(int n) { return {n, 1, 1}; }

nn::LayerSchedule encoder_schedule(const ModelConfig& c) {
  const auto& a = c.arch;
  if (a.style == "mlp") return nn::mlp_encoder_schedule(c.latent.F, a.hidden, a.input_noise, a.dropout);
  return nn::conv_encoder_schedule(c.latent.F, a.conv_channels, a.kernel, a.input_noise, a.dropout);
}

nn::LayerSchedule decoder_schedule(const ModelConfig& c) {
  const auto& a = c.arch;
  if (a.style == "mlp") return nn::mlp_decoder_schedule(c.image, a.hidden, a.dropout);
  return nn::conv_decoder_schedule(c.image, a.conv_channels, a.kernel, a.dropout);
}

nn::LayerSchedule aae_schedule(int hidden, int out, double dropout) {
  return {nn::LayerSpec::dense(hidden), nn::LayerSpec::relu(), nn::LayerSpec::batch_norm(),
          nn::LayerSpec::dropout(dropout), nn::LayerSpec::dense(out)};
}

Matrix rows_of(const Matrix& m, const std::vector<int>& rows, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = m.row(rows[i]);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::sae: return "sae";
    case ModelKind::aae: return "aae";
    case ModelKind::csae: return "csae";
    case ModelKind::bicsae: return "bicsae";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "sae" || s == "ama1") return ModelKind::sae;
  if (s == "aae" || s == "ama2") return ModelKind::aae;
  if (s == "csae" || s == "ama3plus") return ModelKind::csae;
  if (s == "bicsae" || s == "ama4plus") return ModelKind::bicsae;
  throw ConfigError("unknown model kind '" + s + "'");
}

const char* term_name(Term t) {
  switch (t) {
    case Term::rec_x0: return "rec_x0";
    case Term::rec_x1_direct: return "rec_x1_direct";
    case Term::rec_x1_applied: return "rec_x1_applied";
    case Term::rec_x0_regressed: return "rec_x0_regressed";
    case Term::kl_prior: return "kl_prior";
    case Term::kl_prior_x1: return "kl_prior_x1";
    case Term::kl_action: return "kl_action";
    case Term::kl_effect: return "kl_effect";
    case Term::kl_regaction: return "kl_regaction";
    case Term::kl_precondition: return "kl_precondition";
    case Term::bce_successor: return "bce_successor";
  }
  return "?";
}

bool term_is_kl(Term t) {
  switch (t) {
    case Term::kl_prior:
    case Term::kl_prior_x1:
    case Term::kl_action:
    case Term::kl_effect:
    case Term::kl_regaction:
    case Term::kl_precondition: return true;
    default: return false;
  }
}

std::array<double, kNumTerms> term_weights(ModelKind kind, const latent::LatentConfig& l) {
  std::array<double, kNumTerms> w{};
  auto set = [&](Term t, double v) { w[idx(t)] = v; };
  switch (kind) {
    case ModelKind::sae:
      set(Term::rec_x0, 0.5);
      set(Term::rec_x1_direct, 0.5);
      set(Term::kl_prior, 0.5 * l.beta1);
      set(Term::kl_prior_x1, 0.5 * l.beta1);
      break;
    case ModelKind::aae:
      set(Term::bce_successor, 1.0);
      set(Term::kl_action, 1.0);
      break;
    case ModelKind::csae:
      set(Term::rec_x0, 1.0);
      set(Term::rec_x1_direct, 0.5);
      set(Term::rec_x1_applied, 0.5);
      set(Term::kl_prior, l.beta1);
      set(Term::kl_action, l.beta2);
      set(Term::kl_effect, 0.5 * l.beta3);
      break;
    case ModelKind::bicsae:
      // average of the forward objective and its time-reversed copy
      set(Term::rec_x0, 0.75);
      set(Term::rec_x1_direct, 0.75);
      set(Term::rec_x1_applied, 0.25);
      set(Term::rec_x0_regressed, 0.25);
      set(Term::kl_prior, 0.5 * l.beta1);
      set(Term::kl_prior_x1, 0.5 * l.beta1);
      set(Term::kl_action, 0.5 * l.beta2);
      set(Term::kl_regaction, 0.5 * l.beta2);
      set(Term::kl_effect, 0.25 * l.beta3);
      set(Term::kl_precondition, 0.25 * l.beta3);
      break;
  }
  return w;
}

double weighted_total(ModelKind kind, const latent::LatentConfig& latent, const ElboBreakdown& parts) {
  const auto w = term_weights(kind, latent);
  double total = 0.0;
  for (std::size_t i = 0; i < kNumTerms; ++i) total += w[i] * parts.terms[i];
  return total;
}

// ---------------------------------------------------------------------------

void ArchitectureConfig::validate() const {
  if (style != "mlp" && style != "conv") throw ConfigError("architecture style must be 'mlp' or 'conv'");
  if (hidden <= 0 || conv_channels <= 0 || action_hidden <= 0) throw ConfigError("layer widths must be positive");
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("kernel must be a positive odd number");
  if (input_noise < 0.0 || dropout < 0.0 || dropout >= 1.0) throw ConfigError("noise/dropout out of range");
}

nlohmann::json ArchitectureConfig::to_json() const {
  return {{"style", style},          {"hidden", hidden},           {"conv_channels", conv_channels},
          {"kernel", kernel},        {"action_hidden", action_hidden}, {"input_noise", input_noise},
          {"dropout", dropout}};
}

ArchitectureConfig ArchitectureConfig::from_json(const nlohmann::json& j) {
  ArchitectureConfig a;
  a.style = j.value("style", a.style);
  a.hidden = j.value("hidden", a.hidden);
  a.conv_channels = j.value("conv_channels", a.conv_channels);
  a.kernel = j.value("kernel", a.kernel);
  a.action_hidden = j.value("action_hidden", a.action_hidden);
  a.input_noise = j.value("input_noise", a.input_noise);
  a.dropout = j.value("dropout", a.dropout);
  return a;
}

void ModelConfig::validate() const {
  latent.validate();
  arch.validate();
  if (kind != ModelKind::aae && image.size() <= 0) throw ConfigError("image shape must be non-empty");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"image", {image.channels, image.height, image.width}},
          {"latent",
           {{"F", latent.F},
            {"A", latent.A},
            {"C", latent.C},
            {"epsilon", latent.epsilon},
            {"sigma_rec", latent.sigma_rec},
            {"beta1", latent.beta1},
            {"beta2", latent.beta2},
            {"beta3", latent.beta3}}},
          {"arch", arch.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = model_kind_from_string(j.value("kind", std::string("bicsae")));
  if (j.contains("image")) {
    const auto& s = j.at("image");
    c.image = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
  }
  if (j.contains("latent")) {
    const auto& l = j.at("latent");
    c.latent.F = l.value("F", c.latent.F);
    c.latent.A = l.value("A", c.latent.A);
    c.latent.C = l.value("C", c.latent.C);
    c.latent.epsilon = l.value("epsilon", c.latent.epsilon);
    c.latent.sigma_rec = l.value("sigma_rec", c.latent.sigma_rec);
    c.latent.beta1 = l.value("beta1", c.latent.beta1);
    c.latent.beta2 = l.value("beta2", c.latent.beta2);
    c.latent.beta3 = l.value("beta3", c.latent.beta3);
  }
  if (j.contains("arch")) c.arch = ArchitectureConfig::from_json(j.at("arch"));
  return c;
}

// ---------------------------------------------------------------------------

Var binary_concrete(const Var& logits, double tau, Rng& rng) {
  Matrix noise(logits.rows(), logits.cols());
  for (Eigen::Index k = 0; k < noise.size(); ++k) noise.data()[k] = latent::logistic_noise(rng);
  return ad::sigmoid(ad::scale(ad::add(logits, ad::constant(std::move(noise))), 1.0 / tau));
}

Var gumbel_softmax(const Var& logits, double tau, Rng& rng) {
  Matrix noise(logits.rows(), logits.cols());
  for (Eigen::Index k = 0; k < noise.size(); ++k) noise.data()[k] = latent::gumbel_noise(rng);
  return ad::softmax_rows(ad::scale(ad::add(logits, ad::constant(std::move(noise))), 1.0 / tau));
}

Matrix step(const Matrix& logits) { return (logits.array() >= 0.0).cast<double>().matrix(); }

Matrix one_hot_argmax(const Matrix& logits) {
  Matrix out = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out(r, best) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------

StateAutoencoder::StateAutoencoder(ModelConfig config, Rng& init_rng)
    : Model(std::move(config)),
      encoder_("encoder", config_.image, encoder_schedule(config_), init_rng),
      decoder_("decoder", flat(config_.latent.F), decoder_schedule(config_), init_rng) {
  config_.validate();
  if (encoder_.output_shape().size() != config_.latent.F || !(decoder_.output_shape() == config_.image)) {
    throw ConfigError("encoder/decoder schedules do not match the latent and image shapes");
  }
}

Var StateAutoencoder::sample(const Var& logits, double tau, nn::ForwardContext& ctx, Sampling sampling) {
  if (sampling == Sampling::deterministic) return ad::constant(step(logits.value()));
  if (!ctx.rng) throw ConfigError("stochastic sampling needs an rng");
  return binary_concrete(logits, tau, *ctx.rng);
}

Var StateAutoencoder::rec_rows(const Matrix& x, const Var& xhat) const {
  const double s = config_.latent.sigma_rec;
  return ad::scale(ad::squared_error_rows(x, xhat), 1.0 / (2.0 * s * s));
}

LossResult StateAutoencoder::loss(const Matrix& x0, const Matrix& x1, double tau, nn::ForwardContext& ctx,
                                  Sampling sampling) {
  const double eps = config_.latent.epsilon;
  TermRows rows;
  Var l0 = encoder_.forward(ad::constant(x0), ctx);
  Var xh0 = decoder_.forward(sample(l0, tau, ctx, sampling), ctx);
  rows.emplace_back(Term::rec_x0, rec_rows(x0, xh0));
  rows.emplace_back(Term::kl_prior, ad::kl_bernoulli_prior_rows(l0, eps));
  if (x1.rows() > 0) {
    Var l1 = encoder_.forward(ad::constant(x1), ctx);
    Var xh1 = decoder_.forward(sample(l1, tau, ctx, sampling), ctx);
    rows.emplace_back(Term::rec_x1_direct, rec_rows(x1, xh1));
    rows.emplace_back(Term::kl_prior_x1, ad::kl_bernoulli_prior_rows(l1, eps));
  }
  return assemble(ModelKind::sae, config_.latent, rows);
}

Matrix StateAutoencoder::encode_logits(const Matrix& x) {
  ad::NoGradGuard guard;
  nn::ForwardContext ctx;
  return encoder_.forward(ad::constant(x), ctx).value();
}

Matrix StateAutoencoder::encode_bits(const Matrix& x) { return step(encode_logits(x)); }

Matrix StateAutoencoder::decode(const Matrix& z) {
  ad::NoGradGuard guard;
  nn::ForwardContext ctx;
  return decoder_.forward(ad::constant(z), ctx).value();
}

std::vector<nn::NamedParam> StateAutoencoder::parameters() {
  auto p = encoder_.parameters();
  for (auto& q : decoder_.parameters()) p.push_back(q);
  return p;
}

std::vector<nn::BatchNorm*> StateAutoencoder::batch_norms() {
  auto b = encoder_.batch_norms();
  for (auto* q : decoder_.batch_norms()) b.push_back(q);
  return b;
}

void StateAutoencoder::save(Archive& ar) const {
  encoder_.save(ar);
  decoder_.save(ar);
}

void StateAutoencoder::load(const Archive& ar) {
  encoder_.load(ar);
  decoder_.load(ar);
}

// ---------------------------------------------------------------------------

CubeSpaceAE::CubeSpaceAE(ModelConfig config, Rng& init_rng)
    : StateAutoencoder(std::move(config), init_rng),
      action_("action", flat(2 * config_.latent.F),
              nn::action_head_schedule(config_.latent.A, config_.arch.action_hidden, config_.arch.dropout),
              init_rng),
      applicable_("applicable", flat(config_.latent.F), nn::linear_head_schedule(config_.latent.A), init_rng),
      apply_("apply", config_.latent.F, config_.latent.A, init_rng) {
  if (config_.kind == ModelKind::bicsae) {
    regressable_ = std::make_unique<nn::Sequential>("regressable", flat(config_.latent.F),
                                                    nn::linear_head_schedule(config_.latent.A), init_rng);
    regress_ = std::make_unique<nn::BackToLogit>("regress", config_.latent.F, config_.latent.A, init_rng);
  } else if (config_.kind != ModelKind::csae) {
    throw ConfigError("CubeSpaceAE needs kind csae or bicsae");
  }
}

LossResult CubeSpaceAE::loss(const Matrix& x0, const Matrix& x1, double tau, nn::ForwardContext& ctx,
                             Sampling sampling) {
  const double eps = config_.latent.epsilon;
  TermRows rows;
  Var l0 = encoder_.forward(ad::constant(x0), ctx);
  Var l1 = encoder_.forward(ad::constant(x1), ctx);
  Var z0 = sample(l0, tau, ctx, sampling);
  Var z1 = sample(l1, tau, ctx, sampling);
  Var xh0 = decoder_.forward(z0, ctx);
  Var xh1 = decoder_.forward(z1, ctx);

  Var la = action_.forward(ad::concat_cols(l0, l1), ctx);
  Var a = sampling == Sampling::deterministic ? ad::constant(one_hot_argmax(la.value()))
                                              : gumbel_softmax(la, tau, *ctx.rng);
  Var l2 = apply_.forward(z0, a, ctx);
  Var xh2 = decoder_.forward(sample(l2, tau, ctx, sampling), ctx);
  Var app = applicable_.forward(ad::detach(z0), ctx);

  rows.emplace_back(Term::rec_x0, rec_rows(x0, xh0));
  rows.emplace_back(Term::rec_x1_direct, rec_rows(x1, xh1));
  rows.emplace_back(Term::rec_x1_applied, rec_rows(x1, xh2));
  rows.emplace_back(Term::kl_prior, ad::kl_bernoulli_prior_rows(l0, eps));
  rows.emplace_back(Term::kl_action, ad::kl_categorical_logits_rows(la, app));
  rows.emplace_back(Term::kl_effect, ad::kl_bernoulli_logits_rows(l1, l2));

  if (regress_) {
    Var l3 = regress_->forward(z1, a, ctx);
    Var xh3 = decoder_.forward(sample(l3, tau, ctx, sampling), ctx);
    Var reg = regressable_->forward(ad::detach(z1), ctx);
    rows.emplace_back(Term::rec_x0_regressed, rec_rows(x0, xh3));
    rows.emplace_back(Term::kl_prior_x1, ad::kl_bernoulli_prior_rows(l1, eps));
    rows.emplace_back(Term::kl_regaction, ad::kl_categorical_logits_rows(la, reg));
    rows.emplace_back(Term::kl_precondition, ad::kl_bernoulli_logits_rows(l0, l3));
  }
  return assemble(config_.kind, config_.latent, rows);
}

Matrix CubeSpaceAE::action_logits(const Matrix& l0, const Matrix& l1) {
  ad::NoGradGuard guard;
  nn::ForwardContext ctx;
  return action_.forward(ad::concat_cols(ad::constant(l0), ad::constant(l1)), ctx).value();
}

std::vector<int> CubeSpaceAE::action_labels(const Matrix& x0, const Matrix& x1) {
  const Matrix la = action_logits(encode_logits(x0), encode_logits(x1));
  std::vector<int> out(static_cast<std::size_t>(la.rows()));
  for (Eigen::Index r = 0; r < la.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < la.cols(); ++c) {
      if (la(r, c) > la(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

std::vector<nn::NamedParam> CubeSpaceAE::parameters() {
  auto p = StateAutoencoder::parameters();
  for (auto& q : action_.parameters()) p.push_back(q);
  for (auto& q : applicable_.parameters()) p.push_back(q);
  for (auto& q : apply_.parameters()) p.push_back(q);
  if (regress_) {
    for (auto& q : regressable_->parameters()) p.push_back(q);
    for (auto& q : regress_->parameters()) p.push_back(q);
  }
  return p;
}

std::vector<nn::BatchNorm*> CubeSpaceAE::batch_norms() {
  auto b = StateAutoencoder::batch_norms();
  for (auto* q : action_.batch_norms()) b.push_back(q);
  for (auto* q : apply_.batch_norms()) b.push_back(q);
  if (regress_) {
    for (auto* q : regress_->batch_norms()) b.push_back(q);
  }
  return b;
}

void CubeSpaceAE::save(Archive& ar) const {
  StateAutoencoder::save(ar);
  action_.save(ar);
  applicable_.save(ar);
  apply_.save(ar);
  if (regress_) {
    regressable_->save(ar);
    regress_->save(ar);
  }
}

void CubeSpaceAE::load(const Archive& ar) {
  StateAutoencoder::load(ar);
  action_.load(ar);
  applicable_.load(ar);
  apply_.load(ar);
  if (regress_) {
    regressable_->load(ar);
    regress_->load(ar);
  }
}

// ---------------------------------------------------------------------------

ActionAutoencoder::ActionAutoencoder(ModelConfig config, Rng& init_rng)
    : Model(std::move(config)),
      action_("aae_action", flat(2 * config_.latent.F),
              aae_schedule(config_.arch.hidden, config_.latent.A, config_.arch.dropout), init_rng),
      successor_("aae_successor", flat(config_.latent.A + config_.latent.F),
                 aae_schedule(config_.arch.hidden, config_.latent.F, config_.arch.dropout), init_rng) {
  config_.validate();
}

LossResult ActionAutoencoder::loss(const Matrix& z0, const Matrix& z1, double tau, nn::ForwardContext& ctx,
                                   Sampling sampling) {
  Var v0 = ad::constant(z0);
  Var la = action_.forward(ad::concat_cols(v0, ad::constant(z1)), ctx);
  Var a = sampling == Sampling::deterministic ? ad::constant(one_hot_argmax(la.value()))
                                              : gumbel_softmax(la, tau, *ctx.rng);
  Var ls = successor_.forward(ad::concat_cols(a, v0), ctx);
  TermRows rows;
  rows.emplace_back(Term::bce_successor, ad::bce_logits_rows(ls, z1));
  rows.emplace_back(Term::kl_action, ad::kl_categorical_uniform_rows(la));
  return assemble(ModelKind::aae, config_.latent, rows);
}

std::vector<int> ActionAutoencoder::action_labels(const Matrix& z0, const Matrix& z1) {
  ad::NoGradGuard guard;
  nn::ForwardContext ctx;
  const Matrix la = action_.forward(ad::concat_cols(ad::constant(z0), ad::constant(z1)), ctx).value();
  std::vector<int> out(static_cast<std::size_t>(la.rows()));
  for (Eigen::Index r = 0; r < la.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < la.cols(); ++c) {
      if (la(r, c) > la(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

Matrix ActionAutoencoder::successors(const Matrix& z0, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != z0.rows()) throw ConfigError("successors: label count mismatch");
  Matrix a = Matrix::Zero(z0.rows(), config_.latent.A);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= config_.latent.A) throw ConfigError("successors: label out of range");
    a(static_cast<Eigen::Index>(r), labels[r]) = 1.0;
  }
  ad::NoGradGuard guard;
  nn::ForwardContext ctx;
  return step(successor_.forward(ad::concat_cols(ad::constant(a), ad::constant(z0)), ctx).value());
}

std::vector<nn::NamedParam> ActionAutoencoder::parameters() {
  auto p = action_.parameters();
  for (auto& q : successor_.parameters()) p.push_back(q);
  return p;
}

std::vector<nn::BatchNorm*> ActionAutoencoder::batch_norms() {
  auto b = action_.batch_norms();
  for (auto* q : successor_.batch_norms()) b.push_back(q);
  return b;
}

void ActionAutoencoder::save(Archive& ar) const {
  action_.save(ar);
  successor_.save(ar);
}

void ActionAutoencoder::load(const Archive& ar) {
  action_.load(ar);
  successor_.load(ar);
}

std::unique_ptr<Model> make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng init(seed);
  switch (config.kind) {
    case ModelKind::sae: return std::make_unique<StateAutoencoder>(config, init);
    case ModelKind::aae: return std::make_unique<ActionAutoencoder>(config, init);
    case ModelKind::csae:
    case ModelKind::bicsae: return std::make_unique<CubeSpaceAE>(config, init);
  }
  throw ConfigError("unknown model kind");
}

// ---------------------------------------------------------------------------

PairSet PairSet::subset(const std::vector<int>& rows) const {
  PairSet out;
  out.x0 = rows_of(x0, rows, 0, rows.size());
  out.x1 = x1.rows() > 0 ? rows_of(x1, rows, 0, rows.size()) : Matrix();
  return out;
}

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(learning_rate > 0.0) || !(grad_clip_norm > 0.0)) throw ConfigError("learning rate and clip must be positive");
  if (optimizer != "adam" && optimizer != "radam") throw ConfigError("optimizer must be 'adam' or 'radam'");
  schedule.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"grad_clip_norm", grad_clip_norm},
          {"seed", seed},
          {"optimizer", optimizer},
          {"log_validation", log_validation},
          {"schedule",
           {{"tau_max", schedule.tau_max}, {"tau_min", schedule.tau_min}, {"anneal_epochs", schedule.anneal_epochs}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.seed = j.value("seed", c.seed);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.log_validation = j.value("log_validation", c.log_validation);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    c.schedule.tau_max = s.value("tau_max", c.schedule.tau_max);
    c.schedule.tau_min = s.value("tau_min", c.schedule.tau_min);
    c.schedule.anneal_epochs = s.value("anneal_epochs", c.schedule.anneal_epochs);
  }
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 300;
  c.batch_size = 100;
  c.schedule.anneal_epochs = 150;
  return c;
}

std::string log_header() {
  std::string h = "split\tepoch\ttau";
  for (Term t : kAllTerms) h += std::string("\t") + term_name(t);
  return h + "\ttotal";
}

std::string format_log_row(const LogRow& row) {
  std::string s = row.split + "\t" + std::to_string(row.epoch) + "\t" + fmt(row.tau);
  for (Term t : kAllTerms) s += "\t" + fmt(row.parts[t]);
  return s + "\t" + fmt(row.parts.total);
}

namespace {

void throw_divergence(const LossResult& r, int epoch, std::size_t batch) {
  std::string bad;
  for (Term t : kAllTerms) {
    if (!std::isfinite(r.parts[t])) bad += std::string(bad.empty() ? "" : ", ") + term_name(t) + "=" + fmt(r.parts[t]);
  }
  if (bad.empty()) bad = "total=" + fmt(r.total.item());
  throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                        ": non-finite " + bad);
}

void accumulate(ElboBreakdown& acc, const ElboBreakdown& x, double w) {
  for (std::size_t i = 0; i < kNumTerms; ++i) acc.terms[i] += w * x.terms[i];
  acc.total += w * x.total;
}

void divide(ElboBreakdown& acc, double n) {
  for (auto& v : acc.terms) v /= n;
  acc.total /= n;
}

}  // namespace

ElboBreakdown evaluate(Model& model, const PairSet& data, int batch_size) {
  if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
  ad::NoGradGuard guard;
  nn::ForwardContext ctx;
  ElboBreakdown acc;
  std::vector<int> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t b = 0; b < all.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(all.size(), b + static_cast<std::size_t>(batch_size));
    Matrix x0 = rows_of(data.x0, all, b, e);
    Matrix x1 = data.x1.rows() > 0 ? rows_of(data.x1, all, b, e) : Matrix();
    auto r = model.loss(x0, x1, 1.0, ctx, Sampling::deterministic);
    accumulate(acc, r.parts, static_cast<double>(e - b));
  }
  divide(acc, static_cast<double>(data.size()));
  acc.total = weighted_total(model.kind(), model.config().latent, acc);
  return acc;
}

void finalize_batchnorm(Model& model, const PairSet& data, int batch_size) {
  if (data.size() == 0) throw ConfigError("finalize_batchnorm: empty dataset");
  std::vector<int> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), 0);
  nn::finalize_batchnorm(model.batch_norms(), [&](nn::ForwardContext& ctx) {
    ad::NoGradGuard guard;
    for (std::size_t b = 0; b < all.size(); b += static_cast<std::size_t>(batch_size)) {
      const std::size_t e = std::min(all.size(), b + static_cast<std::size_t>(batch_size));
      Matrix x0 = rows_of(data.x0, all, b, e);
      Matrix x1 = data.x1.rows() > 0 ? rows_of(data.x1, all, b, e) : Matrix();
      model.loss(x0, x1, 1.0, ctx, Sampling::deterministic);
    }
  });
}

TrainResult train(Model& model, const PairSet& train_set, const PairSet* val_set, const TrainConfig& config,
                  std::ostream* log_stream) {
  config.validate();
  model.config().validate();
  if (train_set.size() == 0) throw ConfigError("train: empty training set");

  Rng master(config.seed);
  Rng shuffle_rng = master.split("shuffle");
  Rng noise_rng = master.split("noise");

  std::vector<Var> vars;
  for (auto& p : model.parameters()) vars.push_back(p.var);
  ad::AdamOptimizer opt(vars, config.learning_rate, config.optimizer == "radam");

  TrainResult result;
  if (log_stream) *log_stream << log_header() << '\n';
  auto emit = [&](LogRow row) {
    if (log_stream) *log_stream << format_log_row(row) << '\n' << std::flush;
    result.log.push_back(std::move(row));
  };

  const std::size_t n = static_cast<std::size_t>(train_set.size());
  const std::size_t bs = std::min(n, static_cast<std::size_t>(config.batch_size));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double tau = latent::anneal_tau(config.schedule, epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    ElboBreakdown acc;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < n; b += bs, ++batch_index) {
      const std::size_t e = std::min(n, b + bs);
      Matrix x0 = rows_of(train_set.x0, order, b, e);
      Matrix x1 = train_set.x1.rows() > 0 ? rows_of(train_set.x1, order, b, e) : Matrix();
      nn::ForwardContext ctx;
      ctx.train = true;
      ctx.rng = &noise_rng;
      opt.zero_grad();
      LossResult r = model.loss(x0, x1, tau, ctx, Sampling::stochastic);
      if (!std::isfinite(r.total.item()) || !std::isfinite(r.parts.total)) throw_divergence(r, epoch, batch_index);
      ad::backward(r.total);
      opt.step(config.grad_clip_norm);
      accumulate(acc, r.parts, static_cast<double>(e - b));
    }
    divide(acc, static_cast<double>(n));
    emit({"train", epoch, tau, acc});
    if (val_set && val_set->size() > 0 && config.log_validation) {
      emit({"val", epoch, tau, evaluate(model, *val_set)});
    }
  }
  finalize_batchnorm(model, train_set);
  return result;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const Model& model, const Normalization& norm, const nlohmann::json& extra,
                     const std::filesystem::path& path) {
  Archive ar(kCheckpointFormat, kCheckpointVersion);
  ar.meta()["model"] = model.config().to_json();
  ar.meta()["extra"] = extra;
  if (norm.mean.size() > 0) {
    put_matrix(ar, "norm.mean", norm.mean);
    put_matrix(ar, "norm.scale", norm.scale);
  }
  model.save(ar);
  ar.save(path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Archive ar = Archive::load(path, kCheckpointFormat, kCheckpointVersion);
  LoadedCheckpoint out;
  const ModelConfig cfg = ModelConfig::from_json(ar.meta().at("model"));
  out.model = make_model(cfg, 0);
  out.model->load(ar);
  out.extra = ar.meta().value("extra", nlohmann::json::object());
  if (ar.has("norm.mean")) {
    out.norm.mean = get_matrix(ar, "norm.mean");
    out.norm.scale = get_matrix(ar, "norm.scale");
  }
  return out;
}

}  // namespace latplan::models
