#pragma once

// The four acquisition models (SAE, AAE, Cube-Space AE, bidirectional
// Cube-Space AE), their losses, checkpoints, and the training loop.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "latplan/common/normalization.hpp"
#include "latplan/discrete_latent.hpp"
#include "latplan/networks.hpp"

namespace latplan::models {

using ad::Matrix;
using ad::RowVector;
using ad::Var;

enum class ModelKind { sae, aae, csae, bicsae };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Network sizes. style "mlp" uses fully connected encoder/decoder stacks,
/// "conv" the convolutional schedule.
struct ArchitectureConfig {
  std::string style = "conv";
  int hidden = 256;          ///< mlp width
  int conv_channels = 32;
  int kernel = 5;
  int action_hidden = 1000;
  double input_noise = 0.2;
  double dropout = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
  static ArchitectureConfig from_json(const nlohmann::json& j);
};

struct ModelConfig {
  ModelKind kind = ModelKind::bicsae;
  nn::Shape image;
  latent::LatentConfig latent;
  ArchitectureConfig arch;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Loss terms, each a batch mean of a per-example quantity. Which terms are
/// populated depends on the model kind; the rest stay 0.
enum class Term {
  rec_x0,            ///< -log p(x0 | z0)
  rec_x1_direct,     ///< -log p(x1 | z1)
  rec_x1_applied,    ///< -log p(x1 | z2), z2 from apply(z0, a)
  rec_x0_regressed,  ///< -log p(x0 | z3), z3 from regress(z1, a)
  kl_prior,          ///< KL(q(z0|x0) || Bern(eps))
  kl_prior_x1,       ///< KL(q(z1|x1) || Bern(eps))
  kl_action,         ///< KL(q(a|x0,x1) || Cat(applicable(z0))), or || uniform for the AAE
  kl_effect,         ///< KL(q(z1|x1) || p(z2|z0,a))
  kl_regaction,      ///< KL(q(a|x0,x1) || Cat(regressable(z1)))
  kl_precondition,   ///< KL(q(z0|x0) || p(z3|z1,a))
  bce_successor,     ///< AAE successor cross entropy
};
inline constexpr std::size_t kNumTerms = 11;

const char* term_name(Term t);
bool term_is_kl(Term t);

struct ElboBreakdown {
  std::array<double, kNumTerms> terms{};
  double total = 0.0;

  double operator[](Term t) const { return terms[static_cast<std::size_t>(t)]; }
  double& operator[](Term t) { return terms[static_cast<std::size_t>(t)]; }
};

/// Coefficient of every term in the objective of `kind`.
std::array<double, kNumTerms> term_weights(ModelKind kind, const latent::LatentConfig& latent);
/// Weighted sum of `parts.terms` under the given config's betas.
double weighted_total(ModelKind kind, const latent::LatentConfig& latent, const ElboBreakdown& parts);

enum class Sampling { stochastic, deterministic };

struct LossResult {
  Var total;  ///< 1x1, differentiable in stochastic mode
  ElboBreakdown parts;
};

// ---- relaxed sampling on graph values ----

Var binary_concrete(const Var& logits, double tau, Rng& rng);
Var gumbel_softmax(const Var& logits, double tau, Rng& rng);
Matrix step(const Matrix& logits);
Matrix one_hot_argmax(const Matrix& logits);

class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ModelKind kind() const { return config_.kind; }
  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  /// Loss on a batch of pairs. For the AAE, x0/x1 are binary latent rows.
  /// `ctx.train` selects dropout/noise/batch statistics; `sampling` selects
  /// relaxed samples or determinized latents.
  virtual LossResult loss(const Matrix& x0, const Matrix& x1, double tau, nn::ForwardContext& ctx,
                          Sampling sampling) = 0;

  virtual std::vector<nn::NamedParam> parameters() = 0;
  virtual std::vector<nn::BatchNorm*> batch_norms() = 0;
  virtual void save(Archive& ar) const = 0;
  virtual void load(const Archive& ar) = 0;

 protected:
  ModelConfig config_;
};

/// Encoder/decoder pair shared by the state-space models.
class StateAutoencoder : public Model {
 public:
  StateAutoencoder(ModelConfig config, Rng& init_rng);

  LossResult loss(const Matrix& x0, const Matrix& x1, double tau, nn::ForwardContext& ctx,
                  Sampling sampling) override;

  /// Eval-mode encoder logits (batch x F).
  Matrix encode_logits(const Matrix& x);
  /// Eval-mode determinized latents.
  Matrix encode_bits(const Matrix& x);
  /// Eval-mode reconstruction of latents in [0, 1].
  Matrix decode(const Matrix& z);

  nn::Sequential& encoder() { return encoder_; }
  nn::Sequential& decoder() { return decoder_; }

  std::vector<nn::NamedParam> parameters() override;
  std::vector<nn::BatchNorm*> batch_norms() override;
  void save(Archive& ar) const override;
  void load(const Archive& ar) override;

 protected:
  Var sample(const Var& logits, double tau, nn::ForwardContext& ctx, Sampling sampling);
  Var rec_rows(const Matrix& x, const Var& xhat) const;

  nn::Sequential encoder_;
  nn::Sequential decoder_;
};

/// Cube-Space AE; with `bidirectional` set, also the regression branch.
class CubeSpaceAE : public StateAutoencoder {
 public:
  CubeSpaceAE(ModelConfig config, Rng& init_rng);

  LossResult loss(const Matrix& x0, const Matrix& x1, double tau, nn::ForwardContext& ctx,
                  Sampling sampling) override;

  bool bidirectional() const { return regress_ != nullptr; }

  /// Eval-mode action labels for pairs of images.
  std::vector<int> action_labels(const Matrix& x0, const Matrix& x1);
  /// Eval-mode action logits from encoder logits.
  Matrix action_logits(const Matrix& l0, const Matrix& l1);

  nn::BackToLogit& apply_btl() { return apply_; }
  const nn::BackToLogit& apply_btl() const { return apply_; }
  nn::BackToLogit* regress_btl() { return regress_.get(); }
  const nn::BackToLogit* regress_btl() const { return regress_.get(); }
  nn::Sequential& action_head() { return action_; }
  nn::Sequential& applicable_head() { return applicable_; }
  nn::Sequential* regressable_head() { return regressable_.get(); }

  std::vector<nn::NamedParam> parameters() override;
  std::vector<nn::BatchNorm*> batch_norms() override;
  void save(Archive& ar) const override;
  void load(const Archive& ar) override;

 private:
  nn::Sequential action_;
  nn::Sequential applicable_;
  nn::BackToLogit apply_;
  std::unique_ptr<nn::Sequential> regressable_;
  std::unique_ptr<nn::BackToLogit> regress_;
};

/// Action autoencoder over binary latents of a frozen state autoencoder.
class ActionAutoencoder : public Model {
 public:
  ActionAutoencoder(ModelConfig config, Rng& init_rng);

  LossResult loss(const Matrix& z0, const Matrix& z1, double tau, nn::ForwardContext& ctx,
                  Sampling sampling) override;

  std::vector<int> action_labels(const Matrix& z0, const Matrix& z1);
  /// Determinized successor prediction for each (z0, label).
  Matrix successors(const Matrix& z0, const std::vector<int>& labels);

  std::vector<nn::NamedParam> parameters() override;
  std::vector<nn::BatchNorm*> batch_norms() override;
  void save(Archive& ar) const override;
  void load(const Archive& ar) override;

 private:
  nn::Sequential action_;
  nn::Sequential successor_;
};

std::unique_ptr<Model> make_model(const ModelConfig& config, std::uint64_t seed);

// ---- data and training ----

/// Rows of paired observations: images for the state-space models, binary
/// latents for the AAE.
struct PairSet {
  Matrix x0;
  Matrix x1;

  Eigen::Index size() const { return x0.rows(); }
  PairSet subset(const std::vector<int>& rows) const;
};

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 400;
  double learning_rate = 1e-3;
  double grad_clip_norm = 0.1;
  std::uint64_t seed = 1;
  latent::AnnealSchedule schedule;
  std::string optimizer = "radam";  ///< "adam" or "radam"
  bool log_validation = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  /// Reduced settings for CPU runs.
  static TrainConfig desk();
};

struct LogRow {
  std::string split;
  int epoch = 0;
  double tau = 0.0;
  ElboBreakdown parts;
};

std::string log_header();
std::string format_log_row(const LogRow& row);

struct TrainResult {
  std::vector<LogRow> log;
};

/// Minibatch training with temperature annealing and per-tensor gradient
/// clipping, followed by batch-norm finalization on `train_set`. Rows are
/// appended to `log_stream` as they are produced when it is non-null.
/// Throws DivergenceError naming the offending term if the loss turns NaN.
TrainResult train(Model& model, const PairSet& train_set, const PairSet* val_set, const TrainConfig& config,
                  std::ostream* log_stream = nullptr);

/// Exact whole-dataset batch-norm statistics for every layer of `model`.
void finalize_batchnorm(Model& model, const PairSet& data, int batch_size = 256);

/// Mean eval-mode breakdown over `data` with determinized latents.
ElboBreakdown evaluate(Model& model, const PairSet& data, int batch_size = 256);

// ---- checkpoints ----

inline constexpr const char* kCheckpointFormat = "latplan-checkpoint";
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const Normalization& norm, const nlohmann::json& extra,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  Normalization norm;
  nlohmann::json extra;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace latplan::models
