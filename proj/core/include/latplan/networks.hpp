#pragma once

// Layer schedules and the differentiable subnetworks built from them:
// encoder, decoder, action classifier, applicable/regressable heads and the
// Back-to-Logit apply/regress blocks.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latplan/common/archive.hpp"
#include "latplan/common/rng.hpp"
#include "latplan/tensor/autodiff.hpp"

namespace latplan::nn {

using ad::Matrix;
using ad::RowVector;
using ad::Var;

struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

enum class LayerKind { gaussian_noise, batch_norm, conv, relu, sigmoid, dropout, dense, flatten, reshape };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  double rate = 0.0;  ///< noise stddev or dropout rate
  int kernel = 0;
  int units = 0;      ///< conv output channels or dense width
  Shape shape;        ///< reshape target

  static LayerSpec noise(double stddev) { return {LayerKind::gaussian_noise, stddev, 0, 0, {}}; }
  static LayerSpec batch_norm() { return {LayerKind::batch_norm, 0.0, 0, 0, {}}; }
  static LayerSpec conv(int kernel, int channels) { return {LayerKind::conv, 0.0, kernel, channels, {}}; }
  static LayerSpec relu() { return {LayerKind::relu, 0.0, 0, 0, {}}; }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid, 0.0, 0, 0, {}}; }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, rate, 0, 0, {}}; }
  static LayerSpec dense(int units) { return {LayerKind::dense, 0.0, 0, units, {}}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0.0, 0, 0, {}}; }
  static LayerSpec reshape(Shape s) { return {LayerKind::reshape, 0.0, 0, 0, s}; }
};

using LayerSchedule = std::vector<LayerSpec>;

nlohmann::json schedule_to_json(const LayerSchedule& schedule);
LayerSchedule schedule_from_json(const nlohmann::json& j);

/// GaussianNoise, BN, [Conv, ReLU, BN, Dropout] x 2, Conv, flatten, FC(F).
LayerSchedule conv_encoder_schedule(int F, int channels = 32, int kernel = 5, double noise = 0.2,
                                    double dropout = 0.2);
/// FC(spatial), reshape, BN, [Conv, ReLU, BN, Dropout] x 2, Conv(out channels).
LayerSchedule conv_decoder_schedule(Shape image, int channels = 32, int kernel = 5, double dropout = 0.2);
/// Fully connected counterparts of the conv schedules with the same block structure.
LayerSchedule mlp_encoder_schedule(int F, int hidden, double noise = 0.2, double dropout = 0.2);
LayerSchedule mlp_decoder_schedule(Shape image, int hidden, double dropout = 0.2);
/// sigmoid, FC(hidden), ReLU, BN, Dropout, FC(A).
LayerSchedule action_head_schedule(int A, int hidden = 1000, double dropout = 0.2);
/// FC(A).
LayerSchedule linear_head_schedule(int A);

class BatchNorm;

/// Collects exact statistics for one batch-norm layer during finalization.
struct BnCollector {
  enum class Phase { trace, mean, variance };
  Phase phase = Phase::trace;
  const BatchNorm* target = nullptr;
  RowVector mean;
  RowVector accum;
  double count = 0.0;
  std::vector<const BatchNorm*> trace;
};

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  ///< noise source; required in train mode
  BnCollector* collector = nullptr;
};

class BatchNorm {
 public:
  BatchNorm(std::string name, int channels, int spatial, double eps = 1e-3, double momentum = 0.99);

  /// Train mode normalizes with batch statistics and updates the running
  /// averages; eval mode uses the running statistics.
  Var forward(const Var& x, ForwardContext& ctx);

  const std::string& name() const { return name_; }
  int channels() const { return channels_; }
  int spatial() const { return spatial_; }
  double eps() const { return eps_; }
  Var& gamma() { return gamma_; }
  Var& beta() { return beta_; }
  const Var& gamma() const { return gamma_; }
  const Var& beta() const { return beta_; }
  RowVector& running_mean() { return mean_; }
  RowVector& running_var() { return var_; }
  const RowVector& running_mean() const { return mean_; }
  const RowVector& running_var() const { return var_; }

  /// Eval-mode affine map for channel c: y = slope * x + offset.
  double slope(int c) const;
  double offset(int c) const;

  void save(Archive& ar, const std::string& prefix) const;
  void load(const Archive& ar, const std::string& prefix);

 private:
  std::string name_;
  int channels_;
  int spatial_;
  double eps_;
  double momentum_;
  Var gamma_;
  Var beta_;
  RowVector mean_;
  RowVector var_;
};

struct NamedParam {
  std::string name;
  Var var;
};

/// A feed-forward stack built from a LayerSchedule.
class Sequential {
 public:
  Sequential(std::string name, Shape input, LayerSchedule schedule, Rng& init_rng);

  /// x: batch x input.size(). Throws ConfigError on a width mismatch.
  Var forward(const Var& x, ForwardContext& ctx);

  const std::string& name() const { return name_; }
  Shape input_shape() const { return input_; }
  Shape output_shape() const;
  const LayerSchedule& schedule() const { return schedule_; }

  std::vector<NamedParam> parameters();
  std::vector<BatchNorm*> batch_norms();

  void save(Archive& ar) const;
  void load(const Archive& ar);

 private:
  struct Layer {
    LayerSpec spec;
    Shape in;
    Shape out;
    Var w;
    Var b;
    std::unique_ptr<BatchNorm> bn;
  };

  std::string name_;
  Shape input_;
  LayerSchedule schedule_;
  std::vector<Layer> layers_;
};

enum class BtlPath { apply, regress };

/// BN(z) + BN(a M), with M an A x F embedding (row k is the effect or
/// precondition vector of label k).
class BackToLogit {
 public:
  BackToLogit(std::string name, int F, int A, Rng& init_rng);

  /// z: batch x F in [0, 1]; a: batch x A (one-hot or relaxed).
  Var forward(const Var& z, const Var& a, ForwardContext& ctx);

  /// Eval-mode logits for one latent vector and one label, without a graph.
  std::vector<double> eval_logits(std::span<const double> z, int label) const;
  /// Determinized eval_logits.
  std::vector<int> eval_bits(std::span<const int> z, int label) const;

  const std::string& name() const { return name_; }
  int F() const { return F_; }
  int A() const { return A_; }
  Var& matrix() { return matrix_; }
  const Var& matrix() const { return matrix_; }
  BatchNorm& bn_state() { return bn_z_; }
  BatchNorm& bn_effect() { return bn_e_; }
  const BatchNorm& bn_state() const { return bn_z_; }
  const BatchNorm& bn_effect() const { return bn_e_; }

  std::vector<NamedParam> parameters();
  std::vector<BatchNorm*> batch_norms();

  void save(Archive& ar) const;
  void load(const Archive& ar);

 private:
  std::string name_;
  int F_;
  int A_;
  Var matrix_;
  BatchNorm bn_z_;
  BatchNorm bn_e_;
};

struct MonotonicityViolation {
  int bit;
  BtlPath path;
  bool operator==(const MonotonicityViolation&) const = default;
};

/// Bits whose eval-mode slope on the state path is negative.
std::vector<MonotonicityViolation> check_monotonicity(const BackToLogit& apply,
                                                      const BackToLogit* regress = nullptr);

/// Runs the model's eval forward pass over the whole training set.
using ForwardSweep = std::function<void(ForwardContext&)>;

/// Replaces the running statistics of every layer in `layers` with the exact
/// mean and biased variance of its input over `sweep`. Layers are processed
/// in order of their last invocation so that every upstream layer is already
/// final when a layer is measured. Throws ConfigError if the sweep is empty.
void finalize_batchnorm(const std::vector<BatchNorm*>& layers, const ForwardSweep& sweep);

}  // namespace latplan::nn
