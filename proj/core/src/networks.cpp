#include "latplan/networks.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "latplan/common/error.hpp"
#include "latplan/tensor/matrix_io.hpp"

namespace latplan::nn {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::gaussian_noise: return "gaussian_noise";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::dropout: return "dropout";
    case LayerKind::dense: return "dense";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  for (auto k : {LayerKind::gaussian_noise, LayerKind::batch_norm, LayerKind::conv, LayerKind::relu,
                 LayerKind::sigmoid, LayerKind::dropout, LayerKind::dense, LayerKind::flatten,
                 LayerKind::reshape}) {
    if (s == kind_name(k)) return k;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

Matrix uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double limit) {
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = limit * (2.0 * rng.uniform() - 1.0);
  return m;
}

// He-uniform when the next layer is a ReLU, Glorot-uniform otherwise.
double init_limit(bool feeds_relu, double fan_in, double fan_out) {
  return feeds_relu ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
}

}  // namespace

nlohmann::json schedule_to_json(const LayerSchedule& schedule) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : schedule) {
    nlohmann::json j{{"kind", kind_name(l.kind)}};
    switch (l.kind) {
      case LayerKind::gaussian_noise:
      case LayerKind::dropout: j["rate"] = l.rate; break;
      case LayerKind::conv: j["kernel"] = l.kernel; j["units"] = l.units; break;
      case LayerKind::dense: j["units"] = l.units; break;
      case LayerKind::reshape: j["shape"] = {l.shape.channels, l.shape.height, l.shape.width}; break;
      default: break;
    }
    arr.push_back(j);
  }
  return arr;
}

LayerSchedule schedule_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("layer schedule must be a JSON array");
  LayerSchedule out;
  for (const auto& e : j) {
    LayerSpec l;
    l.kind = kind_from_name(e.at("kind").get<std::string>());
    l.rate = e.value("rate", 0.0);
    l.kernel = e.value("kernel", 0);
    l.units = e.value("units", 0);
    if (e.contains("shape")) {
      const auto& s = e.at("shape");
      l.shape = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
    }
    out.push_back(l);
  }
  return out;
}

LayerSchedule conv_encoder_schedule(int F, int channels, int kernel, double noise, double dropout) {
  LayerSchedule s{LayerSpec::noise(noise), LayerSpec::batch_norm()};
  for (int i = 0; i < 2; ++i) {
    s.push_back(LayerSpec::conv(kernel, channels));
    s.push_back(LayerSpec::relu());
    s.push_back(LayerSpec::batch_norm());
    s.push_back(LayerSpec::dropout(dropout));
  }
  s.push_back(LayerSpec::conv(kernel, channels));
  s.push_back(LayerSpec::flatten());
  s.push_back(LayerSpec::dense(F));
  return s;
}

LayerSchedule conv_decoder_schedule(Shape image, int channels, int kernel, double dropout) {
  LayerSchedule s{LayerSpec::dense(image.height * image.width),
                  LayerSpec::reshape({1, image.height, image.width}), LayerSpec::batch_norm()};
  for (int i = 0; i < 2; ++i) {
    s.push_back(LayerSpec::conv(kernel, channels));
    s.push_back(LayerSpec::relu());
    s.push_back(LayerSpec::batch_norm());
    s.push_back(LayerSpec::dropout(dropout));
  }
  s.push_back(LayerSpec::conv(kernel, image.channels));
  return s;
}

LayerSchedule mlp_encoder_schedule(int F, int hidden, double noise, double dropout) {
  LayerSchedule s{LayerSpec::noise(noise), LayerSpec::flatten(), LayerSpec::batch_norm()};
  for (int i = 0; i < 2; ++i) {
    s.push_back(LayerSpec::dense(hidden));
    s.push_back(LayerSpec::relu());
    s.push_back(LayerSpec::batch_norm());
    s.push_back(LayerSpec::dropout(dropout));
  }
  s.push_back(LayerSpec::dense(F));
  return s;
}

LayerSchedule mlp_decoder_schedule(Shape image, int hidden, double dropout) {
  LayerSchedule s{LayerSpec::dense(hidden), LayerSpec::batch_norm()};
  for (int i = 0; i < 2; ++i) {
    s.push_back(LayerSpec::dense(hidden));
    s.push_back(LayerSpec::relu());
    s.push_back(LayerSpec::batch_norm());
    s.push_back(LayerSpec::dropout(dropout));
  }
  s.push_back(LayerSpec::dense(image.size()));
  s.push_back(LayerSpec::reshape(image));
  return s;
}

LayerSchedule action_head_schedule(int A, int hidden, double dropout) {
  return {LayerSpec::sigmoid(),    LayerSpec::dense(hidden),     LayerSpec::relu(),
          LayerSpec::batch_norm(), LayerSpec::dropout(dropout), LayerSpec::dense(A)};
}

LayerSchedule linear_head_schedule(int A) { return {LayerSpec::dense(A)}; }

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(std::string name, int channels, int spatial, double eps, double momentum)
    : name_(std::move(name)),
      channels_(channels),
      spatial_(spatial),
      eps_(eps),
      momentum_(momentum),
      gamma_(ad::parameter(Matrix::Ones(1, channels))),
      beta_(ad::parameter(Matrix::Zero(1, channels))),
      mean_(RowVector::Zero(channels)),
      var_(RowVector::Ones(channels)) {
  if (channels <= 0 || spatial <= 0) throw ConfigError("BatchNorm '" + name_ + "': empty shape");
}

Var BatchNorm::forward(const Var& x, ForwardContext& ctx) {
  if (BnCollector* c = ctx.collector) {
    if (c->phase == BnCollector::Phase::trace) {
      c->trace.push_back(this);
    } else if (c->target == this) {
      const Matrix& v = x.value();
      for (int ch = 0; ch < channels_; ++ch) {
        const auto block = v.middleCols(static_cast<Eigen::Index>(ch) * spatial_, spatial_);
        if (c->phase == BnCollector::Phase::mean) {
          c->accum(ch) += block.sum();
        } else {
          c->accum(ch) += (block.array() - c->mean(ch)).square().sum();
        }
      }
      c->count += static_cast<double>(v.rows()) * spatial_;
    }
  }
  if (ctx.train) {
    ad::BatchStats stats;
    Var y = ad::batch_norm_train(x, gamma_, beta_, channels_, spatial_, eps_, &stats);
    mean_ = momentum_ * mean_ + (1.0 - momentum_) * stats.mean;
    var_ = momentum_ * var_ + (1.0 - momentum_) * stats.var;
    return y;
  }
  return ad::batch_norm_eval(x, gamma_, beta_, mean_, var_, channels_, spatial_, eps_);
}

double BatchNorm::slope(int c) const { return gamma_.value()(0, c) / std::sqrt(var_(c) + eps_); }

double BatchNorm::offset(int c) const { return beta_.value()(0, c) - slope(c) * mean_(c); }

void BatchNorm::save(Archive& ar, const std::string& prefix) const {
  put_matrix(ar, prefix + ".gamma", gamma_.value());
  put_matrix(ar, prefix + ".beta", beta_.value());
  put_matrix(ar, prefix + ".mean", mean_);
  put_matrix(ar, prefix + ".var", var_);
}

void BatchNorm::load(const Archive& ar, const std::string& prefix) {
  gamma_.mutable_value() = get_matrix(ar, prefix + ".gamma", 1, channels_);
  beta_.mutable_value() = get_matrix(ar, prefix + ".beta", 1, channels_);
  mean_ = get_matrix(ar, prefix + ".mean", 1, channels_);
  var_ = get_matrix(ar, prefix + ".var", 1, channels_);
}

// ---------------------------------------------------------------------------

Sequential::Sequential(std::string name, Shape input, LayerSchedule schedule, Rng& init_rng)
    : name_(std::move(name)), input_(input), schedule_(std::move(schedule)) {
  Shape cur = input_;
  for (std::size_t i = 0; i < schedule_.size(); ++i) {
    const LayerSpec& spec = schedule_[i];
    const bool feeds_relu = i + 1 < schedule_.size() && schedule_[i + 1].kind == LayerKind::relu;
    Layer layer;
    layer.spec = spec;
    layer.in = cur;
    const std::string pfx = name_ + "." + std::to_string(i);
    switch (spec.kind) {
      case LayerKind::gaussian_noise:
      case LayerKind::dropout:
        if (spec.rate < 0.0 || (spec.kind == LayerKind::dropout && spec.rate >= 1.0)) {
          throw ConfigError(pfx + ": rate out of range");
        }
        break;
      case LayerKind::relu:
      case LayerKind::sigmoid:
        break;
      case LayerKind::batch_norm:
        layer.bn = std::make_unique<BatchNorm>(pfx + ".bn", cur.channels, cur.height * cur.width);
        break;
      case LayerKind::conv: {
        if (spec.units <= 0 || spec.kernel <= 0 || spec.kernel % 2 == 0) {
          throw ConfigError(pfx + ": conv needs positive channels and an odd kernel");
        }
        const double k2 = static_cast<double>(spec.kernel) * spec.kernel;
        const double limit = init_limit(feeds_relu, cur.channels * k2, spec.units * k2);
        layer.w = ad::parameter(uniform_init(init_rng, spec.units, cur.channels * spec.kernel * spec.kernel, limit));
        layer.b = ad::parameter(Matrix::Zero(1, spec.units));
        cur = {spec.units, cur.height, cur.width};
        break;
      }
      case LayerKind::dense: {
        if (spec.units <= 0) throw ConfigError(pfx + ": dense needs positive width");
        const double limit = init_limit(feeds_relu, cur.size(), spec.units);
        layer.w = ad::parameter(uniform_init(init_rng, cur.size(), spec.units, limit));
        layer.b = ad::parameter(Matrix::Zero(1, spec.units));
        cur = {spec.units, 1, 1};
        break;
      }
      case LayerKind::flatten:
        cur = {cur.size(), 1, 1};
        break;
      case LayerKind::reshape:
        if (spec.shape.size() != cur.size()) {
          throw ConfigError(pfx + ": reshape to " + std::to_string(spec.shape.size()) + " values from " +
                            std::to_string(cur.size()));
        }
        cur = spec.shape;
        break;
    }
    layer.out = cur;
    layers_.push_back(std::move(layer));
  }
}

Shape Sequential::output_shape() const { return layers_.empty() ? input_ : layers_.back().out; }

Var Sequential::forward(const Var& x, ForwardContext& ctx) {
  if (x.cols() != input_.size()) {
    throw ConfigError(name_ + ": input width " + std::to_string(x.cols()) + " does not match expected " +
                      std::to_string(input_.size()));
  }
  if (ctx.train && !ctx.rng) throw ConfigError(name_ + ": train mode needs an rng");
  Var h = x;
  for (auto& layer : layers_) {
    const LayerSpec& spec = layer.spec;
    switch (spec.kind) {
      case LayerKind::gaussian_noise:
        if (ctx.train && spec.rate > 0.0) {
          Matrix n(h.rows(), h.cols());
          for (Eigen::Index k = 0; k < n.size(); ++k) n.data()[k] = spec.rate * ctx.rng->normal();
          h = ad::add(h, ad::constant(std::move(n)));
        }
        break;
      case LayerKind::dropout:
        if (ctx.train && spec.rate > 0.0) {
          Matrix mask(h.rows(), h.cols());
          const double keep = 1.0 - spec.rate;
          for (Eigen::Index k = 0; k < mask.size(); ++k) {
            mask.data()[k] = ctx.rng->uniform() < keep ? 1.0 / keep : 0.0;
          }
          h = ad::mul(h, ad::constant(std::move(mask)));
        }
        break;
      case LayerKind::batch_norm: h = layer.bn->forward(h, ctx); break;
      case LayerKind::relu: h = ad::relu(h); break;
      case LayerKind::sigmoid: h = ad::sigmoid(h); break;
      case LayerKind::conv:
        h = ad::conv2d(h, layer.w, layer.b,
                       ad::ConvGeometry{layer.in.channels, layer.in.height, layer.in.width, spec.kernel, spec.units});
        break;
      case LayerKind::dense: h = ad::linear(h, layer.w, layer.b); break;
      case LayerKind::flatten:
      case LayerKind::reshape: break;
    }
  }
  return h;
}

std::vector<NamedParam> Sequential::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    const std::string pfx = name_ + "." + std::to_string(i);
    if (l.w.defined()) out.push_back({pfx + ".w", l.w});
    if (l.b.defined()) out.push_back({pfx + ".b", l.b});
    if (l.bn) {
      out.push_back({l.bn->name() + ".gamma", l.bn->gamma()});
      out.push_back({l.bn->name() + ".beta", l.bn->beta()});
    }
  }
  return out;
}

std::vector<BatchNorm*> Sequential::batch_norms() {
  std::vector<BatchNorm*> out;
  for (auto& l : layers_) {
    if (l.bn) out.push_back(l.bn.get());
  }
  return out;
}

void Sequential::save(Archive& ar) const {
  ar.meta()["modules"][name_] = {{"input", {input_.channels, input_.height, input_.width}},
                                 {"schedule", schedule_to_json(schedule_)}};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string pfx = name_ + "." + std::to_string(i);
    if (l.w.defined()) put_matrix(ar, pfx + ".w", l.w.value());
    if (l.b.defined()) put_matrix(ar, pfx + ".b", l.b.value());
    if (l.bn) l.bn->save(ar, l.bn->name());
  }
}

void Sequential::load(const Archive& ar) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    const std::string pfx = name_ + "." + std::to_string(i);
    if (l.w.defined()) l.w.mutable_value() = get_matrix(ar, pfx + ".w", l.w.rows(), l.w.cols());
    if (l.b.defined()) l.b.mutable_value() = get_matrix(ar, pfx + ".b", l.b.rows(), l.b.cols());
    if (l.bn) l.bn->load(ar, l.bn->name());
  }
}

// ---------------------------------------------------------------------------

BackToLogit::BackToLogit(std::string name, int F, int A, Rng& init_rng)
    : name_(std::move(name)),
      F_(F),
      A_(A),
      matrix_(ad::parameter(uniform_init(init_rng, A, F, std::sqrt(6.0 / (A + F))))),
      bn_z_(name_ + ".bn_z", F, 1),
      bn_e_(name_ + ".bn_e", F, 1) {}

Var BackToLogit::forward(const Var& z, const Var& a, ForwardContext& ctx) {
  if (z.cols() != F_ || a.cols() != A_ || z.rows() != a.rows()) {
    throw ConfigError(name_ + ": expected z of width " + std::to_string(F_) + " and a of width " +
                      std::to_string(A_));
  }
  Var lz = bn_z_.forward(z, ctx);
  Var le = bn_e_.forward(ad::matmul(a, matrix_), ctx);
  return ad::add(lz, le);
}

std::vector<double> BackToLogit::eval_logits(std::span<const double> z, int label) const {
  if (static_cast<int>(z.size()) != F_ || label < 0 || label >= A_) {
    throw ConfigError(name_ + ": eval_logits argument out of range");
  }
  std::vector<double> out(F_);
  for (int f = 0; f < F_; ++f) {
    out[f] = bn_z_.slope(f) * z[f] + bn_z_.offset(f) + bn_e_.slope(f) * matrix_.value()(label, f) +
             bn_e_.offset(f);
  }
  return out;
}

std::vector<int> BackToLogit::eval_bits(std::span<const int> z, int label) const {
  std::vector<double> zd(z.begin(), z.end());
  auto l = eval_logits(zd, label);
  std::vector<int> out(F_);
  for (int f = 0; f < F_; ++f) out[f] = l[f] >= 0.0 ? 1 : 0;
  return out;
}

std::vector<NamedParam> BackToLogit::parameters() {
  return {{name_ + ".matrix", matrix_},
          {bn_z_.name() + ".gamma", bn_z_.gamma()},
          {bn_z_.name() + ".beta", bn_z_.beta()},
          {bn_e_.name() + ".gamma", bn_e_.gamma()},
          {bn_e_.name() + ".beta", bn_e_.beta()}};
}

std::vector<BatchNorm*> BackToLogit::batch_norms() { return {&bn_z_, &bn_e_}; }

void BackToLogit::save(Archive& ar) const {
  put_matrix(ar, name_ + ".matrix", matrix_.value());
  bn_z_.save(ar, bn_z_.name());
  bn_e_.save(ar, bn_e_.name());
}

void BackToLogit::load(const Archive& ar) {
  matrix_.mutable_value() = get_matrix(ar, name_ + ".matrix", A_, F_);
  bn_z_.load(ar, bn_z_.name());
  bn_e_.load(ar, bn_e_.name());
}

std::vector<MonotonicityViolation> check_monotonicity(const BackToLogit& apply, const BackToLogit* regress) {
  std::vector<MonotonicityViolation> out;
  for (int f = 0; f < apply.F(); ++f) {
    if (apply.bn_state().slope(f) < 0.0) out.push_back({f, BtlPath::apply});
  }
  if (regress) {
    for (int f = 0; f < regress->F(); ++f) {
      if (regress->bn_state().slope(f) < 0.0) out.push_back({f, BtlPath::regress});
    }
  }
  return out;
}

void finalize_batchnorm(const std::vector<BatchNorm*>& layers, const ForwardSweep& sweep) {
  BnCollector c;
  ForwardContext ctx;
  ctx.collector = &c;
  sweep(ctx);
  if (c.trace.empty()) throw ConfigError("finalize_batchnorm: empty dataset");

  std::vector<const BatchNorm*> order;
  std::unordered_set<const BatchNorm*> seen;
  for (auto it = c.trace.rbegin(); it != c.trace.rend(); ++it) {
    if (seen.insert(*it).second) order.push_back(*it);
  }
  std::reverse(order.begin(), order.end());

  for (const BatchNorm* target : order) {
    auto found = std::find(layers.begin(), layers.end(), target);
    if (found == layers.end()) continue;
    BatchNorm& bn = **found;
    c.target = target;
    c.phase = BnCollector::Phase::mean;
    c.accum = RowVector::Zero(bn.channels());
    c.count = 0.0;
    sweep(ctx);
    if (c.count == 0.0) throw ConfigError("finalize_batchnorm: layer " + bn.name() + " saw no data");
    c.mean = c.accum / c.count;
    c.phase = BnCollector::Phase::variance;
    c.accum = RowVector::Zero(bn.channels());
    c.count = 0.0;
    sweep(ctx);
    bn.running_mean() = c.mean;
    bn.running_var() = c.accum / c.count;
  }
}

}  // namespace latplan::nn
