#include <cmath>

#include "latplan/common/error.hpp"
#include "latplan/tensor/autodiff.hpp"

namespace latplan::ad {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

// cols(ci*k*k + ky*k + kx, y*W + x) = in(ci, y + ky - pad, x + kx - pad), zero outside.
void im2col(const double* in, const ConvGeometry& g, Matrix& cols) {
  const int k = g.kernel;
  const int pad = k / 2;
  const int hw = g.height * g.width;
  cols.setZero(static_cast<Eigen::Index>(g.in_channels) * k * k, hw);
  for (int ci = 0; ci < g.in_channels; ++ci) {
    const double* plane = in + static_cast<std::ptrdiff_t>(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols.row((ci * k + ky) * k + kx).data();
        for (int y = 0; y < g.height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= g.height) continue;
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(g.width, g.width + pad - kx);
          const double* src = plane + sy * g.width + (kx - pad);
          double* d = dst + y * g.width;
          for (int x = x_lo; x < x_hi; ++x) d[x] = src[x];
        }
      }
    }
  }
}

void col2im_add(const Matrix& cols, const ConvGeometry& g, double* out) {
  const int k = g.kernel;
  const int pad = k / 2;
  const int hw = g.height * g.width;
  for (int ci = 0; ci < g.in_channels; ++ci) {
    double* plane = out + static_cast<std::ptrdiff_t>(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols.row((ci * k + ky) * k + kx).data();
        for (int y = 0; y < g.height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= g.height) continue;
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(g.width, g.width + pad - kx);
          double* d = plane + sy * g.width + (kx - pad);
          const double* s = src + y * g.width;
          for (int x = x_lo; x < x_hi; ++x) d[x] += s[x];
        }
      }
    }
  }
}

void check_bn_shapes(const Var& x, const Var& gamma, const Var& beta, int channels, int spatial) {
  if (channels <= 0 || spatial <= 0 || x.cols() != static_cast<Eigen::Index>(channels) * spatial) {
    throw ConfigError("batch_norm: input width does not match channels x spatial");
  }
  if (gamma.rows() != 1 || gamma.cols() != channels || beta.rows() != 1 || beta.cols() != channels) {
    throw ConfigError("batch_norm: gamma/beta must be 1 x channels");
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, const ConvGeometry& geom) {
  const int hw = geom.height * geom.width;
  const Eigen::Index patch = static_cast<Eigen::Index>(geom.in_channels) * geom.kernel * geom.kernel;
  if (geom.kernel <= 0 || geom.kernel % 2 == 0) throw ConfigError("conv2d: kernel must be odd");
  if (x.cols() != static_cast<Eigen::Index>(geom.in_channels) * hw) {
    throw ConfigError("conv2d: input width " + std::to_string(x.cols()) +
                      " does not match Cin*H*W = " + std::to_string(geom.in_channels * hw));
  }
  if (w.rows() != geom.out_channels || w.cols() != patch) throw ConfigError("conv2d: weight shape mismatch");
  if (b.defined() && (b.rows() != 1 || b.cols() != geom.out_channels)) {
    throw ConfigError("conv2d: bias shape mismatch");
  }

  const Eigen::Index batch = x.rows();
  Matrix out(batch, static_cast<Eigen::Index>(geom.out_channels) * hw);
  Matrix cols;
  for (Eigen::Index n = 0; n < batch; ++n) {
    im2col(x.value().row(n).data(), geom, cols);
    MutMap o(out.row(n).data(), geom.out_channels, hw);
    o.noalias() = w.value() * cols;
    if (b.defined()) o.colwise() += b.value().row(0).transpose();
  }

  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  const bool has_bias = b.defined();
  return make_result(std::move(out), std::move(inputs), [geom, hw, has_bias](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node* pb = has_bias ? self.parents[2].get() : nullptr;
    const Eigen::Index batch = self.value.rows();
    Matrix dw = Matrix::Zero(pw.value.rows(), pw.value.cols());
    RowVector db = RowVector::Zero(geom.out_channels);
    Matrix dx;
    if (px.requires_grad) dx = Matrix::Zero(px.value.rows(), px.value.cols());
    Matrix cols;
    Matrix dcols;
    for (Eigen::Index n = 0; n < batch; ++n) {
      ConstMap go(self.grad.row(n).data(), geom.out_channels, hw);
      if (pw.requires_grad) {
        im2col(px.value.row(n).data(), geom, cols);
        dw.noalias() += go * cols.transpose();
      }
      if (pb && pb->requires_grad) db += go.rowwise().sum().transpose();
      if (px.requires_grad) {
        dcols.noalias() = pw.value.transpose() * go;
        col2im_add(dcols, geom, dx.row(n).data());
      }
    }
    if (pw.requires_grad) pw.accumulate(dw);
    if (pb && pb->requires_grad) pb->accumulate(db);
    if (px.requires_grad) px.accumulate(dx);
  });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, int channels, int spatial,
                     double eps, BatchStats* stats) {
  check_bn_shapes(x, gamma, beta, channels, spatial);
  const Eigen::Index batch = x.rows();
  if (batch == 0) throw ConfigError("batch_norm: empty batch");
  const double count = static_cast<double>(batch) * spatial;

  RowVector mu = RowVector::Zero(channels);
  RowVector var = RowVector::Zero(channels);
  const Matrix& xv = x.value();
  for (int c = 0; c < channels; ++c) {
    const auto block = xv.middleCols(static_cast<Eigen::Index>(c) * spatial, spatial);
    const double m = block.sum() / count;
    mu(c) = m;
    var(c) = (block.array() - m).square().sum() / count;
  }
  if (stats) {
    stats->mean = mu;
    stats->var = var;
  }
  RowVector inv_std = (var.array() + eps).rsqrt();

  Matrix xhat(batch, xv.cols());
  Matrix out(batch, xv.cols());
  for (int c = 0; c < channels; ++c) {
    const auto cols = Eigen::seqN(static_cast<Eigen::Index>(c) * spatial, spatial);
    xhat(Eigen::all, cols) = (xv(Eigen::all, cols).array() - mu(c)) * inv_std(c);
    out(Eigen::all, cols) = xhat(Eigen::all, cols).array() * gamma.value()(0, c) + beta.value()(0, c);
  }

  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std, channels, spatial, count](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pbeta = *self.parents[2];
                       RowVector dgamma(channels);
                       RowVector dbeta(channels);
                       Matrix dx;
                       if (px.requires_grad) dx.resize(self.grad.rows(), self.grad.cols());
                       for (int c = 0; c < channels; ++c) {
                         const auto cols = Eigen::seqN(static_cast<Eigen::Index>(c) * spatial, spatial);
                         const auto gy = self.grad(Eigen::all, cols).array();
                         const auto xh = xhat(Eigen::all, cols).array();
                         const double sum_gy = gy.sum();
                         const double sum_gy_xh = (gy * xh).sum();
                         dgamma(c) = sum_gy_xh;
                         dbeta(c) = sum_gy;
                         if (px.requires_grad) {
                           const double g = pg.value(0, c);
                           dx(Eigen::all, cols) =
                               (g * inv_std(c) / count) * (count * gy - sum_gy - xh * sum_gy_xh);
                         }
                       }
                       if (px.requires_grad) px.accumulate(dx);
                       if (pg.requires_grad) pg.accumulate(dgamma);
                       if (pbeta.requires_grad) pbeta.accumulate(dbeta);
                     });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const RowVector& mean,
                    const RowVector& var, int channels, int spatial, double eps) {
  check_bn_shapes(x, gamma, beta, channels, spatial);
  if (mean.size() != channels || var.size() != channels) {
    throw ConfigError("batch_norm_eval: statistics size mismatch");
  }
  RowVector inv_std = (var.array() + eps).rsqrt();
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), xv.cols());
  Matrix out(xv.rows(), xv.cols());
  for (int c = 0; c < channels; ++c) {
    const auto cols = Eigen::seqN(static_cast<Eigen::Index>(c) * spatial, spatial);
    xhat(Eigen::all, cols) = (xv(Eigen::all, cols).array() - mean(c)) * inv_std(c);
    out(Eigen::all, cols) = xhat(Eigen::all, cols).array() * gamma.value()(0, c) + beta.value()(0, c);
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std, channels, spatial](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pbeta = *self.parents[2];
                       RowVector dgamma(channels);
                       RowVector dbeta(channels);
                       Matrix dx;
                       if (px.requires_grad) dx.resize(self.grad.rows(), self.grad.cols());
                       for (int c = 0; c < channels; ++c) {
                         const auto cols = Eigen::seqN(static_cast<Eigen::Index>(c) * spatial, spatial);
                         const auto gy = self.grad(Eigen::all, cols).array();
                         dgamma(c) = (gy * xhat(Eigen::all, cols).array()).sum();
                         dbeta(c) = gy.sum();
                         if (px.requires_grad) dx(Eigen::all, cols) = gy * (pg.value(0, c) * inv_std(c));
                       }
                       if (px.requires_grad) px.accumulate(dx);
                       if (pg.requires_grad) pg.accumulate(dgamma);
                       if (pbeta.requires_grad) pbeta.accumulate(dbeta);
                     });
}

}  // namespace latplan::ad
