#include "puat/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace puat::ad {
namespace {

using Index = Eigen::Index;

// One image (C*H*W, channel-major) -> (Ho*Wo) x (C*k*k) patch matrix.
Matrix im2col(const Scalar* img, const ImageShape& in, Index k, Index stride, Index pad, Index ho, Index wo) {
  Matrix cols = Matrix::Zero(ho * wo, in.channels * k * k);
  for (Index c = 0; c < in.channels; ++c) {
    const Scalar* plane = img + c * in.plane();
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Index col = (c * k + ki) * k + kj;
        for (Index oh = 0; oh < ho; ++oh) {
          const Index ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= in.height) continue;
          for (Index ow = 0; ow < wo; ++ow) {
            const Index iw = ow * stride + kj - pad;
            if (iw < 0 || iw >= in.width) continue;
            cols(oh * wo + ow, col) = plane[ih * in.width + iw];
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const Matrix& cols, Scalar* img, const ImageShape& in, Index k, Index stride, Index pad, Index ho,
            Index wo) {
  for (Index c = 0; c < in.channels; ++c) {
    Scalar* plane = img + c * in.plane();
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Index col = (c * k + ki) * k + kj;
        for (Index oh = 0; oh < ho; ++oh) {
          const Index ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= in.height) continue;
          for (Index ow = 0; ow < wo; ++ow) {
            const Index iw = ow * stride + kj - pad;
            if (iw < 0 || iw >= in.width) continue;
            plane[ih * in.width + iw] += cols(oh * wo + ow, col);
          }
        }
      }
    }
  }
}

void check_image(const Var& x, const ImageShape& in, const char* op) {
  if (x.cols() != in.size()) throw std::invalid_argument(std::string(op) + ": input does not match image shape");
}

}  // namespace

ImageShape conv_output_shape(const ImageShape& in, Index out_channels, Index kernel, Index stride, Index padding) {
  const Index ho = (in.height + 2 * padding - kernel) / stride + 1;
  const Index wo = (in.width + 2 * padding - kernel) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  return ImageShape{out_channels, ho, wo};
}

Var conv2d(const Var& x, const ImageShape& in, const Var& weight, const Var& bias, Index kernel, Index stride,
           Index padding, ImageShape* out_shape) {
  check_image(x, in, "conv2d");
  if (weight.rows() != in.channels * kernel * kernel) throw std::invalid_argument("conv2d: weight rows mismatch");
  const Index cout = weight.cols();
  const bool has_bias = bias.tape != nullptr;
  if (has_bias && (bias.rows() != 1 || bias.cols() != cout)) throw std::invalid_argument("conv2d: bias shape");
  const ImageShape os = conv_output_shape(in, cout, kernel, stride, padding);
  if (out_shape) *out_shape = os;
  const Index n = x.rows();
  const Index ho = os.height, wo = os.width;

  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  Matrix out(n, os.size());
  for (Index s = 0; s < n; ++s) {
    Matrix cols = im2col(xv.row(s).data(), in, kernel, stride, padding, ho, wo);
    Matrix y = cols * wv;  // (ho*wo) x cout
    if (has_bias) y.rowwise() += bias.value().row(0);
    Eigen::Map<Matrix> dst(out.row(s).data(), cout, ho * wo);
    dst = y.transpose();
  }

  const std::size_t ix = x.id, iw = weight.id;
  const std::size_t ib = has_bias ? bias.id : 0;
  const bool need = x.requires_grad() || weight.requires_grad() || (has_bias && bias.requires_grad());
  return x.tape->record(std::move(out), need,
                        [ix, iw, ib, has_bias, in, kernel, stride, padding, ho, wo, cout](Tape& t, const Matrix& g) {
                          const Matrix& xv = t.value(ix);
                          const Matrix& wv = t.value(iw);
                          const bool gx = t.requires_grad(ix);
                          const bool gw = t.requires_grad(iw);
                          const bool gb = has_bias && t.requires_grad(ib);
                          Matrix dx = gx ? Matrix::Zero(xv.rows(), xv.cols()) : Matrix();
                          Matrix dw = gw ? Matrix::Zero(wv.rows(), wv.cols()) : Matrix();
                          Matrix db = gb ? Matrix::Zero(1, cout) : Matrix();
                          for (Index s = 0; s < xv.rows(); ++s) {
                            Eigen::Map<const Matrix> gs(g.row(s).data(), cout, ho * wo);
                            Matrix gy = gs.transpose();  // (ho*wo) x cout
                            if (gw) {
                              Matrix cols = im2col(xv.row(s).data(), in, kernel, stride, padding, ho, wo);
                              dw.noalias() += cols.transpose() * gy;
                            }
                            if (gb) db += gy.colwise().sum();
                            if (gx) {
                              Matrix dcols = gy * wv.transpose();
                              col2im(dcols, dx.row(s).data(), in, kernel, stride, padding, ho, wo);
                            }
                          }
                          if (gx) t.accumulate(ix, dx);
                          if (gw) t.accumulate(iw, dw);
                          if (gb) t.accumulate(ib, db);
                        });
}

Var upsample2x(const Var& x, const ImageShape& in) {
  check_image(x, in, "upsample2x");
  const Index n = x.rows();
  const Index H = in.height, W = in.width, C = in.channels;
  Matrix out(n, C * 4 * H * W);
  const Matrix& xv = x.value();
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < 2 * H; ++h)
        for (Index w = 0; w < 2 * W; ++w)
          out(s, (c * 2 * H + h) * 2 * W + w) = xv(s, (c * H + h / 2) * W + w / 2);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), x.requires_grad(), [ix, H, W, C](Tape& t, const Matrix& g) {
    Matrix dx = Matrix::Zero(g.rows(), C * H * W);
    for (Index s = 0; s < g.rows(); ++s)
      for (Index c = 0; c < C; ++c)
        for (Index h = 0; h < 2 * H; ++h)
          for (Index w = 0; w < 2 * W; ++w) dx(s, (c * H + h / 2) * W + w / 2) += g(s, (c * 2 * H + h) * 2 * W + w);
    t.accumulate(ix, dx);
  });
}

Var avg_pool2x(const Var& x, const ImageShape& in) {
  check_image(x, in, "avg_pool2x");
  if (in.height % 2 != 0 || in.width % 2 != 0) throw std::invalid_argument("avg_pool2x: odd spatial size");
  const Index n = x.rows();
  const Index H = in.height / 2, W = in.width / 2, C = in.channels, Wi = in.width;
  Matrix out = Matrix::Zero(n, C * H * W);
  const Matrix& xv = x.value();
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < 2 * H; ++h)
        for (Index w = 0; w < 2 * W; ++w)
          out(s, (c * H + h / 2) * W + w / 2) += 0.25 * xv(s, (c * 2 * H + h) * Wi + w);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), x.requires_grad(), [ix, H, W, C, Wi](Tape& t, const Matrix& g) {
    Matrix dx(g.rows(), C * 4 * H * W);
    for (Index s = 0; s < g.rows(); ++s)
      for (Index c = 0; c < C; ++c)
        for (Index h = 0; h < 2 * H; ++h)
          for (Index w = 0; w < 2 * W; ++w) dx(s, (c * 2 * H + h) * Wi + w) = 0.25 * g(s, (c * H + h / 2) * W + w / 2);
    t.accumulate(ix, dx);
  });
}

Var global_avg_pool(const Var& x, const ImageShape& in) {
  check_image(x, in, "global_avg_pool");
  const Index n = x.rows(), C = in.channels, P = in.plane();
  Matrix out(n, C);
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < C; ++c) out(s, c) = x.value().row(s).segment(c * P, P).mean();
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), x.requires_grad(), [ix, C, P](Tape& t, const Matrix& g) {
    Matrix dx(g.rows(), C * P);
    for (Index s = 0; s < g.rows(); ++s)
      for (Index c = 0; c < C; ++c) dx.row(s).segment(c * P, P).setConstant(g(s, c) / static_cast<Scalar>(P));
    t.accumulate(ix, dx);
  });
}

Var broadcast_planes(const Var& v, Index height, Index width) {
  const Index n = v.rows(), C = v.cols(), P = height * width;
  Matrix out(n, C * P);
  for (Index s = 0; s < n; ++s)
    for (Index c = 0; c < C; ++c) out.row(s).segment(c * P, P).setConstant(v.value()(s, c));
  const std::size_t iv = v.id;
  return v.tape->record(std::move(out), v.requires_grad(), [iv, C, P](Tape& t, const Matrix& g) {
    Matrix dv(g.rows(), C);
    for (Index s = 0; s < g.rows(); ++s)
      for (Index c = 0; c < C; ++c) dv(s, c) = g.row(s).segment(c * P, P).sum();
    t.accumulate(iv, dv);
  });
}

Var batch_norm(const Var& x, const ImageShape& shape, const Var& gamma, const Var& beta, BatchNormState& state,
               NormMode mode) {
  check_image(x, shape, "batch_norm");
  const Index n = x.rows(), C = shape.channels, P = shape.plane();
  if (gamma.cols() != C || beta.cols() != C) throw std::invalid_argument("batch_norm: affine shape mismatch");
  if (state.running_mean.size() != C) {
    state.running_mean = RowVector::Zero(C);
    state.running_var = RowVector::Ones(C);
  }
  const Matrix& xv = x.value();
  const Scalar count = static_cast<Scalar>(n * P);

  RowVector mu(C), var(C);
  const bool batch_stats = mode != NormMode::Eval;
  if (batch_stats) {
    if (n * P < 2) throw std::invalid_argument("batch_norm: batch statistics need at least two values");
    for (Index c = 0; c < C; ++c) {
      Scalar s = 0.0, s2 = 0.0;
      for (Index i = 0; i < n; ++i) {
        auto seg = xv.row(i).segment(c * P, P);
        s += seg.sum();
      }
      mu(c) = s / count;
      for (Index i = 0; i < n; ++i) s2 += (xv.row(i).segment(c * P, P).array() - mu(c)).square().sum();
      var(c) = s2 / count;
    }
    if (mode == NormMode::Train) {
      const Scalar m = state.momentum;
      state.running_mean = (1.0 - m) * state.running_mean + m * mu;
      state.running_var = (1.0 - m) * state.running_var + m * var * (count / (count - 1.0));
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }
  RowVector inv_std = (var.array() + state.eps).rsqrt();

  Matrix xhat(n, C * P);
  Matrix out(n, C * P);
  const RowVector& gv = gamma.value().row(0);
  const RowVector& bv = beta.value().row(0);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < C; ++c) {
      xhat.row(i).segment(c * P, P) = (xv.row(i).segment(c * P, P).array() - mu(c)) * inv_std(c);
      out.row(i).segment(c * P, P) = xhat.row(i).segment(c * P, P).array() * gv(c) + bv(c);
    }
  }

  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  const bool need = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return x.tape->record(
      std::move(out), need,
      [ix, ig, ib, C, P, count, batch_stats, xhat = std::move(xhat), inv_std](Tape& t, const Matrix& g) {
        const Index n = g.rows();
        const RowVector gv = t.value(ig).row(0);
        RowVector dgamma = RowVector::Zero(C), dbeta = RowVector::Zero(C);
        for (Index i = 0; i < n; ++i)
          for (Index c = 0; c < C; ++c) {
            dgamma(c) += g.row(i).segment(c * P, P).cwiseProduct(xhat.row(i).segment(c * P, P)).sum();
            dbeta(c) += g.row(i).segment(c * P, P).sum();
          }
        if (t.requires_grad(ix)) {
          Matrix dx(n, C * P);
          for (Index c = 0; c < C; ++c) {
            const Scalar k = gv(c) * inv_std(c);
            if (batch_stats) {
              // dx = k/M * (M*g - sum(g) - xhat * sum(g*xhat))
              const Scalar sg = dbeta(c), sgx = dgamma(c);
              for (Index i = 0; i < n; ++i)
                dx.row(i).segment(c * P, P) =
                    (k / count) * (count * g.row(i).segment(c * P, P).array() - sg -
                                   xhat.row(i).segment(c * P, P).array() * sgx);
            } else {
              for (Index i = 0; i < n; ++i) dx.row(i).segment(c * P, P) = k * g.row(i).segment(c * P, P);
            }
          }
          t.accumulate(ix, dx);
        }
        if (t.requires_grad(ig)) t.accumulate(ig, dgamma);
        if (t.requires_grad(ib)) t.accumulate(ib, dbeta);
      });
}

Var spectral_weight(const Var& w, const Vector& u, const Vector& v) {
  const Matrix& wv = w.value();
  if (u.size() != wv.rows() || v.size() != wv.cols()) throw std::invalid_argument("spectral_weight: vector sizes");
  const Scalar sigma = u.dot(wv * v);
  const std::size_t iw = w.id;
  if (!(std::abs(sigma) > 1e-12)) {
    return w.tape->record(wv, w.requires_grad(), [iw](Tape& t, const Matrix& g) { t.accumulate(iw, g); });
  }
  Matrix uv = u * v.transpose();
  return w.tape->record(wv / sigma, w.requires_grad(), [iw, sigma, uv = std::move(uv)](Tape& t, const Matrix& g) {
    const Scalar inner = g.cwiseProduct(t.value(iw)).sum();
    Matrix dw = g / sigma - (inner / (sigma * sigma)) * uv;
    t.accumulate(iw, dw);
  });
}

}  // namespace puat::ad
