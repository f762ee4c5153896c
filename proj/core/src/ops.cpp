#include "prunecnn/ops.hpp"

#include <algorithm>
#include <cblas.h>
#include <cmath>
#include <limits>

namespace prunecnn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// im2col for valid cross-correlation, stride 1. Produces a (C*k*k) x (OH*OW)
// column matrix for one sample.
void im2col(const double* in, std::size_t C, std::size_t H, std::size_t W,
            std::size_t k, double* cols) {
  const std::size_t oh = H - k + 1;
  const std::size_t ow = W - k + 1;
  double* dst = cols;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx) {
        const double* src = in + c * H * W + dy * W + dx;
        for (std::size_t y = 0; y < oh; ++y) {
          const double* row = src + y * W;
          for (std::size_t x = 0; x < ow; ++x) *dst++ = row[x];
        }
      }
    }
  }
}

void col2im_accumulate(const double* cols, std::size_t C, std::size_t H,
                       std::size_t W, std::size_t k, double* in) {
  const std::size_t oh = H - k + 1;
  const std::size_t ow = W - k + 1;
  const double* src = cols;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx) {
        double* dst = in + c * H * W + dy * W + dx;
        for (std::size_t y = 0; y < oh; ++y) {
          double* row = dst + y * W;
          for (std::size_t x = 0; x < ow; ++x) row[x] += *src++;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels,
                      const Tensor& bias) {
  require(input.rank() == 4, "conv2d input must be BxCxHxW, got " +
                                 input.shape_str());
  require(kernels.rank() == 4, "conv2d kernels must be MxCxkxk, got " +
                                   kernels.shape_str());
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t M = kernels.dim(0), k = kernels.dim(2);
  require(kernels.dim(1) == C,
          "conv2d channel mismatch: input " + input.shape_str() +
              " vs kernels " + kernels.shape_str());
  require(kernels.dim(3) == k, "conv2d kernels must be square");
  require(k <= H && k <= W, "conv2d kernel " + std::to_string(k) +
                                " exceeds input " + input.shape_str());
  require(bias.rank() == 1 && bias.dim(0) == M,
          "conv2d bias must have one entry per output map");
  input.check_finite("conv2d input");

  const std::size_t oh = H - k + 1, ow = W - k + 1;
  Tensor out({B, M, oh, ow});
  std::vector<double> cols(C * k * k * oh * ow);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(input.data() + b * C * H * W, C, H, W, k, cols.data());
    double* ob = out.data() + b * M * oh * ow;
    for (std::size_t m = 0; m < M; ++m) {
      std::fill(ob + m * oh * ow, ob + (m + 1) * oh * ow, bias[m]);
    }
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)M,
                (int)(oh * ow), (int)(C * k * k), 1.0, kernels.data(),
                (int)(C * k * k), cols.data(), (int)(oh * ow), 1.0, ob,
                (int)(oh * ow));
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernels) {
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t M = kernels.dim(0), k = kernels.dim(2);
  const std::size_t oh = H - k + 1, ow = W - k + 1;
  require(grad_out.rank() == 4 && grad_out.dim(0) == B &&
              grad_out.dim(1) == M && grad_out.dim(2) == oh &&
              grad_out.dim(3) == ow,
          "conv2d_backward grad_out shape " + grad_out.shape_str() +
              " inconsistent with forward call");

  Conv2dGrads g{Tensor(input.shape()), Tensor(kernels.shape()),
                Tensor({M})};
  std::vector<double> cols(C * k * k * oh * ow);
  std::vector<double> grad_cols(C * k * k * oh * ow);
  for (std::size_t b = 0; b < B; ++b) {
    const double* gb = grad_out.data() + b * M * oh * ow;
    // bias gradient
    for (std::size_t m = 0; m < M; ++m) {
      double s = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) s += gb[m * oh * ow + i];
      g.bias[m] += s;
    }
    // kernel gradient: gradK += gb (M x OHW) * cols^T
    im2col(input.data() + b * C * H * W, C, H, W, k, cols.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)M,
                (int)(C * k * k), (int)(oh * ow), 1.0, gb, (int)(oh * ow),
                cols.data(), (int)(oh * ow), 1.0, g.kernels.data(),
                (int)(C * k * k));
    // input gradient: gradCols = K^T (Ckk x M) * gb, then col2im
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)(C * k * k),
                (int)(oh * ow), (int)M, 1.0, kernels.data(),
                (int)(C * k * k), gb, (int)(oh * ow), 0.0, grad_cols.data(),
                (int)(oh * ow));
    col2im_accumulate(grad_cols.data(), C, H, W, k,
                      g.input.data() + b * C * H * W);
  }
  return g;
}

std::size_t pool_out_extent(std::size_t in, std::size_t k,
                            std::size_t stride) {
  if (in <= k) return 1;
  return (in - k + stride - 1) / stride + 1;
}

PoolResult maxpool_forward(const Tensor& input, std::size_t k,
                           std::size_t stride) {
  require(input.rank() == 4, "maxpool input must be BxCxHxW, got " +
                                 input.shape_str());
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t oh = pool_out_extent(H, k, stride);
  const std::size_t ow = pool_out_extent(W, k, stride);

  PoolResult res;
  res.output = Tensor({B, C, oh, ow});
  res.argmax.resize(res.output.size());
  res.input_shape = input.shape();
  std::size_t out_i = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* plane = input.data() + (b * C + c) * H * W;
      const std::size_t plane_off = (b * C + c) * H * W;
      for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t y0 = y * stride;
        const std::size_t y1 = std::min(y0 + k, H);
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t x0 = x * stride;
          const std::size_t x1 = std::min(x0 + k, W);
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_i = 0;
          for (std::size_t yy = y0; yy < y1; ++yy) {
            for (std::size_t xx = x0; xx < x1; ++xx) {
              const double v = plane[yy * W + xx];
              if (v > best) {
                best = v;
                best_i = plane_off + yy * W + xx;
              }
            }
          }
          res.output[out_i] = best;
          res.argmax[out_i] = best_i;
          ++out_i;
        }
      }
    }
  }
  return res;
}

Tensor maxpool_backward(const Tensor& grad_out, const PoolResult& cache) {
  require(grad_out.same_shape(cache.output),
          "maxpool_backward grad_out shape " + grad_out.shape_str() +
              " does not match forward output " + cache.output.shape_str());
  Tensor grad_in(cache.input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    grad_in[cache.argmax[i]] += grad_out[i];
  }
  return grad_in;
}

Tensor affine_forward(const Tensor& input, const Tensor& weights,
                      const Tensor& bias) {
  require(input.rank() == 2 && weights.rank() == 2,
          "affine operands must be rank 2");
  const std::size_t B = input.dim(0), D = input.dim(1), U = weights.dim(0);
  require(weights.dim(1) == D, "affine inner extent mismatch: input " +
                                   input.shape_str() + " vs weights " +
                                   weights.shape_str());
  require(bias.rank() == 1 && bias.dim(0) == U,
          "affine bias must have one entry per output unit");
  input.check_finite("affine input");

  Tensor out({B, U});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t u = 0; u < U; ++u) out.at2(b, u) = bias[u];
  }
  // out += input (B x D) * weights^T (D x U)
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)B, (int)U, (int)D,
              1.0, input.data(), (int)D, weights.data(), (int)D, 1.0,
              out.data(), (int)U);
  return out;
}

AffineGrads affine_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& weights) {
  const std::size_t B = input.dim(0), D = input.dim(1), U = weights.dim(0);
  require(grad_out.rank() == 2 && grad_out.dim(0) == B && grad_out.dim(1) == U,
          "affine_backward grad_out shape " + grad_out.shape_str() +
              " inconsistent with forward call");
  AffineGrads g{Tensor({B, D}), Tensor({U, D}), Tensor({U})};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t u = 0; u < U; ++u) g.bias[u] += grad_out.at2(b, u);
  }
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)U, (int)D, (int)B,
              1.0, grad_out.data(), (int)U, input.data(), (int)D, 0.0,
              g.weights.data(), (int)D);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)B, (int)D,
              (int)U, 1.0, grad_out.data(), (int)U, weights.data(), (int)D,
              0.0, g.input.data(), (int)D);
  return g;
}

Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 2, "softmax expects B x K logits");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  Tensor probs({B, K});
  for (std::size_t b = 0; b < B; ++b) {
    double mx = logits.at2(b, 0);
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, logits.at2(b, j));
    double z = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      probs.at2(b, j) = std::exp(logits.at2(b, j) - mx);
      z += probs.at2(b, j);
    }
    for (std::size_t j = 0; j < K; ++j) probs.at2(b, j) /= z;
  }
  return probs;
}

XentResult softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) {
    throw InputError("label count " + std::to_string(labels.size()) +
                     " does not match batch size " + std::to_string(B));
  }
  for (int l : labels) {
    if (l < 0 || (std::size_t)l >= K) {
      throw InputError("label " + std::to_string(l) + " out of range [0," +
                       std::to_string(K - 1) + "]");
    }
  }
  XentResult res;
  res.probs = softmax(logits);
  res.grad_logits = res.probs;
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t y = (std::size_t)labels[b];
    // log-sum-exp form avoids log(0) when the true class saturates to 0
    double mx = logits.at2(b, 0);
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, logits.at2(b, j));
    double z = 0.0;
    for (std::size_t j = 0; j < K; ++j) z += std::exp(logits.at2(b, j) - mx);
    loss += std::log(z) - (logits.at2(b, y) - mx);
    for (std::size_t j = 0; j < K; ++j) {
      res.grad_logits.at2(b, j) =
          (res.probs.at2(b, j) - (j == y ? 1.0 : 0.0)) / (double)B;
    }
  }
  res.loss = loss / (double)B;
  return res;
}

}  // namespace prunecnn
