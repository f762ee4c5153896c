#pragma once

#include <cstddef>
#include <vector>

#include "prunecnn/tensor.hpp"

namespace prunecnn {

// All convolution is valid (no padding) cross-correlation with stride 1,
// computed in double precision.

/// input B x C x H x W, kernels M x C x k x k, bias M
/// -> B x M x (H-k+1) x (W-k+1)
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels,
                      const Tensor& bias);

struct Conv2dGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& kernels);

/// Output spatial extent of max-pooling with ceiling rounding; windows may
/// overhang the bottom/right edge and are truncated to valid pixels.
std::size_t pool_out_extent(std::size_t in, std::size_t k, std::size_t stride);

struct PoolResult {
  Tensor output;
  // Winning flat input index (within B x C x H x W) per output cell; ties go
  // to the first (lowest) index.
  std::vector<std::size_t> argmax;
  std::vector<std::size_t> input_shape;
};

PoolResult maxpool_forward(const Tensor& input, std::size_t k,
                           std::size_t stride);

Tensor maxpool_backward(const Tensor& grad_out, const PoolResult& cache);

/// input B x D, weights U x D, bias U -> B x U
Tensor affine_forward(const Tensor& input, const Tensor& weights,
                      const Tensor& bias);

struct AffineGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

AffineGrads affine_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& weights);

struct XentResult {
  double loss = 0.0;           // mean over the batch
  Tensor grad_logits;          // (softmax - onehot) / B
  Tensor probs;                // row-wise softmax
};

/// Softmax rows (max-subtracted for stability).
Tensor softmax(const Tensor& logits);

/// logits B x 2, labels in {0, 1}.
XentResult softmax_xent(const Tensor& logits, const std::vector<int>& labels);

}  // namespace prunecnn
