#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "prunecnn/ops.hpp"
#include "prunecnn/tensor.hpp"

namespace prunecnn {

/// Prunable layers. fc5 is fixed at 2 outputs and never pruned.
enum class Layer : int { c1 = 0, c2 = 1, c3 = 2, fc4 = 3 };

constexpr std::array<Layer, 4> kPrunableLayers = {Layer::c1, Layer::c2,
                                                  Layer::c3, Layer::fc4};

inline const char* layer_name(Layer l) {
  switch (l) {
    case Layer::c1: return "c1";
    case Layer::c2: return "c2";
    case Layer::c3: return "c3";
    default: return "fc4";
  }
}

/// Output-map counts per prunable layer plus fixed pipeline geometry:
/// conv kernels 7/5/3 (stride 1, no padding), 3x3 stride-2 max-pooling after
/// each conv, two fully connected layers, 2 output classes.
struct NetworkConfig {
  std::array<std::size_t, 4> map_counts{100, 75, 50, 200};  // c1 c2 c3 fc4
  std::size_t patch_size = 32;

  static constexpr std::array<std::size_t, 3> kKernel = {7, 5, 3};
  static constexpr std::size_t kPoolK = 3;
  static constexpr std::size_t kPoolStride = 2;
  static constexpr std::size_t kClasses = 2;

  struct Geometry {
    std::array<std::size_t, 3> conv_out;  // spatial extent after each conv
    std::array<std::size_t, 3> pool_out;  // spatial extent after each pool
    std::size_t flatten_per_map;          // pool_out[2]^2
    std::size_t flatten_units;            // c3 maps * flatten_per_map
  };

  void validate() const;
  Geometry geometry() const;

  /// Preset configurations: the reference structure N and pruned
  /// variants N1..N7.
  static NetworkConfig named(std::string_view name);

  bool operator==(const NetworkConfig&) const = default;
};

/// One mini-batch of patches with class labels.
struct Batch {
  Tensor patches;           // B x 1 x n x n
  std::vector<int> labels;  // 0 = non-membrane, 1 = membrane
};

/// The 8-layer pipeline c1,p1,c2,p2,c3,p3,fc4,fc5 with per-layer keep masks.
struct Network {
  NetworkConfig config;
  std::array<Tensor, 3> conv_kernels;  // M x C x k x k
  std::array<Tensor, 3> conv_bias;     // M
  Tensor fc4_weights, fc4_bias;
  Tensor fc5_weights, fc5_bias;
  // keep flag per output map; length == current map count of the layer
  std::array<std::vector<std::uint8_t>, 4> masks;

  std::uint64_t init_seed = 0;
  std::uint64_t iteration = 0;

  const std::vector<std::uint8_t>& mask(Layer l) const {
    return masks[(int)l];
  }
  std::size_t map_count(Layer l) const { return config.map_counts[(int)l]; }
  std::size_t kept_count(Layer l) const;
  bool all_masks_true() const;
};

/// Parameters drawn from N(0, 1/fan_in) per layer, biases zero,
/// deterministic for a given seed.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

/// Temporary keep-mask substitution for one layer during forward evaluation.
struct MaskOverride {
  Layer layer;
  const std::vector<std::uint8_t>* keep;
};

struct ForwardCache {
  Tensor input;
  std::array<Tensor, 3> conv_out;  // post-mask
  std::array<PoolResult, 3> pool;
  Tensor flat;
  Tensor fc4_out;  // post-mask
  Tensor logits;
};

Tensor forward_logits(const Network& net, const Tensor& patches,
                      const MaskOverride* ov = nullptr,
                      ForwardCache* cache = nullptr);

/// B x 2 class probabilities; rows sum to 1.
Tensor forward_probs(const Network& net, const Tensor& patches,
                     const MaskOverride* ov = nullptr);

/// Zero out dropped maps' planes (B x C x h x w) or units (B x U).
void zero_masked_channels(Tensor& act, const std::vector<std::uint8_t>& keep);
void zero_masked_units(Tensor& act, const std::vector<std::uint8_t>& keep);

/// Gradients with the same layout as the network's parameter tensors.
struct ParamGrads {
  std::array<Tensor, 3> conv_kernels;
  std::array<Tensor, 3> conv_bias;
  Tensor fc4_weights, fc4_bias;
  Tensor fc5_weights, fc5_bias;
};

/// Backpropagates grad_logits through the cached forward pass. Gradients of
/// masked-out maps are zero.
ParamGrads backward(const Network& net, const ForwardCache& cache,
                    const Tensor& grad_logits);

/// Mean entropy loss (data term of the training objective) over the batches.
double mean_data_loss(const Network& net, const std::vector<Batch>& batches,
                      const MaskOverride* ov = nullptr);

/// Sum of squares over all parameters, masked maps counted as zero.
double l2_param_norm(const Network& net, const MaskOverride* ov = nullptr);

/// Stores the mask and zeroes the dropped maps' kernels/weights and biases.
void set_mask(Network& net, Layer layer, std::vector<std::uint8_t> keep);

/// Re-zeroes parameters of masked-out maps (after an SGD update).
void enforce_masks(Network& net);

/// Physically removes masked-out maps, including the matching input slices of
/// the next layer (c3 maps remove their spatial block of fc4 columns).
/// The result has all-true masks and is forward-equivalent to `net`.
Network shrink(const Network& net);

/// Pruning fast path: output of `layer`'s pipeline stage with the layer's own
/// mask NOT applied (post-pool for conv layers, raw affine output for fc4).
/// Upstream masks are applied as in a normal forward pass.
Tensor stage_output_premask(const Network& net, Layer layer,
                            const Tensor& patches);

/// Runs the pipeline from `layer`'s (already masked) stage output to the mean
/// entropy loss. Bit-identical to the full forward path with the same mask.
double loss_from_stage(const Network& net, Layer layer, const Tensor& acts,
                       const std::vector<int>& labels);

/// (total, per-layer) physical parameter counts: kernels, affine weights and
/// biases of the current structure.
std::pair<std::size_t, std::array<std::size_t, 5>> count_params(
    const Network& net);

std::size_t count_params_config(const NetworkConfig& config);

}  // namespace prunecnn
