#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "prunecnn/data.hpp"
#include "prunecnn/net.hpp"

namespace prunecnn {

enum class PruneStrategy { LossGreedy, Sparsity, Random };

PruneStrategy parse_strategy(const std::string& name);
const char* strategy_name(PruneStrategy s);

/// Per-layer keep-counts plus loss-estimation settings.
struct PrunePlan {
  std::array<std::size_t, 4> keep{100, 75, 50, 200};  // c1 c2 c3 fc4
  PruneStrategy strategy = PruneStrategy::LossGreedy;
  std::size_t batch_count = 8;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  bool include_l2 = false;   // add lambda*||W||^2 to the ordering loss
  double lambda = 0.01;      // only used when include_l2 is set
  bool fast_path = true;     // cached-activation evaluation (bit-identical)

  void validate(const NetworkConfig& config) const;
};

/// Discard order of one layer's features with the loss after each discard.
struct PruneOrdering {
  Layer layer = Layer::c1;
  std::vector<std::size_t> feature;       // permutation of the layer's maps
  std::vector<double> cumulative_loss;    // loss with feature[0..i] masked
  std::uint64_t batch_seed = 0;
};

/// Mini-batches drawn from the training set for loss estimation; one fixed
/// sample per ordering so candidate losses are comparable.
std::vector<Batch> sample_loss_batches(const PatchDataset& train_set,
                                       std::size_t batch_count,
                                       std::size_t batch_size,
                                       std::uint64_t seed);

/// Greedy loss-minimizing ordering: repeatedly discards the feature whose
/// masking yields the smallest estimated loss (ties to the lowest index).
/// The network is not modified.
PruneOrdering order_layer(const Network& net, Layer layer,
                          const std::vector<Batch>& batches,
                          const PrunePlan& plan);

/// Ranks features ascending by the L1 norm of their outgoing parameters
/// (kernel slice or weight row, plus bias); losses recorded with the same
/// estimator for curve comparability.
PruneOrdering sparsity_order_layer(const Network& net, Layer layer,
                                   const std::vector<Batch>& batches,
                                   const PrunePlan& plan);

/// Uniform random permutation baseline, seeded; losses recorded.
PruneOrdering random_order_layer(const Network& net, Layer layer,
                                 std::uint64_t seed,
                                 const std::vector<Batch>& batches,
                                 const PrunePlan& plan);

/// Orders layers bottom-up (c1, c2, c3, fc4), applying each layer's mask
/// down to the plan keep-count before ordering the next one, so deeper
/// orderings condition on shallower prunings. The input network is not
/// modified.
std::vector<PruneOrdering> order_network(const Network& net,
                                         const PrunePlan& plan,
                                         const std::vector<Batch>& batches);

/// Masks the first (map_count - keep) features of each ordering and shrinks.
Network apply_plan(const Network& net,
                   const std::vector<PruneOrdering>& orderings,
                   const PrunePlan& plan);

/// CSV columns: step, feature_index, cumulative_loss.
void write_ordering_csv(const std::string& path, const PruneOrdering& ord);
PruneOrdering read_ordering_csv(const std::string& path, Layer layer);

}  // namespace prunecnn
