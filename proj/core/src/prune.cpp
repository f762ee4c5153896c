#include "prunecnn/prune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace prunecnn {

PruneStrategy parse_strategy(const std::string& name) {
  if (name == "loss-greedy") return PruneStrategy::LossGreedy;
  if (name == "sparsity") return PruneStrategy::Sparsity;
  if (name == "random") return PruneStrategy::Random;
  throw InputError("unknown prune strategy: " + name);
}

const char* strategy_name(PruneStrategy s) {
  switch (s) {
    case PruneStrategy::LossGreedy: return "loss-greedy";
    case PruneStrategy::Sparsity: return "sparsity";
    default: return "random";
  }
}

void PrunePlan::validate(const NetworkConfig& config) const {
  for (int l = 0; l < 4; ++l) {
    if (keep[l] < 1) {
      throw InputError(std::string("plan must keep >= 1 map in ") +
                       layer_name((Layer)l));
    }
    if (keep[l] > config.map_counts[l]) {
      throw InputError(std::string("plan keeps ") + std::to_string(keep[l]) +
                       " maps in " + layer_name((Layer)l) + " but only " +
                       std::to_string(config.map_counts[l]) + " exist");
    }
  }
  if (batch_count < 1 || batch_size < 1) {
    throw InputError("loss estimator needs batch_count >= 1, batch_size >= 1");
  }
}

std::vector<Batch> sample_loss_batches(const PatchDataset& train_set,
                                       std::size_t batch_count,
                                       std::size_t batch_size,
                                       std::uint64_t seed) {
  if (train_set.labels.empty()) throw InputError("empty training set");
  std::mt19937_64 rng(seed ^ 0xC0FFEE5EED5ull);
  std::uniform_int_distribution<std::size_t> pick(0,
                                                  train_set.labels.size() - 1);
  std::vector<Batch> batches;
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t b = 0; b < batch_count; ++b) {
    for (auto& i : idx) i = pick(rng);
    Batch batch;
    const std::size_t n = train_set.patches.dim(2);
    batch.patches = Tensor({batch_size, 1, n, n});
    batch.labels.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const double* src = train_set.patches.data() + idx[i] * n * n;
      std::copy(src, src + n * n, batch.patches.data() + i * n * n);
      batch.labels.push_back(train_set.labels[idx[i]]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

/// Loss evaluator for one layer's candidate masks. The fast path caches the
/// layer's pre-mask stage output once and re-applies candidate masks there;
/// results are bit-identical to a full forward pass with the same mask.
class LayerLossEvaluator {
 public:
  LayerLossEvaluator(const Network& net, Layer layer,
                     const std::vector<Batch>& batches, const PrunePlan& plan)
      : net_(net), layer_(layer), batches_(batches), plan_(plan) {
    if (batches.empty()) throw InputError("loss estimation needs >= 1 batch");
    if (plan.fast_path) {
      for (const Batch& b : batches_) {
        premask_.push_back(stage_output_premask(net_, layer_, b.patches));
      }
    }
  }

  double loss(const std::vector<std::uint8_t>& keep) const {
    double total = 0.0;
    if (plan_.fast_path) {
      for (std::size_t i = 0; i < batches_.size(); ++i) {
        Tensor acts = premask_[i];
        if (layer_ == Layer::fc4) {
          zero_masked_units(acts, keep);
        } else {
          zero_masked_channels(acts, keep);
        }
        total += loss_from_stage(net_, layer_, acts, batches_[i].labels);
      }
    } else {
      const MaskOverride ov{layer_, &keep};
      for (const Batch& b : batches_) {
        total += softmax_xent(forward_logits(net_, b.patches, &ov), b.labels)
                     .loss;
      }
    }
    double result = total / (double)batches_.size();
    if (plan_.include_l2) {
      const MaskOverride ov{layer_, &keep};
      result += plan_.lambda * l2_param_norm(net_, &ov);
    }
    return result;
  }

 private:
  const Network& net_;
  Layer layer_;
  const std::vector<Batch>& batches_;
  const PrunePlan& plan_;
  std::vector<Tensor> premask_;
};

/// Records losses along a fixed discard order (sparsity/random baselines).
PruneOrdering record_losses(const Network& net, Layer layer,
                            std::vector<std::size_t> order,
                            const std::vector<Batch>& batches,
                            const PrunePlan& plan) {
  LayerLossEvaluator eval(net, layer, batches, plan);
  PruneOrdering ord;
  ord.layer = layer;
  ord.batch_seed = plan.seed;
  std::vector<std::uint8_t> keep = net.mask(layer);
  for (std::size_t f : order) {
    keep[f] = 0;
    ord.feature.push_back(f);
    ord.cumulative_loss.push_back(eval.loss(keep));
  }
  return ord;
}

}  // namespace

PruneOrdering order_layer(const Network& net, Layer layer,
                          const std::vector<Batch>& batches,
                          const PrunePlan& plan) {
  const std::size_t n = net.map_count(layer);
  if (net.kept_count(layer) == 0) {
    throw InputError(std::string("layer ") + layer_name(layer) +
                     " is already fully masked");
  }
  LayerLossEvaluator eval(net, layer, batches, plan);

  PruneOrdering ord;
  ord.layer = layer;
  ord.batch_seed = plan.seed;
  std::vector<std::uint8_t> keep = net.mask(layer);

  // features masked before the call are trivially first in discard order
  const double base_loss = eval.loss(keep);
  for (std::size_t f = 0; f < n; ++f) {
    if (!keep[f]) {
      ord.feature.push_back(f);
      ord.cumulative_loss.push_back(base_loss);
    }
  }

  while (ord.feature.size() < n) {
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t best_f = n;
    for (std::size_t f = 0; f < n; ++f) {  // ascending: ties -> lowest index
      if (!keep[f]) continue;
      keep[f] = 0;
      const double l = eval.loss(keep);
      keep[f] = 1;
      if (l < best_loss) {
        best_loss = l;
        best_f = f;
      }
    }
    keep[best_f] = 0;
    ord.feature.push_back(best_f);
    ord.cumulative_loss.push_back(best_loss);
  }
  return ord;
}

PruneOrdering sparsity_order_layer(const Network& net, Layer layer,
                                   const std::vector<Batch>& batches,
                                   const PrunePlan& plan) {
  const std::size_t n = net.map_count(layer);
  if (net.kept_count(layer) == 0) {
    throw InputError(std::string("layer ") + layer_name(layer) +
                     " is already fully masked");
  }
  std::vector<double> l1(n, 0.0);
  if (layer == Layer::fc4) {
    const std::size_t d = net.fc4_weights.dim(1);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t j = 0; j < d; ++j) {
        l1[u] += std::abs(net.fc4_weights.at2(u, j));
      }
      l1[u] += std::abs(net.fc4_bias[u]);
    }
  } else {
    const int li = (int)layer;
    const std::size_t per_map = net.conv_kernels[li].size() / n;
    for (std::size_t m = 0; m < n; ++m) {
      const double* p = net.conv_kernels[li].data() + m * per_map;
      for (std::size_t i = 0; i < per_map; ++i) l1[m] += std::abs(p[i]);
      l1[m] += std::abs(net.conv_bias[li][m]);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return l1[a] < l1[b]; });
  return record_losses(net, layer, std::move(order), batches, plan);
}

PruneOrdering random_order_layer(const Network& net, Layer layer,
                                 std::uint64_t seed,
                                 const std::vector<Batch>& batches,
                                 const PrunePlan& plan) {
  const std::size_t n = net.map_count(layer);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x0DDBA11u);
  std::shuffle(order.begin(), order.end(), rng);
  return record_losses(net, layer, std::move(order), batches, plan);
}

std::vector<PruneOrdering> order_network(const Network& net,
                                         const PrunePlan& plan,
                                         const std::vector<Batch>& batches) {
  plan.validate(net.config);
  Network work = net;  // bottom-up masking happens on a private copy
  std::vector<PruneOrdering> orderings;
  for (Layer layer : kPrunableLayers) {
    PruneOrdering ord;
    switch (plan.strategy) {
      case PruneStrategy::LossGreedy:
        ord = order_layer(work, layer, batches, plan);
        break;
      case PruneStrategy::Sparsity:
        ord = sparsity_order_layer(work, layer, batches, plan);
        break;
      case PruneStrategy::Random:
        ord = random_order_layer(work, layer, plan.seed + (std::uint64_t)layer,
                                 batches, plan);
        break;
    }
    const std::size_t discard =
        work.map_count(layer) - plan.keep[(int)layer];
    if (discard > 0) {
      std::vector<std::uint8_t> keep(work.map_count(layer), 1);
      for (std::size_t i = 0; i < discard; ++i) keep[ord.feature[i]] = 0;
      set_mask(work, layer, std::move(keep));
    }
    orderings.push_back(std::move(ord));
  }
  return orderings;
}

Network apply_plan(const Network& net,
                   const std::vector<PruneOrdering>& orderings,
                   const PrunePlan& plan) {
  plan.validate(net.config);
  Network work = net;
  for (const PruneOrdering& ord : orderings) {
    const int li = (int)ord.layer;
    const std::size_t n = work.map_count(ord.layer);
    if (ord.feature.size() != n) {
      throw InputError(std::string("ordering for ") + layer_name(ord.layer) +
                       " does not cover the layer");
    }
    const std::size_t discard = n - plan.keep[li];
    std::vector<std::uint8_t> keep(n, 1);
    for (std::size_t i = 0; i < discard; ++i) keep[ord.feature[i]] = 0;
    set_mask(work, ord.layer, std::move(keep));
  }
  return shrink(work);
}

void write_ordering_csv(const std::string& path, const PruneOrdering& ord) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << "step,feature_index,cumulative_loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < ord.feature.size(); ++i) {
    out << i + 1 << "," << ord.feature[i] << "," << ord.cumulative_loss[i]
        << "\n";
  }
}

PruneOrdering read_ordering_csv(const std::string& path, Layer layer) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open ordering: " + path);
  PruneOrdering ord;
  ord.layer = layer;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t step, f;
    double loss;
    char c1, c2;
    if (!(ss >> step >> c1 >> f >> c2 >> loss) || c1 != ',' || c2 != ',') {
      throw FormatError("bad ordering line in " + path + ": " + line);
    }
    ord.feature.push_back(f);
    ord.cumulative_loss.push_back(loss);
  }
  return ord;
}

}  // namespace prunecnn
