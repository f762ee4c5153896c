#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunecnn/data.hpp"
#include "prunecnn/net.hpp"

namespace prunecnn {

/// SGD with momentum, L2 weight penalty and a learning rate that decays
/// linearly to zero over the iteration budget.
struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double lambda = 0.01;  // coefficient of ||W||^2
  std::size_t batch_size = 256;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::size_t log_every = 25;

  void validate() const;
};

struct Velocity {
  std::array<Tensor, 3> conv_kernels;
  std::array<Tensor, 3> conv_bias;
  Tensor fc4_weights, fc4_bias;
  Tensor fc5_weights, fc5_bias;
};

Velocity make_velocity(const Network& net);

/// One update: v <- momentum*v - lr*(grad_data + 2*lambda*W); W <- W + v.
/// Masked-out parameters receive no update and stay zero.
/// Returns the batch data loss before the update.
double sgd_step(Network& net, const Batch& batch, const TrainConfig& config,
                double lr, Velocity& vel);

struct HistoryRow {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

/// Runs config.iterations steps over per-epoch reshuffled batches.
std::vector<HistoryRow> fit(Network& net, const PatchDataset& train_set,
                            const PatchDataset& val_set,
                            const TrainConfig& config);

/// Warm-start retraining after pruning: same loop as fit with the learning
/// rate and iteration budget scaled down.
std::vector<HistoryRow> retrain(Network& net, const PatchDataset& train_set,
                                const PatchDataset& val_set,
                                TrainConfig config, double lr_scale = 0.1,
                                double budget_scale = 0.25);

void write_history_csv(const std::string& path,
                       const std::vector<HistoryRow>& rows);

/// Gathers dataset rows by index into one batch.
Batch gather_batch(const PatchDataset& ds, const std::vector<std::size_t>& idx);

}  // namespace prunecnn
