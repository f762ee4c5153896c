#include "prunecnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "prunecnn/eval.hpp"

namespace prunecnn {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw InputError("learning rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw InputError("momentum must be in [0, 1)");
  }
  if (lambda < 0.0) throw InputError("lambda must be >= 0");
  if (batch_size < 1) throw InputError("batch size must be >= 1");
}

Velocity make_velocity(const Network& net) {
  Velocity v;
  for (int i = 0; i < 3; ++i) {
    v.conv_kernels[i] = Tensor(net.conv_kernels[i].shape());
    v.conv_bias[i] = Tensor(net.conv_bias[i].shape());
  }
  v.fc4_weights = Tensor(net.fc4_weights.shape());
  v.fc4_bias = Tensor(net.fc4_bias.shape());
  v.fc5_weights = Tensor(net.fc5_weights.shape());
  v.fc5_bias = Tensor(net.fc5_bias.shape());
  return v;
}

namespace {

void update_tensor(Tensor& param, Tensor& vel, const Tensor& grad,
                   double lr, double momentum, double lambda,
                   const std::string& where) {
  grad.check_finite("gradient of " + where);
  for (std::size_t i = 0; i < param.size(); ++i) {
    vel[i] = momentum * vel[i] - lr * (grad[i] + 2.0 * lambda * param[i]);
    param[i] += vel[i];
  }
}

void mask_velocity(Velocity& vel, const Network& net) {
  for (int i = 0; i < 3; ++i) {
    const auto& keep = net.masks[i];
    const std::size_t per_map = vel.conv_kernels[i].size() / keep.size();
    for (std::size_t m = 0; m < keep.size(); ++m) {
      if (keep[m]) continue;
      double* p = vel.conv_kernels[i].data() + m * per_map;
      std::fill(p, p + per_map, 0.0);
      vel.conv_bias[i][m] = 0.0;
    }
  }
  const auto& k4 = net.masks[3];
  const std::size_t d = vel.fc4_weights.dim(1);
  for (std::size_t u = 0; u < k4.size(); ++u) {
    if (k4[u]) continue;
    double* p = vel.fc4_weights.data() + u * d;
    std::fill(p, p + d, 0.0);
    vel.fc4_bias[u] = 0.0;
  }
}

}  // namespace

double sgd_step(Network& net, const Batch& batch, const TrainConfig& config,
                double lr, Velocity& vel) {
  if (batch.labels.empty()) throw InputError("empty batch");
  ForwardCache cache;
  const Tensor logits = forward_logits(net, batch.patches, nullptr, &cache);
  const XentResult xent = softmax_xent(logits, batch.labels);
  const ParamGrads g = backward(net, cache, xent.grad_logits);

  const double m = config.momentum, lam = config.lambda;
  for (int i = 0; i < 3; ++i) {
    update_tensor(net.conv_kernels[i], vel.conv_kernels[i], g.conv_kernels[i],
                  lr, m, lam, "c" + std::to_string(i + 1));
    update_tensor(net.conv_bias[i], vel.conv_bias[i], g.conv_bias[i], lr, m,
                  lam, "c" + std::to_string(i + 1) + " bias");
  }
  update_tensor(net.fc4_weights, vel.fc4_weights, g.fc4_weights, lr, m, lam,
                "fc4");
  update_tensor(net.fc4_bias, vel.fc4_bias, g.fc4_bias, lr, m, lam,
                "fc4 bias");
  update_tensor(net.fc5_weights, vel.fc5_weights, g.fc5_weights, lr, m, lam,
                "fc5");
  update_tensor(net.fc5_bias, vel.fc5_bias, g.fc5_bias, lr, m, lam,
                "fc5 bias");
  enforce_masks(net);
  mask_velocity(vel, net);
  return xent.loss;
}

Batch gather_batch(const PatchDataset& ds,
                   const std::vector<std::size_t>& idx) {
  const std::size_t n = ds.patches.dim(2);
  Batch b;
  b.patches = Tensor({idx.size(), 1, n, n});
  b.labels.reserve(idx.size());
  const std::size_t patch_elems = n * n;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = ds.patches.data() + idx[i] * patch_elems;
    std::copy(src, src + patch_elems, b.patches.data() + i * patch_elems);
    b.labels.push_back(ds.labels[idx[i]]);
  }
  return b;
}

namespace {

std::vector<HistoryRow> run_sgd(Network& net, const PatchDataset& train_set,
                                const PatchDataset& val_set,
                                const TrainConfig& config) {
  config.validate();
  if (train_set.labels.empty() || val_set.labels.empty()) {
    throw InputError("training and validation sets must be nonempty");
  }
  std::vector<HistoryRow> history;
  if (config.iterations == 0) return history;

  std::mt19937_64 rng(config.seed ^ 0xA5A5A5A5DEADBEEFull);
  std::vector<std::size_t> order(train_set.labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  Velocity vel = make_velocity(net);
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < config.iterations; ++t) {
    idx.clear();
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);  // next epoch
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const double lr =
        config.learning_rate * (1.0 - (double)t / (double)config.iterations);
    double loss;
    try {
      loss = sgd_step(net, gather_batch(train_set, idx), config, lr, vel);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " +
                         std::to_string(net.iteration + 1));
    }
    ++net.iteration;
    if ((t + 1) % config.log_every == 0 || t + 1 == config.iterations) {
      history.push_back(
          {net.iteration, loss, accuracy(net, val_set), lr});
    }
  }
  return history;
}

}  // namespace

std::vector<HistoryRow> fit(Network& net, const PatchDataset& train_set,
                            const PatchDataset& val_set,
                            const TrainConfig& config) {
  return run_sgd(net, train_set, val_set, config);
}

std::vector<HistoryRow> retrain(Network& net, const PatchDataset& train_set,
                                const PatchDataset& val_set,
                                TrainConfig config, double lr_scale,
                                double budget_scale) {
  if (lr_scale < 0.0 || budget_scale < 0.0) {
    throw InputError("retrain scales must be >= 0");
  }
  if (lr_scale == 0.0) return {};  // lr 0 would leave parameters unchanged
  config.learning_rate *= lr_scale;
  config.iterations =
      (std::size_t)std::llround((double)config.iterations * budget_scale);
  return run_sgd(net, train_set, val_set, config);
}

void write_history_csv(const std::string& path,
                       const std::vector<HistoryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << "iteration,train_loss,val_accuracy,lr\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.iteration << "," << r.train_loss << "," << r.val_accuracy << ","
        << r.lr << "\n";
  }
}

}  // namespace prunecnn
