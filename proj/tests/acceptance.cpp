// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 5, 6 and 8 share one desk-scale training run.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "prunecnn/checkpoint.hpp"
#include "prunecnn/data.hpp"
#include "prunecnn/eval.hpp"
#include "prunecnn/net.hpp"
#include "prunecnn/ops.hpp"
#include "prunecnn/prune.hpp"
#include "prunecnn/train.hpp"
#include "test_util.hpp"

using namespace prunecnn;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion,
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double now() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

void criterion1_delta_p() {
  const double t0 = now();
  const struct {
    const char* name;
    double delta_p;  // percent
  } table[] = {{"N1", 12.7}, {"N2", 33.0}, {"N3", 29.3}, {"N4", 16.2},
               {"N5", 13.5}, {"N6", 49.1}, {"N7", 92.2}};

  Network full = build_network(NetworkConfig::named("N"), 1);
  const double ref = (double)count_params(full).first;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& row : table) {
    const auto target = NetworkConfig::named(row.name);
    Network masked = full;
    for (Layer l : kPrunableLayers) {
      std::vector<std::uint8_t> keep(masked.map_count(l), 0);
      for (std::size_t i = 0; i < target.map_counts[(int)l]; ++i) keep[i] = 1;
      set_mask(masked, l, std::move(keep));
    }
    const Network small = shrink(masked);
    const double dp = 100.0 * (1.0 - (double)count_params(small).first / ref);
    const double err = std::abs(dp - row.delta_p);
    if (err > worst) {
      worst = err;
      worst_name = row.name;
    }
  }
  const double elapsed = now() - t0;
  report(1, worst <= 0.5 && elapsed < 1.0,
         fmt("pruned-parameter fractions match the reference column "
             "(worst |error| %.3f pp at %s, limit 0.5) in %.2fs",
             worst, worst_name.c_str(), elapsed));
}

// ---------------------------------------------------------------- criterion 2

double estimated_loss(const Network& net, Layer layer,
                      const std::vector<std::uint8_t>& keep,
                      const std::vector<Batch>& batches) {
  Network copy = net;
  copy.masks[(int)layer] = keep;  // parameters untouched
  double total = 0.0;
  for (const Batch& b : batches) {
    total += softmax_xent(forward_logits(copy, b.patches), b.labels).loss;
  }
  return total / (double)batches.size();
}

void criterion2_greedy_oracle() {
  const double t0 = now();
  const Network net = testutil::tiny_trained_net(80);  // c1 6 maps, reduced
  const auto ds = testutil::synth_dataset(150, 71);
  PrunePlan plan;
  plan.keep = {3, 2, 2, 4};
  plan.batch_count = 2;
  plan.batch_size = 16;
  plan.seed = 5;
  const auto batches =
      sample_loss_batches(ds, plan.batch_count, plan.batch_size, plan.seed);

  bool ok = true;
  for (Layer layer : {Layer::c1, Layer::c2}) {
    const std::size_t n = net.map_count(layer);
    const PruneOrdering ord = order_layer(net, layer, batches, plan);

    std::vector<std::uint8_t> keep(n, 1);
    for (int step = 0; step < 2; ++step) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_f = n;
      for (std::size_t f = 0; f < n; ++f) {
        if (!keep[f]) continue;
        auto cand = keep;
        cand[f] = 0;
        const double l = estimated_loss(net, layer, cand, batches);
        if (l < best) {
          best = l;
          best_f = f;
        }
      }
      if (ord.feature[(std::size_t)step] != best_f) ok = false;
      if (std::abs(ord.cumulative_loss[(std::size_t)step] - best) >
          1e-12 * std::max(1.0, std::abs(best))) {
        ok = false;
      }
      keep[best_f] = 0;
    }
  }
  const double elapsed = now() - t0;
  report(2, ok && elapsed < 60.0,
         fmt("first two greedy selections equal exhaustive argmin on the "
             "tiny network in %.1fs",
             elapsed));
}

// ---------------------------------------------------------------- criterion 3

void criterion3_gradients() {
  const double t0 = now();
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };

  for (std::uint64_t trial = 0; trial < 24; ++trial) {
    std::mt19937_64 rng(5000 + trial);
    std::uniform_int_distribution<std::size_t> d(1, 3);

    {  // convolution: input, kernel and bias gradients
      const std::size_t B = d(rng), C = d(rng), M = d(rng);
      const std::size_t k = 1 + d(rng) % 3;
      const std::size_t H = k + d(rng), W = k + d(rng);
      Tensor in = testutil::random_tensor({B, C, H, W}, rng);
      Tensor kern = testutil::random_tensor({M, C, k, k}, rng);
      Tensor bias = testutil::random_tensor({M}, rng);
      const Tensor w =
          testutil::random_tensor({B, M, H - k + 1, W - k + 1}, rng);
      auto loss = [&] {
        const Tensor out = conv2d_forward(in, kern, bias);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
        return s;
      };
      const auto g = conv2d_backward(w, in, kern);
      track(testutil::max_rel_err(g.input, testutil::finite_diff(in, loss)));
      track(
          testutil::max_rel_err(g.kernels, testutil::finite_diff(kern, loss)));
      track(testutil::max_rel_err(g.bias, testutil::finite_diff(bias, loss)));
    }
    {  // max-pooling input gradient
      Tensor in = testutil::random_tensor({1, d(rng), 5, 5}, rng);
      const auto shape = maxpool_forward(in, 3, 2).output.shape();
      const Tensor w = testutil::random_tensor(shape, rng);
      auto loss = [&] {
        const auto res = maxpool_forward(in, 3, 2);
        double s = 0.0;
        for (std::size_t i = 0; i < res.output.size(); ++i)
          s += w[i] * res.output[i];
        return s;
      };
      const Tensor g = maxpool_backward(w, maxpool_forward(in, 3, 2));
      track(testutil::max_rel_err(g, testutil::finite_diff(in, loss)));
    }
    {  // affine: input, weight and bias gradients
      const std::size_t B = d(rng) + 1, D = d(rng) + 2, U = d(rng) + 1;
      Tensor in = testutil::random_tensor({B, D}, rng);
      Tensor w = testutil::random_tensor({U, D}, rng);
      Tensor b = testutil::random_tensor({U}, rng);
      const Tensor gw = testutil::random_tensor({B, U}, rng);
      auto loss = [&] {
        const Tensor out = affine_forward(in, w, b);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += gw[i] * out[i];
        return s;
      };
      const auto g = affine_backward(gw, in, w);
      track(testutil::max_rel_err(g.input, testutil::finite_diff(in, loss)));
      track(testutil::max_rel_err(g.weights, testutil::finite_diff(w, loss)));
      track(testutil::max_rel_err(g.bias, testutil::finite_diff(b, loss)));
    }
    {  // softmax cross-entropy logits gradient
      Tensor logits = testutil::random_tensor({4, 2}, rng, 2.0);
      const std::vector<int> labels = {0, 1, 1, 0};
      auto loss = [&] { return softmax_xent(logits, labels).loss; };
      const auto res = softmax_xent(logits, labels);
      track(testutil::max_rel_err(res.grad_logits,
                                  testutil::finite_diff(logits, loss)));
    }
  }
  const double elapsed = now() - t0;
  report(3, worst < 1e-4 && elapsed < 60.0,
         fmt("all op gradients match central finite differences over 24 "
             "seeded shape sets (worst rel err %.2e, limit 1e-4) in %.1fs",
             worst, elapsed));
}

// ---------------------------------------------------------------- criterion 4

void criterion4_masked_shrunk() {
  std::mt19937_64 rng(99);
  const Tensor patches = testutil::random_tensor({100, 1, 32, 32}, rng, 0.3);
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Network net = build_network(testutil::tiny_config(), 100 + trial);
    std::mt19937_64 mrng(200 + trial);
    for (Layer l : kPrunableLayers) {
      std::vector<std::uint8_t> keep(net.map_count(l), 0);
      std::size_t kept = 0;
      for (auto& k : keep) kept += (k = (std::uint8_t)(mrng() % 2));
      if (kept == 0) keep[0] = 1;  // layers cannot be emptied
      set_mask(net, l, std::move(keep));
    }
    const Network small = shrink(net);
    const Tensor a = forward_probs(net, patches);
    const Tensor b = forward_probs(small, patches);
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  report(4, worst < 1e-10,
         fmt("masked and shrunk forward outputs agree over 100 patches x 5 "
             "random mask draws (worst |diff| %.2e, limit 1e-10)",
             worst));
}

// ------------------------------------------------------ criteria 5, 6 and 8

struct DeskScale {
  PatchDataset train_set, val_set;
  Network net;            // trained N-shaped network
  double base_acc = 0.0;
  TrainConfig tc;
  std::map<std::string, Network> retrained;  // per plan/strategy
};

Network prune_and_retrain(DeskScale& ctx, const std::array<std::size_t, 4>& keep,
                          PruneStrategy strategy) {
  PrunePlan plan;
  plan.keep = keep;
  plan.strategy = strategy;
  plan.batch_count = 1;
  plan.batch_size = 32;
  plan.seed = 12;
  const auto batches = sample_loss_batches(ctx.train_set, plan.batch_count,
                                           plan.batch_size, plan.seed);
  const auto orderings = order_network(ctx.net, plan, batches);
  Network pruned = apply_plan(ctx.net, orderings, plan);
  retrain(pruned, ctx.train_set, ctx.val_set, ctx.tc, 0.1, 0.5);
  return pruned;
}

void criterion5_desk_scale(DeskScale& ctx) {
  const double t0 = now();
  const auto timg = synth_membranes(320, 320, 30, 2.0, 5.0, 0.04, 100);
  const auto vimg = synth_membranes(320, 320, 30, 2.0, 5.0, 0.04, 101);
  ctx.train_set = extract_patches(timg, 32, 2500, 7);
  ctx.val_set = extract_patches(vimg, 32, 500, 8, "val");

  ctx.net = build_network(NetworkConfig::named("N"), 12);
  ctx.tc.learning_rate = 0.01;
  ctx.tc.batch_size = 128;
  ctx.tc.iterations = 150;
  ctx.tc.seed = 12;
  ctx.tc.log_every = 50;
  fit(ctx.net, ctx.train_set, ctx.val_set, ctx.tc);
  ctx.base_acc = accuracy(ctx.net, ctx.val_set);

  const auto n6 = NetworkConfig::named("N6").map_counts;
  const auto n7 = NetworkConfig::named("N7").map_counts;
  ctx.retrained.emplace(
      "n6-greedy", prune_and_retrain(ctx, n6, PruneStrategy::LossGreedy));
  ctx.retrained.emplace(
      "n7-greedy", prune_and_retrain(ctx, n7, PruneStrategy::LossGreedy));
  const double acc6 = accuracy(ctx.retrained.at("n6-greedy"), ctx.val_set);
  const double acc7 = accuracy(ctx.retrained.at("n7-greedy"), ctx.val_set);
  const double drop6 = 100.0 * (ctx.base_acc - acc6);
  const double drop7 = 100.0 * (ctx.base_acc - acc7);
  const double elapsed = now() - t0;

  report(5,
         ctx.base_acc >= 0.90 && drop6 <= 1.5 && drop7 <= 4.0,
         fmt("full net %.1f%% (need >= 90); ~49%%-pruned plan drop %.2f pp "
             "(limit 1.5); ~92%%-pruned plan drop %.2f pp (limit 4.0); %.0fs",
             100.0 * ctx.base_acc, drop6, drop7, elapsed));
}

void criterion6_speed(const DeskScale& ctx) {
  const auto img = synth_membranes(64, 64, 6, 2.0, 5.0, 0.04, 55).image;
  const Network n7 = shrink(ctx.retrained.at("n7-greedy"));
  const Network n6 = shrink(ctx.retrained.at("n6-greedy"));
  const double t_full = time_segmentation(ctx.net, img, 3).seconds;
  const double t6 = time_segmentation(n6, img, 3).seconds;
  const double t7 = time_segmentation(n7, img, 3).seconds;
  const double speedup = t_full / t7;
  report(6, t_full > t6 && t6 > t7 && speedup >= 2.5,
         fmt("segmentation time falls monotonically %.2fs > %.2fs > %.2fs; "
             "smallest net speedup %.1fx (need >= 2.5x)",
             t_full, t6, t7, speedup));
}

void criterion8_baseline_harness(DeskScale& ctx) {
  // same keep-counts and retrain budget as the n6 greedy run
  const auto n6 = NetworkConfig::named("N6").map_counts;
  ctx.retrained.emplace(
      "n6-sparsity", prune_and_retrain(ctx, n6, PruneStrategy::Sparsity));
  const double acc_prop = accuracy(ctx.retrained.at("n6-greedy"), ctx.val_set);
  const double acc_base =
      accuracy(ctx.retrained.at("n6-sparsity"), ctx.val_set);
  const bool ok = acc_prop > 0.0 && acc_prop <= 1.0 && acc_base > 0.0 &&
                  acc_base <= 1.0;
  report(8, ok,
         fmt("identical-budget comparison columns: loss-greedy %.2f%%, "
             "sparsity %.2f%% (no ordering asserted)",
             100.0 * acc_prop, 100.0 * acc_base));
}

// ---------------------------------------------------------------- criterion 7

void criterion7_ordering_curve() {
  const Network net = testutil::tiny_trained_net(120);
  const auto ds = testutil::synth_dataset(200, 77);
  PrunePlan plan;
  plan.keep = {1, 1, 1, 1};
  plan.batch_count = 2;
  plan.batch_size = 32;
  plan.seed = 3;
  const auto batches =
      sample_loss_batches(ds, plan.batch_count, plan.batch_size, plan.seed);

  std::size_t total = 0, at_or_below = 0;
  for (Layer layer : kPrunableLayers) {
    const PruneOrdering greedy = order_layer(net, layer, batches, plan);
    const std::size_t steps = greedy.feature.size();
    std::vector<double> mean(steps, 0.0);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const PruneOrdering rnd =
          random_order_layer(net, layer, seed, batches, plan);
      for (std::size_t i = 0; i < steps; ++i)
        mean[i] += rnd.cumulative_loss[i] / 10.0;
    }
    for (std::size_t i = 0; i < steps; ++i) {
      ++total;
      if (greedy.cumulative_loss[i] <= mean[i] + 1e-12) ++at_or_below;
    }
  }
  const double frac = (double)at_or_below / (double)total;
  report(7, frac >= 0.9,
         fmt("greedy cumulative-loss curve at or below the 10-seed random "
             "mean in %zu/%zu steps (%.0f%%, need >= 90%%)",
             at_or_below, total, 100.0 * frac));
}

// ---------------------------------------------------------------- criterion 9

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion9_determinism() {
  const fs::path root = fs::temp_directory_path() / "prunecnn_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path out = root / "out";
  const fs::path cfg = root / "exp.cfg";
  {
    std::ofstream f(cfg);
    f << "[experiment]\nname = det\noutput_dir = " << out.string()
      << "\nseed = 12\n"
      << "[network]\nmap_counts = 6 4 4 8\n"
      << "[data]\nwidth = 96\nheight = 96\ncurves = 8\nnoise_sigma = 0.03\n"
      << "per_class_train = 200\nper_class_val = 60\n"
      << "[train]\nlearning_rate = 0.02\nbatch_size = 16\niterations = 60\n"
      << "[prune]\nkeep = 4 3 3 6\nbatch_count = 2\nbatch_size = 16\n";
  }

  auto run_chain = [&]() -> bool {
    for (const char* sub : {"synth", "train", "prune", "eval --no-timing",
                            "report"}) {
      const std::string cmd = std::string(PRUNECNN_CLI_PATH) + " " + sub +
                              " --config " + cfg.string() +
                              " > /dev/null 2>&1";
      const int status = std::system(cmd.c_str());
      if (status == -1 || WEXITSTATUS(status) != 0) return false;
    }
    return true;
  };

  if (!run_chain()) {
    report(9, false, "pipeline chain failed on the first run");
    fs::remove_all(root);
    return;
  }
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(out)) {
    first[e.path().filename().string()] = slurp(e.path());
  }
  bool ok = run_chain();
  std::size_t compared = 0, diffs = 0;
  if (ok) {
    for (const auto& e : fs::directory_iterator(out)) {
      const auto it = first.find(e.path().filename().string());
      if (it == first.end()) {
        ++diffs;
        continue;
      }
      ++compared;
      if (slurp(e.path()) != it->second) ++diffs;
    }
    if (compared != first.size()) ok = false;
  }
  report(9, ok && diffs == 0,
         fmt("pipeline rerun reproduced all %zu output files byte for byte",
             compared));
  fs::remove_all(root);
}

}  // namespace

int main() {
  criterion1_delta_p();
  criterion2_greedy_oracle();
  criterion3_gradients();
  criterion4_masked_shrunk();

  DeskScale ctx;
  criterion5_desk_scale(ctx);
  criterion6_speed(ctx);
  criterion7_ordering_curve();
  criterion8_baseline_harness(ctx);
  criterion9_determinism();

  if (g_failures) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
