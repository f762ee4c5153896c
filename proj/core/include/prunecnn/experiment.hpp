#pragma once

#include <string>

#include "prunecnn/data.hpp"
#include "prunecnn/eval.hpp"
#include "prunecnn/net.hpp"
#include "prunecnn/prune.hpp"
#include "prunecnn/train.hpp"

namespace prunecnn {

/// One experiment = one declarative config file. Sections mirror the module
/// configs; unknown keys are rejected.
struct ExperimentConfig {
  // [experiment]
  std::string name = "experiment";
  std::string output_dir = "out";
  std::uint64_t seed = 0;

  // [network]
  NetworkConfig network;

  // [data] — synthetic generator parameters, or a manifest of labeled images
  struct DataConfig {
    std::string manifest;  // when set, images come from this manifest
    std::size_t width = 512;
    std::size_t height = 512;
    std::size_t curves = 40;
    double thickness_min = 2.0;
    double thickness_max = 6.0;
    double noise_sigma = 0.05;
    std::size_t per_class_train = 4000;
    std::size_t per_class_val = 1000;
  } data;

  // [train]
  TrainConfig train;

  // [retrain]
  double retrain_lr_scale = 0.1;
  double retrain_budget_scale = 0.25;

  // [prune]
  PrunePlan prune;

  // [eval]
  double eval_threshold = 0.5;
  std::size_t timing_repetitions = 3;

  std::string config_hash;  // FNV-1a of the raw config bytes, hex

  static ExperimentConfig parse_file(const std::string& path);
  static ExperimentConfig parse_string(const std::string& text);
};

std::string fnv1a_hex(const std::string& bytes);

namespace pipeline {

/// Generates synthetic train/val images + masks and writes the manifest.
void run_synth(const ExperimentConfig& cfg);

/// Trains (or resumes) the configured network; writes net.ckpt, history.csv.
void run_train(const ExperimentConfig& cfg, bool resume = false);

/// Computes orderings, prunes, retrains; writes ordering_<strategy>_<layer>.csv,
/// pruned_<strategy>.ckpt, retrained_<strategy>.ckpt.
void run_prune(const ExperimentConfig& cfg);

/// Evaluates the original and all retrained checkpoints; writes table.csv and
/// probability/segmentation maps.
void run_eval(const ExperimentConfig& cfg, bool with_timing = true);

/// Merged report with config hash plus per-layer ordering plot data.
void run_report(const ExperimentConfig& cfg);

/// Loads train/val patch datasets per the config (synth outputs or manifest).
std::pair<PatchDataset, PatchDataset> load_datasets(const ExperimentConfig& cfg);

}  // namespace pipeline

}  // namespace prunecnn
