#pragma once

#include <string>
#include <vector>

#include "prunecnn/data.hpp"
#include "prunecnn/net.hpp"

namespace prunecnn {

/// One table row: accuracy, segmentation time, pruned-parameter fraction and
/// estimated memory for a named network.
struct EvalReport {
  std::string name;
  double accuracy = 0.0;       // fraction correct on validation patches
  double time_seconds = 0.0;   // median probability_map wall clock
  double patches_per_second = 0.0;
  double delta_p = 0.0;        // fraction of parameters pruned vs reference
  std::size_t memory_bytes = 0;
};

/// Argmax-class agreement rate; exact 0.5/0.5 ties count as class 0.
double accuracy(const Network& net, const PatchDataset& val_set);

/// Per-pixel membrane probability via sliding-window patch classification.
/// Borders are mirror-padded; the map has the image's extents. With
/// stride > 1 only every stride-th pixel is evaluated and the gaps take the
/// nearest evaluated value.
Image probability_map(const Network& net, const Image& img,
                      std::size_t stride = 1);

/// pixel = 1 iff map >= t.
std::vector<std::uint8_t> threshold_map(const Image& map, double t);

struct TimingResult {
  double seconds = 0.0;           // median over repetitions
  double patches_per_second = 0.0;
};

/// Median wall-clock of probability_map over `repetitions` runs after one
/// discarded warm-up pass.
TimingResult time_segmentation(const Network& net, const Image& img,
                               std::size_t repetitions);

/// Documented estimate: parameters plus peak concurrent activations at
/// 4 bytes per value.
std::size_t estimate_memory(const Network& net, std::size_t batch_size = 1);

/// Pixel F1 of thresholded map against a reference mask.
double pixel_f1(const std::vector<std::uint8_t>& pred,
                const std::vector<std::uint8_t>& truth);

/// Sweeps thresholds on a grid and returns the F1-maximizing one.
double best_threshold(const Image& map, const std::vector<std::uint8_t>& truth,
                      std::size_t steps = 101);

void write_report_csv(const std::string& path,
                      const std::vector<EvalReport>& rows);

}  // namespace prunecnn
