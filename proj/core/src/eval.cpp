#include "prunecnn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace prunecnn {

double accuracy(const Network& net, const PatchDataset& val_set) {
  const std::size_t total = val_set.labels.size();
  if (total == 0) throw InputError("validation set is empty");
  const std::size_t n = val_set.patches.dim(2);
  const std::size_t chunk = 256;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < total; start += chunk) {
    const std::size_t count = std::min(chunk, total - start);
    Tensor batch({count, 1, n, n});
    std::copy(val_set.patches.data() + start * n * n,
              val_set.patches.data() + (start + count) * n * n, batch.data());
    const Tensor probs = forward_probs(net, batch);
    for (std::size_t i = 0; i < count; ++i) {
      const int pred = probs.at2(i, 1) > probs.at2(i, 0) ? 1 : 0;
      if (pred == val_set.labels[start + i]) ++correct;
    }
  }
  return (double)correct / (double)total;
}

Image probability_map(const Network& net, const Image& img,
                      std::size_t stride) {
  if (img.width < 1 || img.height < 1) {
    throw InputError("degenerate image extents");
  }
  if (stride < 1) throw InputError("stride must be >= 1");
  const std::size_t n = net.config.patch_size;
  const long ctr = (long)(n / 2);

  Image map;
  map.width = img.width;
  map.height = img.height;
  map.pixels.assign(img.width * img.height, 0.0);

  // one batched row of sliding windows at a time
  for (std::size_t y = 0; y < img.height; y += stride) {
    std::vector<std::size_t> xs;
    for (std::size_t x = 0; x < img.width; x += stride) xs.push_back(x);
    Tensor batch({xs.size(), 1, n, n});
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double* dst = batch.data() + i * n * n;
      for (long dy = 0; dy < (long)n; ++dy) {
        for (long dx = 0; dx < (long)n; ++dx) {
          dst[dy * (long)n + dx] =
              img.mirrored((long)y - ctr + dy, (long)xs[i] - ctr + dx);
        }
      }
    }
    const Tensor probs = forward_probs(net, batch);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      map.at(y, xs[i]) = probs.at2(i, 1);
    }
  }
  if (stride > 1) {  // fill gaps with the nearest evaluated value
    for (std::size_t y = 0; y < img.height; ++y) {
      const std::size_t sy = std::min((y / stride) * stride, img.height - 1);
      for (std::size_t x = 0; x < img.width; ++x) {
        const std::size_t sx = std::min((x / stride) * stride, img.width - 1);
        map.at(y, x) = map.at(sy, sx);
      }
    }
  }
  return map;
}

std::vector<std::uint8_t> threshold_map(const Image& map, double t) {
  if (t < 0.0 || t > 1.0) throw InputError("threshold must lie in [0, 1]");
  std::vector<std::uint8_t> seg(map.pixels.size());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    seg[i] = map.pixels[i] >= t ? 1 : 0;
  }
  return seg;
}

TimingResult time_segmentation(const Network& net, const Image& img,
                               std::size_t repetitions) {
  if (repetitions < 3) throw InputError("timing needs >= 3 repetitions");
  probability_map(net, img);  // warm-up, discarded
  std::vector<double> times;
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    probability_map(net, img);
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  TimingResult res;
  res.seconds = times[times.size() / 2];
  res.patches_per_second =
      (double)(img.width * img.height) / res.seconds;
  return res;
}

std::size_t estimate_memory(const Network& net, std::size_t batch_size) {
  if (batch_size < 1) throw InputError("batch size must be >= 1");
  const auto geo = net.config.geometry();
  const auto& mc = net.config.map_counts;
  const std::size_t n = net.config.patch_size;

  // activation element counts per pipeline stage, batch size 1
  std::vector<std::size_t> acts;
  acts.push_back(n * n);
  for (int i = 0; i < 3; ++i) {
    acts.push_back(mc[i] * geo.conv_out[i] * geo.conv_out[i]);
    acts.push_back(mc[i] * geo.pool_out[i] * geo.pool_out[i]);
  }
  acts.push_back(mc[3]);
  acts.push_back(NetworkConfig::kClasses);

  // peak = largest adjacent input+output pair held concurrently
  std::size_t peak = 0;
  for (std::size_t i = 0; i + 1 < acts.size(); ++i) {
    peak = std::max(peak, acts[i] + acts[i + 1]);
  }
  const std::size_t params = count_params(net).first;
  return 4 * (params + batch_size * peak);
}

double pixel_f1(const std::vector<std::uint8_t>& pred,
                const std::vector<std::uint8_t>& truth) {
  if (pred.size() != truth.size()) {
    throw InputError("prediction/truth extents differ");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i]) ++tp;
    else if (pred[i]) ++fp;
    else if (truth[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * (double)tp / (double)(2 * tp + fp + fn);
}

double best_threshold(const Image& map, const std::vector<std::uint8_t>& truth,
                      std::size_t steps) {
  double best_t = 0.0, best_f1 = -1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = (double)i / (double)(steps - 1);
    const double f1 = pixel_f1(threshold_map(map, t), truth);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

void write_report_csv(const std::string& path,
                      const std::vector<EvalReport>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << "name,accuracy,time_seconds,delta_p_percent,memory_bytes\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.name << "," << r.accuracy << "," << r.time_seconds << ","
        << 100.0 * r.delta_p << "," << r.memory_bytes << "\n";
  }
}

}  // namespace prunecnn
