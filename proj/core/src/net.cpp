#include "prunecnn/net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace prunecnn {

void zero_masked_channels(Tensor& act, const std::vector<std::uint8_t>& keep) {
  // act is B x C x h x w with C == keep.size()
  const std::size_t B = act.dim(0), C = act.dim(1);
  const std::size_t plane = act.dim(2) * act.dim(3);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      if (keep[c]) continue;
      double* p = act.data() + (b * C + c) * plane;
      std::fill(p, p + plane, 0.0);
    }
  }
}

void zero_masked_units(Tensor& act, const std::vector<std::uint8_t>& keep) {
  const std::size_t B = act.dim(0), U = act.dim(1);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t u = 0; u < U; ++u) {
      if (!keep[u]) act.at2(b, u) = 0.0;
    }
  }
}

namespace {

const std::vector<std::uint8_t>& effective_mask(const Network& net, Layer l,
                                                const MaskOverride* ov) {
  if (ov != nullptr && ov->layer == l) return *ov->keep;
  return net.mask(l);
}

Tensor flatten(const Tensor& pooled) {
  const std::size_t B = pooled.dim(0);
  std::vector<double> data(pooled.data(), pooled.data() + pooled.size());
  return Tensor::from_data({B, pooled.size() / B}, std::move(data));
}

}  // namespace

void NetworkConfig::validate() const {
  for (std::size_t m : map_counts) {
    if (m < 1) throw InputError("all map counts must be >= 1");
  }
  geometry();  // throws if the patch size cannot feed the conv chain
}

NetworkConfig::Geometry NetworkConfig::geometry() const {
  Geometry g{};
  std::size_t s = patch_size;
  for (int i = 0; i < 3; ++i) {
    if (s < kKernel[i]) {
      throw ShapeError("patch size " + std::to_string(patch_size) +
                       " too small for conv" + std::to_string(i + 1) +
                       " kernel " + std::to_string(kKernel[i]));
    }
    s = s - kKernel[i] + 1;
    g.conv_out[i] = s;
    s = pool_out_extent(s, kPoolK, kPoolStride);
    g.pool_out[i] = s;
  }
  g.flatten_per_map = g.pool_out[2] * g.pool_out[2];
  g.flatten_units = map_counts[2] * g.flatten_per_map;
  return g;
}

NetworkConfig NetworkConfig::named(std::string_view name) {
  NetworkConfig c;
  if (name == "N") c.map_counts = {100, 75, 50, 200};
  else if (name == "N1") c.map_counts = {90, 75, 40, 150};
  else if (name == "N2") c.map_counts = {65, 75, 40, 150};
  else if (name == "N3") c.map_counts = {90, 60, 40, 150};
  else if (name == "N4") c.map_counts = {90, 75, 30, 150};
  else if (name == "N5") c.map_counts = {90, 75, 40, 110};
  else if (name == "N6") c.map_counts = {65, 60, 30, 110};
  else if (name == "N7") c.map_counts = {30, 20, 10, 10};
  else throw InputError("unknown network config name: " + std::string(name));
  return c;
}

std::size_t Network::kept_count(Layer l) const {
  const auto& m = mask(l);
  return (std::size_t)std::count(m.begin(), m.end(), (std::uint8_t)1);
}

bool Network::all_masks_true() const {
  for (const auto& m : masks) {
    if (std::find(m.begin(), m.end(), (std::uint8_t)0) != m.end())
      return false;
  }
  return true;
}

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Network net;
  net.config = config;
  net.init_seed = seed;
  const auto geo = config.geometry();

  auto init = [&](Tensor& t, std::size_t fan_in, std::uint64_t stream) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + stream);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt((double)fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  };

  std::size_t in_ch = 1;
  for (int i = 0; i < 3; ++i) {
    const std::size_t m = config.map_counts[i];
    const std::size_t k = NetworkConfig::kKernel[i];
    net.conv_kernels[i] = Tensor({m, in_ch, k, k});
    net.conv_bias[i] = Tensor({m});
    init(net.conv_kernels[i], in_ch * k * k, (std::uint64_t)i + 1);
    in_ch = m;
  }
  net.fc4_weights = Tensor({config.map_counts[3], geo.flatten_units});
  net.fc4_bias = Tensor({config.map_counts[3]});
  init(net.fc4_weights, geo.flatten_units, 4);
  net.fc5_weights = Tensor({NetworkConfig::kClasses, config.map_counts[3]});
  net.fc5_bias = Tensor({NetworkConfig::kClasses});
  init(net.fc5_weights, config.map_counts[3], 5);

  for (int l = 0; l < 4; ++l) {
    net.masks[l].assign(config.map_counts[l], 1);
  }
  return net;
}

Tensor forward_logits(const Network& net, const Tensor& patches,
                      const MaskOverride* ov, ForwardCache* cache) {
  if (patches.rank() != 4 || patches.dim(1) != 1 ||
      patches.dim(2) != net.config.patch_size ||
      patches.dim(3) != net.config.patch_size) {
    throw ShapeError("expected patches Bx1x" +
                     std::to_string(net.config.patch_size) + "x" +
                     std::to_string(net.config.patch_size) + ", got " +
                     patches.shape_str());
  }
  if (cache) cache->input = patches;

  Tensor x = patches;
  for (int i = 0; i < 3; ++i) {
    Tensor y = conv2d_forward(x, net.conv_kernels[i], net.conv_bias[i]);
    zero_masked_channels(y, effective_mask(net, (Layer)i, ov));
    PoolResult p = maxpool_forward(y, NetworkConfig::kPoolK,
                                   NetworkConfig::kPoolStride);
    if (cache) {
      cache->conv_out[i] = std::move(y);
      cache->pool[i] = p;
    }
    x = std::move(p.output);
  }
  Tensor flat = flatten(x);
  Tensor fc4 = affine_forward(flat, net.fc4_weights, net.fc4_bias);
  zero_masked_units(fc4, effective_mask(net, Layer::fc4, ov));
  Tensor logits = affine_forward(fc4, net.fc5_weights, net.fc5_bias);
  if (cache) {
    cache->flat = std::move(flat);
    cache->fc4_out = std::move(fc4);
    cache->logits = logits;
  }
  return logits;
}

Tensor forward_probs(const Network& net, const Tensor& patches,
                     const MaskOverride* ov) {
  return softmax(forward_logits(net, patches, ov));
}

double mean_data_loss(const Network& net, const std::vector<Batch>& batches,
                      const MaskOverride* ov) {
  if (batches.empty()) throw InputError("loss estimation needs >= 1 batch");
  double total = 0.0;
  for (const Batch& b : batches) {
    const Tensor logits = forward_logits(net, b.patches, ov);
    total += softmax_xent(logits, b.labels).loss;
  }
  return total / (double)batches.size();
}

namespace {

double masked_sumsq(const Tensor& t, const std::vector<std::uint8_t>& keep,
                    std::size_t per_map) {
  double s = 0.0;
  for (std::size_t m = 0; m < keep.size(); ++m) {
    if (!keep[m]) continue;
    const double* p = t.data() + m * per_map;
    for (std::size_t i = 0; i < per_map; ++i) s += p[i] * p[i];
  }
  return s;
}

}  // namespace

double l2_param_norm(const Network& net, const MaskOverride* ov) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const auto& keep = effective_mask(net, (Layer)i, ov);
    const std::size_t per_map = net.conv_kernels[i].size() / keep.size();
    s += masked_sumsq(net.conv_kernels[i], keep, per_map);
    s += masked_sumsq(net.conv_bias[i], keep, 1);
  }
  const auto& k4 = effective_mask(net, Layer::fc4, ov);
  s += masked_sumsq(net.fc4_weights, k4, net.fc4_weights.dim(1));
  s += masked_sumsq(net.fc4_bias, k4, 1);
  for (std::size_t i = 0; i < net.fc5_weights.size(); ++i)
    s += net.fc5_weights[i] * net.fc5_weights[i];
  for (std::size_t i = 0; i < net.fc5_bias.size(); ++i)
    s += net.fc5_bias[i] * net.fc5_bias[i];
  return s;
}

void set_mask(Network& net, Layer layer, std::vector<std::uint8_t> keep) {
  const int li = (int)layer;
  if (keep.size() != net.config.map_counts[li]) {
    throw InputError(std::string("mask length for ") + layer_name(layer) +
                     " must equal its map count");
  }
  if (std::find(keep.begin(), keep.end(), 1) == keep.end()) {
    throw InputError(std::string("mask for ") + layer_name(layer) +
                     " must keep at least one map");
  }
  net.masks[li] = std::move(keep);
  enforce_masks(net);
}

void enforce_masks(Network& net) {
  for (int i = 0; i < 3; ++i) {
    const auto& keep = net.masks[i];
    const std::size_t per_map = net.conv_kernels[i].size() / keep.size();
    for (std::size_t m = 0; m < keep.size(); ++m) {
      if (keep[m]) continue;
      double* p = net.conv_kernels[i].data() + m * per_map;
      std::fill(p, p + per_map, 0.0);
      net.conv_bias[i][m] = 0.0;
    }
  }
  const auto& k4 = net.masks[3];
  const std::size_t d = net.fc4_weights.dim(1);
  for (std::size_t u = 0; u < k4.size(); ++u) {
    if (k4[u]) continue;
    double* p = net.fc4_weights.data() + u * d;
    std::fill(p, p + d, 0.0);
    net.fc4_bias[u] = 0.0;
  }
}

Network shrink(const Network& net) {
  std::array<std::vector<std::size_t>, 4> kept;
  for (int l = 0; l < 4; ++l) {
    for (std::size_t m = 0; m < net.masks[l].size(); ++m) {
      if (net.masks[l][m]) kept[l].push_back(m);
    }
    if (kept[l].empty()) {
      throw InputError(std::string("cannot shrink: layer ") +
                       layer_name((Layer)l) + " has zero kept maps");
    }
  }

  NetworkConfig cfg = net.config;
  for (int l = 0; l < 4; ++l) cfg.map_counts[l] = kept[l].size();

  Network out;
  out.config = cfg;
  out.init_seed = net.init_seed;
  out.iteration = net.iteration;

  const auto geo = net.config.geometry();
  std::size_t in_ch = 1;
  std::vector<std::size_t> kept_in = {0};  // input channel indices kept
  for (int i = 0; i < 3; ++i) {
    const std::size_t k = NetworkConfig::kKernel[i];
    const std::size_t M = kept[i].size(), C = kept_in.size();
    out.conv_kernels[i] = Tensor({M, C, k, k});
    out.conv_bias[i] = Tensor({M});
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < k; ++y) {
          for (std::size_t x = 0; x < k; ++x) {
            out.conv_kernels[i].at4(m, c, y, x) =
                net.conv_kernels[i].at4(kept[i][m], kept_in[c], y, x);
          }
        }
      }
    }
    for (std::size_t m = 0; m < M; ++m) {
      out.conv_bias[i][m] = net.conv_bias[i][kept[i][m]];
    }
    kept_in = kept[i];
    in_ch = M;
  }
  (void)in_ch;

  // fc4: keep rows of kept units; keep the column blocks of kept c3 maps.
  const std::size_t per_map = geo.flatten_per_map;
  const std::size_t U = kept[3].size();
  const std::size_t D = kept[2].size() * per_map;
  out.fc4_weights = Tensor({U, D});
  out.fc4_bias = Tensor({U});
  for (std::size_t u = 0; u < U; ++u) {
    for (std::size_t c = 0; c < kept[2].size(); ++c) {
      for (std::size_t j = 0; j < per_map; ++j) {
        out.fc4_weights.at2(u, c * per_map + j) =
            net.fc4_weights.at2(kept[3][u], kept[2][c] * per_map + j);
      }
    }
    out.fc4_bias[u] = net.fc4_bias[kept[3][u]];
  }

  out.fc5_weights = Tensor({NetworkConfig::kClasses, U});
  out.fc5_bias = net.fc5_bias;
  for (std::size_t r = 0; r < NetworkConfig::kClasses; ++r) {
    for (std::size_t u = 0; u < U; ++u) {
      out.fc5_weights.at2(r, u) = net.fc5_weights.at2(r, kept[3][u]);
    }
  }

  for (int l = 0; l < 4; ++l) out.masks[l].assign(kept[l].size(), 1);
  return out;
}

Tensor stage_output_premask(const Network& net, Layer layer,
                            const Tensor& patches) {
  Tensor x = patches;
  const int li = (int)layer;
  for (int i = 0; i < 3; ++i) {
    Tensor y = conv2d_forward(x, net.conv_kernels[i], net.conv_bias[i]);
    if (i != li) zero_masked_channels(y, net.mask((Layer)i));
    x = maxpool_forward(y, NetworkConfig::kPoolK, NetworkConfig::kPoolStride)
            .output;
    if (i == li) return x;
  }
  Tensor fc4 = affine_forward(flatten(x), net.fc4_weights, net.fc4_bias);
  return fc4;  // layer == fc4, pre-mask
}

double loss_from_stage(const Network& net, Layer layer, const Tensor& acts,
                       const std::vector<int>& labels) {
  Tensor x = acts;
  const int li = (int)layer;
  if (layer != Layer::fc4) {
    for (int i = li + 1; i < 3; ++i) {
      Tensor y = conv2d_forward(x, net.conv_kernels[i], net.conv_bias[i]);
      zero_masked_channels(y, net.mask((Layer)i));
      x = maxpool_forward(y, NetworkConfig::kPoolK,
                          NetworkConfig::kPoolStride)
              .output;
    }
    x = affine_forward(flatten(x), net.fc4_weights, net.fc4_bias);
    zero_masked_units(x, net.mask(Layer::fc4));
  }
  const Tensor logits = affine_forward(x, net.fc5_weights, net.fc5_bias);
  return softmax_xent(logits, labels).loss;
}

ParamGrads backward(const Network& net, const ForwardCache& cache,
                    const Tensor& grad_logits) {
  ParamGrads g;
  AffineGrads g5 = affine_backward(grad_logits, cache.fc4_out,
                                   net.fc5_weights);
  g.fc5_weights = std::move(g5.weights);
  g.fc5_bias = std::move(g5.bias);

  Tensor grad_fc4 = std::move(g5.input);
  zero_masked_units(grad_fc4, net.mask(Layer::fc4));
  AffineGrads g4 = affine_backward(grad_fc4, cache.flat, net.fc4_weights);
  g.fc4_weights = std::move(g4.weights);
  g.fc4_bias = std::move(g4.bias);

  // reshape B x flatten_units back to the pool3 output layout
  Tensor grad_pooled = Tensor::from_data(
      cache.pool[2].output.shape(),
      std::vector<double>(g4.input.data(),
                          g4.input.data() + g4.input.size()));
  for (int i = 2; i >= 0; --i) {
    Tensor grad_conv = maxpool_backward(grad_pooled, cache.pool[i]);
    zero_masked_channels(grad_conv, net.mask((Layer)i));
    const Tensor& conv_in = i == 0 ? cache.input : cache.pool[i - 1].output;
    Conv2dGrads gc = conv2d_backward(grad_conv, conv_in, net.conv_kernels[i]);
    g.conv_kernels[i] = std::move(gc.kernels);
    g.conv_bias[i] = std::move(gc.bias);
    grad_pooled = std::move(gc.input);
  }
  return g;
}

std::pair<std::size_t, std::array<std::size_t, 5>> count_params(
    const Network& net) {
  std::array<std::size_t, 5> per{};
  for (int i = 0; i < 3; ++i) {
    per[i] = net.conv_kernels[i].size() + net.conv_bias[i].size();
  }
  per[3] = net.fc4_weights.size() + net.fc4_bias.size();
  per[4] = net.fc5_weights.size() + net.fc5_bias.size();
  const std::size_t total = per[0] + per[1] + per[2] + per[3] + per[4];
  return {total, per};
}

std::size_t count_params_config(const NetworkConfig& config) {
  const auto geo = config.geometry();
  const auto& mc = config.map_counts;
  std::size_t total = 0;
  std::size_t in_ch = 1;
  for (int i = 0; i < 3; ++i) {
    const std::size_t k = NetworkConfig::kKernel[i];
    total += mc[i] * in_ch * k * k + mc[i];
    in_ch = mc[i];
  }
  total += mc[3] * geo.flatten_units + mc[3];
  total += NetworkConfig::kClasses * mc[3] + NetworkConfig::kClasses;
  return total;
}

}  // namespace prunecnn
