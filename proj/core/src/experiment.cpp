#include "prunecnn/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "prunecnn/checkpoint.hpp"

namespace prunecnn {

namespace fs = std::filesystem;

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

namespace {

struct KeyValues {
  std::map<std::string, std::string> kv;  // "section.key" -> value

  std::string take(const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::string v = it->second;
    kv.erase(it);
    return v;
  }
  bool has(const std::string& key) const { return kv.count(key) > 0; }
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

KeyValues parse_keyvalues(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || section.empty()) {
      throw FormatError("config line " + std::to_string(lineno) +
                        ": expected 'key = value' inside a [section]");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!out.kv.emplace(section + "." + key, val).second) {
      throw FormatError("duplicate config key: " + section + "." + key);
    }
  }
  return out;
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw FormatError("config key " + key + ": not a number: " + v);
  }
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos;
    const std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw FormatError("config key " + key + ": not a count: " + v);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw FormatError("config key " + key + ": not a boolean: " + v);
}

std::array<std::size_t, 4> to_counts(const std::string& v,
                                     const std::string& key) {
  std::istringstream ss(v);
  std::array<std::size_t, 4> counts{};
  for (int i = 0; i < 4; ++i) {
    if (!(ss >> counts[i])) {
      throw FormatError("config key " + key + ": expected 4 counts: " + v);
    }
  }
  std::string rest;
  if (ss >> rest) {
    throw FormatError("config key " + key + ": expected 4 counts: " + v);
  }
  return counts;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_string(const std::string& text) {
  KeyValues kv = parse_keyvalues(text);
  ExperimentConfig c;
  c.config_hash = fnv1a_hex(text);

  c.name = kv.take("experiment.name", c.name);
  c.output_dir = kv.take("experiment.output_dir", c.output_dir);
  c.seed = to_u64(kv.take("experiment.seed", "0"), "experiment.seed");

  if (kv.has("network.config") && kv.has("network.map_counts")) {
    throw FormatError("give network.config or network.map_counts, not both");
  }
  if (kv.has("network.map_counts")) {
    c.network.map_counts =
        to_counts(kv.take("network.map_counts", ""), "network.map_counts");
  } else {
    c.network = NetworkConfig::named(kv.take("network.config", "N"));
  }
  c.network.patch_size =
      to_u64(kv.take("network.patch_size", "32"), "network.patch_size");
  c.network.validate();

  auto& d = c.data;
  d.manifest = kv.take("data.manifest", d.manifest);
  d.width = to_u64(kv.take("data.width", std::to_string(d.width)),
                   "data.width");
  d.height = to_u64(kv.take("data.height", std::to_string(d.height)),
                    "data.height");
  d.curves = to_u64(kv.take("data.curves", std::to_string(d.curves)),
                    "data.curves");
  d.thickness_min = to_double(kv.take("data.thickness_min", "2"),
                              "data.thickness_min");
  d.thickness_max = to_double(kv.take("data.thickness_max", "6"),
                              "data.thickness_max");
  d.noise_sigma = to_double(kv.take("data.noise_sigma", "0.05"),
                            "data.noise_sigma");
  d.per_class_train =
      to_u64(kv.take("data.per_class_train", std::to_string(d.per_class_train)),
             "data.per_class_train");
  d.per_class_val =
      to_u64(kv.take("data.per_class_val", std::to_string(d.per_class_val)),
             "data.per_class_val");

  c.train.learning_rate =
      to_double(kv.take("train.learning_rate", "0.001"), "train.learning_rate");
  c.train.momentum = to_double(kv.take("train.momentum", "0.9"),
                               "train.momentum");
  c.train.lambda = to_double(kv.take("train.lambda", "0.01"), "train.lambda");
  c.train.batch_size =
      to_u64(kv.take("train.batch_size", "256"), "train.batch_size");
  c.train.iterations =
      to_u64(kv.take("train.iterations", "0"), "train.iterations");
  c.train.log_every = to_u64(kv.take("train.log_every", "25"),
                             "train.log_every");
  c.train.seed = c.seed;
  c.train.validate();

  c.retrain_lr_scale =
      to_double(kv.take("retrain.lr_scale", "0.1"), "retrain.lr_scale");
  c.retrain_budget_scale = to_double(kv.take("retrain.budget_scale", "0.25"),
                                     "retrain.budget_scale");

  c.prune.strategy = parse_strategy(kv.take("prune.strategy", "loss-greedy"));
  if (kv.has("prune.keep")) {
    c.prune.keep = to_counts(kv.take("prune.keep", ""), "prune.keep");
  } else {
    c.prune.keep = c.network.map_counts;
  }
  c.prune.batch_count =
      to_u64(kv.take("prune.batch_count", "8"), "prune.batch_count");
  c.prune.batch_size =
      to_u64(kv.take("prune.batch_size", "256"), "prune.batch_size");
  c.prune.include_l2 = to_bool(kv.take("prune.include_l2", "false"),
                               "prune.include_l2");
  c.prune.fast_path = to_bool(kv.take("prune.fast_path", "true"),
                              "prune.fast_path");
  c.prune.lambda = c.train.lambda;
  c.prune.seed = c.seed;
  c.prune.validate(c.network);

  c.eval_threshold = to_double(kv.take("eval.threshold", "0.5"),
                               "eval.threshold");
  c.timing_repetitions = to_u64(kv.take("eval.timing_repetitions", "3"),
                                "eval.timing_repetitions");

  if (!kv.kv.empty()) {
    throw FormatError("unknown config key: " + kv.kv.begin()->first);
  }
  return c;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

namespace pipeline {

namespace {

std::string out_path(const ExperimentConfig& cfg, const std::string& file) {
  return (fs::path(cfg.output_dir) / file).string();
}

std::string manifest_path(const ExperimentConfig& cfg) {
  return cfg.data.manifest.empty() ? out_path(cfg, "manifest.txt")
                                   : cfg.data.manifest;
}

LabeledImage load_labeled(const ManifestEntry& e) {
  LabeledImage img;
  img.image = load_pgm(e.image_path);
  img.labels = image_to_mask(load_pgm(e.mask_path));
  if (img.labels.size() != img.image.pixels.size()) {
    throw InputError("mask extents do not match image: " + e.mask_path);
  }
  return img;
}

}  // namespace

void run_synth(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const auto& d = cfg.data;

  const LabeledImage train_img =
      synth_membranes(d.width, d.height, d.curves, d.thickness_min,
                      d.thickness_max, d.noise_sigma, cfg.seed);
  // separate image (different seed) keeps validation spatially disjoint
  const LabeledImage val_img =
      synth_membranes(d.width, d.height, d.curves, d.thickness_min,
                      d.thickness_max, d.noise_sigma, cfg.seed + 1);

  save_pgm(train_img.image, out_path(cfg, "train.pgm"));
  save_mask_pgm(train_img.labels, d.width, d.height,
                out_path(cfg, "train_mask.pgm"));
  save_pgm(val_img.image, out_path(cfg, "val.pgm"));
  save_mask_pgm(val_img.labels, d.width, d.height,
                out_path(cfg, "val_mask.pgm"));

  std::vector<ManifestEntry> manifest = {
      {out_path(cfg, "train.pgm"), out_path(cfg, "train_mask.pgm"), "train",
       cfg.seed},
      {out_path(cfg, "val.pgm"), out_path(cfg, "val_mask.pgm"), "val",
       cfg.seed + 1},
  };
  save_manifest(manifest, out_path(cfg, "manifest.txt"));
}

std::pair<PatchDataset, PatchDataset> load_datasets(
    const ExperimentConfig& cfg) {
  const auto entries = load_manifest(manifest_path(cfg));
  PatchDataset train_set, val_set;
  bool have_train = false, have_val = false;
  for (const auto& e : entries) {
    const LabeledImage img = load_labeled(e);
    if (e.split == "train") {
      train_set = extract_patches(img, cfg.network.patch_size,
                                  cfg.data.per_class_train, e.seed, "train");
      have_train = true;
    } else {
      val_set = extract_patches(img, cfg.network.patch_size,
                                cfg.data.per_class_val, e.seed, "val");
      have_val = true;
    }
  }
  if (!have_train || !have_val) {
    throw InputError("manifest needs one train and one val entry: " +
                     manifest_path(cfg));
  }
  return {std::move(train_set), std::move(val_set)};
}

void run_train(const ExperimentConfig& cfg, bool resume) {
  fs::create_directories(cfg.output_dir);
  auto [train_set, val_set] = load_datasets(cfg);

  const std::string ckpt = out_path(cfg, "net.ckpt");
  Network net = resume && fs::exists(ckpt)
                    ? load_checkpoint(ckpt)
                    : build_network(cfg.network, cfg.seed);

  TrainConfig tc = cfg.train;
  if (resume && net.iteration >= tc.iterations) {
    tc.iterations = 0;
  } else if (resume) {
    tc.iterations -= net.iteration;
  }
  const auto history = fit(net, train_set, val_set, tc);
  save_checkpoint(net, ckpt);

  std::vector<HistoryRow> all = history;
  if (resume && fs::exists(out_path(cfg, "history.csv"))) {
    // keep it simple: resumed runs append to the existing history
    std::ofstream out(out_path(cfg, "history.csv"), std::ios::app);
    out.precision(17);
    for (const auto& r : history) {
      out << r.iteration << "," << r.train_loss << "," << r.val_accuracy
          << "," << r.lr << "\n";
    }
  } else {
    write_history_csv(out_path(cfg, "history.csv"), all);
  }
}

void run_prune(const ExperimentConfig& cfg) {
  auto [train_set, val_set] = load_datasets(cfg);
  const Network net = load_checkpoint(out_path(cfg, "net.ckpt"));
  if (net.config != cfg.network) {
    throw InputError("checkpoint architecture does not match the config");
  }

  const std::string tag = strategy_name(cfg.prune.strategy);
  const auto batches = sample_loss_batches(
      train_set, cfg.prune.batch_count, cfg.prune.batch_size, cfg.prune.seed);
  const auto orderings = order_network(net, cfg.prune, batches);
  for (const auto& ord : orderings) {
    write_ordering_csv(out_path(cfg, std::string("ordering_") + tag + "_" +
                                         layer_name(ord.layer) + ".csv"),
                       ord);
  }

  Network pruned = apply_plan(net, orderings, cfg.prune);
  save_checkpoint(pruned, out_path(cfg, std::string("pruned_") + tag +
                                            ".ckpt"));

  TrainConfig rc = cfg.train;
  retrain(pruned, train_set, val_set, rc, cfg.retrain_lr_scale,
          cfg.retrain_budget_scale);
  save_checkpoint(pruned, out_path(cfg, std::string("retrained_") + tag +
                                            ".ckpt"));
}

void run_eval(const ExperimentConfig& cfg, bool with_timing) {
  auto [train_set, val_set] = load_datasets(cfg);
  const auto entries = load_manifest(manifest_path(cfg));
  Image val_img;
  std::vector<std::uint8_t> val_mask;
  for (const auto& e : entries) {
    if (e.split == "val") {
      val_img = load_pgm(e.image_path);
      val_mask = image_to_mask(load_pgm(e.mask_path));
    }
  }

  struct Item {
    std::string name;
    Network net;
  };
  std::vector<Item> items;
  items.push_back({cfg.name, load_checkpoint(out_path(cfg, "net.ckpt"))});
  for (const char* tag : {"loss-greedy", "sparsity", "random"}) {
    const std::string path =
        out_path(cfg, std::string("retrained_") + tag + ".ckpt");
    if (fs::exists(path)) {
      items.push_back({cfg.name + "-" + tag, load_checkpoint(path)});
    }
  }

  const std::size_t ref_params = count_params(items.front().net).first;
  std::vector<EvalReport> rows;
  for (auto& item : items) {
    EvalReport r;
    r.name = item.name;
    r.accuracy = accuracy(item.net, val_set);
    r.delta_p =
        1.0 - (double)count_params(item.net).first / (double)ref_params;
    r.memory_bytes = estimate_memory(item.net, 1);
    if (with_timing) {
      const TimingResult t =
          time_segmentation(item.net, val_img, cfg.timing_repetitions);
      r.time_seconds = t.seconds;
      r.patches_per_second = t.patches_per_second;
    }
    rows.push_back(r);

    const Image map = probability_map(item.net, val_img);
    save_pgm(map, out_path(cfg, "probmap_" + item.name + ".pgm"), 16);
    save_mask_pgm(threshold_map(map, cfg.eval_threshold), map.width,
                  map.height, out_path(cfg, "seg_" + item.name + ".pgm"));
  }
  write_report_csv(out_path(cfg, "table.csv"), rows);
}

void run_report(const ExperimentConfig& cfg) {
  std::ofstream out(out_path(cfg, "report.txt"), std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + cfg.output_dir);
  out << "experiment: " << cfg.name << "\n";
  out << "config_hash: " << cfg.config_hash << "\n";
  out << "seed: " << cfg.seed << "\n";
  out << "network:";
  for (std::size_t m : cfg.network.map_counts) out << " " << m;
  out << "\n";
  out << "memory convention: parameters + peak concurrent activations, "
         "4 bytes per value, batch size 1\n";

  // merge per-layer ordering curves across strategies into plot data
  for (Layer layer : kPrunableLayers) {
    std::vector<std::pair<std::string, PruneOrdering>> curves;
    for (const char* tag : {"loss-greedy", "sparsity", "random"}) {
      const std::string path = out_path(cfg, std::string("ordering_") + tag +
                                                 "_" + layer_name(layer) +
                                                 ".csv");
      if (fs::exists(path)) {
        curves.emplace_back(tag, read_ordering_csv(path, layer));
      }
    }
    if (curves.empty()) continue;
    std::ofstream plot(
        out_path(cfg, std::string("fig3_") + layer_name(layer) + ".csv"),
        std::ios::trunc);
    plot << "step";
    for (const auto& [tag, ord] : curves) plot << "," << tag << "_loss";
    plot << "\n";
    plot.precision(17);
    const std::size_t steps = curves.front().second.feature.size();
    for (std::size_t i = 0; i < steps; ++i) {
      plot << i + 1;
      for (const auto& [tag, ord] : curves) {
        plot << "," << (i < ord.cumulative_loss.size()
                            ? ord.cumulative_loss[i]
                            : 0.0);
      }
      plot << "\n";
    }
    out << "fig3 plot data: fig3_" << layer_name(layer) << ".csv ("
        << curves.size() << " strategies)\n";
  }
}

}  // namespace pipeline

}  // namespace prunecnn
