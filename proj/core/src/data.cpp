#include "prunecnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace prunecnn {

namespace {

long mirror_index(long i, long size) {
  // symmetric reflection: ... 1 0 | 0 1 ... size-1 | size-1 size-2 ...
  if (size == 1) return 0;
  const long period = 2 * size;
  i %= period;
  if (i < 0) i += period;
  return i < size ? i : period - 1 - i;
}

}  // namespace

double Image::mirrored(long y, long x) const {
  return pixels[(std::size_t)mirror_index(y, (long)height) * width +
                (std::size_t)mirror_index(x, (long)width)];
}

PatchDataset extract_patches(const LabeledImage& img, std::size_t n,
                             std::size_t per_class, std::uint64_t seed,
                             const std::string& split) {
  if (per_class < 1) throw InputError("per_class must be >= 1");
  const std::size_t W = img.image.width, H = img.image.height;
  if (img.labels.size() != W * H) {
    throw InputError("label mask extents do not match image");
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < W * H; ++i) {
    (img.labels[i] ? pos : neg).push_back(i);
  }
  if (pos.size() < per_class) {
    throw InputError("only " + std::to_string(pos.size()) +
                     " membrane pixels available, need " +
                     std::to_string(per_class));
  }
  if (neg.size() < per_class) {
    throw InputError("only " + std::to_string(neg.size()) +
                     " non-membrane pixels available, need " +
                     std::to_string(per_class));
  }

  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  pos.resize(per_class);
  neg.resize(per_class);

  const long ctr = (long)(n / 2);
  PatchDataset ds;
  ds.split = split;
  ds.patches = Tensor({2 * per_class, 1, n, n});
  ds.labels.reserve(2 * per_class);
  std::size_t out = 0;
  auto emit = [&](const std::vector<std::size_t>& centers, int label) {
    for (std::size_t idx : centers) {
      const long cy = (long)(idx / W), cx = (long)(idx % W);
      double* dst = ds.patches.data() + out * n * n;
      for (long dy = 0; dy < (long)n; ++dy) {
        for (long dx = 0; dx < (long)n; ++dx) {
          dst[dy * (long)n + dx] =
              img.image.mirrored(cy - ctr + dy, cx - ctr + dx);
        }
      }
      ds.labels.push_back(label);
      ++out;
    }
  };
  emit(pos, 1);
  emit(neg, 0);
  return ds;
}

LabeledImage synth_membranes(std::size_t width, std::size_t height,
                             std::size_t curve_count, double thickness_min,
                             double thickness_max, double noise_sigma,
                             std::uint64_t seed) {
  if (width < 1 || height < 1) throw InputError("image extents must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  LabeledImage out;
  out.image.width = width;
  out.image.height = height;
  out.image.pixels.assign(width * height, 0.0);
  out.labels.assign(width * height, 0);

  // bright background with smooth low-frequency texture
  const std::size_t cell = 16;
  const std::size_t gw = width / cell + 2, gh = height / cell + 2;
  std::vector<double> grid(gw * gh);
  for (double& g : grid) g = 0.78 + 0.08 * (2.0 * unit(rng) - 1.0);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = (double)y / cell;
    const std::size_t y0 = (std::size_t)fy;
    const double ty = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = (double)x / cell;
      const std::size_t x0 = (std::size_t)fx;
      const double tx = fx - x0;
      const double v =
          (1 - ty) * ((1 - tx) * grid[y0 * gw + x0] +
                      tx * grid[y0 * gw + x0 + 1]) +
          ty * ((1 - tx) * grid[(y0 + 1) * gw + x0] +
                tx * grid[(y0 + 1) * gw + x0 + 1]);
      out.image.at(y, x) = v;
    }
  }

  // dark curvilinear strokes: random-walk centerlines with slowly turning
  // heading, stamped as disks of the curve's thickness
  auto stamp = [&](double cy, double cx, double radius, double shade) {
    const long r = (long)std::ceil(radius);
    for (long dy = -r; dy <= r; ++dy) {
      for (long dx = -r; dx <= r; ++dx) {
        const long y = (long)std::llround(cy) + dy;
        const long x = (long)std::llround(cx) + dx;
        if (y < 0 || x < 0 || y >= (long)height || x >= (long)width) continue;
        const double d = std::hypot((double)y - cy, (double)x - cx);
        if (d > radius) continue;
        out.image.at((std::size_t)y, (std::size_t)x) = shade;
        out.labels[(std::size_t)y * width + (std::size_t)x] = 1;
      }
    }
  };

  for (std::size_t c = 0; c < curve_count; ++c) {
    double y = unit(rng) * (double)height;
    double x = unit(rng) * (double)width;
    double heading = unit(rng) * 2.0 * M_PI;
    const double thickness =
        thickness_min + unit(rng) * (thickness_max - thickness_min);
    const double shade = 0.12 + 0.12 * unit(rng);
    const double span = (double)std::max(width, height);
    const std::size_t steps = (std::size_t)(span * (0.5 + unit(rng)));
    for (std::size_t s = 0; s < steps; ++s) {
      stamp(y, x, thickness / 2.0, shade);
      heading += 0.12 * gauss(rng);
      y += std::sin(heading);
      x += std::cos(heading);
      if (y < -thickness || x < -thickness || y > height + thickness ||
          x > width + thickness) {
        break;
      }
    }
  }

  if (noise_sigma > 0.0) {
    for (double& p : out.image.pixels) p += noise_sigma * gauss(rng);
  }
  for (double& p : out.image.pixels) p = std::clamp(p, 0.0, 1.0);
  return out;
}

namespace {

int read_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  while (in) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v;
  if (!(in >> v)) throw FormatError("malformed PGM header");
  return v;
}

}  // namespace

Image load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image: " + path);
  char p, five;
  in.get(p);
  in.get(five);
  if (p != 'P' || five != '5') {
    throw FormatError("unsupported image format (expected binary PGM P5): " +
                      path);
  }
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) {
    throw FormatError("bad PGM header in " + path);
  }
  in.get();  // single whitespace byte before raster

  Image img;
  img.width = (std::size_t)w;
  img.height = (std::size_t)h;
  img.pixels.resize(img.width * img.height);
  const bool wide = maxval > 255;
  std::vector<unsigned char> raw(img.pixels.size() * (wide ? 2 : 1));
  in.read((char*)raw.data(), (std::streamsize)raw.size());
  if ((std::size_t)in.gcount() != raw.size()) {
    throw FormatError("truncated PGM raster in " + path);
  }
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const unsigned v = wide ? ((unsigned)raw[2 * i] << 8) | raw[2 * i + 1]
                            : raw[i];
    img.pixels[i] = (double)v / (double)maxval;
  }
  return img;
}

void save_pgm(const Image& img, const std::string& path, int bits) {
  if (bits != 8 && bits != 16) throw InputError("PGM depth must be 8 or 16");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path);
  const unsigned maxval = bits == 8 ? 255u : 65535u;
  out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
  for (double p : img.pixels) {
    const unsigned v =
        (unsigned)std::llround(std::clamp(p, 0.0, 1.0) * (double)maxval);
    if (bits == 16) out.put((char)(v >> 8));
    out.put((char)(v & 0xFF));
  }
  if (!out) throw InputError("write failed: " + path);
}

void save_mask_pgm(const std::vector<std::uint8_t>& mask, std::size_t width,
                   std::size_t height, const std::string& path) {
  Image img;
  img.width = width;
  img.height = height;
  img.pixels.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    img.pixels[i] = mask[i] ? 1.0 : 0.0;
  }
  save_pgm(img, path, 8);
}

std::vector<std::uint8_t> image_to_mask(const Image& img) {
  std::vector<std::uint8_t> mask(img.pixels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = img.pixels[i] >= 0.5 ? 1 : 0;
  }
  return mask;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.image_path >> e.mask_path >> e.split >> e.seed)) {
      throw FormatError("bad manifest line: " + line);
    }
    if (e.split != "train" && e.split != "val") {
      throw FormatError("manifest split must be train or val: " + line);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open for writing: " + path);
  out << "# image mask split seed\n";
  for (const auto& e : entries) {
    out << e.image_path << " " << e.mask_path << " " << e.split << " "
        << e.seed << "\n";
  }
}

}  // namespace prunecnn
