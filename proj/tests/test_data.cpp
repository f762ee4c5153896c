#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "prunecnn/data.hpp"
#include "test_util.hpp"

using namespace prunecnn;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("mirrored access reflects symmetrically") {
  Image img;
  img.width = 3;
  img.height = 2;
  img.pixels = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  // interior passes through
  CHECK(img.mirrored(1, 2) == 0.5);
  // edge reflection duplicates the border pixel: -1 -> 0, 3 -> 2
  CHECK(img.mirrored(-1, 0) == img.at(0, 0));
  CHECK(img.mirrored(0, -1) == img.at(0, 0));
  CHECK(img.mirrored(0, 3) == img.at(0, 2));
  CHECK(img.mirrored(-2, 0) == img.at(1, 0));
  CHECK(img.mirrored(2, 1) == img.at(1, 1));
  // far periodic wrap stays in range and mirrors back
  CHECK(img.mirrored(0, 7) == img.at(0, 1));
  Image single;
  single.width = 1;
  single.height = 1;
  single.pixels = {0.7};
  CHECK(single.mirrored(-5, 9) == 0.7);
}

TEST_CASE("synth_membranes") {
  const auto a = synth_membranes(96, 80, 6, 2.0, 5.0, 0.04, 21);
  SUBCASE("extents and value range") {
    CHECK(a.image.width == 96);
    CHECK(a.image.height == 80);
    CHECK(a.image.pixels.size() == 96 * 80);
    CHECK(a.labels.size() == 96 * 80);
    for (double p : a.image.pixels) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
  SUBCASE("deterministic per seed") {
    const auto b = synth_membranes(96, 80, 6, 2.0, 5.0, 0.04, 21);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.labels == b.labels);
    const auto c = synth_membranes(96, 80, 6, 2.0, 5.0, 0.04, 22);
    CHECK(a.image.pixels != c.image.pixels);
  }
  SUBCASE("both classes are present in sensible proportion") {
    const std::size_t membrane =
        (std::size_t)std::accumulate(a.labels.begin(), a.labels.end(), 0);
    CHECK(membrane > 0);
    CHECK(membrane < a.labels.size() / 2);
  }
  SUBCASE("strokes are darker than the background") {
    double fg = 0.0, bg = 0.0;
    std::size_t nfg = 0, nbg = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
      if (a.labels[i]) {
        fg += a.image.pixels[i];
        ++nfg;
      } else {
        bg += a.image.pixels[i];
        ++nbg;
      }
    }
    CHECK(fg / (double)nfg < 0.4);
    CHECK(bg / (double)nbg > 0.6);
  }
  SUBCASE("zero curves leaves an empty mask") {
    const auto blank = synth_membranes(48, 48, 0, 2.0, 5.0, 0.0, 5);
    for (auto l : blank.labels) CHECK(l == 0);
  }
  SUBCASE("degenerate extents are rejected") {
    CHECK_THROWS_AS(synth_membranes(0, 10, 1, 2, 4, 0.0, 1), InputError);
  }
}

TEST_CASE("extract_patches") {
  const auto img = synth_membranes(128, 128, 8, 2.0, 5.0, 0.03, 33);
  const auto ds = extract_patches(img, 32, 50, 9, "val");
  SUBCASE("balanced layout: positives first") {
    CHECK(ds.patches.shape() == std::vector<std::size_t>{100, 1, 32, 32});
    CHECK(ds.labels.size() == 100);
    CHECK(ds.split == "val");
    for (std::size_t i = 0; i < 50; ++i) CHECK(ds.labels[i] == 1);
    for (std::size_t i = 50; i < 100; ++i) CHECK(ds.labels[i] == 0);
  }
  SUBCASE("patch centers carry the advertised class") {
    // center pixel of an n=32 window is at offset (16, 16)
    for (std::size_t i = 0; i < 100; ++i) {
      const double center = ds.patches.at4(i, 0, 16, 16);
      bool found = false;
      for (std::size_t p = 0; p < img.labels.size(); ++p) {
        if ((int)img.labels[p] == ds.labels[i] &&
            img.image.pixels[p] == center) {
          found = true;
          break;
        }
      }
      CHECK(found);
    }
  }
  SUBCASE("deterministic per seed") {
    const auto again = extract_patches(img, 32, 50, 9, "val");
    CHECK(ds.labels == again.labels);
    CHECK(testutil::max_rel_err(ds.patches, again.patches) == 0.0);
    const auto other = extract_patches(img, 32, 50, 10, "val");
    CHECK(testutil::max_rel_err(ds.patches, other.patches) > 0.0);
  }
  SUBCASE("border windows use mirror padding") {
    // a tiny image forces every window over the border
    const auto small = synth_membranes(8, 8, 2, 3.0, 4.0, 0.0, 4);
    const auto one = extract_patches(small, 32, 1, 2);
    for (std::size_t i = 0; i < one.patches.size(); ++i) {
      CHECK(one.patches[i] >= 0.0);
      CHECK(one.patches[i] <= 1.0);
    }
  }
  SUBCASE("class deficit is reported") {
    const auto blank = synth_membranes(16, 16, 0, 2.0, 4.0, 0.0, 6);
    CHECK_THROWS_WITH_AS(extract_patches(blank, 32, 5, 1),
                         doctest::Contains("membrane"), InputError);
    CHECK_THROWS_AS(extract_patches(img, 32, 0, 1), InputError);
  }
  SUBCASE("mismatched mask extents are rejected") {
    LabeledImage broken = img;
    broken.labels.pop_back();
    CHECK_THROWS_AS(extract_patches(broken, 32, 5, 1), InputError);
  }
}

TEST_CASE("PGM round trips") {
  const auto img = synth_membranes(37, 23, 3, 2.0, 4.0, 0.02, 77).image;
  SUBCASE("16-bit preserves intensities to 1/65535") {
    const std::string path = temp_path("prunecnn_test_16.pgm");
    save_pgm(img, path, 16);
    const Image back = load_pgm(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    double worst = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      worst = std::max(worst, std::abs(back.pixels[i] - img.pixels[i]));
    CHECK(worst <= 0.5 / 65535.0 + 1e-12);
    std::remove(path.c_str());
  }
  SUBCASE("8-bit quantizes to 1/255") {
    const std::string path = temp_path("prunecnn_test_8.pgm");
    save_pgm(img, path, 8);
    const Image back = load_pgm(path);
    double worst = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      worst = std::max(worst, std::abs(back.pixels[i] - img.pixels[i]));
    CHECK(worst <= 0.5 / 255.0 + 1e-12);
    std::remove(path.c_str());
  }
  SUBCASE("comments in the header are skipped") {
    const std::string path = temp_path("prunecnn_test_c.pgm");
    std::ofstream out(path, std::ios::binary);
    out << "P5\n# a comment\n2 1\n255\n";
    out.put((char)0);
    out.put((char)255);
    out.close();
    const Image back = load_pgm(path);
    CHECK(back.width == 2);
    CHECK(back.pixels[0] == 0.0);
    CHECK(back.pixels[1] == 1.0);
    std::remove(path.c_str());
  }
  SUBCASE("format errors") {
    const std::string path = temp_path("prunecnn_test_bad.pgm");
    std::ofstream(path) << "P6 2 2 255 ....";
    CHECK_THROWS_AS(load_pgm(path), FormatError);
    std::ofstream(path, std::ios::trunc) << "P5\n4 4\n255\nxx";
    CHECK_THROWS_AS(load_pgm(path), FormatError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_pgm(temp_path("prunecnn_no_such_file.pgm")),
                    InputError);
    CHECK_THROWS_AS(save_pgm(img, temp_path("x.pgm"), 12), InputError);
  }
}

TEST_CASE("mask image round trip") {
  const auto labeled = synth_membranes(40, 30, 4, 2.0, 4.0, 0.0, 15);
  const std::string path = temp_path("prunecnn_test_mask.pgm");
  save_mask_pgm(labeled.labels, 40, 30, path);
  const auto back = image_to_mask(load_pgm(path));
  CHECK(back == labeled.labels);
  std::remove(path.c_str());
}

TEST_CASE("manifest round trip") {
  const std::string path = temp_path("prunecnn_test_manifest.txt");
  std::vector<ManifestEntry> entries = {
      {"a.pgm", "a_mask.pgm", "train", 7},
      {"b.pgm", "b_mask.pgm", "val", 8},
  };
  save_manifest(entries, path);
  const auto back = load_manifest(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_path == "a.pgm");
  CHECK(back[0].mask_path == "a_mask.pgm");
  CHECK(back[0].split == "train");
  CHECK(back[0].seed == 7);
  CHECK(back[1].split == "val");

  std::ofstream(path, std::ios::trunc) << "only two fields\n";
  CHECK_THROWS_AS(load_manifest(path), FormatError);
  std::ofstream(path, std::ios::trunc) << "a.pgm m.pgm test 3\n";
  CHECK_THROWS_AS(load_manifest(path), FormatError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_manifest(path), InputError);
}
