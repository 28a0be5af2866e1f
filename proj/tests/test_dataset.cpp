#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "normlab/dataset.hpp"
#include "normlab/errors.hpp"

using namespace normlab;

namespace {
void write_cifar_file(const std::string& path, int records) {
  std::ofstream out(path, std::ios::binary);
  for (int r = 0; r < records; ++r) {
    const unsigned char label = static_cast<unsigned char>(r % 10);
    out.put(static_cast<char>(label));
    for (int i = 0; i < 3072; ++i) {
      out.put(static_cast<char>((r * 31 + i) % 256));
    }
  }
}
}  // namespace

TEST_CASE("cifar binary reader: two records in 6146 bytes") {
  const std::string path = "dataset_test_two.bin";
  write_cifar_file(path, 2);
  const Dataset d = load_cifar10_binary({path});
  CHECK(d.size() == 2);
  CHECK(d.classes == 10);
  CHECK(d.images.c == 3);
  CHECK(d.images.h == 32);
  CHECK(d.images.w == 32);
  CHECK(d.labels[0] == 0);
  CHECK(d.labels[1] == 1);
  // First pixel of record 0 is byte value 0; record 1 starts at byte 31.
  CHECK(d.images.at(0, 0, 0, 0) == 0.0);
  CHECK(d.images.at(1, 0, 0, 0) == doctest::Approx(31.0 / 255.0).epsilon(1e-15));
  for (double v : d.images.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  std::remove(path.c_str());
}

TEST_CASE("cifar binary reader: length not a record multiple is rejected") {
  const std::string path = "dataset_test_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    for (int i = 0; i < 100; ++i) out.put('\0');
  }
  try {
    load_cifar10_binary({path});
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_cifar10_binary({"no_such_data_file.bin"}), InputError);
  CHECK_THROWS_AS(load_cifar10_binary({}), ConfigError);
}

TEST_CASE("cifar binary reader: multiple files concatenate in order") {
  const std::string a = "dataset_test_a.bin";
  const std::string b = "dataset_test_b.bin";
  write_cifar_file(a, 2);
  write_cifar_file(b, 3);
  const Dataset d = load_cifar10_binary({a, b});
  CHECK(d.size() == 5);
  CHECK(d.labels == std::vector<int>{0, 1, 0, 1, 2});
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("synthetic data is deterministic and splits get fresh noise") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.samples = 12;
  spec.size = 8;
  spec.channels = 2;
  spec.seed = 77;

  const Dataset a = make_synthetic(spec);
  const Dataset b = make_synthetic(spec);
  CHECK(a.images.data == b.images.data);  // bitwise repeatable
  CHECK(a.labels == b.labels);
  CHECK(a.classes == 3);
  CHECK(a.size() == 12);
  CHECK(a.images.h == 8);
  CHECK(a.images.c == 2);

  // Labels cycle so every class appears equally often.
  for (int i = 0; i < 12; ++i) CHECK(a.labels[static_cast<size_t>(i)] == i % 3);

  SyntheticSpec test_spec = spec;
  test_spec.noise_stream = 1;
  const Dataset t = make_synthetic(test_spec);
  CHECK(t.labels == a.labels);
  // Same class templates, different jitter: samples correlate but never match.
  bool any_equal = false;
  for (int i = 0; i < 12; ++i) {
    bool equal = true;
    for (int j = 0; j < 2 * 8 * 8; ++j) {
      if (a.images.data[static_cast<size_t>(i * 128 + j)] !=
          t.images.data[static_cast<size_t>(i * 128 + j)]) {
        equal = false;
        break;
      }
    }
    any_equal = any_equal || equal;
  }
  CHECK(!any_equal);

  SyntheticSpec other_seed = spec;
  other_seed.seed = 78;
  const Dataset c = make_synthetic(other_seed);
  CHECK(c.images.data != a.images.data);

  SyntheticSpec bad = spec;
  bad.classes = 0;
  CHECK_THROWS_AS(make_synthetic(bad), ConfigError);
}

TEST_CASE("subsample keeps floor(fraction*n) samples in original order") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.samples = 10;
  spec.size = 4;
  spec.channels = 1;
  const Dataset d = make_synthetic(spec);

  const Dataset half = subsample(d, 0.5, 9);
  CHECK(half.size() == 5);
  CHECK(half.classes == 2);
  const Dataset again = subsample(d, 0.5, 9);
  CHECK(half.images.data == again.images.data);  // same seed, same pick
  CHECK(half.labels == again.labels);

  // Original order: each kept sample equals a full-data sample, and the
  // sequence of source indices is strictly increasing.
  int last_src = -1;
  for (int i = 0; i < half.size(); ++i) {
    int src = -1;
    for (int j = last_src + 1; j < d.size(); ++j) {
      bool match = true;
      for (int p = 0; p < 16; ++p) {
        if (half.images.data[static_cast<size_t>(i * 16 + p)] !=
            d.images.data[static_cast<size_t>(j * 16 + p)]) {
          match = false;
          break;
        }
      }
      if (match) {
        src = j;
        break;
      }
    }
    REQUIRE(src > last_src);
    CHECK(half.labels[static_cast<size_t>(i)] == d.labels[static_cast<size_t>(src)]);
    last_src = src;
  }

  const Dataset all = subsample(d, 1.0, 9);
  CHECK(all.images.data == d.images.data);
  CHECK_THROWS_AS(subsample(d, 0.0, 9), ConfigError);
  CHECK_THROWS_AS(subsample(d, 1.5, 9), ConfigError);
}

TEST_CASE("downsample averages each block and requires a divisor") {
  Dataset d;
  d.images = Tensor4(1, 1, 4, 4);
  d.labels = {0};
  d.classes = 1;
  for (int i = 0; i < 16; ++i) d.images.data[static_cast<size_t>(i)] = i;

  const Dataset half = downsample(d, 2);
  CHECK(half.images.h == 2);
  CHECK(half.images.w == 2);
  // Top-left block is {0,1,4,5} -> 2.5
  CHECK(half.images.at(0, 0, 0, 0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(half.images.at(0, 0, 0, 1) == doctest::Approx(4.5).epsilon(1e-15));
  CHECK(half.images.at(0, 0, 1, 0) == doctest::Approx(10.5).epsilon(1e-15));
  CHECK(half.images.at(0, 0, 1, 1) == doctest::Approx(12.5).epsilon(1e-15));

  const Dataset same = downsample(d, 1);
  CHECK(same.images.data == d.images.data);

  CHECK_THROWS_AS(downsample(d, 3), ConfigError);
  CHECK_THROWS_AS(downsample(d, 0), ConfigError);
}
