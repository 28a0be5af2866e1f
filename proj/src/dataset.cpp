#include "normlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "normlab/errors.hpp"
#include "normlab/rng.hpp"

namespace normlab {

static constexpr long kCifarRecord = 3073;  // 1 label byte + 3*32*32 pixels

Dataset load_cifar10_binary(const std::vector<std::string>& files) {
  if (files.empty()) throw ConfigError("cifar10_binary needs at least one file");
  std::vector<unsigned char> bytes;
  for (const std::string& path : files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read '" + path + "'");
    std::vector<unsigned char> chunk((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (chunk.empty() || static_cast<long>(chunk.size()) % kCifarRecord != 0) {
      throw ParseError("'" + path + "' has " + std::to_string(chunk.size()) +
                       " bytes, expected a positive multiple of " + std::to_string(kCifarRecord));
    }
    bytes.insert(bytes.end(), chunk.begin(), chunk.end());
  }
  const int n = static_cast<int>(static_cast<long>(bytes.size()) / kCifarRecord);
  Dataset d;
  d.images = Tensor4(n, 3, 32, 32);
  d.labels.resize(static_cast<size_t>(n));
  d.classes = 10;
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = &bytes[static_cast<size_t>(i) * kCifarRecord];
    d.labels[static_cast<size_t>(i)] = rec[0];
    for (size_t j = 0; j < 3072; ++j) {
      d.images.data[d.images.index(i, 0, 0, 0) + j] = rec[1 + j] / 255.0;
    }
  }
  return d;
}

// Bilinear upsample of a coarse grid to size x size.
static void upsample_grid(const std::vector<double>& grid, int g, double* out, int size) {
  for (int y = 0; y < size; ++y) {
    const double fy = size > 1 ? static_cast<double>(y) * (g - 1) / (size - 1) : 0.0;
    const int y0 = std::min(static_cast<int>(fy), g - 2);
    const double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = size > 1 ? static_cast<double>(x) * (g - 1) / (size - 1) : 0.0;
      const int x0 = std::min(static_cast<int>(fx), g - 2);
      const double tx = fx - x0;
      const double v00 = grid[static_cast<size_t>(y0) * g + x0];
      const double v01 = grid[static_cast<size_t>(y0) * g + x0 + 1];
      const double v10 = grid[static_cast<size_t>(y0 + 1) * g + x0];
      const double v11 = grid[static_cast<size_t>(y0 + 1) * g + x0 + 1];
      out[static_cast<size_t>(y) * size + x] =
          (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
  }
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.samples < spec.classes || spec.size < 4 || spec.channels < 1) {
    throw ConfigError("synthetic dataset needs >=2 classes, >=1 sample per class, size >= 4");
  }
  const int grid = 4;
  std::vector<std::vector<double>> templates(
      static_cast<size_t>(spec.classes),
      std::vector<double>(static_cast<size_t>(spec.channels) * spec.size * spec.size));
  for (int k = 0; k < spec.classes; ++k) {
    Rng rng(derive_seed(spec.seed, 101, static_cast<uint64_t>(k)));
    for (int c = 0; c < spec.channels; ++c) {
      std::vector<double> coarse(static_cast<size_t>(grid) * grid);
      for (double& v : coarse) v = rng.uniform(0.15, 0.85);
      upsample_grid(coarse, grid,
                    &templates[static_cast<size_t>(k)][static_cast<size_t>(c) * spec.size * spec.size],
                    spec.size);
    }
  }

  Dataset d;
  d.images = Tensor4(spec.samples, spec.channels, spec.size, spec.size);
  d.labels.resize(static_cast<size_t>(spec.samples));
  d.classes = spec.classes;
  Rng noise(derive_seed(spec.seed, 202, spec.noise_stream));
  const size_t chw = static_cast<size_t>(spec.channels) * spec.size * spec.size;
  for (int i = 0; i < spec.samples; ++i) {
    const int label = i % spec.classes;
    d.labels[static_cast<size_t>(i)] = label;
    const double brightness = noise.uniform(-0.08, 0.08);
    double* img = &d.images.data[d.images.index(i, 0, 0, 0)];
    const std::vector<double>& tpl = templates[static_cast<size_t>(label)];
    for (size_t j = 0; j < chw; ++j) {
      double v = tpl[j] + brightness + spec.noise * noise.normal();
      img[j] = std::clamp(v, 0.0, 1.0);
    }
  }
  return d;
}

Dataset subsample(const Dataset& d, double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw ConfigError("fraction must be in (0,1], got " + std::to_string(fraction));
  }
  const int keep = static_cast<int>(std::floor(fraction * d.size()));
  if (keep < 1) throw ConfigError("fraction keeps no samples");
  if (keep == d.size()) return d;

  Rng rng(derive_seed(seed, 303));
  const std::vector<size_t> perm = rng.permutation(static_cast<size_t>(d.size()));
  std::vector<int> chosen;
  chosen.reserve(static_cast<size_t>(keep));
  for (int i = 0; i < keep; ++i) chosen.push_back(static_cast<int>(perm[static_cast<size_t>(i)]));
  std::sort(chosen.begin(), chosen.end());

  Dataset out;
  out.images = Tensor4(keep, d.images.c, d.images.h, d.images.w);
  out.labels.resize(static_cast<size_t>(keep));
  out.classes = d.classes;
  const size_t chw = static_cast<size_t>(d.images.c) * d.images.h * d.images.w;
  for (int i = 0; i < keep; ++i) {
    const int src = chosen[static_cast<size_t>(i)];
    std::copy_n(&d.images.data[d.images.index(src, 0, 0, 0)], chw,
                &out.images.data[out.images.index(i, 0, 0, 0)]);
    out.labels[static_cast<size_t>(i)] = d.labels[static_cast<size_t>(src)];
  }
  return out;
}

Dataset downsample(const Dataset& d, int factor) {
  if (factor < 1) throw ConfigError("downsample factor must be >= 1");
  if (factor == 1) return d;
  if (d.images.h % factor != 0 || d.images.w % factor != 0) {
    throw ConfigError("downsample factor " + std::to_string(factor) + " does not divide " +
                      std::to_string(d.images.h) + "x" + std::to_string(d.images.w));
  }
  const int oh = d.images.h / factor, ow = d.images.w / factor;
  Dataset out;
  out.images = Tensor4(d.size(), d.images.c, oh, ow);
  out.labels = d.labels;
  out.classes = d.classes;
  const double inv = 1.0 / (factor * factor);
  for (int i = 0; i < d.size(); ++i) {
    for (int c = 0; c < d.images.c; ++c) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy) {
            for (int dx = 0; dx < factor; ++dx) {
              acc += d.images.at(i, c, y * factor + dy, x * factor + dx);
            }
          }
          out.images.at(i, c, y, x) = acc * inv;
        }
      }
    }
  }
  return out;
}

}  // namespace normlab
