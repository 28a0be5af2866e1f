#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

struct Dataset {
  Tensor4 images{0, 0, 0, 0};
  std::vector<int> labels;
  int classes = 0;

  int size() const { return images.n; }
};

// CIFAR-10 binary layout: records of 1 label byte + 3072 pixel bytes
// (3 channels x 32 x 32, channel-major).  Pixels are scaled to [0,1].
Dataset load_cifar10_binary(const std::vector<std::string>& files);

// Class templates (smooth low-frequency patterns) plus per-sample jitter and
// pixel noise; labels cycle through the classes so splits stay balanced.
struct SyntheticSpec {
  int classes = 4;
  int samples = 128;
  int size = 32;
  int channels = 3;
  double noise = 0.35;
  uint64_t seed = 1;
  // Distinguishes splits: same seed keeps the class templates, a different
  // stream draws fresh sample noise (train vs test).
  uint64_t noise_stream = 0;
};

Dataset make_synthetic(const SyntheticSpec& spec);

// Deterministic seeded subsample of floor(fraction * n) samples, original
// order preserved.
Dataset subsample(const Dataset& d, double fraction, uint64_t seed);

// factor x factor average pooling; factor must divide the resolution.
Dataset downsample(const Dataset& d, int factor);

}  // namespace normlab
