#pragma once

#include <string>

#include "normlab/errors.hpp"

namespace normlab {

// Virtual-device layout for a batch: the n axis is split into n_shards
// contiguous groups of per_shard samples, and batch statistics are computed
// per shard rather than over the whole batch.
struct ShardConfig {
  int n_shards = 1;
  int per_shard = 0;

  int total() const { return n_shards * per_shard; }

  void validate(int batch_n) const {
    if (n_shards < 1 || per_shard < 1) {
      throw ConfigError("shard config: need n_shards >= 1 and per_shard >= 1, got (" +
                        std::to_string(n_shards) + "," + std::to_string(per_shard) + ")");
    }
    if (total() != batch_n) {
      throw ConfigError("shard config (" + std::to_string(n_shards) + "," +
                        std::to_string(per_shard) + ") does not cover batch of " +
                        std::to_string(batch_n));
    }
  }
};

}  // namespace normlab
