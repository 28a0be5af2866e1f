#pragma once

#include <array>
#include <string>
#include <vector>

namespace normlab {

// Both arguments are clamped below at 1e-12 entrywise before the logs, so
// one-hot inputs stay finite.
constexpr double kProbClamp = 1e-12;

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);
double sym_divergence(const std::vector<double>& p, const std::vector<double>& q);

// One row of the ratio log.  The simplex slots are fixed (in, ln, bn);
// members absent from omega hold 0.
struct TrajectoryRecord {
  int layer_id = 0;
  int epoch = 0;
  int rf = 0;
  std::array<double, 3> lambda_mu{0.0, 0.0, 0.0};
  std::array<double, 3> lambda_sigma{0.0, 0.0, 0.0};
};

struct RatioTrajectory {
  std::vector<TrajectoryRecord> records;

  std::vector<int> layer_ids() const;  // sorted, unique
  std::vector<int> epochs() const;     // sorted, unique
  const TrajectoryRecord* find(int layer_id, int epoch) const;
};

extern const char* const kTrajectoryHeader;

void export_trajectory(const RatioTrajectory& traj, const std::string& path);
RatioTrajectory import_trajectory(const std::string& path);

enum class RatioSide { mu, sigma };

// values[i][j] belongs to layer_ids[i] at epochs[j].
struct DivergenceReport {
  std::vector<int> layer_ids;
  std::vector<int> rfs;
  std::vector<int> epochs;
  std::vector<std::vector<double>> values;
};

// D(lambda_mu || lambda_sigma) per (layer, epoch) within one run.
DivergenceReport self_divergence(const RatioTrajectory& traj);

// Cross-run divergence of the chosen ratio side.  Layer sets must match;
// when the epoch sets differ the final epochs are compared instead (single
// column, labeled with run a's final epoch).
DivergenceReport trajectory_divergence(const RatioTrajectory& a, const RatioTrajectory& b,
                                       RatioSide which);

// Receptive-field graph: nodes in topological order; empty inputs read the
// network input.  Pointwise ops (activations, affine) need no node; a norm
// layer is marked on the conv/pool node it follows.
struct RfOp {
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  bool is_norm = false;
  bool is_shortcut = false;
  std::vector<int> inputs;
};

struct RfGraph {
  std::vector<RfOp> nodes;
};

struct RfResult {
  int node = 0;
  int rf = 1;
  int jump = 1;
  bool is_norm = false;
  bool is_shortcut = false;
};

// rf <- rf + (kernel-1)*dilation*jump, jump <- jump*stride along each path;
// merge points take the max over incoming paths.
std::vector<RfResult> receptive_fields(const RfGraph& graph);
std::vector<int> norm_layer_rfs(const RfGraph& graph);

RfGraph resnet50_rf_fixture();

// Half-open [lo, hi) bins plus the catch-all.
struct RfRange {
  int lo = 0;
  int hi = 0;
  bool all = false;
  std::string label;
};

std::vector<RfRange> default_rf_ranges();

struct RfBinned {
  std::string label;
  double mean = 0.0;
  int count = 0;
};

// Mean of values whose layer rf falls in each range; empty ranges are
// omitted from the result.
std::vector<RfBinned> bin_by_rf(const std::vector<int>& rfs, const std::vector<double>& values,
                                const std::vector<RfRange>& ranges);

}  // namespace normlab
