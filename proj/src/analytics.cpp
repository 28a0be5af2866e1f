#include "normlab/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "normlab/errors.hpp"
#include "normlab/textio.hpp"

namespace normlab {

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) {
    throw InputError("kl_divergence: lengths differ (" + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()) + ")");
  }
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pi = std::max(p[i], kProbClamp);
    const double qi = std::max(q[i], kProbClamp);
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

double sym_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  return kl_divergence(p, q) + kl_divergence(q, p);
}

std::vector<int> RatioTrajectory::layer_ids() const {
  std::vector<int> ids;
  for (const auto& r : records) ids.push_back(r.layer_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<int> RatioTrajectory::epochs() const {
  std::vector<int> es;
  for (const auto& r : records) es.push_back(r.epoch);
  std::sort(es.begin(), es.end());
  es.erase(std::unique(es.begin(), es.end()), es.end());
  return es;
}

const TrajectoryRecord* RatioTrajectory::find(int layer_id, int epoch) const {
  for (const auto& r : records) {
    if (r.layer_id == layer_id && r.epoch == epoch) return &r;
  }
  return nullptr;
}

const char* const kTrajectoryHeader =
    "layer_id,epoch,rf,lambda_mu_in,lambda_mu_ln,lambda_mu_bn,"
    "lambda_sigma_in,lambda_sigma_ln,lambda_sigma_bn";

void export_trajectory(const RatioTrajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << kTrajectoryHeader << "\n";
  for (const auto& r : traj.records) {
    out << r.layer_id << "," << r.epoch << "," << r.rf;
    for (double v : r.lambda_mu) out << "," << fmt_g12(v);
    for (double v : r.lambda_sigma) out << "," << fmt_g12(v);
    out << "\n";
  }
}

RatioTrajectory import_trajectory(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw ParseError("empty trajectory file '" + path + "'", 1);
  if (trim(lines[0]) != kTrajectoryHeader) {
    throw ParseError("bad trajectory header; expected '" + std::string(kTrajectoryHeader) + "'",
                     1);
  }
  RatioTrajectory traj;
  std::map<std::pair<int, int>, bool> seen;
  for (size_t i = 1; i < lines.size(); ++i) {
    const long lineno = static_cast<long>(i) + 1;
    if (trim(lines[i]).empty()) continue;
    const std::vector<std::string> f = split(lines[i], ',');
    if (f.size() != 9) {
      throw ParseError("expected 9 fields, got " + std::to_string(f.size()), lineno);
    }
    TrajectoryRecord r;
    r.layer_id = static_cast<int>(parse_long(f[0], lineno));
    r.epoch = static_cast<int>(parse_long(f[1], lineno));
    r.rf = static_cast<int>(parse_long(f[2], lineno));
    for (int k = 0; k < 3; ++k) r.lambda_mu[static_cast<size_t>(k)] = parse_double(f[3 + k], lineno);
    for (int k = 0; k < 3; ++k) {
      r.lambda_sigma[static_cast<size_t>(k)] = parse_double(f[6 + k], lineno);
    }
    const auto key = std::make_pair(r.layer_id, r.epoch);
    if (seen.count(key)) {
      throw ParseError("duplicate record for layer " + std::to_string(r.layer_id) + ", epoch " +
                       std::to_string(r.epoch), lineno);
    }
    seen[key] = true;
    traj.records.push_back(r);
  }
  return traj;
}

static std::vector<double> simplex_of(const TrajectoryRecord& r, RatioSide side) {
  const auto& a = side == RatioSide::mu ? r.lambda_mu : r.lambda_sigma;
  return {a[0], a[1], a[2]};
}

static int rf_of_layer(const RatioTrajectory& traj, int layer_id) {
  for (const auto& r : traj.records) {
    if (r.layer_id == layer_id) return r.rf;
  }
  return 0;
}

DivergenceReport self_divergence(const RatioTrajectory& traj) {
  DivergenceReport rep;
  rep.layer_ids = traj.layer_ids();
  rep.epochs = traj.epochs();
  for (int lid : rep.layer_ids) {
    rep.rfs.push_back(rf_of_layer(traj, lid));
    std::vector<double> series;
    for (int e : rep.epochs) {
      const TrajectoryRecord* r = traj.find(lid, e);
      if (r == nullptr) {
        throw InputError("trajectory has no record for layer " + std::to_string(lid) +
                         " at epoch " + std::to_string(e));
      }
      series.push_back(sym_divergence(simplex_of(*r, RatioSide::mu),
                                      simplex_of(*r, RatioSide::sigma)));
    }
    rep.values.push_back(std::move(series));
  }
  return rep;
}

DivergenceReport trajectory_divergence(const RatioTrajectory& a, const RatioTrajectory& b,
                                       RatioSide which) {
  const std::vector<int> la = a.layer_ids();
  const std::vector<int> lb = b.layer_ids();
  if (la != lb) {
    throw InputError("trajectories cover different layer sets (" + std::to_string(la.size()) +
                     " vs " + std::to_string(lb.size()) + " layers)");
  }
  const std::vector<int> ea = a.epochs();
  const std::vector<int> eb = b.epochs();
  if (ea.empty() || eb.empty()) throw InputError("trajectory has no records");

  DivergenceReport rep;
  rep.layer_ids = la;
  const bool aligned = ea == eb;
  rep.epochs = aligned ? ea : std::vector<int>{ea.back()};

  for (int lid : rep.layer_ids) {
    rep.rfs.push_back(rf_of_layer(a, lid));
    std::vector<double> series;
    if (aligned) {
      for (int e : ea) {
        const TrajectoryRecord* ra = a.find(lid, e);
        const TrajectoryRecord* rb = b.find(lid, e);
        if (ra == nullptr || rb == nullptr) {
          throw InputError("missing record for layer " + std::to_string(lid) + " at epoch " +
                           std::to_string(e));
        }
        series.push_back(sym_divergence(simplex_of(*ra, which), simplex_of(*rb, which)));
      }
    } else {
      const TrajectoryRecord* ra = a.find(lid, ea.back());
      const TrajectoryRecord* rb = b.find(lid, eb.back());
      if (ra == nullptr || rb == nullptr) {
        throw InputError("missing final-epoch record for layer " + std::to_string(lid));
      }
      series.push_back(sym_divergence(simplex_of(*ra, which), simplex_of(*rb, which)));
    }
    rep.values.push_back(std::move(series));
  }
  return rep;
}

std::vector<RfResult> receptive_fields(const RfGraph& graph) {
  std::vector<RfResult> out;
  out.reserve(graph.nodes.size());
  for (size_t i = 0; i < graph.nodes.size(); ++i) {
    const RfOp& op = graph.nodes[i];
    if (op.kernel < 1 || op.stride < 1 || op.dilation < 1) {
      throw ConfigError("node " + std::to_string(i) + " has invalid geometry");
    }
    RfResult r;
    r.node = static_cast<int>(i);
    r.is_norm = op.is_norm;
    r.is_shortcut = op.is_shortcut;
    int best_rf = 0, best_jump = 0;
    auto consume = [&](int rf_in, int jump_in) {
      const int rf = rf_in + (op.kernel - 1) * op.dilation * jump_in;
      const int jump = jump_in * op.stride;
      if (rf > best_rf) best_rf = rf;
      if (jump > best_jump) best_jump = jump;
    };
    if (op.inputs.empty()) {
      consume(1, 1);
    } else {
      for (int src : op.inputs) {
        if (src < 0 || src >= static_cast<int>(i)) {
          throw ConfigError("node " + std::to_string(i) + " input " + std::to_string(src) +
                            " breaks topological order (cycle)");
        }
        consume(out[static_cast<size_t>(src)].rf, out[static_cast<size_t>(src)].jump);
      }
    }
    r.rf = best_rf;
    r.jump = best_jump;
    out.push_back(r);
  }
  return out;
}

std::vector<int> norm_layer_rfs(const RfGraph& graph) {
  std::vector<int> rfs;
  for (const RfResult& r : receptive_fields(graph)) {
    if (r.is_norm) rfs.push_back(r.rf);
  }
  return rfs;
}

RfGraph resnet50_rf_fixture() {
  RfGraph g;
  auto add = [&](int kernel, int stride, bool norm, bool shortcut, std::vector<int> inputs) {
    RfOp op;
    op.kernel = kernel;
    op.stride = stride;
    op.is_norm = norm;
    op.is_shortcut = shortcut;
    op.inputs = std::move(inputs);
    g.nodes.push_back(op);
    return static_cast<int>(g.nodes.size()) - 1;
  };

  int prev = add(7, 2, true, false, {});   // stem conv
  prev = add(3, 2, false, false, {prev});  // max pool

  const int stage_blocks[4] = {3, 4, 6, 3};
  for (int stage = 0; stage < 4; ++stage) {
    for (int block = 0; block < stage_blocks[stage]; ++block) {
      const int entry = prev;
      const int s = (stage > 0 && block == 0) ? 2 : 1;  // stride lives on the 3x3
      int t = add(1, 1, true, false, {entry});
      t = add(3, s, true, false, {t});
      t = add(1, 1, true, false, {t});
      if (block == 0) {
        const int sc = add(1, s, true, true, {entry});  // projection shortcut
        prev = add(1, 1, false, false, {t, sc});        // residual add
      } else {
        prev = add(1, 1, false, false, {t, entry});
      }
    }
  }
  return g;
}

std::vector<RfRange> default_rf_ranges() {
  return {
      {0, 49, false, "<49"},      {49, 99, false, "49-99"},   {99, 199, false, "99-199"},
      {199, 299, false, "199-299"}, {299, 428, false, "299-427"}, {0, 0, true, "ALL"},
  };
}

std::vector<RfBinned> bin_by_rf(const std::vector<int>& rfs, const std::vector<double>& values,
                                const std::vector<RfRange>& ranges) {
  if (rfs.size() != values.size()) {
    throw InputError("bin_by_rf: " + std::to_string(rfs.size()) + " rfs vs " +
                     std::to_string(values.size()) + " values");
  }
  for (size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i].all) continue;
    if (ranges[i].lo >= ranges[i].hi) {
      throw ConfigError("rf range '" + ranges[i].label + "' is empty or inverted");
    }
    for (size_t j = i + 1; j < ranges.size(); ++j) {
      if (ranges[j].all) continue;
      if (ranges[i].lo < ranges[j].hi && ranges[j].lo < ranges[i].hi) {
        throw ConfigError("rf ranges '" + ranges[i].label + "' and '" + ranges[j].label +
                          "' overlap");
      }
    }
  }
  std::vector<RfBinned> out;
  for (const RfRange& range : ranges) {
    double sum = 0.0;
    int count = 0;
    for (size_t i = 0; i < rfs.size(); ++i) {
      if (range.all || (rfs[i] >= range.lo && rfs[i] < range.hi)) {
        sum += values[i];
        ++count;
      }
    }
    if (count > 0) out.push_back({range.label, sum / count, count});
  }
  return out;
}

}  // namespace normlab
