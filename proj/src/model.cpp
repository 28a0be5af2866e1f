#include "normlab/model.hpp"

#include <cmath>

#include "normlab/errors.hpp"
#include "normlab/rng.hpp"

namespace normlab {

NormChoice norm_choice_from_name(const std::string& name) {
  if (name == "bn") return NormChoice::bn;
  if (name == "in") return NormChoice::in_stat;
  if (name == "ln") return NormChoice::ln;
  if (name == "gn") return NormChoice::gn;
  if (name == "sn") return NormChoice::sn;
  if (name == "sn_tied") return NormChoice::sn_tied;
  throw ConfigError("unknown norm '" + name + "' (expected bn, in, ln, gn, sn, or sn_tied)");
}

std::string norm_choice_name(NormChoice c) {
  switch (c) {
    case NormChoice::bn: return "bn";
    case NormChoice::in_stat: return "in";
    case NormChoice::ln: return "ln";
    case NormChoice::gn: return "gn";
    case NormChoice::sn: return "sn";
    case NormChoice::sn_tied: return "sn_tied";
  }
  return "?";
}

bool NormUnit::uses_bn_stats() const {
  if (choice == NormChoice::bn) return true;
  if (!is_sn()) return false;
  for (NormKind k : state.omega) {
    if (k == NormKind::batch) return true;
  }
  return false;
}

static int bn_member_index(const RatioState& st) {
  for (size_t i = 0; i < st.omega.size(); ++i) {
    if (st.omega[i] == NormKind::batch) return static_cast<int>(i);
  }
  return -1;
}

Tensor4 NormUnit::forward_train(const Tensor4& h) {
  if (is_sn()) {
    SNLayer lay{state, gamma, beta, eps, agg};
    Tensor4 y = sn_forward(h, lay, ShardConfig{1, 0}, &sn_cache);
    const int bz = bn_member_index(state);
    if (bz >= 0 && !sn_cache.moments[static_cast<size_t>(bz)].mean.empty()) {
      const Moments& m = sn_cache.moments[static_cast<size_t>(bz)];
      if (pend_mean.size() != m.mean.size()) {
        pend_mean.assign(m.mean.size(), 0.0);
        pend_var.assign(m.var.size(), 0.0);
        pend_count = 0;
      }
      for (size_t i = 0; i < m.mean.size(); ++i) {
        pend_mean[i] += m.mean[i];
        pend_var[i] += m.var[i];
      }
      ++pend_count;
    }
    return y;
  }
  Tensor4 xhat = normalize(h, scheme, eps, &plain_cache);
  if (choice == NormChoice::bn) {
    const Moments& m = plain_cache.moments;
    if (pend_mean.size() != m.mean.size()) {
      pend_mean.assign(m.mean.size(), 0.0);
      pend_var.assign(m.var.size(), 0.0);
      pend_count = 0;
    }
    for (size_t i = 0; i < m.mean.size(); ++i) {
      pend_mean[i] += m.mean[i];
      pend_var[i] += m.var[i];
    }
    ++pend_count;
  }
  return affine_transform(xhat, gamma, beta);
}

Tensor4 NormUnit::forward_eval(const Tensor4& h) const {
  if (is_sn()) {
    SNLayer lay{state, gamma, beta, eps, agg};
    const bool has_bn = bn_member_index(state) >= 0;
    return sn_forward_eval(h, lay, has_bn ? &bn_stats : nullptr);
  }
  if (choice == NormChoice::bn) {
    return affine_transform(normalize_with_channel_stats(h, bn_stats.mean, bn_stats.var, eps),
                            gamma, beta);
  }
  return affine_transform(normalize(h, scheme, eps), gamma, beta);
}

Tensor4 NormUnit::backward(const Tensor4& dy) {
  if (is_sn()) {
    SNGrads g = sn_backward(sn_cache, dy);
    for (size_t i = 0; i < g.dgamma.size(); ++i) {
      dgamma[i] += g.dgamma[i];
      dbeta[i] += g.dbeta[i];
    }
    for (size_t i = 0; i < g.dlogits_mu.size(); ++i) {
      dlogits_mu[i] += g.dlogits_mu[i];
      dlogits_sigma[i] += g.dlogits_sigma[i];
    }
    return std::move(g.dx);
  }
  AffineGrads ag = affine_backward(plain_cache.xhat, gamma, dy);
  for (size_t i = 0; i < ag.dgamma.size(); ++i) {
    dgamma[i] += ag.dgamma[i];
    dbeta[i] += ag.dbeta[i];
  }
  return norm_backward(ag.dxhat, plain_cache);
}

void NormUnit::finalize_batch_moments(BnStatsMode mode, double decay) {
  if (pend_count == 0) return;
  Moments m;
  m.mean.resize(pend_mean.size());
  m.var.resize(pend_var.size());
  for (size_t i = 0; i < pend_mean.size(); ++i) {
    m.mean[i] = pend_mean[i] / pend_count;
    m.var[i] = pend_var[i] / pend_count;
  }
  bn_stats.accumulate(m, 1, static_cast<int>(pend_mean.size()), mode, decay);
  discard_batch_moments();
}

void NormUnit::discard_batch_moments() {
  pend_mean.clear();
  pend_var.clear();
  pend_count = 0;
}

Tensor4 ConvUnit::forward_train(const Tensor4& x) {
  x_in = x;
  Tensor4 y = norm.forward_train(conv2d(x, w, geom));
  if (relu_after) {
    relu_in = y;
    return relu(y);
  }
  return y;
}

Tensor4 ConvUnit::forward_eval(const Tensor4& x) const {
  Tensor4 y = norm.forward_eval(conv2d(x, w, geom));
  return relu_after ? relu(y) : y;
}

Tensor4 ConvUnit::backward(const Tensor4& dy) {
  Tensor4 d = relu_after ? relu_grad(relu_in, dy) : dy;
  Tensor4 dh = norm.backward(d);
  ConvGrads cg = conv2d_grad(x_in, w, dh, geom);
  for (size_t i = 0; i < dw.data.size(); ++i) dw.data[i] += cg.dw.data[i];
  return std::move(cg.dx);
}

static Tensor4 add_tensors(const Tensor4& a, const Tensor4& b) {
  if (!a.same_shape(b)) {
    throw ConfigError("residual merge shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor4 y = a;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
  return y;
}

Tensor4 ResBlock::forward_train(const Tensor4& x) {
  Tensor4 t = a.forward_train(x);
  Tensor4 u = b.forward_train(t);
  Tensor4 s = has_proj ? proj.forward_train(x) : x;
  sum_relu_in = add_tensors(u, s);
  return relu(sum_relu_in);
}

Tensor4 ResBlock::forward_eval(const Tensor4& x) const {
  Tensor4 t = a.forward_eval(x);
  Tensor4 u = b.forward_eval(t);
  Tensor4 s = has_proj ? proj.forward_eval(x) : x;
  return relu(add_tensors(u, s));
}

Tensor4 ResBlock::backward(const Tensor4& dy) {
  Tensor4 d = relu_grad(sum_relu_in, dy);
  Tensor4 dx = a.backward(b.backward(d));
  if (has_proj) {
    return add_tensors(dx, proj.backward(d));
  }
  return add_tensors(dx, d);
}

RfGraph miniresnet_rf_graph(const ModelConfig& cfg) {
  RfGraph g;
  auto addn = [&](int kernel, int stride, bool norm, bool shortcut, std::vector<int> inputs) {
    RfOp op;
    op.kernel = kernel;
    op.stride = stride;
    op.is_norm = norm;
    op.is_shortcut = shortcut;
    op.inputs = std::move(inputs);
    g.nodes.push_back(op);
    return static_cast<int>(g.nodes.size()) - 1;
  };
  int prev = addn(3, 1, true, false, {});  // stem
  for (size_t stage = 0; stage < cfg.stage_widths.size(); ++stage) {
    for (int block = 0; block < cfg.blocks_per_stage; ++block) {
      const bool transition = stage > 0 && block == 0;
      const int s = transition ? 2 : 1;
      const int entry = prev;
      int t = addn(3, s, true, false, {entry});
      t = addn(3, 1, true, false, {t});
      if (transition) {
        const int sc = addn(1, s, true, true, {entry});
        prev = addn(1, 1, false, false, {t, sc});
      } else {
        prev = addn(1, 1, false, false, {t, entry});
      }
    }
  }
  return g;
}

static MomentScheme plain_scheme(NormChoice c, int gn_groups) {
  MomentScheme s;
  switch (c) {
    case NormChoice::bn: s.kind = NormKind::batch; break;
    case NormChoice::in_stat: s.kind = NormKind::instance; break;
    case NormChoice::ln: s.kind = NormKind::layer; break;
    case NormChoice::gn:
      s.kind = NormKind::group;
      s.groups = gn_groups;
      break;
    default: break;
  }
  return s;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.stage_widths.empty() || cfg_.blocks_per_stage < 1 || cfg_.classes < 2) {
    throw ConfigError("model needs at least one stage, one block per stage, two classes");
  }
  if (cfg_.omega.empty()) cfg_.omega = full_omega();

  const RfGraph rf_graph = miniresnet_rf_graph(cfg_);
  std::vector<RfResult> rf_all = receptive_fields(rf_graph);
  std::vector<RfResult> rf_norms;
  for (const RfResult& r : rf_all) {
    if (r.is_norm) rf_norms.push_back(r);
  }

  int unit_index = 0;
  int layer_id = 0;
  auto make_unit = [&](const std::string& name, int in_c, int out_c, int kernel, int stride,
                       bool relu_after) {
    ConvUnit u;
    u.name = name;
    u.w = FilterBank(out_c, in_c, kernel, kernel);
    u.dw = FilterBank(out_c, in_c, kernel, kernel);
    u.geom = ConvGeom{stride, kernel / 2, 1};
    u.relu_after = relu_after;

    Rng rng(derive_seed(cfg_.init_seed, 404, static_cast<uint64_t>(unit_index++)));
    const double std = std::sqrt(2.0 / (in_c * kernel * kernel));
    for (double& v : u.w.data) v = std * rng.normal();

    NormUnit& nu = u.norm;
    nu.name = name;
    nu.layer_id = layer_id;
    nu.rf = rf_norms[static_cast<size_t>(layer_id)].rf;
    nu.is_shortcut = rf_norms[static_cast<size_t>(layer_id)].is_shortcut;
    ++layer_id;
    nu.choice = cfg_.norm;
    nu.eps = cfg_.eps;
    nu.agg = cfg_.agg;
    nu.gamma.assign(static_cast<size_t>(out_c), 1.0);
    nu.beta.assign(static_cast<size_t>(out_c), 0.0);
    nu.dgamma.assign(static_cast<size_t>(out_c), 0.0);
    nu.dbeta.assign(static_cast<size_t>(out_c), 0.0);
    nu.bn_stats.reset(out_c);
    if (nu.is_sn()) {
      nu.state = make_ratio_state(cfg_.omega, cfg_.norm == NormChoice::sn_tied);
      nu.dlogits_mu.assign(nu.state.omega.size(), 0.0);
      nu.dlogits_sigma.assign(nu.state.omega.size(), 0.0);
    } else {
      nu.scheme = plain_scheme(cfg_.norm, cfg_.gn_groups);
    }
    return u;
  };

  stem_ = make_unit("stem", cfg_.input_channels, cfg_.stem_width, 3, 1, true);

  int in_c = cfg_.stem_width;
  for (size_t stage = 0; stage < cfg_.stage_widths.size(); ++stage) {
    const int width = cfg_.stage_widths[stage];
    std::vector<ResBlock> blocks;
    for (int bi = 0; bi < cfg_.blocks_per_stage; ++bi) {
      const bool transition = stage > 0 && bi == 0;
      const int stride = transition ? 2 : 1;
      const std::string base = "s" + std::to_string(stage) + "b" + std::to_string(bi);
      ResBlock blk;
      blk.a = make_unit(base + ".a", in_c, width, 3, stride, true);
      blk.b = make_unit(base + ".b", width, width, 3, 1, false);
      blk.has_proj = transition;
      if (transition) {
        blk.proj = make_unit(base + ".proj", in_c, width, 1, stride, false);
      }
      blocks.push_back(std::move(blk));
      in_c = width;
    }
    stages_.push_back(std::move(blocks));
  }

  fc_w = FilterBank(cfg_.classes, in_c, 1, 1);
  dfc_w = FilterBank(cfg_.classes, in_c, 1, 1);
  fc_b.assign(static_cast<size_t>(cfg_.classes), 0.0);
  dfc_b.assign(static_cast<size_t>(cfg_.classes), 0.0);
  Rng rng(derive_seed(cfg_.init_seed, 404, static_cast<uint64_t>(unit_index)));
  const double std = std::sqrt(1.0 / in_c);
  for (double& v : fc_w.data) v = std * rng.normal();
}

double Model::train_shard(const Tensor4& x, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != x.n) {
    throw UsageError("label count " + std::to_string(labels.size()) + " != batch " +
                     std::to_string(x.n));
  }
  Tensor4 t = stem_.forward_train(x);
  for (auto& stage : stages_) {
    for (auto& blk : stage) t = blk.forward_train(t);
  }
  gap_in_ = t;
  fc_in_ = global_avg_pool(t);
  Tensor4 logits = linear(fc_in_, fc_w, fc_b);

  double loss_sum = 0.0;
  Tensor4 dlogits(logits.n, logits.c, 1, 1);
  std::vector<double> row(static_cast<size_t>(logits.c));
  for (int i = 0; i < logits.n; ++i) {
    for (int k = 0; k < logits.c; ++k) row[static_cast<size_t>(k)] = logits.at(i, k, 0, 0);
    XentResult xr = softmax_cross_entropy(row, labels[static_cast<size_t>(i)]);
    loss_sum += xr.loss;
    for (int k = 0; k < logits.c; ++k) dlogits.at(i, k, 0, 0) = xr.dlogits[static_cast<size_t>(k)];
  }

  LinearGrads lg = linear_grad(fc_in_, fc_w, dlogits);
  for (size_t i = 0; i < dfc_w.data.size(); ++i) dfc_w.data[i] += lg.dweight.data[i];
  for (size_t i = 0; i < dfc_b.size(); ++i) dfc_b[i] += lg.dbias[i];
  Tensor4 d = global_avg_pool_grad(gap_in_, lg.dx);
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
    for (auto bit = it->rbegin(); bit != it->rend(); ++bit) d = bit->backward(d);
  }
  stem_.backward(d);
  return loss_sum;
}

void Model::stats_pass(const Tensor4& x) {
  Tensor4 t = stem_.forward_train(x);
  for (auto& stage : stages_) {
    for (auto& blk : stage) t = blk.forward_train(t);
  }
}

Tensor4 Model::eval_logits(const Tensor4& x) const {
  Tensor4 t = stem_.forward_eval(x);
  for (const auto& stage : stages_) {
    for (const auto& blk : stage) t = blk.forward_eval(t);
  }
  return linear(global_avg_pool(t), fc_w, fc_b);
}

void Model::zero_grads() {
  for (ParamRef& p : params()) {
    std::fill(p.grad->begin(), p.grad->end(), 0.0);
  }
}

void Model::scale_grads(double s) {
  for (ParamRef& p : params()) {
    for (double& v : *p.grad) v *= s;
  }
}

static void push_unit_params(ConvUnit& u, std::vector<ParamRef>& out) {
  out.push_back({u.name + ".w", &u.w.data, &u.dw.data, true, nullptr});
  NormUnit& n = u.norm;
  out.push_back({u.name + ".gamma", &n.gamma, &n.dgamma, true, nullptr});
  out.push_back({u.name + ".beta", &n.beta, &n.dbeta, true, nullptr});
  if (n.is_sn()) {
    out.push_back({u.name + ".logits_mu", &n.state.logits_mu, &n.dlogits_mu, true, &n.state.hard});
    if (!n.state.tied) {
      out.push_back(
          {u.name + ".logits_sigma", &n.state.logits_sigma, &n.dlogits_sigma, true, &n.state.hard});
    }
  }
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  push_unit_params(stem_, out);
  for (auto& stage : stages_) {
    for (auto& blk : stage) {
      push_unit_params(blk.a, out);
      push_unit_params(blk.b, out);
      if (blk.has_proj) push_unit_params(blk.proj, out);
    }
  }
  out.push_back({"fc.w", &fc_w.data, &dfc_w.data, true, nullptr});
  out.push_back({"fc.b", &fc_b, &dfc_b, true, nullptr});
  return out;
}

std::vector<NormUnit*> Model::norm_units() {
  std::vector<NormUnit*> out;
  out.push_back(&stem_.norm);
  for (auto& stage : stages_) {
    for (auto& blk : stage) {
      out.push_back(&blk.a.norm);
      out.push_back(&blk.b.norm);
      if (blk.has_proj) out.push_back(&blk.proj.norm);
    }
  }
  return out;
}

std::vector<const NormUnit*> Model::norm_units() const {
  std::vector<const NormUnit*> out;
  out.push_back(&stem_.norm);
  for (const auto& stage : stages_) {
    for (const auto& blk : stage) {
      out.push_back(&blk.a.norm);
      out.push_back(&blk.b.norm);
      if (blk.has_proj) out.push_back(&blk.proj.norm);
    }
  }
  return out;
}

int Model::norm_layer_count() const { return static_cast<int>(norm_units().size()); }

}  // namespace normlab
