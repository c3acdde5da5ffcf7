#pragma once

// iql.hpp - Scheduler optimization on the synthetic dataset. The Q network
// is dual-stream: a GRU consumes the variable-length downsampled action
// sequence while an MLP encodes the state; a fusion MLP maps the
// concatenated features to a scalar. V is a plain state MLP. Both are
// trained with the literal losses
//   L_Q = E[(r' + gamma V(o') - Q(o, A^k))^2]
//   L_V = E[|alpha - 1(x<0)| x^2],  x = V(o) - Q(o, A^k),  Q held fixed
// with no target network. Inference is an argmax over the feasible rates,
// ties broken toward the smallest (most conservative) rate.
//
// Q and V see positions relative to the current state: the toy dynamics is
// translation-invariant, so the violation labels are too.

#include "sup/chunking.hpp"
#include "sup/nn.hpp"
#include "sup/synth.hpp"
#include "sup/wm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

namespace sup {

/// Expectile loss |alpha - 1(x<0)| x^2.
inline double expectile_loss(double x, double alpha) {
  const double w = std::abs(alpha - (x < 0.0 ? 1.0 : 0.0));
  return w * x * x;
}

struct IqlConfig {
  int state_dim{kStateDim};
  int action_dim{kActionDim};
  int hidden{64};
  int gru_layers{2};
  double expectile{0.95};  // the paper's alpha (App. F lists it as tau)
  double gamma{0.9};
  double learning_rate{1e-3};
  int batch_size{256};
  int train_steps{4000};
  double lr_decay{0.3};
  std::uint64_t seed{0};
  bool center_positions{true};
  // fixed output-scale reparameterization: the heads emit value/value_scale,
  // keeping the net's working range near unity for discounted returns of
  // magnitude ~1/(1-gamma)
  double value_scale{10.0};
};

struct SchedulerNets {
  IqlConfig cfg;
  nn::Mlp2 q_state;                // state -> feature
  std::vector<nn::GruLayer> q_gru; // action sequence -> feature
  nn::Mlp2 q_fuse;                 // [state feature; seq feature] -> scalar
  nn::Mlp2 v_net;                  // state -> scalar

  SchedulerNets() = default;
  SchedulerNets(const IqlConfig& c, std::mt19937_64& rng)
      : cfg(c),
        q_state(c.state_dim, c.hidden, c.hidden, true, rng),
        q_fuse(2 * c.hidden, c.hidden, 1, false, rng),
        v_net(c.state_dim, c.hidden, 1, false, rng) {
    q_gru.reserve(static_cast<std::size_t>(c.gru_layers));
    for (int l = 0; l < c.gru_layers; ++l) {
      q_gru.emplace_back(c.hidden, l == 0 ? c.action_dim : c.hidden, rng);
    }
  }

  void collect_q_tensors(std::vector<nn::TensorRef>* out) {
    nn::collect(q_state, out);
    for (auto& layer : q_gru) {
      nn::collect(layer, out);
    }
    nn::collect(q_fuse, out);
  }
  void collect_v_tensors(std::vector<nn::TensorRef>* out) {
    nn::collect(v_net, out);
  }
  void collect_tensors(std::vector<nn::TensorRef>* out) {
    collect_q_tensors(out);
    collect_v_tensors(out);
  }

  std::vector<std::int64_t> meta() const {
    return {cfg.state_dim, cfg.action_dim, cfg.hidden, cfg.gru_layers,
            cfg.center_positions ? 1 : 0};
  }
};

inline void save_scheduler(SchedulerNets& nets, const std::string& path) {
  nn::save_params(nets, nets.meta(), path);
}

inline SchedulerNets load_scheduler(const std::string& path) {
  const std::vector<std::int64_t> meta = nn::load_param_meta(path);
  if (meta.size() != 5) {
    throw std::invalid_argument("load_scheduler: bad meta header in " + path);
  }
  IqlConfig cfg;
  cfg.state_dim = static_cast<int>(meta[0]);
  cfg.action_dim = static_cast<int>(meta[1]);
  cfg.hidden = static_cast<int>(meta[2]);
  cfg.gru_layers = static_cast<int>(meta[3]);
  cfg.center_positions = meta[4] != 0;
  std::mt19937_64 rng(0);
  SchedulerNets nets(cfg, rng);
  nn::load_params(path, &nets);
  return nets;
}

namespace detail {

// state and action-sequence inputs in the translation-reduced chart
inline Eigen::VectorXd centered_state(const IqlConfig& cfg,
                                      const Eigen::VectorXd& o) {
  Eigen::VectorXd s = o;
  if (cfg.center_positions) {
    s.head<3>().setZero();
  }
  return s;
}

inline Eigen::VectorXd centered_action(const IqlConfig& cfg,
                                       const Eigen::VectorXd& o,
                                       const Eigen::VectorXd& a) {
  Eigen::VectorXd out = a;
  if (cfg.center_positions) {
    out.head<3>() -= o.head<3>();
  }
  return out;
}

struct QCaches {
  nn::Mlp2Cache state;
  std::vector<std::vector<nn::GruCache>> gru;  // [t][layer]
  nn::Mlp2Cache fuse;
};

}  // namespace detail

/// Scalar Q for one (state, action-sequence) pair.
inline double q_value(const SchedulerNets& nets, const Eigen::VectorXd& o,
                      const std::vector<Eigen::VectorXd>& a_seq,
                      detail::QCaches* caches = nullptr) {
  if (o.size() != nets.cfg.state_dim) {
    throw std::invalid_argument("q_value: state dimension mismatch");
  }
  if (a_seq.empty()) {
    throw std::invalid_argument("q_value: empty action sequence");
  }
  const nn::Mat s(detail::centered_state(nets.cfg, o));
  const nn::Mat f_state = nn::mlp2_forward(
      nets.q_state, s, caches != nullptr ? &caches->state : nullptr);
  std::vector<nn::Mat> hidden(nets.q_gru.size(),
                              nn::Mat::Zero(nets.cfg.hidden, 1));
  if (caches != nullptr) {
    caches->gru.resize(a_seq.size());
  }
  for (std::size_t t = 0; t < a_seq.size(); ++t) {
    if (a_seq[t].size() != nets.cfg.action_dim) {
      throw std::invalid_argument("q_value: action dimension mismatch");
    }
    const nn::Mat x(detail::centered_action(nets.cfg, o, a_seq[t]));
    std::vector<nn::GruCache>* gc = nullptr;
    if (caches != nullptr) {
      caches->gru[t].resize(nets.q_gru.size());
      gc = &caches->gru[t];
    }
    const nn::Mat* input = &x;
    std::vector<nn::Mat> next(hidden.size());
    for (std::size_t l = 0; l < nets.q_gru.size(); ++l) {
      next[l] = nn::gru_forward(nets.q_gru[l], *input, hidden[l],
                                gc != nullptr ? &(*gc)[l] : nullptr);
      input = &next[l];
    }
    hidden = std::move(next);
  }
  nn::Mat fused(2 * nets.cfg.hidden, 1);
  fused.topRows(nets.cfg.hidden) = f_state;
  fused.bottomRows(nets.cfg.hidden) = hidden.back();
  const nn::Mat q = nn::mlp2_forward(
      nets.q_fuse, fused, caches != nullptr ? &caches->fuse : nullptr);
  return nets.cfg.value_scale * q(0, 0);
}

inline double v_value(const SchedulerNets& nets, const Eigen::VectorXd& o,
                      nn::Mlp2Cache* cache = nullptr) {
  if (o.size() != nets.cfg.state_dim) {
    throw std::invalid_argument("v_value: state dimension mismatch");
  }
  return nets.cfg.value_scale *
         nn::mlp2_forward(nets.v_net,
                          nn::Mat(detail::centered_state(nets.cfg, o)),
                          cache)(0, 0);
}

namespace detail {

// backward through one q_value evaluation; dq is dLoss/dQ
inline void q_backward(const SchedulerNets& nets, const Eigen::VectorXd& o,
                       const QCaches& caches, double dq,
                       SchedulerNets* grad) {
  nn::Mat dfused = nn::Mat::Zero(2 * nets.cfg.hidden, 1);
  nn::Mat dqm(1, 1);
  dqm(0, 0) = nets.cfg.value_scale * dq;
  nn::mlp2_backward(nets.q_fuse, caches.fuse, dqm, &grad->q_fuse, &dfused);

  nn::Mat dstate_feat = dfused.topRows(nets.cfg.hidden);
  nn::mlp2_backward(nets.q_state, caches.state, dstate_feat, &grad->q_state,
                    nullptr);

  std::vector<nn::Mat> dhidden(nets.q_gru.size(),
                               nn::Mat::Zero(nets.cfg.hidden, 1));
  dhidden.back() = dfused.bottomRows(nets.cfg.hidden);
  for (std::size_t t = caches.gru.size(); t-- > 0;) {
    for (std::size_t l = nets.q_gru.size(); l-- > 0;) {
      nn::Mat dx = nn::Mat::Zero(
          l == 0 ? nets.cfg.action_dim : nets.cfg.hidden, 1);
      nn::Mat dh_prev = nn::Mat::Zero(nets.cfg.hidden, 1);
      nn::gru_backward(nets.q_gru[l], caches.gru[t][l], dhidden[l],
                       &grad->q_gru[l], &dx, &dh_prev);
      dhidden[l] = dh_prev;
      if (l > 0) {
        dhidden[l - 1] += dx;
      }
    }
  }
}

}  // namespace detail

inline SchedulerNets zeros_like(const SchedulerNets& nets) {
  SchedulerNets z = nets;
  std::vector<nn::TensorRef> refs;
  z.collect_tensors(&refs);
  for (const nn::TensorRef& r : refs) {
    std::fill(r.data, r.data + r.size, 0.0);
  }
  return z;
}

struct IqlLosses {
  double loss_q{0.0};
  double loss_v{0.0};
};

/// Both Eq. 10 losses at the current parameters (no update); the TD target
/// is r' + gamma V(o') with V evaluated at the stored next state.
inline IqlLosses iql_losses(const SchedulerNets& nets,
                            const std::vector<SynthRecord>& batch,
                            const IqlConfig& cfg) {
  if (batch.empty()) {
    throw std::invalid_argument("iql_losses: empty batch");
  }
  IqlLosses out;
  for (const SynthRecord& rec : batch) {
    const double q = q_value(nets, rec.o, rec.a_seq);
    const double target = rec.r_prime + cfg.gamma * v_value(nets, rec.o_next);
    out.loss_q += (q - target) * (q - target);
    out.loss_v += expectile_loss(v_value(nets, rec.o) - q, cfg.expectile);
  }
  out.loss_q /= static_cast<double>(batch.size());
  out.loss_v /= static_cast<double>(batch.size());
  return out;
}

/// One gradient step on L_Q and one on L_V (Q detached for the V step),
/// both computed at the incoming parameters.
inline IqlLosses iql_update(SchedulerNets* nets,
                            const std::vector<SynthRecord>& batch,
                            const IqlConfig& cfg, nn::Adam* q_opt,
                            nn::Adam* v_opt) {
  if (batch.empty()) {
    throw std::invalid_argument("iql_update: empty batch");
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  SchedulerNets grad = zeros_like(*nets);
  IqlLosses losses;

  std::vector<double> q_vals(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SynthRecord& rec = batch[i];
    detail::QCaches caches;
    const double q = q_value(*nets, rec.o, rec.a_seq, &caches);
    q_vals[i] = q;
    const double target =
        rec.r_prime + cfg.gamma * v_value(*nets, rec.o_next);
    const double diff = q - target;
    losses.loss_q += diff * diff;
    detail::q_backward(*nets, rec.o, caches, 2.0 * inv_b * diff, &grad);
  }

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SynthRecord& rec = batch[i];
    nn::Mlp2Cache cache;
    const double v = v_value(*nets, rec.o, &cache);
    const double x = v - q_vals[i];
    losses.loss_v += expectile_loss(x, cfg.expectile);
    const double w = std::abs(cfg.expectile - (x < 0.0 ? 1.0 : 0.0));
    nn::Mat dv(1, 1);
    dv(0, 0) = 2.0 * inv_b * w * x * cfg.value_scale;
    nn::mlp2_backward(nets->v_net, cache, dv, &grad.v_net, nullptr);
  }
  losses.loss_q *= inv_b;
  losses.loss_v *= inv_b;
  if (!std::isfinite(losses.loss_q) || !std::isfinite(losses.loss_v)) {
    throw std::runtime_error("iql_update: training diverged (non-finite loss)");
  }

  // separate optimizer states for the two parameter groups
  auto step_group = [](auto collect, SchedulerNets* n, SchedulerNets* g,
                       nn::Adam* opt) {
    std::vector<nn::TensorRef> prefs, grefs;
    collect(n, &prefs);
    collect(g, &grefs);
    std::size_t total = 0;
    for (const auto& r : prefs) {
      total += r.size;
    }
    nn::Vec p(static_cast<Eigen::Index>(total)),
        gr(static_cast<Eigen::Index>(total));
    std::size_t at = 0;
    for (std::size_t i = 0; i < prefs.size(); ++i) {
      std::memcpy(p.data() + at, prefs[i].data, prefs[i].size * sizeof(double));
      std::memcpy(gr.data() + at, grefs[i].data,
                  grefs[i].size * sizeof(double));
      at += prefs[i].size;
    }
    opt->step(&p, gr);
    at = 0;
    for (const auto& r : prefs) {
      std::memcpy(r.data, p.data() + at, r.size * sizeof(double));
      at += r.size;
    }
  };
  step_group([](SchedulerNets* n,
                std::vector<nn::TensorRef>* o) { n->collect_q_tensors(o); },
             nets, &grad, q_opt);
  step_group([](SchedulerNets* n,
                std::vector<nn::TensorRef>* o) { n->collect_v_tensors(o); },
             nets, &grad, v_opt);
  return losses;
}

struct IqlTrainLog {
  std::vector<double> loss_q;
  std::vector<double> loss_v;
};

/// Shuffled-minibatch training to the step budget. Deterministic under seed.
inline SchedulerNets train_scheduler(const std::vector<SynthRecord>& records,
                                     const IqlConfig& cfg,
                                     IqlTrainLog* log = nullptr) {
  if (records.empty()) {
    throw std::invalid_argument("train_scheduler: empty dataset");
  }
  std::mt19937_64 rng(cfg.seed ^ 0xabcdef0123ull);
  SchedulerNets nets(cfg, rng);
  nn::Adam q_opt(cfg.learning_rate);
  nn::Adam v_opt(cfg.learning_rate);

  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::size_t cursor = order.size();
  for (int step = 0; step < cfg.train_steps; ++step) {
    if (step == (cfg.train_steps * 6) / 10 ||
        step == (cfg.train_steps * 85) / 100) {
      q_opt.lr *= cfg.lr_decay;
      v_opt.lr *= cfg.lr_decay;
    }
    std::vector<SynthRecord> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(records[order[cursor++]]);
    }
    const IqlLosses losses = iql_update(&nets, batch, cfg, &q_opt, &v_opt);
    if (log != nullptr) {
      log->loss_q.push_back(losses.loss_q);
      log->loss_v.push_back(losses.loss_v);
    }
  }
  return nets;
}

// ---------------------------------------------------------------------------
// Rate selection
// ---------------------------------------------------------------------------

/// Argmax over feasible rates with any Q functor; ties break toward the
/// smallest rate.
template <class QFn>
int select_rate_with(QFn&& q_fn, const ActionChunk& chunk, int k_min,
                     int k_max, bool compensate = true) {
  const int n = static_cast<int>(chunk.size());
  const int hi = std::min(k_max, n);
  if (k_min < 1 || k_min > hi) {
    throw std::invalid_argument("select_rate: no feasible rate");
  }
  int best_k = k_min;
  double best_q = -std::numeric_limits<double>::infinity();
  for (int k = k_min; k <= hi; ++k) {
    const ActionChunk accel = accelerated_chunk(chunk, k, compensate);
    const double q = q_fn(action_vectors(accel));
    if (q > best_q) {
      best_q = q;
      best_k = k;
    }
  }
  return best_k;
}

/// The learned scheduler's inference rule: argmax_k Q(o, A^k).
inline int select_rate(const SchedulerNets& nets, const Eigen::VectorXd& o,
                       const ActionChunk& chunk, int k_min, int k_max,
                       bool compensate = true) {
  return select_rate_with(
      [&](const std::vector<Eigen::VectorXd>& a_seq) {
        return q_value(nets, o, a_seq);
      },
      chunk, k_min, k_max, compensate);
}

/// Greedy baseline: the largest rate whose predicted deviation stays under
/// epsilon; k_min when every rate violates.
inline int mpc_select_rate(const RwmParams& wm, const Eigen::VectorXd& o,
                           const ActionChunk& chunk, int k_min, int k_max,
                           double epsilon, bool compensate = true) {
  const int n = static_cast<int>(chunk.size());
  const int hi = std::min(k_max, n);
  if (k_min < 1 || k_min > hi) {
    throw std::invalid_argument("mpc_select_rate: no feasible rate");
  }
  for (int k = hi; k > k_min; --k) {
    if (!violation(o, chunk, k, wm, epsilon, compensate).violated) {
      return k;
    }
  }
  return k_min;
}

}  // namespace sup
