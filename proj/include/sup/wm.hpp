#pragma once

// wm.hpp - Recurrent world model: a state encoder initializes the hidden
// state of a stacked GRU, the GRU evolves that hidden state through the
// action sequence alone, and a decoder reads each hidden state out to a
// predicted robot state. Predicted states are never fed back as inputs, so
// rollout error cannot compound through the observation path.
//
// Training minimizes the multi-step squared error over action sequences of
// variable length L in [1, L_max], covering every temporal scale a
// downsampling rate can produce. A one-shot MLP that maps (state, padded
// action sequence) to the final state ships alongside as the ablation
// baseline.

#include "sup/env.hpp"
#include "sup/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace sup {

struct RwmConfig {
  int state_dim{kStateDim};
  int action_dim{kActionDim};
  int hidden{256};   // paper-scale default; the desk config shrinks this
  int gru_layers{3};
  int l_max{24};
  // Work in a rollout-local chart: positions are expressed relative to the
  // conditioning state (and Abs action targets likewise). The toy dynamics
  // is translation-invariant, so this is pure normalization; it is undone
  // on the way out of predict.
  bool center_positions{true};
  bool abs_actions{true};
};

struct RwmParams {
  RwmConfig cfg;
  nn::Mlp2 encoder;                 // state -> hidden, tanh output
  std::vector<nn::GruLayer> gru;    // stacked layers, action input at layer 0
  nn::Mlp2 decoder;                 // hidden -> state, linear output

  RwmParams() = default;
  RwmParams(const RwmConfig& c, std::mt19937_64& rng)
      : cfg(c),
        encoder(c.state_dim, c.hidden, c.hidden, true, rng),
        decoder(c.hidden, c.hidden, c.state_dim, false, rng) {
    gru.reserve(static_cast<std::size_t>(c.gru_layers));
    for (int l = 0; l < c.gru_layers; ++l) {
      gru.emplace_back(c.hidden, l == 0 ? c.action_dim : c.hidden, rng);
    }
  }

  void collect_tensors(std::vector<nn::TensorRef>* out) {
    nn::collect(encoder, out);
    for (auto& layer : gru) {
      nn::collect(layer, out);
    }
    nn::collect(decoder, out);
  }

  std::vector<std::int64_t> meta() const {
    return {cfg.state_dim,      cfg.action_dim,
            cfg.hidden,         cfg.gru_layers,
            cfg.l_max,          cfg.center_positions ? 1 : 0,
            cfg.abs_actions ? 1 : 0};
  }
};

inline RwmParams zeros_like(const RwmParams& p) {
  RwmParams z = p;
  std::vector<nn::TensorRef> refs;
  z.collect_tensors(&refs);
  for (const nn::TensorRef& r : refs) {
    std::fill(r.data, r.data + r.size, 0.0);
  }
  return z;
}

inline void save_rwm(RwmParams& p, const std::string& path) {
  nn::save_params(p, p.meta(), path);
}

inline RwmParams load_rwm(const std::string& path) {
  const std::vector<std::int64_t> meta = nn::load_param_meta(path);
  if (meta.size() != 7) {
    throw std::invalid_argument("load_rwm: bad meta header in " + path);
  }
  RwmConfig cfg;
  cfg.state_dim = static_cast<int>(meta[0]);
  cfg.action_dim = static_cast<int>(meta[1]);
  cfg.hidden = static_cast<int>(meta[2]);
  cfg.gru_layers = static_cast<int>(meta[3]);
  cfg.l_max = static_cast<int>(meta[4]);
  cfg.center_positions = meta[5] != 0;
  cfg.abs_actions = meta[6] != 0;
  std::mt19937_64 rng(0);
  RwmParams p(cfg, rng);
  nn::load_params(path, &p);
  return p;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// Encodes a batch of state vectors (one per column) into the initial hidden
/// state shared by every GRU layer.
inline nn::Mat encode(const RwmParams& p, const nn::Mat& states,
                      nn::Mlp2Cache* cache = nullptr) {
  if (states.rows() != p.cfg.state_dim) {
    throw std::invalid_argument("encode: state dimension mismatch");
  }
  return nn::mlp2_forward(p.encoder, states, cache);
}

/// One stacked-GRU step on a batch of action vectors.
inline std::vector<nn::Mat> gru_step(const RwmParams& p,
                                     const std::vector<nn::Mat>& hidden,
                                     const nn::Mat& actions,
                                     std::vector<nn::GruCache>* caches) {
  if (actions.rows() != p.cfg.action_dim) {
    throw std::invalid_argument("gru_step: action dimension mismatch");
  }
  if (hidden.size() != p.gru.size()) {
    throw std::invalid_argument("gru_step: wrong hidden-layer count");
  }
  std::vector<nn::Mat> next(hidden.size());
  const nn::Mat* input = &actions;
  for (std::size_t l = 0; l < p.gru.size(); ++l) {
    nn::GruCache* c = caches != nullptr ? &(*caches)[l] : nullptr;
    next[l] = nn::gru_forward(p.gru[l], *input, hidden[l], c);
    input = &next[l];
  }
  return next;
}

/// Rolls the model through an action sequence; output i is the predicted
/// state after action i. The decoder output never feeds back into the
/// hidden-state evolution.
inline std::vector<Eigen::VectorXd> predict(
    const RwmParams& p, const Eigen::VectorXd& state,
    const std::vector<Eigen::VectorXd>& actions) {
  if (actions.empty()) {
    throw std::invalid_argument("predict: empty action sequence");
  }
  const Eigen::Vector3d origin = p.cfg.center_positions
                                     ? Eigen::Vector3d(state.head<3>())
                                     : Eigen::Vector3d::Zero();
  Eigen::VectorXd s0 = state;
  s0.head<3>() -= origin;
  std::vector<nn::Mat> hidden(p.gru.size(), encode(p, nn::Mat(s0)));
  std::vector<Eigen::VectorXd> out;
  out.reserve(actions.size());
  for (const Eigen::VectorXd& a : actions) {
    Eigen::VectorXd av = a;
    if (p.cfg.center_positions && p.cfg.abs_actions) {
      av.head<3>() -= origin;
    }
    hidden = gru_step(p, hidden, nn::Mat(av), nullptr);
    Eigen::VectorXd pred = nn::mlp2_forward(p.decoder, hidden.back(), nullptr);
    pred.head<3>() += origin;
    out.push_back(std::move(pred));
  }
  return out;
}

inline Trajectory predicted_trajectory(
    const std::vector<Eigen::VectorXd>& states) {
  Trajectory traj;
  traj.poses.reserve(states.size());
  for (const Eigen::VectorXd& s : states) {
    traj.poses.push_back(eef_pose_from_state(s));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// One training sample: start state, L actions, and the L observed states
/// they lead to.
struct WmSample {
  Eigen::VectorXd state;
  std::vector<Eigen::VectorXd> actions;
  std::vector<Eigen::VectorXd> targets;
};

using WmBatch = std::vector<WmSample>;

namespace detail {

// Groups sample indices by sequence length so each group runs as one
// batched unroll.
inline std::vector<std::vector<std::size_t>> bucket_by_length(
    const WmBatch& batch) {
  std::vector<std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t len = batch[i].actions.size();
    if (buckets.size() < len + 1) {
      buckets.resize(len + 1);
    }
    buckets[len].push_back(i);
  }
  return buckets;
}

struct UnrollCaches {
  nn::Mlp2Cache encoder;
  std::vector<std::vector<nn::GruCache>> gru;    // [t][layer]
  std::vector<nn::Mlp2Cache> decoder;             // [t]
  std::vector<std::vector<nn::Mat>> hidden;       // [t+1][layer]
};

// Forward over one equal-length group; returns summed squared error.
inline double unroll_forward(const RwmParams& p, const WmBatch& batch,
                             const std::vector<std::size_t>& idx,
                             UnrollCaches* caches, double* loss_acc) {
  const auto b = static_cast<Eigen::Index>(idx.size());
  const std::size_t len = batch[idx[0]].actions.size();
  nn::Mat states(p.cfg.state_dim, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    states.col(j) = batch[idx[static_cast<std::size_t>(j)]].state;
  }
  const nn::Mat h0 =
      encode(p, states, caches != nullptr ? &caches->encoder : nullptr);
  std::vector<nn::Mat> hidden(p.gru.size(), h0);
  if (caches != nullptr) {
    caches->gru.resize(len);
    caches->decoder.resize(len);
    caches->hidden.assign(1, hidden);
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    nn::Mat actions(p.cfg.action_dim, b);
    nn::Mat targets(p.cfg.state_dim, b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const WmSample& s = batch[idx[static_cast<std::size_t>(j)]];
      actions.col(j) = s.actions[t];
      targets.col(j) = s.targets[t];
    }
    std::vector<nn::GruCache>* gc = nullptr;
    if (caches != nullptr) {
      caches->gru[t].resize(p.gru.size());
      gc = &caches->gru[t];
    }
    hidden = gru_step(p, hidden, actions, gc);
    const nn::Mat pred = nn::mlp2_forward(
        p.decoder, hidden.back(),
        caches != nullptr ? &caches->decoder[t] : nullptr);
    loss += (pred - targets).squaredNorm();
    if (caches != nullptr) {
      caches->hidden.push_back(hidden);
    }
  }
  if (loss_acc != nullptr) {
    *loss_acc += loss;
  }
  return loss;
}

inline void unroll_backward(const RwmParams& p, const WmBatch& batch,
                            const std::vector<std::size_t>& idx,
                            const UnrollCaches& caches, double inv_batch,
                            RwmParams* grad) {
  const auto b = static_cast<Eigen::Index>(idx.size());
  const std::size_t len = batch[idx[0]].actions.size();
  std::vector<nn::Mat> dhidden(
      p.gru.size(), nn::Mat::Zero(p.cfg.hidden, b));
  for (std::size_t t = len; t-- > 0;) {
    nn::Mat targets(p.cfg.state_dim, b);
    for (Eigen::Index j = 0; j < b; ++j) {
      targets.col(j) = batch[idx[static_cast<std::size_t>(j)]].targets[t];
    }
    const nn::Mat dpred =
        2.0 * inv_batch * (caches.decoder[t].y - targets);
    nn::Mat dtop = nn::Mat::Zero(p.cfg.hidden, b);
    nn::mlp2_backward(p.decoder, caches.decoder[t], dpred, &grad->decoder,
                      &dtop);
    dhidden.back() += dtop;
    // stacked layers: d(input of layer l) flows into layer l-1's output
    for (std::size_t l = p.gru.size(); l-- > 0;) {
      nn::Mat dx = nn::Mat::Zero(l == 0 ? p.cfg.action_dim : p.cfg.hidden, b);
      nn::Mat dh_prev = nn::Mat::Zero(p.cfg.hidden, b);
      nn::gru_backward(p.gru[l], caches.gru[t][l], dhidden[l], &grad->gru[l],
                       &dx, &dh_prev);
      dhidden[l] = dh_prev;
      if (l > 0) {
        dhidden[l - 1] += dx;
      }
    }
  }
  // the encoder output initialized every layer
  nn::Mat dh0 = dhidden[0];
  for (std::size_t l = 1; l < p.gru.size(); ++l) {
    dh0 += dhidden[l];
  }
  nn::mlp2_backward(p.encoder, caches.encoder, dh0, &grad->encoder, nullptr);
}

}  // namespace detail

/// Mean over the batch of the summed per-step squared error.
inline double wm_loss(const RwmParams& p, const WmBatch& batch) {
  if (batch.empty()) {
    throw std::invalid_argument("wm_loss: empty batch");
  }
  double loss = 0.0;
  for (const auto& idx : detail::bucket_by_length(batch)) {
    if (!idx.empty()) {
      detail::unroll_forward(p, batch, idx, nullptr, &loss);
    }
  }
  return loss / static_cast<double>(batch.size());
}

/// Exact reverse-mode gradient of wm_loss; returns the loss value.
inline double wm_backward(const RwmParams& p, const WmBatch& batch,
                          RwmParams* grad) {
  if (batch.empty()) {
    throw std::invalid_argument("wm_backward: empty batch");
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& idx : detail::bucket_by_length(batch)) {
    if (idx.empty()) {
      continue;
    }
    detail::UnrollCaches caches;
    detail::unroll_forward(p, batch, idx, &caches, &loss);
    detail::unroll_backward(p, batch, idx, caches, inv_batch, grad);
  }
  if (!nn::all_finite(*grad)) {
    throw std::runtime_error("wm_backward: non-finite gradient");
  }
  return loss * inv_batch;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct WmTrainConfig {
  double learning_rate{1e-3};
  int batch_size{256};
  int max_steps{4000};
  int eval_every{200};
  int patience{6};           // eval rounds without held-out improvement
  double holdout_fraction{0.1};
  double lr_decay{0.3};      // applied at 60% and 85% of max_steps
  std::uint64_t seed{0};
  bool verbose{false};
};

struct EpisodeTensors {
  std::vector<Eigen::VectorXd> states;   // length + 1
  std::vector<Eigen::VectorXd> actions;  // length
};

inline EpisodeTensors episode_tensors(const Episode& ep) {
  EpisodeTensors out;
  out.states.reserve(ep.observations.size());
  for (const Observation& obs : ep.observations) {
    out.states.push_back(to_state_vector(obs));
  }
  for (const auto& [chunk, start] : ep.chunks) {
    for (const Action& a : chunk.actions) {
      out.actions.push_back(action_to_vector(a));
    }
  }
  out.actions.resize(static_cast<std::size_t>(ep.length));
  return out;
}

/// Builds a training sample in the model's rollout-local chart.
inline WmSample make_sample(const EpisodeTensors& ep, std::size_t t,
                            std::size_t len, const RwmConfig& cfg) {
  WmSample s;
  s.state = ep.states[t];
  const Eigen::Vector3d origin = cfg.center_positions
                                     ? Eigen::Vector3d(s.state.head<3>())
                                     : Eigen::Vector3d::Zero();
  s.state.head<3>() -= origin;
  for (std::size_t i = 0; i < len; ++i) {
    Eigen::VectorXd a = ep.actions[t + i];
    if (cfg.center_positions && cfg.abs_actions) {
      a.head<3>() -= origin;
    }
    s.actions.push_back(std::move(a));
    Eigen::VectorXd tgt = ep.states[t + i + 1];
    tgt.head<3>() -= origin;
    s.targets.push_back(std::move(tgt));
  }
  return s;
}

struct WmTrainLog {
  std::vector<double> train_loss;
  std::vector<double> holdout_loss;
  int steps_run{0};
};

/// Minibatch Adam on the multi-step loss with per-sample L drawn uniformly
/// from [1, L_max]. Deterministic under (data, config, seed). Early-stops
/// when the held-out loss stops improving.
inline RwmParams train_wm(const std::vector<Episode>& demos,
                          const RwmConfig& model_cfg,
                          const WmTrainConfig& train_cfg,
                          WmTrainLog* log = nullptr) {
  if (demos.empty()) {
    throw std::invalid_argument("train_wm: no demonstrations");
  }
  std::mt19937_64 rng(train_cfg.seed ^ 0x77aa55cc11ull);
  RwmParams params(model_cfg, rng);

  std::vector<EpisodeTensors> tensors;
  tensors.reserve(demos.size());
  for (const Episode& ep : demos) {
    tensors.push_back(episode_tensors(ep));
  }
  const std::size_t holdout =
      std::min(tensors.size() - 1,
               static_cast<std::size_t>(std::ceil(
                   train_cfg.holdout_fraction * tensors.size())));
  const std::size_t train_count = tensors.size() - holdout;

  // fixed probe set for the held-out loss
  WmBatch probe;
  if (holdout > 0) {
    std::mt19937_64 probe_rng(train_cfg.seed ^ 0x5151ull);
    std::uniform_int_distribution<std::size_t> pick_ep(train_count,
                                                       tensors.size() - 1);
    std::uniform_int_distribution<int> pick_len(1, model_cfg.l_max);
    for (int i = 0; i < 256; ++i) {
      const EpisodeTensors& ep = tensors[pick_ep(probe_rng)];
      const auto len = static_cast<std::size_t>(
          std::min<int>(pick_len(probe_rng),
                        static_cast<int>(ep.actions.size())));
      std::uniform_int_distribution<std::size_t> pick_t(
          0, ep.actions.size() - len);
      probe.push_back(make_sample(ep, pick_t(probe_rng), len, model_cfg));
    }
  }

  nn::Adam opt(train_cfg.learning_rate);
  double best_holdout = std::numeric_limits<double>::infinity();
  int rounds_since_best = 0;
  std::uniform_int_distribution<std::size_t> pick_ep(0, train_count - 1);
  std::uniform_int_distribution<int> pick_len(1, model_cfg.l_max);

  for (int step = 0; step < train_cfg.max_steps; ++step) {
    if (step == (train_cfg.max_steps * 6) / 10 ||
        step == (train_cfg.max_steps * 85) / 100) {
      opt.lr *= train_cfg.lr_decay;
    }
    WmBatch batch;
    batch.reserve(static_cast<std::size_t>(train_cfg.batch_size));
    for (int i = 0; i < train_cfg.batch_size; ++i) {
      const EpisodeTensors& ep = tensors[pick_ep(rng)];
      const auto len = static_cast<std::size_t>(std::min<int>(
          pick_len(rng), static_cast<int>(ep.actions.size())));
      std::uniform_int_distribution<std::size_t> pick_t(
          0, ep.actions.size() - len);
      batch.push_back(make_sample(ep, pick_t(rng), len, model_cfg));
    }
    RwmParams grad = zeros_like(params);
    const double loss = wm_backward(params, batch, &grad);
    if (log != nullptr) {
      log->train_loss.push_back(loss);
      log->steps_run = step + 1;
    }
    nn::Vec flat = nn::flatten(params);
    const nn::Vec gflat = nn::flatten(grad);
    opt.step(&flat, gflat);
    nn::unflatten(flat, &params);

    if (!probe.empty() && (step + 1) % train_cfg.eval_every == 0) {
      const double hl = wm_loss(params, probe);
      if (log != nullptr) {
        log->holdout_loss.push_back(hl);
      }
      if (train_cfg.verbose) {
        std::fprintf(stderr, "[wm] step %d train %.3e holdout %.3e\n",
                     step + 1, loss, hl);
      }
      if (hl < best_holdout * 0.999) {
        best_holdout = hl;
        rounds_since_best = 0;
      } else if (++rounds_since_best >= train_cfg.patience) {
        break;  // normal early stop
      }
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// One-shot MLP baseline (ablation)
// ---------------------------------------------------------------------------

struct MlpWmParams {
  RwmConfig cfg;  // shares dims; hidden is the MLP width
  nn::Mlp2 net;

  MlpWmParams() = default;
  MlpWmParams(const RwmConfig& c, std::mt19937_64& rng)
      : cfg(c),
        net(c.state_dim + c.l_max * c.action_dim, 2 * c.hidden, c.state_dim,
            false, rng) {}

  void collect_tensors(std::vector<nn::TensorRef>* out) {
    nn::collect(net, out);
  }
};

inline Eigen::VectorXd mlp_wm_input(const RwmConfig& cfg,
                                    const Eigen::VectorXd& state,
                                    const std::vector<Eigen::VectorXd>& acts) {
  const Eigen::Vector3d origin = cfg.center_positions
                                     ? Eigen::Vector3d(state.head<3>())
                                     : Eigen::Vector3d::Zero();
  Eigen::VectorXd x =
      Eigen::VectorXd::Zero(cfg.state_dim + cfg.l_max * cfg.action_dim);
  x.head(cfg.state_dim) = state;
  x.head<3>() -= origin;
  const std::size_t n =
      std::min<std::size_t>(acts.size(), static_cast<std::size_t>(cfg.l_max));
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Index at =
        cfg.state_dim + static_cast<Eigen::Index>(i) * cfg.action_dim;
    x.segment(at, cfg.action_dim) = acts[i];
    if (cfg.center_positions && cfg.abs_actions) {
      x.segment<3>(at) -= origin;
    }
  }
  return x;
}

/// One-shot prediction of the final state only.
inline Eigen::VectorXd predict_mlp(const MlpWmParams& p,
                                   const Eigen::VectorXd& state,
                                   const std::vector<Eigen::VectorXd>& acts) {
  Eigen::VectorXd out = nn::mlp2_forward(
      p.net, nn::Mat(mlp_wm_input(p.cfg, state, acts)), nullptr);
  if (p.cfg.center_positions) {
    out.head<3>() += state.head<3>();
  }
  return out;
}

/// Same sampling scheme as train_wm, terminal-state squared error.
inline MlpWmParams train_mlp_wm(const std::vector<Episode>& demos,
                                const RwmConfig& model_cfg,
                                const WmTrainConfig& train_cfg) {
  if (demos.empty()) {
    throw std::invalid_argument("train_mlp_wm: no demonstrations");
  }
  std::mt19937_64 rng(train_cfg.seed ^ 0x99ee33ull);
  MlpWmParams params(model_cfg, rng);
  std::vector<EpisodeTensors> tensors;
  for (const Episode& ep : demos) {
    tensors.push_back(episode_tensors(ep));
  }
  nn::Adam opt(train_cfg.learning_rate);
  std::uniform_int_distribution<std::size_t> pick_ep(0, tensors.size() - 1);
  std::uniform_int_distribution<int> pick_len(1, model_cfg.l_max);
  const Eigen::Index in_dim = params.net.l1.W.cols();
  for (int step = 0; step < train_cfg.max_steps; ++step) {
    if (step == (train_cfg.max_steps * 6) / 10 ||
        step == (train_cfg.max_steps * 85) / 100) {
      opt.lr *= train_cfg.lr_decay;
    }
    const auto b = static_cast<Eigen::Index>(train_cfg.batch_size);
    nn::Mat x(in_dim, b);
    nn::Mat target(model_cfg.state_dim, b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const EpisodeTensors& ep = tensors[pick_ep(rng)];
      const auto len = static_cast<std::size_t>(std::min<int>(
          pick_len(rng), static_cast<int>(ep.actions.size())));
      std::uniform_int_distribution<std::size_t> pick_t(
          0, ep.actions.size() - len);
      const std::size_t t = pick_t(rng);
      std::vector<Eigen::VectorXd> acts(ep.actions.begin() + t,
                                        ep.actions.begin() + t + len);
      x.col(j) = mlp_wm_input(model_cfg, ep.states[t], acts);
      target.col(j) = ep.states[t + len];
      if (model_cfg.center_positions) {
        target.col(j).head<3>() -= ep.states[t].head<3>();
      }
    }
    nn::Mlp2Cache cache;
    const nn::Mat pred = nn::mlp2_forward(params.net, x, &cache);
    const nn::Mat dpred = (2.0 / static_cast<double>(b)) * (pred - target);
    MlpWmParams grad = params;
    {
      std::vector<nn::TensorRef> refs;
      grad.collect_tensors(&refs);
      for (const nn::TensorRef& r : refs) {
        std::fill(r.data, r.data + r.size, 0.0);
      }
    }
    nn::mlp2_backward(params.net, cache, dpred, &grad.net, nullptr);
    nn::Vec flat = nn::flatten(params);
    const nn::Vec gflat = nn::flatten(grad);
    opt.step(&flat, gflat);
    nn::unflatten(flat, &params);
  }
  return params;
}

}  // namespace sup
