#pragma once

// nn.hpp - Minimal dense-network machinery: linear layers, two-layer tanh
// MLPs, stacked GRU cells, Adam, and flat-binary parameter files.
//
// Everything is batched column-wise (one sample per column) and written with
// explicit reverse-mode backward passes; the gradient of every operation is
// exact, which the finite-difference suites rely on. No threading, no
// hidden state: forward passes return caches that backward passes consume.

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sup::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat sigmoid(const Mat& x) {
  return ((-x.array()).exp() + 1.0).inverse().matrix();
}

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Mat init_matrix(Eigen::Index rows, Eigen::Index cols,
                       std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = u(rng);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Linear + two-layer MLP
// ---------------------------------------------------------------------------

struct Linear {
  Mat W;
  Vec b;

  Linear() = default;
  Linear(Eigen::Index out, Eigen::Index in, std::mt19937_64& rng)
      : W(init_matrix(out, in, rng)), b(Vec::Zero(out)) {}

  Mat forward(const Mat& x) const { return (W * x).colwise() + b; }
};

inline void linear_backward(const Linear& lin, const Mat& x, const Mat& dy,
                            Linear* grad, Mat* dx) {
  grad->W.noalias() += dy * x.transpose();
  grad->b.noalias() += dy.rowwise().sum();
  if (dx != nullptr) {
    dx->noalias() += lin.W.transpose() * dy;
  }
}

/// Two-layer MLP with tanh hidden activation; output tanh optional.
struct Mlp2 {
  Linear l1, l2;
  bool tanh_out{false};

  Mlp2() = default;
  Mlp2(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, bool tanh_output,
       std::mt19937_64& rng)
      : l1(hidden, in, rng), l2(out, hidden, rng), tanh_out(tanh_output) {}
};

struct Mlp2Cache {
  Mat x;   // input
  Mat a1;  // post-tanh hidden
  Mat y;   // output (post-tanh if tanh_out)
};

inline Mat mlp2_forward(const Mlp2& mlp, const Mat& x, Mlp2Cache* cache) {
  Mat a1 = mlp.l1.forward(x).array().tanh().matrix();
  Mat y = mlp.l2.forward(a1);
  if (mlp.tanh_out) {
    y = y.array().tanh().matrix();
  }
  if (cache != nullptr) {
    cache->x = x;
    cache->a1 = std::move(a1);
    cache->y = y;
  }
  return y;
}

inline void mlp2_backward(const Mlp2& mlp, const Mlp2Cache& cache, Mat dy,
                          Mlp2* grad, Mat* dx) {
  if (mlp.tanh_out) {
    dy = (dy.array() * (1.0 - cache.y.array().square())).matrix();
  }
  Mat da1 = Mat::Zero(cache.a1.rows(), cache.a1.cols());
  linear_backward(mlp.l2, cache.a1, dy, &grad->l2, &da1);
  const Mat dz1 = (da1.array() * (1.0 - cache.a1.array().square())).matrix();
  linear_backward(mlp.l1, cache.x, dz1, &grad->l1, dx);
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

// z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
// c = tanh(Wn x + r.(Un h) + bn), h' = (1-z).h + z.c
struct GruLayer {
  Mat Wz, Uz, Wr, Ur, Wn, Un;
  Vec bz, br, bn;

  GruLayer() = default;
  GruLayer(Eigen::Index hidden, Eigen::Index in, std::mt19937_64& rng)
      : Wz(init_matrix(hidden, in, rng)),
        Uz(init_matrix(hidden, hidden, rng)),
        Wr(init_matrix(hidden, in, rng)),
        Ur(init_matrix(hidden, hidden, rng)),
        Wn(init_matrix(hidden, in, rng)),
        Un(init_matrix(hidden, hidden, rng)),
        bz(Vec::Zero(hidden)),
        br(Vec::Zero(hidden)),
        bn(Vec::Zero(hidden)) {}
};

struct GruCache {
  Mat x, h;       // inputs
  Mat z, r, c;    // gate activations
  Mat uh;         // Un * h
  Mat h_next;
};

inline Mat gru_forward(const GruLayer& g, const Mat& x, const Mat& h,
                       GruCache* cache) {
  Mat z = sigmoid(((g.Wz * x + g.Uz * h).colwise() + g.bz));
  Mat r = sigmoid(((g.Wr * x + g.Ur * h).colwise() + g.br));
  Mat uh = g.Un * h;
  Mat c = (((g.Wn * x).array() + r.array() * uh.array()).colwise() +
           g.bn.array())
              .tanh()
              .matrix();
  Mat h_next =
      ((1.0 - z.array()) * h.array() + z.array() * c.array()).matrix();
  if (cache != nullptr) {
    cache->x = x;
    cache->h = h;
    cache->z = z;
    cache->r = r;
    cache->c = c;
    cache->uh = std::move(uh);
    cache->h_next = h_next;
  }
  return h_next;
}

inline void gru_backward(const GruLayer& g, const GruCache& cache,
                         const Mat& dh_next, GruLayer* grad, Mat* dx,
                         Mat* dh) {
  const auto& z = cache.z.array();
  const auto& r = cache.r.array();
  const auto& c = cache.c.array();
  const auto& h = cache.h.array();

  const Mat dz = (dh_next.array() * (c - h)).matrix();
  const Mat dc = (dh_next.array() * z).matrix();
  Mat dh_acc = (dh_next.array() * (1.0 - z)).matrix();

  const Mat da = (dc.array() * (1.0 - c.square())).matrix();
  grad->Wn.noalias() += da * cache.x.transpose();
  grad->bn.noalias() += da.rowwise().sum();
  const Mat dr = (da.array() * cache.uh.array()).matrix();
  const Mat duh = (da.array() * r).matrix();
  grad->Un.noalias() += duh * cache.h.transpose();
  dh_acc.noalias() += g.Un.transpose() * duh;

  const Mat dzpre = (dz.array() * z * (1.0 - z)).matrix();
  grad->Wz.noalias() += dzpre * cache.x.transpose();
  grad->Uz.noalias() += dzpre * cache.h.transpose();
  grad->bz.noalias() += dzpre.rowwise().sum();
  dh_acc.noalias() += g.Uz.transpose() * dzpre;

  const Mat drpre = (dr.array() * r * (1.0 - r)).matrix();
  grad->Wr.noalias() += drpre * cache.x.transpose();
  grad->Ur.noalias() += drpre * cache.h.transpose();
  grad->br.noalias() += drpre.rowwise().sum();
  dh_acc.noalias() += g.Ur.transpose() * drpre;

  if (dx != nullptr) {
    dx->noalias() += g.Wz.transpose() * dzpre;
    dx->noalias() += g.Wr.transpose() * drpre;
    dx->noalias() += g.Wn.transpose() * da;
  }
  if (dh != nullptr) {
    *dh += dh_acc;
  }
}

// ---------------------------------------------------------------------------
// Flat parameter access
// ---------------------------------------------------------------------------

struct TensorRef {
  double* data;
  std::size_t size;
};

inline void collect(Linear& l, std::vector<TensorRef>* out) {
  out->push_back({l.W.data(), static_cast<std::size_t>(l.W.size())});
  out->push_back({l.b.data(), static_cast<std::size_t>(l.b.size())});
}

inline void collect(Mlp2& m, std::vector<TensorRef>* out) {
  collect(m.l1, out);
  collect(m.l2, out);
}

inline void collect(GruLayer& g, std::vector<TensorRef>* out) {
  for (Mat* m : {&g.Wz, &g.Uz, &g.Wr, &g.Ur, &g.Wn, &g.Un}) {
    out->push_back({m->data(), static_cast<std::size_t>(m->size())});
  }
  for (Vec* v : {&g.bz, &g.br, &g.bn}) {
    out->push_back({v->data(), static_cast<std::size_t>(v->size())});
  }
}

template <class Net>
std::size_t param_count(Net& net) {
  std::vector<TensorRef> refs;
  net.collect_tensors(&refs);
  std::size_t n = 0;
  for (const TensorRef& r : refs) {
    n += r.size;
  }
  return n;
}

template <class Net>
Vec flatten(Net& net) {
  std::vector<TensorRef> refs;
  net.collect_tensors(&refs);
  std::size_t n = 0;
  for (const TensorRef& r : refs) {
    n += r.size;
  }
  Vec out(static_cast<Eigen::Index>(n));
  std::size_t at = 0;
  for (const TensorRef& r : refs) {
    std::memcpy(out.data() + at, r.data, r.size * sizeof(double));
    at += r.size;
  }
  return out;
}

template <class Net>
void unflatten(const Vec& flat, Net* net) {
  std::vector<TensorRef> refs;
  net->collect_tensors(&refs);
  std::size_t at = 0;
  for (const TensorRef& r : refs) {
    if (at + r.size > static_cast<std::size_t>(flat.size())) {
      throw std::invalid_argument("unflatten: flat vector too short");
    }
    std::memcpy(r.data, flat.data() + at, r.size * sizeof(double));
    at += r.size;
  }
  if (at != static_cast<std::size_t>(flat.size())) {
    throw std::invalid_argument("unflatten: flat vector size mismatch");
  }
}

template <class Net>
bool all_finite(Net& net) {
  std::vector<TensorRef> refs;
  net.collect_tensors(&refs);
  for (const TensorRef& r : refs) {
    for (std::size_t i = 0; i < r.size; ++i) {
      if (!std::isfinite(r.data[i])) {
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct Adam {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  Vec m, v;
  long t{0};

  explicit Adam(double learning_rate = 1e-3) : lr(learning_rate) {}

  void step(Vec* params, const Vec& grad) {
    if (m.size() != grad.size()) {
      m = Vec::Zero(grad.size());
      v = Vec::Zero(grad.size());
      t = 0;
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = (beta2 * v.array() + (1.0 - beta2) * grad.array().square()).matrix();
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params->array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
};

// ---------------------------------------------------------------------------
// Parameter files: magic, version, meta ints, tensor sizes, raw doubles
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kParamMagic = 0x53555057;  // "SUPW"
inline constexpr std::uint32_t kParamVersion = 1;

template <class Net>
void save_params(Net& net, const std::vector<std::int64_t>& meta,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("save_params: cannot open " + path);
  }
  auto put32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put32(kParamMagic);
  put32(kParamVersion);
  put32(static_cast<std::uint32_t>(meta.size()));
  for (std::int64_t v : meta) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  std::vector<TensorRef> refs;
  net.collect_tensors(&refs);
  put32(static_cast<std::uint32_t>(refs.size()));
  for (const TensorRef& r : refs) {
    const std::uint64_t sz = r.size;
    out.write(reinterpret_cast<const char*>(&sz), sizeof(sz));
  }
  for (const TensorRef& r : refs) {
    out.write(reinterpret_cast<const char*>(r.data),
              static_cast<std::streamsize>(r.size * sizeof(double)));
  }
  if (!out) {
    throw std::runtime_error("save_params: write failed for " + path);
  }
}

/// Reads the meta header only.
inline std::vector<std::int64_t> load_param_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_param_meta: cannot open " + path);
  }
  std::uint32_t magic = 0, version = 0, nmeta = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || magic != kParamMagic) {
    throw std::invalid_argument("load_param_meta: not a parameter file: " +
                                path);
  }
  if (version != kParamVersion) {
    throw std::invalid_argument("load_param_meta: unsupported version");
  }
  in.read(reinterpret_cast<char*>(&nmeta), sizeof(nmeta));
  std::vector<std::int64_t> meta(nmeta);
  for (auto& v : meta) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
  }
  if (!in) {
    throw std::invalid_argument("load_param_meta: truncated header");
  }
  return meta;
}

/// Fills an already-shaped net; shape mismatch is an error.
template <class Net>
void load_params(const std::string& path, Net* net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_params: cannot open " + path);
  }
  std::uint32_t magic = 0, version = 0, nmeta = 0, ntensors = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || magic != kParamMagic) {
    throw std::invalid_argument("load_params: not a parameter file: " + path);
  }
  if (version != kParamVersion) {
    throw std::invalid_argument("load_params: unsupported version");
  }
  in.read(reinterpret_cast<char*>(&nmeta), sizeof(nmeta));
  in.seekg(static_cast<std::streamoff>(nmeta) * sizeof(std::int64_t),
           std::ios::cur);
  in.read(reinterpret_cast<char*>(&ntensors), sizeof(ntensors));
  std::vector<TensorRef> refs;
  net->collect_tensors(&refs);
  if (!in || ntensors != refs.size()) {
    throw std::invalid_argument("load_params: tensor count mismatch in " +
                                path);
  }
  std::vector<std::uint64_t> sizes(ntensors);
  for (auto& s : sizes) {
    in.read(reinterpret_cast<char*>(&s), sizeof(s));
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (sizes[i] != refs[i].size) {
      throw std::invalid_argument("load_params: tensor shape mismatch in " +
                                  path);
    }
  }
  for (const TensorRef& r : refs) {
    in.read(reinterpret_cast<char*>(r.data),
            static_cast<std::streamsize>(r.size * sizeof(double)));
  }
  if (!in) {
    throw std::invalid_argument("load_params: truncated tensor data in " +
                                path);
  }
}

}  // namespace sup::nn
