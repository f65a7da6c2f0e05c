#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ebmdiv/errors.hpp"
#include "ebmdiv/matrix.hpp"
#include "ebmdiv/rng.hpp"

namespace ebmdiv {

enum class Activation { relu, identity };

// relu subgradient at 0 is 0
inline double activate(Activation a, double z) {
  return a == Activation::relu ? (z > 0.0 ? z : 0.0) : z;
}
inline double activate_grad(Activation a, double z) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

struct DenseLayer {
  Matrix w;               // in x out
  std::vector<double> b;  // out
  Activation act = Activation::relu;
};

// Fully-connected network; a stack of dense layers applied left to right.
struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().w.rows(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().w.cols(); }
  bool empty() const { return layers.empty(); }
};

inline std::size_t param_count(const Mlp& net) {
  std::size_t n = 0;
  for (const auto& l : net.layers) n += l.w.size() + l.b.size();
  return n;
}

inline void flatten_params(const Mlp& net, double* out) {
  for (const auto& l : net.layers) {
    for (std::size_t i = 0; i < l.w.size(); ++i) *out++ = l.w.data()[i];
    for (double v : l.b) *out++ = v;
  }
}

inline void unflatten_params(Mlp& net, const double* in) {
  for (auto& l : net.layers) {
    for (std::size_t i = 0; i < l.w.size(); ++i) l.w.data()[i] = *in++;
    for (double& v : l.b) v = *in++;
  }
}

// Uniform(-sqrt(6/(fan_in+fan_out))) weights, zero biases.
inline Mlp make_mlp(std::size_t in_dim, const std::vector<std::size_t>& dims,
                    const std::vector<Activation>& acts, Rng& rng) {
  if (dims.size() != acts.size())
    throw ContractError("make_mlp: dims/acts length mismatch");
  Mlp net;
  std::size_t prev = in_dim;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    DenseLayer layer;
    layer.w = Matrix(prev, dims[l]);
    layer.b.assign(dims[l], 0.0);
    layer.act = acts[l];
    const double s = std::sqrt(6.0 / static_cast<double>(prev + dims[l]));
    for (std::size_t i = 0; i < layer.w.size(); ++i)
      layer.w.data()[i] = rng.uniform(-s, s);
    net.layers.push_back(std::move(layer));
    prev = dims[l];
  }
  return net;
}

// The input->H->H->D feature extractor; relu on every layer, so features
// are nonnegative.
inline Mlp make_feature_mlp(std::size_t in_dim, std::size_t hidden,
                            std::size_t d, Rng& rng) {
  return make_mlp(in_dim, {hidden, hidden, d},
                  {Activation::relu, Activation::relu, Activation::relu}, rng);
}

// Forward-pass cache consumed by mlp_backward.
struct MlpCache {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activations per layer
  std::vector<Matrix> post;  // activations per layer
};

namespace detail {

inline void add_bias(Matrix& z, const std::vector<double>& b) {
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double* zi = z.data() + i * z.cols();
    for (std::size_t j = 0; j < z.cols(); ++j) zi[j] += b[j];
  }
}

inline void apply_activation(const Matrix& z, Activation act, Matrix& a) {
  if (a.rows() != z.rows() || a.cols() != z.cols())
    a = Matrix(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i)
    a.data()[i] = activate(act, z.data()[i]);
}

}  // namespace detail

inline Matrix mlp_forward(const Mlp& net, const Matrix& x,
                          MlpCache* cache = nullptr) {
  require_shape(x.cols() == net.in_dim(), "mlp_forward input dim");
  if (cache) {
    cache->input = x;
    cache->pre.resize(net.layers.size());
    cache->post.resize(net.layers.size());
    const Matrix* below = &cache->input;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      const auto& l = net.layers[li];
      Matrix& z = cache->pre[li];
      matmul_into(*below, l.w, z);
      detail::add_bias(z, l.b);
      detail::apply_activation(z, l.act, cache->post[li]);
      below = &cache->post[li];
    }
    return net.layers.empty() ? x : cache->post.back();
  }
  Matrix a = x;
  Matrix z;
  for (const auto& l : net.layers) {
    matmul_into(a, l.w, z);
    detail::add_bias(z, l.b);
    detail::apply_activation(z, l.act, a);
  }
  return a;
}

struct MlpGrads {
  std::vector<Matrix> gw;
  std::vector<std::vector<double>> gb;
  Matrix ginput;
};

inline MlpGrads make_zero_grads(const Mlp& net) {
  MlpGrads g;
  for (const auto& l : net.layers) {
    g.gw.emplace_back(l.w.rows(), l.w.cols());
    g.gb.emplace_back(l.b.size(), 0.0);
  }
  return g;
}

// resets grads to zero, reusing storage when the shapes already match
inline void ensure_zero_grads(const Mlp& net, MlpGrads& g) {
  if (g.gw.size() != net.layers.size()) {
    g = make_zero_grads(net);
    return;
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (g.gw[l].rows() != net.layers[l].w.rows() ||
        g.gw[l].cols() != net.layers[l].w.cols() ||
        g.gb[l].size() != net.layers[l].b.size()) {
      g = make_zero_grads(net);
      return;
    }
  }
  for (auto& gw : g.gw) gw.fill(0.0);
  for (auto& gb : g.gb) gb.assign(gb.size(), 0.0);
}

inline void flatten_grads(const MlpGrads& g, double* out) {
  for (std::size_t l = 0; l < g.gw.size(); ++l) {
    for (std::size_t i = 0; i < g.gw[l].size(); ++i) *out++ = g.gw[l].data()[i];
    for (double v : g.gb[l]) *out++ = v;
  }
}

inline void check_cache(const Mlp& net, const MlpCache& cache) {
  if (cache.pre.size() != net.layers.size() ||
      cache.post.size() != net.layers.size() ||
      cache.input.cols() != net.in_dim())
    throw ContractError("mlp_backward: cache does not match network");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (cache.pre[l].cols() != net.layers[l].w.cols() ||
        cache.pre[l].rows() != cache.input.rows())
      throw ContractError("mlp_backward: stale cache shape");
  }
}

// Accumulates parameter gradients into grads; the gradient w.r.t. the
// network input lands in grads.ginput (overwritten). top is the index of
// the layer whose output receives upstream; layers above it are untouched,
// which is how the regularizer taps an intermediate activation.
inline void mlp_backward_from(const Mlp& net, const MlpCache& cache,
                              const Matrix& upstream, std::size_t top,
                              MlpGrads& grads) {
  check_cache(net, cache);
  if (top >= net.layers.size())
    throw ContractError("mlp_backward_from: bad tap layer");
  require_shape(upstream.rows() == cache.input.rows() &&
                    upstream.cols() == net.layers[top].w.cols(),
                "mlp_backward upstream");
  Matrix da = upstream;
  Matrix dz, da_next, wt;
  for (std::size_t li = top + 1; li-- > 0;) {
    const auto& l = net.layers[li];
    const Matrix& z = cache.pre[li];
    if (dz.rows() != da.rows() || dz.cols() != da.cols())
      dz = Matrix(da.rows(), da.cols());
    for (std::size_t i = 0; i < dz.size(); ++i)
      dz.data()[i] = da.data()[i] * activate_grad(l.act, z.data()[i]);
    const Matrix& below = (li == 0) ? cache.input : cache.post[li - 1];
    matmul_tn_acc(below, dz, grads.gw[li]);
    for (std::size_t i = 0; i < dz.rows(); ++i) {
      const double* ri = dz.data() + i * dz.cols();
      for (std::size_t j = 0; j < dz.cols(); ++j) grads.gb[li][j] += ri[j];
    }
    wt = transpose(l.w);  // da_next = dz * w^T via the vectorizing kernel
    matmul_into(dz, wt, da_next);
    std::swap(da, da_next);
  }
  grads.ginput = std::move(da);
}

inline void mlp_backward_acc(const Mlp& net, const MlpCache& cache,
                             const Matrix& upstream, MlpGrads& grads) {
  mlp_backward_from(net, cache, upstream, net.layers.size() - 1, grads);
}

inline MlpGrads mlp_backward(const Mlp& net, const MlpCache& cache,
                             const Matrix& upstream) {
  MlpGrads g = make_zero_grads(net);
  mlp_backward_acc(net, cache, upstream, g);
  return g;
}

}  // namespace ebmdiv
