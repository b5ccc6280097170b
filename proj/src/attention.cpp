#include "esppct/attention.hpp"

#include <algorithm>
#include <cmath>

#include "esppct/error.hpp"

namespace esppct {

NeighborIndex knn_neighbors(std::span<const std::array<double, 3>> positions, std::size_t k_nn) {
  if (positions.empty()) throw UsageError("knn_neighbors: empty frame");
  if (k_nn == 0) throw UsageError("knn_neighbors: k_nn must be >= 1");
  const std::size_t n = positions.size();
  NeighborIndex out;
  out.k = std::min(k_nn, n);
  out.flat.reserve(n * out.k);

  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double d = positions[i][a] - positions[j][a];
        d2 += d * d;
      }
      dist[j] = {d2, j};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(out.k), dist.end());
    const auto self = std::find_if(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(out.k),
                                   [i](const auto& e) { return e.second == i; });
    // Coincident points with lower indices can crowd out i; i has distance 0
    // so it belongs in the list, replacing the last entry.
    if (self == dist.begin() + static_cast<std::ptrdiff_t>(out.k)) {
      dist[out.k - 1] = {0.0, i};
      std::sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(out.k));
    }
    for (std::size_t r = 0; r < out.k; ++r) out.flat.push_back(dist[r].second);
  }
  return out;
}

NeighborIndex knn_neighbors(const Frame& frame, std::size_t k_nn) {
  std::vector<std::array<double, 3>> pos;
  pos.reserve(frame.points.size());
  for (const Point& p : frame.points) pos.push_back(p.position());
  return knn_neighbors(pos, k_nn);
}

void validate(const AttentionConfig& cfg) {
  if (cfg.depth == 0) throw UsageError("attention: depth must be >= 1");
  if (cfg.d_attention == 0) throw UsageError("attention: d_attention must be >= 1");
  if (cfg.k_nn == 0) throw UsageError("attention: k_nn must be >= 1");
  if (cfg.gamma_layers == 0 || cfg.delta_layers == 0) {
    throw UsageError("attention: gamma_layers and delta_layers must be >= 1");
  }
}

void validate(const VectorAttentionLayer& l) {
  for (const LinearParams* p : {&l.phi, &l.psi, &l.alpha}) validate(*p);
  validate(l.gamma);
  validate(l.delta);
  const std::size_t d = l.d_attention();
  if (l.psi.in() != l.d_in() || l.alpha.in() != l.d_in()) throw UsageError("attention: input widths differ");
  if (l.psi.out() != d || l.alpha.out() != d) throw UsageError("attention: output widths differ");
  if (l.gamma.layers.empty() || l.gamma.layers.front().in() != d || l.gamma.layers.back().out() != d) {
    throw UsageError("attention: gamma must map d_attention -> d_attention");
  }
  if (l.delta.layers.empty() || l.delta.layers.front().in() != 3 || l.delta.layers.back().out() != d) {
    throw UsageError("attention: delta must map 3 -> d_attention");
  }
}

VectorAttentionLayer init_attention_layer(std::size_t d_in, const AttentionConfig& cfg, Rng& rng) {
  validate(cfg);
  const std::size_t d = cfg.d_attention;
  VectorAttentionLayer l;
  l.phi = init_linear(d_in, d, rng);
  l.psi = init_linear(d_in, d, rng);
  l.alpha = init_linear(d_in, d, rng);
  std::vector<std::size_t> gw(cfg.gamma_layers + 1, d);
  l.gamma = init_mlp(gw, cfg.activation, rng);
  std::vector<std::size_t> dw(cfg.delta_layers + 1, d);
  dw[0] = 3;
  l.delta = init_mlp(dw, cfg.activation, rng);
  return l;
}

std::vector<VectorAttentionLayer> init_attention_stack(const AttentionConfig& cfg, Rng& rng) {
  std::vector<VectorAttentionLayer> layers;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    layers.push_back(init_attention_layer(i == 0 ? kPointFeatures : cfg.d_attention, cfg, rng));
  }
  return layers;
}

std::vector<double> incoming_attention_mass(const Tensor2& weights, const NeighborIndex& nbrs) {
  const std::size_t n = nbrs.points();
  if (weights.rows != nbrs.flat.size()) throw UsageError("attention mass: weights/neighbor mismatch");
  std::vector<double> mass(n, 0.0);
  const double inv = weights.cols ? 1.0 / static_cast<double>(weights.cols) : 0.0;
  for (std::size_t row = 0; row < nbrs.flat.size(); ++row) {
    double s = 0.0;
    for (double w : weights.row(row)) s += w;
    mass[nbrs.flat[row]] += s * inv;
  }
  return mass;
}

// ---------------------------------------------------------------------------

Tensor2 frame_features(const Frame& frame) {
  Tensor2 x(frame.points.size(), kPointFeatures);
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto f = frame.points[i].features();
    std::copy(f.begin(), f.end(), x.row(i).begin());
  }
  return x;
}

Tensor2 frame_positions(const Frame& frame) {
  Tensor2 p(frame.points.size(), 3);
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    p(i, 0) = frame.points[i].x;
    p(i, 1) = frame.points[i].y;
    p(i, 2) = frame.points[i].z;
  }
  return p;
}

AttentionLayerVars constant_attention_layer(Tape& t, const VectorAttentionLayer& layer) {
  validate(layer);
  return {constant_linear(t, layer.phi), constant_linear(t, layer.psi), constant_linear(t, layer.alpha),
          constant_mlp(t, layer.gamma), constant_mlp(t, layer.delta)};
}

void add_attention_layer(ParamStore& store, const std::string& prefix, const VectorAttentionLayer& l) {
  validate(l);
  add_linear(store, prefix + ".phi", l.phi);
  add_linear(store, prefix + ".psi", l.psi);
  add_linear(store, prefix + ".alpha", l.alpha);
  add_mlp(store, prefix + ".gamma", l.gamma);
  add_mlp(store, prefix + ".delta", l.delta);
}

VectorAttentionLayer get_attention_layer(const ParamStore& store, const std::string& prefix,
                                         const AttentionConfig& cfg) {
  VectorAttentionLayer l;
  l.phi = get_linear(store, prefix + ".phi");
  l.psi = get_linear(store, prefix + ".psi");
  l.alpha = get_linear(store, prefix + ".alpha");
  l.gamma = get_mlp(store, prefix + ".gamma", cfg.gamma_layers, cfg.activation);
  l.delta = get_mlp(store, prefix + ".delta", cfg.delta_layers, cfg.activation);
  return l;
}

AttentionLayerVars bind_attention_layer(Tape& t, ParamStore& store, const std::string& prefix,
                                        const AttentionConfig& cfg) {
  return {bind_linear(t, store, prefix + ".phi"), bind_linear(t, store, prefix + ".psi"),
          bind_linear(t, store, prefix + ".alpha"),
          bind_mlp(t, store, prefix + ".gamma", cfg.gamma_layers, cfg.activation),
          bind_mlp(t, store, prefix + ".delta", cfg.delta_layers, cfg.activation)};
}

AttentionLayerResult attention_layer(Tape& t, const AttentionLayerVars& layer, Var x,
                                     const Tensor2& positions, const NeighborIndex& nbrs) {
  const std::size_t n = t.value(x).rows;
  const std::size_t k = nbrs.k;
  if (nbrs.points() != n || positions.rows != n) {
    throw UsageError("attention_layer: neighbour index does not match the frame");
  }

  std::vector<std::size_t> centre(n * k);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(centre.begin() + static_cast<std::ptrdiff_t>(i * k), k, i);

  Tensor2 rel(n * k, 3);
  for (std::size_t row = 0; row < n * k; ++row) {
    const std::size_t i = centre[row], j = nbrs.flat[row];
    for (std::size_t a = 0; a < 3; ++a) rel(row, a) = positions(i, a) - positions(j, a);
  }

  const Var phi = apply(t, layer.phi, x);
  const Var psi = apply(t, layer.psi, x);
  const Var alpha = apply(t, layer.alpha, x);
  const Var delta = apply(t, layer.delta, t.constant(std::move(rel)));

  Var pre = ad::sub(t, ad::gather_rows(t, phi, std::move(centre)), ad::gather_rows(t, psi, nbrs.flat));
  pre = ad::add(t, pre, delta);
  const Var logits = apply(t, layer.gamma, pre);
  const Var weights = ad::block_softmax(t, logits, k);
  const Var y = ad::block_sum(t, ad::mul(t, weights, ad::gather_rows(t, alpha, nbrs.flat)), k);

  for (double v : t.value(y).data) {
    if (!std::isfinite(v)) throw NumericError("attention_layer: non-finite output");
  }
  return {y, t.value(weights)};
}

AttentionOutput vector_attention_forward(const VectorAttentionLayer& layer, const Frame& frame,
                                         const NeighborIndex& nbrs) {
  if (layer.d_in() != kPointFeatures) throw UsageError("vector_attention_forward: layer input width must be 5");
  Tape t(false);
  const AttentionLayerVars vars = constant_attention_layer(t, layer);
  const Var x = t.constant(frame_features(frame));
  auto res = attention_layer(t, vars, x, frame_positions(frame), nbrs);
  AttentionOutput out;
  out.features = t.value(res.features);
  out.neighbors = nbrs;
  out.point_scores = incoming_attention_mass(res.weights, nbrs);
  out.layer_weights.push_back(res.weights);
  out.weights = std::move(res.weights);
  return out;
}

AttentionOutput attention_stack_forward(std::span<const VectorAttentionLayer> layers,
                                        const Frame& frame, std::size_t k_nn) {
  if (layers.empty()) throw UsageError("attention_stack_forward: no layers");
  if (layers.front().d_in() != kPointFeatures) throw UsageError("attention stack: first layer input width must be 5");
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (layers[l].d_in() != layers[l - 1].d_attention()) {
      throw UsageError("attention stack: layer " + std::to_string(l) + " input width does not chain");
    }
  }
  AttentionOutput out;
  out.neighbors = knn_neighbors(frame, k_nn);
  const Tensor2 positions = frame_positions(frame);
  Tape t(false);
  Var x = t.constant(frame_features(frame));
  for (const auto& layer : layers) {
    auto res = attention_layer(t, constant_attention_layer(t, layer), x, positions, out.neighbors);
    x = res.features;
    out.layer_weights.push_back(std::move(res.weights));
  }
  out.features = t.value(x);
  out.weights = out.layer_weights.back();
  out.point_scores = incoming_attention_mass(out.weights, out.neighbors);
  return out;
}

}  // namespace esppct
