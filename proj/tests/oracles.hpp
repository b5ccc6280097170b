#pragma once

// Straightforward reference implementations that share no code with the
// library beyond its parameter structs.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "esppct/attention.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline std::vector<double> affine(const esppct::LinearParams& p, const std::vector<double>& x) {
  std::vector<double> y(p.weight.rows);
  for (std::size_t o = 0; o < p.weight.rows; ++o) {
    double s = p.bias[o];
    for (std::size_t k = 0; k < p.weight.cols; ++k) s += p.weight.data[o * p.weight.cols + k] * x[k];
    y[o] = s;
  }
  return y;
}

inline std::vector<double> mlp(const esppct::MlpParams& p, std::vector<double> x) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    x = affine(p.layers[l], x);
    if (l + 1 == p.layers.size()) break;
    for (double& v : x) {
      if (p.activation == esppct::Activation::kRelu) v = std::max(v, 0.0);
      else if (p.activation == esppct::Activation::kTanh) v = std::tanh(v);
    }
  }
  return x;
}

// Neighbours of every point by full sort on (squared distance, index); a
// point that falls out of its own list takes the last slot.
inline std::vector<std::vector<std::size_t>> knn(const esppct::Frame& f, std::size_t k) {
  const std::size_t n = f.points.size();
  k = std::min(k, n);
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& a = f.points[i];
      const auto& b = f.points[j];
      d.push_back({(a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z), j});
    }
    std::sort(d.begin(), d.end());
    d.resize(k);
    if (std::none_of(d.begin(), d.end(), [i](auto& e) { return e.second == i; })) {
      d.back() = {0.0, i};
      std::sort(d.begin(), d.end());
    }
    for (auto& e : d) out[i].push_back(e.second);
  }
  return out;
}

struct DenseAttention {
  Matrix y;                    // N x d
  std::vector<Matrix> weight;  // [i][r][c] for the r-th neighbour of i
  std::vector<double> incoming;
};

// y_i = sum_j softmax_j(gamma(phi x_i - psi x_j + delta(p_i - p_j))) * alpha x_j,
// the softmax taken per channel over the neighbours of i.
inline DenseAttention vector_attention(const esppct::VectorAttentionLayer& L, const esppct::Frame& f,
                                       const std::vector<std::vector<std::size_t>>& nbrs) {
  const std::size_t n = f.points.size();
  const std::size_t d = L.phi.weight.rows;
  DenseAttention out;
  out.y.assign(n, std::vector<double>(d, 0.0));
  out.weight.resize(n);
  out.incoming.assign(n, 0.0);
  auto feat = [&](std::size_t i) {
    const auto& p = f.points[i];
    return std::vector<double>{p.x, p.y, p.z, p.velocity, p.intensity};
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto phi = affine(L.phi, feat(i));
    Matrix logits;
    for (std::size_t j : nbrs[i]) {
      const auto psi = affine(L.psi, feat(j));
      const auto& pi = f.points[i];
      const auto& pj = f.points[j];
      const auto pos = mlp(L.delta, {pi.x - pj.x, pi.y - pj.y, pi.z - pj.z});
      std::vector<double> pre(d);
      for (std::size_t c = 0; c < d; ++c) pre[c] = phi[c] - psi[c] + pos[c];
      logits.push_back(mlp(L.gamma, pre));
    }
    const std::size_t k = nbrs[i].size();
    Matrix a(k, std::vector<double>(d));
    for (std::size_t c = 0; c < d; ++c) {
      double mx = -INFINITY;
      for (std::size_t r = 0; r < k; ++r) mx = std::max(mx, logits[r][c]);
      double z = 0.0;
      for (std::size_t r = 0; r < k; ++r) z += std::exp(logits[r][c] - mx);
      for (std::size_t r = 0; r < k; ++r) a[r][c] = std::exp(logits[r][c] - mx) / z;
    }
    for (std::size_t r = 0; r < k; ++r) {
      const auto alpha = affine(L.alpha, feat(nbrs[i][r]));
      double mass = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        out.y[i][c] += a[r][c] * alpha[c];
        mass += a[r][c];
      }
      out.incoming[nbrs[i][r]] += mass / static_cast<double>(d);
    }
    out.weight[i] = std::move(a);
  }
  return out;
}

// Indices of the k largest scores, lower index first on ties, ascending.
inline std::vector<std::size_t> top_k(std::span<const double> s, std::size_t k) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a < b;
  });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::size_t argmax(std::span<const double> s) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] > s[best]) best = i;
  return best;
}

}  // namespace oracle
