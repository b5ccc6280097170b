#pragma once

// kNN neighbourhoods and the vector attention layer:
//
//   logits_ij = gamma(phi(x_i) - psi(x_j) + delta(p_i - p_j))
//   a_ij      = softmax over j in N(i), separately per channel
//   y_i       = sum_j a_ij (.) alpha(x_j)
//
// where p are the 3D point positions.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "esppct/numerics.hpp"
#include "esppct/pointcloud.hpp"

namespace esppct {

// Row i lists the min(k_nn, N) nearest points of i, ordered by (distance,
// index); i itself is always present.
struct NeighborIndex {
  std::size_t k = 0;
  std::vector<std::size_t> flat;  // N * k

  std::size_t points() const { return k ? flat.size() / k : 0; }
  std::span<const std::size_t> of(std::size_t i) const { return {flat.data() + i * k, k}; }
};

NeighborIndex knn_neighbors(std::span<const std::array<double, 3>> positions, std::size_t k_nn);
NeighborIndex knn_neighbors(const Frame& frame, std::size_t k_nn);

struct AttentionConfig {
  std::size_t depth = 2;
  std::size_t d_attention = 32;
  std::size_t k_nn = 16;
  std::size_t gamma_layers = 2;
  std::size_t delta_layers = 2;
  Activation activation = Activation::kRelu;
};

void validate(const AttentionConfig& cfg);

struct VectorAttentionLayer {
  LinearParams phi;    // d_in -> d_attention
  LinearParams psi;    // d_in -> d_attention
  LinearParams alpha;  // d_in -> d_attention
  MlpParams gamma;     // d_attention -> d_attention
  MlpParams delta;     // 3 -> d_attention

  std::size_t d_in() const { return phi.in(); }
  std::size_t d_attention() const { return phi.out(); }
};

void validate(const VectorAttentionLayer& layer);
VectorAttentionLayer init_attention_layer(std::size_t d_in, const AttentionConfig& cfg, Rng& rng);
std::vector<VectorAttentionLayer> init_attention_stack(const AttentionConfig& cfg, Rng& rng);

struct AttentionOutput {
  Tensor2 features;                  // N x d_attention
  NeighborIndex neighbors;
  Tensor2 weights;                   // (N * k) x d_attention, row i * k + r <-> (i, of(i)[r])
  std::vector<Tensor2> layer_weights;  // one per layer, last equals `weights`
  std::vector<double> point_scores;  // channel-averaged incoming attention mass
};

// Incoming attention mass per point, averaged over channels.
std::vector<double> incoming_attention_mass(const Tensor2& weights, const NeighborIndex& nbrs);

AttentionOutput vector_attention_forward(const VectorAttentionLayer& layer, const Frame& frame,
                                         const NeighborIndex& nbrs);
AttentionOutput attention_stack_forward(std::span<const VectorAttentionLayer> layers,
                                        const Frame& frame, std::size_t k_nn);

// ---------------------------------------------------------------------------
// Tape-level building blocks shared by inference and training.

struct AttentionLayerVars {
  LinearVars phi, psi, alpha;
  MlpVars gamma, delta;
};

AttentionLayerVars constant_attention_layer(Tape& t, const VectorAttentionLayer& layer);

// Store layout under `prefix`: phi, psi, alpha, gamma.<l>, delta.<l>.
void add_attention_layer(ParamStore& store, const std::string& prefix,
                         const VectorAttentionLayer& layer);
VectorAttentionLayer get_attention_layer(const ParamStore& store, const std::string& prefix,
                                         const AttentionConfig& cfg);
AttentionLayerVars bind_attention_layer(Tape& t, ParamStore& store, const std::string& prefix,
                                        const AttentionConfig& cfg);

// Frame features as an N x 5 matrix and positions as N x 3.
Tensor2 frame_features(const Frame& frame);
Tensor2 frame_positions(const Frame& frame);

struct AttentionLayerResult {
  Var features;
  Tensor2 weights;
};

AttentionLayerResult attention_layer(Tape& t, const AttentionLayerVars& layer, Var x,
                                     const Tensor2& positions, const NeighborIndex& nbrs);

}  // namespace esppct
