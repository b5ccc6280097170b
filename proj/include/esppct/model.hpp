#pragma once

// The full recognition model on a tape: attention stack per frame, voxel
// grouping and region choice, top-K focus, recurrent head over frames.
//
// Parameter layout in the store: attn.<l>.*, ngsa.w (1 x d_attention),
// head.*. Region choice and top-K are index decisions taken on values, so
// gradients flow only through the selected points' features.

#include <optional>
#include <vector>

#include "esppct/config.hpp"

namespace esppct {

ParamStore init_model(const PipelineConfig& cfg, std::uint64_t seed);

struct BoundModel {
  std::vector<AttentionLayerVars> layers;
  Var w;
  HeadVars head;
};

BoundModel bind_model(Tape& t, ParamStore& store, const PipelineConfig& cfg);

struct FrameTrace {
  std::size_t points = 0;
  std::size_t groups = 0;
  RegionSelection region;
  std::vector<std::size_t> candidates;
  std::vector<std::size_t> selected;        // points
  std::vector<std::size_t> selected_units;  // points or groups, per FocusConfig::unit
  bool padded = false;
  bool truncated = false;
  // Share of ground-truth semantic points in the chosen voxel and in the
  // selection, when the sequence carries masks.
  std::optional<double> region_purity;
  std::optional<double> selection_purity;
};

struct FrameGraph {
  Var representation;  // 1 x representation_width
  FrameTrace trace;
};

// With `replay`, the region and selection recorded there are reused
// instead of recomputed (the index choices are constants of the graph).
FrameGraph frame_graph(Tape& t, const BoundModel& m, const Frame& frame, const PipelineConfig& cfg,
                       const std::vector<bool>* mask = nullptr, const FrameTrace* replay = nullptr);

struct SequenceGraph {
  Var logits;  // 1 x classes
  std::vector<FrameTrace> frames;
};

SequenceGraph sequence_graph(Tape& t, const BoundModel& m, const Sequence& seq, const PipelineConfig& cfg,
                             const std::vector<FrameTrace>* replay = nullptr);

struct Prediction {
  std::vector<double> logits;
  Classification result;
  std::vector<FrameTrace> frames;
};

Prediction predict(const ParamStore& params, const PipelineConfig& cfg, const Sequence& seq);

// Cross-entropy of one labelled sequence; `params` gradients are
// accumulated (not reset).
double loss_and_grad(ParamStore& params, const PipelineConfig& cfg, const Sequence& seq,
                     std::vector<FrameTrace>* traces = nullptr);
double sequence_loss(const ParamStore& params, const PipelineConfig& cfg, const Sequence& seq,
                     const std::vector<FrameTrace>* replay = nullptr);

}  // namespace esppct
