#include "esppct/model.hpp"

#include <cmath>

#include "esppct/error.hpp"

namespace esppct {

namespace {

std::string layer_prefix(std::size_t l) { return "attn." + std::to_string(l); }

double purity(std::span<const std::size_t> idx, const std::vector<bool>& mask) {
  if (idx.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : idx) hits += mask[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace

ParamStore init_model(const PipelineConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  ParamStore store;
  const auto layers = init_attention_stack(cfg.attention, rng);
  for (std::size_t l = 0; l < layers.size(); ++l) add_attention_layer(store, layer_prefix(l), layers[l]);
  const std::size_t d = cfg.attention.d_attention;
  Tensor2 w(1, d);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  store.add("ngsa.w", std::move(w));
  init_head(store, "head", cfg.representation_width(), cfg.head, rng);
  return store;
}

BoundModel bind_model(Tape& t, ParamStore& store, const PipelineConfig& cfg) {
  BoundModel m;
  for (std::size_t l = 0; l < cfg.attention.depth; ++l) {
    m.layers.push_back(bind_attention_layer(t, store, layer_prefix(l), cfg.attention));
  }
  m.w = t.parameter(store, store.index("ngsa.w"));
  m.head = bind_head(t, store, "head", cfg.head);
  return m;
}

FrameGraph frame_graph(Tape& t, const BoundModel& m, const Frame& frame, const PipelineConfig& cfg,
                       const std::vector<bool>* mask, const FrameTrace* replay) {
  const std::size_t width = cfg.representation_width();
  FrameGraph out;
  out.trace.points = frame.points.size();
  if (frame.points.empty()) {
    out.representation = t.constant(Tensor2(1, width, 0.0));
    out.trace.padded = true;
    return out;
  }
  if (mask && mask->size() != frame.points.size()) throw DataError("semantic mask does not match frame size");

  AttentionOutput att;
  att.neighbors = knn_neighbors(frame, cfg.attention.k_nn);
  const Tensor2 positions = frame_positions(frame);
  Var y = t.constant(frame_features(frame));
  for (const auto& layer : m.layers) {
    auto res = attention_layer(t, layer, y, positions, att.neighbors);
    y = res.features;
    att.weights = std::move(res.weights);
  }
  att.features = t.value(y);
  att.point_scores = incoming_attention_mass(att.weights, att.neighbors);

  const Grouping grouping = group_points(frame, cfg.grouping);
  const NgsaScores scores = ngsa_scores(att, grouping, t.value(m.w).data);
  const Var contrib = ad::matvec(t, y, m.w);
  std::vector<double> intensity;
  if (cfg.focus.ablation == Ablation::kNoAttentionScore) {
    for (const Point& p : frame.points) intensity.push_back(p.intensity);
  }
  FocusSelection sel;
  if (replay) {
    sel.region = replay->region;
    sel.candidates = replay->candidates;
    sel.selected = replay->selected_units;
    sel.selected_points = replay->selected;
    sel.truncated = replay->truncated;
  } else {
    sel = focus_select(scores, grouping, t.value(contrib).data, intensity, cfg.focus);
  }

  const Var h = cfg.focus.score_gating ? ad::scale_rows(t, y, ad::sigmoid(t, contrib)) : y;
  if (sel.selected.empty()) {
    out.representation = t.constant(Tensor2(1, width, 0.0));
  } else if (cfg.focus.unit == SelectUnit::kPoints) {
    out.representation = ad::flatten_pad(t, ad::gather_rows(t, h, sel.selected), width);
  } else {
    std::vector<std::vector<std::size_t>> segments;
    for (std::size_t g : sel.selected) segments.push_back(grouping.groups[g].members);
    out.representation = ad::flatten_pad(t, ad::segment_mean(t, h, std::move(segments)), width);
  }

  FrameTrace& tr = out.trace;
  tr.groups = grouping.size();
  tr.region = sel.region;
  tr.padded = sel.selected.size() < cfg.focus.slots();
  tr.truncated = sel.truncated;
  if (mask) {
    tr.region_purity = purity(grouping.groups[sel.region.region_index].members, *mask);
    tr.selection_purity = purity(sel.selected_points, *mask);
  }
  tr.candidates = std::move(sel.candidates);
  tr.selected = std::move(sel.selected_points);
  tr.selected_units = std::move(sel.selected);
  return out;
}

SequenceGraph sequence_graph(Tape& t, const BoundModel& m, const Sequence& seq, const PipelineConfig& cfg,
                             const std::vector<FrameTrace>* replay) {
  if (seq.frames.empty()) throw DataError("sequence has no frames");
  if (replay && replay->size() != seq.frames.size()) throw UsageError("replay trace does not match the sequence");
  SequenceGraph g;
  std::vector<Var> reps;
  reps.reserve(seq.frames.size());
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto mask = semantic_mask(seq, f);
    FrameGraph fg = frame_graph(t, m, seq.frames[f], cfg, mask ? &*mask : nullptr, replay ? &(*replay)[f] : nullptr);
    reps.push_back(fg.representation);
    g.frames.push_back(std::move(fg.trace));
  }
  g.logits = head_logits(t, m.head, ad::stack_rows(t, reps));
  for (double v : t.value(g.logits).data) {
    if (!std::isfinite(v)) throw NumericError("non-finite logits");
  }
  return g;
}

Prediction predict(const ParamStore& params, const PipelineConfig& cfg, const Sequence& seq) {
  Tape t(false);
  // A non-recording tape only copies parameter values.
  BoundModel m = bind_model(t, const_cast<ParamStore&>(params), cfg);
  SequenceGraph g = sequence_graph(t, m, seq, cfg);
  Prediction p;
  p.logits = t.value(g.logits).data;
  p.result = classify(p.logits);
  p.frames = std::move(g.frames);
  return p;
}

namespace {

std::size_t label_of(const Sequence& seq, const PipelineConfig& cfg) {
  if (!seq.label) throw DataError("sequence has no label");
  const int l = *seq.label;
  if (l < 0 || static_cast<std::size_t>(l) >= head_classes(cfg.head.kind)) {
    throw DataError("label " + std::to_string(l) + " outside the head's class range");
  }
  return static_cast<std::size_t>(l);
}

}  // namespace

double loss_and_grad(ParamStore& params, const PipelineConfig& cfg, const Sequence& seq,
                     std::vector<FrameTrace>* traces) {
  const std::size_t label = label_of(seq, cfg);
  Tape t(true);
  BoundModel m = bind_model(t, params, cfg);
  SequenceGraph g = sequence_graph(t, m, seq, cfg);
  const Var loss = ad::cross_entropy(t, g.logits, label);
  const double value = t.value(loss).data[0];
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  t.backward(loss);
  if (traces) *traces = std::move(g.frames);
  return value;
}

double sequence_loss(const ParamStore& params, const PipelineConfig& cfg, const Sequence& seq,
                     const std::vector<FrameTrace>* replay) {
  const std::size_t label = label_of(seq, cfg);
  Tape t(false);
  BoundModel m = bind_model(t, const_cast<ParamStore&>(params), cfg);
  SequenceGraph g = sequence_graph(t, m, seq, cfg, replay);
  return t.value(ad::cross_entropy(t, g.logits, label)).data[0];
}

}  // namespace esppct
