#include "esppct/focus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "esppct/error.hpp"

namespace esppct {

Ablation parse_ablation(std::string_view name) {
  for (Ablation a : kAllAblations) {
    if (to_string(a) == name) return a;
  }
  throw UsageError("unknown ablation '" + std::string(name) + "'");
}

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoAttentionScore: return "no_attention_score";
    case Ablation::kNoGrouping: return "no_grouping";
    case Ablation::kNoHighestGroup: return "no_highest_group";
    case Ablation::kNoTopK: return "no_top_k";
  }
  return "none";
}

SelectUnit parse_select_unit(std::string_view name) {
  if (name == "points") return SelectUnit::kPoints;
  if (name == "groups") return SelectUnit::kGroups;
  throw UsageError("unknown select unit '" + std::string(name) + "' (points|groups)");
}

std::string_view to_string(SelectUnit u) { return u == SelectUnit::kPoints ? "points" : "groups"; }

void validate(const FocusConfig& cfg) {
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw UsageError("focus: eta must lie in [0, 1]");
  if (cfg.ablation == Ablation::kNoTopK && cfg.max_points == 0) {
    throw UsageError("focus: max_points must be >= 1 under no_top_k");
  }
}

std::vector<std::size_t> top_k_points(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t m = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> region_neighborhood(const Grouping& grouping, const RegionSelection& region) {
  if (region.region_index >= grouping.size()) throw UsageError("focus: region index out of range");
  const Cell centre = grouping.groups[region.region_index].cell;
  std::vector<std::size_t> out;
  if (region.decision == Decision::kAccept) {
    out = grouping.groups[region.region_index].members;
    return out;
  }
  for (std::int64_t dx = -1; dx <= 1; ++dx) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dz = -1; dz <= 1; ++dz) {
        const std::size_t g = grouping.find({centre[0] + dx, centre[1] + dy, centre[2] + dz});
        if (g == Grouping::npos) continue;
        const auto& m = grouping.groups[g].members;
        out.insert(out.end(), m.begin(), m.end());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> concat_representation(const Tensor2& features, std::span<const std::size_t> indices) {
  std::vector<double> out;
  out.reserve(indices.size() * features.cols);
  for (std::size_t i : indices) {
    if (i >= features.rows) {
      throw UsageError("concat_representation: index " + std::to_string(i) + " out of range");
    }
    const auto r = features.row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

FocusSelection focus_select(const NgsaScores& scores, const Grouping& grouping,
                            std::span<const double> contributions, std::span<const double> intensity,
                            const FocusConfig& cfg) {
  validate(cfg);
  const std::size_t n = grouping.group_of.size();
  if (contributions.size() != n) throw UsageError("focus: contributions do not match the grouping");
  if (scores.sum_scores.size() != grouping.size() || scores.global_scores.size() != grouping.size()) {
    throw UsageError("focus: scores do not match the grouping");
  }

  FocusSelection sel;
  sel.region = localize(scores, cfg.region_score, cfg.eta);
  switch (cfg.ablation) {
    case Ablation::kNoGrouping:
    case Ablation::kNoHighestGroup:
      sel.candidates = all_indices(n);
      break;
    default:
      sel.candidates = region_neighborhood(grouping, sel.region);
  }

  std::vector<double> point_rank(contributions.begin(), contributions.end());
  if (cfg.ablation == Ablation::kNoAttentionScore) {
    if (intensity.size() != n) throw UsageError("focus: no_attention_score needs per-point intensity");
    point_rank.assign(intensity.begin(), intensity.end());
  }

  if (cfg.unit == SelectUnit::kPoints) {
    const std::size_t k = cfg.slots();
    sel.truncated = cfg.ablation == Ablation::kNoTopK && sel.candidates.size() > k;
    if (cfg.ablation == Ablation::kNoHighestGroup) {
      // Points inherit their group's score; own contribution breaks ties.
      const auto& gsc = cfg.region_score == RegionScore::kCumulative ? scores.sum_scores
                                                                      : scores.global_scores;
      std::vector<std::size_t> order = sel.candidates;
      const std::size_t m = std::min(k, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          const double ga = gsc[grouping.group_of[a]], gb = gsc[grouping.group_of[b]];
                          if (ga != gb) return ga > gb;
                          if (point_rank[a] != point_rank[b]) return point_rank[a] > point_rank[b];
                          return a < b;
                        });
      order.resize(m);
      std::sort(order.begin(), order.end());
      sel.selected = std::move(order);
      sel.selected_points = sel.selected;
      return sel;
    }
    std::vector<double> cand_scores;
    cand_scores.reserve(sel.candidates.size());
    for (std::size_t i : sel.candidates) cand_scores.push_back(point_rank[i]);
    for (std::size_t c : top_k_points(cand_scores, k)) sel.selected.push_back(sel.candidates[c]);
    sel.selected_points = sel.selected;
    return sel;
  }

  // Groups: rank the groups touched by the candidate set.
  std::vector<std::size_t> cand_groups;
  for (std::size_t i : sel.candidates) cand_groups.push_back(grouping.group_of[i]);
  std::sort(cand_groups.begin(), cand_groups.end());
  cand_groups.erase(std::unique(cand_groups.begin(), cand_groups.end()), cand_groups.end());
  std::vector<double> gs;
  for (std::size_t g : cand_groups) {
    if (cfg.ablation == Ablation::kNoAttentionScore) {
      double acc = 0.0;
      for (std::size_t i : grouping.groups[g].members) acc += point_rank[i];
      gs.push_back(acc / static_cast<double>(grouping.groups[g].members.size()));
    } else {
      gs.push_back(scores.global_scores[g]);
    }
  }
  const std::size_t k = cfg.slots();
  sel.truncated = cfg.ablation == Ablation::kNoTopK && cand_groups.size() > k;
  for (std::size_t c : top_k_points(gs, k)) {
    sel.selected.push_back(cand_groups[c]);
    const auto& m = grouping.groups[cand_groups[c]].members;
    sel.selected_points.insert(sel.selected_points.end(), m.begin(), m.end());
  }
  std::sort(sel.selected_points.begin(), sel.selected_points.end());
  return sel;
}

FocusOutput focus_stage(const AttentionOutput& att, const NgsaScores& scores, const Grouping& grouping,
                        const FocusConfig& cfg, std::span<const double> intensity) {
  if (att.features.rows != grouping.group_of.size()) {
    throw UsageError("focus_stage: attention output and grouping cover different frames");
  }
  const auto contrib = point_contributions(att.features, scores.w);
  FocusSelection sel = focus_select(scores, grouping, contrib, intensity, cfg);

  const std::size_t d = att.features.cols;
  Tensor2 h = att.features;
  if (cfg.score_gating) {
    for (std::size_t i = 0; i < h.rows; ++i) {
      const double g = 1.0 / (1.0 + std::exp(-contrib[i]));
      for (double& v : h.row(i)) v *= g;
    }
  }

  FocusOutput out;
  if (cfg.unit == SelectUnit::kPoints) {
    out.representation = concat_representation(h, sel.selected);
  } else {
    for (std::size_t g : sel.selected) {
      const auto& m = grouping.groups[g].members;
      std::vector<double> mean(d, 0.0);
      for (std::size_t i : m) {
        for (std::size_t c = 0; c < d; ++c) mean[c] += h(i, c);
      }
      for (double& v : mean) v /= static_cast<double>(m.size());
      out.representation.insert(out.representation.end(), mean.begin(), mean.end());
    }
  }
  out.frame_padded = sel.selected.size() < cfg.slots();
  out.representation.resize(cfg.slots() * d, 0.0);
  out.selected_indices = std::move(sel.selected_points);
  out.truncated = sel.truncated;
  out.region = sel.region;
  out.candidates = std::move(sel.candidates);
  return out;
}

}  // namespace esppct
