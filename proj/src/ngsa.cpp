#include "esppct/ngsa.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "esppct/error.hpp"

namespace esppct {

void validate(const GroupingConfig& cfg) {
  if (!(cfg.cell_size > 0.0) || !std::isfinite(cfg.cell_size)) {
    throw UsageError("grouping: cell_size must be a positive finite number");
  }
  for (double o : cfg.grid_origin) {
    if (!std::isfinite(o)) throw UsageError("grouping: grid_origin must be finite");
  }
}

Cell cell_of(const std::array<double, 3>& p, const GroupingConfig& cfg) {
  Cell c{};
  for (int a = 0; a < 3; ++a) {
    c[a] = static_cast<std::int64_t>(std::floor((p[a] - cfg.grid_origin[a]) / cfg.cell_size));
  }
  return c;
}

std::size_t Grouping::find(const Cell& cell) const {
  auto it = std::lower_bound(groups.begin(), groups.end(), cell,
                             [](const Group& g, const Cell& c) { return g.cell < c; });
  if (it == groups.end() || it->cell != cell) return npos;
  return static_cast<std::size_t>(it - groups.begin());
}

Grouping group_points(std::span<const std::array<double, 3>> positions, const GroupingConfig& cfg) {
  validate(cfg);
  if (positions.empty()) throw UsageError("group_points: empty frame");
  std::map<Cell, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < positions.size(); ++i) cells[cell_of(positions[i], cfg)].push_back(i);

  Grouping g;
  g.group_of.resize(positions.size());
  for (auto& [cell, members] : cells) {
    for (std::size_t i : members) g.group_of[i] = g.groups.size();
    g.groups.push_back(Group{cell, std::move(members)});
  }
  return g;
}

Grouping group_points(const Frame& frame, const GroupingConfig& cfg) {
  std::vector<std::array<double, 3>> pos;
  pos.reserve(frame.points.size());
  for (const Point& p : frame.points) pos.push_back(p.position());
  return group_points(pos, cfg);
}

std::vector<double> group_score_sum(std::span<const double> point_scores, const Grouping& grouping) {
  if (point_scores.size() != grouping.group_of.size()) {
    throw UsageError("group_score_sum: " + std::to_string(point_scores.size()) + " scores for " +
                     std::to_string(grouping.group_of.size()) + " grouped points");
  }
  std::vector<double> out(grouping.size(), 0.0);
  for (std::size_t j = 0; j < grouping.size(); ++j) {
    for (std::size_t i : grouping.groups[j].members) out[j] += point_scores[i];
  }
  return out;
}

std::vector<double> group_score_sum(const AttentionOutput& att, const Grouping& grouping) {
  return group_score_sum(att.point_scores, grouping);
}

std::vector<double> point_contributions(const Tensor2& features, std::span<const double> w) {
  if (w.size() != features.cols) {
    throw UsageError("ngsa: w has length " + std::to_string(w.size()) + ", features have width " +
                     std::to_string(features.cols));
  }
  std::vector<double> out(features.rows, 0.0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) s += features(i, c) * w[c];
    out[i] = s;
  }
  return out;
}

NgsaScores ngsa_scores(const AttentionOutput& att, const Grouping& grouping, std::span<const double> w) {
  if (att.features.rows != grouping.group_of.size()) {
    throw UsageError("ngsa_scores: attention output and grouping cover different frames");
  }
  NgsaScores s;
  s.w.assign(w.begin(), w.end());
  s.sum_scores = group_score_sum(att, grouping);
  const auto contrib = point_contributions(att.features, w);
  s.global_scores.resize(grouping.size());
  for (std::size_t j = 0; j < grouping.size(); ++j) {
    double acc = 0.0;
    for (std::size_t i : grouping.groups[j].members) acc += contrib[i];
    s.global_scores[j] = acc / static_cast<double>(grouping.groups[j].members.size());
  }
  return s;
}

std::size_t argmax_lowest(std::span<const double> v) {
  if (v.empty()) throw UsageError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::size_t select_region(const NgsaScores& scores) {
  if (scores.global_scores.empty()) throw UsageError("select_region: no groups");
  return argmax_lowest(scores.global_scores);
}

std::string_view to_string(Decision d) { return d == Decision::kAccept ? "accept" : "refine"; }

RegionSelection localization_decision(const NgsaScores& scores, double eta) {
  if (scores.global_scores.empty()) throw UsageError("localization_decision: no groups");
  RegionSelection r;
  r.region_index = select_region(scores);
  const auto p = softmax(scores.global_scores);
  r.confidence = std::clamp(*std::max_element(p.begin(), p.end()), 0.0, 1.0);
  r.decision = r.confidence < eta ? Decision::kRefine : Decision::kAccept;
  return r;
}

RegionScore parse_region_score(std::string_view name) {
  if (name == "cumulative") return RegionScore::kCumulative;
  if (name == "global") return RegionScore::kGlobal;
  throw UsageError("unknown region_score '" + std::string(name) + "' (cumulative|global)");
}

std::string_view to_string(RegionScore mode) {
  return mode == RegionScore::kCumulative ? "cumulative" : "global";
}

RegionSelection localize(const NgsaScores& scores, RegionScore mode, double eta) {
  if (mode == RegionScore::kGlobal) return localization_decision(scores, eta);
  if (scores.sum_scores.empty()) throw UsageError("localize: no groups");
  RegionSelection r;
  r.region_index = argmax_lowest(scores.sum_scores);
  const double total = std::accumulate(scores.sum_scores.begin(), scores.sum_scores.end(), 0.0);
  r.confidence = total > 0.0 ? std::clamp(scores.sum_scores[r.region_index] / total, 0.0, 1.0) : 1.0;
  r.decision = r.confidence < eta ? Decision::kRefine : Decision::kAccept;
  return r;
}

}  // namespace esppct
