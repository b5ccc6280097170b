#pragma once

// Voxel grouping of a frame and the per-group scores used to pick the
// semantic region:
//   sum_scores[j]    = sum of point_scores over members of group j
//   global_scores[j] = mean over members of y_i . w

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "esppct/attention.hpp"

namespace esppct {

struct GroupingConfig {
  double cell_size = 0.1;
  std::array<double, 3> grid_origin{0.0, 0.0, 0.0};
};

void validate(const GroupingConfig& cfg);

using Cell = std::array<std::int64_t, 3>;

Cell cell_of(const std::array<double, 3>& p, const GroupingConfig& cfg);

struct Group {
  Cell cell{};
  std::vector<std::size_t> members;  // ascending
};

struct Grouping {
  std::vector<std::size_t> group_of;  // per point
  std::vector<Group> groups;          // ascending lexicographic cell order

  std::size_t size() const { return groups.size(); }
  // Group id for `cell`, or npos when no point falls in it.
  std::size_t find(const Cell& cell) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

Grouping group_points(std::span<const std::array<double, 3>> positions, const GroupingConfig& cfg);
Grouping group_points(const Frame& frame, const GroupingConfig& cfg);

std::vector<double> group_score_sum(std::span<const double> point_scores, const Grouping& grouping);
std::vector<double> group_score_sum(const AttentionOutput& att, const Grouping& grouping);

// y_i . w for every row of `features`.
std::vector<double> point_contributions(const Tensor2& features, std::span<const double> w);

struct NgsaScores {
  std::vector<double> sum_scores;
  std::vector<double> global_scores;
  std::vector<double> w;
};

NgsaScores ngsa_scores(const AttentionOutput& att, const Grouping& grouping, std::span<const double> w);

// Lowest index among the maxima.
std::size_t argmax_lowest(std::span<const double> v);

std::size_t select_region(const NgsaScores& scores);

enum class Decision { kAccept, kRefine };
std::string_view to_string(Decision d);

struct RegionSelection {
  std::size_t region_index = 0;
  double confidence = 0.0;
  Decision decision = Decision::kAccept;
};

// Region by global score, confidence = max softmax(global_scores).
RegionSelection localization_decision(const NgsaScores& scores, double eta);

// Which per-group score drives region choice in the pipeline.
enum class RegionScore { kCumulative, kGlobal };
RegionScore parse_region_score(std::string_view name);
std::string_view to_string(RegionScore mode);

// kGlobal is localization_decision. kCumulative picks the group with the
// largest attention mass and reports its share of the frame's total mass.
RegionSelection localize(const NgsaScores& scores, RegionScore mode, double eta);

}  // namespace esppct
