#pragma once

// Top-K point selection inside the localized neighbourhood and the
// fixed-width concatenated frame representation fed to the heads.

#include <span>
#include <string_view>
#include <vector>

#include "esppct/ngsa.hpp"

namespace esppct {

enum class Ablation { kNone, kNoAttentionScore, kNoGrouping, kNoHighestGroup, kNoTopK };
Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation a);
inline constexpr Ablation kAllAblations[] = {Ablation::kNone, Ablation::kNoAttentionScore,
                                             Ablation::kNoGrouping, Ablation::kNoHighestGroup,
                                             Ablation::kNoTopK};

// Whether top-K ranks individual points or whole groups.
enum class SelectUnit { kPoints, kGroups };
SelectUnit parse_select_unit(std::string_view name);
std::string_view to_string(SelectUnit u);

struct FocusConfig {
  std::size_t top_k = 30;
  double eta = 0.82;
  Ablation ablation = Ablation::kNone;
  SelectUnit unit = SelectUnit::kPoints;
  RegionScore region_score = RegionScore::kCumulative;
  // h_i = sigmoid(y_i . w) * y_i instead of h_i = y_i.
  bool score_gating = true;
  // Slot count of the representation when no_top_k lifts the K limit.
  std::size_t max_points = 100;

  // Number of row slots in the representation.
  std::size_t slots() const { return ablation == Ablation::kNoTopK ? max_points : top_k; }
};

void validate(const FocusConfig& cfg);

struct FocusOutput {
  std::vector<std::size_t> selected_indices;  // ascending
  std::vector<double> representation;        // slots() * d_attention
  bool frame_padded = false;
  bool truncated = false;  // no_top_k only: more candidates than max_points
  RegionSelection region;
  std::vector<std::size_t> candidates;  // ascending
};

// min(k, M) indices with the highest scores (ties: lower index first),
// returned in ascending order.
std::vector<std::size_t> top_k_points(std::span<const double> scores, std::size_t k);

// Points of the chosen region plus, on refine, its 26 neighbouring cells.
std::vector<std::size_t> region_neighborhood(const Grouping& grouping, const RegionSelection& region);

std::vector<double> concat_representation(const Tensor2& features, std::span<const std::size_t> indices);

// Selection without the representation; shared with the training graph.
struct FocusSelection {
  std::vector<std::size_t> candidates;
  std::vector<std::size_t> selected;  // points (kPoints) or groups (kGroups), ascending
  std::vector<std::size_t> selected_points;
  bool truncated = false;
  RegionSelection region;
};

// `contributions` are y_i . w per point; `intensity` is needed only by
// no_attention_score.
FocusSelection focus_select(const NgsaScores& scores, const Grouping& grouping,
                            std::span<const double> contributions, std::span<const double> intensity,
                            const FocusConfig& cfg);

FocusOutput focus_stage(const AttentionOutput& att, const NgsaScores& scores, const Grouping& grouping,
                        const FocusConfig& cfg, std::span<const double> intensity = {});

}  // namespace esppct
