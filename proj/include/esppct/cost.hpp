#pragma once

// Closed-form parameter and FLOP accounting. Conventions (see COST.md):
// one multiply-add = 2 FLOPs, softmax over m entries = 5m, every other
// elementwise scalar op (add, activation, gate) = 1.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "esppct/config.hpp"

namespace esppct {

struct ParamReport {
  std::uint64_t attention = 0;
  std::uint64_t ngsa = 0;
  std::uint64_t head = 0;
  std::uint64_t total = 0;  // attention + ngsa + head = checkpoint scalars
  // Parameters of the cost-only downstream model, not in the checkpoint.
  std::uint64_t modeled_downstream = 0;
};

struct InputShape {
  std::size_t frames = 25;
  double points = 100;  // per frame; may be a dataset average
};

struct FlopReport {
  InputShape shape;
  std::size_t focused = 0;  // L: points reaching the downstream model
  std::size_t d_attention = 0;
  double attention = 0;
  double ngsa = 0;
  double focus = 0;
  double head = 0;
  double downstream = 0;
  double downstream_quadratic = 0;  // the part of `downstream` proportional to L^2
  double total = 0;
};

std::uint64_t linear_params(std::size_t in, std::size_t out, bool bias = true);
double linear_flops(double rows, std::size_t in, std::size_t out, bool bias = true);
double softmax_flops(double m);

ParamReport count_params(const PipelineConfig& cfg);
FlopReport count_flops(const PipelineConfig& cfg, InputShape shape);

// Full-attention consumer over L points; split into its L^2 part and the rest.
struct DenseAttentionFlops {
  double quadratic = 0;
  double linear = 0;
  double total() const { return quadratic + linear; }
};
DenseAttentionFlops dense_attention_flops(double points, std::size_t d_in, std::size_t width,
                                          std::size_t gamma_layers, std::size_t delta_layers);

// The reference the reduction is measured against: the same pipeline with
// both no_top_k and no_grouping, so every point reaches every stage.
FlopReport count_baseline_flops(const PipelineConfig& cfg, InputShape shape);

struct Reduction {
  double attention = 0, ngsa = 0, focus = 0, head = 0, downstream = 0, total = 0;
};
Reduction reduction_ratio(const FlopReport& full, const FlopReport& pruned);

nlohmann::json to_json(const ParamReport& p);
nlohmann::json to_json(const FlopReport& f);
nlohmann::json to_json(const Reduction& r);
std::string flop_csv_header();
std::string flop_csv_row(const std::string& label, const FlopReport& f, const ParamReport& p);

}  // namespace esppct
