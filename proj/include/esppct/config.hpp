#pragma once

// Pipeline configuration and its JSON form. Every key is optional in a
// config file; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "esppct/attention.hpp"
#include "esppct/focus.hpp"
#include "esppct/heads.hpp"
#include "esppct/ngsa.hpp"
#include "esppct/pointcloud.hpp"

namespace esppct {

struct TrainConfig {
  int epochs = 700;
  int patience = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;
  double train_fraction = 0.5;
  double val_fraction = 0.25;
  // Per-epoch Gaussian position jitter on training frames (0 = off).
  double augment_jitter = 0.0;
};

void validate(const TrainConfig& cfg);

// Cost-only model of the consumer of the focused points: dense (all-pairs)
// vector attention layers over the L = K (or N) points that reach it.
struct DownstreamConfig {
  std::size_t layers = 2;
  std::size_t width = 0;  // 0 = d_attention
};

struct GridCell {
  std::size_t top_k = 0;
  double eta = 0.0;
};

struct PipelineConfig {
  SynthConfig synth;
  GroupingConfig grouping;
  AttentionConfig attention;
  FocusConfig focus;
  HeadConfig head;
  TrainConfig training;
  DownstreamConfig downstream;
  std::vector<GridCell> presets{{32, 0.45}, {64, 0.68}, {96, 0.82}};

  std::size_t representation_width() const { return focus.slots() * attention.d_attention; }
};

void validate(const PipelineConfig& cfg);

nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

// "32,0.45,64,0.68" (or with ":" / ";" separators) -> cells
std::vector<GridCell> parse_grid(std::string_view text);

}  // namespace esppct
