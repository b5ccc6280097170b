#pragma once

// Point-cloud data model: points, frames, labelled sequences, the text
// sequence format, dataset manifests, the synthetic scene generator and the
// occlusion models applied on top of it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "esppct/rng.hpp"

namespace esppct {

inline constexpr std::size_t kPointFeatures = 5;

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double velocity = 0.0;   // radial, m/s
  double intensity = 0.0;  // >= 0

  std::array<double, 3> position() const { return {x, y, z}; }
  std::array<double, kPointFeatures> features() const {
    return {x, y, z, velocity, intensity};
  }
  bool operator==(const Point&) const = default;
};

struct Frame {
  std::int64_t timestamp_index = 0;
  std::vector<Point> points;

  bool operator==(const Frame&) const = default;
};

struct Sequence {
  std::vector<Frame> frames;
  std::optional<int> label;
  std::map<std::string, std::string> meta;

  bool operator==(const Sequence&) const = default;
};

// Throws DataError describing the first violated invariant.
void validate_point(const Point& p);
void validate_sequence(const Sequence& seq);

// Per-frame ground-truth membership (true = semantic point), stored in the
// sequence meta under "gt.semantic.<frame position>" as a string of 0/1.
std::optional<std::vector<bool>> semantic_mask(const Sequence& seq, std::size_t frame);
void set_semantic_mask(Sequence& seq, std::size_t frame, const std::vector<bool>& mask);

// ---------------------------------------------------------------------------
// Sequence text format

inline constexpr std::string_view kSequenceHeader = "ESPPCT-SEQ v1";

Sequence parse_sequence(std::istream& in, const std::string& source = "<stream>");
std::string format_sequence(const Sequence& seq);

Sequence load_sequence(const std::filesystem::path& path);
void write_sequence(const Sequence& seq, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct LabeledDataset {
  std::vector<Sequence> sequences;
  std::vector<std::string> class_names;
  Split split = Split::kTrain;
};

void validate_dataset(const LabeledDataset& ds);

// Writes `dir/manifest.json` and one sequence file per sequence.
void write_dataset(const LabeledDataset& ds, const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& dir);

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

// Stratified per class: the first round(train_fraction * n_c) sequences of a
// class (after a seeded shuffle) go to train, the next round(val_fraction *
// n_c) to val, the rest to test.
DatasetSplits split_dataset(const LabeledDataset& all, double train_fraction,
                            double val_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic scenes

// Axis-aligned box in which noise and clutter points are drawn.
struct SceneBox {
  std::array<double, 3> lo{-1.0, 1.0, 0.0};
  std::array<double, 3> hi{1.0, 3.0, 2.0};
};

struct SynthConfig {
  int classes = 5;
  int sequences_per_class = 40;
  int frames_per_sequence = 25;
  int points_per_frame = 100;
  int semantic_cluster_points = 70;
  int noise_points = 30;
  double motion_amplitude = 0.3;  // m
  double cluster_sigma = 0.05;    // m
  double frame_rate_hz = 10.0;    // informational
  std::uint64_t seed = 7;
  SceneBox scene;
};

void validate(const SynthConfig& cfg);

// Class c moves a Gaussian cluster along its own direction at its own
// frequency; noise points are uniform in the scene box.
LabeledDataset synth_generate(const SynthConfig& cfg);

// Centroid trajectory (per frame mean of ground-truth semantic points minus
// the first frame's mean), flattened. Used by the separability check.
std::vector<double> cluster_displacement_signature(const Sequence& seq);

// ---------------------------------------------------------------------------
// Occlusion

struct OcclusionModel {
  std::string name = "none";  // none | wood | brick | combined | custom
  double dropout_prob = 0.0;
  int clutter_points = 0;
  double position_jitter_sigma = 0.0;
  double intensity_attenuation = 1.0;
  SceneBox scene;

  static OcclusionModel preset(std::string_view name);
};

void validate(const OcclusionModel& model);

Sequence apply_occlusion(const Sequence& seq, const OcclusionModel& model, std::uint64_t seed);
LabeledDataset apply_occlusion(const LabeledDataset& ds, const OcclusionModel& model,
                               std::uint64_t seed);

}  // namespace esppct
