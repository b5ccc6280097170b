#pragma once

// Training, evaluation and the experiment drivers behind espctl.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "esppct/cost.hpp"
#include "esppct/model.hpp"

namespace esppct {

struct RegionStats {
  std::size_t frames = 0;        // frames with ground-truth masks
  std::size_t pure_frames = 0;   // chosen voxel >= 90% semantic
  double pure_rate = 0.0;
  double mean_region_purity = 0.0;
  double mean_selection_purity = 0.0;
  double refine_rate = 0.0;      // over all non-empty frames
};

inline constexpr double kPureRegionThreshold = 0.9;

struct Metrics {
  std::size_t samples = 0;
  std::optional<double> top1;
  std::optional<double> mean_loss;
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted]
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  RegionStats region;
  FlopReport flops;
  ParamReport params;
};

nlohmann::json to_json(const Metrics& m);

struct TrainedModel {
  ParamStore params;
  PipelineConfig config;
  std::vector<std::string> class_names;
  double best_val_loss = 0.0;
  int best_epoch = 0;    // 1-based
  int stopped_epoch = 0; // epochs actually run
};

void save_model(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& path);

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};
using EpochCallback = std::function<void(const EpochReport&)>;

struct TrainResult {
  TrainedModel model;
  Metrics metrics;  // loss curves, params, flops; no accuracy
};

TrainResult train(const PipelineConfig& cfg, const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const EpochCallback& on_epoch = {});

Metrics evaluate(const TrainedModel& model, const LabeledDataset& data);

// The deterministic partition train/eval agree on.
DatasetSplits pipeline_splits(const PipelineConfig& cfg, const LabeledDataset& all);

InputShape dataset_shape(const LabeledDataset& data);

struct ProfileRow {
  GridCell cell;
  FlopReport flops;
  ParamReport params;
  std::optional<Metrics> metrics;
};

// Without data only the cost model is evaluated.
std::vector<ProfileRow> profile(const PipelineConfig& cfg, const std::vector<GridCell>& grid,
                                const std::optional<DatasetSplits>& data, const EpochCallback& on_epoch = {});
std::string profile_csv(const std::vector<ProfileRow>& rows);

struct AblationRow {
  Ablation ablation = Ablation::kNone;
  FlopReport flops;
  ParamReport params;
  Metrics metrics;
};

std::vector<AblationRow> ablate(const PipelineConfig& cfg, const DatasetSplits& data,
                                const EpochCallback& on_epoch = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Nearest-class-centroid classifier on ground-truth cluster displacement
// signatures, fit on `train` and scored on `test`. An upper-bound sanity
// check that the generated classes are separable at all.
double centroid_oracle_accuracy(const LabeledDataset& train, const LabeledDataset& test);

// Toy-scale data for gradient checking with `cfg`'s architecture.
LabeledDataset gradcheck_data(const PipelineConfig& cfg, std::uint64_t seed);

inline constexpr double kGradTolerance = 1e-4;
// Denominator floor of the relative error. Central differences at eps 1e-4
// on an O(1) loss carry ~1e-11 absolute roundoff, so smaller gradients
// cannot be resolved to 1e-4 relative.
inline constexpr double kGradFloor = 1e-6;


struct HeadGradCheck {
  HeadKind head = HeadKind::kAppNet;
  GradCheckReport report;
};

// Compares the analytic gradient of the summed toy loss with central
// differences (eps 1e-4) for every parameter, once per head kind.
std::vector<HeadGradCheck> gradcheck(const PipelineConfig& cfg, std::uint64_t seed, double eps = 1e-4,
                                     double floor = kGradFloor);

}  // namespace esppct
