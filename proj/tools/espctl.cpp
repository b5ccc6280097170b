// espctl: data generation, occlusion, training, evaluation and profiling.

#include <cctype>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "esppct/error.hpp"
#include "esppct/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace esppct;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

EpochCallback progress(bool quiet) {
  if (quiet) return {};
  return [](const EpochReport& r) {
    std::fprintf(stderr, "epoch %4d  train %.6f  val %.6f%s\n", r.epoch, r.train_loss, r.val_loss,
                 r.improved ? "  *" : "");
  };
}

std::vector<GridCell> read_grid(const std::string& arg) {
  if (fs::is_regular_file(arg)) {
    std::ifstream in(arg);
    std::string line, joined;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::size_t c = line.find_first_not_of(" \t");
      if (c == std::string::npos) continue;
      if (!std::isdigit(static_cast<unsigned char>(line[c]))) continue;  // header

      joined += line + ",";
    }
    return parse_grid(joined);
  }
  return parse_grid(arg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"espctl: point-cloud semantic localization and recognition toolkit"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "No per-epoch progress on stderr");

  std::string config_path, data_dir, out_path, in_dir, preset, model_path, report_path, metrics_path, grid;
  std::string split = "test";
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labelled dataset");
  gen->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", seed, "Generator seed")->required();
  gen->add_option("--out", out_path, "Output directory")->required();

  auto* occ = app.add_subcommand("occlude", "Apply an occlusion preset to a dataset");
  occ->add_option("--in", in_dir, "Input dataset directory")->required();
  occ->add_option("--preset", preset, "none|wood|brick|combined")->required()
      ->check(CLI::IsMember({"none", "wood", "brick", "combined"}));
  occ->add_option("--seed", seed, "Occlusion seed")->required();
  occ->add_option("--out", out_path, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train on the train/val part of a dataset");
  tr->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out_path, "Checkpoint path")->required();
  tr->add_option("--metrics", metrics_path, "Metrics JSON (test-split evaluation and loss curves)");

  auto* ev = app.add_subcommand("eval", "Evaluate a trained model");
  ev->add_option("--model", model_path, "Checkpoint path")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--report", report_path, "Metrics JSON")->required();
  ev->add_option("--split", split, "Which part of the dataset to score")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto* prof = app.add_subcommand("profile", "FLOPs/params (and accuracy with --data) over a (top_k, eta) grid");
  prof->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  prof->add_option("--data", data_dir, "Dataset directory; omit for cost-only");
  prof->add_option("--grid", grid, "k,eta pairs inline (\"32,0.45,64,0.68\") or a CSV file")->required();
  prof->add_option("--out", out_path, "Output CSV")->required();

  auto* abl = app.add_subcommand("ablate", "Train and score the full model and the four ablations");
  abl->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  abl->add_option("--data", data_dir, "Dataset directory")->required();
  abl->add_option("--out", out_path, "Output CSV")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every model gradient");
  gc->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  gc->add_option("--seed", seed, "Seed for toy data and parameters")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  try {
    if (*gen) {
      PipelineConfig cfg = load_config(config_path);
      cfg.synth.seed = seed;
      const LabeledDataset ds = synth_generate(cfg.synth);
      write_dataset(ds, out_path);
      const DatasetSplits sp = pipeline_splits(cfg, ds);
      const double oracle = centroid_oracle_accuracy(sp.train, sp.test);
      std::cout << json{{"sequences", ds.sequences.size()},
                        {"classes", ds.class_names},
                        {"centroid_oracle_test_accuracy", oracle}}.dump()
                << "\n";
    } else if (*occ) {
      const LabeledDataset ds = load_dataset(in_dir);
      write_dataset(apply_occlusion(ds, OcclusionModel::preset(preset), seed), out_path);
    } else if (*tr) {
      const PipelineConfig cfg = load_config(config_path);
      const DatasetSplits sp = pipeline_splits(cfg, load_dataset(data_dir));
      TrainResult res = train(cfg, sp.train, sp.val, progress(quiet));
      save_model(out_path, res.model);
      Metrics m = evaluate(res.model, sp.test);
      m.train_loss = res.metrics.train_loss;
      m.val_loss = res.metrics.val_loss;
      json j = to_json(m);
      j["split"] = "test";
      j["best_val_loss"] = res.model.best_val_loss;
      j["best_epoch"] = res.model.best_epoch;
      j["stopped_epoch"] = res.model.stopped_epoch;
      if (!metrics_path.empty()) write_json(metrics_path, j);
      std::cout << json{{"top1_accuracy", j["top1_accuracy"]},
                        {"best_val_loss", res.model.best_val_loss},
                        {"stopped_epoch", res.model.stopped_epoch}}.dump()
                << "\n";
    } else if (*ev) {
      const TrainedModel model = load_model(model_path);
      const LabeledDataset all = load_dataset(data_dir);
      LabeledDataset data = all;
      if (split != "all") {
        DatasetSplits sp = pipeline_splits(model.config, all);
        data = split == "train" ? sp.train : split == "val" ? sp.val : sp.test;
      }
      json j = to_json(evaluate(model, data));
      j["split"] = split;
      write_json(report_path, j);
      std::cout << json{{"top1_accuracy", j["top1_accuracy"]}, {"samples", j["samples"]}}.dump() << "\n";
    } else if (*prof) {
      const PipelineConfig cfg = load_config(config_path);
      std::optional<DatasetSplits> sp;
      if (!data_dir.empty()) sp = pipeline_splits(cfg, load_dataset(data_dir));
      write_text(out_path, profile_csv(profile(cfg, read_grid(grid), sp, progress(quiet))));
    } else if (*abl) {
      const PipelineConfig cfg = load_config(config_path);
      const DatasetSplits sp = pipeline_splits(cfg, load_dataset(data_dir));
      write_text(out_path, ablation_csv(ablate(cfg, sp, progress(quiet))));
    } else if (*gc) {
      const PipelineConfig cfg = load_config(config_path);
      bool ok = true;
      for (const HeadGradCheck& h : gradcheck(cfg, seed)) {
        for (const GradCheckEntry& e : h.report.entries) {
          std::printf("%-8s %-24s n=%-6zu resolved=%-6zu max_rel_err=%.3e  (at %zu: analytic %.6e, numeric %.6e)\n",
                      std::string(to_string(h.head)).c_str(), e.name.c_str(), e.count, e.resolved,
                      e.max_rel_error, e.worst_index, e.worst_analytic, e.worst_numeric);
        }
        const bool pass = h.report.max_rel_error < kGradTolerance;
        ok = ok && pass;
        std::printf("%s %s max_rel_err=%.3e (tolerance %.0e)\n", pass ? "PASS" : "FAIL",
                    std::string(to_string(h.head)).c_str(), h.report.max_rel_error, kGradTolerance);
      }
      if (!ok) return static_cast<int>(ErrorKind::kNumeric);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "espctl: %s\n", e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "espctl: %s\n", e.what());
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "espctl: unexpected error: %s\n", e.what());
    return static_cast<int>(ErrorKind::kUsage);
  }
  return 0;
}
