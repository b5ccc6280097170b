#include "esppct/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "esppct/checkpoint.hpp"
#include "esppct/error.hpp"

namespace esppct {

using nlohmann::json;

json to_json(const Metrics& m) {
  json j;
  j["samples"] = m.samples;
  j["top1_accuracy"] = m.top1 ? json(*m.top1) : json(nullptr);
  j["mean_loss"] = m.mean_loss ? json(*m.mean_loss) : json(nullptr);
  j["confusion"] = m.confusion;
  j["loss_curves"] = {{"train", m.train_loss}, {"val", m.val_loss}};
  j["region"] = {{"frames_with_ground_truth", m.region.frames},
                 {"pure_frames", m.region.pure_frames},
                 {"pure_rate", m.region.pure_rate},
                 {"pure_threshold", kPureRegionThreshold},
                 {"mean_region_purity", m.region.mean_region_purity},
                 {"mean_selection_purity", m.region.mean_selection_purity},
                 {"refine_rate", m.region.refine_rate}};
  j["flops"] = to_json(m.flops);
  j["params"] = to_json(m.params);
  return j;
}

void save_model(const std::filesystem::path& path, const TrainedModel& model) {
  json meta = {{"kind", "esppct-model"},
               {"config", to_json(model.config)},
               {"class_names", model.class_names},
               {"best_val_loss", model.best_val_loss},
               {"best_epoch", model.best_epoch},
               {"stopped_epoch", model.stopped_epoch}};
  write_checkpoint(path, model.params, meta);
}

TrainedModel load_model(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  TrainedModel m;
  try {
    if (ck.meta.value("kind", "") != "esppct-model") throw DataError("'" + path.string() + "' is not a model checkpoint");
    m.config = config_from_json(ck.meta.at("config"));
    m.class_names = ck.meta.at("class_names").get<std::vector<std::string>>();
    m.best_val_loss = ck.meta.at("best_val_loss").get<double>();
    m.best_epoch = ck.meta.at("best_epoch").get<int>();
    m.stopped_epoch = ck.meta.at("stopped_epoch").get<int>();
  } catch (const json::exception& e) {
    throw DataError("model '" + path.string() + "': bad metadata: " + e.what());
  }
  const ParamStore expected = init_model(m.config, 0);
  if (expected.size() != ck.params.size()) throw DataError("model '" + path.string() + "': parameter set does not match its config");
  for (std::size_t s = 0; s < expected.size(); ++s) {
    if (!ck.params.contains(expected.name(s)) ||
        !ck.params.value(expected.name(s)).same_shape(expected.value(s))) {
      throw DataError("model '" + path.string() + "': parameter '" + expected.name(s) + "' missing or misshapen");
    }
  }
  m.params = std::move(ck.params);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

void check_labels(const LabeledDataset& ds, const PipelineConfig& cfg, const char* what) {
  validate_dataset(ds);
  for (const Sequence& s : ds.sequences) {
    if (!s.label) throw DataError(std::string(what) + ": unlabelled sequence");
    if (static_cast<std::size_t>(*s.label) >= head_classes(cfg.head.kind)) {
      throw DataError(std::string(what) + ": label " + std::to_string(*s.label) + " exceeds the " +
                      std::string(to_string(cfg.head.kind)) + " class count");
    }
  }
}

Sequence jittered(const Sequence& seq, double sigma, Rng& rng) {
  Sequence out = seq;
  for (Frame& f : out.frames) {
    for (Point& p : f.points) {
      p.x += rng.normal(0.0, sigma);
      p.y += rng.normal(0.0, sigma);
      p.z += rng.normal(0.0, sigma);
    }
  }
  return out;
}

double mean_loss(const ParamStore& params, const PipelineConfig& cfg, const LabeledDataset& ds) {
  double sum = 0.0;
  for (const Sequence& s : ds.sequences) sum += sequence_loss(params, cfg, s);
  return sum / static_cast<double>(ds.sequences.size());
}

}  // namespace

InputShape dataset_shape(const LabeledDataset& data) {
  std::size_t frames = 0, points = 0;
  for (const Sequence& s : data.sequences) {
    frames += s.frames.size();
    for (const Frame& f : s.frames) points += f.points.size();
  }
  InputShape shape;
  if (data.sequences.empty() || frames == 0) return shape;
  shape.frames = static_cast<std::size_t>(
      std::llround(static_cast<double>(frames) / static_cast<double>(data.sequences.size())));
  shape.points = static_cast<double>(points) / static_cast<double>(frames);
  return shape;
}

DatasetSplits pipeline_splits(const PipelineConfig& cfg, const LabeledDataset& all) {
  return split_dataset(all, cfg.training.train_fraction, cfg.training.val_fraction,
                       mix_seed(cfg.training.seed, 0x5eed));
}

TrainResult train(const PipelineConfig& cfg, const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const EpochCallback& on_epoch) {
  validate(cfg);
  if (train_set.sequences.empty()) throw DataError("train: empty training split");
  if (val_set.sequences.empty()) throw DataError("train: empty validation split");
  check_labels(train_set, cfg, "train split");
  check_labels(val_set, cfg, "validation split");

  const TrainConfig& tc = cfg.training;
  ParamStore params = init_model(cfg, mix_seed(tc.seed, 1));
  TrainResult result;
  TrainedModel& model = result.model;
  model.config = cfg;
  model.class_names = train_set.class_names;
  model.params = params;
  model.best_val_loss = std::numeric_limits<double>::infinity();

  Rng order_rng(mix_seed(tc.seed, 2));
  Rng augment_rng(mix_seed(tc.seed, 3));
  std::vector<std::size_t> order(train_set.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int wait = 0;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      const std::size_t end = std::min(order.size(), b + tc.batch_size);
      params.zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const Sequence& seq = train_set.sequences[order[i]];
        if (tc.augment_jitter > 0.0) {
          epoch_loss += loss_and_grad(params, cfg, jittered(seq, tc.augment_jitter, augment_rng));
        } else {
          epoch_loss += loss_and_grad(params, cfg, seq);
        }
      }
      const double step = tc.learning_rate / static_cast<double>(end - b);
      for (std::size_t s = 0; s < params.size(); ++s) {
        auto& v = params.value(s).data;
        const auto& g = params.grad(s).data;
        for (std::size_t k = 0; k < v.size(); ++k) v[k] -= step * g[k];
      }
    }
    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = epoch_loss / static_cast<double>(order.size());
    rep.val_loss = mean_loss(params, cfg, val_set);
    if (!std::isfinite(rep.train_loss) || !std::isfinite(rep.val_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (train loss " +
                         std::to_string(rep.train_loss) + ", val loss " + std::to_string(rep.val_loss) +
                         "); lower training.learning_rate");
    }
    result.metrics.train_loss.push_back(rep.train_loss);
    result.metrics.val_loss.push_back(rep.val_loss);
    rep.improved = rep.val_loss < model.best_val_loss;
    if (rep.improved) {
      model.best_val_loss = rep.val_loss;
      model.best_epoch = epoch;
      model.params = params;
      wait = 0;
    } else {
      ++wait;
    }
    model.stopped_epoch = epoch;
    if (on_epoch) on_epoch(rep);
    if (!rep.improved && wait >= tc.patience) break;
  }

  result.metrics.samples = train_set.sequences.size();
  result.metrics.params = count_params(cfg);
  result.metrics.flops = count_flops(cfg, dataset_shape(train_set));
  return result;
}

Metrics evaluate(const TrainedModel& model, const LabeledDataset& data) {
  const PipelineConfig& cfg = model.config;
  if (data.sequences.empty()) throw DataError("evaluate: empty dataset");
  check_labels(data, cfg, "evaluation data");
  if (data.class_names != model.class_names) throw DataError("evaluate: dataset classes differ from the model's");

  const std::size_t classes = model.class_names.size();
  Metrics m;
  m.samples = data.sequences.size();
  m.confusion.assign(classes, std::vector<std::uint64_t>(classes, 0));
  double loss = 0.0, region_purity = 0.0, sel_purity = 0.0;
  std::size_t correct = 0, nonempty = 0, refine = 0;
  for (const Sequence& seq : data.sequences) {
    const Prediction p = predict(model.params, cfg, seq);
    const auto label = static_cast<std::size_t>(*seq.label);
    if (label >= classes) throw DataError("evaluate: label outside the model's class list");
    // Predictions beyond the dataset's class list count as wrong.
    if (p.result.label < classes) ++m.confusion[label][p.result.label];
    correct += p.result.label == label ? 1 : 0;
    const auto probs = softmax(p.logits);
    loss += -std::log(std::max(probs[label], std::numeric_limits<double>::min()));
    for (const FrameTrace& f : p.frames) {
      if (f.points == 0) continue;
      ++nonempty;
      refine += f.region.decision == Decision::kRefine ? 1 : 0;
      if (!f.region_purity) continue;
      ++m.region.frames;
      region_purity += *f.region_purity;
      sel_purity += f.selection_purity.value_or(0.0);
      if (*f.region_purity >= kPureRegionThreshold) ++m.region.pure_frames;
    }
  }
  const double n = static_cast<double>(m.samples);
  m.top1 = static_cast<double>(correct) / n;
  m.mean_loss = loss / n;
  if (m.region.frames) {
    const double f = static_cast<double>(m.region.frames);
    m.region.pure_rate = static_cast<double>(m.region.pure_frames) / f;
    m.region.mean_region_purity = region_purity / f;
    m.region.mean_selection_purity = sel_purity / f;
  }
  if (nonempty) m.region.refine_rate = static_cast<double>(refine) / static_cast<double>(nonempty);
  m.params = count_params(cfg);
  m.flops = count_flops(cfg, dataset_shape(data));
  return m;
}

// ---------------------------------------------------------------------------

namespace {

InputShape nominal_shape(const PipelineConfig& cfg, const std::optional<DatasetSplits>& data) {
  if (data && !data->test.sequences.empty()) return dataset_shape(data->test);
  return {static_cast<std::size_t>(cfg.synth.frames_per_sequence), static_cast<double>(cfg.synth.points_per_frame)};
}

// Shortest representation that reads back to the same double.
std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<ProfileRow> profile(const PipelineConfig& cfg, const std::vector<GridCell>& grid,
                                const std::optional<DatasetSplits>& data, const EpochCallback& on_epoch) {
  if (grid.empty()) throw UsageError("profile: empty grid");
  std::vector<ProfileRow> rows;
  const InputShape shape = nominal_shape(cfg, data);
  for (const GridCell& cell : grid) {
    PipelineConfig c = cfg;
    c.focus.top_k = cell.top_k;
    c.focus.eta = cell.eta;
    validate(c);
    ProfileRow row;
    row.cell = cell;
    row.flops = count_flops(c, shape);
    row.params = count_params(c);
    if (data) {
      TrainResult tr = train(c, data->train, data->val, on_epoch);
      Metrics m = evaluate(tr.model, data->test);
      m.train_loss = tr.metrics.train_loss;
      m.val_loss = tr.metrics.val_loss;
      row.metrics = std::move(m);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string profile_csv(const std::vector<ProfileRow>& rows) {
  std::ostringstream o;
  o << "method,top_k,eta,top1_acc,flops_g,params_k,flops_total,params_total,flops_attention,flops_ngsa,"
       "flops_focus,flops_head,flops_downstream\n";
  for (const ProfileRow& r : rows) {
    o << "k=" << r.cell.top_k << " eta=" << fmt(r.cell.eta) << "," << r.cell.top_k << ',' << fmt(r.cell.eta)
      << ',' << (r.metrics && r.metrics->top1 ? fmt(*r.metrics->top1) : std::string()) << ','
      << fmt(r.flops.total / 1e9) << ',' << fmt(static_cast<double>(r.params.total) / 1e3) << ','
      << fmt(r.flops.total) << ',' << r.params.total << ',' << fmt(r.flops.attention) << ',' << fmt(r.flops.ngsa)
      << ',' << fmt(r.flops.focus) << ',' << fmt(r.flops.head) << ',' << fmt(r.flops.downstream) << '\n';
  }
  return o.str();
}

std::vector<AblationRow> ablate(const PipelineConfig& cfg, const DatasetSplits& data, const EpochCallback& on_epoch) {
  std::vector<AblationRow> rows;
  const InputShape shape = nominal_shape(cfg, data);
  for (Ablation a : kAllAblations) {
    PipelineConfig c = cfg;
    c.focus.ablation = a;
    validate(c);
    AblationRow row;
    row.ablation = a;
    row.flops = count_flops(c, shape);
    row.params = count_params(c);
    TrainResult tr = train(c, data.train, data.val, on_epoch);
    row.metrics = evaluate(tr.model, data.test);
    row.metrics.train_loss = tr.metrics.train_loss;
    row.metrics.val_loss = tr.metrics.val_loss;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream o;
  o << "ablation,top1_acc,flops_g,params_k,flops_total,params_total\n";
  for (const AblationRow& r : rows) {
    o << (r.ablation == Ablation::kNone ? std::string("full") : std::string(to_string(r.ablation))) << ','
      << (r.metrics.top1 ? fmt(*r.metrics.top1) : std::string()) << ',' << fmt(r.flops.total / 1e9) << ','
      << fmt(static_cast<double>(r.params.total) / 1e3) << ',' << fmt(r.flops.total) << ',' << r.params.total << '\n';
  }
  return o.str();
}

// ---------------------------------------------------------------------------

double centroid_oracle_accuracy(const LabeledDataset& train, const LabeledDataset& test) {
  if (train.sequences.empty() || test.sequences.empty()) throw DataError("centroid oracle: empty split");
  std::vector<std::vector<double>> centroid;
  std::vector<std::size_t> count;
  for (const Sequence& s : train.sequences) {
    const auto sig = cluster_displacement_signature(s);
    const auto c = static_cast<std::size_t>(s.label.value_or(0));
    if (c >= centroid.size()) {
      centroid.resize(c + 1);
      count.resize(c + 1, 0);
    }
    if (centroid[c].empty()) centroid[c].assign(sig.size(), 0.0);
    if (centroid[c].size() != sig.size()) throw DataError("centroid oracle: sequences differ in length");
    for (std::size_t k = 0; k < sig.size(); ++k) centroid[c][k] += sig[k];
    ++count[c];
  }
  for (std::size_t c = 0; c < centroid.size(); ++c) {
    for (double& v : centroid[c]) v /= static_cast<double>(std::max<std::size_t>(count[c], 1));
  }
  std::size_t correct = 0;
  for (const Sequence& s : test.sequences) {
    const auto sig = cluster_displacement_signature(s);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroid.size(); ++c) {
      if (count[c] == 0 || centroid[c].size() != sig.size()) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < sig.size(); ++k) d += (sig[k] - centroid[c][k]) * (sig[k] - centroid[c][k]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += static_cast<int>(best) == s.label.value_or(-1) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.sequences.size());
}

LabeledDataset gradcheck_data(const PipelineConfig& cfg, std::uint64_t seed) {
  SynthConfig s = cfg.synth;
  s.classes = 2;
  s.sequences_per_class = 1;
  s.frames_per_sequence = 2;
  s.points_per_frame = 12;
  s.semantic_cluster_points = 9;
  s.noise_points = 3;
  s.cluster_sigma = 0.3;  // spread neighbourhoods so attention is far from uniform
  s.seed = seed;
  LabeledDataset ds = synth_generate(s);
  ds.sequences.erase(ds.sequences.begin());  // one labelled sequence is enough
  return ds;
}

std::vector<HeadGradCheck> gradcheck(const PipelineConfig& cfg, std::uint64_t seed, double eps, double floor) {
  std::vector<HeadGradCheck> out;
  for (HeadKind kind : {cfg.head.kind, cfg.head.kind == HeadKind::kAppNet ? HeadKind::kKeyNet : HeadKind::kAppNet}) {
    PipelineConfig c = cfg;
    c.head.kind = kind;
    // Finite differences are meaningless across ReLU kinks.
    c.attention.activation = Activation::kTanh;
    c.head.activation = Activation::kTanh;
    validate(c);
    const LabeledDataset data = gradcheck_data(c, seed);
    ParamStore params = init_model(c, mix_seed(seed, 1));
    // Sharper attention than the default init, so logit-path gradients sit
    // well above the finite-difference noise floor.
    for (std::size_t s = 0; s < params.size(); ++s) {
      if (params.name(s).starts_with("attn.")) {
        for (double& v : params.value(s).data) v *= 2.0;
      }
    }
    params.zero_grad();
    std::vector<std::vector<FrameTrace>> traces(data.sequences.size());
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
      loss_and_grad(params, c, data.sequences[i], &traces[i]);
    }
    const ScalarObjective f = [&](const ParamStore& p) {
      double total = 0.0;
      for (std::size_t i = 0; i < data.sequences.size(); ++i) total += sequence_loss(p, c, data.sequences[i], &traces[i]);
      return total;
    };
    out.push_back({kind, compare_gradients(f, params, eps, floor)});
  }
  return out;
}

}  // namespace esppct
