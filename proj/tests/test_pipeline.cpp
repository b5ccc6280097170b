#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "esppct/checkpoint.hpp"
#include "esppct/error.hpp"
#include "esppct/pipeline.hpp"

using namespace esppct;

namespace {

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.synth.classes = 2;
  c.synth.sequences_per_class = 8;
  c.synth.frames_per_sequence = 4;
  c.synth.points_per_frame = 20;
  c.synth.semantic_cluster_points = 14;
  c.synth.noise_points = 6;
  c.attention.depth = 1;
  c.attention.d_attention = 4;
  c.attention.k_nn = 4;
  c.focus.top_k = 4;
  c.focus.max_points = 20;
  c.training.epochs = 6;
  c.training.patience = 6;
  c.training.learning_rate = 0.05;
  c.training.batch_size = 2;
  return c;
}

bool bit_equal(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (a.name(s) != b.name(s) || !a.value(s).same_shape(b.value(s))) return false;
    for (std::size_t k = 0; k < a.value(s).size(); ++k) {
      if (std::bit_cast<std::uint64_t>(a.value(s).data[k]) != std::bit_cast<std::uint64_t>(b.value(s).data[k]))
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("checkpoint: bit-exact round trip including awkward values") {
  ParamStore s;
  s.add("a", Tensor2(2, 3, {0.1, -0.0, 5e-324, std::numeric_limits<double>::max(), -1e-300, 1.0 / 3.0}));
  s.add("b.c", Tensor2(1, 1, {42.0}));
  const nlohmann::json meta = {{"kind", "test"}};
  const std::string bytes = encode_checkpoint(s, meta);
  CHECK(bytes.substr(0, 8) == "ESPPCT01");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(bit_equal(s, back.params));
  CHECK(back.meta == meta);
  CHECK(checkpoint_scalar_count(bytes) == 7);
}

TEST_CASE("checkpoint: corrupt input is a data error") {
  ParamStore s;
  s.add("a", Tensor2(1, 2, {1.0, 2.0}));
  const std::string bytes = encode_checkpoint(s);
  CHECK_THROWS_AS(decode_checkpoint("ESPPCT02" + bytes.substr(8)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), DataError);
  CHECK_THROWS_AS(decode_checkpoint("ESP"), DataError);
  CHECK_THROWS_AS(read_checkpoint("/nonexistent.ckpt"), DataError);
}

TEST_CASE("model: init is seed-deterministic and named by stage") {
  const PipelineConfig c = tiny_config();
  const ParamStore a = init_model(c, 5);
  CHECK(bit_equal(a, init_model(c, 5)));
  CHECK_FALSE(bit_equal(a, init_model(c, 6)));
  CHECK(a.contains("attn.0.phi.weight"));
  CHECK(a.contains("ngsa.w"));
  CHECK(a.contains("head.lstm.wx"));
  CHECK(a.value("ngsa.w").rows == 1);
  CHECK(a.value("ngsa.w").cols == 4);
}

TEST_CASE("model: loss_and_grad and sequence_loss agree; predict is deterministic") {
  const PipelineConfig c = tiny_config();
  const LabeledDataset ds = synth_generate(c.synth);
  ParamStore p = init_model(c, 3);
  std::vector<FrameTrace> traces;
  const double l1 = loss_and_grad(p, c, ds.sequences[0], &traces);
  CHECK(std::isfinite(l1));
  CHECK(traces.size() == 4);
  CHECK(sequence_loss(p, c, ds.sequences[0]) == l1);
  CHECK(sequence_loss(p, c, ds.sequences[0], &traces) == l1);
  bool any_grad = false;
  for (std::size_t s = 0; s < p.size(); ++s)
    for (double g : p.grad(s).data) any_grad = any_grad || g != 0.0;
  CHECK(any_grad);

  const Prediction a = predict(p, c, ds.sequences[1]);
  const Prediction b = predict(p, c, ds.sequences[1]);
  CHECK(a.logits == b.logits);
  CHECK(a.logits.size() == kAppNetClasses);
  for (const FrameTrace& t : a.frames) {
    CHECK(t.selected.size() == 4);
    CHECK(t.region_purity.has_value());
  }
}

TEST_CASE("model: empty frames and frames smaller than K") {
  const PipelineConfig c = tiny_config();
  Sequence seq = synth_generate(c.synth).sequences[0];
  seq.frames[1].points.clear();
  seq.frames[2].points.resize(2);
  seq.meta.clear();
  const ParamStore p = init_model(c, 1);
  const Prediction pr = predict(p, c, seq);
  CHECK(std::isfinite(pr.logits[0]));
  CHECK(pr.frames[1].points == 0);
  CHECK(pr.frames[2].padded);
  CHECK(pr.frames[2].selected.size() <= 2);
}

TEST_CASE("training: loss falls, early stopping keeps the best epoch") {
  PipelineConfig c = tiny_config();
  const DatasetSplits sp = pipeline_splits(c, synth_generate(c.synth));
  std::vector<EpochReport> log;
  const TrainResult r = train(c, sp.train, sp.val, [&](const EpochReport& e) { log.push_back(e); });
  REQUIRE(log.size() == static_cast<std::size_t>(r.model.stopped_epoch));
  CHECK(r.metrics.train_loss.back() < r.metrics.train_loss.front());
  double best = INFINITY;
  int best_epoch = 0;
  for (const auto& e : log) {
    if (e.val_loss < best) {
      best = e.val_loss;
      best_epoch = e.epoch;
    }
  }
  CHECK(r.model.best_epoch == best_epoch);
  CHECK(r.model.best_val_loss == best);
  // the returned parameters are the best epoch's
  double val = 0.0;
  for (const auto& s : sp.val.sequences) val += sequence_loss(r.model.params, r.model.config, s);
  CHECK(val / static_cast<double>(sp.val.sequences.size()) == doctest::Approx(best).epsilon(1e-12));

  c.training.patience = 0;
  c.training.learning_rate = 5.0;  // diverging steps stop the run at the first non-improvement
  const TrainResult s = train(c, sp.train, sp.val);
  CHECK(s.model.stopped_epoch <= c.training.epochs);
  CHECK(s.model.stopped_epoch >= s.model.best_epoch);
}

TEST_CASE("training is reproducible for a fixed seed") {
  PipelineConfig c = tiny_config();
  c.training.epochs = 2;
  c.training.patience = 2;
  const DatasetSplits sp = pipeline_splits(c, synth_generate(c.synth));
  CHECK(bit_equal(train(c, sp.train, sp.val).model.params, train(c, sp.train, sp.val).model.params));
}

TEST_CASE("evaluate: confusion and region statistics are consistent") {
  PipelineConfig c = tiny_config();
  c.training.epochs = 1;
  c.training.patience = 1;
  const DatasetSplits sp = pipeline_splits(c, synth_generate(c.synth));
  const TrainResult r = train(c, sp.train, sp.val);
  const Metrics m = evaluate(r.model, sp.test);
  CHECK(m.samples == sp.test.sequences.size());
  std::uint64_t total = 0, diag = 0;
  for (std::size_t i = 0; i < m.confusion.size(); ++i) {
    for (std::size_t j = 0; j < m.confusion[i].size(); ++j) {
      total += m.confusion[i][j];
      if (i == j) diag += m.confusion[i][j];
    }
  }
  CHECK(total == m.samples);
  REQUIRE(m.top1);
  CHECK(*m.top1 == doctest::Approx(static_cast<double>(diag) / static_cast<double>(total)));
  CHECK(m.region.frames == m.samples * 4);
  CHECK(m.region.pure_rate >= 0.0);
  CHECK(m.region.pure_rate <= 1.0);
  CHECK(m.params.total == count_params(c).total);
}

TEST_CASE("model file round trip and shape validation") {
  PipelineConfig c = tiny_config();
  TrainedModel m;
  m.config = c;
  m.params = init_model(c, 9);
  m.class_names = {"a", "b"};
  m.best_epoch = 3;
  const auto path = std::filesystem::temp_directory_path() / "esppct_model.ckpt";
  save_model(path, m);
  const TrainedModel back = load_model(path);
  CHECK(bit_equal(m.params, back.params));
  CHECK(back.class_names == m.class_names);
  CHECK(to_json(back.config) == to_json(c));
  CHECK(back.best_epoch == 3);

  write_checkpoint(path, m.params, {{"kind", "other"}});
  CHECK_THROWS_AS(load_model(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("centroid oracle separates the default synthetic classes") {
  SynthConfig s;
  s.sequences_per_class = 10;
  PipelineConfig c;
  c.synth = s;
  const DatasetSplits sp = pipeline_splits(c, synth_generate(s));
  CHECK(centroid_oracle_accuracy(sp.train, sp.test) >= 0.9);
}
