#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "esppct/error.hpp"
#include "esppct/pointcloud.hpp"
#include "support.hpp"

using namespace esppct;

namespace {

Sequence parse(const std::string& text) {
  std::istringstream in(text);
  return parse_sequence(in);
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("esppct_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("sequence text: parses a hand-written file") {
  const Sequence s = parse(
      "ESPPCT-SEQ v1\n"
      "F 3 2\n"
      "0.5 1.25 -2 0.1 3\n"
      "1e-3 0 0 0 0\n"
      "\n"
      "F 4 0\n"
      "M subject=s01\n"
      "L 2\n");
  REQUIRE(s.frames.size() == 2);
  CHECK(s.frames[0].timestamp_index == 3);
  CHECK(s.frames[0].points[0] == Point{0.5, 1.25, -2.0, 0.1, 3.0});
  CHECK(s.frames[0].points[1].x == 1e-3);
  CHECK(s.frames[1].points.empty());
  CHECK(s.meta.at("subject") == "s01");
  CHECK(s.label == 2);
}

TEST_CASE("sequence text: malformed inputs are data errors") {
  const char* bad[] = {
      "",
      "ESPPCT-SEQ v2\n",
      "ESPPCT-SEQ v1\nF 0 2\n0 0 0 0 0\n",
      "ESPPCT-SEQ v1\nF 0 1\n0 0 0 0\n",
      "ESPPCT-SEQ v1\nF 0 1\n0 0 0 0 -1\n",
      "ESPPCT-SEQ v1\nF 0 1\n0 0 nan 0 0\n",
      "ESPPCT-SEQ v1\nF 1 0\nF 1 0\n",
      "ESPPCT-SEQ v1\nF -1 0\n",
      "ESPPCT-SEQ v1\nX 0\n",
      "ESPPCT-SEQ v1\nL -3\n",
      "ESPPCT-SEQ v1\nM novalue\n",
      "ESPPCT-SEQ v1\nL 1\nF 0 0\n",
  };
  for (const char* text : bad) {
    CAPTURE(text);
    CHECK_THROWS_AS(parse(text), DataError);
  }
}

TEST_CASE("sequence text: round trip on 100 random sequences is exact") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Sequence s = testing::random_sequence(rng, 1 + rng.below(6), 20);
    const Sequence back = parse(format_sequence(s));
    REQUIRE(back == s);
    CHECK(format_sequence(back) == format_sequence(s));
  }
}

TEST_CASE("sequence text: shortest round-trip formatting") {
  Sequence s;
  s.frames.push_back(Frame{0, {Point{0.1, 1.0 / 3.0, 5e-324, -0.0, 1e300}}});
  const std::string text = format_sequence(s);
  CHECK(text.find("0.1 ") != std::string::npos);
  CHECK(parse(text) == s);
}

TEST_CASE("semantic masks live in sequence meta") {
  Sequence s;
  s.frames.push_back(Frame{0, {Point{}, Point{}, Point{}}});
  set_semantic_mask(s, 0, {true, false, true});
  CHECK(s.meta.at("gt.semantic.0") == "101");
  CHECK(semantic_mask(s, 0) == std::vector<bool>{true, false, true});
  CHECK_FALSE(semantic_mask(s, 1).has_value());
}

TEST_CASE("synthetic generator: shape, masks and determinism") {
  SynthConfig cfg;
  cfg.sequences_per_class = 3;
  cfg.frames_per_sequence = 4;
  const LabeledDataset a = synth_generate(cfg);
  const LabeledDataset b = synth_generate(cfg);
  REQUIRE(a.sequences.size() == 15);
  CHECK(a.class_names.size() == 5);
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    const Sequence& s = a.sequences[i];
    CHECK(s == b.sequences[i]);
    REQUIRE(s.frames.size() == 4);
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      CHECK(s.frames[f].points.size() == 100);
      const auto mask = semantic_mask(s, f);
      REQUIRE(mask);
      CHECK(std::count(mask->begin(), mask->end(), true) == 70);
    }
  }
  cfg.seed = 8;
  CHECK(synth_generate(cfg).sequences[0] != a.sequences[0]);
}

TEST_CASE("synthetic generator: rejects inconsistent point counts") {
  SynthConfig cfg;
  cfg.noise_points = 31;
  CHECK_THROWS_AS(synth_generate(cfg), UsageError);
  cfg = {};
  cfg.classes = 1;
  CHECK_THROWS_AS(synth_generate(cfg), UsageError);
}

TEST_CASE("dataset directory round trip") {
  SynthConfig cfg;
  cfg.sequences_per_class = 2;
  cfg.frames_per_sequence = 2;
  const LabeledDataset ds = synth_generate(cfg);
  const auto dir = scratch_dir("dataset");
  write_dataset(ds, dir);
  const LabeledDataset back = load_dataset(dir);
  CHECK(back.class_names == ds.class_names);
  CHECK(back.sequences == ds.sequences);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_dataset(dir), DataError);
}

TEST_CASE("splits are stratified, disjoint and seed-stable") {
  SynthConfig cfg;
  cfg.sequences_per_class = 8;
  cfg.frames_per_sequence = 1;
  const LabeledDataset ds = synth_generate(cfg);
  const DatasetSplits sp = split_dataset(ds, 0.5, 0.25, 3);
  CHECK(sp.train.sequences.size() == 20);
  CHECK(sp.val.sequences.size() == 10);
  CHECK(sp.test.sequences.size() == 10);
  std::vector<int> per_class(5, 0);
  for (const auto& s : sp.test.sequences) ++per_class[*s.label];
  CHECK(per_class == std::vector<int>(5, 2));
  std::set<std::string> seen;
  for (const auto* part : {&sp.train, &sp.val, &sp.test}) {
    for (const auto& s : part->sequences) CHECK(seen.insert(format_sequence(s)).second);
  }
  CHECK(split_dataset(ds, 0.5, 0.25, 3).test.sequences == sp.test.sequences);
  CHECK_THROWS_AS(split_dataset(ds, 0.8, 0.3, 3), UsageError);
}

TEST_CASE("occlusion: none is the identity and presets get harsher") {
  SynthConfig cfg;
  cfg.sequences_per_class = 2;
  cfg.frames_per_sequence = 10;
  const LabeledDataset ds = synth_generate(cfg);
  CHECK(apply_occlusion(ds, OcclusionModel::preset("none"), 1).sequences == ds.sequences);

  double prev_semantic = 1e9;
  for (const char* name : {"wood", "brick", "combined"}) {
    const LabeledDataset occ = apply_occlusion(ds, OcclusionModel::preset(name), 1);
    double semantic = 0;
    for (const Sequence& s : occ.sequences) {
      CHECK(s.meta.at("occlusion") == name);
      for (std::size_t f = 0; f < s.frames.size(); ++f) {
        const auto mask = semantic_mask(s, f);
        REQUIRE(mask);
        REQUIRE(mask->size() == s.frames[f].points.size());
        semantic += static_cast<double>(std::count(mask->begin(), mask->end(), true));
      }
    }
    CHECK(semantic < prev_semantic);
    prev_semantic = semantic;
  }
  CHECK_THROWS_AS(OcclusionModel::preset("glass"), UsageError);
}
