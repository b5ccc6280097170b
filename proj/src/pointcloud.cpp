#include "esppct/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "esppct/error.hpp"
#include "json.hpp"

namespace esppct {

namespace {

constexpr std::string_view kMaskPrefix = "gt.semantic.";
constexpr std::string_view kManifestFormat = "ESPPCT-MANIFEST v1";

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw DataError("cannot format value");
  return std::string(buf, end);
}

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& msg) {
  throw DataError(source + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

}  // namespace

void validate_point(const Point& p) {
  for (double v : p.features()) {
    if (!std::isfinite(v)) throw DataError("point has a non-finite field");
  }
  if (p.intensity < 0.0) throw DataError("point intensity is negative");
}

void validate_sequence(const Sequence& seq) {
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const Frame& frame = seq.frames[f];
    if (frame.timestamp_index < 0) throw DataError("negative timestamp index");
    if (f > 0 && frame.timestamp_index <= seq.frames[f - 1].timestamp_index) {
      throw DataError("frame timestamps must strictly increase (frame " + std::to_string(f) + ")");
    }
    for (const Point& p : frame.points) validate_point(p);
  }
  for (const auto& [key, value] : seq.meta) {
    if (key.empty() || key.find_first_of("= \t\n\r") != std::string::npos) {
      throw DataError("invalid meta key '" + key + "'");
    }
    if (value.find_first_of("\n\r") != std::string::npos) {
      throw DataError("meta value for '" + key + "' contains a line break");
    }
  }
}

std::optional<std::vector<bool>> semantic_mask(const Sequence& seq, std::size_t frame) {
  auto it = seq.meta.find(std::string(kMaskPrefix) + std::to_string(frame));
  if (it == seq.meta.end()) return std::nullopt;
  std::vector<bool> mask;
  mask.reserve(it->second.size());
  for (char c : it->second) mask.push_back(c == '1');
  return mask;
}

void set_semantic_mask(Sequence& seq, std::size_t frame, const std::vector<bool>& mask) {
  std::string encoded;
  encoded.reserve(mask.size());
  for (bool b : mask) encoded.push_back(b ? '1' : '0');
  seq.meta[std::string(kMaskPrefix) + std::to_string(frame)] = std::move(encoded);
}

// ---------------------------------------------------------------------------

Sequence parse_sequence(std::istream& in, const std::string& source) {
  Sequence seq;
  std::string line;
  std::size_t lineno = 0;

  if (!std::getline(in, line)) parse_fail(source, 1, "missing header");
  ++lineno;
  if (line != kSequenceHeader) parse_fail(source, lineno, "bad header '" + line + "'");

  bool trailer = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const char tag = line[0];
    if (line.size() > 1 && line[1] != ' ') parse_fail(source, lineno, "malformed record");
    if (tag == 'F') {
      if (trailer) parse_fail(source, lineno, "frame record after meta/label lines");
      auto toks = split_ws(std::string_view(line).substr(1));
      Frame frame;
      std::size_t count = 0;
      if (toks.size() != 2 || !parse_number(toks[0], frame.timestamp_index) ||
          !parse_number(toks[1], count)) {
        parse_fail(source, lineno, "expected 'F <timestamp_index> <point_count>'");
      }
      frame.points.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) parse_fail(source, lineno + 1, "truncated frame");
        ++lineno;
        auto vals = split_ws(line);
        Point p;
        if (vals.size() != kPointFeatures || !parse_number(vals[0], p.x) ||
            !parse_number(vals[1], p.y) || !parse_number(vals[2], p.z) ||
            !parse_number(vals[3], p.velocity) || !parse_number(vals[4], p.intensity)) {
          parse_fail(source, lineno, "expected 5 decimal point fields");
        }
        try {
          validate_point(p);
        } catch (const DataError& e) {
          parse_fail(source, lineno, e.what());
        }
        frame.points.push_back(p);
      }
      if (!seq.frames.empty() && frame.timestamp_index <= seq.frames.back().timestamp_index) {
        parse_fail(source, lineno, "frame timestamps must strictly increase");
      }
      if (frame.timestamp_index < 0) parse_fail(source, lineno, "negative timestamp index");
      seq.frames.push_back(std::move(frame));
    } else if (tag == 'M') {
      trailer = true;
      const std::string body = line.size() > 2 ? line.substr(2) : std::string();
      const auto eq = body.find('=');
      if (eq == std::string::npos || eq == 0) parse_fail(source, lineno, "expected 'M <key>=<value>'");
      seq.meta[body.substr(0, eq)] = body.substr(eq + 1);
    } else if (tag == 'L') {
      trailer = true;
      auto toks = split_ws(std::string_view(line).substr(1));
      int label = 0;
      if (toks.size() != 1 || !parse_number(toks[0], label) || label < 0) {
        parse_fail(source, lineno, "expected 'L <label>'");
      }
      seq.label = label;
    } else {
      parse_fail(source, lineno, "unknown record tag");
    }
  }
  return seq;
}

std::string format_sequence(const Sequence& seq) {
  validate_sequence(seq);
  std::string out;
  out.append(kSequenceHeader).push_back('\n');
  for (const Frame& frame : seq.frames) {
    out += "F " + std::to_string(frame.timestamp_index) + " " +
           std::to_string(frame.points.size()) + "\n";
    for (const Point& p : frame.points) {
      const auto f = p.features();
      for (std::size_t k = 0; k < f.size(); ++k) {
        if (k) out.push_back(' ');
        out += format_double(f[k]);
      }
      out.push_back('\n');
    }
  }
  for (const auto& [key, value] : seq.meta) out += "M " + key + "=" + value + "\n";
  if (seq.label) out += "L " + std::to_string(*seq.label) + "\n";
  return out;
}

Sequence load_sequence(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_sequence(in, path.string());
}

void write_sequence(const Sequence& seq, const std::filesystem::path& path) {
  const std::string text = format_sequence(seq);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(name) + "'");
}

void validate_dataset(const LabeledDataset& ds) {
  for (const Sequence& seq : ds.sequences) {
    if (!seq.label) throw DataError("dataset sequence without a label");
    if (*seq.label < 0 || static_cast<std::size_t>(*seq.label) >= ds.class_names.size()) {
      throw DataError("label " + std::to_string(*seq.label) + " outside class_names");
    }
  }
}

void write_dataset(const LabeledDataset& ds, const std::filesystem::path& dir) {
  validate_dataset(ds);
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kManifestFormat;
  manifest["class_names"] = ds.class_names;
  manifest["split"] = to_string(ds.split);
  auto files = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%05zu.txt", i);
    write_sequence(ds.sequences[i], dir / name);
    files.push_back(name);
  }
  manifest["sequences"] = std::move(files);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

LabeledDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  LabeledDataset ds;
  try {
    ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    ds.split = parse_split(manifest.at("split").get<std::string>());
    for (const auto& rel : manifest.at("sequences")) {
      ds.sequences.push_back(load_sequence(dir / rel.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  validate_dataset(ds);
  return ds;
}

DatasetSplits split_dataset(const LabeledDataset& all, double train_fraction,
                            double val_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0) {
    throw UsageError("split fractions must be non-negative and sum to at most 1");
  }
  validate_dataset(all);
  DatasetSplits out;
  for (LabeledDataset* part : {&out.train, &out.val, &out.test}) part->class_names = all.class_names;
  out.train.split = Split::kTrain;
  out.val.split = Split::kVal;
  out.test.split = Split::kTest;

  for (std::size_t c = 0; c < all.class_names.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < all.sequences.size(); ++i) {
      if (*all.sequences[i].label == static_cast<int>(c)) members.push_back(i);
    }
    Rng rng(mix_seed(seed, c));
    rng.shuffle(members);
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * n));
    const auto n_val =
        std::min(members.size() - n_train, static_cast<std::size_t>(std::lround(val_fraction * n)));
    for (std::size_t k = 0; k < members.size(); ++k) {
      LabeledDataset& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
      dst.sequences.push_back(all.sequences[members[k]]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void validate(const SynthConfig& cfg) {
  if (cfg.classes < 2) throw UsageError("synth: classes must be >= 2");
  if (cfg.sequences_per_class < 1) throw UsageError("synth: sequences_per_class must be >= 1");
  if (cfg.frames_per_sequence < 1) throw UsageError("synth: frames_per_sequence must be >= 1");
  if (cfg.points_per_frame < 1) throw UsageError("synth: points_per_frame must be >= 1");
  if (cfg.semantic_cluster_points < 1) throw UsageError("synth: semantic_cluster_points must be >= 1");
  if (cfg.noise_points < 0) throw UsageError("synth: noise_points must be >= 0");
  if (cfg.semantic_cluster_points + cfg.noise_points != cfg.points_per_frame) {
    throw UsageError("synth: semantic_cluster_points + noise_points must equal points_per_frame");
  }
  if (!(cfg.motion_amplitude >= 0) || !(cfg.cluster_sigma >= 0)) {
    throw UsageError("synth: motion_amplitude and cluster_sigma must be >= 0");
  }
  for (int a = 0; a < 3; ++a) {
    if (!(cfg.scene.hi[a] > cfg.scene.lo[a])) throw UsageError("synth: empty scene box");
  }
}

namespace {

struct ClassTemplate {
  std::array<double, 3> direction;
  double frequency;  // cycles per sequence
};

ClassTemplate class_template(int c, int classes) {
  const double theta = 2.0 * std::numbers::pi * c / classes;
  std::array<double, 3> d{std::cos(theta), 0.3 * std::sin(3.0 * theta), std::sin(theta)};
  const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  for (double& v : d) v /= norm;
  return {d, 1.0 + 0.5 * (c % 3)};
}

Point noise_point(Rng& rng, const SceneBox& box) {
  Point p;
  p.x = rng.uniform(box.lo[0], box.hi[0]);
  p.y = rng.uniform(box.lo[1], box.hi[1]);
  p.z = rng.uniform(box.lo[2], box.hi[2]);
  p.velocity = rng.uniform(-1.0, 1.0);
  p.intensity = rng.uniform(0.0, 0.6);
  return p;
}

Sequence synth_sequence(const SynthConfig& cfg, int c, Rng& rng) {
  const ClassTemplate tpl = class_template(c, cfg.classes);
  const double phase = rng.uniform(-0.2, 0.2);
  const double amplitude = cfg.motion_amplitude * rng.uniform(0.9, 1.1);
  std::array<double, 3> base;
  for (int a = 0; a < 3; ++a) {
    base[a] = 0.5 * (cfg.scene.lo[a] + cfg.scene.hi[a]) + rng.uniform(-0.05, 0.05);
  }

  Sequence seq;
  seq.label = c;
  seq.meta["frame_rate_hz"] = format_double(cfg.frame_rate_hz);
  const int T = cfg.frames_per_sequence;
  for (int t = 0; t < T; ++t) {
    const double u = static_cast<double>(t) / T;
    const double arg = 2.0 * std::numbers::pi * tpl.frequency * u + phase;
    std::array<double, 3> centre;
    std::array<double, 3> drift;
    for (int a = 0; a < 3; ++a) {
      centre[a] = base[a] + amplitude * tpl.direction[a] * std::sin(arg);
      drift[a] = amplitude * tpl.direction[a] * 2.0 * std::numbers::pi * tpl.frequency *
                 std::cos(arg);
    }

    std::vector<std::pair<Point, bool>> pts;
    pts.reserve(static_cast<std::size_t>(cfg.points_per_frame));
    for (int i = 0; i < cfg.semantic_cluster_points; ++i) {
      Point p;
      p.x = rng.normal(centre[0], cfg.cluster_sigma);
      p.y = rng.normal(centre[1], cfg.cluster_sigma);
      p.z = rng.normal(centre[2], cfg.cluster_sigma);
      const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
      const double radial =
          r > 0 ? (p.x * drift[0] + p.y * drift[1] + p.z * drift[2]) / r : 0.0;
      p.velocity = radial + rng.normal(0.0, 0.05);
      p.intensity = std::max(0.0, rng.normal(0.8, 0.1));
      pts.emplace_back(p, true);
    }
    for (int i = 0; i < cfg.noise_points; ++i) pts.emplace_back(noise_point(rng, cfg.scene), false);
    rng.shuffle(pts);

    Frame frame;
    frame.timestamp_index = t;
    std::vector<bool> mask;
    for (const auto& [p, semantic] : pts) {
      frame.points.push_back(p);
      mask.push_back(semantic);
    }
    set_semantic_mask(seq, static_cast<std::size_t>(t), mask);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace

LabeledDataset synth_generate(const SynthConfig& cfg) {
  validate(cfg);
  LabeledDataset ds;
  ds.split = Split::kTrain;
  for (int c = 0; c < cfg.classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  for (int c = 0; c < cfg.classes; ++c) {
    for (int s = 0; s < cfg.sequences_per_class; ++s) {
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(c) * 1000003ULL + s));
      ds.sequences.push_back(synth_sequence(cfg, c, rng));
    }
  }
  return ds;
}

std::vector<double> cluster_displacement_signature(const Sequence& seq) {
  std::vector<double> sig;
  std::array<double, 3> first{};
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const auto mask = semantic_mask(seq, f);
    std::array<double, 3> mean{};
    std::size_t n = 0;
    const auto& pts = seq.frames[f].points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (mask && (i >= mask->size() || !(*mask)[i])) continue;
      mean[0] += pts[i].x;
      mean[1] += pts[i].y;
      mean[2] += pts[i].z;
      ++n;
    }
    if (n) {
      for (double& m : mean) m /= static_cast<double>(n);
    }
    if (f == 0) first = mean;
    for (int a = 0; a < 3; ++a) sig.push_back(mean[a] - first[a]);
  }
  return sig;
}

// ---------------------------------------------------------------------------

OcclusionModel OcclusionModel::preset(std::string_view name) {
  OcclusionModel m;
  m.name = std::string(name);
  if (name == "none") return m;
  m.position_jitter_sigma = 0.01;
  m.intensity_attenuation = 0.8;
  if (name == "wood") {
    m.dropout_prob = 0.15;
    m.clutter_points = 10;
  } else if (name == "brick") {
    m.dropout_prob = 0.30;
    m.clutter_points = 20;
  } else if (name == "combined") {
    m.dropout_prob = 0.40;
    m.clutter_points = 30;
  } else {
    throw UsageError("unknown occlusion preset '" + std::string(name) + "'");
  }
  return m;
}

void validate(const OcclusionModel& m) {
  if (!(m.dropout_prob >= 0.0 && m.dropout_prob <= 1.0)) {
    throw UsageError("occlusion: dropout_prob must lie in [0,1]");
  }
  if (m.clutter_points < 0) throw UsageError("occlusion: clutter_points must be >= 0");
  if (!(m.position_jitter_sigma >= 0.0)) throw UsageError("occlusion: jitter sigma must be >= 0");
  if (!(m.intensity_attenuation > 0.0 && m.intensity_attenuation <= 1.0)) {
    throw UsageError("occlusion: intensity_attenuation must lie in (0,1]");
  }
  if (m.name == "none" && (m.dropout_prob != 0.0 || m.clutter_points != 0 ||
                           m.position_jitter_sigma != 0.0 || m.intensity_attenuation != 1.0)) {
    throw UsageError("occlusion: preset 'none' must be the identity");
  }
}

Sequence apply_occlusion(const Sequence& seq, const OcclusionModel& model, std::uint64_t seed) {
  validate(model);
  Sequence out = seq;
  if (model.dropout_prob == 0.0 && model.clutter_points == 0 &&
      model.position_jitter_sigma == 0.0 && model.intensity_attenuation == 1.0) {
    return out;
  }
  Rng rng(seed);
  for (std::size_t f = 0; f < out.frames.size(); ++f) {
    const auto mask = semantic_mask(seq, f);
    std::vector<Point> kept;
    std::vector<bool> kept_mask;
    const auto& src = seq.frames[f].points;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (rng.bernoulli(model.dropout_prob)) continue;
      Point p = src[i];
      if (model.position_jitter_sigma > 0.0) {
        p.x += rng.normal(0.0, model.position_jitter_sigma);
        p.y += rng.normal(0.0, model.position_jitter_sigma);
        p.z += rng.normal(0.0, model.position_jitter_sigma);
      }
      p.intensity *= model.intensity_attenuation;
      kept.push_back(p);
      kept_mask.push_back(mask && i < mask->size() && (*mask)[i]);
    }
    for (int k = 0; k < model.clutter_points; ++k) {
      kept.push_back(noise_point(rng, model.scene));
      kept_mask.push_back(false);
    }
    out.frames[f].points = std::move(kept);
    if (mask) set_semantic_mask(out, f, kept_mask);
  }
  out.meta["occlusion"] = model.name;
  return out;
}

LabeledDataset apply_occlusion(const LabeledDataset& ds, const OcclusionModel& model,
                               std::uint64_t seed) {
  LabeledDataset out;
  out.class_names = ds.class_names;
  out.split = ds.split;
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    out.sequences.push_back(apply_occlusion(ds.sequences[i], model, mix_seed(seed, i)));
  }
  return out;
}

}  // namespace esppct
