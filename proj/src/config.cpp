#include "esppct/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

#include "esppct/error.hpp"

namespace esppct {

using nlohmann::json;

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw UsageError("training: epochs must be >= 1");
  if (cfg.patience < 0) throw UsageError("training: patience must be >= 0");
  if (cfg.patience > cfg.epochs) throw UsageError("training: patience must not exceed epochs");
  if (!(cfg.learning_rate > 0.0)) throw UsageError("training: learning_rate must be positive");
  if (cfg.batch_size == 0) throw UsageError("training: batch_size must be >= 1");
  if (!(cfg.train_fraction > 0.0) || !(cfg.val_fraction > 0.0) ||
      cfg.train_fraction + cfg.val_fraction >= 1.0) {
    throw UsageError("training: fractions must be positive and leave room for a test split");
  }
  if (!(cfg.augment_jitter >= 0.0)) throw UsageError("training: augment_jitter must be >= 0");
}

void validate(const PipelineConfig& cfg) {
  validate(cfg.synth);
  validate(cfg.grouping);
  validate(cfg.attention);
  validate(cfg.focus);
  validate(cfg.training);
  if (cfg.representation_width() == 0) throw UsageError("config: representation width is zero (top_k = 0)");
  for (std::size_t w : cfg.head.feature_hidden) {
    if (w == 0) throw UsageError("head: feature_hidden widths must be >= 1");
  }
  if (static_cast<std::size_t>(cfg.synth.classes) > head_classes(cfg.head.kind)) {
    throw UsageError("config: " + std::to_string(cfg.synth.classes) + " classes exceed the " +
                     std::string(to_string(cfg.head.kind)) + " output size");
  }
  for (const GridCell& c : cfg.presets) {
    if (!(c.eta >= 0.0 && c.eta <= 1.0)) throw UsageError("config: preset eta outside [0, 1]");
  }
}

namespace {

json scene_json(const SceneBox& b) { return {{"lo", b.lo}, {"hi", b.hi}}; }

// Reads keys of `j` into fields; rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw UsageError("config: '" + section_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw UsageError("config: unknown key '" + section_ + "." + k + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw UsageError("config: bad value for '" + section_ + "." + key + "': " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

template <typename E, typename Parse>
void get_enum(Reader& r, const char* key, E& out, Parse parse) {
  std::string s;
  r.get(key, s);
  if (!s.empty()) out = parse(s);
}

void read_scene(const json& j, SceneBox& b, const std::string& where) {
  Reader r(j, where);
  r.get("lo", b.lo);
  r.get("hi", b.hi);
}

}  // namespace

json to_json(const PipelineConfig& c) {
  json presets = json::array();
  for (const GridCell& g : c.presets) presets.push_back({{"top_k", g.top_k}, {"eta", g.eta}});
  return {
      {"synth",
       {{"classes", c.synth.classes},
        {"sequences_per_class", c.synth.sequences_per_class},
        {"frames_per_sequence", c.synth.frames_per_sequence},
        {"points_per_frame", c.synth.points_per_frame},
        {"semantic_cluster_points", c.synth.semantic_cluster_points},
        {"noise_points", c.synth.noise_points},
        {"motion_amplitude", c.synth.motion_amplitude},
        {"cluster_sigma", c.synth.cluster_sigma},
        {"frame_rate_hz", c.synth.frame_rate_hz},
        {"seed", c.synth.seed},
        {"scene", scene_json(c.synth.scene)}}},
      {"grouping", {{"mode", "voxel"}, {"cell_size", c.grouping.cell_size}, {"grid_origin", c.grouping.grid_origin}}},
      {"attention",
       {{"depth", c.attention.depth},
        {"d_attention", c.attention.d_attention},
        {"k_nn", c.attention.k_nn},
        {"gamma_layers", c.attention.gamma_layers},
        {"delta_layers", c.attention.delta_layers},
        {"activation", to_string(c.attention.activation)}}},
      {"focus",
       {{"top_k", c.focus.top_k},
        {"eta", c.focus.eta},
        {"ablation", to_string(c.focus.ablation)},
        {"unit", to_string(c.focus.unit)},
        {"region_score", to_string(c.focus.region_score)},
        {"score_gating", c.focus.score_gating},
        {"max_points", c.focus.max_points}}},
      {"head",
       {{"kind", to_string(c.head.kind)},
        {"feature_hidden", c.head.feature_hidden},
        {"activation", to_string(c.head.activation)}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"patience", c.training.patience},
        {"learning_rate", c.training.learning_rate},
        {"batch_size", c.training.batch_size},
        {"seed", c.training.seed},
        {"train_fraction", c.training.train_fraction},
        {"val_fraction", c.training.val_fraction},
        {"augment_jitter", c.training.augment_jitter}}},
      {"downstream", {{"layers", c.downstream.layers}, {"width", c.downstream.width}}},
      {"presets", presets},
  };
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  bool explicit_max_points = false;
  Reader root(j, "<root>");
  if (const json* s = root.sub("synth")) {
    Reader r(*s, "synth");
    r.get("classes", c.synth.classes);
    r.get("sequences_per_class", c.synth.sequences_per_class);
    r.get("frames_per_sequence", c.synth.frames_per_sequence);
    r.get("points_per_frame", c.synth.points_per_frame);
    r.get("semantic_cluster_points", c.synth.semantic_cluster_points);
    r.get("noise_points", c.synth.noise_points);
    r.get("motion_amplitude", c.synth.motion_amplitude);
    r.get("cluster_sigma", c.synth.cluster_sigma);
    r.get("frame_rate_hz", c.synth.frame_rate_hz);
    r.get("seed", c.synth.seed);
    if (const json* b = r.sub("scene")) read_scene(*b, c.synth.scene, "synth.scene");
  }
  if (const json* s = root.sub("grouping")) {
    Reader r(*s, "grouping");
    std::string mode = "voxel";
    r.get("mode", mode);
    if (mode != "voxel") throw UsageError("config: grouping.mode must be 'voxel'");
    r.get("cell_size", c.grouping.cell_size);
    r.get("grid_origin", c.grouping.grid_origin);
  }
  if (const json* s = root.sub("attention")) {
    Reader r(*s, "attention");
    r.get("depth", c.attention.depth);
    r.get("d_attention", c.attention.d_attention);
    r.get("k_nn", c.attention.k_nn);
    r.get("gamma_layers", c.attention.gamma_layers);
    r.get("delta_layers", c.attention.delta_layers);
    get_enum(r, "activation", c.attention.activation, parse_activation);
  }
  if (const json* s = root.sub("focus")) {
    Reader r(*s, "focus");
    r.get("top_k", c.focus.top_k);
    r.get("eta", c.focus.eta);
    get_enum(r, "ablation", c.focus.ablation, parse_ablation);
    get_enum(r, "unit", c.focus.unit, parse_select_unit);
    get_enum(r, "region_score", c.focus.region_score, parse_region_score);
    r.get("score_gating", c.focus.score_gating);
    r.get("max_points", c.focus.max_points);
    explicit_max_points = s->contains("max_points");
  }
  if (const json* s = root.sub("head")) {
    Reader r(*s, "head");
    get_enum(r, "kind", c.head.kind, parse_head);
    r.get("feature_hidden", c.head.feature_hidden);
    get_enum(r, "activation", c.head.activation, parse_activation);
  }
  if (const json* s = root.sub("training")) {
    Reader r(*s, "training");
    r.get("epochs", c.training.epochs);
    r.get("patience", c.training.patience);
    r.get("learning_rate", c.training.learning_rate);
    r.get("batch_size", c.training.batch_size);
    r.get("seed", c.training.seed);
    r.get("train_fraction", c.training.train_fraction);
    r.get("val_fraction", c.training.val_fraction);
    r.get("augment_jitter", c.training.augment_jitter);
  }
  if (const json* s = root.sub("downstream")) {
    Reader r(*s, "downstream");
    r.get("layers", c.downstream.layers);
    r.get("width", c.downstream.width);
  }
  if (const json* s = root.sub("presets")) {
    if (!s->is_array()) throw UsageError("config: presets must be an array");
    c.presets.clear();
    for (const json& e : *s) {
      Reader r(e, "presets[]");
      GridCell g;
      r.get("top_k", g.top_k);
      r.get("eta", g.eta);
      c.presets.push_back(g);
    }
  }
  if (!explicit_max_points) {
    c.focus.max_points = static_cast<std::size_t>(std::max(c.synth.points_per_frame, 1));
  }
  validate(c);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

std::vector<GridCell> parse_grid(std::string_view text) {
  // Tokens separated by commas, semicolons, colons or whitespace, read as
  // consecutive (k, eta) pairs: "32,0.45,64,0.68" or "32:0.45;64:0.68".
  std::vector<std::string_view> tok;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto end = text.find_first_of(",;: \t\r\n", i);
    const auto piece = text.substr(i, end == std::string_view::npos ? std::string_view::npos : end - i);
    if (!piece.empty()) tok.push_back(piece);
    if (end == std::string_view::npos) break;
    i = end + 1;
  }
  if (tok.empty() || tok.size() % 2 != 0) throw UsageError("grid: expected k,eta pairs");
  std::vector<GridCell> out;
  for (std::size_t t = 0; t < tok.size(); t += 2) {
    GridCell g;
    const auto ks = tok[t], es = tok[t + 1];
    auto r1 = std::from_chars(ks.data(), ks.data() + ks.size(), g.top_k);
    auto r2 = std::from_chars(es.data(), es.data() + es.size(), g.eta);
    if (r1.ec != std::errc{} || r1.ptr != ks.data() + ks.size() || r2.ec != std::errc{} ||
        r2.ptr != es.data() + es.size()) {
      throw UsageError("grid: cannot parse '" + std::string(ks) + "," + std::string(es) + "'");
    }
    if (!(g.eta >= 0.0 && g.eta <= 1.0)) throw UsageError("grid: eta outside [0, 1]");
    out.push_back(g);
  }
  return out;
}

}  // namespace esppct
