#include "esppct/cost.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "esppct/error.hpp"

namespace esppct {

std::uint64_t linear_params(std::size_t in, std::size_t out, bool bias) {
  return static_cast<std::uint64_t>(in) * out + (bias ? out : 0);
}

double linear_flops(double rows, std::size_t in, std::size_t out, bool bias) {
  return 2.0 * rows * static_cast<double>(in) * static_cast<double>(out) +
         (bias ? rows * static_cast<double>(out) : 0.0);
}

double softmax_flops(double m) { return 5.0 * m; }

namespace {

std::uint64_t mlp_params(std::size_t in, std::size_t hidden, std::size_t out, std::size_t layers) {
  std::uint64_t n = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    n += linear_params(l == 0 ? in : hidden, l + 1 == layers ? out : hidden);
  }
  return n;
}

std::uint64_t mlp_params(std::span<const std::size_t> widths) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += linear_params(widths[i], widths[i + 1]);
  return n;
}

// Linear maps plus one activation per hidden unit.
double mlp_flops(double rows, std::span<const std::size_t> widths) {
  double f = 0.0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    f += linear_flops(rows, widths[i], widths[i + 1]);
    if (i + 2 < widths.size()) f += rows * static_cast<double>(widths[i + 1]);
  }
  return f;
}

std::vector<std::size_t> square_widths(std::size_t in, std::size_t d, std::size_t layers) {
  std::vector<std::size_t> w(layers + 1, d);
  w[0] = in;
  return w;
}

std::uint64_t lstm_params(std::size_t in, std::size_t h) { return 4 * (linear_params(in, h) + static_cast<std::uint64_t>(h) * h); }

// One step: input and hidden projections, the bias and recurrent adds, 4h
// gate activations, c = f*c + i*g (3h), h = o*tanh(c) (2h).
double lstm_step_flops(std::size_t in, std::size_t h) {
  const double H = static_cast<double>(h);
  return linear_flops(1, in, 4 * h) + linear_flops(1, h, 4 * h, false) + 4 * H + 4 * H + 3 * H + 2 * H;
}

std::vector<std::size_t> head_widths(const PipelineConfig& cfg) {
  std::vector<std::size_t> w{cfg.representation_width()};
  w.insert(w.end(), cfg.head.feature_hidden.begin(), cfg.head.feature_hidden.end());
  w.push_back(head_hidden(cfg.head.kind));
  return w;
}

// One vector-attention layer over n points with k neighbours each.
double attention_layer_flops(double n, double k, std::size_t d_in, const AttentionConfig& a) {
  const std::size_t d = a.d_attention;
  const double D = static_cast<double>(d);
  const double pairs = n * k;
  double f = 3.0 * linear_flops(n, d_in, d);
  f += mlp_flops(pairs, square_widths(3, d, a.delta_layers));
  f += 3.0 * pairs;                        // p_i - p_j
  f += 2.0 * pairs * D;                    // phi - psi + delta
  f += mlp_flops(pairs, square_widths(d, d, a.gamma_layers));
  f += softmax_flops(pairs * D);           // k entries per (point, channel)
  f += 2.0 * pairs * D;                    // weighted sum
  return f;
}

std::size_t downstream_width(const PipelineConfig& cfg) {
  return cfg.downstream.width ? cfg.downstream.width : cfg.attention.d_attention;
}

}  // namespace

DenseAttentionFlops dense_attention_flops(double points, std::size_t d_in, std::size_t width,
                                          std::size_t gamma_layers, std::size_t delta_layers) {
  DenseAttentionFlops out;
  const double W = static_cast<double>(width);
  const double pairs = points * points;
  out.linear = 3.0 * linear_flops(points, d_in, width);
  out.quadratic = mlp_flops(pairs, square_widths(3, width, delta_layers)) + 3.0 * pairs + 2.0 * pairs * W +
                  mlp_flops(pairs, square_widths(width, width, gamma_layers)) + softmax_flops(pairs * W) +
                  2.0 * pairs * W;
  return out;
}

ParamReport count_params(const PipelineConfig& cfg) {
  validate(cfg);
  const auto& a = cfg.attention;
  const std::size_t d = a.d_attention;
  ParamReport p;
  for (std::size_t l = 0; l < a.depth; ++l) {
    const std::size_t in = l == 0 ? kPointFeatures : d;
    p.attention += 3 * linear_params(in, d) + mlp_params(d, d, d, a.gamma_layers) + mlp_params(3, d, d, a.delta_layers);
  }
  p.ngsa = d;
  const std::size_t h = head_hidden(cfg.head.kind);
  p.head = mlp_params(head_widths(cfg));
  if (cfg.head.kind == HeadKind::kAppNet) {
    p.head += lstm_params(h, h) + linear_params(h, kAppNetClasses);
  } else {
    p.head += 2 * lstm_params(h, h) + linear_params(2 * h, kKeyNetClasses);
  }
  p.total = p.attention + p.ngsa + p.head;
  const std::size_t dw = downstream_width(cfg);
  for (std::size_t l = 0; l < cfg.downstream.layers; ++l) {
    p.modeled_downstream += 3 * linear_params(l == 0 ? d : dw, dw) + mlp_params(dw, dw, dw, a.gamma_layers) +
                            mlp_params(3, dw, dw, a.delta_layers);
  }
  return p;
}

namespace {

FlopReport flops_impl(const PipelineConfig& cfg, InputShape shape, bool skip_grouping) {
  if (!(shape.points >= 0.0) || !std::isfinite(shape.points)) throw UsageError("count_flops: invalid point count");
  const auto& a = cfg.attention;
  const std::size_t d = a.d_attention;
  const double D = static_cast<double>(d);
  const double n = shape.points;
  const double s = static_cast<double>(shape.frames);
  const Ablation abl = cfg.focus.ablation;

  FlopReport r;
  r.shape = shape;
  r.d_attention = d;
  // Points reaching the consumer: K, or every point when top-K is skipped.
  const double focused = abl == Ablation::kNoTopK ? n : std::min<double>(static_cast<double>(cfg.focus.top_k), n);
  r.focused = static_cast<std::size_t>(std::llround(focused));
  if (n == 0.0 || s == 0.0) return r;

  const double k = std::min<double>(static_cast<double>(a.k_nn), n);
  double att = 8.0 * n * n;  // pairwise squared distances: 3 sub, 3 mul, 2 add
  for (std::size_t l = 0; l < a.depth; ++l) att += attention_layer_flops(n, k, l == 0 ? kPointFeatures : d, a);
  r.attention = s * att;

  // Per-point score y.w is needed by every variant that ranks by attention.
  double ngsa = abl == Ablation::kNoAttentionScore ? 0.0 : 2.0 * n * D;
  if (abl != Ablation::kNoGrouping && !skip_grouping) {
    ngsa += 6.0 * n;      // voxel index: subtract and divide per axis
    ngsa += n * k * D;    // incoming attention mass
    ngsa += n;            // group sums
    ngsa += n;            // group means of y.w
    if (abl == Ablation::kNoAttentionScore) ngsa += 2.0 * n * D;
  }
  r.ngsa = s * ngsa;

  r.focus = cfg.focus.score_gating ? s * (n + n * D) : 0.0;  // sigmoid per point, scale per channel

  const std::size_t h = head_hidden(cfg.head.kind);
  double head = mlp_flops(s, head_widths(cfg));
  if (cfg.head.kind == HeadKind::kAppNet) {
    head += s * lstm_step_flops(h, h) + linear_flops(1, h, kAppNetClasses);
  } else {
    head += 2.0 * s * lstm_step_flops(h, h) + linear_flops(1, 2 * h, kKeyNetClasses);
  }
  r.head = head;

  const std::size_t dw = downstream_width(cfg);
  for (std::size_t l = 0; l < cfg.downstream.layers; ++l) {
    const auto dense = dense_attention_flops(focused, l == 0 ? d : dw, dw, a.gamma_layers, a.delta_layers);
    r.downstream += s * dense.total();
    r.downstream_quadratic += s * dense.quadratic;
  }

  r.total = r.attention + r.ngsa + r.focus + r.head + r.downstream;
  return r;
}

}  // namespace

FlopReport count_flops(const PipelineConfig& cfg, InputShape shape) {
  validate(cfg);
  return flops_impl(cfg, shape, false);
}

FlopReport count_baseline_flops(const PipelineConfig& cfg, InputShape shape) {
  PipelineConfig b = cfg;
  b.focus.ablation = Ablation::kNoTopK;
  validate(b);
  return flops_impl(b, shape, true);
}

Reduction reduction_ratio(const FlopReport& full, const FlopReport& pruned) {
  if (!(full.total > 0.0)) throw UsageError("reduction_ratio: full report has zero total");
  auto part = [](double f, double p) { return f > 0.0 ? 1.0 - p / f : 0.0; };
  return {part(full.attention, pruned.attention), part(full.ngsa, pruned.ngsa),
          part(full.focus, pruned.focus),         part(full.head, pruned.head),
          part(full.downstream, pruned.downstream), 1.0 - pruned.total / full.total};
}

nlohmann::json to_json(const ParamReport& p) {
  return {{"attention", p.attention}, {"ngsa", p.ngsa}, {"head", p.head}, {"total", p.total},
          {"modeled_downstream", p.modeled_downstream}};
}

nlohmann::json to_json(const FlopReport& f) {
  return {{"shape", {{"frames", f.shape.frames}, {"points", f.shape.points}, {"focused", f.focused},
                     {"d_attention", f.d_attention}}},
          {"components",
           {{"attention", f.attention}, {"ngsa", f.ngsa}, {"focus", f.focus}, {"head", f.head},
            {"downstream", f.downstream}}},
          {"downstream_quadratic", f.downstream_quadratic},
          {"total", f.total}};
}

nlohmann::json to_json(const Reduction& r) {
  return {{"attention", r.attention}, {"ngsa", r.ngsa}, {"focus", r.focus}, {"head", r.head},
          {"downstream", r.downstream}, {"total", r.total}};
}

std::string flop_csv_header() {
  return "label,frames,points,focused,d_attention,flops_attention,flops_ngsa,flops_focus,flops_head,"
         "flops_downstream,flops_total,params_attention,params_ngsa,params_head,params_total";
}

std::string flop_csv_row(const std::string& label, const FlopReport& f, const ParamReport& p) {
  std::ostringstream o;
  o.precision(17);
  o << label << ',' << f.shape.frames << ',' << f.shape.points << ',' << f.focused << ',' << f.d_attention << ','
    << f.attention << ',' << f.ngsa << ',' << f.focus << ',' << f.head << ',' << f.downstream << ',' << f.total
    << ',' << p.attention << ',' << p.ngsa << ',' << p.head << ',' << p.total;
  return o.str();
}

}  // namespace esppct
