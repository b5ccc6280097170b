#include "esppct/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "esppct/error.hpp"

namespace esppct {

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw UsageError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

void validate(const LinearParams& p) {
  if (p.bias.size() != p.weight.rows) throw UsageError("linear: bias length != output width");
  if (p.weight.data.size() != p.weight.rows * p.weight.cols) throw UsageError("linear: bad weight storage");
  for (double v : p.weight.data)
    if (!std::isfinite(v)) throw NumericError("linear: non-finite weight");
  for (double v : p.bias)
    if (!std::isfinite(v)) throw NumericError("linear: non-finite bias");
}

void validate(const MlpParams& p) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    validate(p.layers[i]);
    if (i > 0 && p.layers[i].in() != p.layers[i - 1].out()) {
      throw UsageError("mlp: layer " + std::to_string(i) + " input width does not chain");
    }
  }
}

LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng, double scale) {
  LinearParams p;
  p.weight = Tensor2(out, in);
  const double bound = in > 0 ? scale / std::sqrt(static_cast<double>(in)) : 0.0;
  for (double& v : p.weight.data) v = rng.uniform(-bound, bound);
  p.bias.assign(out, 0.0);
  return p;
}

MlpParams init_mlp(std::span<const std::size_t> widths, Activation act, Rng& rng, double scale) {
  MlpParams p;
  p.activation = act;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    p.layers.push_back(init_linear(widths[i], widths[i + 1], rng, scale));
  }
  return p;
}

double apply_activation(Activation a, double v) {
  switch (a) {
    case Activation::kRelu: return v > 0.0 ? v : 0.0;
    case Activation::kTanh: return std::tanh(v);
    case Activation::kIdentity: return v;
  }
  return v;
}

Tensor2 linear_forward(const LinearParams& p, const Tensor2& x) {
  if (x.cols != p.in()) {
    throw UsageError("linear_forward: input has " + std::to_string(x.cols) + " columns, expected " +
                     std::to_string(p.in()));
  }
  if (p.bias.size() != p.out()) throw UsageError("linear_forward: bias length mismatch");
  Tensor2 y(x.rows, p.out());
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t o = 0; o < p.out(); ++o) {
      double s = p.bias[o];
      for (std::size_t k = 0; k < p.in(); ++k) s += p.weight(o, k) * x(i, k);
      y(i, o) = s;
    }
  }
  return y;
}

Tensor2 mlp_forward(const MlpParams& p, const Tensor2& x) {
  validate(p);
  Tensor2 h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    h = linear_forward(p.layers[l], h);
    if (l + 1 < p.layers.size()) {
      for (double& v : h.data) v = apply_activation(p.activation, v);
    }
  }
  return h;
}

std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) throw UsageError("softmax of an empty vector");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& o : out) o /= sum;
  return out;
}

// ---------------------------------------------------------------------------

std::size_t ParamStore::add(std::string name, Tensor2 value) {
  if (by_name_.contains(name)) throw UsageError("duplicate parameter '" + name + "'");
  Tensor2 grad(value.rows, value.cols, 0.0);
  by_name_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), std::move(grad)});
  return entries_.size() - 1;
}

std::size_t ParamStore::index(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw UsageError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParamStore::contains(std::string_view name) const {
  return by_name_.contains(std::string(name));
}

void ParamStore::zero_grad() {
  for (Entry& e : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParamStore::scalar_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const Entry& e : entries_) {
    if (std::string_view(e.name).starts_with(prefix)) n += e.value.size();
  }
  return n;
}

void add_linear(ParamStore& store, const std::string& prefix, const LinearParams& p) {
  validate(p);
  store.add(prefix + ".weight", p.weight);
  store.add(prefix + ".bias", Tensor2(1, p.bias.size(), p.bias));
}

void add_mlp(ParamStore& store, const std::string& prefix, const MlpParams& p) {
  validate(p);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    add_linear(store, prefix + "." + std::to_string(l), p.layers[l]);
  }
}

LinearParams get_linear(const ParamStore& store, const std::string& prefix) {
  LinearParams p;
  p.weight = store.value(prefix + ".weight");
  p.bias = store.value(prefix + ".bias").data;
  return p;
}

MlpParams get_mlp(const ParamStore& store, const std::string& prefix, std::size_t layers,
                  Activation act) {
  MlpParams p;
  p.activation = act;
  for (std::size_t l = 0; l < layers; ++l) {
    p.layers.push_back(get_linear(store, prefix + "." + std::to_string(l)));
  }
  return p;
}

LinearVars bind_linear(Tape& t, ParamStore& store, const std::string& prefix) {
  return {t.parameter(store, store.index(prefix + ".weight")),
          t.parameter(store, store.index(prefix + ".bias"))};
}

MlpVars bind_mlp(Tape& t, ParamStore& store, const std::string& prefix, std::size_t layers,
                 Activation act) {
  MlpVars m;
  m.activation = act;
  for (std::size_t l = 0; l < layers; ++l) {
    m.layers.push_back(bind_linear(t, store, prefix + "." + std::to_string(l)));
  }
  return m;
}

LinearVars constant_linear(Tape& t, const LinearParams& p) {
  validate(p);
  return {t.constant(p.weight), t.constant(Tensor2(1, p.bias.size(), p.bias))};
}

MlpVars constant_mlp(Tape& t, const MlpParams& p) {
  MlpVars m;
  m.activation = p.activation;
  for (const auto& l : p.layers) m.layers.push_back(constant_linear(t, l));
  return m;
}

Var apply(Tape& t, const LinearVars& p, Var x) { return ad::linear(t, x, p.weight, p.bias); }

Var activate(Tape& t, Activation a, Var x) {
  switch (a) {
    case Activation::kRelu: return ad::relu(t, x);
    case Activation::kTanh: return ad::tanh(t, x);
    case Activation::kIdentity: return x;
  }
  return x;
}

Var apply(Tape& t, const MlpVars& p, Var x) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    x = apply(t, p.layers[l], x);
    if (l + 1 < p.layers.size()) x = activate(t, p.activation, x);
  }
  return x;
}

// ---------------------------------------------------------------------------

std::vector<Tensor2> finite_diff_grad(const ScalarObjective& f, const ParamStore& store, double eps) {
  if (!(eps > 0.0)) throw UsageError("finite_diff_grad: eps must be positive");
  ParamStore probe = store;
  std::vector<Tensor2> out;
  out.reserve(store.size());
  for (std::size_t s = 0; s < store.size(); ++s) {
    Tensor2 g(store.value(s).rows, store.value(s).cols, 0.0);
    for (std::size_t k = 0; k < g.data.size(); ++k) {
      double& theta = probe.value(s).data[k];
      const double saved = theta;
      theta = saved + eps;
      const double up = f(probe);
      theta = saved - eps;
      const double down = f(probe);
      theta = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_grad: non-finite objective at " + store.name(s));
      }
      g.data[k] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_gradients(const ScalarObjective& f, const ParamStore& store, double eps,
                                  double floor) {
  const auto numeric = finite_diff_grad(f, store, eps);
  GradCheckReport report;
  for (std::size_t s = 0; s < store.size(); ++s) {
    GradCheckEntry e;
    e.name = store.name(s);
    e.count = numeric[s].size();
    for (std::size_t k = 0; k < numeric[s].size(); ++k) {
      const double a = store.grad(s).data[k];
      const double err = relative_error(a, numeric[s].data[k], floor);
      if (std::max(std::abs(a), std::abs(numeric[s].data[k])) > floor) ++e.resolved;
      if (err > e.max_rel_error || k == 0) {
        e.max_rel_error = err;
        e.worst_index = k;
        e.worst_analytic = a;
        e.worst_numeric = numeric[s].data[k];
      }
      e.max_abs_analytic = std::max(e.max_abs_analytic, std::abs(a));
    }
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace esppct
