#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "esppct/autodiff.hpp"
#include "esppct/rng.hpp"
#include "esppct/tensor.hpp"

namespace esppct {

enum class Activation { kRelu, kTanh, kIdentity };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a);

struct LinearParams {
  Tensor2 weight;             // out x in
  std::vector<double> bias;   // out

  std::size_t in() const { return weight.cols; }
  std::size_t out() const { return weight.rows; }
};

struct MlpParams {
  std::vector<LinearParams> layers;
  Activation activation = Activation::kRelu;  // between layers, not after the last
};

void validate(const LinearParams& p);
void validate(const MlpParams& p);

// Uniform(-1/sqrt(in), 1/sqrt(in)) weights scaled by `scale`, zero bias.
LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng, double scale = 1.0);
// widths = {in, hidden..., out}
MlpParams init_mlp(std::span<const std::size_t> widths, Activation act, Rng& rng,
                   double scale = 1.0);

Tensor2 linear_forward(const LinearParams& p, const Tensor2& x);
Tensor2 mlp_forward(const MlpParams& p, const Tensor2& x);
double apply_activation(Activation a, double v);

// Max-subtracted softmax. Throws UsageError on empty input.
std::vector<double> softmax(std::span<const double> v);

// ---------------------------------------------------------------------------

// Named parameter tensors with same-shaped gradient accumulators, kept in
// insertion order (which is also checkpoint order).
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor2 value);
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor2& value(std::size_t i) { return entries_[i].value; }
  const Tensor2& value(std::size_t i) const { return entries_[i].value; }
  Tensor2& grad(std::size_t i) { return entries_[i].grad; }
  const Tensor2& grad(std::size_t i) const { return entries_[i].grad; }

  Tensor2& value(std::string_view name) { return value(index(name)); }
  const Tensor2& value(std::string_view name) const { return value(index(name)); }
  Tensor2& grad(std::string_view name) { return grad(index(name)); }

  void zero_grad();
  std::size_t scalar_count() const;

  // Parameters whose name starts with `prefix`.
  std::size_t scalar_count(std::string_view prefix) const;

 private:
  struct Entry {
    std::string name;
    Tensor2 value;
    Tensor2 grad;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Store layout: "<prefix>.weight" (out x in) and "<prefix>.bias" (1 x out);
// MLP layers are "<prefix>.<layer>".
void add_linear(ParamStore& store, const std::string& prefix, const LinearParams& p);
void add_mlp(ParamStore& store, const std::string& prefix, const MlpParams& p);
LinearParams get_linear(const ParamStore& store, const std::string& prefix);
MlpParams get_mlp(const ParamStore& store, const std::string& prefix, std::size_t layers,
                  Activation act);

// Tape handles for the same structures.
struct LinearVars {
  Var weight;
  Var bias;
};
struct MlpVars {
  std::vector<LinearVars> layers;
  Activation activation = Activation::kRelu;
};

LinearVars bind_linear(Tape& t, ParamStore& store, const std::string& prefix);
MlpVars bind_mlp(Tape& t, ParamStore& store, const std::string& prefix, std::size_t layers,
                 Activation act);
LinearVars constant_linear(Tape& t, const LinearParams& p);
MlpVars constant_mlp(Tape& t, const MlpParams& p);

Var apply(Tape& t, const LinearVars& p, Var x);
Var apply(Tape& t, const MlpVars& p, Var x);
Var activate(Tape& t, Activation a, Var x);

// ---------------------------------------------------------------------------
// Gradient oracle

using ScalarObjective = std::function<double(const ParamStore&)>;

// Central differences per scalar parameter; returns one tensor per slot.
// Throws NumericError if any evaluation is non-finite.
std::vector<Tensor2> finite_diff_grad(const ScalarObjective& f, const ParamStore& store,
                                      double eps = 1e-4);

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  // The scalar attaining max_rel_error.
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // Scalars whose gradient magnitude exceeds the floor.
  std::size_t resolved = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

// Compares the gradients accumulated in `store` (analytic, already computed)
// against finite differences of `f`.
GradCheckReport compare_gradients(const ScalarObjective& f, const ParamStore& store,
                                  double eps = 1e-4, double floor = 1e-8);

}  // namespace esppct
