#pragma once

// Reverse-mode differentiation over a recorded tape of matrix operations.
//
// Every op appends a node holding its value; nodes that depend on a
// parameter also record a backward closure. `Tape::backward` walks the nodes
// in reverse insertion order, so gradient accumulation order is fixed and
// results are bit-reproducible.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "esppct/tensor.hpp"

namespace esppct {

class ParamStore;

struct Var {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

class Tape {
 public:
  // With record = false no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor2 value);
  // Leaf bound to store slot `slot`; backward adds into the store's gradient.
  // The store value is read in place and must outlive the tape unchanged.
  Var parameter(ParamStore& store, std::size_t slot);

  const Tensor2& value(Var v) const { return value_of(nodes_[v.id]); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates to parameters.
  void backward(Var loss);

  // --- used by op implementations ---
  // `out` is the node's own forward value.
  using BackwardFn = std::function<void(Tape&, const Tensor2& grad, const Tensor2& out)>;
  Var push(Tensor2 value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Tensor2 value, std::span<const Var> inputs, BackwardFn fn);
  // Gradient slot of `v`, allocated (zeroed) on first use.
  Tensor2& grad(Var v);

 private:
  struct Node {
    Tensor2 value;
    const Tensor2* ref = nullptr;  // parameter leaves read the store in place
    Tensor2 grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  static const Tensor2& value_of(const Node& n) { return n.ref ? *n.ref : n.value; }

  std::vector<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
};

namespace ad {

// y = x W^T + b with W stored out x in; bias may be an invalid Var.
Var linear(Tape& t, Var x, Var weight, Var bias);

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise

Var relu(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);

// out.row(r) = x.row(index[r])
Var gather_rows(Tape& t, Var x, std::vector<std::size_t> index);

// Rows come in consecutive blocks of `block` rows; softmax runs down each
// column within a block.
Var block_softmax(Tape& t, Var x, std::size_t block);
// Sums each block of `block` rows into one row.
Var block_sum(Tape& t, Var x, std::size_t block);
// out.row(s) = mean of x rows listed in segments[s] (each non-empty).
Var segment_mean(Tape& t, Var x, std::vector<std::vector<std::size_t>> segments);

// (n x d) . (1 x d)^T -> n x 1
Var matvec(Tape& t, Var x, Var w);
// x (n x d) scaled row-wise by s (n x 1)
Var scale_rows(Tape& t, Var x, Var s);

// Flattens x row-major into a 1 x width row, zero padded on the right.
Var flatten_pad(Tape& t, Var x, std::size_t width);
// Stacks 1 x c rows into an n x c matrix.
Var stack_rows(Tape& t, std::span<const Var> rows);
Var row(Tape& t, Var x, std::size_t r);
Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t end);
Var concat_cols(Tape& t, Var a, Var b);

Var sum(Tape& t, Var x);  // -> 1 x 1
// Mean negative log-likelihood of `label` under softmax(logits), logits 1 x C.
Var cross_entropy(Tape& t, Var logits, std::size_t label);

}  // namespace ad
}  // namespace esppct
