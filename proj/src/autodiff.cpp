#include "esppct/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esppct/error.hpp"
#include "esppct/numerics.hpp"

namespace esppct {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw UsageError(std::string("autodiff: ") + what);
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

}  // namespace

Var Tape::constant(Tensor2 value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(ParamStore& store, std::size_t slot) {
  Node node;
  node.ref = &store.value(slot);
  node.requires_grad = record_;
  if (record_) {
    ParamStore* s = &store;
    node.backward = [s, slot](Tape&, const Tensor2& g, const Tensor2&) {
      Tensor2& dst = s->grad(slot);
      for (std::size_t k = 0; k < g.data.size(); ++k) dst.data[k] += g.data[k];
    };
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::push(Tensor2 value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::push(Tensor2 value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (Var in : inputs) {
      if (in.valid() && nodes_[in.id].requires_grad) {
        needs = true;
        break;
      }
    }
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Tensor2& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  const Tensor2& val = value_of(n);
  if (n.grad.data.empty() && !val.data.empty()) {
    n.grad = Tensor2(val.rows, val.cols, 0.0);
  } else if (n.grad.rows != val.rows || n.grad.cols != val.cols) {
    n.grad = Tensor2(val.rows, val.cols, 0.0);
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!record_) throw UsageError("backward on a tape that does not record");
  if (backward_done_) throw UsageError("backward called twice on the same tape");
  if (!loss.valid() || loss.id >= nodes_.size()) throw UsageError("backward before forward");
  const Tensor2& lv = value_of(nodes_[loss.id]);
  if (lv.rows != 1 || lv.cols != 1) throw UsageError("backward needs a 1x1 loss");
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss).data[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.data.empty()) continue;
    // The closure may allocate gradients of earlier nodes, which never
    // reallocates nodes_, so the reference to n.grad stays valid.
    n.backward(*this, n.grad, value_of(n));
    n.grad = Tensor2();
  }
}

namespace ad {

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Tensor2& X = t.value(x);
  const Tensor2& W = t.value(weight);
  require(X.cols == W.cols, "linear: input width does not match weight");
  const std::size_t n = X.rows, in = W.cols, out = W.rows;
  if (bias.valid()) require(t.value(bias).size() == out, "linear: bias length mismatch");

  Tensor2 Y(n, out, 0.0);
  const double* b = bias.valid() ? t.value(bias).data.data() : nullptr;
  if (n <= 2) {
    // Few rows: plain dot products, same summation order as the path below.
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = X.data.data() + i * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wo = W.data.data() + o * in;
        double acc = b ? b[o] : 0.0;
        for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wo[k];
        Y.data[i * out + o] = acc;
      }
    }
  } else {
    // W^T (in x out) keeps the inner loop contiguous.
    std::vector<double> wt(in * out);
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t k = 0; k < in; ++k) wt[k * out + o] = W.data[o * in + k];
    for (std::size_t i = 0; i < n; ++i) {
      double* y = Y.data.data() + i * out;
      if (b) std::copy(b, b + out, y);
      const double* xi = X.data.data() + i * in;
      for (std::size_t k = 0; k < in; ++k) axpy(xi[k], wt.data() + k * out, y, out);
    }
  }

  return t.push(std::move(Y), {x, weight, bias}, [x, weight, bias, n, in, out](Tape& tp, const Tensor2& g, const Tensor2&) {
    if (tp.requires_grad(x)) {
      Tensor2& dx = tp.grad(x);
      const Tensor2& Wv = tp.value(weight);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g.data.data() + i * out;
        double* dxi = dx.data.data() + i * in;
        for (std::size_t o = 0; o < out; ++o) axpy(gi[o], Wv.data.data() + o * in, dxi, in);
      }
    }
    if (tp.requires_grad(weight)) {
      Tensor2& dW = tp.grad(weight);
      const Tensor2& Xv = tp.value(x);
      for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g.data.data() + i * out;
        const double* xi = Xv.data.data() + i * in;
        for (std::size_t o = 0; o < out; ++o) axpy(gi[o], xi, dW.data.data() + o * in, in);
      }
    }
    if (bias.valid() && tp.requires_grad(bias)) {
      Tensor2& db = tp.grad(bias);
      for (std::size_t i = 0; i < n; ++i) axpy(1.0, g.data.data() + i * out, db.data.data(), out);
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor2& A = t.value(a);
  const Tensor2& B = t.value(b);
  require(A.same_shape(B), "add: shape mismatch");
  Tensor2 Y = A;
  for (std::size_t k = 0; k < Y.data.size(); ++k) Y.data[k] += B.data[k];
  return t.push(std::move(Y), {a, b}, [a, b](Tape& tp, const Tensor2& g, const Tensor2&) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      Tensor2& d = tp.grad(v);
      for (std::size_t k = 0; k < g.data.size(); ++k) d.data[k] += g.data[k];
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor2& A = t.value(a);
  const Tensor2& B = t.value(b);
  require(A.same_shape(B), "sub: shape mismatch");
  Tensor2 Y = A;
  for (std::size_t k = 0; k < Y.data.size(); ++k) Y.data[k] -= B.data[k];
  return t.push(std::move(Y), {a, b}, [a, b](Tape& tp, const Tensor2& g, const Tensor2&) {
    if (tp.requires_grad(a)) {
      Tensor2& d = tp.grad(a);
      for (std::size_t k = 0; k < g.data.size(); ++k) d.data[k] += g.data[k];
    }
    if (tp.requires_grad(b)) {
      Tensor2& d = tp.grad(b);
      for (std::size_t k = 0; k < g.data.size(); ++k) d.data[k] -= g.data[k];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor2& A = t.value(a);
  const Tensor2& B = t.value(b);
  require(A.same_shape(B), "mul: shape mismatch");
  Tensor2 Y = A;
  for (std::size_t k = 0; k < Y.data.size(); ++k) Y.data[k] *= B.data[k];
  return t.push(std::move(Y), {a, b}, [a, b](Tape& tp, const Tensor2& g, const Tensor2&) {
    if (tp.requires_grad(a)) {
      Tensor2& d = tp.grad(a);
      const Tensor2& Bv = tp.value(b);
      for (std::size_t k = 0; k < g.data.size(); ++k) d.data[k] += g.data[k] * Bv.data[k];
    }
    if (tp.requires_grad(b)) {
      Tensor2& d = tp.grad(b);
      const Tensor2& Av = tp.value(a);
      for (std::size_t k = 0; k < g.data.size(); ++k) d.data[k] += g.data[k] * Av.data[k];
    }
  });
}

Var relu(Tape& t, Var x) {
  Tensor2 Y = t.value(x);
  for (double& v : Y.data) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(Y), {x}, [x](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(x);
    const Tensor2& X = tp.value(x);
    for (std::size_t k = 0; k < g.data.size(); ++k) {
      if (X.data[k] > 0.0) d.data[k] += g.data[k];
    }
  });
}

Var tanh(Tape& t, Var x) {
  Tensor2 Y = t.value(x);
  for (double& v : Y.data) v = std::tanh(v);
  return t.push(std::move(Y), {x}, [x](Tape& tp, const Tensor2& g, const Tensor2& y) {
    Tensor2& d = tp.grad(x);
    for (std::size_t k = 0; k < g.data.size(); ++k) d.data[k] += g.data[k] * (1.0 - y.data[k] * y.data[k]);
  });
}

Var sigmoid(Tape& t, Var x) {
  Tensor2 Y = t.value(x);
  for (double& v : Y.data) v = 1.0 / (1.0 + std::exp(-v));
  return t.push(std::move(Y), {x}, [x](Tape& tp, const Tensor2& g, const Tensor2& y) {
    Tensor2& d = tp.grad(x);
    for (std::size_t k = 0; k < g.data.size(); ++k) d.data[k] += g.data[k] * y.data[k] * (1.0 - y.data[k]);
  });
}

Var gather_rows(Tape& t, Var x, std::vector<std::size_t> index) {
  const Tensor2& X = t.value(x);
  const std::size_t c = X.cols;
  Tensor2 Y(index.size(), c);
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < X.rows, "gather_rows: index out of range");
    std::copy_n(X.data.data() + index[r] * c, c, Y.data.data() + r * c);
  }
  return t.push(std::move(Y), {x}, [x, c, index = std::move(index)](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(x);
    for (std::size_t r = 0; r < index.size(); ++r) {
      axpy(1.0, g.data.data() + r * c, d.data.data() + index[r] * c, c);
    }
  });
}

Var block_softmax(Tape& t, Var x, std::size_t block) {
  const Tensor2& X = t.value(x);
  require(block > 0 && X.rows % block == 0, "block_softmax: rows not a multiple of block");
  const std::size_t c = X.cols;
  const std::size_t blocks = X.rows / block;
  Tensor2 Y(X.rows, c);
  std::vector<double> mx(c), sum(c);
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* xb = X.data.data() + b * block * c;
    double* yb = Y.data.data() + b * block * c;
    std::copy_n(xb, c, mx.data());
    for (std::size_t r = 1; r < block; ++r)
      for (std::size_t k = 0; k < c; ++k) mx[k] = std::max(mx[k], xb[r * c + k]);
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t r = 0; r < block; ++r)
      for (std::size_t k = 0; k < c; ++k) {
        const double e = std::exp(xb[r * c + k] - mx[k]);
        yb[r * c + k] = e;
        sum[k] += e;
      }
    for (std::size_t r = 0; r < block; ++r)
      for (std::size_t k = 0; k < c; ++k) yb[r * c + k] /= sum[k];
  }
  return t.push(std::move(Y), {x}, [x, block, blocks, c](Tape& tp, const Tensor2& g, const Tensor2& y) {
    // dx = y * (g - sum_block(y * g)), per column
    Tensor2& d = tp.grad(x);
    std::vector<double> dot(c);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t base = b * block * c;
      std::fill(dot.begin(), dot.end(), 0.0);
      for (std::size_t r = 0; r < block; ++r)
        for (std::size_t k = 0; k < c; ++k) dot[k] += y.data[base + r * c + k] * g.data[base + r * c + k];
      for (std::size_t r = 0; r < block; ++r)
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t at = base + r * c + k;
          d.data[at] += y.data[at] * (g.data[at] - dot[k]);
        }
    }
  });
}

Var block_sum(Tape& t, Var x, std::size_t block) {
  const Tensor2& X = t.value(x);
  require(block > 0 && X.rows % block == 0, "block_sum: rows not a multiple of block");
  const std::size_t c = X.cols;
  const std::size_t blocks = X.rows / block;
  Tensor2 Y(blocks, c, 0.0);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t r = 0; r < block; ++r)
      axpy(1.0, X.data.data() + (b * block + r) * c, Y.data.data() + b * c, c);
  return t.push(std::move(Y), {x}, [x, block, blocks, c](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(x);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t r = 0; r < block; ++r)
        axpy(1.0, g.data.data() + b * c, d.data.data() + (b * block + r) * c, c);
  });
}

Var segment_mean(Tape& t, Var x, std::vector<std::vector<std::size_t>> segments) {
  const Tensor2& X = t.value(x);
  const std::size_t c = X.cols;
  Tensor2 Y(segments.size(), c, 0.0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    require(!segments[s].empty(), "segment_mean: empty segment");
    const double inv = 1.0 / static_cast<double>(segments[s].size());
    for (std::size_t r : segments[s]) {
      require(r < X.rows, "segment_mean: index out of range");
      axpy(inv, X.data.data() + r * c, Y.data.data() + s * c, c);
    }
  }
  return t.push(std::move(Y), {x}, [x, c, segments = std::move(segments)](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(x);
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(segments[s].size());
      for (std::size_t r : segments[s]) axpy(inv, g.data.data() + s * c, d.data.data() + r * c, c);
    }
  });
}

Var matvec(Tape& t, Var x, Var w) {
  const Tensor2& X = t.value(x);
  const Tensor2& W = t.value(w);
  require(W.size() == X.cols, "matvec: vector length mismatch");
  Tensor2 Y(X.rows, 1, 0.0);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < X.cols; ++k) s += X(i, k) * W.data[k];
    Y.data[i] = s;
  }
  return t.push(std::move(Y), {x, w}, [x, w](Tape& tp, const Tensor2& g, const Tensor2&) {
    const Tensor2& Xv = tp.value(x);
    const Tensor2& Wv = tp.value(w);
    if (tp.requires_grad(x)) {
      Tensor2& d = tp.grad(x);
      for (std::size_t i = 0; i < Xv.rows; ++i) axpy(g.data[i], Wv.data.data(), d.data.data() + i * Xv.cols, Xv.cols);
    }
    if (tp.requires_grad(w)) {
      Tensor2& d = tp.grad(w);
      for (std::size_t i = 0; i < Xv.rows; ++i) axpy(g.data[i], Xv.data.data() + i * Xv.cols, d.data.data(), Xv.cols);
    }
  });
}

Var scale_rows(Tape& t, Var x, Var s) {
  const Tensor2& X = t.value(x);
  const Tensor2& S = t.value(s);
  require(S.size() == X.rows, "scale_rows: scale length mismatch");
  Tensor2 Y = X;
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t k = 0; k < X.cols; ++k) Y(i, k) *= S.data[i];
  return t.push(std::move(Y), {x, s}, [x, s](Tape& tp, const Tensor2& g, const Tensor2&) {
    const Tensor2& Xv = tp.value(x);
    const Tensor2& Sv = tp.value(s);
    if (tp.requires_grad(x)) {
      Tensor2& d = tp.grad(x);
      for (std::size_t i = 0; i < Xv.rows; ++i) axpy(Sv.data[i], g.data.data() + i * Xv.cols, d.data.data() + i * Xv.cols, Xv.cols);
    }
    if (tp.requires_grad(s)) {
      Tensor2& d = tp.grad(s);
      for (std::size_t i = 0; i < Xv.rows; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < Xv.cols; ++k) acc += g(i, k) * Xv(i, k);
        d.data[i] += acc;
      }
    }
  });
}

Var flatten_pad(Tape& t, Var x, std::size_t width) {
  const Tensor2& X = t.value(x);
  require(X.size() <= width, "flatten_pad: input larger than width");
  Tensor2 Y(1, width, 0.0);
  std::copy(X.data.begin(), X.data.end(), Y.data.begin());
  const std::size_t n = X.size();
  return t.push(std::move(Y), {x}, [x, n](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(x);
    for (std::size_t k = 0; k < n; ++k) d.data[k] += g.data[k];
  });
}

Var stack_rows(Tape& t, std::span<const Var> rows) {
  require(!rows.empty(), "stack_rows: no rows");
  const std::size_t c = t.value(rows[0]).size();
  Tensor2 Y(rows.size(), c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor2& R = t.value(rows[r]);
    require(R.rows == 1 && R.cols == c, "stack_rows: rows must be 1 x c with equal c");
    std::copy(R.data.begin(), R.data.end(), Y.data.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  std::vector<Var> ids(rows.begin(), rows.end());
  return t.push(std::move(Y), rows, [ids, c](Tape& tp, const Tensor2& g, const Tensor2&) {
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!tp.requires_grad(ids[r])) continue;
      axpy(1.0, g.data.data() + r * c, tp.grad(ids[r]).data.data(), c);
    }
  });
}

Var row(Tape& t, Var x, std::size_t r) {
  const Tensor2& X = t.value(x);
  require(r < X.rows, "row: index out of range");
  const std::size_t c = X.cols;
  Tensor2 Y(1, c);
  std::copy_n(X.data.data() + r * c, c, Y.data.data());
  return t.push(std::move(Y), {x}, [x, r, c](Tape& tp, const Tensor2& g, const Tensor2&) {
    axpy(1.0, g.data.data(), tp.grad(x).data.data() + r * c, c);
  });
}

Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t end) {
  const Tensor2& X = t.value(x);
  require(begin <= end && end <= X.cols, "slice_cols: bad range");
  const std::size_t w = end - begin;
  Tensor2 Y(X.rows, w);
  for (std::size_t i = 0; i < X.rows; ++i)
    std::copy_n(X.data.data() + i * X.cols + begin, w, Y.data.data() + i * w);
  const std::size_t cols = X.cols;
  return t.push(std::move(Y), {x}, [x, begin, w, cols](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(x);
    for (std::size_t i = 0; i < g.rows; ++i) axpy(1.0, g.data.data() + i * w, d.data.data() + i * cols + begin, w);
  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Tensor2& A = t.value(a);
  const Tensor2& B = t.value(b);
  require(A.rows == B.rows, "concat_cols: row mismatch");
  const std::size_t ca = A.cols, cb = B.cols;
  Tensor2 Y(A.rows, ca + cb);
  for (std::size_t i = 0; i < A.rows; ++i) {
    std::copy_n(A.data.data() + i * ca, ca, Y.data.data() + i * (ca + cb));
    std::copy_n(B.data.data() + i * cb, cb, Y.data.data() + i * (ca + cb) + ca);
  }
  return t.push(std::move(Y), {a, b}, [a, b, ca, cb](Tape& tp, const Tensor2& g, const Tensor2&) {
    const std::size_t w = ca + cb;
    if (tp.requires_grad(a)) {
      Tensor2& d = tp.grad(a);
      for (std::size_t i = 0; i < g.rows; ++i) axpy(1.0, g.data.data() + i * w, d.data.data() + i * ca, ca);
    }
    if (tp.requires_grad(b)) {
      Tensor2& d = tp.grad(b);
      for (std::size_t i = 0; i < g.rows; ++i) axpy(1.0, g.data.data() + i * w + ca, d.data.data() + i * cb, cb);
    }
  });
}

Var sum(Tape& t, Var x) {
  double s = 0.0;
  for (double v : t.value(x).data) s += v;
  return t.push(Tensor2(1, 1, s), {x}, [x](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(x);
    for (double& v : d.data) v += g.data[0];
  });
}

Var cross_entropy(Tape& t, Var logits, std::size_t label) {
  const Tensor2& L = t.value(logits);
  require(L.rows == 1 && L.cols > 0, "cross_entropy: logits must be 1 x C");
  require(label < L.cols, "cross_entropy: label out of range");
  std::vector<double> p = softmax(L.data);
  const double mx = *std::max_element(L.data.begin(), L.data.end());
  double z = 0.0;
  for (double v : L.data) z += std::exp(v - mx);
  const double loss = std::log(z) + mx - L.data[label];
  return t.push(Tensor2(1, 1, loss), {logits}, [logits, label, p = std::move(p)](Tape& tp, const Tensor2& g, const Tensor2&) {
    Tensor2& d = tp.grad(logits);
    for (std::size_t k = 0; k < p.size(); ++k) {
      d.data[k] += g.data[0] * (p[k] - (k == label ? 1.0 : 0.0));
    }
  });
}

}  // namespace ad
}  // namespace esppct
