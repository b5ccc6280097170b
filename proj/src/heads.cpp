#include "esppct/heads.hpp"

#include <algorithm>
#include <cmath>

#include "esppct/error.hpp"

namespace esppct {

void validate(const LstmParams& p) {
  const std::size_t h = p.hidden();
  if (h == 0) throw UsageError("lstm: hidden width must be >= 1");
  if (p.wx.rows != 4 * h || p.wh.rows != 4 * h || p.bias.size() != 4 * h) {
    throw UsageError("lstm: gate blocks must have 4 * hidden rows");
  }
}

LstmParams init_lstm(std::size_t in, std::size_t hidden, Rng& rng) {
  LstmParams p;
  p.wx = Tensor2(4 * hidden, in);
  p.wh = Tensor2(4 * hidden, hidden);
  const double bx = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
  const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& v : p.wx.data) v = rng.uniform(-bx, bx);
  for (double& v : p.wh.data) v = rng.uniform(-bh, bh);
  p.bias.assign(4 * hidden, 0.0);
  // forget gate starts open
  std::fill(p.bias.begin() + static_cast<std::ptrdiff_t>(hidden),
            p.bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
  return p;
}

HeadKind parse_head(std::string_view name) {
  if (name == "appnet") return HeadKind::kAppNet;
  if (name == "keynet") return HeadKind::kKeyNet;
  throw UsageError("unknown head '" + std::string(name) + "' (appnet|keynet)");
}

std::string_view to_string(HeadKind kind) { return kind == HeadKind::kAppNet ? "appnet" : "keynet"; }

std::size_t head_classes(HeadKind kind) {
  return kind == HeadKind::kAppNet ? kAppNetClasses : kKeyNetClasses;
}

std::size_t head_hidden(HeadKind kind) {
  return kind == HeadKind::kAppNet ? kAppNetHidden : kKeyNetHidden;
}

namespace {

MlpParams init_feature_net(std::size_t rep_width, std::size_t out, const HeadConfig& cfg, Rng& rng) {
  std::vector<std::size_t> widths{rep_width};
  widths.insert(widths.end(), cfg.feature_hidden.begin(), cfg.feature_hidden.end());
  widths.push_back(out);
  return init_mlp(widths, cfg.activation, rng);
}

}  // namespace

AppNetParams init_appnet(std::size_t rep_width, const HeadConfig& cfg, Rng& rng) {
  AppNetParams p;
  p.feature_net = init_feature_net(rep_width, kAppNetHidden, cfg, rng);
  p.action = init_lstm(kAppNetHidden, kAppNetHidden, rng);
  p.decision = init_linear(kAppNetHidden, kAppNetClasses, rng);
  return p;
}

KeyNetParams init_keynet(std::size_t rep_width, const HeadConfig& cfg, Rng& rng) {
  KeyNetParams p;
  p.feature_net = init_feature_net(rep_width, kKeyNetHidden, cfg, rng);
  p.forward = init_lstm(kKeyNetHidden, kKeyNetHidden, rng);
  p.backward = init_lstm(kKeyNetHidden, kKeyNetHidden, rng);
  p.decision = init_linear(2 * kKeyNetHidden, kKeyNetClasses, rng);
  return p;
}

Classification classify(std::span<const double> logits) {
  if (logits.empty()) throw UsageError("classify: empty logits");
  Classification c;
  c.label = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  c.confidence = softmax(logits)[c.label];
  return c;
}

// ---------------------------------------------------------------------------

Var lstm_scan(Tape& t, const LstmVars& p, Var xs, bool reverse) {
  const std::size_t steps = t.value(xs).rows;
  if (steps == 0) throw UsageError("lstm: empty sequence");
  const std::size_t h = t.value(p.wh).cols;
  const Var gx = ad::linear(t, xs, p.wx, p.bias);
  Var hidden = t.constant(Tensor2(1, h, 0.0));
  Var cell = t.constant(Tensor2(1, h, 0.0));
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t step = reverse ? steps - 1 - s : s;
    const Var z = ad::add(t, ad::row(t, gx, step), ad::linear(t, hidden, p.wh, Var{}));
    const Var in = ad::sigmoid(t, ad::slice_cols(t, z, 0, h));
    const Var forget = ad::sigmoid(t, ad::slice_cols(t, z, h, 2 * h));
    const Var cand = ad::tanh(t, ad::slice_cols(t, z, 2 * h, 3 * h));
    const Var out = ad::sigmoid(t, ad::slice_cols(t, z, 3 * h, 4 * h));
    cell = ad::add(t, ad::mul(t, forget, cell), ad::mul(t, in, cand));
    hidden = ad::mul(t, out, ad::tanh(t, cell));
  }
  return hidden;
}

namespace {

LstmVars constant_lstm(Tape& t, const LstmParams& p) {
  validate(p);
  return {t.constant(p.wx), t.constant(p.wh), t.constant(Tensor2(1, p.bias.size(), p.bias))};
}

void add_lstm(ParamStore& store, const std::string& prefix, const LstmParams& p) {
  validate(p);
  store.add(prefix + ".wx", p.wx);
  store.add(prefix + ".wh", p.wh);
  store.add(prefix + ".bias", Tensor2(1, p.bias.size(), p.bias));
}

LstmVars bind_lstm(Tape& t, ParamStore& store, const std::string& prefix) {
  return {t.parameter(store, store.index(prefix + ".wx")), t.parameter(store, store.index(prefix + ".wh")),
          t.parameter(store, store.index(prefix + ".bias"))};
}

void check_reps(const MlpParams& feature_net, const Tensor2& reps) {
  if (reps.rows == 0) throw UsageError("head: empty sequence");
  if (feature_net.layers.empty() || reps.cols != feature_net.layers.front().in()) {
    throw UsageError("head: representation width " + std::to_string(reps.cols) +
                     " does not match the feature network");
  }
}

}  // namespace

HeadVars constant_head(Tape& t, const AppNetParams& p) {
  HeadVars h;
  h.kind = HeadKind::kAppNet;
  h.feature_net = constant_mlp(t, p.feature_net);
  h.forward = constant_lstm(t, p.action);
  h.decision = constant_linear(t, p.decision);
  return h;
}

HeadVars constant_head(Tape& t, const KeyNetParams& p) {
  HeadVars h;
  h.kind = HeadKind::kKeyNet;
  h.feature_net = constant_mlp(t, p.feature_net);
  h.forward = constant_lstm(t, p.forward);
  h.backward = constant_lstm(t, p.backward);
  h.decision = constant_linear(t, p.decision);
  return h;
}

void add_head(ParamStore& store, const std::string& prefix, const AppNetParams& p) {
  add_mlp(store, prefix + ".feature", p.feature_net);
  add_lstm(store, prefix + ".lstm", p.action);
  add_linear(store, prefix + ".decision", p.decision);
}

void add_head(ParamStore& store, const std::string& prefix, const KeyNetParams& p) {
  add_mlp(store, prefix + ".feature", p.feature_net);
  add_lstm(store, prefix + ".lstm_fwd", p.forward);
  add_lstm(store, prefix + ".lstm_bwd", p.backward);
  add_linear(store, prefix + ".decision", p.decision);
}

void init_head(ParamStore& store, const std::string& prefix, std::size_t rep_width,
               const HeadConfig& cfg, Rng& rng) {
  if (cfg.kind == HeadKind::kAppNet) {
    add_head(store, prefix, init_appnet(rep_width, cfg, rng));
  } else {
    add_head(store, prefix, init_keynet(rep_width, cfg, rng));
  }
}

HeadVars bind_head(Tape& t, ParamStore& store, const std::string& prefix, const HeadConfig& cfg) {
  HeadVars h;
  h.kind = cfg.kind;
  h.feature_net = bind_mlp(t, store, prefix + ".feature", cfg.feature_hidden.size() + 1, cfg.activation);
  if (cfg.kind == HeadKind::kAppNet) {
    h.forward = bind_lstm(t, store, prefix + ".lstm");
  } else {
    h.forward = bind_lstm(t, store, prefix + ".lstm_fwd");
    h.backward = bind_lstm(t, store, prefix + ".lstm_bwd");
  }
  h.decision = bind_linear(t, store, prefix + ".decision");
  return h;
}

Var head_hidden(Tape& t, const HeadVars& h, Var reps) {
  const Var feats = apply(t, h.feature_net, reps);
  const Var fwd = lstm_scan(t, h.forward, feats, false);
  if (h.kind == HeadKind::kAppNet) return fwd;
  return ad::concat_cols(t, fwd, lstm_scan(t, h.backward, feats, true));
}

Var head_logits(Tape& t, const HeadVars& h, Var reps) {
  return apply(t, h.decision, head_hidden(t, h, reps));
}

std::vector<double> appnet_forward(const AppNetParams& p, const Tensor2& reps) {
  check_reps(p.feature_net, reps);
  Tape t(false);
  const HeadVars h = constant_head(t, p);
  return t.value(head_logits(t, h, t.constant(reps))).data;
}

std::vector<double> keynet_forward(const KeyNetParams& p, const Tensor2& reps) {
  check_reps(p.feature_net, reps);
  Tape t(false);
  const HeadVars h = constant_head(t, p);
  return t.value(head_logits(t, h, t.constant(reps))).data;
}

std::pair<std::vector<double>, std::vector<double>> keynet_hidden(const KeyNetParams& p, const Tensor2& reps) {
  check_reps(p.feature_net, reps);
  Tape t(false);
  const HeadVars h = constant_head(t, p);
  const Var feats = apply(t, h.feature_net, t.constant(reps));
  std::vector<double> fwd = t.value(lstm_scan(t, h.forward, feats, false)).data;
  std::vector<double> bwd = t.value(lstm_scan(t, h.backward, feats, true)).data;
  return {std::move(fwd), std::move(bwd)};
}

}  // namespace esppct
