#pragma once

// Recurrent recognition heads over per-frame representations.
//   AppNet: feature MLP -> 96, LSTM(96), linear 96 -> 5
//   KeyNet: feature MLP -> 64, BiLSTM(64 + 64), linear 128 -> 36

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "esppct/numerics.hpp"

namespace esppct {

inline constexpr std::size_t kAppNetHidden = 96;
inline constexpr std::size_t kAppNetClasses = 5;
inline constexpr std::size_t kKeyNetHidden = 64;
inline constexpr std::size_t kKeyNetClasses = 36;

// Four-gate LSTM cell. Gate blocks are stacked in the order input, forget,
// candidate, output: wx is 4h x in, wh is 4h x h, bias has 4h entries.
struct LstmParams {
  Tensor2 wx;
  Tensor2 wh;
  std::vector<double> bias;

  std::size_t hidden() const { return wh.cols; }
  std::size_t in() const { return wx.cols; }
};

void validate(const LstmParams& p);
LstmParams init_lstm(std::size_t in, std::size_t hidden, Rng& rng);

enum class HeadKind { kAppNet, kKeyNet };
HeadKind parse_head(std::string_view name);
std::string_view to_string(HeadKind kind);
std::size_t head_classes(HeadKind kind);
std::size_t head_hidden(HeadKind kind);

struct HeadConfig {
  HeadKind kind = HeadKind::kAppNet;
  // Hidden widths of the feature MLP between the representation and the
  // recurrent input; empty means a single linear map.
  std::vector<std::size_t> feature_hidden;
  Activation activation = Activation::kRelu;
};

struct AppNetParams {
  MlpParams feature_net;
  LstmParams action;
  LinearParams decision;
};

struct KeyNetParams {
  MlpParams feature_net;
  LstmParams forward;
  LstmParams backward;
  LinearParams decision;
};

AppNetParams init_appnet(std::size_t rep_width, const HeadConfig& cfg, Rng& rng);
KeyNetParams init_keynet(std::size_t rep_width, const HeadConfig& cfg, Rng& rng);

// `reps` is one row per frame.
std::vector<double> appnet_forward(const AppNetParams& p, const Tensor2& reps);
std::vector<double> keynet_forward(const KeyNetParams& p, const Tensor2& reps);
// Final forward and backward hidden states, before the decision layer.
std::pair<std::vector<double>, std::vector<double>> keynet_hidden(const KeyNetParams& p, const Tensor2& reps);

struct Classification {
  std::size_t label = 0;
  double confidence = 0.0;
};

Classification classify(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Tape level

struct LstmVars {
  Var wx, wh, bias;
};

// Runs the cell over the rows of `xs` (T x in), last row first when
// `reverse`; returns the final hidden state (1 x h).
Var lstm_scan(Tape& t, const LstmVars& p, Var xs, bool reverse);

struct HeadVars {
  HeadKind kind = HeadKind::kAppNet;
  MlpVars feature_net;
  LstmVars forward;
  LstmVars backward;  // KeyNet only
  LinearVars decision;
};

HeadVars constant_head(Tape& t, const AppNetParams& p);
HeadVars constant_head(Tape& t, const KeyNetParams& p);

// Store layout: <prefix>.feature.<l>, <prefix>.lstm / .lstm_fwd + .lstm_bwd
// ({wx, wh, bias}), <prefix>.decision.
void add_head(ParamStore& store, const std::string& prefix, const AppNetParams& p);
void add_head(ParamStore& store, const std::string& prefix, const KeyNetParams& p);
void init_head(ParamStore& store, const std::string& prefix, std::size_t rep_width,
               const HeadConfig& cfg, Rng& rng);
HeadVars bind_head(Tape& t, ParamStore& store, const std::string& prefix, const HeadConfig& cfg);

// Hidden state(s) fed to the decision layer: 1 x h (AppNet) or 1 x 2h.
Var head_hidden(Tape& t, const HeadVars& h, Var reps);
Var head_logits(Tape& t, const HeadVars& h, Var reps);

}  // namespace esppct
