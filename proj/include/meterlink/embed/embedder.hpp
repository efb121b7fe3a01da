//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// The six embedding architectures. Every model maps a batch of weekly
// inputs [B x D x 24F] (D = 7 days) to embeddings [B x n_out]. Weights are
// stored [in x out] for dense layers and [out x in x k] for convolutions;
// initialization follows the usual deep-learning library defaults so that
// parameter counts and scales are comparable with published models.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/record.hpp"
#include "meterlink/embed/input.hpp"
#include "meterlink/nk/checkpoint.hpp"
#include "meterlink/nk/ops.hpp"

namespace meterlink::embed {

enum class EmbedderKind { mlp, lstm, gru, cnn_lstm, tcn, transformer };

inline const std::vector<EmbedderKind>& all_kinds() {
  static const std::vector<EmbedderKind> kinds{EmbedderKind::mlp,      EmbedderKind::lstm, EmbedderKind::gru,
                                               EmbedderKind::cnn_lstm, EmbedderKind::tcn,  EmbedderKind::transformer};
  return kinds;
}

inline std::string to_string(EmbedderKind k) {
  switch (k) {
    case EmbedderKind::mlp: return "mlp";
    case EmbedderKind::lstm: return "lstm";
    case EmbedderKind::gru: return "gru";
    case EmbedderKind::cnn_lstm: return "cnn_lstm";
    case EmbedderKind::tcn: return "tcn";
    case EmbedderKind::transformer: return "transformer";
  }
  return "?";
}

inline EmbedderKind parse_kind(const std::string& s) {
  for (EmbedderKind k : all_kinds())
    if (to_string(k) == s) return k;
  throw ConfigError("unknown embedder kind '" + s + "'");
}

// Layer counts searched per architecture. The MLP has its three fixed
// hidden layers and the TCN a single temporal block.
inline std::vector<std::size_t> layer_choices(EmbedderKind k) {
  switch (k) {
    case EmbedderKind::mlp: return {3};
    case EmbedderKind::lstm:
    case EmbedderKind::gru: return {2, 3};
    case EmbedderKind::cnn_lstm: return {1, 2};
    case EmbedderKind::tcn: return {1};
    case EmbedderKind::transformer: return {2, 3};
  }
  return {};
}

inline constexpr std::size_t kEmbeddingSize = 32;

struct EmbedderConfig {
  EmbedderKind kind = EmbedderKind::cnn_lstm;
  std::size_t layers = 1;
  std::size_t n_out = kEmbeddingSize;
  std::size_t utilities = 1;
  bool normalize = true;
  // Learned per-day-index vectors added to the transformer input.
  bool positional_encoding = true;

  static EmbedderConfig defaults(EmbedderKind kind, std::size_t utilities = 1) {
    EmbedderConfig c;
    c.kind = kind;
    c.layers = layer_choices(kind).front();
    c.utilities = utilities;
    c.normalize = kind != EmbedderKind::transformer;
    return c;
  }

  void validate() const {
    const auto choices = layer_choices(kind);
    if (std::find(choices.begin(), choices.end(), layers) == choices.end())
      throw ConfigError("layer count " + std::to_string(layers) + " not allowed for " + to_string(kind));
    if (n_out != kEmbeddingSize) throw ConfigError("embedding size must be 32");
    if (utilities == 0) throw ConfigError("utility count must be positive");
  }
};

// Intermediate values exposed for inspection by tests and diagnostics.
struct ForwardTrace {
  std::vector<nk::Tensor> attention;  // per transformer layer: [B*heads x D x D]
  nk::Tensor day_outputs;             // per-day outputs before the sum over days
  nk::Tensor pre_normalization;       // [B x n_out]
};

class Embedder {
 public:
  Embedder() = default;

  Embedder(const EmbedderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    build(rng);
  }

  const EmbedderConfig& config() const { return cfg_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::vector<nk::Tensor>& parameters() { return params_; }
  const std::vector<nk::Tensor>& parameters() const { return params_; }

  const nk::Tensor& param(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    throw PreconditionError("no parameter named '" + name + "'");
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  // Independent copy of all parameters and batchnorm statistics.
  Embedder clone() const {
    Embedder e;
    e.cfg_ = cfg_;
    e.names_ = names_;
    for (const auto& p : params_) {
      nk::Tensor c = p.clone();
      c.set_requires_grad(true);
      e.params_.push_back(c);
    }
    for (const auto& [name, st] : bn_) {
      nk::BatchNormState s(st.running_mean.numel());
      s.running_mean = st.running_mean.clone();
      s.running_var = st.running_var.clone();
      e.bn_.emplace(name, s);
    }
    return e;
  }

  // Overwrites parameter values and batchnorm statistics from `other`,
  // which must share the architecture.
  void assign(const Embedder& other) {
    if (other.names_ != names_) throw PreconditionError("assign: architecture mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].storage() = other.params_[i].storage();
    for (auto& [name, st] : bn_) {
      const auto& src = other.bn_.at(name);
      st.running_mean.storage() = src.running_mean.storage();
      st.running_var.storage() = src.running_var.storage();
    }
  }

  // x: [B x D x 24F]. Train mode uses (and updates) batch statistics in the
  // batchnorm layers; eval mode is a pure function of (x, parameters).
  nk::Tensor forward(const nk::Tensor& x, nk::Mode mode = nk::Mode::eval, ForwardTrace* trace = nullptr) const {
    if (x.rank() != 3 || x.dim(2) != kHoursPerDay * cfg_.utilities)
      throw ShapeError("embedder input must be [B x D x " + std::to_string(kHoursPerDay * cfg_.utilities) + "], got " +
                       nk::shape_str(x.shape()));
    nk::Tensor out;
    switch (cfg_.kind) {
      case EmbedderKind::mlp: out = forward_mlp(x); break;
      case EmbedderKind::lstm:
      case EmbedderKind::gru: out = forward_rnn(x, trace); break;
      case EmbedderKind::cnn_lstm: out = forward_cnn_lstm(x, mode, trace); break;
      case EmbedderKind::tcn: out = forward_tcn(x, trace); break;
      case EmbedderKind::transformer: out = forward_transformer(x, trace); break;
    }
    if (trace) trace->pre_normalization = out;
    return cfg_.normalize ? nk::l2_normalize_rows(out) : out;
  }

  // Eval-mode embeddings of weekly records, processed in chunks.
  std::vector<std::vector<double>> embed(std::span<const MeterRecord* const> records, std::size_t chunk = 256) const {
    std::vector<std::vector<double>> out;
    out.reserve(records.size());
    nk::NoGradScope no_grad;
    for (std::size_t begin = 0; begin < records.size(); begin += chunk) {
      const std::size_t n = std::min(chunk, records.size() - begin);
      const nk::Tensor e = forward(weekly_batch(records.subspan(begin, n)));
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(e.data().begin() + i * cfg_.n_out, e.data().begin() + (i + 1) * cfg_.n_out);
        for (double y : v)
          if (!std::isfinite(y)) throw NumericalError("non-finite embedding for '" + records[begin + i]->pseudonym + "'");
        out.push_back(std::move(v));
      }
    }
    return out;
  }

  std::vector<double> embed_one(const MeterRecord& rec) const {
    const MeterRecord* p = &rec;
    return embed(std::span<const MeterRecord* const>(&p, 1)).front();
  }

  nk::Checkpoint to_checkpoint() const {
    nk::Checkpoint ck;
    ck.header["kind"] = to_string(cfg_.kind);
    ck.header["layers"] = std::to_string(cfg_.layers);
    ck.header["n_out"] = std::to_string(cfg_.n_out);
    ck.header["utilities"] = std::to_string(cfg_.utilities);
    ck.header["normalize"] = cfg_.normalize ? "1" : "0";
    ck.header["positional_encoding"] = cfg_.positional_encoding ? "1" : "0";
    for (std::size_t i = 0; i < names_.size(); ++i)
      ck.arrays.push_back({names_[i], params_[i].shape(), params_[i].storage()});
    for (const auto& [name, st] : bn_) {
      ck.arrays.push_back({"bn:" + name + ".running_mean", st.running_mean.shape(), st.running_mean.storage()});
      ck.arrays.push_back({"bn:" + name + ".running_var", st.running_var.shape(), st.running_var.storage()});
    }
    return ck;
  }

  static Embedder from_checkpoint(const nk::Checkpoint& ck) {
    EmbedderConfig cfg;
    try {
      cfg.kind = parse_kind(ck.value("kind"));
      cfg.layers = std::stoul(ck.value("layers"));
      cfg.n_out = std::stoul(ck.value("n_out"));
      cfg.utilities = std::stoul(ck.value("utilities"));
      cfg.normalize = ck.value("normalize") == "1";
      cfg.positional_encoding = ck.value("positional_encoding") == "1";
    } catch (const std::logic_error&) {
      throw DataError("malformed embedder checkpoint header");
    }
    Embedder e(cfg, 0);
    for (std::size_t i = 0; i < e.names_.size(); ++i) {
      const auto& a = ck.array(e.names_[i]);
      if (a.shape != e.params_[i].shape()) throw DataError("checkpoint array '" + a.name + "' has the wrong shape");
      e.params_[i].storage() = a.data;
    }
    for (auto& [name, st] : e.bn_) {
      const auto& m = ck.array("bn:" + name + ".running_mean");
      const auto& v = ck.array("bn:" + name + ".running_var");
      if (m.data.size() != st.running_mean.numel() || v.data.size() != st.running_var.numel())
        throw DataError("checkpoint batchnorm statistics for '" + name + "' have the wrong size");
      st.running_mean.storage() = m.data;
      st.running_var.storage() = v.data;
    }
    for (const auto& p : e.params_)
      for (double v : p.data())
        if (!std::isfinite(v)) throw DataError("checkpoint holds non-finite parameters");
    return e;
  }

 private:
  static constexpr std::size_t kMlpHidden1 = 128;
  static constexpr std::size_t kMlpHidden2 = 64;
  static constexpr std::size_t kConv1Channels = 16;
  static constexpr std::size_t kConv1Kernel = 3;
  static constexpr std::size_t kConv2Channels = 32;
  static constexpr std::size_t kConv2Kernel = 4;
  static constexpr std::size_t kPool = 2;
  static constexpr std::size_t kTcnChannels = 32;
  static constexpr std::size_t kTcnKernel = kDaysPerWeek;
  static constexpr std::size_t kTransformerInput = 128;
  static constexpr std::size_t kModelWidth = 64;
  static constexpr std::size_t kHeads = 4;
  static constexpr std::size_t kFeedForward = 128;

  // ---- parameter construction ----

  // Returns a handle (not a reference: the vector may reallocate).
  nk::Tensor add_param(const std::string& name, nk::Shape shape) {
    names_.push_back(name);
    params_.push_back(nk::Tensor::parameter(shape, std::vector<double>(nk::numel_of(shape), 0.0)));
    return params_.back();
  }

  static void fill_uniform(nk::Tensor t, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.data()) v = u(rng);
  }
  static void fill_normal(nk::Tensor t, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    for (double& v : t.data()) v = n(rng);
  }

  void add_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    fill_uniform(add_param(name + ".weight", {in, out}), bound, rng);
    fill_uniform(add_param(name + ".bias", {out}), bound, rng);
  }

  void add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k));
    fill_uniform(add_param(name + ".weight", {cout, cin, k}), bound, rng);
    fill_uniform(add_param(name + ".bias", {cout}), bound, rng);
  }

  void add_batchnorm(const std::string& name, std::size_t c) {
    nk::Tensor g = add_param(name + ".gamma", {c});
    for (double& v : g.data()) v = 1.0;
    add_param(name + ".beta", {c});
    bn_.emplace(name, nk::BatchNormState(c));
  }

  void add_layernorm(const std::string& name, std::size_t c) {
    nk::Tensor g = add_param(name + ".gamma", {c});
    for (double& v : g.data()) v = 1.0;
    add_param(name + ".beta", {c});
  }

  // Gate blocks: LSTM (i, f, g, o), GRU (r, z, n).
  void add_recurrent(const std::string& name, std::size_t in, std::size_t hidden, std::size_t gates,
                     std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    fill_uniform(add_param(name + ".w_ih", {in, gates * hidden}), bound, rng);
    fill_uniform(add_param(name + ".w_hh", {hidden, gates * hidden}), bound, rng);
    fill_uniform(add_param(name + ".b_ih", {gates * hidden}), bound, rng);
    fill_uniform(add_param(name + ".b_hh", {gates * hidden}), bound, rng);
  }

  // Convolution with weight normalization: direction v ~ N(0, 0.01) and
  // magnitude g initialized to |v| per output channel.
  void add_weightnorm_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                           std::mt19937_64& rng) {
    nk::Tensor v = add_param(name + ".v", {cout, cin, k});
    fill_normal(v, 0.01, rng);
    nk::Tensor g = add_param(name + ".g", {cout});
    const std::size_t per = cin * k;
    for (std::size_t o = 0; o < cout; ++o) {
      double s = 0.0;
      for (std::size_t j = 0; j < per; ++j) s += v[o * per + j] * v[o * per + j];
      g[o] = std::sqrt(s);
    }
    fill_uniform(add_param(name + ".bias", {cout}), 1.0 / std::sqrt(static_cast<double>(per)), rng);
  }

  void add_attention(const std::string& name, std::size_t width, std::mt19937_64& rng) {
    const double xavier = std::sqrt(6.0 / static_cast<double>(2 * width));
    for (const char* p : {"q", "k", "v"}) {
      fill_uniform(add_param(name + "." + p + ".weight", {width, width}), xavier, rng);
      add_param(name + "." + p + ".bias", {width});
    }
    fill_uniform(add_param(name + ".out.weight", {width, width}), 1.0 / std::sqrt(static_cast<double>(width)), rng);
    add_param(name + ".out.bias", {width});
  }

  std::size_t cnn_features(std::size_t len) const {
    const std::size_t a = (len - kConv1Kernel + 1) / kPool;
    return kConv2Channels * ((a - kConv2Kernel + 1) / kPool);
  }

  void build(std::mt19937_64& rng) {
    const std::size_t width = kHoursPerDay * cfg_.utilities;
    const std::size_t H = cfg_.n_out;
    switch (cfg_.kind) {
      case EmbedderKind::mlp:
        add_linear("fc1", kDaysPerWeek * width, kMlpHidden1, rng);
        add_linear("fc2", kMlpHidden1, kMlpHidden2, rng);
        add_linear("fc3", kMlpHidden2, H, rng);
        break;
      case EmbedderKind::lstm:
      case EmbedderKind::gru: {
        const std::size_t gates = cfg_.kind == EmbedderKind::lstm ? 4 : 3;
        for (std::size_t l = 0; l < cfg_.layers; ++l)
          add_recurrent("rnn" + std::to_string(l), l == 0 ? width : H, H, gates, rng);
        break;
      }
      case EmbedderKind::cnn_lstm: {
        std::size_t channels = cfg_.utilities, len = kHoursPerDay;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
          const std::string p = "stage" + std::to_string(l);
          add_conv(p + ".conv1", channels, kConv1Channels, kConv1Kernel, rng);
          add_batchnorm(p + ".bn1", kConv1Channels);
          add_conv(p + ".conv2", kConv1Channels, kConv2Channels, kConv2Kernel, rng);
          add_batchnorm(p + ".bn2", kConv2Channels);
          add_recurrent(p + ".lstm", cnn_features(len), H, 4, rng);
          // The next stage reads each day's LSTM output as one channel.
          channels = 1;
          len = H;
        }
        break;
      }
      case EmbedderKind::tcn:
        add_weightnorm_conv("tcn.conv1", width, kTcnChannels, kTcnKernel, rng);
        add_weightnorm_conv("tcn.conv2", kTcnChannels, kTcnChannels, kTcnKernel, rng);
        {
          nk::Tensor w = add_param("tcn.downsample.weight", {kTcnChannels, width, 1});
          fill_normal(w, 0.01, rng);
          fill_uniform(add_param("tcn.downsample.bias", {kTcnChannels}), 1.0 / std::sqrt(static_cast<double>(width)),
                       rng);
        }
        break;
      case EmbedderKind::transformer:
        add_linear("input", width, kTransformerInput, rng);
        if (cfg_.positional_encoding) fill_normal(add_param("position", {kDaysPerWeek, kTransformerInput}), 1.0, rng);
        add_linear("enc0.in_proj", kTransformerInput, kModelWidth, rng);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
          const std::string p = "enc" + std::to_string(l);
          add_attention(p + ".attn", kModelWidth, rng);
          add_layernorm(p + ".norm1", kModelWidth);
          add_linear(p + ".ff1", kModelWidth, kFeedForward, rng);
          add_linear(p + ".ff2", kFeedForward, kModelWidth, rng);
          add_layernorm(p + ".norm2", kModelWidth);
        }
        add_linear("output", kModelWidth, H, rng);
        break;
    }
  }

  // ---- forward passes ----

  nk::Tensor lin(const nk::Tensor& x, const std::string& name) const {
    return nk::linear(x, param(name + ".weight"), param(name + ".bias"));
  }

  // Runs one recurrent layer over x [B x D x in]; returns outputs [B x D x H].
  nk::Tensor recurrent_layer(const nk::Tensor& x, const std::string& name, bool lstm) const {
    const std::size_t B = x.dim(0), D = x.dim(1), in = x.dim(2), H = cfg_.n_out;
    const std::size_t gates = lstm ? 4 : 3;
    const nk::Tensor proj =
        nk::reshape(nk::linear(nk::reshape(x, {B * D, in}), param(name + ".w_ih"), param(name + ".b_ih")),
                    {B, D, gates * H});
    const nk::Tensor& w_hh = param(name + ".w_hh");
    const nk::Tensor& b_hh = param(name + ".b_hh");
    nk::Tensor h(nk::Shape{B, H}), c(nk::Shape{B, H});
    std::vector<nk::Tensor> outputs;
    for (std::size_t t = 0; t < D; ++t) {
      const nk::Tensor gi = nk::reshape(nk::slice(proj, 1, t, 1), {B, gates * H});
      const nk::Tensor gh = nk::linear(h, w_hh, b_hh);
      if (lstm) {
        const nk::Tensor g = nk::add(gi, gh);
        const nk::Tensor i = nk::sigmoid(nk::slice(g, 1, 0, H));
        const nk::Tensor f = nk::sigmoid(nk::slice(g, 1, H, H));
        const nk::Tensor cand = nk::tanh(nk::slice(g, 1, 2 * H, H));
        const nk::Tensor o = nk::sigmoid(nk::slice(g, 1, 3 * H, H));
        c = nk::add(nk::mul(f, c), nk::mul(i, cand));
        h = nk::mul(o, nk::tanh(c));
      } else {
        const nk::Tensor r = nk::sigmoid(nk::add(nk::slice(gi, 1, 0, H), nk::slice(gh, 1, 0, H)));
        const nk::Tensor z = nk::sigmoid(nk::add(nk::slice(gi, 1, H, H), nk::slice(gh, 1, H, H)));
        const nk::Tensor n = nk::tanh(nk::add(nk::slice(gi, 1, 2 * H, H), nk::mul(r, nk::slice(gh, 1, 2 * H, H))));
        // h' = (1 - z) n + z h
        h = nk::add(n, nk::mul(z, nk::sub(h, n)));
      }
      outputs.push_back(nk::reshape(h, {B, 1, H}));
    }
    return nk::concat(outputs, 1);
  }

  nk::Tensor forward_mlp(const nk::Tensor& x) const {
    const std::size_t B = x.dim(0);
    if (x.dim(1) * x.dim(2) != param("fc1.weight").dim(0)) throw ShapeError("mlp expects a full week of input");
    nk::Tensor h = nk::reshape(x, {B, x.dim(1) * x.dim(2)});
    h = nk::relu(lin(h, "fc1"));
    h = nk::relu(lin(h, "fc2"));
    return lin(h, "fc3");
  }

  nk::Tensor forward_rnn(const nk::Tensor& x, ForwardTrace* trace) const {
    const bool lstm = cfg_.kind == EmbedderKind::lstm;
    nk::Tensor y = x;
    for (std::size_t l = 0; l < cfg_.layers; ++l) y = recurrent_layer(y, "rnn" + std::to_string(l), lstm);
    if (trace) trace->day_outputs = y;
    return nk::sum_dim(y, 1);
  }

  // Per-day CNN: x [N x C x len] -> [N x features].
  nk::Tensor day_cnn(const nk::Tensor& x, const std::string& p, nk::Mode mode) const {
    nk::Tensor h = nk::conv1d(x, param(p + ".conv1.weight"), param(p + ".conv1.bias"), 0);
    h = nk::batchnorm1d(h, param(p + ".bn1.gamma"), param(p + ".bn1.beta"), bn_.at(p + ".bn1"), mode);
    h = nk::maxpool1d(nk::leaky_relu(h), kPool);
    h = nk::conv1d(h, param(p + ".conv2.weight"), param(p + ".conv2.bias"), 0);
    h = nk::batchnorm1d(h, param(p + ".bn2.gamma"), param(p + ".bn2.beta"), bn_.at(p + ".bn2"), mode);
    h = nk::maxpool1d(nk::leaky_relu(h), kPool);
    return nk::reshape(h, {h.dim(0), h.dim(1) * h.dim(2)});
  }

  nk::Tensor forward_cnn_lstm(const nk::Tensor& x, nk::Mode mode, ForwardTrace* trace) const {
    const std::size_t B = x.dim(0), D = x.dim(1);
    // Each day is read as F feature maps of 24 hourly values.
    nk::Tensor maps = nk::reshape(x, {B * D, cfg_.utilities, kHoursPerDay});
    nk::Tensor y;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "stage" + std::to_string(l);
      const nk::Tensor feats = day_cnn(maps, p, mode);
      y = recurrent_layer(nk::reshape(feats, {B, D, feats.dim(1)}), p + ".lstm", true);
      maps = nk::reshape(y, {B * D, 1, cfg_.n_out});
    }
    if (trace) trace->day_outputs = y;
    return nk::sum_dim(y, 1);
  }

  nk::Tensor forward_tcn(const nk::Tensor& x, ForwardTrace* trace) const {
    // Channels are the 24F hourly features, the sequence runs over days.
    const nk::Tensor seq = nk::permute(x, {0, 2, 1});
    const std::size_t pad = kTcnKernel - 1;
    nk::Tensor h = nk::conv1d(seq, nk::weight_norm(param("tcn.conv1.v"), param("tcn.conv1.g")),
                              param("tcn.conv1.bias"), pad);
    h = nk::relu(h);
    h = nk::conv1d(h, nk::weight_norm(param("tcn.conv2.v"), param("tcn.conv2.g")), param("tcn.conv2.bias"), pad);
    h = nk::relu(h);
    const nk::Tensor res = nk::conv1d(seq, param("tcn.downsample.weight"), param("tcn.downsample.bias"), 0);
    const nk::Tensor out = nk::permute(nk::relu(nk::add(h, res)), {0, 2, 1});
    if (trace) trace->day_outputs = out;
    return nk::sum_dim(out, 1);
  }

  nk::Tensor attention(const nk::Tensor& h, std::size_t B, std::size_t D, const std::string& p,
                       ForwardTrace* trace) const {
    const std::size_t hd = kModelWidth / kHeads;
    auto heads = [&](const nk::Tensor& t) {
      return nk::reshape(nk::permute(nk::reshape(t, {B, D, kHeads, hd}), {0, 2, 1, 3}), {B * kHeads, D, hd});
    };
    const nk::Tensor q = heads(lin(h, p + ".q"));
    const nk::Tensor k = heads(lin(h, p + ".k"));
    const nk::Tensor v = heads(lin(h, p + ".v"));
    const nk::Tensor a = nk::softmax(nk::affine(nk::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(hd))));
    if (trace) trace->attention.push_back(a);
    const nk::Tensor o = nk::reshape(nk::permute(nk::reshape(nk::bmm(a, v), {B, kHeads, D, hd}), {0, 2, 1, 3}),
                                     {B * D, kModelWidth});
    return lin(o, p + ".out");
  }

  nk::Tensor forward_transformer(const nk::Tensor& x, ForwardTrace* trace) const {
    const std::size_t B = x.dim(0), D = x.dim(1);
    nk::Tensor h = lin(nk::reshape(x, {B * D, x.dim(2)}), "input");
    if (cfg_.positional_encoding) {
      if (D > kDaysPerWeek) throw ShapeError("transformer positional table covers 7 days");
      h = nk::reshape(nk::add_broadcast(nk::reshape(h, {B, D, kTransformerInput}),
                                        nk::slice(param("position"), 0, 0, D)),
                      {B * D, kTransformerInput});
    }
    h = lin(h, "enc0.in_proj");
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "enc" + std::to_string(l);
      h = nk::layernorm(nk::add(h, attention(h, B, D, p + ".attn", trace)), param(p + ".norm1.gamma"),
                        param(p + ".norm1.beta"));
      const nk::Tensor ff = lin(nk::relu(lin(h, p + ".ff1")), p + ".ff2");
      h = nk::layernorm(nk::add(h, ff), param(p + ".norm2.gamma"), param(p + ".norm2.beta"));
    }
    const nk::Tensor days = nk::reshape(h, {B, D, kModelWidth});
    if (trace) trace->day_outputs = days;
    return lin(nk::sum_dim(days, 1), "output");
  }

  EmbedderConfig cfg_;
  std::vector<std::string> names_;
  std::vector<nk::Tensor> params_;
  // Running statistics change during train-mode forwards, which the
  // concurrency contract confines to a single worker per model.
  mutable std::map<std::string, nk::BatchNormState> bn_;
};

}  // namespace meterlink::embed
