#include "d3/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "d3/error.hpp"

namespace d3 {
namespace kernels {

void rms_norm(std::span<const float> x, std::span<const float> gain, std::span<float> out) {
  double sum_sq = 0.0;
  for (float v : x) sum_sq += static_cast<double>(v) * v;
  const float inv = static_cast<float>(
      1.0 / std::sqrt(sum_sq / static_cast<double>(x.size()) + static_cast<double>(kRmsNormEps)));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

void matvec(std::span<const float> x, std::span<const float> w, std::span<float> out,
            MacCounter* counter) {
  // Sums are carried in double; storage stays float.
  const std::size_t n_out = out.size();
  thread_local std::vector<double> acc;
  acc.assign(n_out, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const float* row = w.data() + i * n_out;
    for (std::size_t j = 0; j < n_out; ++j) acc[j] += xi * row[j];
  }
  for (std::size_t j = 0; j < n_out; ++j) out[j] = static_cast<float>(acc[j]);
  if (counter) counter->macs += x.size() * n_out;
}

void apply_rope(std::span<float> vec, std::size_t n_heads, std::size_t pos) {
  const std::size_t head_dim = vec.size() / n_heads;
  const std::size_t half = head_dim / 2;
  for (std::size_t h = 0; h < n_heads; ++h) {
    float* v = vec.data() + h * head_dim;
    for (std::size_t j = 0; j < half; ++j) {
      const double freq =
          std::pow(static_cast<double>(kRopeTheta), -2.0 * static_cast<double>(j) / head_dim);
      const double angle = static_cast<double>(pos) * freq;
      const float c = static_cast<float>(std::cos(angle));
      const float s = static_cast<float>(std::sin(angle));
      const float x1 = v[j];
      const float x2 = v[j + half];
      v[j] = x1 * c - x2 * s;
      v[j + half] = x2 * c + x1 * s;
    }
  }
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x / std::sqrt(2.0f)));
}

void softmax_inplace(std::span<float> values) {
  const float max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (auto& v : values) {
    v = std::exp(v - max);
    sum += v;
  }
  const double inv = 1.0 / sum;
  for (auto& v : values) v = static_cast<float>(v * inv);
}

}  // namespace kernels

namespace {

void check_layer(const Model& model, std::size_t layer) {
  if (layer >= model.config.n_layers)
    throw Error(ErrorCode::LayerOutOfRange,
                "layer " + std::to_string(layer) + " >= " + std::to_string(model.config.n_layers));
}

// Multi-head attention of one query over past entries plus the new one.
void attend(const ModelConfig& c, std::span<const float> query, const KVSpan& past,
            std::span<const float> new_key, std::span<const float> new_value,
            std::span<float> out, MacCounter* counter) {
  const std::size_t d = c.d_model;
  const std::size_t hd = c.head_dim();
  const std::size_t ctx = past.count + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<float> scores(ctx);
  std::vector<double> mixed(hd);

  auto key_row = [&](std::size_t t) {
    return t < past.count ? past.keys.data() + t * d : new_key.data();
  };
  auto value_row = [&](std::size_t t) {
    return t < past.count ? past.values.data() + t * d : new_value.data();
  };

  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const float* q = query.data() + h * hd;
    for (std::size_t t = 0; t < ctx; ++t) {
      const float* k = key_row(t) + h * hd;
      double dot = 0.0;
      for (std::size_t e = 0; e < hd; ++e) dot += static_cast<double>(q[e]) * k[e];
      scores[t] = static_cast<float>(dot * scale);
    }
    kernels::softmax_inplace(scores);
    std::fill(mixed.begin(), mixed.end(), 0.0);
    for (std::size_t t = 0; t < ctx; ++t) {
      const float* v = value_row(t) + h * hd;
      const double p = scores[t];
      for (std::size_t e = 0; e < hd; ++e) mixed[e] += p * v[e];
    }
    for (std::size_t e = 0; e < hd; ++e) out[h * hd + e] = static_cast<float>(mixed[e]);
  }
  if (counter) counter->macs += 2 * ctx * d;
}

}  // namespace

HiddenState embed(const Model& model, std::span<const std::vector<TokenId>> tokens) {
  std::size_t positions = 0;
  for (const auto& row : tokens) positions = std::max(positions, row.size());
  const std::size_t d = model.config.d_model;
  HiddenState out(tokens.size(), positions, d);
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    if (tokens[b].size() != positions)
      throw Error(ErrorCode::ShapeMismatch, "embed: ragged batch rows");
    for (std::size_t t = 0; t < positions; ++t) {
      const auto row = model.embedding_row(tokens[b][t]);
      std::copy(row.begin(), row.end(), out.at(b, t).begin());
    }
  }
  return out;
}

void project_kv(const Model& model, std::size_t layer, std::span<const float> h,
                std::size_t pos, std::span<float> key_out, std::span<float> value_out,
                MacCounter* counter) {
  check_layer(model, layer);
  const auto& c = model.config;
  if (h.size() != c.d_model || key_out.size() != c.d_model || value_out.size() != c.d_model)
    throw Error(ErrorCode::ShapeMismatch, "project_kv: width != d_model");
  const auto& w = model.layers[layer];
  std::vector<float> normed(c.d_model);
  kernels::rms_norm(h, w.attn_norm, normed);
  kernels::matvec(normed, w.wk, key_out, counter);
  kernels::matvec(normed, w.wv, value_out, counter);
  kernels::apply_rope(key_out, c.n_heads, pos);
}

LayerOutput run_layer(const Model& model, std::size_t layer, std::span<const float> h_in,
                      std::size_t pos, const KVSpan& past, MacCounter* counter) {
  check_layer(model, layer);
  const auto& c = model.config;
  const std::size_t d = c.d_model;
  if (h_in.size() != d) throw Error(ErrorCode::ShapeMismatch, "run_layer: h_in width != d_model");
  if (past.count != pos || past.keys.size() < pos * d || past.values.size() < pos * d)
    throw Error(ErrorCode::ShapeMismatch,
                "run_layer: kv view holds " + std::to_string(past.count) + " positions, need " +
                    std::to_string(pos));
  const auto& w = model.layers[layer];

  LayerOutput out;
  out.key.resize(d);
  out.value.resize(d);
  out.attn.resize(d);
  out.mlp.resize(d);
  out.hidden.assign(h_in.begin(), h_in.end());

  std::vector<float> normed(d);
  std::vector<float> query(d);
  kernels::rms_norm(h_in, w.attn_norm, normed);
  kernels::matvec(normed, w.wq, query, counter);
  kernels::matvec(normed, w.wk, out.key, counter);
  kernels::matvec(normed, w.wv, out.value, counter);
  kernels::apply_rope(query, c.n_heads, pos);
  kernels::apply_rope(out.key, c.n_heads, pos);

  std::vector<float> mixed(d);
  attend(c, query, past, out.key, out.value, mixed, counter);
  kernels::matvec(mixed, w.wo, out.attn, counter);
  for (std::size_t i = 0; i < d; ++i) out.hidden[i] += out.attn[i];

  std::vector<float> up(c.d_ff);
  kernels::rms_norm(out.hidden, w.mlp_norm, normed);
  kernels::matvec(normed, w.w_up, up, counter);
  for (auto& u : up) u = kernels::gelu(u);
  kernels::matvec(up, w.w_down, out.mlp, counter);
  for (std::size_t i = 0; i < d; ++i) out.hidden[i] += out.mlp[i];
  return out;
}

std::vector<float> readout_logits(const Model& model, std::span<const float> h) {
  const auto& c = model.config;
  if (h.size() != c.d_model) throw Error(ErrorCode::ShapeMismatch, "readout: width != d_model");
  std::vector<float> normed(c.d_model);
  kernels::rms_norm(h, model.final_norm, normed);
  std::vector<float> logits(c.vocab_size, 0.0f);
  if (c.tied_lm_head) {
    for (std::size_t j = 0; j < c.vocab_size; ++j) {
      const float* e = model.token_embedding.data() + j * c.d_model;
      double dot = 0.0;
      for (std::size_t i = 0; i < c.d_model; ++i) dot += static_cast<double>(normed[i]) * e[i];
      logits[j] = static_cast<float>(dot);
    }
  } else {
    kernels::matvec(normed, model.lm_head, logits, nullptr);
  }
  return logits;
}

std::vector<float> readout(const Model& model, std::span<const float> h) {
  auto probs = readout_logits(model, h);
  kernels::softmax_inplace(probs);
  return probs;
}

std::size_t argmax(std::span<const float> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

ForwardStreams forward_full(const Model& model, std::span<const TokenId> tokens) {
  const auto& c = model.config;
  if (tokens.size() > c.max_seq)
    throw Error(ErrorCode::SequenceTooLong,
                std::to_string(tokens.size()) + " > max_seq " + std::to_string(c.max_seq));
  const std::size_t n = tokens.size();
  const std::size_t d = c.d_model;

  ForwardStreams s;
  s.positions = n;
  const std::vector<std::vector<TokenId>> batch = {std::vector<TokenId>(tokens.begin(), tokens.end())};
  s.embedding = embed(model, batch);

  s.hidden.reserve(c.n_layers);
  s.attn.reserve(c.n_layers);
  s.mlp.reserve(c.n_layers);
  std::vector<float> keys(n * d);
  std::vector<float> values(n * d);
  const HiddenState* input = &s.embedding;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    s.hidden.emplace_back(1, n, d);
    s.attn.emplace_back(1, n, d);
    s.mlp.emplace_back(1, n, d);
    for (std::size_t t = 0; t < n; ++t) {
      const KVSpan past{std::span<const float>(keys).first(t * d),
                        std::span<const float>(values).first(t * d), t};
      auto o = run_layer(model, l, input->at(0, t), t, past);
      std::copy(o.key.begin(), o.key.end(), keys.begin() + t * d);
      std::copy(o.value.begin(), o.value.end(), values.begin() + t * d);
      std::copy(o.hidden.begin(), o.hidden.end(), s.hidden[l].at(0, t).begin());
      std::copy(o.attn.begin(), o.attn.end(), s.attn[l].at(0, t).begin());
      std::copy(o.mlp.begin(), o.mlp.end(), s.mlp[l].at(0, t).begin());
    }
    input = &s.hidden[l];
  }
  return s;
}

}  // namespace d3
