#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace d3 {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t d_ff = 0;
  std::size_t max_seq = 0;
  bool tied_lm_head = true;

  std::size_t head_dim() const { return d_model / n_heads; }

  // Throws DimensionMismatch when a count is zero, max_seq < 2 or
  // d_model is not a multiple of n_heads.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// All matrices are row-major [in x out]; a projection computes y = x * W.
struct LayerWeights {
  std::vector<float> attn_norm;  // [d_model]
  std::vector<float> wq;         // [d_model x d_model]
  std::vector<float> wk;         // [d_model x d_model]
  std::vector<float> wv;         // [d_model x d_model]
  std::vector<float> wo;         // [d_model x d_model]
  std::vector<float> mlp_norm;   // [d_model]
  std::vector<float> w_up;       // [d_model x d_ff]
  std::vector<float> w_down;     // [d_ff x d_model]
};

struct Model {
  ModelConfig config;
  std::vector<float> token_embedding;  // [vocab_size x d_model]
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;  // [d_model]
  std::vector<float> lm_head;     // [d_model x vocab_size], empty when tied

  std::span<const float> embedding_row(TokenId token) const;

  // Logit weight for (feature i, vocab entry j), honouring weight tying.
  float lm_head_at(std::size_t i, std::size_t j) const {
    return config.tied_lm_head ? token_embedding[j * config.d_model + i]
                               : lm_head[i * config.vocab_size + j];
  }
};

// D3W1 weight file.
//
// Layout: "D3W1", then 7 little-endian u32 (vocab_size, d_model, n_layers,
// n_heads, d_ff, max_seq, tied_flag), then little-endian f32 tensors in the
// order: embedding, per layer {attn_norm, wq, wk, wv, wo, mlp_norm, w_up,
// w_down}, final_norm, lm_head (untied only).
Model load_model(std::span<const std::byte> bytes);
Model load_model_file(const std::filesystem::path& path);
std::vector<std::byte> serialize_model(const Model& model);
void save_model_file(const Model& model, const std::filesystem::path& path);

// Expected payload size in bytes, header included.
std::size_t model_file_size(const ModelConfig& config);

// Gains set to one, every other weight zero. Each layer is then an exact
// identity on the residual stream.
Model make_zero_model(const ModelConfig& config);

// Deterministic Gaussian initialisation. `scale` multiplies the
// 1/sqrt(fan_in) standard deviation of every projection.
Model make_random_model(const ModelConfig& config, std::uint64_t seed, float scale = 1.0f);

}  // namespace d3
