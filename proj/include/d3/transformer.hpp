#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "d3/model.hpp"

namespace d3 {

inline constexpr float kRmsNormEps = 1e-5f;
inline constexpr float kRopeTheta = 10000.0f;

// Dense activations [batch x positions x width].
struct HiddenState {
  std::size_t batch = 0;
  std::size_t positions = 0;
  std::size_t width = 0;
  std::vector<float> values;

  HiddenState() = default;
  HiddenState(std::size_t b, std::size_t p, std::size_t w)
      : batch(b), positions(p), width(w), values(b * p * w, 0.0f) {}

  std::span<float> at(std::size_t row, std::size_t pos) {
    return std::span<float>(values).subspan((row * positions + pos) * width, width);
  }
  std::span<const float> at(std::size_t row, std::size_t pos) const {
    return std::span<const float>(values).subspan((row * positions + pos) * width, width);
  }
};

// Multiply-add tally of every matmul and attention contraction executed
// through the kernels below.
struct MacCounter {
  std::uint64_t macs = 0;
};

// Keys and values already stored for positions [0, count) of one layer,
// each row holding n_heads * head_dim values. Keys carry rotary encoding.
struct KVSpan {
  std::span<const float> keys;
  std::span<const float> values;
  std::size_t count = 0;
};

struct LayerOutput {
  std::vector<float> hidden;  // h_in + attn + mlp
  std::vector<float> key;     // rotated key for this position
  std::vector<float> value;
  std::vector<float> attn;    // attention sub-layer output (after Wo)
  std::vector<float> mlp;     // MLP sub-layer output
};

// Token embeddings for every row. Position information enters through
// rotary encoding inside attention, so there is no additive positional term.
HiddenState embed(const Model& model, std::span<const std::vector<TokenId>> tokens);

// One pre-norm decoder block for a single new position `pos`. `past` must
// hold exactly the `pos` earlier positions of this layer; the new key/value
// are computed here and attended to along with them.
LayerOutput run_layer(const Model& model, std::size_t layer, std::span<const float> h_in,
                      std::size_t pos, const KVSpan& past, MacCounter* counter = nullptr);

// Key/value projection of `h` at layer `layer`, position `pos`; the same
// computation run_layer performs for its new entry.
void project_kv(const Model& model, std::size_t layer, std::span<const float> h,
                std::size_t pos, std::span<float> key_out, std::span<float> value_out,
                MacCounter* counter = nullptr);

// final_norm -> lm_head. Valid for the hidden state of any layer.
std::vector<float> readout_logits(const Model& model, std::span<const float> h);

// final_norm -> lm_head -> softmax.
std::vector<float> readout(const Model& model, std::span<const float> h);

// Lowest index among equal maxima.
std::size_t argmax(std::span<const float> values);

struct ForwardStreams {
  std::size_t positions = 0;
  HiddenState embedding;             // [1 x positions x d]
  std::vector<HiddenState> hidden;   // per layer, block output
  std::vector<HiddenState> attn;     // per layer, attention sub-layer output
  std::vector<HiddenState> mlp;      // per layer, MLP sub-layer output
};

// Whole-sequence forward pass, layer by layer, keeping every layer's
// activation streams.
ForwardStreams forward_full(const Model& model, std::span<const TokenId> tokens);

// Numeric building blocks, exposed for the analysis code and tests.
namespace kernels {

void rms_norm(std::span<const float> x, std::span<const float> gain, std::span<float> out);

// out[j] = sum_i x[i] * w[i * out.size() + j]
void matvec(std::span<const float> x, std::span<const float> w, std::span<float> out,
            MacCounter* counter);

void apply_rope(std::span<float> vec, std::size_t n_heads, std::size_t pos);

float gelu(float x);

void softmax_inplace(std::span<float> values);

}  // namespace kernels

}  // namespace d3
