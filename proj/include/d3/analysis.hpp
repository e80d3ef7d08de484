#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "d3/engine.hpp"
#include "d3/flops.hpp"
#include "d3/model.hpp"

namespace d3 {

// 1 / p. Throws NonPositiveProbability for p <= 0 (or NaN).
double token_ppl(double p);

struct SaturationRecord {
  std::size_t position = 0;
  // Shallowest 1-based depth from which every deeper readout agrees with
  // the final layer's argmax.
  std::size_t saturation_depth = 0;
  // Softmax probability of the argmax token at saturation_depth.
  double confidence = 0.0;
  // Shallowest depth whose argmax matches the final one, agreement below
  // it not required to persist.
  std::size_t first_touch_depth = 0;
};

// One record per position of `tokens`; position t describes the prediction
// of token t + 1.
std::vector<SaturationRecord> saturation_depth(const Model& model, std::span<const TokenId> tokens);

struct SaturationSummary {
  double mean_depth = 0.0;
  double mean_confidence = 0.0;
  // fraction_saturated[k] = share of positions with saturation depth <= k + 1.
  std::vector<double> fraction_saturated;
};

SaturationSummary summarize_saturation(std::span<const SaturationRecord> records,
                                       std::size_t n_layers);

enum class FlowStream { Hidden, Mlp, Attn };
std::string_view to_string(FlowStream stream);

struct FlowRecord {
  std::size_t layer = 0;  // pair (layer, layer + 1)
  FlowStream stream = FlowStream::Hidden;
  std::optional<double> cosine;  // mean over positions where both norms are non-zero
  double euclidean = 0.0;        // mean over all positions
  std::size_t zero_norm_positions = 0;
};

double cosine_similarity(std::span<const float> a, std::span<const float> b);  // NaN on a zero norm
double euclidean_distance(std::span<const float> a, std::span<const float> b);

// Consecutive-block similarity of the hidden, MLP and attention streams,
// averaged over positions. Ordered by layer, then stream.
std::vector<FlowRecord> layer_flow(const Model& model, std::span<const TokenId> tokens);

// Mean kept_count over generated steps. Throws EmptyTrace.
double avg_layers(const GenTrace& trace);
double avg_layers(std::span<const GenTrace> traces);

struct Speedup {
  double exact = 0.0;
  double model = 0.0;
};

// Baseline FLOPs over method FLOPs, prompt phase included on both sides.
Speedup speedup(std::span<const GenTrace> method, std::span<const GenTrace> baseline);

struct ErrorPropPoint {
  std::size_t t0 = 0;
  std::size_t k = 0;
  double agreement = 0.0;  // mean token agreement with full depth
  double metric = 0.0;     // see error_prop_run
};

// From generation step t0 onward the top k layers are identity-skipped.
// `metric` is the share of sequences whose completion equals `references`
// when given, otherwise the share identical to the full-depth completion.
std::vector<ErrorPropPoint> error_prop_run(
    const Model& model, std::span<const std::vector<TokenId>> prompts,
    std::span<const std::size_t> t0_values, std::span<const std::size_t> k_values,
    const DecodeParams& params,
    std::optional<std::span<const std::vector<TokenId>>> references = std::nullopt);

// CSV emitters.
void write_saturation_csv(std::ostream& out, std::span<const SaturationRecord> records);
void write_flow_csv(std::ostream& out, std::span<const FlowRecord> records,
                    std::optional<long long> checkpoint_step = std::nullopt, bool header = true);
void write_error_prop_csv(std::ostream& out, std::span<const ErrorPropPoint> points);

}  // namespace d3
