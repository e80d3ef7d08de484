#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "d3/kv_cache.hpp"
#include "d3/model.hpp"
#include "d3/schedule.hpp"
#include "d3/transformer.hpp"

namespace d3 {

struct DecodeParams {
  std::size_t max_new_tokens = 16;
  std::optional<TokenId> eos_token;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;  // reserved, decoding is greedy
  FillPolicy fill_policy = FillPolicy::TensorCopy;

  void validate() const;
};

// Record for generated token T_i. Step 0 comes out of the prompt pass, so
// it always ran the full stack; step i >= 1 processed T_{i-1} at `position`
// with the layers in `kept_set`.
struct StepRecord {
  TokenId token = 0;
  double prob = 0.0;
  double ppl = 0.0;
  std::size_t position = 0;
  std::size_t kept_count = 0;
  KeptSet kept_set;
  std::uint64_t flops_exact = 0;
  double flops_model = 0.0;
};

struct GenTrace {
  std::size_t prompt_length = 0;
  std::vector<StepRecord> steps;
  // Prompt positions before the last one; the last is charged to step 0.
  std::uint64_t prefill_flops_exact = 0;
  double prefill_flops_model = 0.0;
  double wall_ms = 0.0;
  std::size_t missing_events = 0;

  std::vector<TokenId> tokens() const;
  std::uint64_t total_flops_exact() const;
  double total_flops_model() const;
};

// Decoding state of one sequence: its cache plus the residual stream that
// flowed past each skipped (layer, position), kept for Reproject fills.
class SequenceState {
 public:
  SequenceState(const Model& model, FillPolicy policy);

  KVCache& cache() { return cache_; }
  const KVCache& cache() const { return cache_; }
  std::size_t next_position() const { return next_pos_; }
  MacCounter& macs() { return macs_; }

  // Runs `input` at the next position through the kept layers, skipped
  // layers acting as identity. Returns the final residual stream.
  std::vector<float> advance(TokenId input, const KeptSet& kept);

 private:
  std::optional<std::span<const float>> skipped_hidden(std::size_t layer, std::size_t pos) const;

  const Model* model_;
  KVCache cache_;
  std::vector<float> skipped_;
  std::vector<std::uint8_t> has_skipped_;
  std::size_t next_pos_ = 0;
  MacCounter macs_;
};

// Initiation phase: every layer for every prompt position of every row.
// Returns [rows x 1 x d] hidden states at each row's last prompt position.
HiddenState prefill(const Model& model, std::span<SequenceState> rows,
                    std::span<const std::vector<TokenId>> prompts);

struct StepOutput {
  TokenId token = 0;
  std::vector<float> probs;
  std::vector<float> hidden;
};

struct DecodeStepResult {
  std::vector<StepOutput> rows;
  KeptSet kept_set;
};

// One generation step for every row: inputs[r] is the newest token of row r
// and runs at that row's next position through kept_set(schedule, step).
DecodeStepResult decode_step(const Model& model, const DepthSchedule& schedule,
                             std::span<SequenceState> rows, std::size_t step,
                             std::span<const TokenId> inputs);

// Same, with an explicit layer set.
DecodeStepResult decode_step(const Model& model, const KeptSet& kept,
                             std::span<SequenceState> rows, std::span<const TokenId> inputs);

// Layers to run at generation step i.
using LayerPlan = std::function<KeptSet(std::size_t step)>;

LayerPlan plan_from(const DepthSchedule& schedule);

// Prefill followed by greedy decode steps. Prompts are processed in batches
// of params.batch_size sharing the global step index; a row stops at EOS,
// after max_new_tokens, or when it runs out of positions.
std::vector<GenTrace> generate(const Model& model, const LayerPlan& plan,
                               std::span<const std::vector<TokenId>> prompts,
                               const DecodeParams& params);
std::vector<GenTrace> generate(const Model& model, const DepthSchedule& schedule,
                               std::span<const std::vector<TokenId>> prompts,
                               const DecodeParams& params);

// Fraction of positions, up to the shorter trace, with equal tokens.
double agreement(const GenTrace& a, const GenTrace& b);
double agreement(std::span<const TokenId> a, std::span<const TokenId> b);

// One JSON object per line per step.
void write_trace_jsonl(std::ostream& out, std::span<const GenTrace> traces);
// sequence,tokens,avg_layers,total_flops_exact,total_flops_model,wall_ms
void write_trace_summary_csv(std::ostream& out, std::span<const GenTrace> traces);

}  // namespace d3
