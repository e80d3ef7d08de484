#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace d3 {

enum class ScheduleKind { FullDepth, D3PowerLaw, LinearHeadSkip, ConstantTailSkip };

std::string_view to_string(ScheduleKind kind);

// Layers executed at one generation step: [0, head_end) U [tail_begin, n_layers).
// A set with no dropped block is stored as head_end == tail_begin == n_layers.
class KeptSet {
 public:
  KeptSet() = default;
  KeptSet(std::size_t n_layers, std::size_t head_end, std::size_t tail_begin);

  static KeptSet full(std::size_t n_layers) { return {n_layers, n_layers, n_layers}; }

  std::size_t n_layers() const { return n_layers_; }
  std::size_t head_end() const { return head_end_; }
  std::size_t tail_begin() const { return tail_begin_; }

  std::size_t size() const { return head_end_ + (n_layers_ - tail_begin_); }
  bool contains(std::size_t layer) const {
    return layer < head_end_ || (layer >= tail_begin_ && layer < n_layers_);
  }
  bool is_subset_of(const KeptSet& other) const;

  // Ascending kept layer ids.
  std::vector<std::size_t> layers() const;

  bool operator==(const KeptSet&) const = default;

 private:
  std::size_t n_layers_ = 0;
  std::size_t head_end_ = 0;
  std::size_t tail_begin_ = 0;
};

// Maps a generation step i (0 = first generated token) to the layers run
// for it. Immutable value type; construct through the make_* functions.
struct DepthSchedule {
  ScheduleKind kind = ScheduleKind::FullDepth;
  std::size_t n_layers = 0;
  double start_frac = 0.0;
  std::size_t start_id = 0;
  double alpha = 1.0;
  std::size_t tail_min = 1;
  // LinearHeadSkip
  std::size_t upper = 0;
  std::size_t lower = 0;
  std::size_t ramp_length = 1;
  // ConstantTailSkip
  std::size_t exit_layer = 0;

  bool operator==(const DepthSchedule&) const = default;
};

DepthSchedule make_full(std::size_t n_layers);

// start_id = floor(start_frac * L). Throws AlphaOutOfRange / StartOutOfRange.
DepthSchedule make_d3(std::size_t n_layers, double start_frac, double alpha,
                      std::size_t tail_min = 1);

// Keeps the top layers, budget falling linearly from `upper` to `lower`
// over `ramp_length` steps. upper = 0 and lower = 0 select L and ceil(L/2).
DepthSchedule make_linear_head_skip(std::size_t n_layers, std::size_t ramp_length,
                                    std::size_t upper = 0, std::size_t lower = 0);

// Keeps the bottom `exit_layer` layers at every step.
DepthSchedule make_constant_tail_skip(std::size_t n_layers, std::size_t exit_layer);

// floor(L * alpha^i) evaluated in extended precision.
std::size_t power_law_budget(std::size_t n_layers, double alpha, std::size_t step);

std::size_t kept_count(const DepthSchedule& s, std::size_t step);
KeptSet kept_set(const DepthSchedule& s, std::size_t step);
std::vector<KeptSet> schedule_table(const DepthSchedule& s, std::size_t max_steps);

// Flat "key=value" text, entries separated by commas, whitespace or newlines.
// Keys: kind, L, start, alpha, tail_min, upper, lower, ramp, exit_layer.
// kind is one of full, d3, linear, tail.
std::string serialize_schedule(const DepthSchedule& s);
// `default_layers` fills in L when the text omits it.
DepthSchedule parse_schedule(std::string_view text, std::size_t default_layers = 0);

}  // namespace d3
