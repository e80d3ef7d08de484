#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "d3/transformer.hpp"

namespace d3 {

// How a view serves a (layer, position) entry that was never computed
// because that position skipped the layer.
enum class FillPolicy {
  Strict,      // fail with MissingState
  TensorCopy,  // copy K/V from the deepest layer computed at that position
  Reproject,   // project the propagated hidden state with the layer's own Wk/Wv
};

std::string_view to_string(FillPolicy policy);
FillPolicy parse_fill_policy(std::string_view text);

// Supplies what a Reproject fill needs: the residual stream that flowed
// past the skipped layer at a position, and the layer's K/V projection.
struct ReprojectSource {
  std::function<std::optional<std::span<const float>>(std::size_t layer, std::size_t pos)> hidden;
  std::function<void(std::size_t layer, std::size_t pos, std::span<const float> h,
                     std::span<float> key, std::span<float> value)>
      project;
};

// Builds a source whose projection is project_kv on `model`.
ReprojectSource make_reproject_source(
    const Model& model,
    std::function<std::optional<std::span<const float>>(std::size_t, std::size_t)> hidden);

// Key/value store for a single sequence, addressed by (layer, position).
// Not thread-safe; one cache per generation stream.
class KVCache {
 public:
  KVCache(std::size_t n_layers, std::size_t max_positions, std::size_t width,
          FillPolicy policy = FillPolicy::TensorCopy);

  std::size_t n_layers() const { return n_layers_; }
  std::size_t max_positions() const { return max_positions_; }
  std::size_t width() const { return width_; }
  FillPolicy fill_policy() const { return policy_; }

  // Stores a real entry. Throws PositionOverflow, LayerOutOfRange,
  // ShapeMismatch, or DoubleWrite if (layer, pos) already holds a real write.
  void append(std::size_t layer, std::size_t pos, std::span<const float> key,
              std::span<const float> value);

  // Entries for positions [0, upto_pos] at `layer`. Missing entries are
  // filled according to the policy and memoised as fills.
  KVSpan view(std::size_t layer, std::size_t upto_pos, const ReprojectSource* source = nullptr);

  bool present(std::size_t layer, std::size_t pos) const;
  bool is_fill(std::size_t layer, std::size_t pos) const;
  // Layer the copied tensor came from; -1 for real entries and reprojections.
  int fill_source_layer(std::size_t layer, std::size_t pos) const;
  // Highest layer holding a real entry at `pos`, or -1.
  int deepest_computed(std::size_t pos) const;
  // One past the highest position with any real entry.
  std::size_t written_positions() const { return written_positions_; }
  std::size_t missing_events() const { return missing_events_; }

  std::span<const float> key(std::size_t layer, std::size_t pos) const;
  std::span<const float> value(std::size_t layer, std::size_t pos) const;

  // Debug dump: layer,pos,present,is_fill,fill_source_layer
  void dump_csv(std::ostream& out) const;

 private:
  enum class Slot : std::uint8_t { Absent, Real, Fill };

  std::size_t index(std::size_t layer, std::size_t pos) const { return layer * max_positions_ + pos; }
  void fill(std::size_t layer, std::size_t pos, const ReprojectSource* source);

  std::size_t n_layers_;
  std::size_t max_positions_;
  std::size_t width_;
  FillPolicy policy_;
  std::vector<float> keys_;
  std::vector<float> values_;
  std::vector<Slot> slots_;
  std::vector<int> fill_source_;
  std::vector<int> deepest_;
  std::size_t written_positions_ = 0;
  std::size_t missing_events_ = 0;
};

}  // namespace d3
