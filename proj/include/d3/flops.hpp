#pragma once

#include <cstddef>
#include <cstdint>

#include "d3/model.hpp"

namespace d3 {

// Per-layer cost c * d * (d + S) for a decoder block attending over S
// positions. The constant folds this architecture's projections into the
// template: 4d^2 (Q, K, V, O) + 2*d*d_ff (MLP) = c * d^2, so
// c = 4 + 2 * d_ff / d. The attention term therefore differs from the exact
// count (2*d*S); both numbers are always reported side by side.
struct FlopsModel {
  std::size_t d_model = 0;
  std::size_t d_ff = 0;

  static FlopsModel from(const ModelConfig& c) { return {c.d_model, c.d_ff}; }

  double constant() const {
    return 4.0 + 2.0 * static_cast<double>(d_ff) / static_cast<double>(d_model);
  }

  // One layer at 0-based `position` (attends over position + 1 entries).
  double layer_cost(std::size_t position) const {
    const double d = static_cast<double>(d_model);
    return constant() * d * (d + static_cast<double>(position + 1));
  }
};

// kept_count * c * d * (d + position + 1)
double flops_step(const FlopsModel& fm, std::size_t position, std::size_t kept_count);

// Multiply-adds the engine's kernels perform for one decoder layer at
// `position`: Q/K/V/O projections, attention scores and weighted sum, and
// the two MLP matrices. Readout is not included.
std::uint64_t exact_layer_macs(const ModelConfig& c, std::size_t position);

}  // namespace d3
