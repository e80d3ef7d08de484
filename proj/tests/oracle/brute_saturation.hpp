#pragma once

// Saturation depth by brute force: the model cut to its first k layers is
// run from scratch for every k, and each candidate depth is checked against
// every deeper readout directly.

#include <cstddef>
#include <vector>

#include "d3/model.hpp"
#include "d3/transformer.hpp"

namespace d3::oracle {

struct BruteSaturation {
  std::size_t depth = 0;
  double confidence = 0.0;
  std::size_t first_touch = 0;
};

inline Model truncated(const Model& m, std::size_t k) {
  Model out = m;
  out.layers.resize(k);
  out.config.n_layers = k;
  return out;
}

inline std::vector<BruteSaturation> brute_saturation(const Model& m, const std::vector<TokenId>& tokens) {
  const std::size_t L = m.config.n_layers;
  // top[k-1][t], prob[k-1][t]
  std::vector<std::vector<std::size_t>> top(L);
  std::vector<std::vector<double>> prob(L);
  for (std::size_t k = 1; k <= L; ++k) {
    const Model cut = truncated(m, k);
    const auto s = forward_full(cut, tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto p = readout(cut, s.hidden.back().at(0, t));
      std::size_t best = 0;
      for (std::size_t j = 1; j < p.size(); ++j)
        if (p[j] > p[best]) best = j;
      top[k - 1].push_back(best);
      prob[k - 1].push_back(p[best]);
    }
  }
  std::vector<BruteSaturation> out(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t final_top = top[L - 1][t];
    for (std::size_t k = 1; k <= L; ++k) {
      bool all = true;
      for (std::size_t j = k; j <= L; ++j) all = all && top[j - 1][t] == final_top;
      if (all) {
        out[t].depth = k;
        out[t].confidence = prob[k - 1][t];
        break;
      }
    }
    for (std::size_t k = 1; k <= L; ++k)
      if (top[k - 1][t] == final_top) {
        out[t].first_touch = k;
        break;
      }
  }
  return out;
}

}  // namespace d3::oracle
