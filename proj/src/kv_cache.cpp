#include "d3/kv_cache.hpp"

#include <algorithm>
#include <string>

#include "d3/error.hpp"

namespace d3 {

std::string_view to_string(FillPolicy policy) {
  switch (policy) {
    case FillPolicy::Strict: return "strict";
    case FillPolicy::TensorCopy: return "copy";
    case FillPolicy::Reproject: return "reproject";
  }
  return "?";
}

FillPolicy parse_fill_policy(std::string_view text) {
  if (text == "strict") return FillPolicy::Strict;
  if (text == "copy") return FillPolicy::TensorCopy;
  if (text == "reproject") return FillPolicy::Reproject;
  throw Error(ErrorCode::ConfigInvalid, "unknown fill policy '" + std::string(text) + "'");
}

ReprojectSource make_reproject_source(
    const Model& model,
    std::function<std::optional<std::span<const float>>(std::size_t, std::size_t)> hidden) {
  ReprojectSource source;
  source.hidden = std::move(hidden);
  source.project = [&model](std::size_t layer, std::size_t pos, std::span<const float> h,
                            std::span<float> key, std::span<float> value) {
    project_kv(model, layer, h, pos, key, value);
  };
  return source;
}

KVCache::KVCache(std::size_t n_layers, std::size_t max_positions, std::size_t width,
                 FillPolicy policy)
    : n_layers_(n_layers),
      max_positions_(max_positions),
      width_(width),
      policy_(policy),
      keys_(n_layers * max_positions * width, 0.0f),
      values_(n_layers * max_positions * width, 0.0f),
      slots_(n_layers * max_positions, Slot::Absent),
      fill_source_(n_layers * max_positions, -1),
      deepest_(max_positions, -1) {}

void KVCache::append(std::size_t layer, std::size_t pos, std::span<const float> key,
                     std::span<const float> value) {
  if (pos >= max_positions_)
    throw Error(ErrorCode::PositionOverflow,
                "pos " + std::to_string(pos) + " >= " + std::to_string(max_positions_));
  if (layer >= n_layers_)
    throw Error(ErrorCode::LayerOutOfRange, "cache layer " + std::to_string(layer));
  if (key.size() != width_ || value.size() != width_)
    throw Error(ErrorCode::ShapeMismatch, "cache entry width");
  const std::size_t idx = index(layer, pos);
  if (slots_[idx] == Slot::Real)
    throw Error(ErrorCode::DoubleWrite,
                "layer " + std::to_string(layer) + " pos " + std::to_string(pos));
  std::copy(key.begin(), key.end(), keys_.begin() + idx * width_);
  std::copy(value.begin(), value.end(), values_.begin() + idx * width_);
  slots_[idx] = Slot::Real;
  fill_source_[idx] = -1;
  deepest_[pos] = std::max(deepest_[pos], static_cast<int>(layer));
  written_positions_ = std::max(written_positions_, pos + 1);
}

void KVCache::fill(std::size_t layer, std::size_t pos, const ReprojectSource* source) {
  const std::size_t idx = index(layer, pos);
  const auto where = "layer " + std::to_string(layer) + " pos " + std::to_string(pos);
  switch (policy_) {
    case FillPolicy::Strict:
      throw Error(ErrorCode::MissingState, where);
    case FillPolicy::TensorCopy: {
      const int src = deepest_[pos];
      if (src < 0) throw Error(ErrorCode::MissingState, where + ": no computed layer to copy");
      const std::size_t from = index(static_cast<std::size_t>(src), pos);
      std::copy_n(keys_.begin() + from * width_, width_, keys_.begin() + idx * width_);
      std::copy_n(values_.begin() + from * width_, width_, values_.begin() + idx * width_);
      fill_source_[idx] = src;
      break;
    }
    case FillPolicy::Reproject: {
      if (source == nullptr || !source->hidden || !source->project)
        throw Error(ErrorCode::ReprojectStateUnavailable, where + ": no hidden-state source");
      const auto h = source->hidden(layer, pos);
      if (!h) throw Error(ErrorCode::ReprojectStateUnavailable, where);
      source->project(layer, pos, *h,
                      std::span<float>(keys_).subspan(idx * width_, width_),
                      std::span<float>(values_).subspan(idx * width_, width_));
      fill_source_[idx] = -1;
      break;
    }
  }
  slots_[idx] = Slot::Fill;
  ++missing_events_;
}

KVSpan KVCache::view(std::size_t layer, std::size_t upto_pos, const ReprojectSource* source) {
  if (layer >= n_layers_)
    throw Error(ErrorCode::LayerOutOfRange, "cache layer " + std::to_string(layer));
  if (upto_pos >= written_positions_)
    throw Error(ErrorCode::PositionOverflow,
                "view up to " + std::to_string(upto_pos) + " but only " +
                    std::to_string(written_positions_) + " positions written");
  for (std::size_t pos = 0; pos <= upto_pos; ++pos)
    if (slots_[index(layer, pos)] == Slot::Absent) fill(layer, pos, source);
  const std::size_t begin = index(layer, 0) * width_;
  const std::size_t n = (upto_pos + 1) * width_;
  return KVSpan{std::span<const float>(keys_).subspan(begin, n),
                std::span<const float>(values_).subspan(begin, n), upto_pos + 1};
}

bool KVCache::present(std::size_t layer, std::size_t pos) const {
  return slots_.at(index(layer, pos)) != Slot::Absent;
}

bool KVCache::is_fill(std::size_t layer, std::size_t pos) const {
  return slots_.at(index(layer, pos)) == Slot::Fill;
}

int KVCache::fill_source_layer(std::size_t layer, std::size_t pos) const {
  return fill_source_.at(index(layer, pos));
}

int KVCache::deepest_computed(std::size_t pos) const { return deepest_.at(pos); }

std::span<const float> KVCache::key(std::size_t layer, std::size_t pos) const {
  return std::span<const float>(keys_).subspan(index(layer, pos) * width_, width_);
}

std::span<const float> KVCache::value(std::size_t layer, std::size_t pos) const {
  return std::span<const float>(values_).subspan(index(layer, pos) * width_, width_);
}

void KVCache::dump_csv(std::ostream& out) const {
  out << "layer,pos,present,is_fill,fill_source_layer\n";
  for (std::size_t l = 0; l < n_layers_; ++l)
    for (std::size_t p = 0; p < written_positions_; ++p) {
      const std::size_t idx = index(l, p);
      out << l << ',' << p << ',' << (slots_[idx] != Slot::Absent ? 1 : 0) << ','
          << (slots_[idx] == Slot::Fill ? 1 : 0) << ',' << fill_source_[idx] << '\n';
    }
}

}  // namespace d3
