#include "d3/schedule.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>

#include "d3/error.hpp"

namespace d3 {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::FullDepth: return "full";
    case ScheduleKind::D3PowerLaw: return "d3";
    case ScheduleKind::LinearHeadSkip: return "linear";
    case ScheduleKind::ConstantTailSkip: return "tail";
  }
  return "?";
}

KeptSet::KeptSet(std::size_t n_layers, std::size_t head_end, std::size_t tail_begin)
    : n_layers_(n_layers), head_end_(head_end), tail_begin_(tail_begin) {
  if (head_end > tail_begin || tail_begin > n_layers)
    throw Error(ErrorCode::InvalidSchedule, "kept set needs head_end <= tail_begin <= L");
  if (head_end_ == tail_begin_) head_end_ = tail_begin_ = n_layers_;
}

bool KeptSet::is_subset_of(const KeptSet& other) const {
  for (std::size_t l = 0; l < n_layers_; ++l)
    if (contains(l) && !other.contains(l)) return false;
  return true;
}

std::vector<std::size_t> KeptSet::layers() const {
  std::vector<std::size_t> out;
  out.reserve(size());
  for (std::size_t l = 0; l < head_end_; ++l) out.push_back(l);
  for (std::size_t l = tail_begin_; l < n_layers_; ++l) out.push_back(l);
  return out;
}

namespace {

void require_layers(std::size_t n_layers) {
  if (n_layers == 0) throw Error(ErrorCode::InvalidSchedule, "L must be >= 1");
}

// floor(start_frac * L), tolerant of products such as 0.29 * 100 landing
// a hair below the intended integer.
std::size_t start_index(double start_frac, std::size_t n_layers) {
  const double v = start_frac * static_cast<double>(n_layers);
  double id = std::floor(v);
  if (v - id > 1.0 - 1e-9) id += 1.0;
  return std::min(static_cast<std::size_t>(id), n_layers - 1);
}

}  // namespace

DepthSchedule make_full(std::size_t n_layers) {
  require_layers(n_layers);
  DepthSchedule s;
  s.kind = ScheduleKind::FullDepth;
  s.n_layers = n_layers;
  return s;
}

DepthSchedule make_d3(std::size_t n_layers, double start_frac, double alpha, std::size_t tail_min) {
  require_layers(n_layers);
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in (0, 1], got " + std::to_string(alpha));
  if (!(start_frac >= 0.0 && start_frac < 1.0))
    throw Error(ErrorCode::StartOutOfRange,
                "start must lie in [0, 1), got " + std::to_string(start_frac));
  DepthSchedule s;
  s.kind = ScheduleKind::D3PowerLaw;
  s.n_layers = n_layers;
  s.start_frac = start_frac;
  s.start_id = start_index(start_frac, n_layers);
  s.alpha = alpha;
  s.tail_min = tail_min;
  return s;
}

DepthSchedule make_linear_head_skip(std::size_t n_layers, std::size_t ramp_length,
                                    std::size_t upper, std::size_t lower) {
  require_layers(n_layers);
  if (upper == 0) upper = n_layers;
  if (lower == 0) lower = (n_layers + 1) / 2;
  if (ramp_length == 0) throw Error(ErrorCode::InvalidSchedule, "ramp must be >= 1");
  if (!(lower >= 1 && lower <= upper && upper <= n_layers))
    throw Error(ErrorCode::InvalidSchedule, "linear schedule needs 1 <= lower <= upper <= L");
  DepthSchedule s;
  s.kind = ScheduleKind::LinearHeadSkip;
  s.n_layers = n_layers;
  s.upper = upper;
  s.lower = lower;
  s.ramp_length = ramp_length;
  return s;
}

DepthSchedule make_constant_tail_skip(std::size_t n_layers, std::size_t exit_layer) {
  require_layers(n_layers);
  if (exit_layer < 1 || exit_layer > n_layers)
    throw Error(ErrorCode::InvalidSchedule, "exit_layer must lie in [1, L]");
  DepthSchedule s;
  s.kind = ScheduleKind::ConstantTailSkip;
  s.n_layers = n_layers;
  s.exit_layer = exit_layer;
  return s;
}

std::size_t power_law_budget(std::size_t n_layers, double alpha, std::size_t step) {
  if (step == 0 || alpha == 1.0) return n_layers;
  const long double v = static_cast<long double>(n_layers) *
                        std::pow(static_cast<long double>(alpha), static_cast<long double>(step));
  return static_cast<std::size_t>(std::floor(v));
}

std::size_t kept_count(const DepthSchedule& s, std::size_t step) {
  const std::size_t L = s.n_layers;
  std::size_t k = L;
  switch (s.kind) {
    case ScheduleKind::FullDepth:
      k = L;
      break;
    case ScheduleKind::D3PowerLaw: {
      const std::size_t floor_count = std::min(L, s.start_id + s.tail_min);
      k = std::max(power_law_budget(L, s.alpha, step), floor_count);
      break;
    }
    case ScheduleKind::LinearHeadSkip: {
      const std::size_t progressed = std::min(step, s.ramp_length);
      k = s.upper - (s.upper - s.lower) * progressed / s.ramp_length;
      break;
    }
    case ScheduleKind::ConstantTailSkip:
      k = s.exit_layer;
      break;
  }
  return std::clamp<std::size_t>(k, 1, L);
}

KeptSet kept_set(const DepthSchedule& s, std::size_t step) {
  const std::size_t L = s.n_layers;
  const std::size_t k = kept_count(s, step);
  switch (s.kind) {
    case ScheduleKind::FullDepth:
      return KeptSet::full(L);
    case ScheduleKind::D3PowerLaw:
      return KeptSet(L, s.start_id, s.start_id + (L - k));
    case ScheduleKind::LinearHeadSkip:
      return KeptSet(L, 0, L - k);
    case ScheduleKind::ConstantTailSkip:
      return KeptSet(L, k, L);
  }
  return KeptSet::full(L);
}

std::vector<KeptSet> schedule_table(const DepthSchedule& s, std::size_t max_steps) {
  std::vector<KeptSet> table;
  table.reserve(max_steps);
  for (std::size_t i = 0; i < max_steps; ++i) table.push_back(kept_set(s, i));
  return table;
}

std::string serialize_schedule(const DepthSchedule& s) {
  std::string out = "kind=" + std::string(to_string(s.kind)) + ",L=" + std::to_string(s.n_layers);
  char buf[64];
  switch (s.kind) {
    case ScheduleKind::FullDepth:
      break;
    case ScheduleKind::D3PowerLaw:
      std::snprintf(buf, sizeof(buf), ",start=%.17g", s.start_frac);
      out += buf;
      std::snprintf(buf, sizeof(buf), ",alpha=%.17g", s.alpha);
      out += buf;
      out += ",tail_min=" + std::to_string(s.tail_min);
      break;
    case ScheduleKind::LinearHeadSkip:
      out += ",upper=" + std::to_string(s.upper) + ",lower=" + std::to_string(s.lower) +
             ",ramp=" + std::to_string(s.ramp_length);
      break;
    case ScheduleKind::ConstantTailSkip:
      out += ",exit_layer=" + std::to_string(s.exit_layer);
      break;
  }
  return out;
}

namespace {

bool is_separator(char c) { return c == ',' || c == ';' || c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

template <typename T>
T parse_number(const std::map<std::string, std::string, std::less<>>& kv, std::string_view key) {
  const auto it = kv.find(key);
  const std::string& text = it->second;
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorCode::InvalidSchedule, "bad value for " + std::string(key) + ": " + text);
  return value;
}

}  // namespace

DepthSchedule parse_schedule(std::string_view text, std::size_t default_layers) {
  static constexpr std::string_view kKeys[] = {"kind",  "L",     "start", "alpha",     "tail_min",
                                               "upper", "lower", "ramp",  "exit_layer"};
  std::map<std::string, std::string, std::less<>> kv;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_separator(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_separator(text[j])) ++j;
    if (j > i) {
      const std::string_view entry = text.substr(i, j - i);
      const auto eq = entry.find('=');
      if (eq == std::string_view::npos || eq == 0)
        throw Error(ErrorCode::InvalidSchedule, "expected key=value, got '" + std::string(entry) + "'");
      std::string key(entry.substr(0, eq));
      if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
        throw Error(ErrorCode::InvalidSchedule, "unknown key '" + key + "'");
      kv[key] = std::string(entry.substr(eq + 1));
    }
    i = j;
  }

  auto has = [&](std::string_view key) { return kv.find(key) != kv.end(); };
  auto require = [&](std::string_view key) {
    if (!has(key)) throw Error(ErrorCode::InvalidSchedule, "missing key '" + std::string(key) + "'");
  };
  require("kind");
  std::size_t L = default_layers;
  if (has("L")) L = parse_number<std::size_t>(kv, "L");
  const std::string& kind = kv.find("kind")->second;

  if (kind == "full" || kind == "FullDepth") return make_full(L);
  if (kind == "d3" || kind == "D3PowerLaw") {
    require("start");
    require("alpha");
    const std::size_t tail_min = has("tail_min") ? parse_number<std::size_t>(kv, "tail_min") : 1;
    return make_d3(L, parse_number<double>(kv, "start"), parse_number<double>(kv, "alpha"), tail_min);
  }
  if (kind == "linear" || kind == "LinearHeadSkip") {
    require("ramp");
    const std::size_t upper = has("upper") ? parse_number<std::size_t>(kv, "upper") : 0;
    const std::size_t lower = has("lower") ? parse_number<std::size_t>(kv, "lower") : 0;
    return make_linear_head_skip(L, parse_number<std::size_t>(kv, "ramp"), upper, lower);
  }
  if (kind == "tail" || kind == "ConstantTailSkip") {
    require("exit_layer");
    return make_constant_tail_skip(L, parse_number<std::size_t>(kv, "exit_layer"));
  }
  throw Error(ErrorCode::InvalidSchedule, "unknown kind '" + kind + "'");
}

}  // namespace d3
