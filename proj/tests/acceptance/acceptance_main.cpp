// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "d3/analysis.hpp"
#include "d3/engine.hpp"
#include "d3/flops.hpp"
#include "d3/schedule.hpp"
#include "oracle/brute_saturation.hpp"
#include "oracle/naive_transformer.hpp"

namespace {

using namespace d3;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void run(const char* name, double limit_s, const std::function<Outcome()>& check) {
  const auto start = Clock::now();
  Outcome out;
  try {
    out = check();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  bool ok = out.ok;
  std::string detail = out.detail;
  if (limit_s > 0 && secs >= limit_s) {
    ok = false;
    detail += " (over time limit)";
  }
  if (!ok) ++failures;
  std::printf("%s  %-34s %7.2fs  %s\n", ok ? "PASS" : "FAIL", name, secs, detail.c_str());
  std::fflush(stdout);
}

std::vector<std::vector<TokenId>> random_prompts(std::size_t n, std::size_t vocab, std::size_t lo,
                                                 std::size_t hi, std::mt19937_64& rng) {
  std::vector<std::vector<TokenId>> out(n);
  for (auto& p : out) {
    p.resize(std::uniform_int_distribution<std::size_t>(lo, hi)(rng));
    for (auto& t : p) t = std::uniform_int_distribution<TokenId>(0, vocab - 1)(rng);
  }
  return out;
}

std::string fmt(const char* f, double a, double b = 0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), f, a, b);
  return buf;
}

Outcome schedule_exactness() {
  using Big = boost::multiprecision::cpp_bin_float_50;
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0;
  for (int n = 0; n < 1000; ++n) {
    const std::size_t L = std::uniform_int_distribution<std::size_t>(1, 128)(rng);
    const double start = std::uniform_real_distribution<double>(0.0, 0.99)(rng);
    const double alpha = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
    const std::size_t tail = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, 3000)(rng);
    const auto s = make_d3(L, start, alpha, tail);
    const Big v = Big(L) * boost::multiprecision::pow(Big(alpha), static_cast<int>(i));
    std::size_t want = boost::multiprecision::floor(v).convert_to<unsigned long long>();
    want = std::max(want, std::min(L, s.start_id + tail));
    want = std::clamp<std::size_t>(want, 1, L);
    if (kept_count(s, i) != want) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + "/1000 mismatches"};
}

const ModelConfig kMid{64, 64, 8, 4, 256, 64, true};

Outcome full_depth_equivalence() {
  const Model m = make_random_model(kMid, 11);
  std::mt19937_64 rng(12);
  const auto prompts = random_prompts(100, 64, 1, 16, rng);
  DecodeParams params;
  params.max_new_tokens = 16;
  params.batch_size = 4;
  const auto d3 = generate(m, make_d3(8, 0.3, 1.0), prompts, params);
  const auto plain = generate(m, make_full(8), prompts, params);
  std::size_t diff = 0;
  for (std::size_t r = 0; r < prompts.size(); ++r) diff += d3[r].tokens() != plain[r].tokens();
  return {diff == 0, std::to_string(diff) + "/100 prompts differ"};
}

Outcome batch_invariance() {
  const Model m = make_random_model(kMid, 21);
  std::mt19937_64 rng(22);
  const auto prompts = random_prompts(8, 64, 1, 20, rng);
  std::size_t diff = 0;
  std::size_t runs = 0;
  for (const auto& s : {make_d3(8, 0.25, 0.8), make_linear_head_skip(8, 6), make_constant_tail_skip(8, 5)}) {
    DecodeParams params;
    params.max_new_tokens = 20;
    params.eos_token = 0;
    params.batch_size = 8;
    const auto batched = generate(m, s, prompts, params);
    params.batch_size = 1;
    for (std::size_t r = 0; r < prompts.size(); ++r) {
      const auto single = generate(m, s, std::span(prompts).subspan(r, 1), params).front();
      diff += batched[r].tokens() != single.tokens();
      ++runs;
    }
  }
  return {diff == 0, std::to_string(diff) + "/" + std::to_string(runs) + " rows differ"};
}

Outcome zero_miss_nesting() {
  std::mt19937_64 rng(31);
  auto uni = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::size_t misses = 0;
  std::size_t steps = 0;
  std::vector<Model> models;
  for (std::size_t L = 1; L <= 12; ++L) models.push_back(make_random_model({32, 16, L, 2, 32, 48, true}, 100 + L));
  for (int n = 0; n < 1000; ++n) {
    const Model& m = models[uni(0, models.size() - 1)];
    const std::size_t L = m.config.n_layers;
    DepthSchedule s;
    switch (n % 3) {
      case 0:
        s = make_d3(L, std::uniform_real_distribution<double>(0.0, 0.99)(rng),
                    std::uniform_real_distribution<double>(0.3, 1.0)(rng), uni(0, 2));
        break;
      case 1:
        s = make_linear_head_skip(L, uni(1, 20), 0, uni(1, L));
        break;
      default:
        s = make_constant_tail_skip(L, uni(1, L));
    }
    DecodeParams params;
    params.max_new_tokens = uni(1, 24);
    params.batch_size = uni(1, 3);
    params.fill_policy = FillPolicy::TensorCopy;
    const auto prompts = random_prompts(uni(1, 3), 32, 1, 16, rng);
    for (const auto& t : generate(m, s, prompts, params)) {
      misses += t.missing_events;
      steps += t.steps.size();
    }
  }
  return {misses == 0, std::to_string(misses) + " missing events over " + std::to_string(steps) + " steps"};
}

Outcome stepwise_parity() {
  const Model m = make_random_model(kMid, 41);
  std::mt19937_64 rng(42);
  std::vector<TokenId> seq(64);
  for (auto& t : seq) t = std::uniform_int_distribution<TokenId>(0, 63)(rng);
  SequenceState state(m, FillPolicy::Strict);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 64; ++n) {
    const auto h = state.advance(seq[n - 1], KeptSet::full(8));
    const auto ours = readout_logits(m, h);
    const auto ref = oracle::last_logits(m, std::vector<TokenId>(seq.begin(), seq.begin() + n));
    for (std::size_t j = 0; j < ours.size(); ++j) worst = std::max(worst, std::abs(ours[j] - ref[j]));
  }
  return {worst <= 1e-5, fmt("max |logit diff| %.3g over prefixes 1..64", worst)};
}

Outcome saturation_oracle() {
  const Model m = make_random_model({64, 32, 8, 4, 64, 64, true}, 51);
  std::mt19937_64 rng(52);
  std::vector<TokenId> tokens(64);
  for (auto& t : tokens) t = std::uniform_int_distribution<TokenId>(0, 63)(rng);
  const auto ours = saturation_depth(m, tokens);
  const auto brute = oracle::brute_saturation(m, tokens);
  std::size_t diff = 0;
  double mean = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    diff += ours[t].saturation_depth != brute[t].depth || ours[t].first_touch_depth != brute[t].first_touch ||
            ours[t].confidence != brute[t].confidence;
    mean += ours[t].saturation_depth;
  }
  return {diff == 0, std::to_string(diff) + "/64 positions differ, mean depth " + fmt("%.2f", mean / 64)};
}

Outcome saturation_sufficiency() {
  const Model m = make_random_model({64, 32, 8, 4, 64, 64, true}, 61);
  std::mt19937_64 rng(62);
  const auto prompts = random_prompts(50, 64, 2, 12, rng);
  DecodeParams params;
  params.max_new_tokens = 16;
  const auto full = generate(m, make_full(8), prompts, params);
  std::size_t diff = 0;
  double depth_sum = 0.0;
  for (std::size_t r = 0; r < prompts.size(); ++r) {
    auto seq = prompts[r];
    const auto gen = full[r].tokens();
    seq.insert(seq.end(), gen.begin(), gen.end());
    const auto sat = saturation_depth(m, seq);
    std::size_t depth = 1;
    // Positions whose prediction is a generated token.
    for (std::size_t i = 0; i < gen.size(); ++i)
      depth = std::max(depth, sat[prompts[r].size() - 1 + i].saturation_depth);
    depth_sum += depth;
    const auto cut = generate(m, make_constant_tail_skip(8, depth),
                              std::span(prompts).subspan(r, 1), params).front();
    diff += cut.tokens() != gen;
  }
  return {diff == 0, std::to_string(diff) + "/50 prompts differ, mean exit depth " + fmt("%.2f", depth_sum / 50)};
}

Outcome flops_counter() {
  const Model m = make_random_model({8, 4, 2, 1, 8, 16, true}, 71);
  DecodeParams params;
  params.max_new_tokens = 1;
  const auto t = generate(m, make_full(2), std::vector<std::vector<TokenId>>{{5}}, params).front();
  // Q, K, V, O: 4*4*4 = 64; attention over one entry: 2*1*4 = 8;
  // MLP: 2*4*8 = 64. Two layers.
  const std::uint64_t hand = 2 * (64 + 8 + 64);
  bool ok = t.steps.at(0).flops_exact == hand && hand == 272;
  std::string detail = "flops_exact " + std::to_string(t.steps[0].flops_exact) + " vs hand 272";

  // Linearity over every step of skipping runs.
  const Model big = make_random_model({32, 16, 8, 2, 48, 64, true}, 72);
  const double d = 16, dff = 48, c = 4 + 2 * dff / d;
  std::size_t checked = 0, bad = 0;
  params.max_new_tokens = 40;
  for (const auto& s : {make_d3(8, 0.25, 0.9), make_linear_head_skip(8, 10), make_constant_tail_skip(8, 3), make_full(8)}) {
    for (const auto& tr : generate(big, s, std::vector<std::vector<TokenId>>{{1, 2, 3}, {4}}, params)) {
      for (const auto& st : tr.steps) {
        const std::uint64_t per_layer = 4 * 16 * 16 + 2 * (st.position + 1) * 16 + 2 * 16 * 48;
        const double model = st.kept_count * c * d * (d + st.position + 1);
        bad += st.flops_exact != st.kept_count * per_layer || st.flops_model != model;
        ++checked;
      }
    }
  }
  ok = ok && bad == 0;
  detail += "; linearity " + std::to_string(checked - bad) + "/" + std::to_string(checked) + " steps";
  return {ok, detail};
}

Outcome ppl_formula() {
  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int n = 0; n < 1'000'000; ++n) {
    double p = u(rng);
    if (n % 4 == 0) p = std::ldexp(p, -static_cast<int>(rng() % 60));
    if (p <= 0.0) p = 1.0;
    const long double ref = 1.0L / static_cast<long double>(p);
    const long double rel = std::fabs((static_cast<long double>(token_ppl(p)) - ref) / ref);
    worst = std::max(worst, static_cast<double>(rel));
  }
  return {worst <= 1e-9, fmt("max relative error %.3g over 1e6 draws", worst)};
}

}  // namespace

int main() {
  run("schedule exactness", 1.0, schedule_exactness);
  run("full-depth equivalence", 60.0, full_depth_equivalence);
  run("batch invariance", 60.0, batch_invariance);
  run("zero-miss nesting", 120.0, zero_miss_nesting);
  run("stepwise/one-shot parity", 0, stepwise_parity);
  run("saturation oracle equivalence", 0, saturation_oracle);
  run("saturation sufficiency", 0, saturation_sufficiency);
  run("flops counter", 0, flops_counter);
  run("ppl formula", 0, ppl_formula);
  std::printf("%d failed\n", failures);
  return failures;
}
