#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "d3/analysis.hpp"
#include "d3/error.hpp"
#include "oracle/brute_saturation.hpp"
#include "oracle/naive_transformer.hpp"
#include "test_util.hpp"

namespace d3 {
namespace {

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = std::uniform_int_distribution<TokenId>(0, vocab - 1)(rng);
  return out;
}

TEST(TokenPpl, Examples) {
  EXPECT_EQ(token_ppl(1.0), 1.0);
  EXPECT_EQ(token_ppl(0.5), 2.0);
  EXPECT_EQ(token_ppl(0.25), 4.0);
  EXPECT_NEAR(token_ppl(1e-300), 1e300, 1e285);
  expect_error(ErrorCode::NonPositiveProbability, [] { token_ppl(0.0); });
  expect_error(ErrorCode::NonPositiveProbability, [] { token_ppl(-0.1); });
  expect_error(ErrorCode::NonPositiveProbability, [] { token_ppl(std::nan("")); });
}

TEST(Saturation, SingleLayerIsDepthOne) {
  const Model m = make_random_model({16, 8, 1, 2, 16, 32, true}, 1);
  const auto recs = saturation_depth(m, random_tokens(10, 16, 2));
  ASSERT_EQ(recs.size(), 10u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.saturation_depth, 1u);
    EXPECT_EQ(r.first_touch_depth, 1u);
  }
}

TEST(Saturation, MatchesBruteForceScan) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const Model m = make_random_model({24, 16, 8, 2, 32, 32, true}, seed);
    const auto tokens = random_tokens(16, 24, seed + 100);
    const auto ours = saturation_depth(m, tokens);
    const auto brute = oracle::brute_saturation(m, tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      EXPECT_EQ(ours[t].position, t);
      EXPECT_EQ(ours[t].saturation_depth, brute[t].depth) << "t=" << t;
      EXPECT_EQ(ours[t].first_touch_depth, brute[t].first_touch) << "t=" << t;
      EXPECT_EQ(ours[t].confidence, brute[t].confidence) << "t=" << t;
      EXPECT_LE(ours[t].first_touch_depth, ours[t].saturation_depth);
      EXPECT_GE(ours[t].saturation_depth, 1u);
      EXPECT_LE(ours[t].saturation_depth, 8u);
    }
  }
}

TEST(Saturation, EmptyInput) {
  const Model m = make_random_model({16, 8, 1, 2, 16, 32, true}, 1);
  expect_error(ErrorCode::EmptyPrompt, [&] { saturation_depth(m, std::vector<TokenId>{}); });
}

TEST(Saturation, Summary) {
  const std::vector<SaturationRecord> recs = {{0, 1, 0.5, 1}, {1, 3, 0.7, 2}, {2, 2, 0.9, 1}, {3, 4, 0.3, 4}};
  const auto s = summarize_saturation(recs, 4);
  EXPECT_DOUBLE_EQ(s.mean_depth, 2.5);
  EXPECT_DOUBLE_EQ(s.mean_confidence, 0.6);
  EXPECT_EQ(s.fraction_saturated, (std::vector<double>{0.25, 0.5, 0.75, 1.0}));
}

TEST(Flow, CosineExamples) {
  const std::vector<float> a = {1, 2, 3};
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
  const std::vector<float> x = {1, 0}, y = {0, 5};
  EXPECT_EQ(cosine_similarity(x, y), 0.0);
  const std::vector<float> neg = {-2, -4, -6};
  EXPECT_NEAR(cosine_similarity(a, neg), -1.0, 1e-12);
  const std::vector<float> zero = {0, 0, 0};
  EXPECT_TRUE(std::isnan(cosine_similarity(a, zero)));
  EXPECT_DOUBLE_EQ(euclidean_distance(x, y), std::sqrt(26.0));
}

TEST(Flow, HiddenStreamMatchesIndependentRecompute) {
  const Model m = make_random_model({24, 16, 5, 4, 32, 32, true}, 6);
  const auto tokens = random_tokens(12, 24, 7);
  const auto recs = layer_flow(m, tokens);
  ASSERT_EQ(recs.size(), 4u * 3u);
  const auto h = oracle::run_layers(m, tokens, {0, 1, 2, 3, 4});
  for (const auto& r : recs) {
    ASSERT_TRUE(r.cosine.has_value());
    EXPECT_GE(*r.cosine, -1.0 - 1e-6);
    EXPECT_LE(*r.cosine, 1.0 + 1e-6);
    if (r.stream != FlowStream::Hidden) continue;
    double cos = 0.0, euc = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const auto& a = h[r.layer][t];
      const auto& b = h[r.layer + 1][t];
      double dot = 0, na = 0, nb = 0, dd = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dd += (a[i] - b[i]) * (a[i] - b[i]);
      }
      cos += dot / std::sqrt(na * nb);
      euc += std::sqrt(dd);
    }
    EXPECT_NEAR(*r.cosine, cos / tokens.size(), 1e-5);
    EXPECT_NEAR(r.euclidean, euc / tokens.size(), 1e-4);
  }
}

TEST(Flow, ZeroModelHasUndefinedCosineForBranches) {
  Model m = make_zero_model({8, 4, 3, 1, 8, 8, true});
  for (std::size_t i = 0; i < m.token_embedding.size(); ++i) m.token_embedding[i] = 1.0f + i;
  const auto recs = layer_flow(m, std::vector<TokenId>{1, 2});
  for (const auto& r : recs) {
    if (r.stream == FlowStream::Hidden) {
      ASSERT_TRUE(r.cosine);
      EXPECT_NEAR(*r.cosine, 1.0, 1e-12);
      EXPECT_EQ(r.euclidean, 0.0);
    } else {
      EXPECT_FALSE(r.cosine);
      EXPECT_EQ(r.zero_norm_positions, 2u);
    }
  }
  std::ostringstream out;
  write_flow_csv(out, recs, 100);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "checkpoint_step,layer_pair,stream,cosine,euclidean");
  EXPECT_NE(out.str().find("100,0-1,mlp,nan,0"), std::string::npos) << out.str();
}

TEST(Flops, HandCountedFullDepthStep) {
  // Per layer: Q,K,V,O 4*d*d = 64, scores and weighted sum 2*1*d = 8,
  // MLP 2*d*dff = 64. Two layers: 272.
  const Model m = make_random_model({8, 4, 2, 1, 8, 8, true}, 1);
  EXPECT_EQ(exact_layer_macs(m.config, 0), 136u);
  DecodeParams params;
  params.max_new_tokens = 1;
  const auto t = generate(m, make_full(2), std::vector<std::vector<TokenId>>{{3}}, params).front();
  EXPECT_EQ(t.steps[0].flops_exact, 272u);
  EXPECT_EQ(t.prefill_flops_exact, 0u);
}

TEST(Flops, ModelLinearInKeptCount) {
  const auto fm = FlopsModel::from({8, 4, 2, 1, 8, 8, true});
  EXPECT_DOUBLE_EQ(fm.constant(), 8.0);
  EXPECT_EQ(flops_step(fm, 5, 0), 0.0);
  for (std::size_t k = 1; k < 20; ++k) {
    EXPECT_DOUBLE_EQ(flops_step(fm, 5, 2 * k), 2.0 * flops_step(fm, 5, k));
    EXPECT_DOUBLE_EQ(flops_step(fm, 5, k), k * 8.0 * 4.0 * (4.0 + 6.0));
  }
}

TEST(Flops, ExactLinearAcrossStepsOfSkippingRun) {
  const Model m = make_random_model({16, 8, 6, 2, 16, 64, true}, 2);
  DecodeParams params;
  params.max_new_tokens = 30;
  for (const auto& s : {make_d3(6, 0.3, 0.8), make_linear_head_skip(6, 5), make_constant_tail_skip(6, 2)}) {
    const auto t = generate(m, s, std::vector<std::vector<TokenId>>{{1, 2, 3, 4}}, params).front();
    for (const auto& st : t.steps)
      EXPECT_EQ(st.flops_exact, st.kept_count * exact_layer_macs(m.config, st.position));
  }
}

TEST(Metrics, AvgLayersAndSpeedup) {
  GenTrace t;
  StepRecord a, b;
  a.kept_count = 32;
  a.flops_exact = 320;
  a.flops_model = 320;
  b.kept_count = 16;
  b.flops_exact = 160;
  b.flops_model = 160;
  t.steps = {a, b};
  EXPECT_EQ(avg_layers(t), 24.0);
  const auto self = speedup(std::span(&t, 1), std::span(&t, 1));
  EXPECT_EQ(self.exact, 1.0);
  EXPECT_EQ(self.model, 1.0);
  GenTrace full = t;
  full.steps[1] = a;
  const auto s = speedup(std::span(&t, 1), std::span(&full, 1));
  EXPECT_DOUBLE_EQ(s.exact, 640.0 / 480.0);
  GenTrace empty;
  expect_error(ErrorCode::EmptyTrace, [&] { avg_layers(empty); });
}

TEST(Metrics, FullDepthTraceOnLargeModel) {
  const Model m = make_random_model({16, 8, 32, 2, 16, 32, true}, 3);
  DecodeParams params;
  params.max_new_tokens = 4;
  const auto t = generate(m, make_full(32), std::vector<std::vector<TokenId>>{{1, 2}}, params);
  EXPECT_EQ(avg_layers(t), 32.0);
  EXPECT_EQ(speedup(t, t).exact, 1.0);
}

TEST(ErrorProp, ControlAndLateStartAgreeFully) {
  const Model m = make_random_model({16, 8, 4, 2, 16, 48, true}, 4);
  std::vector<std::vector<TokenId>> prompts;
  for (std::uint64_t s = 0; s < 5; ++s) prompts.push_back(random_tokens(4, 16, 50 + s));
  DecodeParams params;
  params.max_new_tokens = 8;
  const std::vector<std::size_t> t0 = {0, 3, 8, 20};
  const std::vector<std::size_t> ks = {0, 1, 3};
  const auto pts = error_prop_run(m, prompts, t0, ks, params);
  ASSERT_EQ(pts.size(), 12u);
  for (const auto& p : pts) {
    EXPECT_GE(p.agreement, 0.0);
    EXPECT_LE(p.agreement, 1.0);
    if (p.k == 0 || p.t0 >= 8) {
      EXPECT_EQ(p.agreement, 1.0);
      EXPECT_EQ(p.metric, 1.0);
    }
  }
  expect_error(ErrorCode::ConfigInvalid, [&] {
    const std::vector<std::size_t> bad = {4};
    error_prop_run(m, prompts, t0, bad, params);
  });
  std::ostringstream out;
  write_error_prop_csv(out, pts);
  EXPECT_EQ(out.str().substr(0, 19), "t0,k,agreement,metr");
}

TEST(ErrorProp, ReferencesDriveMetric) {
  const Model m = make_random_model({16, 8, 4, 2, 16, 48, true}, 4);
  const std::vector<std::vector<TokenId>> prompts = {{1, 2, 3}};
  DecodeParams params;
  params.max_new_tokens = 4;
  const std::vector<std::vector<TokenId>> refs = {{99, 99, 99, 99}};
  const std::vector<std::size_t> t0 = {0};
  const std::vector<std::size_t> ks = {0};
  const auto pts = error_prop_run(m, prompts, t0, ks, params, std::span<const std::vector<TokenId>>(refs));
  EXPECT_EQ(pts[0].agreement, 1.0);
  EXPECT_EQ(pts[0].metric, 0.0);
}

TEST(SaturationCsv, Format) {
  const std::vector<SaturationRecord> recs = {{0, 2, 0.5, 1}};
  std::ostringstream out;
  write_saturation_csv(out, recs);
  EXPECT_EQ(out.str(), "token_pos,depth,confidence,first_touch_depth\n0,2,0.5,1\n");
}

}  // namespace
}  // namespace d3
