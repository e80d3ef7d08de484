#include <gtest/gtest.h>

#include <cstring>
#include <numeric>
#include <sstream>

#include "d3/error.hpp"
#include "d3/kv_cache.hpp"
#include "d3/model.hpp"
#include "test_util.hpp"

namespace d3 {
namespace {

std::vector<float> ramp(std::size_t n, float start) {
  std::vector<float> v(n);
  std::iota(v.begin(), v.end(), start);
  return v;
}

TEST(KVCache, AppendThenReadBitExact) {
  KVCache c(2, 4, 3);
  const std::vector<float> k = {1.5f, -0.0f, 3.25e-7f};
  const std::vector<float> v = {-2.0f, 1e30f, 0.1f};
  c.append(0, 0, k, v);
  const auto view = c.view(0, 0);
  EXPECT_EQ(view.count, 1u);
  EXPECT_EQ(std::memcmp(view.keys.data(), k.data(), 12), 0);
  EXPECT_EQ(std::memcmp(view.values.data(), v.data(), 12), 0);
  EXPECT_TRUE(c.present(0, 0));
  EXPECT_FALSE(c.is_fill(0, 0));
  EXPECT_EQ(c.deepest_computed(0), 0);
  EXPECT_EQ(c.missing_events(), 0u);
}

TEST(KVCache, AppendErrors) {
  KVCache c(2, 4, 3);
  const auto k = ramp(3, 0), v = ramp(3, 5);
  expect_error(ErrorCode::PositionOverflow, [&] { c.append(0, 4, k, v); });
  expect_error(ErrorCode::LayerOutOfRange, [&] { c.append(2, 0, k, v); });
  expect_error(ErrorCode::ShapeMismatch, [&] { c.append(0, 0, ramp(2, 0), v); });
  c.append(1, 2, k, v);
  expect_error(ErrorCode::DoubleWrite, [&] { c.append(1, 2, k, v); });
}

TEST(KVCache, FullViewIsUnchanged) {
  KVCache c(3, 5, 2, FillPolicy::Strict);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t p = 0; p < 5; ++p) c.append(l, p, ramp(2, 10.0f * l + p), ramp(2, -1.0f * p));
  for (std::size_t l = 0; l < 3; ++l) {
    const auto view = c.view(l, 4);
    for (std::size_t p = 0; p < 5; ++p) {
      EXPECT_EQ(view.keys[p * 2], 10.0f * l + p);
      EXPECT_EQ(view.values[p * 2 + 1], -1.0f * p + 1.0f);
    }
  }
  EXPECT_EQ(c.missing_events(), 0u);
}

TEST(KVCache, ViewBeyondWrittenOverflows) {
  KVCache c(1, 4, 1);
  c.append(0, 0, ramp(1, 0), ramp(1, 0));
  expect_error(ErrorCode::PositionOverflow, [&] { c.view(0, 1); });
}

TEST(KVCache, TensorCopyFromDeepestComputed) {
  KVCache c(8, 6, 2, FillPolicy::TensorCopy);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t l = 0; l < 8; ++l) {
      if (p == 3 && l > 2) continue;  // position 3 exited after layer 2
      c.append(l, p, ramp(2, 100.0f * l + p), ramp(2, -100.0f * l - p));
    }
  EXPECT_EQ(c.deepest_computed(3), 2);
  EXPECT_EQ(c.missing_events(), 0u);
  const auto view = c.view(5, 3);
  EXPECT_EQ(c.missing_events(), 1u);
  EXPECT_TRUE(c.is_fill(5, 3));
  EXPECT_EQ(c.fill_source_layer(5, 3), 2);
  EXPECT_EQ(view.keys[3 * 2], 200.0f + 3.0f);
  EXPECT_EQ(view.values[3 * 2], -203.0f);
  // Memoised: second view does not count again.
  c.view(5, 3);
  EXPECT_EQ(c.missing_events(), 1u);
  // Fills do not move deepest_computed.
  EXPECT_EQ(c.deepest_computed(3), 2);
}

TEST(KVCache, TensorCopyWithNothingComputed) {
  KVCache c(2, 3, 1, FillPolicy::TensorCopy);
  c.append(0, 1, ramp(1, 0), ramp(1, 0));
  expect_error(ErrorCode::MissingState, [&] { c.view(0, 1); });
}

TEST(KVCache, StrictRaisesMissingState) {
  KVCache c(2, 3, 1, FillPolicy::Strict);
  c.append(0, 0, ramp(1, 0), ramp(1, 0));
  c.append(1, 1, ramp(1, 0), ramp(1, 0));
  expect_error(ErrorCode::MissingState, [&] { c.view(1, 1); });
  EXPECT_EQ(c.missing_events(), 0u);
}

TEST(KVCache, ReprojectZeroWeightsGivesZeros) {
  const Model m = make_zero_model({8, 4, 2, 1, 8, 8, true});
  KVCache c(2, 4, 4, FillPolicy::Reproject);
  c.append(0, 0, ramp(4, 1), ramp(4, 1));
  const std::vector<float> h = {1.0f, 2.0f, 3.0f, 4.0f};
  const auto src = make_reproject_source(
      m, [&](std::size_t, std::size_t) -> std::optional<std::span<const float>> { return h; });
  const auto view = c.view(1, 0, &src);
  for (float x : view.keys) EXPECT_EQ(x, 0.0f);
  for (float x : view.values) EXPECT_EQ(x, 0.0f);
  EXPECT_EQ(c.missing_events(), 1u);
  EXPECT_EQ(c.fill_source_layer(1, 0), -1);
}

TEST(KVCache, ReprojectUsesLayerProjection) {
  Model m = make_random_model({8, 4, 2, 2, 8, 8, true}, 3);
  KVCache c(2, 4, 4, FillPolicy::Reproject);
  c.append(0, 0, ramp(4, 1), ramp(4, 1));
  c.append(0, 1, ramp(4, 1), ramp(4, 1));
  const std::vector<float> h = {0.3f, -1.0f, 2.0f, 0.5f};
  const auto src = make_reproject_source(
      m, [&](std::size_t, std::size_t) -> std::optional<std::span<const float>> { return h; });
  c.view(1, 1, &src);
  std::vector<float> k(4), v(4);
  project_kv(m, 1, h, 1, k, v);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(c.key(1, 1)[i], k[i]);
    EXPECT_EQ(c.value(1, 1)[i], v[i]);
  }
}

TEST(KVCache, ReprojectWithoutHiddenState) {
  KVCache c(2, 4, 1, FillPolicy::Reproject);
  c.append(0, 0, ramp(1, 0), ramp(1, 0));
  expect_error(ErrorCode::ReprojectStateUnavailable, [&] { c.view(1, 0); });
  const Model m = make_zero_model({8, 1, 2, 1, 8, 8, true});
  const auto src = make_reproject_source(
      m, [](std::size_t, std::size_t) -> std::optional<std::span<const float>> { return std::nullopt; });
  expect_error(ErrorCode::ReprojectStateUnavailable, [&] { c.view(1, 0, &src); });
}

TEST(KVCache, RealWriteOverFill) {
  KVCache c(2, 4, 1, FillPolicy::TensorCopy);
  c.append(0, 0, ramp(1, 7), ramp(1, 7));
  c.view(1, 0);
  EXPECT_TRUE(c.is_fill(1, 0));
  c.append(1, 0, ramp(1, 9), ramp(1, 9));
  EXPECT_FALSE(c.is_fill(1, 0));
  EXPECT_EQ(c.key(1, 0)[0], 9.0f);
  EXPECT_EQ(c.deepest_computed(0), 1);
}

TEST(KVCache, DumpCsv) {
  KVCache c(2, 4, 1, FillPolicy::TensorCopy);
  c.append(0, 0, ramp(1, 7), ramp(1, 7));
  c.view(1, 0);
  std::ostringstream out;
  c.dump_csv(out);
  EXPECT_EQ(out.str(), "layer,pos,present,is_fill,fill_source_layer\n0,0,1,0,-1\n1,0,1,1,0\n");
}

TEST(FillPolicy, ParseNames) {
  for (auto p : {FillPolicy::Strict, FillPolicy::TensorCopy, FillPolicy::Reproject})
    EXPECT_EQ(parse_fill_policy(to_string(p)), p);
  expect_error(ErrorCode::ConfigInvalid, [] { parse_fill_policy("mystery"); });
}

}  // namespace
}  // namespace d3
