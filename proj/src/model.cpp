#include "d3/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <type_traits>

#include "d3/error.hpp"

namespace d3 {
namespace {

constexpr std::array<char, 4> kMagic = {'D', '3', 'W', '1'};
constexpr std::size_t kHeaderFields = 7;
constexpr std::size_t kHeaderBytes = kMagic.size() + kHeaderFields * sizeof(std::uint32_t);

static_assert(std::endian::native == std::endian::little,
              "D3W1 reader assumes a little-endian host");

template <typename Vec>
struct TensorSlot {
  std::string name;
  Vec* data;
  std::size_t count;
};

// Fixed on-disk tensor order. ModelT may be const-qualified.
template <typename ModelT>
auto tensor_slots(ModelT& model) {
  using Vec = std::remove_reference_t<decltype((model.final_norm))>;
  const auto& c = model.config;
  const std::size_t d = c.d_model;
  std::vector<TensorSlot<Vec>> slots;
  auto add = [&](std::string name, Vec& vec, std::size_t count) {
    slots.push_back({std::move(name), &vec, count});
  };
  add("token_embedding", model.token_embedding, c.vocab_size * d);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& w = model.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    add(p + "attn_norm", w.attn_norm, d);
    add(p + "wq", w.wq, d * d);
    add(p + "wk", w.wk, d * d);
    add(p + "wv", w.wv, d * d);
    add(p + "wo", w.wo, d * d);
    add(p + "mlp_norm", w.mlp_norm, d);
    add(p + "w_up", w.w_up, d * c.d_ff);
    add(p + "w_down", w.w_down, c.d_ff * d);
  }
  add("final_norm", model.final_norm, d);
  if (!c.tied_lm_head) add("lm_head", model.lm_head, d * c.vocab_size);
  return slots;
}

std::uint32_t read_u32(std::span<const std::byte> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  std::memcpy(&v, bytes.data() + offset, sizeof(v));
  return v;
}

// Walks the tensor order arithmetically so a header declaring huge
// dimensions is rejected before anything is allocated.
void check_payload_fits(const ModelConfig& c, std::size_t available) {
  using Wide = unsigned __int128;
  const Wide d = c.d_model;
  Wide offset = kHeaderBytes;
  auto need = [&](const std::string& name, Wide count) {
    offset += count * sizeof(float);
    if (offset > available)
      throw Error(ErrorCode::TruncatedFile, name + ": payload ends before this tensor is complete");
  };
  need("token_embedding", Wide(c.vocab_size) * d);
  const std::array<std::pair<const char*, Wide>, 8> per_layer = {{
      {"attn_norm", d}, {"wq", d * d}, {"wk", d * d}, {"wv", d * d}, {"wo", d * d},
      {"mlp_norm", d}, {"w_up", d * c.d_ff}, {"w_down", Wide(c.d_ff) * d}}};
  for (std::size_t l = 0; l < c.n_layers; ++l)
    for (const auto& [name, count] : per_layer)
      need("layers." + std::to_string(l) + "." + name, count);
  need("final_norm", d);
  if (!c.tied_lm_head) need("lm_head", d * c.vocab_size);
}

Model allocate(const ModelConfig& config) {
  Model model;
  model.config = config;
  model.layers.resize(config.n_layers);
  for (auto& slot : tensor_slots(model)) slot.data->assign(slot.count, 0.0f);
  return model;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0)
    throw Error(ErrorCode::DimensionMismatch, "model dimensions must all be >= 1");
  if (max_seq < 2) throw Error(ErrorCode::DimensionMismatch, "max_seq must be >= 2");
  if (d_model % n_heads != 0)
    throw Error(ErrorCode::DimensionMismatch,
                "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                    std::to_string(n_heads));
}

std::span<const float> Model::embedding_row(TokenId token) const {
  if (token >= config.vocab_size)
    throw Error(ErrorCode::TokenOutOfRange,
                "token " + std::to_string(token) + " >= vocab " + std::to_string(config.vocab_size));
  return std::span<const float>(token_embedding).subspan(token * config.d_model, config.d_model);
}

std::size_t model_file_size(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::size_t floats = c.vocab_size * d + d;
  floats += c.n_layers * (2 * d + 4 * d * d + 2 * d * c.d_ff);
  if (!c.tied_lm_head) floats += d * c.vocab_size;
  return kHeaderBytes + floats * sizeof(float);
}

Model load_model(std::span<const std::byte> bytes) {
  if (bytes.size() < kMagic.size() ||
      std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw Error(ErrorCode::BadMagic, "expected \"D3W1\"");
  if (bytes.size() < kHeaderBytes)
    throw Error(ErrorCode::TruncatedFile, "header: " + std::to_string(bytes.size()) + " bytes");

  std::array<std::uint32_t, kHeaderFields> h{};
  for (std::size_t i = 0; i < kHeaderFields; ++i)
    h[i] = read_u32(bytes, kMagic.size() + i * sizeof(std::uint32_t));
  if (h[6] > 1)
    throw Error(ErrorCode::DimensionMismatch, "header: tied_flag must be 0 or 1");

  ModelConfig config{h[0], h[1], h[2], h[3], h[4], h[5], h[6] == 1};
  config.validate();
  check_payload_fits(config, bytes.size());

  Model model = allocate(config);
  std::size_t offset = kHeaderBytes;
  for (auto& slot : tensor_slots(model)) {
    const std::size_t n = slot.count * sizeof(float);
    std::memcpy(slot.data->data(), bytes.data() + offset, n);
    offset += n;
    for (std::size_t i = 0; i < slot.count; ++i)
      if (!std::isfinite((*slot.data)[i]))
        throw Error(ErrorCode::NonFiniteWeight, slot.name + "[" + std::to_string(i) + "]");
  }
  if (offset != bytes.size())
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(bytes.size() - offset) + " trailing bytes after last tensor");
  return model;
}

Model load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_model(std::as_bytes(std::span(raw)));
}

std::vector<std::byte> serialize_model(const Model& model) {
  const auto& c = model.config;
  std::vector<std::byte> out(kHeaderBytes);
  std::memcpy(out.data(), kMagic.data(), kMagic.size());
  const std::array<std::uint32_t, kHeaderFields> h = {
      static_cast<std::uint32_t>(c.vocab_size), static_cast<std::uint32_t>(c.d_model),
      static_cast<std::uint32_t>(c.n_layers),   static_cast<std::uint32_t>(c.n_heads),
      static_cast<std::uint32_t>(c.d_ff),       static_cast<std::uint32_t>(c.max_seq),
      c.tied_lm_head ? 1u : 0u};
  std::memcpy(out.data() + kMagic.size(), h.data(), sizeof(h));
  for (const auto& slot : tensor_slots(model)) {
    if (slot.data->size() != slot.count)
      throw Error(ErrorCode::ShapeMismatch, slot.name + " has wrong element count");
    const auto* p = reinterpret_cast<const std::byte*>(slot.data->data());
    out.insert(out.end(), p, p + slot.count * sizeof(float));
  }
  return out;
}

void save_model_file(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Model make_zero_model(const ModelConfig& config) {
  config.validate();
  Model model = allocate(config);
  for (auto& w : model.layers) {
    w.attn_norm.assign(config.d_model, 1.0f);
    w.mlp_norm.assign(config.d_model, 1.0f);
  }
  model.final_norm.assign(config.d_model, 1.0f);
  return model;
}

Model make_random_model(const ModelConfig& config, std::uint64_t seed, float scale) {
  Model model = make_zero_model(config);
  std::mt19937_64 rng(seed);
  auto fill = [&](std::vector<float>& v, std::size_t fan_in) {
    std::normal_distribution<float> dist(0.0f, scale / std::sqrt(static_cast<float>(fan_in)));
    for (auto& x : v) x = dist(rng);
  };
  const std::size_t d = config.d_model;
  {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (auto& x : model.token_embedding) x = dist(rng);
  }
  for (auto& w : model.layers) {
    fill(w.wq, d);
    fill(w.wk, d);
    fill(w.wv, d);
    fill(w.wo, d);
    fill(w.w_up, d);
    fill(w.w_down, config.d_ff);
  }
  if (!config.tied_lm_head) fill(model.lm_head, d);
  return model;
}

}  // namespace d3
