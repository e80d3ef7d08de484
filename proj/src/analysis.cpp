#include "d3/analysis.hpp"

#include <cmath>
#include <limits>

#include "d3/error.hpp"
#include "d3/transformer.hpp"

namespace d3 {

double flops_step(const FlopsModel& fm, std::size_t position, std::size_t kept_count) {
  return static_cast<double>(kept_count) * fm.layer_cost(position);
}

std::uint64_t exact_layer_macs(const ModelConfig& c, std::size_t position) {
  const std::uint64_t d = c.d_model;
  const std::uint64_t ctx = position + 1;
  return 4 * d * d + 2 * ctx * d + 2 * d * c.d_ff;
}

double token_ppl(double p) {
  if (!(p > 0.0))
    throw Error(ErrorCode::NonPositiveProbability, "p = " + std::to_string(p));
  return 1.0 / p;
}

std::vector<SaturationRecord> saturation_depth(const Model& model, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error(ErrorCode::EmptyPrompt, "saturation_depth needs >= 1 token");
  const auto streams = forward_full(model, tokens);
  const std::size_t L = model.config.n_layers;

  std::vector<SaturationRecord> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    std::vector<std::size_t> top(L);
    std::vector<double> conf(L);
    for (std::size_t l = 0; l < L; ++l) {
      const auto probs = readout(model, streams.hidden[l].at(0, t));
      top[l] = argmax(probs);
      conf[l] = probs[top[l]];
    }
    const std::size_t final_top = top[L - 1];

    SaturationRecord rec;
    rec.position = t;
    // Walk down from the top while agreement holds.
    std::size_t depth = L;
    while (depth > 1 && top[depth - 2] == final_top) --depth;
    rec.saturation_depth = depth;
    rec.confidence = conf[depth - 1];
    for (std::size_t l = 0; l < L; ++l)
      if (top[l] == final_top) {
        rec.first_touch_depth = l + 1;
        break;
      }
    out.push_back(rec);
  }
  return out;
}

SaturationSummary summarize_saturation(std::span<const SaturationRecord> records,
                                       std::size_t n_layers) {
  SaturationSummary s;
  s.fraction_saturated.assign(n_layers, 0.0);
  if (records.empty()) return s;
  for (const auto& r : records) {
    s.mean_depth += static_cast<double>(r.saturation_depth);
    s.mean_confidence += r.confidence;
    for (std::size_t k = r.saturation_depth; k <= n_layers; ++k) s.fraction_saturated[k - 1] += 1.0;
  }
  const double n = static_cast<double>(records.size());
  s.mean_depth /= n;
  s.mean_confidence /= n;
  for (auto& f : s.fraction_saturated) f /= n;
  return s;
}

std::string_view to_string(FlowStream stream) {
  switch (stream) {
    case FlowStream::Hidden: return "hidden";
    case FlowStream::Mlp: return "mlp";
    case FlowStream::Attn: return "attn";
  }
  return "?";
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - b[i];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

std::vector<FlowRecord> layer_flow(const Model& model, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error(ErrorCode::EmptyPrompt, "layer_flow needs >= 1 token");
  const auto s = forward_full(model, tokens);
  const std::size_t L = model.config.n_layers;
  std::vector<FlowRecord> out;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    for (FlowStream stream : {FlowStream::Hidden, FlowStream::Mlp, FlowStream::Attn}) {
      const auto& src = stream == FlowStream::Hidden ? s.hidden
                        : stream == FlowStream::Mlp  ? s.mlp
                                                     : s.attn;
      FlowRecord rec;
      rec.layer = l;
      rec.stream = stream;
      double cos_sum = 0.0;
      std::size_t cos_n = 0;
      double euc_sum = 0.0;
      for (std::size_t t = 0; t < s.positions; ++t) {
        const auto a = src[l].at(0, t);
        const auto b = src[l + 1].at(0, t);
        euc_sum += euclidean_distance(a, b);
        const double c = cosine_similarity(a, b);
        if (std::isnan(c)) {
          ++rec.zero_norm_positions;
        } else {
          cos_sum += c;
          ++cos_n;
        }
      }
      rec.euclidean = euc_sum / static_cast<double>(s.positions);
      if (cos_n > 0) rec.cosine = cos_sum / static_cast<double>(cos_n);
      out.push_back(rec);
    }
  }
  return out;
}

double avg_layers(const GenTrace& trace) {
  return avg_layers(std::span<const GenTrace>(&trace, 1));
}

double avg_layers(std::span<const GenTrace> traces) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : traces)
    for (const auto& s : t.steps) {
      sum += static_cast<double>(s.kept_count);
      ++n;
    }
  if (n == 0) throw Error(ErrorCode::EmptyTrace, "no generated steps");
  return sum / static_cast<double>(n);
}

Speedup speedup(std::span<const GenTrace> method, std::span<const GenTrace> baseline) {
  if (method.empty() || baseline.empty()) throw Error(ErrorCode::EmptyTrace, "speedup needs traces");
  double m_exact = 0.0, m_model = 0.0, b_exact = 0.0, b_model = 0.0;
  for (const auto& t : method) {
    m_exact += static_cast<double>(t.total_flops_exact());
    m_model += t.total_flops_model();
  }
  for (const auto& t : baseline) {
    b_exact += static_cast<double>(t.total_flops_exact());
    b_model += t.total_flops_model();
  }
  if (m_exact == 0.0 || m_model == 0.0) throw Error(ErrorCode::EmptyTrace, "method has zero FLOPs");
  return {b_exact / m_exact, b_model / m_model};
}

std::vector<ErrorPropPoint> error_prop_run(
    const Model& model, std::span<const std::vector<TokenId>> prompts,
    std::span<const std::size_t> t0_values, std::span<const std::size_t> k_values,
    const DecodeParams& params, std::optional<std::span<const std::vector<TokenId>>> references) {
  const std::size_t L = model.config.n_layers;
  if (prompts.empty()) throw Error(ErrorCode::EmptyPrompt, "error_prop_run needs prompts");
  if (references && references->size() != prompts.size())
    throw Error(ErrorCode::ConfigInvalid, "references and prompts differ in count");
  for (std::size_t k : k_values)
    if (k >= L) throw Error(ErrorCode::ConfigInvalid, "k must be < L, got " + std::to_string(k));

  const auto full = generate(model, make_full(L), prompts, params);

  std::vector<ErrorPropPoint> out;
  for (std::size_t k : k_values) {
    for (std::size_t t0 : t0_values) {
      const KeptSet perturbed(L, L - k, L);
      const KeptSet all = KeptSet::full(L);
      const LayerPlan plan = [=](std::size_t step) { return step >= t0 ? perturbed : all; };
      const auto traces = generate(model, plan, prompts, params);

      ErrorPropPoint p{t0, k, 0.0, 0.0};
      for (std::size_t r = 0; r < prompts.size(); ++r) {
        p.agreement += agreement(traces[r], full[r]);
        const auto produced = traces[r].tokens();
        const auto& target = references ? (*references)[r] : full[r].tokens();
        p.metric += produced == target ? 1.0 : 0.0;
      }
      p.agreement /= static_cast<double>(prompts.size());
      p.metric /= static_cast<double>(prompts.size());
      out.push_back(p);
    }
  }
  return out;
}

void write_saturation_csv(std::ostream& out, std::span<const SaturationRecord> records) {
  out << "token_pos,depth,confidence,first_touch_depth\n";
  for (const auto& r : records)
    out << r.position << ',' << r.saturation_depth << ',' << r.confidence << ','
        << r.first_touch_depth << '\n';
}

void write_flow_csv(std::ostream& out, std::span<const FlowRecord> records,
                    std::optional<long long> checkpoint_step, bool header) {
  if (header) out << (checkpoint_step ? "checkpoint_step," : "") << "layer_pair,stream,cosine,euclidean\n";
  for (const auto& r : records) {
    if (checkpoint_step) out << *checkpoint_step << ',';
    out << r.layer << '-' << r.layer + 1 << ',' << to_string(r.stream) << ',';
    if (r.cosine)
      out << *r.cosine;
    else
      out << "nan";
    out << ',' << r.euclidean << '\n';
  }
}

void write_error_prop_csv(std::ostream& out, std::span<const ErrorPropPoint> points) {
  out << "t0,k,agreement,metric\n";
  for (const auto& p : points) out << p.t0 << ',' << p.k << ',' << p.agreement << ',' << p.metric << '\n';
}

}  // namespace d3
