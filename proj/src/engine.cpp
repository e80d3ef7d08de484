#include "d3/engine.hpp"

#include <algorithm>
#include <chrono>
#include <string>

#include <json.hpp>

#include "d3/error.hpp"
#include "d3/flops.hpp"

namespace d3 {

void DecodeParams::validate() const {
  if (max_new_tokens < 1) throw Error(ErrorCode::ConfigInvalid, "max_new_tokens must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::ConfigInvalid, "batch_size must be >= 1");
}

std::vector<TokenId> GenTrace::tokens() const {
  std::vector<TokenId> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.token);
  return out;
}

std::uint64_t GenTrace::total_flops_exact() const {
  std::uint64_t total = prefill_flops_exact;
  for (const auto& s : steps) total += s.flops_exact;
  return total;
}

double GenTrace::total_flops_model() const {
  double total = prefill_flops_model;
  for (const auto& s : steps) total += s.flops_model;
  return total;
}

SequenceState::SequenceState(const Model& model, FillPolicy policy)
    : model_(&model),
      cache_(model.config.n_layers, model.config.max_seq, model.config.d_model, policy) {}

std::optional<std::span<const float>> SequenceState::skipped_hidden(std::size_t layer,
                                                                    std::size_t pos) const {
  const std::size_t idx = layer * model_->config.max_seq + pos;
  if (idx >= has_skipped_.size() || !has_skipped_[idx]) return std::nullopt;
  const std::size_t d = model_->config.d_model;
  return std::span<const float>(skipped_).subspan(idx * d, d);
}

std::vector<float> SequenceState::advance(TokenId input, const KeptSet& kept) {
  const auto& c = model_->config;
  const std::size_t pos = next_pos_;
  if (pos >= c.max_seq)
    throw Error(ErrorCode::SequenceTooLong, "position " + std::to_string(pos) + " >= max_seq");
  if (kept.n_layers() != c.n_layers)
    throw Error(ErrorCode::ShapeMismatch, "kept set built for a different layer count");

  const auto row = model_->embedding_row(input);
  std::vector<float> h(row.begin(), row.end());

  const ReprojectSource source = make_reproject_source(
      *model_, [this](std::size_t layer, std::size_t p) { return skipped_hidden(layer, p); });

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    if (!kept.contains(l)) {
      if (cache_.fill_policy() == FillPolicy::Reproject) {
        if (skipped_.empty()) {
          skipped_.assign(c.n_layers * c.max_seq * c.d_model, 0.0f);
          has_skipped_.assign(c.n_layers * c.max_seq, 0);
        }
        const std::size_t idx = l * c.max_seq + pos;
        std::copy(h.begin(), h.end(), skipped_.begin() + idx * c.d_model);
        has_skipped_[idx] = 1;
      }
      continue;
    }
    const KVSpan past = pos > 0 ? cache_.view(l, pos - 1, &source) : KVSpan{};
    auto out = run_layer(*model_, l, h, pos, past, &macs_);
    cache_.append(l, pos, out.key, out.value);
    h = std::move(out.hidden);
  }
  ++next_pos_;
  return h;
}

HiddenState prefill(const Model& model, std::span<SequenceState> rows,
                    std::span<const std::vector<TokenId>> prompts) {
  if (rows.size() != prompts.size())
    throw Error(ErrorCode::ShapeMismatch, "prefill: rows and prompts differ in count");
  const auto& c = model.config;
  HiddenState out(rows.size(), 1, c.d_model);
  const KeptSet full = KeptSet::full(c.n_layers);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& prompt = prompts[r];
    if (prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "row " + std::to_string(r));
    if (rows[r].next_position() + prompt.size() > c.max_seq)
      throw Error(ErrorCode::SequenceTooLong,
                  "prompt of " + std::to_string(prompt.size()) + " tokens, max_seq " +
                      std::to_string(c.max_seq));
    std::vector<float> h;
    for (TokenId t : prompt) h = rows[r].advance(t, full);
    std::copy(h.begin(), h.end(), out.at(r, 0).begin());
  }
  return out;
}

DecodeStepResult decode_step(const Model& model, const KeptSet& kept,
                             std::span<SequenceState> rows, std::span<const TokenId> inputs) {
  if (rows.size() != inputs.size())
    throw Error(ErrorCode::ShapeMismatch, "decode_step: rows and inputs differ in count");
  DecodeStepResult result;
  result.kept_set = kept;
  result.rows.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    StepOutput o;
    o.hidden = rows[r].advance(inputs[r], kept);
    o.probs = readout(model, o.hidden);
    o.token = static_cast<TokenId>(argmax(o.probs));
    result.rows.push_back(std::move(o));
  }
  return result;
}

DecodeStepResult decode_step(const Model& model, const DepthSchedule& schedule,
                             std::span<SequenceState> rows, std::size_t step,
                             std::span<const TokenId> inputs) {
  if (schedule.n_layers != model.config.n_layers)
    throw Error(ErrorCode::ShapeMismatch, "schedule L differs from model n_layers");
  return decode_step(model, kept_set(schedule, step), rows, inputs);
}

LayerPlan plan_from(const DepthSchedule& schedule) {
  return [schedule](std::size_t step) { return kept_set(schedule, step); };
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

StepRecord make_record(const StepOutput& out, std::size_t position, const KeptSet& kept,
                       std::uint64_t macs, const FlopsModel& fm) {
  StepRecord rec;
  rec.token = out.token;
  rec.prob = out.probs[out.token];
  rec.ppl = 1.0 / rec.prob;
  rec.position = position;
  rec.kept_count = kept.size();
  rec.kept_set = kept;
  rec.flops_exact = macs;
  rec.flops_model = flops_step(fm, position, kept.size());
  return rec;
}

void generate_batch(const Model& model, const LayerPlan& plan,
                    std::span<const std::vector<TokenId>> prompts, const DecodeParams& params,
                    std::span<GenTrace> traces) {
  const auto& c = model.config;
  const FlopsModel fm = FlopsModel::from(c);
  const KeptSet full = KeptSet::full(c.n_layers);
  const std::size_t n = prompts.size();

  std::vector<SequenceState> rows;
  rows.reserve(n);
  for (std::size_t r = 0; r < n; ++r) rows.emplace_back(model, params.fill_policy);

  std::vector<bool> active(n, true);
  std::vector<TokenId> last(n);
  auto finish_if_done = [&](std::size_t r, std::size_t step) {
    const bool eos = params.eos_token && last[r] == *params.eos_token;
    const bool budget = step + 1 >= params.max_new_tokens;
    const bool out_of_positions = rows[r].next_position() >= c.max_seq;
    if (eos || budget || out_of_positions) active[r] = false;
  };

  // Initiation phase. The prompt's last position yields T_0 at full depth
  // and is charged to step 0; earlier positions go to the prefill totals.
  for (std::size_t r = 0; r < n; ++r) {
    const auto start = Clock::now();
    const auto& prompt = prompts[r];
    auto& trace = traces[r];
    trace.prompt_length = prompt.size();
    if (prompt.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt " + std::to_string(r));
    if (prompt.size() > c.max_seq)
      throw Error(ErrorCode::SequenceTooLong,
                  "prompt of " + std::to_string(prompt.size()) + " tokens, max_seq " +
                      std::to_string(c.max_seq));
    if (prompt.size() > 1) {
      const std::vector<TokenId> head(prompt.begin(), prompt.end() - 1);
      prefill(model, std::span<SequenceState>(&rows[r], 1),
              std::span<const std::vector<TokenId>>(&head, 1));
      trace.prefill_flops_exact = rows[r].macs().macs;
      for (std::size_t p = 0; p + 1 < prompt.size(); ++p)
        trace.prefill_flops_model += flops_step(fm, p, c.n_layers);
    }
    const std::uint64_t before = rows[r].macs().macs;
    const std::size_t position = rows[r].next_position();
    const auto step0 =
        decode_step(model, full, std::span<SequenceState>(&rows[r], 1),
                    std::span<const TokenId>(&prompt.back(), 1));
    trace.steps.push_back(
        make_record(step0.rows[0], position, full, rows[r].macs().macs - before, fm));
    last[r] = step0.rows[0].token;
    finish_if_done(r, 0);
    trace.wall_ms += elapsed_ms(start);
  }

  // Generation phase, global step index shared by the batch.
  for (std::size_t step = 1; step < params.max_new_tokens; ++step) {
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    const KeptSet kept = plan(step);
    for (std::size_t r = 0; r < n; ++r) {
      if (!active[r]) continue;
      const auto start = Clock::now();
      const std::uint64_t before = rows[r].macs().macs;
      const std::size_t position = rows[r].next_position();
      const auto out = decode_step(model, kept, std::span<SequenceState>(&rows[r], 1),
                                   std::span<const TokenId>(&last[r], 1));
      traces[r].steps.push_back(
          make_record(out.rows[0], position, kept, rows[r].macs().macs - before, fm));
      last[r] = out.rows[0].token;
      finish_if_done(r, step);
      traces[r].wall_ms += elapsed_ms(start);
    }
  }

  for (std::size_t r = 0; r < n; ++r) traces[r].missing_events = rows[r].cache().missing_events();
}

}  // namespace

std::vector<GenTrace> generate(const Model& model, const LayerPlan& plan,
                               std::span<const std::vector<TokenId>> prompts,
                               const DecodeParams& params) {
  params.validate();
  std::vector<GenTrace> traces(prompts.size());
  for (std::size_t begin = 0; begin < prompts.size(); begin += params.batch_size) {
    const std::size_t count = std::min(params.batch_size, prompts.size() - begin);
    generate_batch(model, plan, prompts.subspan(begin, count), params,
                   std::span<GenTrace>(traces).subspan(begin, count));
  }
  return traces;
}

std::vector<GenTrace> generate(const Model& model, const DepthSchedule& schedule,
                               std::span<const std::vector<TokenId>> prompts,
                               const DecodeParams& params) {
  if (schedule.n_layers != model.config.n_layers)
    throw Error(ErrorCode::ConfigInvalid,
                "schedule L=" + std::to_string(schedule.n_layers) + " but model has " +
                    std::to_string(model.config.n_layers) + " layers");
  return generate(model, plan_from(schedule), prompts, params);
}

double agreement(std::span<const TokenId> a, std::span<const TokenId> b) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n == 0) return a.size() == b.size() ? 1.0 : 0.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < n; ++i) same += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(n);
}

double agreement(const GenTrace& a, const GenTrace& b) {
  const auto ta = a.tokens();
  const auto tb = b.tokens();
  return agreement(ta, tb);
}

void write_trace_jsonl(std::ostream& out, std::span<const GenTrace> traces) {
  for (std::size_t seq = 0; seq < traces.size(); ++seq) {
    const auto& t = traces[seq];
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      const auto& s = t.steps[i];
      nlohmann::ordered_json rec;
      rec["sequence"] = seq;
      rec["step"] = i;
      rec["prompt_length"] = t.prompt_length;
      rec["position"] = s.position;
      rec["token"] = s.token;
      rec["prob"] = s.prob;
      rec["ppl"] = s.ppl;
      rec["kept_count"] = s.kept_count;
      rec["kept_set"] = nlohmann::json::array(
          {nlohmann::json::array({0, s.kept_set.head_end()}),
           nlohmann::json::array({s.kept_set.tail_begin(), s.kept_set.n_layers()})});
      rec["flops_exact"] = s.flops_exact;
      rec["flops_model"] = s.flops_model;
      out << rec.dump() << '\n';
    }
  }
}

void write_trace_summary_csv(std::ostream& out, std::span<const GenTrace> traces) {
  out << "sequence,tokens,avg_layers,total_flops_exact,total_flops_model,wall_ms\n";
  for (std::size_t seq = 0; seq < traces.size(); ++seq) {
    const auto& t = traces[seq];
    double layers = 0.0;
    std::string tokens;
    for (const auto& s : t.steps) {
      layers += static_cast<double>(s.kept_count);
      if (!tokens.empty()) tokens += ' ';
      tokens += std::to_string(s.token);
    }
    const double avg = t.steps.empty() ? 0.0 : layers / static_cast<double>(t.steps.size());
    out << seq << ',' << tokens << ',' << avg << ',' << t.total_flops_exact() << ','
        << t.total_flops_model() << ',' << t.wall_ms << '\n';
  }
}

}  // namespace d3
