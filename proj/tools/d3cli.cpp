// d3: command-line front end for the decoding engine and its analyses.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "d3/analysis.hpp"
#include "d3/engine.hpp"
#include "d3/error.hpp"
#include "d3/harness.hpp"
#include "d3/model.hpp"
#include "d3/schedule.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace d3;
using harness::Vocab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Common {
  std::string model;
  std::string vocab;
  std::string out;
  std::string format = "json";
  std::uint64_t seed = 0;
};

struct ScheduleOpts {
  std::string spec;
  std::optional<double> alpha;
  double start = 0.2;
  std::size_t tail_min = 1;
};

struct DecodeOpts {
  std::size_t max_new = 16;
  std::size_t batch = 4;
  std::string fill_policy = "copy";
};

struct DataOpts {
  std::string task = "sort";
  std::string data_dir;
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  double validation_fraction = 0.1;
  std::size_t shots = 3;
};

struct PromptOpts {
  std::vector<std::string> prompts;
  std::string prompt_file;
  std::string tokens;
  std::size_t random = 0;
};

void add_common(CLI::App* app, Common& c, bool model_required = true) {
  auto* m = app->add_option("--model", c.model, "D3W1 weight file");
  if (model_required) m->required();
  app->add_option("--vocab", c.vocab, "vocabulary JSON (default: built-in character vocab)");
  app->add_option("--out", c.out, "output path (default: stdout)");
  app->add_option("--format", c.format, "output format")->check(CLI::IsMember({"json", "csv"}));
  app->add_option("--seed", c.seed, "seed");
}

void add_schedule(CLI::App* app, ScheduleOpts& s) {
  app->add_option("--schedule", s.spec, "schedule spec, e.g. kind=d3,start=0.2,alpha=0.999");
  app->add_option("--alpha", s.alpha, "D3 decay rate (selects the D3 schedule)");
  app->add_option("--start", s.start, "D3 start fraction");
  app->add_option("--tail-min", s.tail_min, "layers always kept after the dropped block");
}

void add_decode(CLI::App* app, DecodeOpts& d) {
  app->add_option("--max-new", d.max_new, "tokens to generate per prompt");
  app->add_option("--batch", d.batch, "batch size");
  app->add_option("--fill-policy", d.fill_policy, "KV fill policy")
      ->check(CLI::IsMember({"strict", "copy", "reproject"}));
}

void add_data(CLI::App* app, DataOpts& d) {
  app->add_option("--task", d.task, "synthetic task")->check(CLI::IsMember({"sort", "modarith"}));
  app->add_option("--data-dir", d.data_dir, "directory with train.jsonl and test.jsonl");
  app->add_option("--n-train", d.n_train, "generated train examples");
  app->add_option("--n-test", d.n_test, "generated test examples");
  app->add_option("--validation-fraction", d.validation_fraction, "share of train used for validation");
  app->add_option("--shots", d.shots, "few-shot examples per prompt");
}

void add_prompts(CLI::App* app, PromptOpts& p) {
  app->add_option("--prompt", p.prompts, "prompt text (repeatable)");
  app->add_option("--prompts", p.prompt_file, "file with one prompt per line");
  app->add_option("--tokens", p.tokens, "space-separated token ids");
  app->add_option("--random", p.random, "random prompt of N tokens");
}

Vocab load_vocab(const Common& c) {
  return c.vocab.empty() ? Vocab::default_vocab() : Vocab::load(c.vocab);
}

DepthSchedule resolve_schedule(const ScheduleOpts& s, std::size_t L) {
  if (!s.spec.empty()) {
    if (s.alpha) throw Error(ErrorCode::ConfigInvalid, "--schedule and --alpha are exclusive");
    return parse_schedule(s.spec, L);
  }
  if (s.alpha) return make_d3(L, s.start, *s.alpha, s.tail_min);
  return make_full(L);
}

DecodeParams decode_params(const DecodeOpts& d, std::uint64_t seed) {
  DecodeParams p;
  p.max_new_tokens = d.max_new;
  p.batch_size = d.batch;
  p.seed = seed;
  p.fill_policy = parse_fill_policy(d.fill_policy);
  p.validate();
  return p;
}

harness::EvalSettings eval_settings(const DataOpts& data, const DecodeOpts& d, std::uint64_t seed) {
  harness::EvalSettings s;
  s.shots = data.shots;
  s.max_new_tokens = d.max_new;
  s.batch_size = d.batch;
  s.seed = seed;
  s.fill_policy = parse_fill_policy(d.fill_policy);
  if (s.max_new_tokens < 1 || s.batch_size < 1)
    throw Error(ErrorCode::ConfigInvalid, "--max-new and --batch must be >= 1");
  return s;
}

harness::Split load_split(const DataOpts& d, std::uint64_t seed) {
  const auto task = harness::parse_task(d.task);
  const auto data = d.data_dir.empty() ? harness::make_dataset(task, d.n_train, d.n_test, seed)
                                       : harness::load_dataset_dir(d.data_dir);
  return harness::make_split(data, d.validation_fraction, seed);
}

std::vector<std::vector<TokenId>> collect_prompts(const PromptOpts& p, const Vocab& vocab,
                                                  const Model& model, std::uint64_t seed) {
  std::vector<std::vector<TokenId>> out;
  for (const auto& text : p.prompts) out.push_back(vocab.encode(text));
  if (!p.prompt_file.empty()) {
    std::ifstream in(p.prompt_file);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + p.prompt_file);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(vocab.encode(line));
  }
  if (!p.tokens.empty()) {
    std::istringstream in(p.tokens);
    std::vector<TokenId> ids;
    long long v = 0;
    while (in >> v) {
      if (v < 0 || static_cast<unsigned long long>(v) >= model.config.vocab_size)
        throw Error(ErrorCode::TokenOutOfRange, "token " + std::to_string(v));
      ids.push_back(static_cast<TokenId>(v));
    }
    if (!in.eof()) throw Error(ErrorCode::ConfigInvalid, "--tokens expects integers");
    out.push_back(std::move(ids));
  }
  if (p.random > 0) {
    std::mt19937_64 rng(seed);
    std::vector<TokenId> ids(p.random);
    for (auto& t : ids)
      t = std::uniform_int_distribution<TokenId>(0, static_cast<TokenId>(model.config.vocab_size - 1))(rng);
    out.push_back(std::move(ids));
  }
  if (out.empty()) throw Error(ErrorCode::ConfigInvalid, "no prompt given (--prompt, --prompts, --tokens or --random)");
  return out;
}

// Writes to --out or stdout.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw Error(ErrorCode::Io, "cannot write " + path);
    }
  }
  std::ostream& get() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

void print_json(const Common& c, const ordered_json& j) {
  Sink sink(c.out);
  sink.get() << j.dump(2) << '\n';
}

void write_cells_csv(std::ostream& out, const harness::HPResult& r) {
  out << "start,alpha,validation_metric,test_metric,avg_layers,test_avg_layers,best\n";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    out << c.start << ',' << c.alpha << ',' << c.validation_metric << ',' << c.test_metric << ','
        << c.avg_layers << ',' << c.test_avg_layers << ',' << (i == r.best ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------- commands

int cmd_init_random(const Common& c, const ModelConfig& cfg, float scale) {
  if (c.out.empty()) throw Error(ErrorCode::ConfigInvalid, "--out is required");
  const Model m = make_random_model(cfg, c.seed, scale);
  save_model_file(m, c.out);
  std::fprintf(stderr, "wrote %s (%zu bytes)\n", c.out.c_str(), model_file_size(cfg));
  return 0;
}

int cmd_generate(const Common& c, const ScheduleOpts& so, const DecodeOpts& d, const PromptOpts& po,
                 bool text, std::optional<long long> eos) {
  const Model m = load_model_file(c.model);
  const Vocab vocab = load_vocab(c);
  const auto schedule = resolve_schedule(so, m.config.n_layers);
  auto params = decode_params(d, c.seed);
  if (eos) {
    if (*eos < 0 || static_cast<std::size_t>(*eos) >= m.config.vocab_size)
      throw Error(ErrorCode::ConfigInvalid, "--eos outside the vocabulary");
    params.eos_token = static_cast<TokenId>(*eos);
  }
  const auto prompts = collect_prompts(po, vocab, m, c.seed);
  const auto traces = generate(m, schedule, prompts, params);
  Sink sink(c.out);
  if (text) {
    for (const auto& t : traces) {
      const auto toks = t.tokens();
      sink.get() << vocab.decode(toks) << '\n';
    }
  } else if (c.format == "csv") {
    write_trace_summary_csv(sink.get(), traces);
  } else {
    write_trace_jsonl(sink.get(), traces);
  }
  return 0;
}

int cmd_bench(const Common& c, const std::string& config_path, const std::vector<std::string>& specs,
              const ScheduleOpts& so, const DataOpts& data, const DecodeOpts& d, bool no_wall) {
  harness::MetricsReport report;
  if (!config_path.empty()) {
    report = harness::run_benchmark(harness::load_experiment_config(config_path));
  } else {
    if (c.model.empty()) throw Error(ErrorCode::ConfigInvalid, "--model or --config is required");
    const Model m = load_model_file(c.model);
    const Vocab vocab = load_vocab(c);
    const auto split = load_split(data, c.seed);
    std::vector<DepthSchedule> schedules;
    for (const auto& s : specs) schedules.push_back(parse_schedule(s, m.config.n_layers));
    if (so.alpha) schedules.push_back(make_d3(m.config.n_layers, so.start, *so.alpha, so.tail_min));
    report = harness::run_benchmark(m, vocab, split, data.task, schedules, eval_settings(data, d, c.seed));
  }
  if (c.format == "csv") {
    Sink sink(c.out);
    auto& out = sink.get();
    out << "name,schedule,exact_match,avg_layers,speedup_exact,speedup_model" << (no_wall ? "" : ",wall_ms")
        << '\n';
    for (const auto& r : report.rows) {
      out << r.name << ",\"" << r.schedule << "\"," << r.exact_match << ',' << r.avg_layers << ','
          << r.speedup_exact << ',' << r.speedup_model;
      if (!no_wall) out << ',' << r.wall_ms;
      out << '\n';
    }
  } else {
    print_json(c, harness::to_json(report, !no_wall));
  }
  return 0;
}

std::vector<double> alpha_grid(const std::vector<double>& given, bool base_grid) {
  if (!given.empty()) return given;
  return base_grid ? harness::kDefaultAlphaGrid : harness::kExtendedAlphaGrid;
}

int cmd_grid(const Common& c, const DataOpts& data, const DecodeOpts& d, std::vector<double> starts,
             const std::vector<double>& alphas, bool base_grid, std::size_t tail_min, std::size_t workers) {
  const Model m = load_model_file(c.model);
  const Vocab vocab = load_vocab(c);
  const auto split = load_split(data, c.seed);
  if (starts.empty()) starts = harness::kDefaultStartGrid;
  const auto alpha = alpha_grid(alphas, base_grid);
  const auto r = harness::grid_search(m, vocab, split, starts, alpha, eval_settings(data, d, c.seed), tail_min, workers);
  if (c.format == "csv") {
    Sink sink(c.out);
    write_cells_csv(sink.get(), r);
  } else {
    print_json(c, harness::to_json(r));
  }
  return 0;
}

int cmd_transfer(const Common& c, const std::string& small, const std::string& large, const DataOpts& data,
                 const DecodeOpts& d, std::vector<double> starts, const std::vector<double>& alphas,
                 bool base_grid) {
  const Model sm = load_model_file(small);
  const Model lg = load_model_file(large);
  const Vocab vocab = load_vocab(c);
  const auto split = load_split(data, c.seed);
  if (starts.empty()) starts = harness::kDefaultStartGrid;
  const auto alpha = alpha_grid(alphas, base_grid);
  const auto r = harness::transfer_check(sm, lg, vocab, split, starts, alpha, eval_settings(data, d, c.seed));
  if (c.format == "csv") {
    Sink sink(c.out);
    sink.get() << "small_start,small_alpha,large_start,large_alpha,large_rank,cells\n"
               << r.small_best.start << ',' << r.small_best.alpha << ',' << r.large_best.start << ','
               << r.large_best.alpha << ',' << r.large_rank << ',' << r.cells << '\n';
  } else {
    print_json(c, harness::to_json(r));
  }
  return 0;
}

int cmd_oracle(const Common& c, const PromptOpts& po) {
  const Model m = load_model_file(c.model);
  const Vocab vocab = load_vocab(c);
  const auto prompts = collect_prompts(po, vocab, m, c.seed);
  Sink sink(c.out);
  if (c.format == "csv") {
    sink.get() << "sequence,";
    bool header = true;
    for (std::size_t s = 0; s < prompts.size(); ++s) {
      std::ostringstream one;
      write_saturation_csv(one, saturation_depth(m, prompts[s]));
      std::string text = one.str();
      const auto nl = text.find('\n');
      if (header) sink.get() << text.substr(0, nl + 1);
      header = false;
      std::istringstream lines(text.substr(nl + 1));
      std::string line;
      while (std::getline(lines, line)) sink.get() << s << ',' << line << '\n';
    }
    return 0;
  }
  ordered_json j = ordered_json::array();
  for (const auto& p : prompts) {
    const auto recs = saturation_depth(m, p);
    const auto sum = summarize_saturation(recs, m.config.n_layers);
    ordered_json seq;
    seq["length"] = p.size();
    seq["mean_depth"] = sum.mean_depth;
    seq["mean_confidence"] = sum.mean_confidence;
    seq["fraction_saturated"] = sum.fraction_saturated;
    seq["tokens"] = ordered_json::array();
    for (const auto& r : recs)
      seq["tokens"].push_back({{"token_pos", r.position},
                               {"depth", r.saturation_depth},
                               {"confidence", r.confidence},
                               {"first_touch_depth", r.first_touch_depth}});
    j.push_back(seq);
  }
  sink.get() << j.dump(2) << '\n';
  return 0;
}

struct Checkpoint {
  long long step = 0;
  fs::path path;
};

std::vector<Checkpoint> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open manifest " + path.string());
  std::vector<Checkpoint> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("checkpoints")) {
      Checkpoint c{e.at("step").get<long long>(), e.at("path").get<std::string>()};
      if (c.path.is_relative()) c.path = path.parent_path() / c.path;
      out.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, "manifest " + path.string() + ": " + e.what());
  }
  if (out.empty()) throw Error(ErrorCode::ConfigInvalid, "manifest lists no checkpoints");
  return out;
}

ordered_json flow_json(const std::vector<FlowRecord>& recs) {
  ordered_json a = ordered_json::array();
  for (const auto& r : recs) {
    ordered_json e;
    e["layer_pair"] = std::to_string(r.layer) + "-" + std::to_string(r.layer + 1);
    e["stream"] = to_string(r.stream);
    e["cosine"] = r.cosine ? ordered_json(*r.cosine) : ordered_json(nullptr);
    e["euclidean"] = r.euclidean;
    e["zero_norm_positions"] = r.zero_norm_positions;
    a.push_back(e);
  }
  return a;
}

int cmd_flow(const Common& c, const std::string& manifest, const PromptOpts& po) {
  std::vector<Checkpoint> cks;
  if (!manifest.empty()) {
    cks = read_manifest(manifest);
  } else {
    if (c.model.empty()) throw Error(ErrorCode::ConfigInvalid, "--model or --manifest is required");
    cks.push_back({0, c.model});
  }
  const Vocab vocab = load_vocab(c);
  Sink sink(c.out);
  ordered_json j = ordered_json::array();
  bool header = true;
  for (const auto& ck : cks) {
    const Model m = load_model_file(ck.path);
    const auto prompts = collect_prompts(po, vocab, m, c.seed);
    for (const auto& p : prompts) {
      const auto recs = layer_flow(m, p);
      if (c.format == "csv") {
        write_flow_csv(sink.get(), recs, manifest.empty() ? std::nullopt : std::optional<long long>(ck.step),
                       header);
        header = false;
      } else {
        ordered_json e;
        if (!manifest.empty()) e["checkpoint_step"] = ck.step;
        e["length"] = p.size();
        e["pairs"] = flow_json(recs);
        j.push_back(e);
      }
    }
  }
  if (c.format != "csv") sink.get() << j.dump(2) << '\n';
  return 0;
}

int cmd_errorprop(const Common& c, const DataOpts& data, const DecodeOpts& d, const std::vector<std::size_t>& t0s,
                  const std::vector<std::size_t>& ks) {
  const Model m = load_model_file(c.model);
  const Vocab vocab = load_vocab(c);
  const auto split = load_split(data, c.seed);
  const auto settings = eval_settings(data, d, c.seed);
  const auto prompts = harness::build_prompts(vocab, split.test, split.shots_pool, settings);
  std::vector<std::vector<TokenId>> refs;
  for (const auto& e : split.test) refs.push_back(vocab.encode(e.target + "\n"));
  auto params = decode_params(d, c.seed);
  params.eos_token = vocab.newline();
  const auto pts = error_prop_run(m, prompts, t0s, ks, params, std::span<const std::vector<TokenId>>(refs));
  Sink sink(c.out);
  if (c.format == "csv") {
    write_error_prop_csv(sink.get(), pts);
  } else {
    ordered_json j = ordered_json::array();
    for (const auto& p : pts) j.push_back({{"t0", p.t0}, {"k", p.k}, {"agreement", p.agreement}, {"metric", p.metric}});
    sink.get() << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_schedule_table(const Common& c, const ScheduleOpts& so, std::size_t layers, std::size_t steps) {
  if (!c.model.empty()) layers = load_model_file(c.model).config.n_layers;
  if (layers == 0 && so.spec.find("L=") == std::string::npos)
    throw Error(ErrorCode::ConfigInvalid, "--layers, --model or L= in --schedule is required");
  const auto s = resolve_schedule(so, layers);
  const auto table = schedule_table(s, steps);
  Sink sink(c.out);
  if (c.format == "csv") {
    sink.get() << "step,kept_count,head_end,tail_begin\n";
    for (std::size_t i = 0; i < table.size(); ++i)
      sink.get() << i << ',' << table[i].size() << ',' << table[i].head_end() << ',' << table[i].tail_begin() << '\n';
  } else {
    ordered_json j;
    j["schedule"] = serialize_schedule(s);
    j["steps"] = ordered_json::array();
    for (std::size_t i = 0; i < table.size(); ++i)
      j["steps"].push_back({{"step", i},
                            {"kept_count", table[i].size()},
                            {"kept_set", {{0, table[i].head_end()}, {table[i].tail_begin(), table[i].n_layers()}}}});
    sink.get() << j.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-skipping decoding engine"};
  app.require_subcommand(1);

  Common common;
  ScheduleOpts sched;
  DecodeOpts dec;
  DataOpts data;
  PromptOpts prompts;

  auto* init = app.add_subcommand("init-random", "write a randomly initialised weight file");
  ModelConfig cfg{Vocab::default_vocab().size(), 64, 8, 4, 256, 256, true};
  bool untied = false;
  float scale = 1.0f;
  init->add_option("--vocab-size", cfg.vocab_size);
  init->add_option("--d-model", cfg.d_model);
  init->add_option("--layers", cfg.n_layers);
  init->add_option("--heads", cfg.n_heads);
  init->add_option("--d-ff", cfg.d_ff);
  init->add_option("--max-seq", cfg.max_seq);
  init->add_flag("--untied", untied, "separate lm_head matrix");
  init->add_option("--scale", scale, "projection init scale");
  init->add_option("--out", common.out, "output path")->required();
  init->add_option("--seed", common.seed);

  auto* gen = app.add_subcommand("generate", "greedy generation with a depth schedule");
  add_common(gen, common);
  add_schedule(gen, sched);
  add_decode(gen, dec);
  add_prompts(gen, prompts);
  bool text = false;
  std::optional<long long> eos;
  gen->add_flag("--text", text, "print decoded completions instead of traces");
  gen->add_option("--eos", eos, "stop token id");

  auto* bench = app.add_subcommand("bench", "full-depth baseline against configured schedules");
  add_common(bench, common, false);
  add_schedule(bench, sched);
  add_data(bench, data);
  add_decode(bench, dec);
  std::string config_path;
  std::vector<std::string> specs;
  bool no_wall = false;
  bench->add_option("--config", config_path, "experiment config JSON");
  bench->add_option("--schedules", specs, "additional schedule specs");
  bench->add_flag("--no-wall", no_wall, "omit wall-clock fields");
  bench->callback([&] {
    if (!config_path.empty() && !common.model.empty())
      throw CLI::ValidationError("--config", "--config and --model are exclusive");
  });

  std::vector<double> starts, alphas;
  bool base_grid = false;
  std::size_t workers = 0;
  auto* grid = app.add_subcommand("grid", "(start, alpha) grid search");
  add_common(grid, common);
  add_data(grid, data);
  add_decode(grid, dec);
  grid->add_option("--starts", starts, "start fractions");
  grid->add_option("--alphas", alphas, "alpha values");
  grid->add_flag("--base-grid", base_grid, "28-cell alpha grid without 0.99");
  grid->add_option("--tail-min", sched.tail_min);
  grid->add_option("--workers", workers, "worker threads (0: all cores)");

  auto* transfer = app.add_subcommand("transfer", "rank of the small model's best cell in the large grid");
  std::string small, large;
  add_common(transfer, common, false);
  add_data(transfer, data);
  add_decode(transfer, dec);
  transfer->add_option("--small", small)->required();
  transfer->add_option("--large", large)->required();
  transfer->add_option("--starts", starts);
  transfer->add_option("--alphas", alphas);
  transfer->add_flag("--base-grid", base_grid);

  auto* oracle = app.add_subcommand("oracle", "per-token saturation depth");
  add_common(oracle, common);
  add_prompts(oracle, prompts);

  auto* flow = app.add_subcommand("flow", "similarity of consecutive layers");
  std::string manifest;
  add_common(flow, common, false);
  add_prompts(flow, prompts);
  flow->add_option("--manifest", manifest, "checkpoint manifest JSON");

  auto* errorprop = app.add_subcommand("errorprop", "agreement when the top k layers are skipped from step t0");
  std::vector<std::size_t> t0s = {0, 5, 10, 20}, ks = {1};
  add_common(errorprop, common);
  add_data(errorprop, data);
  add_decode(errorprop, dec);
  errorprop->add_option("--t0", t0s, "perturbation start steps");
  errorprop->add_option("--k", ks, "skipped top layers");

  auto* table = app.add_subcommand("schedule-table", "kept layers per step");
  std::size_t layers = 0, steps = 64;
  add_common(table, common, false);
  add_schedule(table, sched);
  table->add_option("--layers", layers, "layer count");
  table->add_option("--steps", steps, "steps to tabulate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*init) {
      cfg.tied_lm_head = !untied;
      return cmd_init_random(common, cfg, scale);
    }
    if (*gen) return cmd_generate(common, sched, dec, prompts, text, eos);
    if (*bench) return cmd_bench(common, config_path, specs, sched, data, dec, no_wall);
    if (*grid) return cmd_grid(common, data, dec, starts, alphas, base_grid, sched.tail_min, workers);
    if (*transfer) return cmd_transfer(common, small, large, data, dec, starts, alphas, base_grid);
    if (*oracle) return cmd_oracle(common, prompts);
    if (*flow) return cmd_flow(common, manifest, prompts);
    if (*errorprop) return cmd_errorprop(common, data, dec, t0s, ks);
    if (*table) return cmd_schedule_table(common, sched, layers, steps);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return is_config_error(e.code()) ? kExitConfig : kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
