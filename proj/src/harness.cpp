#include "d3/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "d3/analysis.hpp"
#include "d3/error.hpp"

namespace d3::harness {

// ---------------------------------------------------------------- vocab

Vocab::Vocab(std::vector<std::string> entries) : entries_(std::move(entries)) {
  if (entries_.size() < 3) throw Error(ErrorCode::ConfigInvalid, "vocab needs <pad>, <eos> and text");
  by_char_.fill(-1);
  for (std::size_t i = 2; i < entries_.size(); ++i) {
    if (entries_[i].size() != 1)
      throw Error(ErrorCode::ConfigInvalid, "vocab entry " + std::to_string(i) + " is not one character");
    auto& slot = by_char_[static_cast<unsigned char>(entries_[i][0])];
    if (slot != -1)
      throw Error(ErrorCode::ConfigInvalid, "duplicate vocab entry '" + entries_[i] + "'");
    slot = static_cast<int>(i);
  }
}

Vocab Vocab::default_vocab() {
  std::vector<std::string> e = {"<pad>", "<eos>", "\n", " "};
  for (char c = '0'; c <= '9'; ++c) e.emplace_back(1, c);
  for (char c = 'a'; c <= 'z'; ++c) e.emplace_back(1, c);
  for (char c : std::string_view("QA:+-*=")) e.emplace_back(1, c);
  return Vocab(std::move(e));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open vocab " + path.string());
  try {
    return Vocab(nlohmann::json::parse(in).get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, "vocab " + path.string() + ": " + e.what());
  }
}

TokenId Vocab::newline() const {
  const int id = by_char_['\n'];
  return id < 0 ? eos() : static_cast<TokenId>(id);
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char c : text) {
    const int id = by_char_[static_cast<unsigned char>(c)];
    if (id < 0) throw Error(ErrorCode::TokenOutOfRange, std::string("character '") + c + "' not in vocab");
    out.push_back(static_cast<TokenId>(id));
  }
  return out;
}

std::string Vocab::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (t == eos()) break;
    if (t < 2 || t >= entries_.size()) continue;
    out += entries_[t];
  }
  return out;
}

// ---------------------------------------------------------------- tasks

Task parse_task(std::string_view name) {
  if (name == "sort") return Task::Sort;
  if (name == "modarith") return Task::ModArith;
  throw Error(ErrorCode::ConfigInvalid, "unknown task '" + std::string(name) + "'");
}

std::string_view to_string(Task task) {
  return task == Task::Sort ? "sort" : "modarith";
}

namespace {

int positive_mod(int x, int m) { return ((x % m) + m) % m; }

// "a op b [op c ...] mod m" -> running results separated by spaces.
std::string solve_modarith(std::string_view input) {
  const auto bad = [&] {
    return Error(ErrorCode::ConfigInvalid, "malformed modarith input '" + std::string(input) + "'");
  };
  const auto mod_at = input.rfind(" mod ");
  if (mod_at == std::string_view::npos) throw bad();
  const std::string_view expr = input.substr(0, mod_at);
  const std::string_view mod_text = input.substr(mod_at + 5);
  if (mod_text.empty() || !std::all_of(mod_text.begin(), mod_text.end(), ::isdigit)) throw bad();
  const int m = std::stoi(std::string(mod_text));
  if (m < 1) throw bad();

  std::vector<int> operands;
  std::vector<char> ops;
  std::string digits;
  for (char c : expr) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digits += c;
    } else if (c == '+' || c == '-' || c == '*') {
      if (digits.empty()) throw bad();
      operands.push_back(std::stoi(digits));
      digits.clear();
      ops.push_back(c);
    } else {
      throw bad();
    }
  }
  if (digits.empty() || ops.empty()) throw bad();
  operands.push_back(std::stoi(digits));

  std::string out;
  int acc = operands[0];
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const int b = operands[i + 1];
    acc = ops[i] == '+' ? acc + b : ops[i] == '-' ? acc - b : acc * b;
    acc = positive_mod(acc, m);
    if (!out.empty()) out += ' ';
    out += std::to_string(acc);
  }
  return out;
}

std::string random_input(Task task, std::mt19937_64& rng) {
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::string s;
  if (task == Task::Sort) {
    const int len = uniform(3, 8);
    for (int i = 0; i < len; ++i) s += static_cast<char>('a' + uniform(0, 25));
    return s;
  }
  const int n_ops = uniform(1, 3);
  s += std::to_string(uniform(0, 9));
  for (int i = 0; i < n_ops; ++i) {
    s += "+-*"[uniform(0, 2)];
    s += std::to_string(uniform(0, 9));
  }
  s += " mod " + std::to_string(uniform(2, 9));
  return s;
}

}  // namespace

std::string solve(Task task, std::string_view input) {
  if (task == Task::Sort) {
    std::string s(input);
    std::sort(s.begin(), s.end());
    return s;
  }
  return solve_modarith(input);
}

Dataset make_dataset(Task task, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::set<std::string> seen;
  Dataset data;
  auto draw = [&](std::vector<Example>& into, std::size_t n) {
    std::size_t attempts = 0;
    while (into.size() < n) {
      if (++attempts > 100 * (n + 10))
        throw Error(ErrorCode::ConfigInvalid, "cannot draw enough distinct examples");
      auto input = random_input(task, rng);
      if (!seen.insert(input).second) continue;
      into.push_back({input, solve(task, input)});
    }
  };
  draw(data.train, n_train);
  draw(data.test, n_test);
  return data;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("input").get<std::string>(), j.at("target").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Io, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& e : examples) {
    nlohmann::ordered_json j;
    j["input"] = e.input;
    j["target"] = e.target;
    out << j.dump() << '\n';
  }
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  return {load_jsonl(dir / "train.jsonl"), load_jsonl(dir / "test.jsonl")};
}

Split make_split(const Dataset& data, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw Error(ErrorCode::ConfigInvalid, "validation fraction must lie in (0, 1)");
  if (data.train.empty() || data.test.empty())
    throw Error(ErrorCode::EmptySplit, "train and test sets must be non-empty");

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::ceil(validation_fraction * static_cast<double>(data.train.size())));

  Split split;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_val ? split.validation : split.shots_pool).push_back(data.train[order[i]]);
  split.test = data.test;
  if (split.validation.empty()) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  std::set<std::string> val_inputs;
  for (const auto& e : split.validation) val_inputs.insert(e.input);
  for (const auto& e : split.test)
    if (val_inputs.count(e.input))
      throw Error(ErrorCode::ConfigInvalid, "validation and test share input '" + e.input + "'");
  return split;
}

std::string few_shot_prompt(std::span<const Example> shots, std::string_view query) {
  std::string out;
  for (const auto& s : shots) out += "Q: " + s.input + "\nA: " + s.target + "\n\n";
  out += "Q: ";
  out += query;
  out += "\nA: ";
  return out;
}

int exact_match(std::string_view prediction, std::string_view reference) {
  auto strip = [](std::string_view s) {
    const auto end = s.find_last_not_of(" \t\r\n\v\f");
    return end == std::string_view::npos ? std::string_view() : s.substr(0, end + 1);
  };
  return strip(prediction) == strip(reference) ? 1 : 0;
}

// ------------------------------------------------------------ evaluation

std::vector<std::vector<TokenId>> build_prompts(const Vocab& vocab, std::span<const Example> examples,
                                                std::span<const Example> shots_pool,
                                                const EvalSettings& settings) {
  if (settings.shots > shots_pool.size())
    throw Error(ErrorCode::EmptySplit, "need " + std::to_string(settings.shots) +
                                           " shots, pool has " + std::to_string(shots_pool.size()));
  std::vector<std::vector<TokenId>> prompts;
  prompts.reserve(examples.size());
  for (std::size_t j = 0; j < examples.size(); ++j) {
    std::mt19937_64 rng(settings.seed * 0x9E3779B97F4A7C15ULL + j);
    std::vector<Example> shots;
    std::sample(shots_pool.begin(), shots_pool.end(), std::back_inserter(shots), settings.shots, rng);
    std::shuffle(shots.begin(), shots.end(), rng);
    prompts.push_back(vocab.encode(few_shot_prompt(shots, examples[j].input)));
  }
  return prompts;
}

EvalResult evaluate(const Model& model, const Vocab& vocab, const DepthSchedule& schedule,
                    std::span<const Example> examples, std::span<const Example> shots_pool,
                    const EvalSettings& settings) {
  if (examples.empty()) throw Error(ErrorCode::EmptySplit, "no examples to evaluate");
  if (vocab.size() > model.config.vocab_size)
    throw Error(ErrorCode::DimensionMismatch,
                "vocab has " + std::to_string(vocab.size()) + " entries, model only " +
                    std::to_string(model.config.vocab_size));
  if (settings.shots > shots_pool.size())
    throw Error(ErrorCode::EmptySplit, "need " + std::to_string(settings.shots) +
                                           " shots, pool has " + std::to_string(shots_pool.size()));

  const auto prompts = build_prompts(vocab, examples, shots_pool, settings);

  DecodeParams params;
  params.max_new_tokens = settings.max_new_tokens;
  params.batch_size = settings.batch_size;
  params.eos_token = vocab.newline();
  params.seed = settings.seed;
  params.fill_policy = settings.fill_policy;

  EvalResult result;
  result.traces = generate(model, schedule, prompts, params);
  double hits = 0.0;
  for (std::size_t j = 0; j < examples.size(); ++j) {
    const auto tokens = result.traces[j].tokens();
    std::string text = vocab.decode(tokens);
    if (const auto nl = text.find('\n'); nl != std::string::npos) text.resize(nl);
    hits += exact_match(text, examples[j].target);
    result.wall_ms += result.traces[j].wall_ms;
    result.predictions.push_back(std::move(text));
  }
  result.exact_match = hits / static_cast<double>(examples.size());
  result.avg_layers = avg_layers(result.traces);
  return result;
}

// ----------------------------------------------------------- grid search

std::vector<std::size_t> rank_cells(const std::vector<GridCell>& cells) {
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cells[a].validation_metric != cells[b].validation_metric)
      return cells[a].validation_metric > cells[b].validation_metric;
    return cells[a].avg_layers < cells[b].avg_layers;
  });
  return order;
}

namespace {

// Runs fn(i) for i in [0, n) on a bounded pool; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

HPResult grid_search(const Model& model, const Vocab& vocab, const Split& split,
                     std::span<const double> start_grid, std::span<const double> alpha_grid,
                     const EvalSettings& settings, std::size_t tail_min, std::size_t workers) {
  if (start_grid.empty() || alpha_grid.empty())
    throw Error(ErrorCode::EmptyGrid, "start and alpha grids must be non-empty");
  if (split.validation.empty() || split.test.empty())
    throw Error(ErrorCode::EmptySplit, "validation and test splits must be non-empty");

  const std::size_t L = model.config.n_layers;
  HPResult result;
  std::vector<DepthSchedule> schedules;
  for (double start : start_grid)
    for (double alpha : alpha_grid) {
      schedules.push_back(make_d3(L, start, alpha, tail_min));
      result.cells.push_back({start, alpha});
    }

  parallel_for(result.cells.size(), workers, [&](std::size_t i) {
    const auto val = evaluate(model, vocab, schedules[i], split.validation, split.shots_pool, settings);
    const auto test = evaluate(model, vocab, schedules[i], split.test, split.shots_pool, settings);
    auto& cell = result.cells[i];
    cell.validation_metric = val.exact_match;
    cell.avg_layers = val.avg_layers;
    cell.test_metric = test.exact_match;
    cell.test_avg_layers = test.avg_layers;
  });
  result.best = rank_cells(result.cells).front();
  return result;
}

namespace {

nlohmann::ordered_json cell_json(const GridCell& c) {
  nlohmann::ordered_json j;
  j["start"] = c.start;
  j["alpha"] = c.alpha;
  j["validation_metric"] = c.validation_metric;
  j["test_metric"] = c.test_metric;
  j["avg_layers"] = c.avg_layers;
  j["test_avg_layers"] = c.test_avg_layers;
  return j;
}

}  // namespace

nlohmann::ordered_json to_json(const HPResult& result) {
  nlohmann::ordered_json j;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : result.cells) j["cells"].push_back(cell_json(c));
  j["best"] = cell_json(result.cells.at(result.best));
  const auto& starts = result.cells;
  const bool interior = result.cells.at(result.best).start != starts.front().start &&
                        result.cells.at(result.best).start != starts.back().start;
  j["best_start_interior"] = interior;
  return j;
}

// ------------------------------------------------------------ benchmark

void ExperimentConfig::validate() const {
  if (model_path.empty()) throw Error(ErrorCode::ConfigInvalid, "model path is required");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw Error(ErrorCode::ConfigInvalid, "validation_fraction must lie in (0, 1)");
  if (eval.max_new_tokens < 1 || eval.batch_size < 1)
    throw Error(ErrorCode::ConfigInvalid, "max_new and batch must be >= 1");
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  static const std::set<std::string> kKnown = {
      "model", "task",  "data_dir", "vocab",       "schedules",           "shots",   "max_new",
      "batch", "seed",  "fill_policy", "validation_fraction", "n_train", "n_test", "out"};
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kKnown.count(key)) throw Error(ErrorCode::ConfigInvalid, "unknown config key '" + key + "'");

  ExperimentConfig c;
  try {
    c.model_path = j.at("model").get<std::string>();
    if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
    if (j.contains("data_dir")) c.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("vocab")) c.vocab_path = j["vocab"].get<std::string>();
    if (j.contains("schedules")) c.schedules = j["schedules"].get<std::vector<std::string>>();
    if (j.contains("shots")) c.eval.shots = j["shots"].get<std::size_t>();
    if (j.contains("max_new")) c.eval.max_new_tokens = j["max_new"].get<std::size_t>();
    if (j.contains("batch")) c.eval.batch_size = j["batch"].get<std::size_t>();
    if (j.contains("seed")) c.eval.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("fill_policy")) c.eval.fill_policy = parse_fill_policy(j["fill_policy"].get<std::string>());
    if (j.contains("validation_fraction")) c.validation_fraction = j["validation_fraction"].get<double>();
    if (j.contains("n_train")) c.n_train = j["n_train"].get<std::size_t>();
    if (j.contains("n_test")) c.n_test = j["n_test"].get<std::size_t>();
    if (j.contains("out")) c.out = j["out"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  auto c = parse_experiment_config(j);
  const auto base = path.parent_path();
  auto resolve = [&](std::filesystem::path& p) {
    if (p.is_relative()) p = base / p;
  };
  resolve(c.model_path);
  if (c.data_dir) resolve(*c.data_dir);
  if (c.vocab_path) resolve(*c.vocab_path);
  if (c.out) resolve(*c.out);
  return c;
}

Dataset load_or_make_dataset(const ExperimentConfig& config) {
  if (config.data_dir) return load_dataset_dir(*config.data_dir);
  return make_dataset(config.task, config.n_train, config.n_test, config.eval.seed);
}

MetricsReport run_benchmark(const Model& model, const Vocab& vocab, const Split& split,
                            std::string_view task_name, std::span<const DepthSchedule> schedules,
                            const EvalSettings& settings) {
  const std::size_t L = model.config.n_layers;
  MetricsReport report;
  report.task = std::string(task_name);
  report.n_layers = L;
  report.n_examples = split.test.size();

  const auto baseline = evaluate(model, vocab, make_full(L), split.test, split.shots_pool, settings);
  auto add_row = [&](const DepthSchedule& s, const EvalResult& r) {
    const auto sp = speedup(r.traces, baseline.traces);
    report.rows.push_back({std::string(to_string(s.kind)), serialize_schedule(s), r.exact_match,
                           r.avg_layers, sp.exact, sp.model, r.wall_ms});
    report.total_wall_ms += r.wall_ms;
  };
  add_row(make_full(L), baseline);
  for (const auto& s : schedules) {
    if (s.n_layers != L)
      throw Error(ErrorCode::ConfigInvalid, "schedule '" + serialize_schedule(s) + "' has wrong L");
    add_row(s, evaluate(model, vocab, s, split.test, split.shots_pool, settings));
  }
  // Baseline stays first; the rest are ordered for stable output.
  std::stable_sort(report.rows.begin() + 1, report.rows.end(),
                   [](const ReportRow& a, const ReportRow& b) { return a.schedule < b.schedule; });
  return report;
}

MetricsReport run_benchmark(const ExperimentConfig& config) {
  config.validate();
  const Model model = load_model_file(config.model_path);
  const Vocab vocab = config.vocab_path ? Vocab::load(*config.vocab_path) : Vocab::default_vocab();
  const Split split = make_split(load_or_make_dataset(config), config.validation_fraction, config.eval.seed);
  std::vector<DepthSchedule> schedules;
  for (const auto& spec : config.schedules)
    schedules.push_back(parse_schedule(spec, model.config.n_layers));
  return run_benchmark(model, vocab, split, to_string(config.task), schedules, config.eval);
}

nlohmann::ordered_json to_json(const MetricsReport& report, bool include_wall) {
  nlohmann::ordered_json j;
  j["task"] = report.task;
  j["n_layers"] = report.n_layers;
  j["n_examples"] = report.n_examples;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["name"] = r.name;
    row["schedule"] = r.schedule;
    row["exact_match"] = r.exact_match;
    row["avg_layers"] = r.avg_layers;
    row["speedup_exact"] = r.speedup_exact;
    row["speedup_model"] = r.speedup_model;
    if (include_wall) row["wall_ms"] = r.wall_ms;
    j["rows"].push_back(row);
  }
  if (include_wall) j["total_wall_ms"] = report.total_wall_ms;
  return j;
}

// -------------------------------------------------------------- transfer

TransferReport transfer_check(const Model& small_model, const Model& large_model,
                              const Vocab& vocab, const Split& split,
                              std::span<const double> start_grid,
                              std::span<const double> alpha_grid, const EvalSettings& settings) {
  TransferReport report;
  report.small_grid = grid_search(small_model, vocab, split, start_grid, alpha_grid, settings);
  report.large_grid = grid_search(large_model, vocab, split, start_grid, alpha_grid, settings);
  report.small_best = report.small_grid.cells[report.small_grid.best];
  report.large_best = report.large_grid.cells[report.large_grid.best];
  report.cells = report.large_grid.cells.size();

  const auto order = rank_cells(report.large_grid.cells);
  for (std::size_t r = 0; r < order.size(); ++r)
    if (order[r] == report.small_grid.best) {
      report.large_rank = r + 1;
      break;
    }
  return report;
}

nlohmann::ordered_json to_json(const TransferReport& report) {
  nlohmann::ordered_json j;
  j["small_best"] = cell_json(report.small_best);
  j["large_best"] = cell_json(report.large_best);
  j["large_rank_of_small_best"] = report.large_rank;
  j["cells"] = report.cells;
  j["small_grid"] = to_json(report.small_grid);
  j["large_grid"] = to_json(report.large_grid);
  return j;
}

}  // namespace d3::harness
