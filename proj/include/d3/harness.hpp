#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "d3/engine.hpp"
#include "d3/kv_cache.hpp"
#include "d3/model.hpp"
#include "d3/schedule.hpp"

namespace d3::harness {

// Character-level vocabulary. Entry i is the text of token i; entries 0 and
// 1 are the <pad> and <eos> specials.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> entries);

  // <pad>, <eos>, "\n", " ", 0-9, a-z, then "Q", "A", ":", "+", "-", "*", "=".
  static Vocab default_vocab();
  // JSON array of strings.
  static Vocab load(const std::filesystem::path& path);

  std::size_t size() const { return entries_.size(); }
  TokenId pad() const { return 0; }
  TokenId eos() const { return 1; }
  TokenId newline() const;

  std::vector<TokenId> encode(std::string_view text) const;
  // Stops at <eos>; other specials are dropped.
  std::string decode(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> entries_;
  std::array<int, 256> by_char_{};
};

struct Example {
  std::string input;
  std::string target;
  bool operator==(const Example&) const = default;
};

enum class Task { Sort, ModArith };
Task parse_task(std::string_view name);
std::string_view to_string(Task task);

// Reference answer for a task input ("cab" -> "abc", "3+4 mod 5" -> "2").
std::string solve(Task task, std::string_view input);

// Deterministic synthetic examples; test inputs never occur in train.
struct Dataset {
  std::vector<Example> train;
  std::vector<Example> test;
};
Dataset make_dataset(Task task, std::size_t n_train, std::size_t n_test, std::uint64_t seed);

// JSON-lines {"input": ..., "target": ...}.
std::vector<Example> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples);
// <dir>/train.jsonl and <dir>/test.jsonl.
Dataset load_dataset_dir(const std::filesystem::path& dir);

struct Split {
  std::vector<Example> validation;
  std::vector<Example> shots_pool;  // train minus validation
  std::vector<Example> test;
};

// Validation is the first ceil(fraction * |train|) entries of the train set
// shuffled under `seed`. Throws EmptySplit / ConfigInvalid.
Split make_split(const Dataset& data, double validation_fraction, std::uint64_t seed);

// "Q: {x}\nA: {y}\n\n" per shot, then "Q: {query}\nA: ".
std::string few_shot_prompt(std::span<const Example> shots, std::string_view query);

// 1 iff the strings are byte-equal once trailing whitespace is stripped.
int exact_match(std::string_view prediction, std::string_view reference);

struct EvalSettings {
  std::size_t shots = 3;
  std::size_t max_new_tokens = 16;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  FillPolicy fill_policy = FillPolicy::TensorCopy;
};

struct EvalResult {
  double exact_match = 0.0;
  double avg_layers = 0.0;
  double wall_ms = 0.0;
  std::vector<std::string> predictions;
  std::vector<GenTrace> traces;
};

// Encoded few-shot prompts; shots for example j are drawn from
// `shots_pool` under (seed, j).
std::vector<std::vector<TokenId>> build_prompts(const Vocab& vocab, std::span<const Example> examples,
                                                std::span<const Example> shots_pool,
                                                const EvalSettings& settings);

// Few-shot greedy evaluation over build_prompts; generation stops at the
// newline that closes the answer.
EvalResult evaluate(const Model& model, const Vocab& vocab, const DepthSchedule& schedule,
                    std::span<const Example> examples, std::span<const Example> shots_pool,
                    const EvalSettings& settings);

struct GridCell {
  double start = 0.0;
  double alpha = 0.0;
  double validation_metric = 0.0;
  double test_metric = 0.0;
  double avg_layers = 0.0;       // on validation
  double test_avg_layers = 0.0;
};

struct HPResult {
  std::vector<GridCell> cells;  // start-major grid order
  std::size_t best = 0;
};

inline const std::vector<double> kDefaultStartGrid = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
inline const std::vector<double> kDefaultAlphaGrid = {0.8, 0.9, 0.999, 0.9999};
// Default grid plus 0.99.
inline const std::vector<double> kExtendedAlphaGrid = {0.8, 0.9, 0.99, 0.999, 0.9999};

// Orders cells best-first: validation metric descending, then fewer
// average layers, then grid order.
std::vector<std::size_t> rank_cells(const std::vector<GridCell>& cells);

// Every (start, alpha) cell is evaluated on validation and test; the best
// cell is the first in rank_cells order. Cells run on up to `workers`
// threads (0 = hardware concurrency).
HPResult grid_search(const Model& model, const Vocab& vocab, const Split& split,
                     std::span<const double> start_grid, std::span<const double> alpha_grid,
                     const EvalSettings& settings, std::size_t tail_min = 1,
                     std::size_t workers = 0);

nlohmann::ordered_json to_json(const HPResult& result);

struct ExperimentConfig {
  std::filesystem::path model_path;
  Task task = Task::Sort;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> vocab_path;
  std::vector<std::string> schedules;  // schedule specs, L taken from the model
  EvalSettings eval;
  double validation_fraction = 0.10;
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  std::optional<std::filesystem::path> out;

  void validate() const;
};

// Fields are optional except "model"; unknown keys are rejected.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ReportRow {
  std::string name;
  std::string schedule;
  double exact_match = 0.0;
  double avg_layers = 0.0;
  double speedup_exact = 0.0;
  double speedup_model = 0.0;
  double wall_ms = 0.0;
};

struct MetricsReport {
  std::string task;
  std::size_t n_layers = 0;
  std::size_t n_examples = 0;
  std::vector<ReportRow> rows;  // full-depth baseline first
  double total_wall_ms = 0.0;
};

// Full-depth baseline plus every configured schedule on the test split.
MetricsReport run_benchmark(const ExperimentConfig& config);
MetricsReport run_benchmark(const Model& model, const Vocab& vocab, const Split& split,
                            std::string_view task_name, std::span<const DepthSchedule> schedules,
                            const EvalSettings& settings);

nlohmann::ordered_json to_json(const MetricsReport& report, bool include_wall = true);

struct TransferReport {
  GridCell small_best;
  GridCell large_best;
  std::size_t large_rank = 0;  // 1-based rank of small_best's cell in the large grid
  std::size_t cells = 0;
  HPResult small_grid;
  HPResult large_grid;
};

TransferReport transfer_check(const Model& small_model, const Model& large_model,
                              const Vocab& vocab, const Split& split,
                              std::span<const double> start_grid,
                              std::span<const double> alpha_grid, const EvalSettings& settings);

nlohmann::ordered_json to_json(const TransferReport& report);

// Loads the dataset named by the config: data_dir when set, otherwise the
// built-in generator.
Dataset load_or_make_dataset(const ExperimentConfig& config);

}  // namespace d3::harness
