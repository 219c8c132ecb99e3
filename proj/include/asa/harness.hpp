#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asa/config.hpp"

namespace asa {

namespace fs = std::filesystem;

// Files written into a run directory.
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kTimingFile = "timing.jsonl";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kConfigFile = "config.json";

/// A trained model restored from a checkpoint, with its adversary when present.
struct LoadedRun {
    RunConfig cfg;
    Model model;
    std::optional<AdversaryParams> adversary;
};

LoadedRun load_run(const fs::path& checkpoint);

struct TrainOptions {
    bool write_checkpoint = true;
    bool write_predictions = true;
    bool verbose = false;           // progress lines on stderr
    double mask_tail_fraction = 0.2;
};

/// Trains the configured strategy to completion and writes metrics.jsonl,
/// timing.jsonl, summary.json, config.json, predictions_<split>.csv and
/// checkpoint.bin into out_dir. Returns the summary.
nlohmann::ordered_json run_train(const RunConfig& cfg, const fs::path& out_dir, const TrainOptions& options = {});

/// Reloads a checkpoint, evaluates every split of its task and writes
/// eval.json plus predictions into out_dir.
nlohmann::ordered_json run_eval(const fs::path& checkpoint, const fs::path& out_dir);

/// Accuracy recomputed from a predictions_<split>.csv file.
double accuracy_from_predictions(const fs::path& csv);

// --- Benchmark ----------------------------------------------------------------

struct BenchRow {
    std::size_t seq_len = 0;
    std::string strategy;
    double median_ms = 0.0;
    std::size_t steps = 0;
};

struct BenchOptions {
    std::vector<std::size_t> seq_lens;
    std::size_t steps = 50;
    std::size_t warmup_steps = 3;
    std::vector<std::size_t> embed_at_k = {1, 2};
};

/// Median wall time per training step for none, asa and embed_at(k) at each
/// length. The model is sized to the largest length; data is the spurious task.
std::vector<BenchRow> run_bench(const RunConfig& cfg, const BenchOptions& options);
void write_bench_csv(const fs::path& path, const std::vector<BenchRow>& rows);

// --- Attention export ---------------------------------------------------------

struct AttentionExport {
    std::vector<std::vector<double>> clean;   // [L, L] for the requested head
    std::vector<std::vector<double>> biased;
    std::vector<std::vector<double>> gate;    // [L, L] in {0, 1}
    bool adversary_present = false;
};

/// Runs the checkpointed model on one sequence, samples the adversary's gates
/// (all-keep when the checkpoint has no adversary) and extracts one head.
/// Throws std::out_of_range when layer or head is out of range.
AttentionExport export_attention(const fs::path& checkpoint, const std::vector<int>& tokens, std::size_t layer,
                                 std::size_t head, std::uint64_t seed);

/// Writes clean_topology.csv, biased_topology.csv, gate.csv and attention.json.
void write_attention_export(const fs::path& out_dir, const AttentionExport& ex, const std::vector<int>& tokens,
                            std::size_t layer, std::size_t head, const fs::path& checkpoint);

void write_matrix_csv(const fs::path& path, const std::vector<std::vector<double>>& m);
std::vector<std::vector<double>> read_matrix_csv(const fs::path& path);

// --- Mask reporting -----------------------------------------------------------

struct MaskReport {
    std::vector<double> per_layer;         // mean masked fraction over the aggregated tail
    std::size_t n_records = 0;
    std::size_t n_aggregated = 0;
    std::vector<std::pair<std::size_t, double>> schedule;  // step, overall masked fraction
};

/// Averages per-layer masked fractions over the final tail_fraction of the
/// records (at least one). Records without gates count as all-keep.
MaskReport report_masks(const std::vector<MetricsRecord>& records, double tail_fraction = 0.2);
MaskReport report_masks(const fs::path& metrics_path, double tail_fraction = 0.2);

/// Writes mask_report.json, mask_report.csv and schedule.jsonl.
void write_mask_report(const fs::path& out_dir, const MaskReport& report);

}  // namespace asa
