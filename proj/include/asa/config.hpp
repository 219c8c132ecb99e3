#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "asa/adversary.hpp"
#include "asa/baselines.hpp"
#include "asa/data.hpp"
#include "asa/training.hpp"
#include "asa/transformer.hpp"

namespace asa {

/// Invalid configuration; the message names the offending field path.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class TaskName { spurious, mlm };
enum class StrategyName { none, asa, bernoulli, scheduled, magnitude, embed_at };

std::string to_string(TaskName t);
std::string to_string(StrategyName s);

struct StrategyConfig {
    StrategyName name = StrategyName::asa;
    MaskStrategy mask;               // bernoulli / scheduled / magnitude parameters
    std::string schedule_path;       // scheduled: JSONL file, used when mask.schedule is empty
    EmbedAtConfig embed_at;
};

struct OptimizerConfig {
    double lr = 1e-3;
    double adversary_lr = 1e-2;
    std::size_t steps = 2000;
    std::size_t batch_size = 32;
    double warmup_fraction = 0.06;
    AdamWConfig adamw;
};

struct RunConfig {
    TaskName task = TaskName::spurious;
    StrategyConfig strategy;
    ModelConfig model;
    AsaConfig asa;
    OptimizerConfig optimizer;
    SpuriousTaskConfig spurious;
    ToyCorpusConfig corpus;
    std::uint64_t seed = 0;          // model init, batch order, gate and dropout noise
    std::size_t eval_batch_size = 64;

    /// Cross-field checks (vocabulary and sequence sizes agree, ranges).
    void validate() const;
};

/// Parses a RunConfig; every field is optional, unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& cfg);

}  // namespace asa
