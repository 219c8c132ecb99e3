#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace asa {

/// One training step. Scalars keep insertion order when serialized.
struct MetricsRecord {
    std::size_t step = 0;
    std::vector<std::pair<std::string, double>> values;
    std::vector<double> masked_fraction;  // per layer; empty when the step used no gates
    double wall_ms = 0.0;                 // not serialized; see MetricsWriter

    void set(const std::string& key, double value);
    std::optional<double> get(const std::string& key) const;
    double at(const std::string& key) const;

    nlohmann::ordered_json to_json() const;
    static MetricsRecord from_json(const nlohmann::ordered_json& j);
};

/// Append-only JSONL writer enforcing strictly increasing steps. Wall times go
/// to a separate timing file so the metrics stream stays byte-reproducible.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path,
                           const std::optional<std::filesystem::path>& timing_path = std::nullopt);

    void append(const MetricsRecord& record);
    std::size_t records_written() const { return count_; }

private:
    std::ofstream out_;
    std::ofstream timing_;
    std::optional<std::size_t> last_step_;
    std::size_t count_ = 0;
};

/// Parses a metrics JSONL file; errors name the offending line.
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

}  // namespace asa
