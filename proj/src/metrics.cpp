#include "asa/metrics.hpp"

#include <stdexcept>

namespace asa {

void MetricsRecord::set(const std::string& key, double value) {
    for (auto& [k, v] : values) {
        if (k == key) {
            v = value;
            return;
        }
    }
    values.emplace_back(key, value);
}

std::optional<double> MetricsRecord::get(const std::string& key) const {
    for (const auto& [k, v] : values) {
        if (k == key) {
            return v;
        }
    }
    return std::nullopt;
}

double MetricsRecord::at(const std::string& key) const {
    if (auto v = get(key)) {
        return *v;
    }
    throw std::out_of_range("MetricsRecord: no field '" + key + "'");
}

nlohmann::ordered_json MetricsRecord::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    for (const auto& [k, v] : values) {
        j[k] = v;
    }
    if (!masked_fraction.empty()) {
        j["masked_fraction"] = masked_fraction;
    }
    return j;
}

MetricsRecord MetricsRecord::from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) {
        throw std::invalid_argument("expected a JSON object");
    }
    if (!j.contains("step") || !j["step"].is_number_unsigned()) {
        throw std::invalid_argument("missing or non-integer 'step'");
    }
    MetricsRecord r;
    r.step = j["step"].get<std::size_t>();
    for (const auto& [k, v] : j.items()) {
        if (k == "step") {
            continue;
        }
        if (k == "masked_fraction") {
            if (!v.is_array()) {
                throw std::invalid_argument("'masked_fraction' must be an array");
            }
            for (const auto& x : v) {
                if (!x.is_number()) {
                    throw std::invalid_argument("'masked_fraction' entries must be numbers");
                }
                r.masked_fraction.push_back(x.get<double>());
            }
        } else if (v.is_number()) {
            r.values.emplace_back(k, v.get<double>());
        } else {
            throw std::invalid_argument("field '" + k + "' is not a number");
        }
    }
    return r;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path,
                             const std::optional<std::filesystem::path>& timing_path)
    : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) {
        throw std::runtime_error("cannot open metrics file " + path.string());
    }
    if (timing_path) {
        timing_.open(*timing_path, std::ios::binary | std::ios::trunc);
        if (!timing_) {
            throw std::runtime_error("cannot open timing file " + timing_path->string());
        }
    }
}

void MetricsWriter::append(const MetricsRecord& record) {
    if (last_step_ && record.step <= *last_step_) {
        throw std::invalid_argument("MetricsWriter: step " + std::to_string(record.step) +
                                    " does not follow step " + std::to_string(*last_step_));
    }
    last_step_ = record.step;
    out_ << record.to_json().dump() << '\n';
    out_.flush();
    if (timing_.is_open()) {
        nlohmann::ordered_json t;
        t["step"] = record.step;
        t["wall_ms"] = record.wall_ms;
        timing_ << t.dump() << '\n';
    }
    ++count_;
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open metrics file " + path.string());
    }
    std::vector<MetricsRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            MetricsRecord r = MetricsRecord::from_json(nlohmann::ordered_json::parse(line));
            if (!out.empty() && r.step <= out.back().step) {
                throw std::invalid_argument("step " + std::to_string(r.step) + " is not increasing");
            }
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace asa
