#include "asa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace asa {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {
constexpr const char* kFormat = "asa-checkpoint";
constexpr int kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const NamedParams& params) {
    nlohmann::json manifest;
    manifest["format"] = kFormat;
    manifest["version"] = kVersion;
    manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params) {
        manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset}});
        offset += t.numel() * sizeof(double);
    }
    manifest["data_bytes"] = offset;

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    }
    const std::string header = manifest.dump() + "\n";
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : params) {
        os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) {
        throw std::runtime_error("save_checkpoint: write failed for " + path.string());
    }
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("read_checkpoint: cannot open " + path.string());
    }
    std::string header;
    std::getline(is, header);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_checkpoint: malformed manifest in " + path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
        throw std::runtime_error("read_checkpoint: " + path.string() + " is not an asa-checkpoint v1 file");
    }
    const auto data_bytes = manifest.at("data_bytes").get<std::size_t>();
    std::vector<char> blob(data_bytes);
    is.read(blob.data(), static_cast<std::streamsize>(data_bytes));
    if (static_cast<std::size_t>(is.gcount()) != data_bytes) {
        throw std::runtime_error("read_checkpoint: truncated data section in " + path.string());
    }

    CheckpointData out;
    out.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
        if (entry.value("dtype", "") != "f64") {
            throw std::runtime_error("read_checkpoint: unsupported dtype for " + entry.value("name", "?"));
        }
        const auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::size_t>();
        const std::size_t n = shape_numel(shape);
        if (offset + n * sizeof(double) > data_bytes) {
            throw std::runtime_error("read_checkpoint: tensor " + entry.at("name").get<std::string>() +
                                     " overruns the data section");
        }
        std::vector<double> values(n);
        std::memcpy(values.data(), blob.data() + offset, n * sizeof(double));
        out.tensors.emplace(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
    }
    return out;
}

void load_params(const CheckpointData& data, const NamedParams& params) {
    for (const auto& [name, t] : params) {
        auto it = data.tensors.find(name);
        if (it == data.tensors.end()) {
            throw std::runtime_error("load_params: checkpoint lacks tensor " + name);
        }
        if (it->second.shape() != t.shape()) {
            throw std::runtime_error("load_params: " + name + " has shape " + shape_str(it->second.shape()) +
                                     ", model expects " + shape_str(t.shape()));
        }
    }
    for (const auto& [name, t] : params) {
        const Tensor& src = data.tensors.at(name);
        Tensor dst = t;
        std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
}

}  // namespace asa
