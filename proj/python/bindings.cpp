#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "asa/harness.hpp"
#include "asa/ops.hpp"
#include "asa/runtime.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

asa::RunConfig config_from(const std::string& text) { return asa::parse_run_config(json::parse(text)); }

py::array_t<double> to_array(const asa::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

asa::Tensor from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a, bool grad = false) {
    asa::Shape shape(a.shape(), a.shape() + a.ndim());
    return asa::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()), grad);
}

}  // namespace

PYBIND11_MODULE(_asa_core, m) {
    m.doc() = "Adversarial self-attention lab: C++ core";
    asa::tune_allocator();

    py::register_exception<asa::ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("normalize_config", [](const std::string& text) { return asa::to_json(config_from(text)).dump(); },
          py::arg("config_json"), "Parses, validates and returns the config with defaults filled in.");

    m.def(
        "train",
        [](const std::string& text, const std::filesystem::path& out_dir, bool write_checkpoint) {
            const asa::RunConfig cfg = config_from(text);
            asa::TrainOptions opts;
            opts.write_checkpoint = write_checkpoint;
            py::gil_scoped_release release;
            return asa::run_train(cfg, out_dir, opts).dump();
        },
        py::arg("config_json"), py::arg("out_dir"), py::arg("write_checkpoint") = true);

    m.def(
        "evaluate",
        [](const std::filesystem::path& ckpt, const std::filesystem::path& out_dir) {
            py::gil_scoped_release release;
            return asa::run_eval(ckpt, out_dir).dump();
        },
        py::arg("checkpoint"), py::arg("out_dir"));

    m.def(
        "bench",
        [](const std::string& text, std::vector<std::size_t> seq_lens, std::size_t steps, std::vector<std::size_t> k) {
            asa::BenchOptions opts;
            opts.seq_lens = std::move(seq_lens);
            opts.steps = steps;
            opts.embed_at_k = std::move(k);
            const asa::RunConfig cfg = config_from(text);
            std::vector<asa::BenchRow> rows;
            {
                py::gil_scoped_release release;
                rows = asa::run_bench(cfg, opts);
            }
            py::list out;
            for (const auto& r : rows) {
                out.append(py::dict(py::arg("seq_len") = r.seq_len, py::arg("strategy") = r.strategy,
                                    py::arg("median_ms") = r.median_ms, py::arg("steps") = r.steps));
            }
            return out;
        },
        py::arg("config_json"), py::arg("seq_lens"), py::arg("steps") = 50, py::arg("embed_at_k") = std::vector<std::size_t>{1, 2});

    m.def(
        "report_masks",
        [](const std::filesystem::path& metrics, double tail) {
            const asa::MaskReport r = asa::report_masks(metrics, tail);
            return py::dict(py::arg("per_layer") = r.per_layer, py::arg("n_records") = r.n_records,
                            py::arg("n_aggregated") = r.n_aggregated, py::arg("schedule") = r.schedule);
        },
        py::arg("metrics_path"), py::arg("tail") = 0.2);

    m.def(
        "export_attention",
        [](const std::filesystem::path& ckpt, const std::vector<int>& tokens, std::size_t layer, std::size_t head,
           std::uint64_t seed) {
            const asa::AttentionExport ex = asa::export_attention(ckpt, tokens, layer, head, seed);
            return py::dict(py::arg("clean") = ex.clean, py::arg("biased") = ex.biased, py::arg("gate") = ex.gate,
                            py::arg("adversary_present") = ex.adversary_present);
        },
        py::arg("checkpoint"), py::arg("tokens"), py::arg("layer") = 0, py::arg("head") = 0, py::arg("seed") = 0);

    m.def(
        "spurious_dataset",
        [](const std::string& text) {
            const asa::RunConfig cfg = config_from(text);
            const asa::SpuriousDataset d = asa::gen_spurious_classification(cfg.spurious);
            auto split = [](const std::vector<asa::Example>& xs) {
                py::list out;
                for (const auto& x : xs) {
                    out.append(py::make_tuple(x.tokens, x.label));
                }
                return out;
            };
            return py::dict(py::arg("train") = split(d.train), py::arg("test_id") = split(d.test_id),
                            py::arg("test_ood") = split(d.test_ood));
        },
        py::arg("config_json"));

    // Core ops on numpy arrays, without gradients.
    m.def("softmax", [](const py::array_t<double>& x) { return to_array(asa::softmax(from_array(x))); });
    m.def(
        "binary_concrete",
        [](const py::array_t<double>& logits, double temp, std::uint64_t seed, bool hard) {
            asa::Rng rng(seed);
            return to_array(asa::binary_concrete(from_array(logits), temp, rng, hard));
        },
        py::arg("logits"), py::arg("temp") = 1.0, py::arg("seed") = 0, py::arg("hard") = true);
    m.def(
        "grad_reverse_vjp",
        [](const py::array_t<double>& x, const py::array_t<double>& upstream, double lambda) {
            asa::Tensor t = from_array(x, true);
            asa::Tape tape;
            asa::Tensor y;
            {
                asa::TapeScope scope(tape);
                y = asa::grad_reverse(t, lambda);
                tape.backward(asa::sum(asa::mul(y, from_array(upstream))));
            }
            return py::make_tuple(to_array(y.detach()), to_array(asa::Tensor(t.shape(), t.grad())));
        },
        py::arg("x"), py::arg("upstream"), py::arg("lam") = 1.0,
        "Forward value and input gradient of grad_reverse for a given upstream gradient.");
}
