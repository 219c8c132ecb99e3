#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asa/harness.hpp"
#include "asa/runtime.hpp"

namespace {

std::vector<int> parse_tokens(const std::string& text) {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const int v = std::stoi(item, &used);
        if (used != item.size()) {
            throw std::invalid_argument("bad token id '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

asa::RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    asa::RunConfig cfg = path.empty() ? asa::RunConfig{} : asa::load_run_config(path);
    if (seed) {
        cfg.seed = *seed;
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    asa::tune_allocator();
    CLI::App app{"Adversarial self-attention lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string checkpoint;

    auto* train = app.add_subcommand("train", "Train one configuration and write metrics, summary and checkpoint");
    train->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--seed", seed, "Override the run seed");
    train->add_option("--out-dir", out_dir, "Output directory");
    bool verbose = false;
    train->add_flag("-v,--verbose", verbose, "Progress on stderr");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on every split");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--out-dir", out_dir, "Output directory");

    auto* bench = app.add_subcommand("bench", "Median step time per strategy and sequence length");
    bench->add_option("--config", config_path, "Run config JSON")->check(CLI::ExistingFile);
    bench->add_option("--seed", seed, "Override the run seed");
    bench->add_option("--out-dir", out_dir, "Output directory (bench.csv)");
    std::vector<std::size_t> seq_lens;
    std::size_t bench_steps = 50;
    std::vector<std::size_t> ks = {1, 2};
    bench->add_option("--seq-lens", seq_lens, "Sequence lengths")->required()->delimiter(',');
    bench->add_option("--steps", bench_steps, "Timed steps per cell")->check(CLI::Range(50, 100000));
    bench->add_option("--embed-at-k", ks, "Inner steps for embed_at")->delimiter(',');

    auto* exp = app.add_subcommand("export-attn", "Export clean and biased attention of one head plus its gate");
    exp->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    exp->add_option("--out-dir", out_dir, "Output directory");
    exp->add_option("--seed", seed, "Gate sampling seed");
    std::string tokens_text;
    std::size_t layer = 0;
    std::size_t head = 0;
    exp->add_option("--tokens", tokens_text, "Comma-separated token ids")->required();
    exp->add_option("--layer", layer, "Layer index");
    exp->add_option("--head", head, "Head index");

    auto* rep = app.add_subcommand("report-masks", "Per-layer masking table and schedule export");
    std::string metrics_path;
    double tail = 0.2;
    rep->add_option("--metrics", metrics_path, "metrics.jsonl of a run")->required()->check(CLI::ExistingFile);
    rep->add_option("--out-dir", out_dir, "Output directory");
    rep->add_option("--tail", tail, "Fraction of final steps aggregated")->check(CLI::Range(1e-9, 1.0));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const asa::RunConfig cfg = load_config(config_path, seed);
            asa::TrainOptions opts;
            opts.verbose = verbose;
            const auto summary = asa::run_train(cfg, out_dir, opts);
            std::cout << summary.dump(2) << "\n";
        } else if (*eval) {
            std::cout << asa::run_eval(checkpoint, out_dir).dump(2) << "\n";
        } else if (*bench) {
            const asa::RunConfig cfg = load_config(config_path, seed);
            asa::BenchOptions opts;
            opts.seq_lens = seq_lens;
            opts.steps = bench_steps;
            opts.embed_at_k = ks;
            const auto rows = asa::run_bench(cfg, opts);
            const auto path = asa::fs::path(out_dir) / "bench.csv";
            asa::write_bench_csv(path, rows);
            for (const auto& r : rows) {
                std::cout << r.seq_len << " " << r.strategy << " " << r.median_ms << " ms\n";
            }
        } else if (*exp) {
            const std::vector<int> tokens = parse_tokens(tokens_text);
            const auto ex = asa::export_attention(checkpoint, tokens, layer, head, seed.value_or(0));
            asa::write_attention_export(out_dir, ex, tokens, layer, head, checkpoint);
            std::cout << "wrote attention export to " << out_dir << "\n";
        } else if (*rep) {
            const asa::MaskReport r = asa::report_masks(asa::fs::path(metrics_path), tail);
            asa::write_mask_report(out_dir, r);
            std::cout << "layer,masked_fraction\n";
            for (std::size_t l = 0; l < r.per_layer.size(); ++l) {
                std::cout << l << "," << r.per_layer[l] << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
