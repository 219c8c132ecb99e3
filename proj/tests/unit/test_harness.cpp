#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asa/harness.hpp"

using namespace asa;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "asa_unit_harness" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json tiny_json(const std::string& kind) {
    return json{{"strategy", {{"kind", kind}}},
                {"model", {{"vocab_size", 40}, {"max_seq_len", 12}, {"d_model", 8}, {"n_heads", 2}, {"n_layers", 2}, {"d_ff", 16}}},
                {"spurious",
                 {{"vocab_size", 40}, {"seq_len", 12}, {"train_size", 64}, {"test_id_size", 20}, {"test_ood_size", 20},
                  {"signal_pool_size", 4}}},
                {"optimizer", {{"steps", 6}, {"batch_size", 8}}}};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

MetricsRecord record(std::size_t step, std::vector<double> fractions) {
    MetricsRecord r;
    r.step = step;
    r.set("total", 1.0);
    r.masked_fraction = std::move(fractions);
    return r;
}

}  // namespace

TEST_CASE("config: defaults parse and round trip") {
    const RunConfig a = parse_run_config(json::object());
    CHECK(a.strategy.name == StrategyName::asa);
    CHECK(a.asa.tau == 0.3);
    const RunConfig m = parse_run_config(json{{"task", "mlm"}});
    CHECK(m.asa.tau == 0.1);
    const RunConfig b = parse_run_config(json::parse(to_json(a).dump()));
    CHECK(to_json(a).dump() == to_json(b).dump());
}

TEST_CASE("config: every shipped config validates") {
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(fs::path(ASA_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".json") continue;
        CAPTURE(entry.path().string());
        const RunConfig cfg = load_run_config(entry.path());
        CHECK(parse_run_config(to_json(cfg)).seed == cfg.seed);
        ++n;
    }
    CHECK(n >= 5);
}

TEST_CASE("config: errors name the offending field") {
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"optimizer", {{"lrr", 1}}}}), doctest::Contains("optimizer.lrr"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"bogus", 1}}), doctest::Contains("bogus"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"optimizer", {{"lr", "fast"}}}}), doctest::Contains("optimizer.lr"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"optimizer", {{"steps", -3}}}}), doctest::Contains("optimizer.steps"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"strategy", {{"kind", "dropout"}}}}),
                         doctest::Contains("strategy.kind"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"asa", {{"tau", -1.0}}}}), doctest::Contains("asa"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"spurious", {{"seq_len", 64}}}}),
                         doctest::Contains("spurious.seq_len"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_run_config(json{{"strategy", {{"kind", "scheduled"}}}}),
                         doctest::Contains("strategy.schedule"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(json{{"model", 3}}), ConfigError);
}

TEST_CASE("train: summary accuracies equal the dumped predictions") {
    const fs::path dir = scratch("preds");
    const json s = run_train(parse_run_config(tiny_json("asa")), dir);
    for (const char* split : {"train", "test_id", "test_ood"}) {
        const double from_file = accuracy_from_predictions(dir / (std::string("predictions_") + split + ".csv"));
        CHECK(std::abs(s.at("accuracy").at(split).get<double>() - from_file) < 1e-12);
    }
    CHECK(s.at("mean_masked_fraction_per_layer").size() == 2);
    CHECK(read_metrics(dir / kMetricsFile).size() == 6);
    CHECK(fs::exists(dir / kCheckpointFile));
    CHECK(fs::exists(dir / kTimingFile));

    const json e = run_eval(dir / kCheckpointFile, dir / "eval");
    CHECK(e.at("accuracy") == s.at("accuracy"));
}

TEST_CASE("train: fixed seed gives byte-identical metrics") {
    const RunConfig cfg = parse_run_config(tiny_json("asa"));
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    run_train(cfg, a);
    run_train(cfg, b);
    CHECK(slurp(a / kMetricsFile) == slurp(b / kMetricsFile));
    CHECK(slurp(a / kSummaryFile) == slurp(b / kSummaryFile));
    RunConfig other = cfg;
    other.seed = 1;
    const fs::path c = scratch("det_c");
    run_train(other, c);
    CHECK(slurp(a / kMetricsFile) != slurp(c / kMetricsFile));
}

TEST_CASE("train: asa with alpha = tau = 0 reproduces plain training") {
    json j = tiny_json("asa");
    j["asa"] = {{"alpha", 0.0}, {"tau", 0.0}};
    const json asa_sum = run_train(parse_run_config(j), scratch("deg_asa"));
    const json none_sum = run_train(parse_run_config(tiny_json("none")), scratch("deg_none"));
    for (const char* split : {"train", "test_id", "test_ood"}) {
        CHECK(std::abs(asa_sum.at("accuracy").at(split).get<double>() - none_sum.at("accuracy").at(split).get<double>()) <
              1e-9);
    }
    CHECK(std::abs(asa_sum.at("final").at("l_e").get<double>() - none_sum.at("final").at("l_e").get<double>()) < 1e-9);
}

TEST_CASE("train: every strategy runs and mlm pretraining reports its terms") {
    for (const char* kind : {"bernoulli", "magnitude", "embed_at"}) {
        const json s = run_train(parse_run_config(tiny_json(kind)), scratch(std::string("kind_") + kind));
        CHECK(std::isfinite(s.at("final").at("total").get<double>()));
    }
    json sched = tiny_json("scheduled");
    sched["strategy"]["schedule"] = {0.0, 0.5};
    const json s = run_train(parse_run_config(sched), scratch("kind_scheduled"));
    CHECK(s.at("mean_masked_fraction").get<double>() > 0.3);

    const json m = {{"task", "mlm"},
                    {"model", {{"vocab_size", 30}, {"max_seq_len", 11}, {"d_model", 8}, {"n_heads", 2}, {"n_layers", 2}, {"d_ff", 16}}},
                    {"corpus", {{"vocab_size", 30}, {"seq_len", 11}, {"corpus_size", 64}}},
                    {"optimizer", {{"steps", 4}, {"batch_size", 8}}}};
    const fs::path dir = scratch("mlm");
    const json ms = run_train(parse_run_config(m), dir);
    CHECK(ms.at("pretrain").at("asa_terms_finite_nonnegative").get<bool>());
    const json e = run_eval(dir / kCheckpointFile, dir / "eval");
    CHECK(e.at("l_mlm").get<double>() > 0.0);
}

TEST_CASE("report_masks: tail aggregation on a fixture") {
    const std::vector<MetricsRecord> recs = {record(0, {0.5, 0.3}), record(1, {0.2, 0.4}), record(2, {0.1, 0.0})};
    const MaskReport all = report_masks(recs, 1.0);
    CHECK(all.n_aggregated == 3);
    CHECK(all.per_layer[0] == doctest::Approx((0.5 + 0.2 + 0.1) / 3.0).epsilon(1e-15));
    CHECK(all.per_layer[1] == doctest::Approx((0.3 + 0.4 + 0.0) / 3.0).epsilon(1e-15));
    const MaskReport tail = report_masks(recs, 0.2);
    CHECK(tail.n_aggregated == 1);
    CHECK(tail.per_layer == std::vector<double>{0.1, 0.0});
    REQUIRE(tail.schedule.size() == 3);
    CHECK(tail.schedule[1].second == doctest::Approx(0.3));

    const MaskReport keep = report_masks(std::vector<MetricsRecord>{record(0, {0.0, 0.0}), record(1, {0.0, 0.0})});
    CHECK(keep.per_layer == std::vector<double>{0.0, 0.0});

    CHECK_THROWS(report_masks(std::vector<MetricsRecord>{record(0, {0.1}), record(1, {0.1, 0.2})}));
    CHECK_THROWS_AS(report_masks(recs, 0.0), std::invalid_argument);

    const fs::path dir = scratch("masks");
    write_mask_report(dir, all);
    const std::vector<double> sched = load_schedule(dir / "schedule.jsonl");
    CHECK(sched == std::vector<double>{0.4, 0.30000000000000004, 0.05});
}

TEST_CASE("export-attn: topology rows sum to one and masked units are suppressed") {
    json j = tiny_json("asa");
    j["asa"] = {{"neg_const", -30.0}};
    const fs::path dir = scratch("export");
    run_train(parse_run_config(j), dir);
    const std::vector<int> toks = {0, 5, 6, 7, 8, 9, 1};
    const AttentionExport ex = export_attention(dir / kCheckpointFile, toks, 1, 1, 3);
    CHECK(ex.adversary_present);
    REQUIRE(ex.clean.size() == toks.size());
    std::size_t masked = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        double sc = 0.0, sb = 0.0, kept = 0.0;
        for (std::size_t k = 0; k < toks.size(); ++k) {
            sc += ex.clean[i][k];
            sb += ex.biased[i][k];
            kept += ex.gate[i][k];
            CHECK((ex.gate[i][k] == 0.0 || ex.gate[i][k] == 1.0));
        }
        CHECK(std::abs(sc - 1.0) < 1e-6);
        CHECK(std::abs(sb - 1.0) < 1e-6);
        for (std::size_t k = 0; k < toks.size(); ++k) {
            if (ex.gate[i][k] == 0.0 && kept > 0.0) {
                ++masked;
                CHECK(ex.biased[i][k] < 1e-3);
            }
        }
    }
    CHECK(masked > 0);

    write_attention_export(dir / "attn", ex, toks, 1, 1, dir / kCheckpointFile);
    CHECK(read_matrix_csv(dir / "attn" / "gate.csv") == ex.gate);
    CHECK(read_matrix_csv(dir / "attn" / "biased_topology.csv") == ex.biased);

    CHECK_THROWS_AS(export_attention(dir / kCheckpointFile, toks, 2, 0, 3), std::out_of_range);
    CHECK_THROWS_AS(export_attention(dir / kCheckpointFile, toks, 0, 2, 3), std::out_of_range);
    CHECK_THROWS_AS(export_attention(dir / kCheckpointFile, {0, 99}, 0, 0, 3), std::out_of_range);
}

TEST_CASE("bench: one row per strategy and length") {
    RunConfig cfg = parse_run_config(tiny_json("asa"));
    BenchOptions opts;
    opts.seq_lens = {8, 12};
    opts.steps = 3;
    opts.warmup_steps = 1;
    const std::vector<BenchRow> rows = run_bench(cfg, opts);
    CHECK(rows.size() == 8);
    for (const BenchRow& r : rows) CHECK(r.median_ms > 0.0);
    opts.seq_lens = {64};
    CHECK_THROWS_AS(run_bench(cfg, opts), std::invalid_argument);
}
