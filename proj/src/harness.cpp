#include "asa/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "asa/checkpoint.hpp"
#include "asa/ops.hpp"

namespace asa {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

// Stream indices forked from the run seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kOrderStream = 1;
constexpr std::uint64_t kStepStream = 2;
constexpr std::uint64_t kAdversaryStream = 3;

// Reshuffles the index order every epoch and drops the trailing partial batch.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, Rng rng) : n_(n), batch_(std::min(batch, n)), rng_(rng) {
        if (n == 0) {
            throw std::invalid_argument("BatchSampler: empty training set");
        }
    }

    std::vector<std::size_t> next() {
        if (cursor_ + batch_ > order_.size()) {
            order_ = shuffled_indices(n_, rng_);
            cursor_ = 0;
        }
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
        cursor_ += batch_;
        return out;
    }

private:
    std::size_t n_;
    std::size_t batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

void write_predictions(const fs::path& path, const EvalResult& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "index,label,prediction\n";
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
        out << i << ',' << r.labels[i] << ',' << r.predictions[i] << '\n';
    }
}

struct Adversary {
    AdversaryParams params;
    std::optional<AdamW> opt;
};

bool uses_adversary(const RunConfig& cfg) { return cfg.strategy.name == StrategyName::asa; }

NamedParams checkpoint_params(const Model& model, const Adversary* adv) {
    NamedParams p = model.named_params();
    if (adv != nullptr) {
        for (auto& e : adv->params.named_params()) {
            p.push_back(e);
        }
    }
    return p;
}

json checkpoint_meta(const RunConfig& cfg) {
    json meta;
    meta["config"] = json::parse(to_json(cfg).dump());
    meta["adversary"] = uses_adversary(cfg);
    return meta;
}

// Means of a metric over the first and last windows of a run.
ordered_json window_means(const std::vector<MetricsRecord>& records, const std::string& key) {
    const std::size_t w = std::max<std::size_t>(1, records.size() / 20);
    double first = 0.0;
    double last = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
        first += records[i].at(key);
        last += records[records.size() - w + i].at(key);
    }
    first /= static_cast<double>(w);
    last /= static_cast<double>(w);
    ordered_json j;
    j["first"] = first;
    j["last"] = last;
    j["relative_decrease"] = first != 0.0 ? (first - last) / first : 0.0;
    return j;
}

std::vector<std::vector<double>> head_slice(const Tensor& t, std::size_t head) {
    // t is [1, H, L, L]
    const std::size_t l = t.dim(2);
    const std::size_t base = head * l * l;
    std::vector<std::vector<double>> m(l, std::vector<double>(l));
    for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j < l; ++j) {
            m[i][j] = t[base + i * l + j];
        }
    }
    return m;
}

std::vector<std::vector<double>> gate_slice(const Tensor& g) {
    const std::size_t l = g.dim(1);
    std::vector<std::vector<double>> m(l, std::vector<double>(l));
    for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = 0; j < l; ++j) {
            m[i][j] = g[i * l + j];
        }
    }
    return m;
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

LoadedRun load_run(const fs::path& checkpoint) {
    const CheckpointData data = read_checkpoint(checkpoint);
    if (!data.meta.contains("config")) {
        throw std::runtime_error(checkpoint.string() + ": checkpoint has no run config");
    }
    LoadedRun run{parse_run_config(data.meta.at("config")), {}, std::nullopt};
    Rng rng(0);
    run.model = Model::init(run.cfg.model, rng);
    NamedParams params = run.model.named_params();
    if (data.tensors.count("adversary.0.w_q")) {
        run.adversary = AdversaryParams::init(run.cfg.model, run.cfg.asa.resolved_d_adv(run.cfg.model), rng);
        for (auto& e : run.adversary->named_params()) {
            params.push_back(e);
        }
    }
    load_params(data, params);
    return run;
}

// --- Training -------------------------------------------------------------------

ordered_json run_train(const RunConfig& cfg, const fs::path& out_dir, const TrainOptions& options) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_json(out_dir / kConfigFile, to_json(cfg));

    const Rng root(cfg.seed);
    Rng init_rng = root.substream(kInitStream);
    Rng step_rng = root.substream(kStepStream);
    Model model = Model::init(cfg.model, init_rng);
    AdamW model_opt(model.named_params(), cfg.optimizer.adamw);

    std::optional<Adversary> adv;
    if (uses_adversary(cfg)) {
        Rng adv_rng = root.substream(kAdversaryStream);
        adv.emplace();
        adv->params = AdversaryParams::init(cfg.model, cfg.asa.resolved_d_adv(cfg.model), adv_rng, 0.0,
                                             cfg.asa.init_keep_logit);
        adv->opt.emplace(adv->params.named_params(), cfg.optimizer.adamw);
    }

    MaskStrategy mask = cfg.strategy.mask;
    if (cfg.strategy.name == StrategyName::scheduled && mask.schedule.empty()) {
        mask.schedule = load_schedule(cfg.strategy.schedule_path);
    }

    const std::size_t steps = cfg.optimizer.steps;
    const LinearSchedule schedule{
        cfg.optimizer.lr, steps,
        static_cast<std::size_t>(std::llround(cfg.optimizer.warmup_fraction * static_cast<double>(steps)))};

    MetricsWriter writer(out_dir / kMetricsFile, out_dir / kTimingFile);
    std::vector<MetricsRecord> records;
    records.reserve(steps);

    std::optional<SpuriousDataset> data;
    std::vector<CorpusSequence> corpus;
    std::size_t n_train = 0;
    if (cfg.task == TaskName::spurious) {
        data = gen_spurious_classification(cfg.spurious);
        n_train = data->train.size();
    } else {
        corpus = gen_toy_corpus(cfg.corpus);
        n_train = corpus.size();
    }
    BatchSampler sampler(n_train, cfg.optimizer.batch_size, root.substream(kOrderStream));

    for (std::size_t step = 0; step < steps; ++step) {
        const auto t0 = Clock::now();
        StepOptimizers opt;
        opt.model = &model_opt;
        opt.adversary = adv ? &*adv->opt : nullptr;
        opt.lr = schedule.at(step);
        opt.adversary_lr = cfg.optimizer.adversary_lr * opt.lr / cfg.optimizer.lr;
        const std::vector<std::size_t> idx = sampler.next();

        MetricsRecord rec;
        try {
            if (cfg.task == TaskName::mlm) {
                const MlmBatch b = mlm_mask(corpus, idx, cfg.corpus.seq_len, cfg.corpus.vocab_size,
                                            cfg.corpus.mlm_prob, step_rng);
                rec = pretrain_step(model, adv ? &adv->params : nullptr, b, cfg.asa, opt, step_rng);
            } else {
                const ClassificationBatch b = make_classification_batch(data->train, idx, cfg.spurious.seq_len);
                switch (cfg.strategy.name) {
                    case StrategyName::none: rec = plain_step(model, b, opt, step_rng); break;
                    case StrategyName::asa: rec = adversarial_step(model, adv->params, b, cfg.asa, opt, step_rng); break;
                    case StrategyName::embed_at:
                        rec = embedding_at_step(model, b, cfg.strategy.embed_at, opt, step_rng);
                        break;
                    default: rec = masked_step(model, b, mask, step, cfg.asa, opt, step_rng); break;
                }
            }
        } catch (const NonFiniteLoss& e) {
            throw NonFiniteLoss(std::string(e.what()) + " (step " + std::to_string(step) + ")");
        }
        rec.step = step;
        rec.wall_ms = elapsed_ms(t0);
        writer.append(rec);
        if (options.verbose && (step % 100 == 0 || step + 1 == steps)) {
            std::cerr << "step " << step << " total " << rec.at("total") << "\n";
        }
        records.push_back(std::move(rec));
    }

    ordered_json summary;
    summary["task"] = to_string(cfg.task);
    summary["strategy"] = to_string(cfg.strategy.name);
    summary["seed"] = cfg.seed;
    summary["steps"] = steps;
    const MaskReport masks = report_masks(records, options.mask_tail_fraction);
    summary["mean_masked_fraction_per_layer"] = masks.per_layer;
    double mean_mask = 0.0;
    for (double v : masks.per_layer) {
        mean_mask += v;
    }
    summary["mean_masked_fraction"] = masks.per_layer.empty() ? 0.0 : mean_mask / static_cast<double>(masks.per_layer.size());

    if (cfg.task == TaskName::spurious) {
        ordered_json acc;
        const std::pair<const char*, const std::vector<Example>*> splits[] = {
            {"train", &data->train}, {"test_id", &data->test_id}, {"test_ood", &data->test_ood}};
        for (const auto& [name, examples] : splits) {
            const EvalResult r = evaluate(model, *examples, cfg.spurious.seq_len, cfg.eval_batch_size);
            acc[name] = r.accuracy;
            if (options.write_predictions) {
                write_predictions(out_dir / (std::string("predictions_") + name + ".csv"), r);
            }
        }
        summary["accuracy"] = acc;
    } else {
        ordered_json losses;
        losses["total"] = window_means(records, "total");
        losses["l_mlm"] = window_means(records, "l_mlm");
        bool finite_nonneg = true;
        for (const MetricsRecord& r : records) {
            for (const char* k : {"l_asa_token", "l_asa_sentence"}) {
                const double v = r.at(k);
                finite_nonneg = finite_nonneg && std::isfinite(v) && v >= 0.0;
            }
        }
        losses["asa_terms_finite_nonnegative"] = finite_nonneg;
        summary["pretrain"] = losses;
    }
    ordered_json final_values;
    for (const auto& [k, v] : records.back().values) {
        final_values[k] = v;
    }
    summary["final"] = final_values;

    if (options.write_checkpoint) {
        save_checkpoint(out_dir / kCheckpointFile, checkpoint_meta(cfg), checkpoint_params(model, adv ? &*adv : nullptr));
    }
    write_json(out_dir / kSummaryFile, summary);
    return summary;
}

ordered_json run_eval(const fs::path& checkpoint, const fs::path& out_dir) {
    const LoadedRun run = load_run(checkpoint);
    fs::create_directories(out_dir);
    ordered_json res;
    res["checkpoint"] = checkpoint.string();
    res["task"] = to_string(run.cfg.task);
    if (run.cfg.task == TaskName::spurious) {
        const SpuriousDataset data = gen_spurious_classification(run.cfg.spurious);
        ordered_json acc;
        const std::pair<const char*, const std::vector<Example>*> splits[] = {
            {"train", &data.train}, {"test_id", &data.test_id}, {"test_ood", &data.test_ood}};
        for (const auto& [name, examples] : splits) {
            const EvalResult r = evaluate(run.model, *examples, run.cfg.spurious.seq_len, run.cfg.eval_batch_size);
            acc[name] = r.accuracy;
            write_predictions(out_dir / (std::string("predictions_") + name + ".csv"), r);
        }
        res["accuracy"] = acc;
    } else {
        // Held-out masking of the corpus with a fixed stream: MLM loss and
        // sentence-order accuracy of the clean model.
        NoGradScope no_grad;
        const std::vector<CorpusSequence> corpus = gen_toy_corpus(run.cfg.corpus);
        Rng rng = Rng(run.cfg.seed).substream(99);
        double mlm = 0.0;
        std::size_t correct = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < corpus.size(); start += run.cfg.eval_batch_size) {
            std::vector<std::size_t> idx;
            for (std::size_t i = start; i < std::min(corpus.size(), start + run.cfg.eval_batch_size); ++i) {
                idx.push_back(i);
            }
            const MlmBatch b = mlm_mask(corpus, idx, run.cfg.corpus.seq_len, run.cfg.corpus.vocab_size,
                                        run.cfg.corpus.mlm_prob, rng);
            const EncoderOutput out = encoder_forward(run.model, b.tokens);
            const PretrainLogits logits{mlm_head(run.model, out.final_hidden),
                                        sentence_order_head(run.model, out.cls_hidden)};
            const PretrainLossReport rep =
                pretrain_objective(logits, nullptr, b.targets, b.order_labels, nullptr, run.cfg.asa);
            mlm += rep.l_mlm.item();
            ++batches;
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const int pred = logits.sentence[r * 2 + 1] > logits.sentence[r * 2] ? 1 : 0;
                correct += pred == b.order_labels[r] ? 1 : 0;
            }
        }
        res["l_mlm"] = mlm / static_cast<double>(batches);
        res["sentence_order_accuracy"] = static_cast<double>(correct) / static_cast<double>(corpus.size());
    }
    write_json(out_dir / "eval.json", res);
    return res;
}

double accuracy_from_predictions(const fs::path& csv) {
    std::ifstream in(csv);
    if (!in) {
        throw std::runtime_error("cannot open " + csv.string());
    }
    std::string line;
    std::getline(in, line);
    std::size_t n = 0;
    std::size_t correct = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string idx, label, pred;
        std::getline(ss, idx, ',');
        std::getline(ss, label, ',');
        std::getline(ss, pred, ',');
        ++n;
        correct += std::stoi(label) == std::stoi(pred) ? 1 : 0;
    }
    return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
}

// --- Benchmark -------------------------------------------------------------------

std::vector<BenchRow> run_bench(const RunConfig& cfg, const BenchOptions& options) {
    if (options.seq_lens.empty()) {
        throw std::invalid_argument("bench: no sequence lengths");
    }
    if (options.steps == 0) {
        throw std::invalid_argument("bench: steps must be > 0");
    }
    const std::size_t max_len = *std::max_element(options.seq_lens.begin(), options.seq_lens.end());
    if (max_len > cfg.model.max_seq_len) {
        throw std::invalid_argument("bench: sequence length " + std::to_string(max_len) + " exceeds model.max_seq_len " +
                                    std::to_string(cfg.model.max_seq_len));
    }

    std::vector<BenchRow> rows;
    for (std::size_t len : options.seq_lens) {
        SpuriousTaskConfig task = cfg.spurious;
        task.seq_len = len;
        task.train_size = std::max<std::size_t>(cfg.optimizer.batch_size, 64);
        task.test_id_size = 2;
        task.test_ood_size = 2;
        task.validate();
        const SpuriousDataset data = gen_spurious_classification(task);

        struct Variant {
            std::string name;
            StrategyName strategy;
            std::size_t k;
        };
        std::vector<Variant> variants = {{"none", StrategyName::none, 0}, {"asa", StrategyName::asa, 0}};
        for (std::size_t k : options.embed_at_k) {
            variants.push_back({"embed_at_k" + std::to_string(k), StrategyName::embed_at, k});
        }

        // Strategies advance in lockstep, one step each per round, so slow
        // periods on a shared machine land on every median alike.
        struct State {
            Model model;
            AdamW model_opt;
            AdversaryParams adv;
            AdamW adv_opt;
            Rng step_rng;
            BatchSampler sampler;
            std::vector<double> times;
        };
        const Rng root(cfg.seed);
        std::vector<std::unique_ptr<State>> states;
        for (std::size_t i = 0; i < variants.size(); ++i) {
            Rng init_rng = root.substream(kInitStream);
            Model model = Model::init(cfg.model, init_rng);
            Rng adv_rng = root.substream(kAdversaryStream);
            AdversaryParams adv = AdversaryParams::init(cfg.model, cfg.asa.resolved_d_adv(cfg.model), adv_rng, 0.0,
                                                        cfg.asa.init_keep_logit);
            auto st = std::unique_ptr<State>(new State{std::move(model), AdamW({}, cfg.optimizer.adamw), std::move(adv),
                                                       AdamW({}, cfg.optimizer.adamw), root.substream(kStepStream),
                                                       BatchSampler(data.train.size(), cfg.optimizer.batch_size,
                                                                    root.substream(kOrderStream)),
                                                       {}});
            st->model_opt = AdamW(st->model.named_params(), cfg.optimizer.adamw);
            st->adv_opt = AdamW(st->adv.named_params(), cfg.optimizer.adamw);
            states.push_back(std::move(st));
        }
        for (std::size_t s = 0; s < options.warmup_steps + options.steps; ++s) {
            for (std::size_t i = 0; i < variants.size(); ++i) {
                State& st = *states[i];
                EmbedAtConfig at = cfg.strategy.embed_at;
                at.k_steps = variants[i].k;
                const StepOptimizers opt{&st.model_opt, &st.adv_opt, cfg.optimizer.lr, cfg.optimizer.adversary_lr};
                const std::vector<std::size_t> idx = st.sampler.next();
                const ClassificationBatch b = make_classification_batch(data.train, idx, len);
                const auto t0 = Clock::now();
                switch (variants[i].strategy) {
                    case StrategyName::none: plain_step(st.model, b, opt, st.step_rng); break;
                    case StrategyName::asa: adversarial_step(st.model, st.adv, b, cfg.asa, opt, st.step_rng); break;
                    default: embedding_at_step(st.model, b, at, opt, st.step_rng); break;
                }
                if (s >= options.warmup_steps) {
                    st.times.push_back(elapsed_ms(t0));
                }
            }
        }
        for (std::size_t i = 0; i < variants.size(); ++i) {
            rows.push_back({len, variants[i].name, median(states[i]->times), states[i]->times.size()});
        }
    }
    return rows;
}

void write_bench_csv(const fs::path& path, const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "seq_len,strategy,median_ms,steps,ratio_to_none\n";
    for (const BenchRow& r : rows) {
        double base = std::numeric_limits<double>::quiet_NaN();
        for (const BenchRow& q : rows) {
            if (q.seq_len == r.seq_len && q.strategy == "none") base = q.median_ms;
        }
        os << r.seq_len << ',' << r.strategy << ',' << format_double(r.median_ms) << ',' << r.steps << ','
           << format_double(r.median_ms / base) << '\n';
    }
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    write_text(path, os.str());
}

// --- Attention export --------------------------------------------------------------

AttentionExport export_attention(const fs::path& checkpoint, const std::vector<int>& tokens, std::size_t layer,
                                 std::size_t head, std::uint64_t seed) {
    const LoadedRun run = load_run(checkpoint);
    const ModelConfig& mc = run.cfg.model;
    if (layer >= mc.n_layers) {
        throw std::out_of_range("export-attn: layer " + std::to_string(layer) + " out of range (model has " +
                                std::to_string(mc.n_layers) + " layers)");
    }
    if (head >= mc.n_heads) {
        throw std::out_of_range("export-attn: head " + std::to_string(head) + " out of range (model has " +
                                std::to_string(mc.n_heads) + " heads)");
    }
    if (tokens.empty() || tokens.size() > mc.max_seq_len) {
        throw std::invalid_argument("export-attn: need between 1 and " + std::to_string(mc.max_seq_len) + " tokens");
    }
    for (int t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= mc.vocab_size) {
            throw std::out_of_range("export-attn: token id " + std::to_string(t) + " outside vocabulary");
        }
    }

    NoGradScope no_grad;
    TokenBatch batch;
    batch.batch = 1;
    batch.len = tokens.size();
    batch.ids = tokens;
    batch.valid.assign(tokens.size(), 1);
    const Tensor valid = valid_pair_mask(batch);

    const EncoderOutput clean = encoder_forward(run.model, batch);
    GateSet gates;
    if (run.adversary) {
        std::vector<Tensor> logits;
        for (std::size_t l = 0; l < mc.n_layers; ++l) {
            logits.push_back(adversary_logits(clean.layer_inputs[l], *run.adversary, l));
        }
        Rng rng(seed);
        gates = sample_gates(std::move(logits), run.cfg.asa, valid, rng);
    } else {
        gates = all_keep_gates(mc.n_layers, valid);
    }
    ForwardOptions fo;
    fo.gates = &gates.gates;
    fo.neg = run.cfg.asa.neg_const;
    const EncoderOutput biased = encoder_forward(run.model, batch, fo);

    AttentionExport ex;
    ex.clean = head_slice(clean.topologies[layer], head);
    ex.biased = head_slice(biased.topologies[layer], head);
    ex.gate = gate_slice(gates.gates[layer]);
    ex.adversary_present = run.adversary.has_value();
    return ex;
}

void write_matrix_csv(const fs::path& path, const std::vector<std::vector<double>>& m) {
    std::ostringstream os;
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            os << (j ? "," : "") << format_double(row[j]);
        }
        os << '\n';
    }
    write_text(path, os.str());
}

std::vector<std::vector<double>> read_matrix_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::vector<std::vector<double>> m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            row.push_back(std::stod(cell));
        }
        m.push_back(std::move(row));
    }
    return m;
}

void write_attention_export(const fs::path& out_dir, const AttentionExport& ex, const std::vector<int>& tokens,
                            std::size_t layer, std::size_t head, const fs::path& checkpoint) {
    fs::create_directories(out_dir);
    write_matrix_csv(out_dir / "clean_topology.csv", ex.clean);
    write_matrix_csv(out_dir / "biased_topology.csv", ex.biased);
    write_matrix_csv(out_dir / "gate.csv", ex.gate);
    ordered_json j;
    j["layer"] = layer;
    j["head"] = head;
    j["tokens"] = tokens;
    j["checkpoint"] = checkpoint.string();
    j["adversary"] = ex.adversary_present;
    j["files"] = {{"clean", "clean_topology.csv"}, {"biased", "biased_topology.csv"}, {"gate", "gate.csv"}};
    write_json(out_dir / "attention.json", j);
}

// --- Mask reporting ----------------------------------------------------------------

MaskReport report_masks(const std::vector<MetricsRecord>& records, double tail_fraction) {
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
        throw std::invalid_argument("report_masks: tail_fraction must be in (0, 1]");
    }
    MaskReport rep;
    rep.n_records = records.size();
    std::size_t n_layers = 0;
    for (const MetricsRecord& r : records) {
        n_layers = std::max(n_layers, r.masked_fraction.size());
    }
    for (const MetricsRecord& r : records) {
        if (!r.masked_fraction.empty() && r.masked_fraction.size() != n_layers) {
            throw std::runtime_error("report_masks: step " + std::to_string(r.step) + " has " +
                                     std::to_string(r.masked_fraction.size()) + " layers, expected " +
                                     std::to_string(n_layers));
        }
        double overall = 0.0;
        for (double v : r.masked_fraction) {
            overall += v;
        }
        rep.schedule.emplace_back(r.step, n_layers ? overall / static_cast<double>(n_layers) : 0.0);
    }
    rep.per_layer.assign(n_layers, 0.0);
    if (records.empty()) {
        return rep;
    }
    const auto tail = static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(records.size()) - 1e-9));
    rep.n_aggregated = std::clamp<std::size_t>(tail, 1, records.size());
    for (std::size_t i = records.size() - rep.n_aggregated; i < records.size(); ++i) {
        for (std::size_t l = 0; l < records[i].masked_fraction.size(); ++l) {
            rep.per_layer[l] += records[i].masked_fraction[l];
        }
    }
    for (double& v : rep.per_layer) {
        v /= static_cast<double>(rep.n_aggregated);
    }
    return rep;
}

MaskReport report_masks(const fs::path& metrics_path, double tail_fraction) {
    return report_masks(read_metrics(metrics_path), tail_fraction);
}

void write_mask_report(const fs::path& out_dir, const MaskReport& report) {
    fs::create_directories(out_dir);
    ordered_json j;
    j["n_records"] = report.n_records;
    j["n_aggregated"] = report.n_aggregated;
    j["per_layer_masked_fraction"] = report.per_layer;
    write_json(out_dir / "mask_report.json", j);

    std::ostringstream csv;
    csv << "layer,masked_fraction\n";
    for (std::size_t l = 0; l < report.per_layer.size(); ++l) {
        csv << l << ',' << format_double(report.per_layer[l]) << '\n';
    }
    write_text(out_dir / "mask_report.csv", csv.str());

    std::ostringstream sched;
    for (const auto& [step, frac] : report.schedule) {
        ordered_json r;
        r["step"] = step;
        r["masked_fraction"] = frac;
        sched << r.dump() << '\n';
    }
    write_text(out_dir / "schedule.jsonl", sched.str());
}

}  // namespace asa
