#include "asa/config.hpp"

#include <fstream>
#include <functional>
#include <optional>
#include <set>

namespace asa {

namespace {

using nlohmann::json;

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError("config: '" + label() + "' must be an object");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            return;
        }
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw std::invalid_argument("must be a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) {
                    throw std::invalid_argument(std::is_unsigned_v<T> ? "must be a nonnegative integer"
                                                                      : "must be an integer");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw std::invalid_argument("must be a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw std::invalid_argument("must be a string");
            }
            out = v.get<T>();
        } catch (const std::exception& e) {
            throw ConfigError("config: field '" + field(key) + "' " + e.what());
        }
    }

    std::optional<Section> child(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            return std::nullopt;
        }
        return Section(j_.at(key), field(key));
    }

    bool has(const char* key) const { return j_.contains(key); }
    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) {
                throw ConfigError("config: unknown key '" + field(k) + "'");
            }
        }
    }

private:
    std::string label() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void fail(const std::string& field, const std::string& msg) { throw ConfigError("config: field '" + field + "' " + msg); }

template <typename E, typename F>
E parse_enum(const std::string& field, const std::string& value, std::initializer_list<E> options, F name_of) {
    std::string names;
    for (E e : options) {
        if (name_of(e) == value) {
            return e;
        }
        names += (names.empty() ? "" : ", ") + name_of(e);
    }
    fail(field, "has unknown value '" + value + "' (expected one of: " + names + ")");
    return *options.begin();
}

void wrap(const char* field, const std::function<void()>& check) {
    try {
        check();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: section '") + field + "': " + e.what());
    }
}

}  // namespace

std::string to_string(TaskName t) { return t == TaskName::spurious ? "spurious" : "mlm"; }

std::string to_string(StrategyName s) {
    switch (s) {
        case StrategyName::none: return "none";
        case StrategyName::asa: return "asa";
        case StrategyName::bernoulli: return "bernoulli";
        case StrategyName::scheduled: return "scheduled";
        case StrategyName::magnitude: return "magnitude";
        case StrategyName::embed_at: return "embed_at";
    }
    return "unknown";
}

RunConfig parse_run_config(const json& j) {
    RunConfig cfg;
    Section root(j, "");

    std::string task = to_string(cfg.task);
    root.get("task", task);
    cfg.task = parse_enum("task", task, {TaskName::spurious, TaskName::mlm}, [](TaskName t) { return to_string(t); });
    root.get("seed", cfg.seed);
    root.get("eval_batch_size", cfg.eval_batch_size);

    if (auto s = root.child("strategy")) {
        std::string kind = to_string(cfg.strategy.name);
        s->get("kind", kind);
        cfg.strategy.name = parse_enum(s->field("kind"), kind,
                                       {StrategyName::none, StrategyName::asa, StrategyName::bernoulli,
                                        StrategyName::scheduled, StrategyName::magnitude, StrategyName::embed_at},
                                       [](StrategyName n) { return to_string(n); });
        MaskStrategy& m = cfg.strategy.mask;
        s->get("p", m.p);
        s->get("schedule", m.schedule);
        s->get("schedule_path", cfg.strategy.schedule_path);
        s->get("proportion", m.proportion);
        s->get("global_magnitude", m.global_magnitude);
        EmbedAtConfig& e = cfg.strategy.embed_at;
        s->get("epsilon", e.epsilon);
        s->get("step_size", e.step_size);
        s->get("k_steps", e.k_steps);
        s->get("at_alpha", e.alpha);
        std::string init = e.init == EmbedAtConfig::Init::zero ? "zero" : "uniform";
        s->get("init", init);
        e.init = parse_enum(s->field("init"), init, {EmbedAtConfig::Init::zero, EmbedAtConfig::Init::uniform},
                            [](EmbedAtConfig::Init i) { return std::string(i == EmbedAtConfig::Init::zero ? "zero" : "uniform"); });
        s->finish();
    }
    switch (cfg.strategy.name) {
        case StrategyName::bernoulli: cfg.strategy.mask.kind = MaskKind::bernoulli; break;
        case StrategyName::scheduled: cfg.strategy.mask.kind = MaskKind::scheduled; break;
        case StrategyName::magnitude: cfg.strategy.mask.kind = MaskKind::magnitude; break;
        default: cfg.strategy.mask.kind = MaskKind::asa; break;
    }

    if (auto s = root.child("model")) {
        ModelConfig& m = cfg.model;
        s->get("vocab_size", m.vocab_size);
        s->get("max_seq_len", m.max_seq_len);
        s->get("d_model", m.d_model);
        s->get("n_heads", m.n_heads);
        s->get("n_layers", m.n_layers);
        s->get("d_ff", m.d_ff);
        s->get("dropout_p", m.dropout_p);
        s->get("n_classes", m.n_classes);
        s->finish();
    }
    cfg.asa.tau = cfg.task == TaskName::mlm ? 0.1 : 0.3;
    if (auto s = root.child("asa")) {
        AsaConfig& a = cfg.asa;
        s->get("tau", a.tau);
        s->get("alpha", a.alpha);
        s->get("bin_temp", a.bin_temp);
        s->get("neg_const", a.neg_const);
        s->get("lambda_grl", a.lambda_grl);
        s->get("d_adv", a.d_adv);
        s->get("init_keep_logit", a.init_keep_logit);
        s->finish();
    }
    if (auto s = root.child("optimizer")) {
        OptimizerConfig& o = cfg.optimizer;
        s->get("lr", o.lr);
        s->get("adversary_lr", o.adversary_lr);
        s->get("steps", o.steps);
        s->get("batch_size", o.batch_size);
        s->get("warmup_fraction", o.warmup_fraction);
        s->get("weight_decay", o.adamw.weight_decay);
        s->get("grad_clip", o.adamw.grad_clip);
        s->get("beta1", o.adamw.beta1);
        s->get("beta2", o.adamw.beta2);
        s->get("eps", o.adamw.eps);
        s->finish();
    }
    if (auto s = root.child("spurious")) {
        SpuriousTaskConfig& d = cfg.spurious;
        s->get("vocab_size", d.vocab_size);
        s->get("seq_len", d.seq_len);
        s->get("n_classes", d.n_classes);
        s->get("train_size", d.train_size);
        s->get("test_id_size", d.test_id_size);
        s->get("test_ood_size", d.test_ood_size);
        s->get("spurious_corr_train", d.spurious_corr_train);
        s->get("spurious_corr_ood", d.spurious_corr_ood);
        s->get("signal_density", d.signal_density);
        s->get("signal_pool_size", d.signal_pool_size);
        s->get("seed", d.seed);
        s->finish();
    }
    if (auto s = root.child("corpus")) {
        ToyCorpusConfig& c = cfg.corpus;
        s->get("vocab_size", c.vocab_size);
        s->get("seq_len", c.seq_len);
        s->get("corpus_size", c.corpus_size);
        s->get("mlm_prob", c.mlm_prob);
        s->get("swap_prob", c.swap_prob);
        s->get("noise_prob", c.noise_prob);
        s->get("seed", c.seed);
        s->finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    wrap("model", [&] { model.validate(); });
    wrap("asa", [&] { asa.validate(); });
    wrap("strategy", [&] {
        MaskStrategy m = strategy.mask;
        if (m.schedule.empty()) {
            m.kind = MaskKind::bernoulli;  // schedule may still come from schedule_path
        }
        m.validate();
        strategy.embed_at.validate();
    });
    if (strategy.name == StrategyName::scheduled && strategy.mask.schedule.empty() && strategy.schedule_path.empty()) {
        fail("strategy.schedule", "is required for scheduled masking (or set strategy.schedule_path)");
    }
    if (optimizer.steps == 0) fail("optimizer.steps", "must be > 0");
    if (optimizer.batch_size == 0) fail("optimizer.batch_size", "must be > 0");
    if (!(optimizer.lr > 0.0)) fail("optimizer.lr", "must be > 0");
    if (!(optimizer.adversary_lr >= 0.0)) fail("optimizer.adversary_lr", "must be >= 0");
    if (!(optimizer.warmup_fraction >= 0.0 && optimizer.warmup_fraction <= 1.0)) {
        fail("optimizer.warmup_fraction", "must be in [0, 1]");
    }
    if (eval_batch_size == 0) fail("eval_batch_size", "must be > 0");
    if (task == TaskName::spurious) {
        wrap("spurious", [&] { spurious.validate(); });
        if (spurious.vocab_size > model.vocab_size) fail("spurious.vocab_size", "exceeds model.vocab_size");
        if (spurious.seq_len > model.max_seq_len) fail("spurious.seq_len", "exceeds model.max_seq_len");
        if (model.n_classes != spurious.n_classes) fail("model.n_classes", "must equal spurious.n_classes");
    } else {
        wrap("corpus", [&] { corpus.validate(); });
        if (corpus.vocab_size > model.vocab_size) fail("corpus.vocab_size", "exceeds model.vocab_size");
        if (corpus.seq_len > model.max_seq_len) fail("corpus.seq_len", "exceeds model.max_seq_len");
        if (!(corpus.mlm_prob > 0.0)) fail("corpus.mlm_prob", "must be in (0, 1)");
        if (strategy.name != StrategyName::none && strategy.name != StrategyName::asa) {
            fail("strategy.kind", "must be none or asa for the mlm task");
        }
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["task"] = to_string(c.task);
    j["seed"] = c.seed;
    j["eval_batch_size"] = c.eval_batch_size;
    auto& s = j["strategy"];
    s["kind"] = to_string(c.strategy.name);
    s["p"] = c.strategy.mask.p;
    s["schedule"] = c.strategy.mask.schedule;
    s["schedule_path"] = c.strategy.schedule_path;
    s["proportion"] = c.strategy.mask.proportion;
    s["global_magnitude"] = c.strategy.mask.global_magnitude;
    s["epsilon"] = c.strategy.embed_at.epsilon;
    s["step_size"] = c.strategy.embed_at.step_size;
    s["k_steps"] = c.strategy.embed_at.k_steps;
    s["at_alpha"] = c.strategy.embed_at.alpha;
    s["init"] = c.strategy.embed_at.init == EmbedAtConfig::Init::zero ? "zero" : "uniform";
    auto& m = j["model"];
    m["vocab_size"] = c.model.vocab_size;
    m["max_seq_len"] = c.model.max_seq_len;
    m["d_model"] = c.model.d_model;
    m["n_heads"] = c.model.n_heads;
    m["n_layers"] = c.model.n_layers;
    m["d_ff"] = c.model.d_ff;
    m["dropout_p"] = c.model.dropout_p;
    m["n_classes"] = c.model.n_classes;
    auto& a = j["asa"];
    a["tau"] = c.asa.tau;
    a["alpha"] = c.asa.alpha;
    a["bin_temp"] = c.asa.bin_temp;
    a["neg_const"] = c.asa.neg_const;
    a["lambda_grl"] = c.asa.lambda_grl;
    a["d_adv"] = c.asa.d_adv;
    a["init_keep_logit"] = c.asa.init_keep_logit;
    auto& o = j["optimizer"];
    o["lr"] = c.optimizer.lr;
    o["adversary_lr"] = c.optimizer.adversary_lr;
    o["steps"] = c.optimizer.steps;
    o["batch_size"] = c.optimizer.batch_size;
    o["warmup_fraction"] = c.optimizer.warmup_fraction;
    o["weight_decay"] = c.optimizer.adamw.weight_decay;
    o["grad_clip"] = c.optimizer.adamw.grad_clip;
    o["beta1"] = c.optimizer.adamw.beta1;
    o["beta2"] = c.optimizer.adamw.beta2;
    o["eps"] = c.optimizer.adamw.eps;
    if (c.task == TaskName::spurious) {
        auto& d = j["spurious"];
        d["vocab_size"] = c.spurious.vocab_size;
        d["seq_len"] = c.spurious.seq_len;
        d["n_classes"] = c.spurious.n_classes;
        d["train_size"] = c.spurious.train_size;
        d["test_id_size"] = c.spurious.test_id_size;
        d["test_ood_size"] = c.spurious.test_ood_size;
        d["spurious_corr_train"] = c.spurious.spurious_corr_train;
        d["spurious_corr_ood"] = c.spurious.spurious_corr_ood;
        d["signal_density"] = c.spurious.signal_density;
        d["signal_pool_size"] = c.spurious.signal_pool_size;
        d["seed"] = c.spurious.seed;
    } else {
        auto& d = j["corpus"];
        d["vocab_size"] = c.corpus.vocab_size;
        d["seq_len"] = c.corpus.seq_len;
        d["corpus_size"] = c.corpus.corpus_size;
        d["mlm_prob"] = c.corpus.mlm_prob;
        d["swap_prob"] = c.corpus.swap_prob;
        d["noise_prob"] = c.corpus.noise_prob;
        d["seed"] = c.corpus.seed;
    }
    return j;
}

}  // namespace asa
