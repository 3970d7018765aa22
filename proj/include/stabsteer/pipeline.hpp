#ifndef STABSTEER_PIPELINE_HPP
#define STABSTEER_PIPELINE_HPP

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "io.hpp"
#include "probe.hpp"
#include "segmenter.hpp"
#include "stability.hpp"
#include "subspace.hpp"
#include "synthetic.hpp"
#include "vectors.hpp"

namespace stabsteer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Logging: level from STABSTEER_LOG_LEVEL (error, warn, info, debug), to stderr.
// ---------------------------------------------------------------------------

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
    const char* env = std::getenv("STABSTEER_LOG_LEVEL");
    if (env == nullptr) return LogLevel::warn;
    const std::string v = detail::to_lower(env);
    if (v == "error") return LogLevel::error;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
}

inline void log(LogLevel level, const std::string& message) {
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    if (level <= log_level()) {
        std::cerr << "[" << names[static_cast<int>(level)] << "] " << message << "\n";
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace detail {

inline std::string number_text(double v) {
    return json(v).dump();
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::string t(trim(item));
        if (t.empty()) continue;
        out.push_back(static_cast<int>(config_int(key, t)));
    }
    if (out.empty()) throw ConfigError("key '" + key + "' expects a comma-separated list of integers");
    return out;
}

using Setter = std::function<void(const std::string&)>;

inline void apply_config(const ConfigMap& cfg, const std::map<std::string, Setter>& setters,
                         const std::string& what) {
    for (const auto& [k, v] : cfg) {
        auto it = setters.find(k);
        if (it == setters.end()) throw ConfigError("unknown " + what + " key '" + k + "'");
        it->second(v);
    }
}

} // namespace detail

struct PipelineConfig {
    std::string lexicon;  // empty: built-in lexicon
    int layer = 20;
    double tau = 0.8;
    int rank = 4;
    int samples = 10;
    double alpha = -100.0;  // recorded as metadata; steering itself happens elsewhere
    std::uint64_t seed = 0;
    std::string method = "seal";
    int controls = 5;
    std::string mode = "behavior";
    int bins = 5;
    int per_bin = 22;
    int folds = 5;
    double c = 1.0;
    int max_iter = 2000;
    std::vector<int> k_grid = {1, 2, 4, 8};
    std::string prompt;

    void validate() const {
        if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
        if (rank < 1) throw ConfigError("rank must be at least 1");
        if (samples < 1) throw ConfigError("samples must be at least 1");
        if (layer < 0) throw ConfigError("layer must be nonnegative");
        if (controls < 1) throw ConfigError("controls must be at least 1");
        if (bins < 1 || per_bin < 1) throw ConfigError("bins and per_bin must be at least 1");
        if (folds < 2) throw ConfigError("folds must be at least 2");
        if (!(c > 0.0)) throw ConfigError("c must be positive");
        if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
        if (mode != "behavior" && mode != "subject") throw ConfigError("mode must be 'behavior' or 'subject'");
        vector_method_from_string(method);
        for (int k : k_grid) {
            if (k < 1) throw ConfigError("k_grid entries must be at least 1");
        }
    }

    static PipelineConfig from_map(const ConfigMap& m) {
        PipelineConfig p;
        using detail::Setter;
        const std::map<std::string, Setter> setters = {
            {"lexicon", [&](const std::string& v) { p.lexicon = v; }},
            {"layer", [&](const std::string& v) { p.layer = static_cast<int>(config_int("layer", v)); }},
            {"tau", [&](const std::string& v) { p.tau = config_double("tau", v); }},
            {"rank", [&](const std::string& v) { p.rank = static_cast<int>(config_int("rank", v)); }},
            {"samples", [&](const std::string& v) { p.samples = static_cast<int>(config_int("samples", v)); }},
            {"alpha", [&](const std::string& v) { p.alpha = config_double("alpha", v); }},
            {"seed", [&](const std::string& v) { p.seed = static_cast<std::uint64_t>(config_int("seed", v)); }},
            {"method", [&](const std::string& v) { p.method = v; }},
            {"controls", [&](const std::string& v) { p.controls = static_cast<int>(config_int("controls", v)); }},
            {"mode", [&](const std::string& v) { p.mode = v; }},
            {"bins", [&](const std::string& v) { p.bins = static_cast<int>(config_int("bins", v)); }},
            {"per_bin", [&](const std::string& v) { p.per_bin = static_cast<int>(config_int("per_bin", v)); }},
            {"folds", [&](const std::string& v) { p.folds = static_cast<int>(config_int("folds", v)); }},
            {"c", [&](const std::string& v) { p.c = config_double("c", v); }},
            {"max_iter", [&](const std::string& v) { p.max_iter = static_cast<int>(config_int("max_iter", v)); }},
            {"k_grid", [&](const std::string& v) { p.k_grid = detail::parse_int_list("k_grid", v); }},
            {"prompt", [&](const std::string& v) { p.prompt = v; }},
        };
        detail::apply_config(m, setters, "pipeline");
        p.validate();
        return p;
    }

    /// Effective settings as a canonical key/value map.
    ConfigMap to_map() const {
        std::string grid;
        for (std::size_t i = 0; i < k_grid.size(); ++i) grid += (i ? "," : "") + std::to_string(k_grid[i]);
        return {{"lexicon", lexicon},
                {"layer", std::to_string(layer)},
                {"tau", detail::number_text(tau)},
                {"rank", std::to_string(rank)},
                {"samples", std::to_string(samples)},
                {"alpha", detail::number_text(alpha)},
                {"seed", std::to_string(seed)},
                {"method", method},
                {"controls", std::to_string(controls)},
                {"mode", mode},
                {"bins", std::to_string(bins)},
                {"per_bin", std::to_string(per_bin)},
                {"folds", std::to_string(folds)},
                {"c", detail::number_text(c)},
                {"max_iter", std::to_string(max_iter)},
                {"k_grid", grid},
                {"prompt", prompt}};
    }

    std::string hash() const { return config_hash(to_map()); }

    KeywordLexicon load_lexicon() const {
        return lexicon.empty() ? KeywordLexicon::defaults() : read_lexicon(lexicon);
    }

    LogisticOptions logistic() const {
        LogisticOptions o;
        o.c = c;
        o.folds = folds;
        o.solver.max_iterations = max_iter;
        return o;
    }
};

inline json provenance(const PipelineConfig& cfg, const std::string& lexicon_hash) {
    return {{"config_hash", cfg.hash()}, {"lexicon_hash", lexicon_hash}};
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

/// Segments and labels every trace; returns the number of records written.
inline std::size_t cmd_segment(const fs::path& traces, const fs::path& out, const KeywordLexicon& lexicon) {
    lexicon.validate();
    const auto inputs = read_traces(traces);
    const auto hash = lexicon.hash();
    std::ostringstream buf;
    for (const auto& t : inputs) {
        auto seg = segment_record(t.question_id, t.text, lexicon);
        seg.trace.subject = t.subject;
        if (seg.unclosed_think) log(LogLevel::warn, "trace '" + t.question_id + "' has an unclosed think block");
        buf << segment_to_json(seg, hash).dump() << "\n";
    }
    write_text(out, buf.str());
    log(LogLevel::info, "segmented " + std::to_string(inputs.size()) + " traces");
    return inputs.size();
}

namespace detail {

inline void check_lexicon(const std::vector<SegmentRecord>& segments, const std::string& hash) {
    for (const auto& s : segments) {
        if (!s.lexicon_hash.empty() && s.lexicon_hash != hash) {
            throw ConfigError("segments for '" + s.trace.question_id + "' were labeled with lexicon " +
                              s.lexicon_hash + ", current lexicon is " + hash);
        }
    }
}

inline std::string segments_lexicon_hash(const std::vector<SegmentRecord>& segments, const std::string& fallback) {
    return segments.empty() || segments.front().lexicon_hash.empty() ? fallback : segments.front().lexicon_hash;
}

} // namespace detail

// ---------------------------------------------------------------------------
// score-stability
// ---------------------------------------------------------------------------

inline StabilityReport cmd_score_stability(const fs::path& segments_path, const fs::path& continuations,
                                           const fs::path& out, const PipelineConfig& cfg) {
    const auto lexicon = cfg.load_lexicon();
    const auto segments = read_segments(segments_path);
    detail::check_lexicon(segments, lexicon.hash());
    std::vector<BoundaryRecord> boundaries;
    for (const auto& s : segments) boundaries.insert(boundaries.end(), s.boundaries.begin(), s.boundaries.end());
    const auto report = score_all(boundaries, read_continuations(continuations), lexicon);
    if (!report.unscored.empty()) {
        log(LogLevel::warn, std::to_string(report.unscored.size()) + " boundaries have no continuation record");
    }
    json j = report_to_json(report);
    j["provenance"] = provenance(cfg, lexicon.hash());
    write_text(out, dump_json(j));
    return report;
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

/// Pairs every segmented trace with `<hidden_dir>/<question_id>.hsv`.
inline SteeringDataset load_dataset(const std::vector<SegmentRecord>& segments, const fs::path& hidden_dir, int layer) {
    std::vector<ProblemStates> problems;
    for (const auto& s : segments) {
        const auto path = hidden_dir / (s.trace.question_id + ".hsv");
        if (!fs::exists(path)) {
            throw PairingError("no hidden states for question '" + s.trace.question_id + "' (" + path.string() + ")");
        }
        const auto m = read_hsv(path);
        if (static_cast<int>(m.layer) != layer) {
            throw IngestError(path.string() + ": layer " + std::to_string(m.layer) + ", expected " +
                              std::to_string(layer));
        }
        problems.push_back(make_problem(s.trace, HiddenStateSet{s.trace.question_id, layer, m.values}));
    }
    return make_dataset(std::move(problems), layer);
}

/// Reads every `*.hsv` in a directory, keyed by file stem.
inline std::map<std::string, Matrix> load_state_dir(const fs::path& dir, int layer) {
    if (!fs::is_directory(dir)) throw IngestError("'" + dir.string() + "' is not a directory");
    std::map<std::string, Matrix> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".hsv") continue;
        const auto m = read_hsv(entry.path());
        if (static_cast<int>(m.layer) != layer) {
            throw IngestError(entry.path().string() + ": layer " + std::to_string(m.layer) + ", expected " +
                              std::to_string(layer));
        }
        out.emplace(entry.path().stem().string(), m.values);
    }
    return out;
}

struct BuildInputs {
    fs::path segments;
    fs::path hidden_dir;
    std::optional<fs::path> report;
    std::optional<fs::path> subspace;
    std::optional<fs::path> prompted_dir;
    std::optional<fs::path> plain_dir;
};

/// Builds the configured vector. `out` is a vector file, or for method
/// `control` a directory receiving one file per control plus manifest.json.
inline std::vector<SteeringVector> cmd_build(const BuildInputs& in, const fs::path& out, const PipelineConfig& cfg) {
    const auto method = vector_method_from_string(cfg.method);
    const auto lexicon = cfg.load_lexicon();
    const auto needs = [&](const std::optional<fs::path>& p, const char* what) {
        if (!p) throw UsageError("method '" + cfg.method + "' requires " + what);
        return *p;
    };

    json extra = provenance(cfg, lexicon.hash());
    extra["alpha"] = cfg.alpha;

    if (method == VectorMethod::prompt) {
        const auto prompted = load_state_dir(needs(in.prompted_dir, "--prompted"), cfg.layer);
        const auto plain = load_state_dir(needs(in.plain_dir, "--plain"), cfg.layer);
        const auto v = build_prompt_vector(prompted, plain, cfg.layer);
        extra["prompt"] = cfg.prompt;
        write_vector(out, v, extra);
        return {v};
    }

    const auto segments = read_segments(in.segments);
    detail::check_lexicon(segments, lexicon.hash());
    extra["lexicon_hash"] = detail::segments_lexicon_hash(segments, lexicon.hash());
    const auto ds = load_dataset(segments, in.hidden_dir, cfg.layer);

    std::optional<StabilityReport> report;
    if (in.report) report = read_report(*in.report);
    std::optional<ContentSubspace> subspace;
    if (in.subspace) {
        const auto f = read_subspace(*in.subspace);
        if (f.layer != cfg.layer) throw IngestError("subspace was fit at layer " + std::to_string(f.layer));
        subspace = f.subspace;
    }
    const auto need_report = [&]() -> const StabilityReport& {
        if (!report) throw UsageError("method '" + cfg.method + "' requires a stability report (--report)");
        return *report;
    };
    const auto need_subspace = [&]() -> const ContentSubspace& {
        if (!subspace) throw UsageError("method '" + cfg.method + "' requires a content subspace (--subspace)");
        return *subspace;
    };

    SteeringVector v;
    switch (method) {
    case VectorMethod::seal:
        v = build_seal(ds);
        break;
    case VectorMethod::stable:
        v = build_stable(ds, need_report(), cfg.tau);
        break;
    case VectorMethod::soft:
        v = build_soft(ds, need_report());
        break;
    case VectorMethod::projected:
        v = build_projected(ds, need_subspace());
        break;
    case VectorMethod::combined: {
        const auto& r = need_report();
        v = build_combined(ds, r, cfg.tau, need_subspace());
        break;
    }
    case VectorMethod::control: {
        const auto matched = build_stable(ds, need_report(), cfg.tau);
        const auto controls = build_random_controls(ds, matched.params.boundaries_used,
                                                    static_cast<std::size_t>(cfg.controls), cfg.seed);
        fs::create_directories(out);
        json manifest = {{"matched_count", matched.params.boundaries_used},
                         {"tau", cfg.tau},
                         {"seed", cfg.seed},
                         {"controls", json::array()},
                         {"provenance", provenance(cfg, extra["lexicon_hash"].get<std::string>())}};
        std::vector<SteeringVector> vs;
        for (std::size_t i = 0; i < controls.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "control-%03zu.svec", i);
            write_vector(out / name, controls[i].vector, extra);
            manifest["controls"].push_back({{"file", name}, {"boundary_ids", controls[i].boundary_ids}});
            vs.push_back(controls[i].vector);
        }
        write_text(out / "manifest.json", dump_json(manifest));
        return vs;
    }
    case VectorMethod::prompt:
        break;
    }
    write_vector(out, v, extra);
    log(LogLevel::info, "built " + cfg.method + " vector from " + std::to_string(v.params.problems_used) + "/" +
                            std::to_string(v.params.problems_total) + " problems");
    return {v};
}

// ---------------------------------------------------------------------------
// fit-subspace
// ---------------------------------------------------------------------------

/// Question embeddings from a directory of per-question HSV files, each
/// mean-pooled over its rows, in question-id order.
inline std::vector<QuestionEmbedding> load_question_embeddings(const fs::path& dir, int layer) {
    std::vector<QuestionEmbedding> out;
    for (const auto& [id, m] : load_state_dir(dir, layer)) out.push_back({id, pool_question_states(m), std::nullopt});
    return out;
}

inline ContentSubspace cmd_fit_subspace(const fs::path& question_dir, const fs::path& out, const PipelineConfig& cfg) {
    const auto questions = load_question_embeddings(question_dir, cfg.layer);
    std::vector<Vector> rows;
    for (const auto& q : questions) rows.push_back(q.q);
    const Matrix q = stack_rows(rows);
    const auto s = fit_content_subspace(q, cfg.rank);
    json extra = provenance(cfg, "");
    extra.erase("lexicon_hash");
    extra["questions"] = questions.size();
    extra["residual_energy"] = residual_energy(q, s);
    write_subspace(out, s, cfg.layer, extra);
    return s;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeInputs {
    // behavior mode
    std::optional<fs::path> segments;
    std::optional<fs::path> hidden_dir;
    std::optional<fs::path> report;
    // subject mode
    std::optional<fs::path> question_dir;
    std::optional<fs::path> labels;  // traces.jsonl-style records with `subject`
};

inline json cmd_probe(const ProbeInputs& in, const fs::path& out, const PipelineConfig& cfg) {
    const auto need = [&](const std::optional<fs::path>& p, const char* what) {
        if (!p) throw UsageError("probe mode '" + cfg.mode + "' requires " + what);
        return *p;
    };
    json j;
    if (cfg.mode == "behavior") {
        const auto lexicon = cfg.load_lexicon();
        const auto segments = read_segments(need(in.segments, "--segments"));
        detail::check_lexicon(segments, lexicon.hash());
        const auto ds = load_dataset(segments, need(in.hidden_dir, "--hidden"), cfg.layer);
        const auto report = read_report(need(in.report, "--report"));
        std::vector<ProbeCandidate> pos, neg;
        probe_candidates(ds, report, pos, neg);
        const auto data = balanced_bin_sample(pos, neg, cfg.bins, cfg.per_bin, cfg.seed);
        const auto res = train_logistic(data, cfg.logistic());

        json manifest = json::array();
        for (std::size_t i = 0; i < data.size(); ++i) {
            manifest.push_back({{"id", data.row_ids[i]},
                                {"group", data.groups[i]},
                                {"label", data.y[i]},
                                {"bin", data.bins[i]},
                                {"fold", res.fold_of_row[i]}});
        }
        json bins = json::array();
        for (const auto& [b, conf] : res.per_bin_confidence) {
            bins.push_back({{"bin", b},
                            {"low", static_cast<double>(b) / cfg.bins},
                            {"high", static_cast<double>(b + 1) / cfg.bins},
                            {"count", res.per_bin_count.at(b)},
                            {"confidence", conf}});
        }
        j = {{"mode", "behavior"},
             {"rows", data.size()},
             {"fold_accuracies", res.fold_accuracies},
             {"accuracy", res.overall_accuracy},
             {"per_bin", std::move(bins)},
             {"spearman", res.spearman.defined ? json(res.spearman.value) : json(nullptr)},
             {"pearson", res.pearson.defined ? json(res.pearson.value) : json(nullptr)},
             {"converged", res.converged},
             {"manifest", std::move(manifest)},
             {"provenance", provenance(cfg, lexicon.hash())}};
    } else {
        auto questions = load_question_embeddings(need(in.question_dir, "--questions"), cfg.layer);
        std::map<std::string, std::string> subject_of;
        for (const auto& t : read_traces(need(in.labels, "--labels"))) {
            if (t.subject) subject_of[t.question_id] = *t.subject;
        }
        for (auto& q : questions) {
            auto it = subject_of.find(q.question_id);
            if (it == subject_of.end()) throw PairingError("question '" + q.question_id + "' has no subject label");
            q.subject = it->second;
        }
        const auto table = subject_probe(questions, cfg.k_grid, cfg.logistic());
        json rows = json::array();
        for (const auto& r : table.rows) {
            rows.push_back({{"k", r.k},
                            {"acc_parallel", r.acc_parallel},
                            {"acc_perp", r.acc_perp},
                            {"separation", r.separation}});
        }
        j = {{"mode", "subject"},
             {"questions", questions.size()},
             {"subjects", table.subjects},
             {"chance", table.chance},
             {"full_accuracy", table.full_accuracy},
             {"rows", std::move(rows)},
             {"converged", table.converged},
             {"provenance", provenance(cfg, "")}};
        j["provenance"].erase("lexicon_hash");
    }
    write_text(out, dump_json(j));
    return j;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulationSettings {
    SyntheticConfig synthetic;
    double tau = 0.8;
    int controls = 5;
    std::uint64_t control_seed = 7;

    static SimulationSettings from_map(const ConfigMap& m) {
        SimulationSettings s;
        auto& c = s.synthetic;
        auto& t = c.trigger;
        auto& ct = c.content;
        const auto dbl = [](double& field, const char* key) {
            return [&field, key](const std::string& v) { field = config_double(key, v); };
        };
        const auto integer = [](int& field, const char* key) {
            return [&field, key](const std::string& v) { field = static_cast<int>(config_int(key, v)); };
        };
        const std::map<std::string, detail::Setter> setters = {
            {"dim", integer(c.dim, "dim")},
            {"delta_norm", dbl(c.delta_norm, "delta_norm")},
            {"overlap", dbl(c.overlap, "overlap")},
            {"noise_sigma", dbl(c.noise_sigma, "noise_sigma")},
            {"a1_shared_offset", dbl(c.a1_shared_offset, "a1_shared_offset")},
            {"a1_content_leak", dbl(c.a1_content_leak, "a1_content_leak")},
            {"n_problems", integer(c.n_problems, "n_problems")},
            {"boundaries_per_problem", integer(c.boundaries_per_problem, "boundaries_per_problem")},
            {"executions_per_problem", integer(c.executions_per_problem, "executions_per_problem")},
            {"samples", integer(c.samples, "samples")},
            {"seed", [&c](const std::string& v) { c.seed = static_cast<std::uint64_t>(config_int("seed", v)); }},
            {"trigger.zero_mass", dbl(t.zero_mass, "trigger.zero_mass")},
            {"trigger.top_mass", dbl(t.top_mass, "trigger.top_mass")},
            {"trigger.top_low", dbl(t.top_low, "trigger.top_low")},
            {"trigger.top_high", dbl(t.top_high, "trigger.top_high")},
            {"trigger.beta_a", dbl(t.beta_a, "trigger.beta_a")},
            {"trigger.beta_b", dbl(t.beta_b, "trigger.beta_b")},
            {"trigger.tail_max", dbl(t.tail_max, "trigger.tail_max")},
            {"trigger.constant", [&t](const std::string& v) { t.constant = config_double("trigger.constant", v); }},
            {"content.n_clusters", integer(ct.n_clusters, "content.n_clusters")},
            {"content.content_rank", integer(ct.content_rank, "content.content_rank")},
            {"content.cluster_scale", dbl(ct.cluster_scale, "content.cluster_scale")},
            {"content.cluster_spread", dbl(ct.cluster_spread, "content.cluster_spread")},
            {"content.nuisance_scale", dbl(ct.nuisance_scale, "content.nuisance_scale")},
            {"content.question_noise", dbl(ct.question_noise, "content.question_noise")},
            {"tau", dbl(s.tau, "tau")},
            {"controls", integer(s.controls, "controls")},
            {"control_seed",
             [&s](const std::string& v) { s.control_seed = static_cast<std::uint64_t>(config_int("control_seed", v)); }},
        };
        detail::apply_config(m, setters, "simulation");
        c.validate();
        if (!(s.tau >= 0.0 && s.tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
        if (s.controls < 1) throw ConfigError("controls must be at least 1");
        return s;
    }

    ConfigMap to_map() const {
        const auto& c = synthetic;
        const auto n = detail::number_text;
        ConfigMap m = {{"dim", std::to_string(c.dim)},
                       {"delta_norm", n(c.delta_norm)},
                       {"overlap", n(c.overlap)},
                       {"noise_sigma", n(c.noise_sigma)},
                       {"a1_shared_offset", n(c.a1_shared_offset)},
                       {"a1_content_leak", n(c.a1_content_leak)},
                       {"n_problems", std::to_string(c.n_problems)},
                       {"boundaries_per_problem", std::to_string(c.boundaries_per_problem)},
                       {"executions_per_problem", std::to_string(c.executions_per_problem)},
                       {"samples", std::to_string(c.samples)},
                       {"seed", std::to_string(c.seed)},
                       {"trigger.zero_mass", n(c.trigger.zero_mass)},
                       {"trigger.top_mass", n(c.trigger.top_mass)},
                       {"trigger.top_low", n(c.trigger.top_low)},
                       {"trigger.top_high", n(c.trigger.top_high)},
                       {"trigger.beta_a", n(c.trigger.beta_a)},
                       {"trigger.beta_b", n(c.trigger.beta_b)},
                       {"trigger.tail_max", n(c.trigger.tail_max)},
                       {"content.n_clusters", std::to_string(c.content.n_clusters)},
                       {"content.content_rank", std::to_string(c.content.content_rank)},
                       {"content.cluster_scale", n(c.content.cluster_scale)},
                       {"content.cluster_spread", n(c.content.cluster_spread)},
                       {"content.nuisance_scale", n(c.content.nuisance_scale)},
                       {"content.question_noise", n(c.content.question_noise)},
                       {"tau", n(tau)},
                       {"controls", std::to_string(controls)},
                       {"control_seed", std::to_string(control_seed)}};
        if (c.trigger.constant) m["trigger.constant"] = n(*c.trigger.constant);
        return m;
    }
};

namespace detail {

inline json vector_json(const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

/// Runs `fn` and returns its JSON, or {"error": message} when the experiment
/// is undefined for this configuration.
template <class Fn>
json guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        return {{"error", e.what()}};
    }
}

} // namespace detail

/// Writes a synthetic dataset in the ingestion formats (traces.jsonl,
/// hidden/, questions/, continuations.jsonl), its ground truth as a sidecar,
/// and simulation_report.json with the dilution, sweep, hard-vs-soft, and
/// matched-control experiments.
inline json cmd_simulate(const ConfigMap& config, const fs::path& out_dir) {
    const auto settings = SimulationSettings::from_map(config);
    const auto& c = settings.synthetic;
    const auto lexicon = KeywordLexicon::defaults();

    SyntheticRun run;
    run.data = gen_dataset(c);
    const auto continuations = gen_continuation_outcomes(run.data, c);
    run.steering = to_steering_dataset(run.data, lexicon);
    run.report = score_all(synthetic_boundaries(run.data, lexicon), continuations, lexicon);

    fs::create_directories(out_dir / "hidden");
    fs::create_directories(out_dir / "questions");
    {
        std::ostringstream traces;
        for (const auto& t : run.data.traces) {
            traces << trace_to_json({t.question_id, t.text, t.subject, t.gold_answer}).dump() << "\n";
        }
        write_text(out_dir / "traces.jsonl", traces.str());
        std::ostringstream cont;
        for (const auto& r : continuations) cont << continuation_to_json(r).dump() << "\n";
        write_text(out_dir / "continuations.jsonl", cont.str());
    }
    const auto layer = static_cast<std::uint32_t>(run.data.layer);
    for (const auto& h : run.data.hidden) write_hsv(out_dir / "hidden" / (h.question_id + ".hsv"), h.matrix, layer);
    for (const auto& q : run.data.questions) {
        write_hsv(out_dir / "questions" / (q.question_id + ".hsv"), Matrix(q.q.transpose()), layer);
    }

    const auto& gt = run.data.truth;
    json truth = {{"delta", detail::vector_json(gt.delta)},
                  {"trigger", gt.trigger},
                  {"committed", gt.committed},
                  {"subjects", json::object()}};
    for (const auto& q : run.data.questions) truth["subjects"][q.question_id] = *q.subject;
    write_text(out_dir / "ground_truth.json", dump_json(truth));

    const double tau = settings.tau;
    json rep;
    rep["config"] = settings.to_map();
    rep["provenance"] = {{"config_hash", config_hash(settings.to_map())}, {"lexicon_hash", lexicon.hash()}};
    rep["stability"] = {{"mean", run.report.mean},
                        {"zero_count", run.report.zero_count},
                        {"scored", run.report.scores.size()},
                        {"unstable_fraction", run.report.unstable_fraction(tau)},
                        {"histogram", run.report.histogram}};
    rep["dilution"] = detail::guarded([&] {
        const Vector mean_d = mean_difference(run.steering, select_all());
        double acc = 0.0;
        for (const auto& [id, p] : gt.trigger) acc += p;
        return json{{"signal_coefficient", signal_coefficient(mean_d, gt.delta)},
                    {"mean_trigger", acc / static_cast<double>(gt.trigger.size())},
                    {"cos_seal", cosine(build_seal(run.steering).direction, gt.delta)}};
    });
    rep["sweep"] = json::array();
    for (const auto& pt : run_threshold_sweep(run, default_tau_grid())) {
        rep["sweep"].push_back({{"tau", pt.tau},
                                {"alignment", pt.alignment ? json(*pt.alignment) : json(nullptr)},
                                {"boundaries", pt.boundaries},
                                {"problems", pt.problems}});
    }
    rep["hard_vs_soft"] = detail::guarded([&] {
        const auto h = compare_hard_soft(run, tau);
        return json{{"tau", tau}, {"align_seal", h.align_seal}, {"align_soft", h.align_soft}, {"align_hard", h.align_hard}};
    });
    rep["amplification"] = detail::guarded([&] {
        return json{{"tau", tau}, {"ratio", amplification_ratio(run.report, tau)}};
    });
    rep["controls"] = detail::guarded([&] {
        const auto cc = compare_with_controls(run, tau, static_cast<std::size_t>(settings.controls), settings.control_seed);
        return json{{"align_stable", cc.align_stable},
                    {"control_alignments", cc.control_alignments},
                    {"control_mean", cc.control_mean},
                    {"control_std", cc.control_std},
                    {"matched_count", cc.matched_count},
                    {"sigma_gap", std::isfinite(cc.sigma_gap()) ? json(cc.sigma_gap()) : json(nullptr)}};
    });
    write_text(out_dir / "simulation_report.json", dump_json(rep));
    return rep;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

} // namespace detail

/// Per-trace word count, reflection keyword count, boxed answer and, when a
/// gold answer is known, exact-match correctness; followed by a `mean` row.
/// `answers` (optional) holds {question_id, gold_answer} records that take
/// precedence over gold answers embedded in the traces.
inline std::string cmd_metrics(const fs::path& traces, const fs::path& out, const KeywordLexicon& lexicon,
                               const std::optional<fs::path>& answers = std::nullopt) {
    lexicon.validate();
    auto inputs = read_traces(traces);
    if (answers) {
        std::map<std::string, std::string> gold;
        for_each_jsonl(*answers, [&](std::size_t, const json& j) {
            gold[j.at("question_id").get<std::string>()] = j.at("gold_answer").get<std::string>();
        });
        for (auto& t : inputs) {
            if (auto it = gold.find(t.question_id); it != gold.end()) t.gold_answer = it->second;
        }
    }
    std::ostringstream csv;
    csv << "question_id,words,reflection_keywords,predicted,gold,correct\n";
    double words = 0.0, reflections = 0.0, correct = 0.0;
    std::size_t graded = 0;
    for (const auto& t : inputs) {
        const auto w = word_count(t.text);
        const auto r = count_reflection_keywords(t.text, lexicon);
        const auto pred = extract_boxed_answer(t.text);
        words += static_cast<double>(w);
        reflections += static_cast<double>(r);
        std::string mark;
        if (t.gold_answer) {
            const bool ok = pred && exact_match(*pred, *t.gold_answer);
            mark = ok ? "1" : "0";
            correct += ok ? 1.0 : 0.0;
            ++graded;
        }
        csv << detail::csv_field(t.question_id) << "," << w << "," << r << "," << detail::csv_field(pred.value_or(""))
            << "," << detail::csv_field(t.gold_answer.value_or("")) << "," << mark << "\n";
    }
    if (!inputs.empty()) {
        const double n = static_cast<double>(inputs.size());
        csv << "mean," << detail::number_text(words / n) << "," << detail::number_text(reflections / n) << ",,,"
            << (graded ? detail::number_text(correct / static_cast<double>(graded)) : std::string()) << "\n";
    }
    write_text(out, csv.str());
    return csv.str();
}

} // namespace stabsteer

#endif
