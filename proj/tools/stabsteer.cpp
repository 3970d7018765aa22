#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "stabsteer.hpp"

namespace {

using namespace stabsteer;

/// Pipeline settings shared by every subcommand: a config file plus flag overrides.
struct Overrides {
    std::optional<std::string> config_file;
    std::map<std::string, std::optional<std::string>> flags;

    void attach(CLI::App* cmd, const std::vector<std::string>& keys) {
        cmd->add_option("--config", config_file, "flat key = value config file");
        for (const auto& key : keys) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            cmd->add_option(flag, flags[key], "overrides config key '" + key + "'");
        }
    }

    ConfigMap merged() const {
        ConfigMap m = config_file ? read_config(*config_file) : ConfigMap{};
        for (const auto& [k, v] : flags) {
            if (v) m[k] = *v;
        }
        return m;
    }

    PipelineConfig pipeline() const { return PipelineConfig::from_map(merged()); }
};

std::optional<fs::path> as_path(const std::optional<std::string>& s) {
    if (!s) return std::nullopt;
    return fs::path(*s);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stability-filtered steering vectors: segment traces, score boundaries, build and probe vectors"};
    app.require_subcommand(1);

    std::string in, out;
    std::optional<std::string> segments, hidden, report, subspace, prompted, plain, questions, labels, answers,
        continuations;

    auto* seg = app.add_subcommand("segment", "split traces into labeled paragraphs and boundaries");
    Overrides seg_o;
    seg->add_option("--traces", in, "traces.jsonl")->required();
    seg->add_option("--out", out, "segments.jsonl")->required();
    seg_o.attach(seg, {"lexicon"});

    auto* score = app.add_subcommand("score-stability", "score boundaries from sampled continuations");
    Overrides score_o;
    score->add_option("--segments", in, "segments.jsonl")->required();
    score->add_option("--continuations", continuations, "continuations.jsonl")->required();
    score->add_option("--out", out, "stability report (JSON)")->required();
    score_o.attach(score, {"lexicon"});

    auto* build = app.add_subcommand("build", "build a steering vector");
    Overrides build_o;
    build->add_option("--segments", in, "segments.jsonl");
    build->add_option("--hidden", hidden, "directory of <question_id>.hsv files");
    build->add_option("--report", report, "stability report");
    build->add_option("--subspace", subspace, "content subspace file");
    build->add_option("--prompted", prompted, "prompted question states (method prompt)");
    build->add_option("--plain", plain, "plain question states (method prompt)");
    build->add_option("--out", out, "vector file, or directory for method control")->required();
    build_o.attach(build, {"lexicon", "method", "tau", "layer", "alpha", "seed", "controls", "prompt"});

    auto* fit = app.add_subcommand("fit-subspace", "fit the content subspace from question-only states");
    Overrides fit_o;
    fit->add_option("--questions", in, "directory of <question_id>.hsv files")->required();
    fit->add_option("--out", out, "subspace file")->required();
    fit_o.attach(fit, {"rank", "layer"});

    auto* probe = app.add_subcommand("probe", "cross-validated linear probes");
    Overrides probe_o;
    probe->add_option("--segments", segments, "segments.jsonl (behavior mode)");
    probe->add_option("--hidden", hidden, "hidden-state directory (behavior mode)");
    probe->add_option("--report", report, "stability report (behavior mode)");
    probe->add_option("--questions", questions, "question-state directory (subject mode)");
    probe->add_option("--labels", labels, "traces.jsonl with subject labels (subject mode)");
    probe->add_option("--out", out, "probe report (JSON)")->required();
    probe_o.attach(probe, {"lexicon", "mode", "layer", "bins", "per_bin", "folds", "c", "max_iter", "seed", "k_grid"});

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset and run the oracle experiments");
    Overrides sim_o;
    sim->add_option("--out", out, "output directory")->required();
    sim_o.attach(sim, {"seed", "n_problems", "noise_sigma", "tau", "samples"});

    auto* metrics = app.add_subcommand("metrics", "per-trace length, reflection count and accuracy");
    Overrides metrics_o;
    metrics->add_option("--traces", in, "traces.jsonl")->required();
    metrics->add_option("--answers", answers, "gold answers jsonl");
    metrics->add_option("--out", out, "metrics.csv")->required();
    metrics_o.attach(metrics, {"lexicon"});

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ExitCode::usage);
    }

    try {
        if (*seg) {
            cmd_segment(in, out, seg_o.pipeline().load_lexicon());
        } else if (*score) {
            cmd_score_stability(in, *continuations, out, score_o.pipeline());
        } else if (*build) {
            const auto cfg = build_o.pipeline();
            if (cfg.method != "prompt" && (in.empty() || !hidden)) {
                throw UsageError("method '" + cfg.method + "' requires --segments and --hidden");
            }
            cmd_build({in, hidden.value_or(""), as_path(report), as_path(subspace), as_path(prompted), as_path(plain)},
                      out, cfg);
        } else if (*fit) {
            cmd_fit_subspace(in, out, fit_o.pipeline());
        } else if (*probe) {
            cmd_probe({as_path(segments), as_path(hidden), as_path(report), as_path(questions), as_path(labels)}, out,
                      probe_o.pipeline());
        } else if (*sim) {
            cmd_simulate(sim_o.merged(), out);
        } else if (*metrics) {
            cmd_metrics(in, out, metrics_o.pipeline().load_lexicon(), as_path(answers));
        }
    } catch (const Error& e) {
        log(LogLevel::error, e.what());
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        log(LogLevel::error, std::string("internal error: ") + e.what());
        return static_cast<int>(ExitCode::internal);
    }
    return 0;
}
