#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cspkit/error.hpp"
#include "cspkit/pipeline.hpp"
#include "cspkit/seed.hpp"
#include "cspkit/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cspkit;

namespace {

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << text;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValidationError("malformed JSON in " + path.string());
    return j;
}

json truth_to_json(const GroundTruth& t) {
    json mixing = json::array();
    for (Eigen::Index r = 0; r < t.mixing.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < t.mixing.cols(); ++c) row.push_back(t.mixing(r, c));
        mixing.push_back(std::move(row));
    }
    json profiles = json::array();
    for (const auto& p : t.class_profiles) profiles.push_back(std::vector<double>(p.begin(), p.end()));
    return {{"format", "cspkit-truth"},
            {"version", 1},
            {"mixing", std::move(mixing)},
            {"class_profiles", std::move(profiles)},
            {"noise_variance", t.noise_variance},
            {"outlier_ids", t.outlier_ids}};
}

// Options shared by every subcommand that reads pipeline settings. Values are
// kept as text and validated through PipelineConfig::from_map.
struct ConfigFlags {
    std::map<std::string, std::optional<std::string>> values;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option(flag, values[key], help);
    }

    PipelineConfig build(const std::map<std::string, std::string>& base = {}) const {
        auto kv = base;
        for (const auto& [key, v] : values)
            if (v) kv[key] = *v;
        return PipelineConfig::from_map(kv);
    }
};

void add_preprocess_flags(CLI::App* app, ConfigFlags& f) {
    f.add(app, "--band", "band", "pass band LOW:HIGH in Hz (default 8:40)");
    f.add(app, "--order", "order", "Butterworth order (default 5)");
    f.add(app, "--window", "window", "analysis window START:END in seconds after the cue (default 0.5:4)");
    f.add(app, "--cue", "cue", "cue onset within each trial in seconds (default 2)");
    f.add(app, "--phase", "phase", "causal or zero-phase (default causal)");
}

void add_covariance_flags(CLI::App* app, ConfigFlags& f) {
    f.add(app, "--z-threshold", "z_threshold", "outlier z-score threshold (default 2.5)");
}

void add_csp_flags(CLI::App* app, ConfigFlags& f) {
    f.add(app, "--m", "m", "two-class: filters from each end (default 3)");
    f.add(app, "--k", "k", "multiclass: filters kept (default 6)");
    f.add(app, "--ffdiag-iters", "ffdiag_iters", "joint diagonalization iterations (default 100)");
    f.add(app, "--ffdiag-tol", "ffdiag_tol", "joint diagonalization tolerance (default 1e-9)");
    f.add(app, "--mi-estimator", "mi_estimator", "gaussian or histogram (default gaussian)");
}

void add_pso_flags(CLI::App* app, ConfigFlags& f) {
    f.add(app, "--pso-iters", "pso_iters", "swarm iterations (default 10)");
    f.add(app, "--pso-width", "pso_width", "velocity clamp as a fraction of each range (default 0.2)");
    f.add(app, "--pso-swarm", "pso_swarm", "swarm size (default 10)");
    f.add(app, "--seed", "seed", "root seed (default 1)");
    f.add(app, "--val-fraction", "val_fraction", "held-out fraction per class (default 0.25)");
    f.add(app, "--max-passes", "max_passes", "training passes including reserve replays (default 3)");
}

std::vector<Sample> load_samples(const fs::path& path, std::uint32_t& n_classes) {
    const auto file = read_features(path);
    n_classes = file.n_classes;
    return to_samples(file.features);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"cspkit: multiclass CSP features and an evolving type-2 fuzzy classifier for EEG"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic train/test trial files");
    SynthSpec spec;
    fs::path synth_out = "synth";
    std::size_t n_subjects = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--channels", spec.n_channels, "channels (default 22)");
    synth->add_option("--classes", spec.n_classes, "classes (default 4)");
    synth->add_option("--trials", spec.trials_per_class, "trials per class (default 72)");
    synth->add_option("--samples", spec.samples_per_trial, "samples per trial (default 1000)");
    synth->add_option("--fs", spec.fs, "sampling rate in Hz (default 250)");
    synth->add_option("--class-gain", spec.class_gain, "variance of the class source (default 4)");
    synth->add_option("--noise", spec.noise_variance, "sensor noise variance (default 0.01)");
    synth->add_option("--outlier-rate", spec.outlier_rate, "fraction of artifact trials (default 0)");
    synth->add_option("--outlier-gain", spec.outlier_gain, "artifact amplitude gain (default 20)");
    synth->add_flag("--band-limited", spec.band_limited, "filter sources to 8-30 Hz");
    synth->add_option("--seed", spec.seed, "seed (default 1)");
    synth->add_option("--subjects", n_subjects, "write N subjects and a manifest instead of one pair");

    // filter
    auto* filter = app.add_subcommand("filter", "band-pass and epoch a trial file");
    ConfigFlags filter_flags;
    fs::path filter_in, filter_out;
    filter->add_option("--in", filter_in, "input trial file")->required();
    filter->add_option("--out", filter_out, "output trial file")->required();
    add_preprocess_flags(filter, filter_flags);

    // covariance
    auto* covariance = app.add_subcommand("covariance", "class covariances with outlier screening");
    ConfigFlags cov_flags;
    fs::path cov_in, cov_out;
    covariance->add_option("--in", cov_in, "preprocessed trial file")->required();
    covariance->add_option("--out", cov_out, "output JSON")->required();
    add_covariance_flags(covariance, cov_flags);

    // csp
    auto* csp = app.add_subcommand("csp", "compute and select spatial filters");
    ConfigFlags csp_flags;
    fs::path csp_in, csp_out;
    csp->add_option("--in", csp_in, "preprocessed training trial file")->required();
    csp->add_option("--out", csp_out, "output filter bank")->required();
    add_covariance_flags(csp, csp_flags);
    add_csp_flags(csp, csp_flags);

    // features
    auto* features = app.add_subcommand("features", "log-variance features from a filter bank");
    fs::path feat_in, feat_filters, feat_out;
    features->add_option("--in", feat_in, "preprocessed trial file")->required();
    features->add_option("--filters", feat_filters, "filter bank")->required();
    features->add_option("--out", feat_out, "output feature file")->required();

    // train
    auto* train = app.add_subcommand("train", "train the fuzzy classifier on a feature file");
    fs::path train_in, train_out, train_params;
    std::size_t train_passes = 3;
    train->add_option("--features", train_in, "training feature file")->required();
    train->add_option("--out", train_out, "output model")->required();
    train->add_option("--params", train_params, "hyperparameter JSON (for example from tune)");
    train->add_option("--max-passes", train_passes, "training passes including reserve replays (default 3)");

    // tune
    auto* tune_cmd = app.add_subcommand("tune", "particle swarm search of the classifier thresholds");
    ConfigFlags tune_flags;
    fs::path tune_in, tune_out, tune_trace, sweep_out;
    std::vector<double> sweep_widths;
    std::vector<int> sweep_iters;
    tune_cmd->add_option("--features", tune_in, "training feature file")->required();
    tune_cmd->add_option("--out", tune_out, "best-parameter JSON")->required();
    tune_cmd->add_option("--trace", tune_trace, "best-so-far trace CSV");
    tune_cmd->add_option("--sweep-widths", sweep_widths, "widths for the sweep grid");
    tune_cmd->add_option("--sweep-iters", sweep_iters, "iteration counts for the sweep grid");
    tune_cmd->add_option("--sweep-out", sweep_out, "sweep CSV");
    add_pso_flags(tune_cmd, tune_flags);

    // evaluate
    auto* evaluate_cmd = app.add_subcommand("evaluate", "accuracy and confusion of a model on a feature file");
    fs::path eval_model, eval_in, eval_out;
    evaluate_cmd->add_option("--model", eval_model, "model file")->required();
    evaluate_cmd->add_option("--features", eval_in, "test feature file")->required();
    evaluate_cmd->add_option("--out", eval_out, "output JSON (default stdout)");

    // run
    auto* run = app.add_subcommand("run", "full pipeline from raw trial files to report");
    ConfigFlags run_flags;
    fs::path run_config;
    run->add_option("--config", run_config, "key = value config file");
    run_flags.add(run, "--train", "train", "training trial file");
    run_flags.add(run, "--test", "test", "test trial file");
    run_flags.add(run, "--manifest", "manifest", "subject manifest (runs every subject)");
    run_flags.add(run, "--out", "output", "output directory (default cspkit-out)");
    run_flags.add(run, "--subject", "subject", "subject id for the report");
    run_flags.add(run, "--classifier", "classifier", "fixed or tune (default fixed)");
    add_preprocess_flags(run, run_flags);
    add_covariance_flags(run, run_flags);
    add_csp_flags(run, run_flags);
    add_pso_flags(run, run_flags);
    bool run_drop = false;
    run->add_flag("--drop-outliers", run_drop, "also drop flagged trials from classifier training");

    // compare
    auto* compare = app.add_subcommand("compare", "side-by-side table against the published accuracies");
    std::vector<fs::path> compare_in;
    fs::path compare_out;
    compare->add_option("reports", compare_in, "report.json files");
    compare->add_option("--out", compare_out, "output CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*synth) {
        auto write_pair = [&](const fs::path& dir, std::uint64_t seed) {
            fs::create_directories(dir);
            SynthSpec s = spec;
            s.seed = seed;
            s.session = "train";
            const auto tr = generate(s);
            s.session = "test";
            s.outlier_rate = 0.0;
            const auto te = generate(s);
            write_trialset(tr.trials, dir / "train.cspk");
            write_trialset(te.trials, dir / "test.cspk");
            write_file(dir / "truth.json", truth_to_json(tr.truth).dump(1) + "\n");
        };
        if (n_subjects == 0) {
            write_pair(synth_out, spec.seed);
        } else {
            std::vector<ManifestEntry> entries;
            for (std::size_t s = 1; s <= n_subjects; ++s) {
                const auto id = std::to_string(s);
                const fs::path dir = synth_out / ("subject_" + id);
                write_pair(dir, derive_seed(spec.seed, "subject-" + id));
                entries.push_back({id, "T", fs::path("subject_" + id) / "train.cspk"});
                entries.push_back({id, "E", fs::path("subject_" + id) / "test.cspk"});
            }
            write_manifest(entries, synth_out / "manifest.txt");
        }
    } else if (*filter) {
        const auto cfg = filter_flags.build();
        write_trialset(preprocess_set(read_trialset(filter_in), cfg), filter_out);
    } else if (*covariance) {
        const auto cfg = cov_flags.build();
        const auto set = read_trialset(cov_in);
        write_file(cov_out, covariance_to_json(covariance_stage(set, cfg), set, cfg.z_threshold).dump(1) + "\n");
    } else if (*csp) {
        const auto cfg = csp_flags.build();
        const auto set = read_trialset(csp_in);
        FfdiagResult diag;
        const auto bank = filter_stage(set, covariance_stage(set, cfg), cfg, &diag);
        if (csp_out.has_parent_path()) fs::create_directories(csp_out.parent_path());
        write_filter_bank(bank, csp_out);
        if (set.n_classes > 2)
            std::cerr << "joint diagonalization: " << diag.iterations << " iterations, "
                      << (diag.converged ? "converged" : "not converged") << ", off-diagonality "
                      << diag.objective.back() << '\n';
    } else if (*features) {
        const auto set = read_trialset(feat_in);
        const auto bank = read_filter_bank(feat_filters);
        if (bank.W.cols() != static_cast<Eigen::Index>(set.n_channels))
            throw ValidationError("filter bank has " + std::to_string(bank.W.cols()) + " channels, trials have " +
                                  std::to_string(set.n_channels));
        write_features({set.n_classes, extract_features(set, bank)}, feat_out);
    } else if (*train) {
        std::uint32_t n_classes = 0;
        const auto samples = load_samples(train_in, n_classes);
        if (samples.empty()) throw ValidationError("feature file is empty");
        const HyperParams hp = train_params.empty() ? HyperParams{} : hyper_from_json(read_json(train_params));
        Srit2nfis model(n_classes, static_cast<std::size_t>(samples.front().x.size()), hp);
        const auto rep = model.train(samples, train_passes);
        if (train_out.has_parent_path()) fs::create_directories(train_out.parent_path());
        model.save(train_out);
        std::cout << "rules " << model.rules().size() << ", grew " << rep.grew << ", updated " << rep.updated
                  << ", deleted " << rep.deleted << ", reserved " << rep.reserved << ", pruned " << rep.pruned
                  << '\n';
    } else if (*tune_cmd) {
        const auto cfg = tune_flags.build();
        std::uint32_t n_classes = 0;
        const auto samples = load_samples(tune_in, n_classes);
        const auto split = stratified_tail_split(samples, n_classes, cfg.val_fraction);
        PSOConfig pso = cfg.pso;
        pso.seed = derive_seed(cfg.seed, "pso");
        const auto res = tune(split.train, split.validation, n_classes, pso, cfg.max_passes);
        auto out = hyper_to_json(res.best);
        out["validation_accuracy"] = res.best_fitness;
        out["evaluations"] = res.evaluations;
        write_file(tune_out, out.dump(2) + "\n");
        if (!tune_trace.empty()) {
            std::ostringstream t;
            t.precision(17);
            t << "iteration,best_validation_accuracy\n";
            for (std::size_t i = 0; i < res.trace.size(); ++i) t << i + 1 << ',' << res.trace[i] << '\n';
            write_file(tune_trace, t.str());
        }
        if (!sweep_widths.empty() || !sweep_iters.empty()) {
            if (sweep_widths.empty() || sweep_iters.empty() || sweep_out.empty())
                throw ValidationError("a sweep needs --sweep-widths, --sweep-iters and --sweep-out");
            const auto cells = sweep(split.train, split.validation, n_classes, sweep_widths, sweep_iters, pso,
                                     cfg.max_passes);
            write_file(sweep_out, sweep_csv(cells));
        }
    } else if (*evaluate_cmd) {
        const auto model = Srit2nfis::load(eval_model);
        std::uint32_t n_classes = 0;
        const auto samples = load_samples(eval_in, n_classes);
        if (n_classes != model.n_classes()) throw ValidationError("feature file and model disagree on classes");
        const auto ev = evaluate(model, samples);
        json conf = json::array();
        for (Eigen::Index r = 0; r < ev.confusion.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < ev.confusion.cols(); ++c) row.push_back(ev.confusion(r, c));
            conf.push_back(std::move(row));
        }
        const json out = {{"accuracy_pct", 100.0 * ev.accuracy},
                          {"confusion", std::move(conf)},
                          {"rule_count", model.rules().size()}};
        if (eval_out.empty()) std::cout << out.dump(2) << '\n';
        else write_file(eval_out, out.dump(2) + "\n");
    } else if (*run) {
        const auto base = run_config.empty() ? std::map<std::string, std::string>{} : read_key_values(run_config);
        auto cfg = run_flags.build(base);
        if (run_drop) cfg.drop_outliers = true;
        if (!cfg.manifest_path.empty()) {
            for (const auto& r : run_manifest(cfg))
                std::cout << "subject " << r.subject << ": " << r.accuracy_pct << "% (" << r.rule_count
                          << " rules)\n";
            std::cout << "comparison: " << (cfg.output_dir / "comparison.csv").string() << '\n';
        } else {
            const auto r = run_pipeline(cfg);
            std::cout << "accuracy " << r.accuracy_pct << "% with " << r.rule_count << " rules; report in "
                      << (cfg.output_dir / "report.json").string() << '\n';
        }
    } else if (*compare) {
        std::vector<SubjectAccuracy> results;
        for (const auto& p : compare_in) {
            const auto j = read_json(p);
            if (j.value("format", "") != "cspkit-report")
                throw ValidationError("not a report: " + p.string());
            results.push_back({j.at("subject").get<std::string>(), j.at("accuracy_pct").get<double>()});
        }
        const auto csv = compare_report(results).to_csv();
        if (compare_out.empty()) std::cout << csv;
        else write_file(compare_out, csv);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
