#include "cspkit/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "cspkit/error.hpp"
#include "cspkit/seed.hpp"

namespace cspkit {

using nlohmann::json;

namespace {

constexpr std::array<char, 6> kBankMagic = {'C', 'S', 'P', 'W', '1', '\0'};

std::string fmt(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ValidationError("config " + key + ": expected a number, got '" + v + "'");
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ValidationError("config " + key + ": expected an integer, got '" + v + "'");
    return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    const auto n = parse_int(key, v);
    if (n < 0) throw ValidationError("config " + key + ": must be non-negative");
    return static_cast<std::size_t>(n);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError("config " + key + ": expected true/false, got '" + v + "'");
}

std::pair<double, double> parse_range(const std::string& key, const std::string& v) {
    const auto colon = v.find(':');
    if (colon == std::string::npos) throw ValidationError("config " + key + ": expected LOW:HIGH");
    return {parse_double(key, v.substr(0, colon)), parse_double(key, v.substr(colon + 1))};
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Re-raises a module error with the pipeline stage prefixed, keeping its category.
template <typename F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        throw ValidationError(name + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(name + ": " + e.what());
    }
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json imatrix_to_json(const Eigen::MatrixXi& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

const char* estimator_name(MiEstimator e) { return e == MiEstimator::gaussian ? "gaussian" : "histogram"; }

}  // namespace

void PipelineConfig::validate() const {
    if (order < 1) throw ValidationError("order must be >= 1");
    if (!(band_low > 0.0 && band_low < band_high)) throw ValidationError("band must satisfy 0 < low < high");
    if (!(cue_s >= 0.0)) throw ValidationError("cue must be >= 0");
    if (!(window_start >= -cue_s && window_start < window_end))
        throw ValidationError("window must satisfy -cue <= start < end");
    if (!(z_threshold > 0.0)) throw ValidationError("z_threshold must be positive");
    if (m < 1) throw ValidationError("m must be >= 1");
    if (k < 2) throw ValidationError("k must be >= 2");
    if (ffdiag.max_iter < 1 || !(ffdiag.tol > 0.0)) throw ValidationError("invalid ffdiag settings");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0, 1)");
    if (max_passes < 1) throw ValidationError("max_passes must be >= 1");
    hyper.validate();
    pso.validate();
}

PipelineConfig PipelineConfig::from_map(const std::map<std::string, std::string>& kv) {
    PipelineConfig c;
    for (const auto& [key, v] : kv) {
        if (key == "band") {
            std::tie(c.band_low, c.band_high) = parse_range(key, v);
        } else if (key == "order") {
            c.order = static_cast<int>(parse_int(key, v));
        } else if (key == "phase") {
            if (v == "causal") c.phase = FilterPhase::causal;
            else if (v == "zero-phase") c.phase = FilterPhase::zero_phase;
            else throw ValidationError("config phase: expected causal or zero-phase");
        } else if (key == "cue") {
            c.cue_s = parse_double(key, v);
        } else if (key == "window") {
            std::tie(c.window_start, c.window_end) = parse_range(key, v);
        } else if (key == "z_threshold") {
            c.z_threshold = parse_double(key, v);
        } else if (key == "drop_outliers") {
            c.drop_outliers = parse_bool(key, v);
        } else if (key == "m") {
            c.m = parse_count(key, v);
        } else if (key == "k") {
            c.k = parse_count(key, v);
        } else if (key == "ffdiag_iters") {
            c.ffdiag.max_iter = static_cast<int>(parse_int(key, v));
        } else if (key == "ffdiag_tol") {
            c.ffdiag.tol = parse_double(key, v);
        } else if (key == "mi_estimator") {
            if (v == "gaussian") c.estimator = MiEstimator::gaussian;
            else if (v == "histogram") c.estimator = MiEstimator::histogram;
            else throw ValidationError("config mi_estimator: expected gaussian or histogram");
        } else if (key == "classifier") {
            if (v == "tune") c.tune = true;
            else if (v == "fixed") c.tune = false;
            else throw ValidationError("config classifier: expected tune or fixed");
        } else if (key == "add_threshold") {
            c.hyper.add_threshold_init = parse_double(key, v);
        } else if (key == "novelty_threshold") {
            c.hyper.novelty_threshold = parse_double(key, v);
        } else if (key == "inter_overlap") {
            c.hyper.inter_overlap = parse_double(key, v);
        } else if (key == "update_threshold") {
            c.hyper.update_threshold_init = parse_double(key, v);
        } else if (key == "max_passes") {
            c.max_passes = parse_count(key, v);
        } else if (key == "pso_iters") {
            c.pso.iterations = static_cast<int>(parse_int(key, v));
        } else if (key == "pso_width") {
            c.pso.parameter_width = parse_double(key, v);
        } else if (key == "pso_swarm") {
            c.pso.swarm_size = static_cast<int>(parse_int(key, v));
        } else if (key == "val_fraction") {
            c.val_fraction = parse_double(key, v);
        } else if (key == "seed") {
            const auto s = parse_int(key, v);
            if (s < 0) throw ValidationError("config seed: must be non-negative");
            c.seed = static_cast<std::uint64_t>(s);
        } else if (key == "subject") {
            c.subject = v;
        } else if (key == "train") {
            c.train_path = v;
        } else if (key == "test") {
            c.test_path = v;
        } else if (key == "manifest") {
            c.manifest_path = v;
        } else if (key == "output") {
            c.output_dir = v;
        } else {
            throw ValidationError("unknown config key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

std::map<std::string, std::string> PipelineConfig::to_map() const {
    return {
        {"band", fmt(band_low) + ":" + fmt(band_high)},
        {"order", std::to_string(order)},
        {"phase", phase == FilterPhase::causal ? "causal" : "zero-phase"},
        {"cue", fmt(cue_s)},
        {"window", fmt(window_start) + ":" + fmt(window_end)},
        {"z_threshold", fmt(z_threshold)},
        {"drop_outliers", drop_outliers ? "true" : "false"},
        {"m", std::to_string(m)},
        {"k", std::to_string(k)},
        {"ffdiag_iters", std::to_string(ffdiag.max_iter)},
        {"ffdiag_tol", fmt(ffdiag.tol)},
        {"mi_estimator", estimator_name(estimator)},
        {"classifier", tune ? "tune" : "fixed"},
        {"add_threshold", fmt(hyper.add_threshold_init)},
        {"novelty_threshold", fmt(hyper.novelty_threshold)},
        {"inter_overlap", fmt(hyper.inter_overlap)},
        {"update_threshold", fmt(hyper.update_threshold_init)},
        {"max_passes", std::to_string(max_passes)},
        {"pso_iters", std::to_string(pso.iterations)},
        {"pso_width", fmt(pso.parameter_width)},
        {"pso_swarm", std::to_string(pso.swarm_size)},
        {"val_fraction", fmt(val_fraction)},
        {"seed", std::to_string(seed)},
        {"subject", subject},
        {"train", train_path.string()},
        {"test", test_path.string()},
        {"manifest", manifest_path.string()},
        {"output", output_dir.string()},
    };
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw ValidationError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return kv;
}

TrialSet preprocess_set(const TrialSet& set, const PipelineConfig& cfg) {
    const auto spec = design_bandpass(cfg.order, cfg.band_low, cfg.band_high, set.fs);
    TrialSet out;
    out.n_classes = set.n_classes;
    out.fs = set.fs;
    out.n_channels = set.n_channels;
    out.trials.reserve(set.size());
    for (const auto& t : set.trials)
        out.trials.push_back(
            epoch(apply_filter(t, spec, cfg.phase), cfg.cue_s + cfg.window_start, cfg.cue_s + cfg.window_end));
    return out;
}

CovarianceStage covariance_stage(const TrialSet& train, const PipelineConfig& cfg) {
    if (train.empty()) throw ValidationError("training set is empty");
    CovarianceStage st;
    for (const auto& t : train.trials) st.norms.push_back(spatial_covariance(t, false).matrix.norm());
    st.outlier_mask = per_class_outlier_mask(train, cfg.z_threshold);
    st.classes = class_average(train, st.outlier_mask);
    return st;
}

SpatialFilterBank filter_stage(const TrialSet& train, const CovarianceStage& cov, const PipelineConfig& cfg,
                               FfdiagResult* diagnostics) {
    if (train.n_classes < 2) throw ValidationError("need at least two classes");
    if (train.n_classes == 2) {
        auto bank = csp_two_class(cov.classes.per_class[0].average.matrix, cov.classes.per_class[1].average.matrix);
        select_by_median(bank, train, cfg.m);
        return bank;
    }
    return multiclass_csp(cov.classes, train, cfg.k, cfg.ffdiag, cfg.estimator, diagnostics);
}

std::vector<Sample> to_samples(const std::vector<FeatureVector>& features) {
    std::vector<Sample> out;
    out.reserve(features.size());
    for (const auto& f : features) out.push_back({f.values, f.label});
    return out;
}

void write_filter_bank(const SpatialFilterBank& bank, const std::filesystem::path& path) {
    json header = {{"format", "cspkit-filterbank"},
                   {"version", 1},
                   {"method", bank.method},
                   {"rows", bank.W.rows()},
                   {"cols", bank.W.cols()},
                   {"scores", bank.scores},
                   {"selected", bank.selected}};
    json eig = json::array();
    for (const auto& v : bank.eigvals_per_class) eig.push_back(std::vector<double>(v.begin(), v.end()));
    header["eigvals_per_class"] = std::move(eig);
    const auto text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write(kBankMagic.data(), kBankMagic.size());
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (Eigen::Index r = 0; r < bank.W.rows(); ++r)
        for (Eigen::Index c = 0; c < bank.W.cols(); ++c) detail::put_f64(out, bank.W(r, c));
    if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

SpatialFilterBank read_filter_bank(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open filter bank " + path.string());
    std::array<char, kBankMagic.size()> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kBankMagic)
        throw ValidationError("not a filter bank file: " + path.string());
    const auto len = detail::get_u32(in, "filter bank header");
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw ValidationError("filter bank header truncated");
    const auto header = json::parse(text, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "cspkit-filterbank" || header.value("version", 0) != 1)
        throw ValidationError("unsupported filter bank header");

    SpatialFilterBank bank;
    bank.method = header.at("method").get<std::string>();
    const auto rows = header.at("rows").get<Eigen::Index>();
    const auto cols = header.at("cols").get<Eigen::Index>();
    bank.scores = header.at("scores").get<std::vector<double>>();
    bank.selected = header.at("selected").get<std::vector<std::size_t>>();
    for (const auto& v : header.at("eigvals_per_class")) {
        const auto d = v.get<std::vector<double>>();
        bank.eigvals_per_class.push_back(Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size())));
    }
    bank.W.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) bank.W(r, c) = detail::get_f64(in, "filter matrix");
    for (auto s : bank.selected)
        if (s >= static_cast<std::size_t>(rows)) throw ValidationError("filter bank selects a missing row");
    return bank;
}

void write_features(const FeatureFile& file, const std::filesystem::path& path) {
    json samples = json::array();
    for (const auto& f : file.features)
        samples.push_back({{"trial_id", f.trial_id},
                           {"label", f.label},
                           {"values", std::vector<double>(f.values.begin(), f.values.end())}});
    const json doc = {{"format", "cspkit-features"},
                      {"version", 1},
                      {"n_classes", file.n_classes},
                      {"dim", file.features.empty() ? 0 : file.features.front().values.size()},
                      {"samples", std::move(samples)}};
    write_text(path, doc.dump(1) + "\n");
}

FeatureFile read_features(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open feature file " + path.string());
    const json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || doc.value("format", "") != "cspkit-features" || doc.value("version", 0) != 1)
        throw ValidationError("not a feature file: " + path.string());
    FeatureFile file;
    file.n_classes = doc.at("n_classes").get<std::uint32_t>();
    const auto dim = doc.at("dim").get<std::size_t>();
    for (const auto& s : doc.at("samples")) {
        FeatureVector f;
        f.trial_id = s.at("trial_id").get<std::uint32_t>();
        f.label = s.at("label").get<std::uint32_t>();
        const auto v = s.at("values").get<std::vector<double>>();
        if (v.size() != dim) throw ValidationError("feature vector length differs from header");
        if (f.label < 1 || f.label > file.n_classes) throw ValidationError("feature label out of range");
        f.values = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        file.features.push_back(std::move(f));
    }
    return file;
}

json covariance_to_json(const CovarianceStage& cov, const TrialSet& set, double z_threshold) {
    json classes = json::array();
    for (const auto& c : cov.classes.per_class) {
        json rejected = json::array();
        for (std::size_t i = 0; i < set.size(); ++i)
            if (set.trials[i].label == c.label && cov.outlier_mask[i]) rejected.push_back(set.trials[i].id);
        classes.push_back({{"label", c.label},
                           {"n_retained", c.n_retained},
                           {"n_rejected", c.n_rejected},
                           {"rejected_ids", std::move(rejected)},
                           {"average", matrix_to_json(c.average.matrix)}});
    }
    return {{"format", "cspkit-covariance"},
            {"version", 1},
            {"z_threshold", z_threshold},
            {"norm", "frobenius of un-normalized EE'"},
            {"norms", cov.norms},
            {"outlier_ids", cov.classes.outlier_ids},
            {"classes", std::move(classes)}};
}

json hyper_to_json(const HyperParams& hp) {
    return {{"add_threshold", hp.add_threshold_init},
            {"novelty_threshold", hp.novelty_threshold},
            {"inter_overlap", hp.inter_overlap},
            {"update_threshold", hp.update_threshold_init}};
}

HyperParams hyper_from_json(const json& j) {
    HyperParams hp;
    hp.add_threshold_init = j.at("add_threshold").get<double>();
    hp.novelty_threshold = j.at("novelty_threshold").get<double>();
    hp.inter_overlap = j.at("inter_overlap").get<double>();
    hp.update_threshold_init = j.at("update_threshold").get<double>();
    hp.validate();
    return hp;
}

const std::vector<ReferenceRow>& reference_table() {
    static const std::vector<ReferenceRow> rows = {
        {"1", 48.1, 61.5, 68.75, 74.65}, {"2", 27.3, 32.1, 41.67, 45.48}, {"3", 70.6, 68.6, 66.31, 74.31},
        {"4", 21.4, 27.1, 37.98, 39.58}, {"5", 22.7, 34.3, 25.0, 32.99},  {"6", 32.4, 35.3, 36.62, 37.9},
        {"7", 52.3, 48.0, 52.97, 54.17}, {"8", 65.8, 65.6, 65.55, 66.32}, {"9", 34.2, 41.8, 64.58, 66.31},
    };
    return rows;
}

ReferenceRow reference_mean() { return {"mean", 41.64, 46.01, 51.04, 54.63}; }

std::optional<ReferenceRow> reference_for(const std::string& subject) {
    std::string key = subject;
    // Accept "1", "01", "A01" style subject ids.
    while (!key.empty() && !std::isdigit(static_cast<unsigned char>(key.front()))) key.erase(key.begin());
    while (key.size() > 1 && key.front() == '0') key.erase(key.begin());
    for (const auto& r : reference_table())
        if (r.subject == key) return r;
    return std::nullopt;
}

json EvaluationReport::to_json() const {
    json rejected = json::array();
    for (const auto& ids : rejected_ids_per_class) rejected.push_back(ids);
    json reference = json::object();
    const auto mean = reference_mean();
    reference["mean"] = {{"mcsp", mean.mcsp},
                         {"complex_csp", mean.complex_csp},
                         {"proposed_svm", mean.proposed_svm},
                         {"proposed_srit2nfis", mean.proposed_srit2nfis}};
    if (const auto r = reference_for(subject))
        reference["subject"] = {{"subject", r->subject},
                                {"mcsp", r->mcsp},
                                {"complex_csp", r->complex_csp},
                                {"proposed_svm", r->proposed_svm},
                                {"proposed_srit2nfis", r->proposed_srit2nfis}};
    json j = {
        {"format", "cspkit-report"},
        {"version", 1},
        {"subject", subject},
        {"accuracy_pct", accuracy_pct},
        {"confusion", imatrix_to_json(confusion)},
        {"rejected_ids_per_class", std::move(rejected)},
        {"rule_count", rule_count},
        {"training",
         {{"grew", training.grew},
          {"updated", training.updated},
          {"deleted", training.deleted},
          {"reserved", training.reserved},
          {"pruned", training.pruned},
          {"passes", training.passes},
          {"reserve_remaining", training.reserve_remaining.size()},
          {"add_threshold_trace", training.add_threshold_trace},
          {"update_threshold_trace", training.update_threshold_trace}}},
        {"hyperparameters", hyper_to_json(hyper)},
        {"filters",
         {{"method", filter_method}, {"selected", selected_filters}, {"scores", filter_scores}}},
        {"config", config.to_map()},
        {"reference_accuracy_pct", std::move(reference)},
    };
    if (filter_method.rfind("ffdiag", 0) == 0)
        j["filters"]["mi_note"] = "mutual information from per-class Gaussian fits of each filter's log-variance";
    if (ffdiag)
        j["ffdiag"] = {{"iterations", ffdiag->iterations},
                       {"converged", ffdiag->converged},
                       {"objective", ffdiag->objective}};
    if (tuned_validation_accuracy) {
        j["pso"] = {{"validation_accuracy", *tuned_validation_accuracy}, {"trace", pso_trace}};
    }
    return j;
}

EvaluationReport run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.train_path.empty() || cfg.test_path.empty())
        throw ValidationError("run needs both train and test trial files");

    const auto train_raw = stage("load train", [&] { return read_trialset(cfg.train_path); });
    const auto test_raw = stage("load test", [&] { return read_trialset(cfg.test_path); });
    stage("load", [&] {
        if (train_raw.n_classes != test_raw.n_classes || train_raw.n_channels != test_raw.n_channels ||
            train_raw.fs != test_raw.fs)
            throw ValidationError("train and test headers differ");
        if (test_raw.empty()) throw ValidationError("test set is empty");
        for (std::uint32_t c = 1; c <= train_raw.n_classes; ++c)
            if (trials_of_class(train_raw, c).empty())
                throw ValidationError("training set has no trials of class " + std::to_string(c));
        return 0;
    });

    const auto train = stage("preprocess", [&] { return preprocess_set(train_raw, cfg); });
    const auto test = stage("preprocess", [&] { return preprocess_set(test_raw, cfg); });
    const auto cov = stage("covariance", [&] { return covariance_stage(train, cfg); });

    FfdiagResult jd;
    const auto bank = stage("csp", [&] { return filter_stage(train, cov, cfg, &jd); });

    const FeatureFile train_features{train.n_classes, stage("features", [&] { return extract_features(train, bank); })};
    const FeatureFile test_features{test.n_classes, stage("features", [&] { return extract_features(test, bank); })};

    std::vector<Sample> train_samples;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (!(cfg.drop_outliers && cov.outlier_mask[i]))
            train_samples.push_back({train_features.features[i].values, train_features.features[i].label});
    const auto test_samples = to_samples(test_features.features);

    EvaluationReport rep;
    rep.subject = cfg.subject;
    rep.config = cfg;
    rep.hyper = cfg.hyper;
    if (cfg.tune) {
        const auto res = stage("tune", [&] {
            const auto split = stratified_tail_split(train_samples, train.n_classes, cfg.val_fraction);
            PSOConfig pso = cfg.pso;
            pso.seed = derive_seed(cfg.seed, "pso");
            return tune(split.train, split.validation, train.n_classes, pso, cfg.max_passes);
        });
        rep.hyper = res.best;
        rep.tuned_validation_accuracy = res.best_fitness;
        rep.pso_trace = res.trace;
    }

    Srit2nfis model(train.n_classes, bank.selected.size(), rep.hyper);
    rep.training = stage("train", [&] { return model.train(train_samples, cfg.max_passes); });
    const auto ev = stage("evaluate", [&] { return evaluate(model, test_samples); });

    rep.accuracy_pct = 100.0 * ev.accuracy;
    rep.confusion = ev.confusion;
    rep.rule_count = model.rules().size();
    rep.rejected_ids_per_class.resize(train.n_classes);
    for (std::size_t i = 0; i < train.size(); ++i)
        if (cov.outlier_mask[i]) rep.rejected_ids_per_class[train.trials[i].label - 1].push_back(train.trials[i].id);
    rep.selected_filters = bank.selected;
    rep.filter_scores = bank.scores;
    rep.filter_method = bank.method;
    if (train.n_classes > 2) rep.ffdiag = jd;

    // Artifacts.
    const auto& dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    write_text(dir / "covariance.json", covariance_to_json(cov, train, cfg.z_threshold).dump(1) + "\n");
    write_filter_bank(bank, dir / "filters.cspw");
    write_features(train_features, dir / "features_train.json");
    write_features(test_features, dir / "features_test.json");
    model.save(dir / "model.srit2");
    write_text(dir / "report.json", rep.to_json().dump(2) + "\n");

    std::ostringstream csv;
    csv.precision(17);
    csv << "subject,accuracy_pct,rule_count,rejected_outliers,grew,updated,deleted,reserved,pruned,"
           "add_threshold,novelty_threshold,inter_overlap,update_threshold\n";
    csv << rep.subject << ',' << rep.accuracy_pct << ',' << rep.rule_count << ','
        << cov.classes.outlier_ids.size() << ',' << rep.training.grew << ',' << rep.training.updated << ','
        << rep.training.deleted << ',' << rep.training.reserved << ',' << rep.training.pruned << ','
        << rep.hyper.add_threshold_init << ',' << rep.hyper.novelty_threshold << ',' << rep.hyper.inter_overlap
        << ',' << rep.hyper.update_threshold_init << '\n';
    write_text(dir / "report.csv", csv.str());

    std::ostringstream traj;
    traj.precision(17);
    traj << "step,add_threshold,update_threshold\n";
    for (std::size_t i = 0; i < rep.training.add_threshold_trace.size(); ++i)
        traj << i + 1 << ',' << rep.training.add_threshold_trace[i] << ','
             << rep.training.update_threshold_trace[i] << '\n';
    write_text(dir / "thresholds.csv", traj.str());

    std::ostringstream conf;
    for (Eigen::Index r = 0; r < rep.confusion.rows(); ++r) {
        for (Eigen::Index c = 0; c < rep.confusion.cols(); ++c) conf << (c ? "," : "") << rep.confusion(r, c);
        conf << '\n';
    }
    write_text(dir / "confusion.csv", conf.str());

    if (cfg.tune) {
        std::ostringstream t;
        t.precision(17);
        t << "iteration,best_validation_accuracy\n";
        for (std::size_t i = 0; i < rep.pso_trace.size(); ++i) t << i + 1 << ',' << rep.pso_trace[i] << '\n';
        write_text(dir / "pso_trace.csv", t.str());
    }
    return rep;
}

std::vector<EvaluationReport> run_manifest(const PipelineConfig& cfg) {
    cfg.validate();
    const auto entries = stage("manifest", [&] { return read_manifest(cfg.manifest_path); });

    std::vector<std::string> order;
    std::map<std::string, std::pair<std::filesystem::path, std::filesystem::path>> sessions;
    for (const auto& e : entries) {
        if (!sessions.contains(e.subject)) order.push_back(e.subject);
        auto& s = sessions[e.subject];
        if (e.session == "T" || e.session == "train") s.first = e.path;
        else if (e.session == "E" || e.session == "test") s.second = e.path;
        else throw ValidationError("manifest: unknown session '" + e.session + "' (expected T/E)");
    }

    std::vector<EvaluationReport> reports;
    for (const auto& subject : order) {
        const auto& [train, test] = sessions[subject];
        if (train.empty() || test.empty())
            throw ValidationError("manifest: subject " + subject + " lacks a T or E session");
        PipelineConfig sub = cfg;
        sub.subject = subject;
        sub.train_path = train;
        sub.test_path = test;
        sub.manifest_path.clear();
        sub.output_dir = cfg.output_dir / ("subject_" + subject);
        reports.push_back(run_pipeline(sub));
    }
    std::filesystem::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "comparison.csv", compare_report(reports).to_csv());
    return reports;
}

ComparisonTable compare_report(const std::vector<SubjectAccuracy>& results,
                               const std::vector<ReferenceRow>& references) {
    ComparisonTable t;
    for (const auto& r : results) {
        ComparisonRow row;
        row.subject = r.subject;
        row.accuracy_pct = r.accuracy_pct;
        for (const auto& ref : references)
            if (reference_for(r.subject) && ref.subject == reference_for(r.subject)->subject) row.reference = ref;
        t.rows.push_back(std::move(row));
    }
    return t;
}

ComparisonTable compare_report(const std::vector<EvaluationReport>& reports,
                               const std::vector<ReferenceRow>& references) {
    std::vector<SubjectAccuracy> results;
    for (const auto& r : reports) results.push_back({r.subject, r.accuracy_pct});
    return compare_report(results, references);
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream out;
    out << "subject,mcsp,complex_csp,proposed_svm,proposed_srit2nfis,this_run\n";
    if (rows.empty()) return out.str();

    auto cell = [](std::optional<double> v) { return v ? fmt(*v) : std::string(); };
    std::array<std::vector<double>, 5> cols;
    for (const auto& r : rows) {
        std::array<std::optional<double>, 5> v;
        if (r.reference) v = {r.reference->mcsp, r.reference->complex_csp, r.reference->proposed_svm,
                              r.reference->proposed_srit2nfis, std::nullopt};
        v[4] = r.accuracy_pct;
        out << r.subject;
        for (std::size_t i = 0; i < 5; ++i) {
            out << ',' << cell(v[i]);
            if (v[i]) cols[i].push_back(*v[i]);
        }
        out << '\n';
    }
    auto mean = [](const std::vector<double>& x) -> std::optional<double> {
        if (x.empty()) return std::nullopt;
        return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    };
    auto sd = [&](const std::vector<double>& x) -> std::optional<double> {
        if (x.size() < 2) return std::nullopt;
        const double m = *mean(x);
        double ss = 0.0;
        for (double v : x) ss += (v - m) * (v - m);
        return std::sqrt(ss / static_cast<double>(x.size() - 1));
    };
    out << "mean";
    for (const auto& c : cols) out << ',' << cell(mean(c));
    out << "\nsd";
    for (const auto& c : cols) out << ',' << cell(sd(c));
    out << '\n';
    return out.str();
}

}  // namespace cspkit
