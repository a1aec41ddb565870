#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cspkit/covariance.hpp"
#include "cspkit/csp.hpp"
#include "cspkit/preprocess.hpp"
#include "cspkit/pso.hpp"
#include "cspkit/srit2nfis.hpp"

namespace cspkit {

struct PipelineConfig {
    double band_low = 8.0;
    double band_high = 40.0;
    int order = 5;
    FilterPhase phase = FilterPhase::causal;
    double cue_s = 2.0;          // cue onset within each trial
    double window_start = 0.5;   // analysis window, seconds after the cue
    double window_end = 4.0;
    double z_threshold = 2.5;
    bool drop_outliers = false;
    std::size_t m = 3;           // two-class: m highest + m lowest filters
    std::size_t k = 6;           // multiclass: filters kept by mutual information
    FfdiagOptions ffdiag;
    MiEstimator estimator = MiEstimator::gaussian;
    bool tune = false;
    HyperParams hyper;
    PSOConfig pso;
    double val_fraction = 0.25;
    std::size_t max_passes = 3;
    std::uint64_t seed = 1;
    std::string subject;
    std::filesystem::path train_path;
    std::filesystem::path test_path;
    std::filesystem::path manifest_path;
    std::filesystem::path output_dir = "cspkit-out";

    void validate() const;
    /// Builds a config from key/value pairs, rejecting unknown keys.
    static PipelineConfig from_map(const std::map<std::string, std::string>& kv);
    std::map<std::string, std::string> to_map() const;
};

/// "key = value" lines; '#' comments and blank lines ignored. Duplicate keys are errors.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Band-pass then cut the analysis window from every trial.
TrialSet preprocess_set(const TrialSet& set, const PipelineConfig& cfg);

struct CovarianceStage {
    ClassCovarianceSet classes;
    std::vector<bool> outlier_mask;
    std::vector<double> norms;
};

CovarianceStage covariance_stage(const TrialSet& train, const PipelineConfig& cfg);

/// Two classes: CSP with median-ratio selection of 2m filters. More classes:
/// joint diagonalization with mutual-information selection of k filters.
SpatialFilterBank filter_stage(const TrialSet& train, const CovarianceStage& cov, const PipelineConfig& cfg,
                               FfdiagResult* diagnostics = nullptr);

std::vector<Sample> to_samples(const std::vector<FeatureVector>& features);

// Stage artifacts.
void write_filter_bank(const SpatialFilterBank& bank, const std::filesystem::path& path);
SpatialFilterBank read_filter_bank(const std::filesystem::path& path);

struct FeatureFile {
    std::uint32_t n_classes = 0;
    std::vector<FeatureVector> features;
};
void write_features(const FeatureFile& file, const std::filesystem::path& path);
FeatureFile read_features(const std::filesystem::path& path);

nlohmann::json covariance_to_json(const CovarianceStage& cov, const TrialSet& set, double z_threshold);

nlohmann::json hyper_to_json(const HyperParams& hp);
HyperParams hyper_from_json(const nlohmann::json& j);

/// Published accuracies (%) of the reference methods on the nine 2a subjects.
struct ReferenceRow {
    std::string subject;
    double mcsp = 0.0;
    double complex_csp = 0.0;
    double proposed_svm = 0.0;
    double proposed_srit2nfis = 0.0;
};
const std::vector<ReferenceRow>& reference_table();
ReferenceRow reference_mean();
std::optional<ReferenceRow> reference_for(const std::string& subject);

struct EvaluationReport {
    std::string subject;
    double accuracy_pct = 0.0;
    Eigen::MatrixXi confusion;
    std::vector<std::vector<std::uint32_t>> rejected_ids_per_class;
    std::size_t rule_count = 0;
    TrainingReport training;
    HyperParams hyper;
    std::optional<double> tuned_validation_accuracy;
    std::vector<double> pso_trace;
    std::vector<std::size_t> selected_filters;
    std::vector<double> filter_scores;
    std::string filter_method;
    std::optional<FfdiagResult> ffdiag;
    PipelineConfig config;

    nlohmann::json to_json() const;
};

/// Full pipeline on one train/test pair; persists every stage artifact under
/// cfg.output_dir along with report.json and report.csv.
EvaluationReport run_pipeline(const PipelineConfig& cfg);

/// Runs every subject of cfg.manifest_path that has both a training (T/train)
/// and an evaluation (E/test) session, then writes comparison.csv.
std::vector<EvaluationReport> run_manifest(const PipelineConfig& cfg);

struct SubjectAccuracy {
    std::string subject;
    double accuracy_pct = 0.0;
};

struct ComparisonRow {
    std::string subject;
    std::optional<ReferenceRow> reference;
    double accuracy_pct = 0.0;
};

/// Side-by-side listing of this run against the reference methods, with mean
/// and sample standard deviation rows when nonempty.
struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    std::string to_csv() const;
};

ComparisonTable compare_report(const std::vector<SubjectAccuracy>& results,
                               const std::vector<ReferenceRow>& references = reference_table());
ComparisonTable compare_report(const std::vector<EvaluationReport>& reports,
                               const std::vector<ReferenceRow>& references = reference_table());

}  // namespace cspkit
