#pragma once

#include "profmon/autoencoder.hpp"
#include "profmon/gasket.hpp"
#include "profmon/image_io.hpp"
#include "profmon/linear.hpp"
#include "profmon/monitoring.hpp"
#include "profmon/profile.hpp"
#include "profmon/stats.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace profmon {

struct ShiftGrid {
    ShiftKind kind = ShiftKind::Location;
    std::vector<double> deltas;
};

struct DataSource {
    enum class Kind { Simulate, Ingest };
    Kind kind = Kind::Simulate;
    int ic_samples = 768;
    int oc_samples = 256;
    ICDistribution ic;
    GasketParams gasket;
    std::filesystem::path path;  // ingest only
    ClassMap class_map;          // ingest only
};

// Axes left empty keep the base TrainConfig value. lambda only applies to AAE.
struct HyperGrid {
    std::vector<double> learning_rate;
    std::vector<double> dropout;
    std::vector<int> batch_size;
    std::vector<int> latent_dim;
    std::vector<double> lambda;
};

struct ExperimentConfig {
    DataSource data;
    SplitSpec split{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0};
    ModelKind model = ModelKind::VAE;
    TrainConfig train;
    ComponentSelector pca = ComponentSelector::explained(0.99);
    int ppca_latent_dim = 4;
    PosteriorConvention ppca_posterior = PosteriorConvention::NoiseScaled;
    double percentile = 95.0;
    int q_mc_samples = 0;
    std::vector<std::uint64_t> seeds{0};
    std::vector<ShiftGrid> shifts;
    HyperGrid grid;
    int jobs = 1;
    std::filesystem::path output_dir = "runs";

    // Throws InvalidInput.
    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// splitmix64-style mixing of a base seed with tags.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

// Table-style intensity bucket for a shift: Low/Mid/High at delta 1/2/3
// (mean and magnitude use Low/High only); empty when delta is off-grid.
std::string intensity_bucket(const std::string& scenario, double delta);

struct Scenario {
    std::string name;  // shift kind, or "class_<label>" for ingested corpora
    double delta = 0.0;
    Dataset data;
};

struct PreparedData {
    Partition ic;
    std::vector<Scenario> oc;
};

// Simulated data is regenerated from the replication seed; ingested data is
// split into in-control samples (label 0 or unlabelled) and one scenario per
// other label.
PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t replication);

struct ScenarioResult {
    std::string scenario;
    double delta = 0.0;
    std::string stats_file;
    double power_q = 0.0;
    std::optional<double> power_t2;
};

struct RunManifest {
    ModelKind model = ModelKind::VAE;
    std::uint64_t replication = 0;
    int config_index = 0;
    TrainConfig train;
    nlohmann::json experiment;  // config echo
    std::vector<std::string> model_files;
    std::string model_entry;  // file phase2 loads
    double validation_error = 0.0;
    std::vector<double> epoch_loss;
    int components = 0;  // PCA: retained components
    ControlLimits limits;
    std::optional<double> ucl_t2_alt;  // PPCA: the other T2 convention
    std::size_t n_train = 0, n_validation = 0, n_test = 0;
    std::string stats_validation, stats_test;
    std::vector<ScenarioResult> scenarios;
    std::filesystem::path directory;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& directory);
// Throws CompatibilityError on a wrong format or version.
RunManifest load_manifest(const std::filesystem::path& manifest_file);

// Train (or fit), set limits on validation, estimate FAR on test, score every
// scenario, and persist everything under dir. Wall times go to timings.json
// beside manifest.json so the manifest itself is reproducible.
RunManifest run_experiment(const ExperimentConfig& config, const PreparedData& data, std::uint64_t replication,
                           const TrainConfig& train, int config_index, const std::filesystem::path& dir);

// Phase I for one replication seed into <output_dir>/<model>/seed_<seed>.
RunManifest phase1(const ExperimentConfig& config, std::uint64_t replication);

// Score a stream against persisted Phase-I artifacts; writes csv_out when given.
std::vector<MonitoringRecord> phase2_score(const std::filesystem::path& manifest_file, const Dataset& stream,
                                           const std::filesystem::path& csv_out = {});

// Rebuilds the fitted model described by a manifest.
std::unique_ptr<Monitor> load_monitor(const RunManifest& manifest);

void write_stats_csv(const std::filesystem::path& path, const std::vector<MonitoringRecord>& records,
                     const ControlLimits& limits);

struct StatsColumns {
    std::vector<std::string> sample_id;
    std::vector<double> q;
    std::vector<std::optional<double>> t2;
};
StatsColumns read_stats_csv(const std::filesystem::path& path);

std::vector<TrainConfig> expand_grid(const ExperimentConfig& config);

struct GridEntry {
    std::uint64_t replication = 0;
    int config_index = 0;
    TrainConfig train;
    std::optional<RunManifest> manifest;
    std::string error;

    bool ok() const { return manifest.has_value(); }
};

// Ascending validation error; ties go to the lower training seed, then the
// lower config index. Failed entries come last.
std::vector<GridEntry> rank_entries(std::vector<GridEntry> entries);

struct GridResult {
    std::vector<GridEntry> entries;                    // every (replication, config)
    std::vector<std::vector<GridEntry>> ranked;        // per replication, best first
    std::vector<RunManifest> best;                     // per replication
};

// Runs every configuration for every seed with config.jobs workers. Throws
// TrainingError listing per-config errors when no configuration succeeds for
// some replication.
GridResult grid_search(const ExperimentConfig& config,
                       const std::function<void(const GridEntry&)>& progress = {});

// Runs fn(0..n-1) on up to jobs threads; rethrows the first exception.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

struct CorrelationCell {
    std::string model;
    std::string scenario;
    double delta = 0.0;
    std::string replication;  // "all" when pooled over replications
    std::optional<CorrelationResult> result;
    std::string note;
};

struct CorrelationReport {
    std::vector<CorrelationCell> cells;
    double negative_ratio = 0.0;     // over defined pooled cells
    double significant_ratio = 0.0;  // p <= 0.05 over defined pooled cells
    double replication_negative_ratio = 0.0;
    int defined_cells = 0;
    int undefined_cells = 0;
};

// Pearson correlation between validation error and Q detection power, per
// model x scenario x intensity, pooled over replications and per replication.
CorrelationReport correlation_report(const std::vector<GridEntry>& entries);
void write_correlation_csv(const std::filesystem::path& path, const CorrelationReport& report);

struct PowerCell {
    std::string model;
    std::string statistic;  // "Q" or "T2"
    std::string scenario;
    double delta = 0.0;
    std::string bucket;
    double median = 0.0, min = 0.0, max = 0.0;
    int replications = 0;
};

// Median detection power across replications, recomputed from the persisted
// statistics CSVs and control limits.
std::vector<PowerCell> report_tables(const std::vector<RunManifest>& manifests);
void write_power_csv(const std::filesystem::path& path, const std::vector<PowerCell>& cells);

// Every manifest.json below a directory, sorted by path.
std::vector<std::filesystem::path> find_manifests(const std::filesystem::path& root);

}  // namespace profmon
