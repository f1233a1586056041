// Command-line front end. Exit codes: 0 success, 2 invalid input or
// incompatible artifacts, 3 training failure, 1 anything else.
#include "profmon/errors.hpp"
#include "profmon/image_io.hpp"
#include "profmon/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace profmon;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string model;
    int jobs = 0;
};

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (!c.model.empty()) cfg.model = parse_model_kind(c.model);
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (c.seed) cfg.seeds = {*c.seed};
    if (c.jobs > 0) cfg.jobs = c.jobs;
    cfg.validate();
    return cfg;
}

// Best-configuration manifests: the target of each best.json, plus any
// manifest that does not sit under a directory holding a best.json.
std::vector<RunManifest> best_manifests(const fs::path& root) {
    std::vector<RunManifest> out;
    std::vector<fs::path> ranked_dirs;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().filename() == "best.json") ranked_dirs.push_back(e.path().parent_path());
    }
    std::sort(ranked_dirs.begin(), ranked_dirs.end());
    for (const auto& dir : ranked_dirs) {
        std::ifstream in(dir / "best.json");
        const auto j = nlohmann::json::parse(in);
        out.push_back(load_manifest(dir / j.at("manifest").get<std::string>()));
    }
    for (const auto& path : find_manifests(root)) {
        const bool ranked = std::any_of(ranked_dirs.begin(), ranked_dirs.end(), [&](const fs::path& d) {
            const auto rel = fs::relative(path, d);
            return !rel.empty() && rel.native()[0] != '.';
        });
        if (!ranked) out.push_back(load_manifest(path));
    }
    return out;
}

void print_manifest(const RunManifest& m) {
    std::printf("%s seed %llu: validation error %.6g, UCL(Q) %.6g, FAR(Q) %.4f", to_string(m.model).c_str(),
                static_cast<unsigned long long>(m.replication), m.validation_error, m.limits.ucl_q,
                m.limits.estimated_far);
    if (m.limits.estimated_far_t2) std::printf(", FAR(T2) %.4f", *m.limits.estimated_far_t2);
    std::printf("\n");
    for (const auto& s : m.scenarios) {
        std::printf("  %-10s delta %-5g power Q %.3f", s.scenario.c_str(), s.delta, s.power_q);
        if (s.power_t2) std::printf("  T2 %.3f", *s.power_t2);
        std::printf("\n");
    }
}

int run(int argc, char** argv) {
    CLI::App app{"Profile monitoring with linear and probabilistic autoencoders"};
    app.require_subcommand(1);

    auto add_common = [](CLI::App* sub, Common& c, bool need_config) {
        auto* opt = sub->add_option("--config", c.config, "Experiment config (JSON)");
        if (need_config) opt->required();
        sub->add_option("--seed", c.seed, "Replication seed (overrides the config's seed list)");
        sub->add_option("--out", c.out, "Output directory");
        sub->add_option("--model", c.model, "Model kind")->check(CLI::IsMember({"pca", "ppca", "ae", "vae", "aae"}));
        sub->add_option("--jobs", c.jobs, "Concurrent jobs")->check(CLI::PositiveNumber);
    };

    Common sim_c, p1_c, grid_c, rep_c, corr_c, p2_c;
    auto* sim = app.add_subcommand("simulate", "Write simulated in-control and shifted gasket datasets");
    add_common(sim, sim_c, false);
    auto* p1 = app.add_subcommand("phase1", "Train, set control limits and estimate FAR");
    add_common(p1, p1_c, true);
    auto* p2 = app.add_subcommand("phase2", "Score a dataset directory against Phase-I artifacts");
    add_common(p2, p2_c, false);
    std::string manifest_path, data_dir;
    p2->add_option("--manifest", manifest_path, "Phase-I manifest.json")->required();
    p2->add_option("--data", data_dir, "Dataset directory (PGM files, optional labels.csv)")->required();
    auto* grid = app.add_subcommand("grid-search", "Train every grid configuration for every seed");
    add_common(grid, grid_c, true);
    auto* rep = app.add_subcommand("report", "Median detection power tables from persisted runs");
    add_common(rep, rep_c, false);
    auto* corr = app.add_subcommand("corr", "Correlation of validation error with detection power");
    add_common(corr, corr_c, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (sim->parsed()) {
        ExperimentConfig cfg = resolve(sim_c);
        if (cfg.data.kind != DataSource::Kind::Simulate) throw InvalidInput("simulate needs a simulation data source");
        const fs::path out = sim_c.out.empty() ? fs::path("simulated") : fs::path(sim_c.out);
        const auto data = prepare_data(cfg, cfg.seeds.front());
        export_dataset(out / "train", data.ic.train);
        export_dataset(out / "validation", data.ic.validation);
        export_dataset(out / "test", data.ic.test);
        for (const auto& s : data.oc) {
            char name[64];
            std::snprintf(name, sizeof name, "oc_%s_%g", s.name.c_str(), s.delta);
            export_dataset(out / name, s.data);
        }
        std::printf("wrote %zu in-control and %zu shifted datasets to %s\n", std::size_t{3}, data.oc.size(),
                    out.string().c_str());
        return 0;
    }
    if (p1->parsed()) {
        const ExperimentConfig cfg = resolve(p1_c);
        for (auto seed : cfg.seeds) print_manifest(phase1(cfg, seed));
        return 0;
    }
    if (p2->parsed()) {
        const Dataset stream = import_dataset(data_dir);
        const fs::path out = p2_c.out.empty() ? fs::path("stats_phase2.csv") : fs::path(p2_c.out);
        const auto records = phase2_score(manifest_path, stream, out);
        std::size_t alarms = 0;
        const auto m = load_manifest(manifest_path);
        for (const auto& r : records) alarms += r.q_ere > m.limits.ucl_q;
        std::printf("scored %zu samples, %zu Q alarms, wrote %s\n", records.size(), alarms, out.string().c_str());
        return 0;
    }
    if (grid->parsed()) {
        const ExperimentConfig cfg = resolve(grid_c);
        const auto result = grid_search(cfg, [](const GridEntry& e) {
            if (e.ok())
                std::fprintf(stderr, "seed %llu config %d: validation error %.6g\n",
                             static_cast<unsigned long long>(e.replication), e.config_index,
                             e.manifest->validation_error);
            else
                std::fprintf(stderr, "seed %llu config %d failed: %s\n",
                             static_cast<unsigned long long>(e.replication), e.config_index, e.error.c_str());
        });
        for (const auto& m : result.best) print_manifest(m);
        write_power_csv(cfg.output_dir / "table_power.csv", report_tables(result.best));
        write_correlation_csv(cfg.output_dir / "corr_report.csv", correlation_report(result.entries));
        return 0;
    }
    if (rep->parsed()) {
        const fs::path root = rep_c.out.empty() ? fs::path(resolve(rep_c).output_dir) : fs::path(rep_c.out);
        const auto cells = report_tables(best_manifests(root));
        write_power_csv(root / "table_power.csv", cells);
        std::printf("wrote %zu cells to %s\n", cells.size(), (root / "table_power.csv").string().c_str());
        return 0;
    }
    if (corr->parsed()) {
        const fs::path root = corr_c.out.empty() ? fs::path(resolve(corr_c).output_dir) : fs::path(corr_c.out);
        std::vector<GridEntry> entries;
        for (const auto& path : find_manifests(root)) {
            GridEntry e;
            e.manifest = load_manifest(path);
            e.replication = e.manifest->replication;
            e.config_index = e.manifest->config_index;
            e.train = e.manifest->train;
            entries.push_back(std::move(e));
        }
        const auto report = correlation_report(entries);
        write_correlation_csv(root / "corr_report.csv", report);
        std::printf("negative correlation in %.3f of %d cells (%d undefined)\n", report.negative_ratio,
                    report.defined_cells, report.undefined_cells);
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const CompatibilityError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const TrainingError& e) {
        std::cerr << "training failed: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
