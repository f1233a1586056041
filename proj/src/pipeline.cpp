#include "profmon/pipeline.hpp"

#include "profmon/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace profmon {
namespace {

constexpr const char* kRunFormat = "profmon-run";
constexpr int kRunVersion = 1;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidInput(where + " must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items())
        if (!ok.count(key)) throw InvalidInput("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_opt(const json& j, const char* key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

std::string format_delta(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", d);
    return buf;
}

std::string convention_name(PosteriorConvention c) {
    return c == PosteriorConvention::Literal ? "literal" : "noise-scaled";
}

PosteriorConvention parse_convention(const std::string& s) {
    if (s == "literal") return PosteriorConvention::Literal;
    if (s == "noise-scaled") return PosteriorConvention::NoiseScaled;
    throw InvalidInput("unknown PPCA posterior convention '" + s + "'");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw InvalidInput("at least one replication seed is required");
    split.validate();
    train.validate();
    if (!(percentile > 0.0 && percentile < 100.0)) throw InvalidInput("percentile must lie in (0, 100)");
    if (q_mc_samples < 0) throw InvalidInput("q_mc_samples must be nonnegative");
    if (jobs < 1) throw InvalidInput("jobs must be at least 1");
    if (ppca_latent_dim < 1) throw InvalidInput("PPCA latent dimension must be positive");
    if (!pca.is_fixed() && !(pca.ratio > 0.0 && pca.ratio <= 1.0))
        throw InvalidInput("PCA explained-variance ratio must lie in (0, 1]");
    if (data.kind == DataSource::Kind::Simulate) {
        if (data.ic_samples < 3) throw InvalidInput("simulation needs at least 3 in-control samples");
        if (data.oc_samples < 1) throw InvalidInput("simulation needs at least 1 out-of-control sample per shift");
        data.ic.validate();
        data.gasket.validate();
        for (const auto& s : shifts)
            for (double d : s.deltas)
                if (!(d >= 0.0 && d <= 3.0)) throw InvalidInput("shift intensities must lie in [0, 3]");
    } else if (data.path.empty()) {
        throw InvalidInput("ingest source needs a path");
    }
    auto positive = [](const auto& v, const char* what) {
        for (auto x : v)
            if (!(x > 0)) throw InvalidInput(std::string("grid axis ") + what + " must hold positive values");
    };
    positive(grid.learning_rate, "learning_rate");
    positive(grid.batch_size, "batch_size");
    positive(grid.latent_dim, "latent_dim");
    positive(grid.lambda, "lambda");
    for (double p : grid.dropout)
        if (!(p >= 0.0 && p < 1.0)) throw InvalidInput("grid axis dropout must lie in [0, 1)");
}

json to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"dropout", c.dropout},
                {"latent_dim", c.latent_dim},
                {"lambda", c.lambda},
                {"seed", c.seed},
                {"mc_samples", c.mc_samples},
                {"decoder_var", c.decoder_var},
                {"disc_on_raw_half", c.disc_on_raw_half},
                {"frozen", c.frozen}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    check_keys(j,
               {"learning_rate", "batch_size", "epochs", "dropout", "latent_dim", "lambda", "seed", "mc_samples",
                "decoder_var", "disc_on_raw_half", "frozen"},
               "train");
    read_opt(j, "learning_rate", c.learning_rate);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "dropout", c.dropout);
    read_opt(j, "latent_dim", c.latent_dim);
    read_opt(j, "lambda", c.lambda);
    read_opt(j, "seed", c.seed);
    read_opt(j, "mc_samples", c.mc_samples);
    read_opt(j, "decoder_var", c.decoder_var);
    read_opt(j, "disc_on_raw_half", c.disc_on_raw_half);
    read_opt(j, "frozen", c.frozen);
    return c;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    try {
        check_keys(j,
                   {"data", "split", "model", "train", "pca", "ppca", "percentile", "q_mc_samples", "seeds", "shifts",
                    "grid", "jobs", "output_dir"},
                   "experiment config");
        if (j.contains("data")) {
            const json& d = j.at("data");
            check_keys(d, {"source", "ic_samples", "oc_samples", "ic", "gasket", "path", "class_map"}, "data");
            const std::string source = d.value("source", "simulate");
            if (source == "simulate")
                c.data.kind = DataSource::Kind::Simulate;
            else if (source == "ingest")
                c.data.kind = DataSource::Kind::Ingest;
            else
                throw InvalidInput("data.source must be 'simulate' or 'ingest'");
            read_opt(d, "ic_samples", c.data.ic_samples);
            read_opt(d, "oc_samples", c.data.oc_samples);
            if (d.contains("ic")) {
                const json& ic = d.at("ic");
                check_keys(ic, {"c0_mean", "c0_var", "a_mean", "a_var"}, "data.ic");
                read_opt(ic, "c0_mean", c.data.ic.c0_mean);
                read_opt(ic, "c0_var", c.data.ic.c0_var);
                read_opt(ic, "a_mean", c.data.ic.a_mean);
                read_opt(ic, "a_var", c.data.ic.a_var);
            }
            if (d.contains("gasket")) {
                const json& g = d.at("gasket");
                check_keys(g, {"c1", "b", "noise_var", "height", "width"}, "data.gasket");
                read_opt(g, "c1", c.data.gasket.c1);
                read_opt(g, "b", c.data.gasket.b);
                read_opt(g, "noise_var", c.data.gasket.noise_var);
                read_opt(g, "height", c.data.gasket.height);
                read_opt(g, "width", c.data.gasket.width);
            }
            if (d.contains("path")) c.data.path = d.at("path").get<std::string>();
            if (d.contains("class_map")) {
                const json& cm = d.at("class_map");
                if (cm.is_array()) {
                    for (const auto& e : cm) c.data.class_map.emplace_back(e.at("pattern").get<std::string>(), e.at("label").get<int>());
                } else if (cm.is_object()) {
                    for (const auto& [k, v] : cm.items()) c.data.class_map.emplace_back(k, v.get<int>());
                } else {
                    throw InvalidInput("data.class_map must be an object or an array of {pattern, label}");
                }
            }
        }
        if (j.contains("split")) {
            const json& s = j.at("split");
            check_keys(s, {"train", "validation", "test", "seed"}, "split");
            read_opt(s, "train", c.split.train);
            read_opt(s, "validation", c.split.validation);
            read_opt(s, "test", c.split.test);
            read_opt(s, "seed", c.split.seed);
        }
        if (j.contains("model")) c.model = parse_model_kind(j.at("model").get<std::string>());
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("pca")) {
            const json& p = j.at("pca");
            check_keys(p, {"components", "explained_variance"}, "pca");
            if (p.contains("components")) c.pca = ComponentSelector::fixed(p.at("components").get<int>());
            if (p.contains("explained_variance"))
                c.pca = ComponentSelector::explained(p.at("explained_variance").get<double>());
            if (c.pca.is_fixed() == false && c.pca.ratio == 0.0) throw InvalidInput("pca selector needs a value");
        }
        if (j.contains("ppca")) {
            const json& p = j.at("ppca");
            check_keys(p, {"latent_dim", "posterior"}, "ppca");
            read_opt(p, "latent_dim", c.ppca_latent_dim);
            if (p.contains("posterior")) c.ppca_posterior = parse_convention(p.at("posterior").get<std::string>());
        }
        read_opt(j, "percentile", c.percentile);
        read_opt(j, "q_mc_samples", c.q_mc_samples);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("shifts")) {
            for (const auto& s : j.at("shifts")) {
                check_keys(s, {"kind", "deltas"}, "shifts[]");
                c.shifts.push_back({parse_shift_kind(s.at("kind").get<std::string>()),
                                    s.at("deltas").get<std::vector<double>>()});
            }
        }
        if (j.contains("grid")) {
            const json& g = j.at("grid");
            check_keys(g, {"learning_rate", "dropout", "batch_size", "latent_dim", "lambda"}, "grid");
            read_opt(g, "learning_rate", c.grid.learning_rate);
            read_opt(g, "dropout", c.grid.dropout);
            read_opt(g, "batch_size", c.grid.batch_size);
            read_opt(g, "latent_dim", c.grid.latent_dim);
            read_opt(g, "lambda", c.grid.lambda);
        }
        read_opt(j, "jobs", c.jobs);
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const ExperimentConfig& c) {
    json j;
    json d{{"source", c.data.kind == DataSource::Kind::Simulate ? "simulate" : "ingest"}};
    if (c.data.kind == DataSource::Kind::Simulate) {
        d["ic_samples"] = c.data.ic_samples;
        d["oc_samples"] = c.data.oc_samples;
        d["ic"] = {{"c0_mean", c.data.ic.c0_mean},
                   {"c0_var", c.data.ic.c0_var},
                   {"a_mean", c.data.ic.a_mean},
                   {"a_var", c.data.ic.a_var}};
        d["gasket"] = {{"c1", c.data.gasket.c1},
                       {"b", c.data.gasket.b},
                       {"noise_var", c.data.gasket.noise_var},
                       {"height", c.data.gasket.height},
                       {"width", c.data.gasket.width}};
    } else {
        d["path"] = c.data.path.string();
        json cm = json::array();
        for (const auto& [p, l] : c.data.class_map) cm.push_back({{"pattern", p}, {"label", l}});
        d["class_map"] = cm;
    }
    j["data"] = d;
    j["split"] = {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test},
                  {"seed", c.split.seed}};
    j["model"] = to_string(c.model);
    j["train"] = to_json(c.train);
    j["pca"] = c.pca.is_fixed() ? json{{"components", c.pca.k}} : json{{"explained_variance", c.pca.ratio}};
    j["ppca"] = {{"latent_dim", c.ppca_latent_dim}, {"posterior", convention_name(c.ppca_posterior)}};
    j["percentile"] = c.percentile;
    j["q_mc_samples"] = c.q_mc_samples;
    j["seeds"] = c.seeds;
    json shifts = json::array();
    for (const auto& s : c.shifts) shifts.push_back({{"kind", to_string(s.kind)}, {"deltas", s.deltas}});
    j["shifts"] = shifts;
    j["grid"] = {{"learning_rate", c.grid.learning_rate},
                 {"dropout", c.grid.dropout},
                 {"batch_size", c.grid.batch_size},
                 {"latent_dim", c.grid.latent_dim},
                 {"lambda", c.grid.lambda}};
    j["jobs"] = c.jobs;
    j["output_dir"] = c.output_dir.string();
    return j;
}

ExperimentConfig load_config(const fs::path& path) { return config_from_json(read_json(path)); }

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(base);
    for (auto t : tags) h = mix(h * 0xff51afd7ed558ccdULL + mix(t));
    return h;
}

std::string intensity_bucket(const std::string& scenario, double delta) {
    const bool two_level = scenario == "mean" || scenario == "magnitude";
    if (delta == 1.0) return "Low";
    if (delta == 2.0 && !two_level) return "Mid";
    if (delta == 3.0) return "High";
    return "";
}

// ---------------------------------------------------------------- data

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t replication) {
    PreparedData out;
    SplitSpec split = config.split;
    split.seed = derive_seed(config.split.seed, {replication});
    if (config.data.kind == DataSource::Kind::Simulate) {
        Rng ic_rng(derive_seed(replication, {1}));
        const Dataset ic = sample_ic(config.data.ic_samples, config.data.ic, ic_rng, config.data.gasket);
        out.ic = partition(ic, split);
        for (const auto& grid : config.shifts) {
            for (double delta : grid.deltas) {
                const auto tag = static_cast<std::uint64_t>(std::llround(delta * 1e6));
                Rng rng(derive_seed(replication, {2, static_cast<std::uint64_t>(grid.kind), tag}));
                out.oc.push_back({to_string(grid.kind), delta,
                                  sample_oc(config.data.oc_samples, config.data.ic, {grid.kind, delta}, rng,
                                            config.data.gasket)});
            }
        }
        return out;
    }
    const Dataset all = ingest_images(config.data.path, config.data.class_map);
    std::vector<std::size_t> ic_idx;
    std::map<int, std::vector<std::size_t>> oc_idx;
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto label = all.label(i);
        if (!label || *label == kInControlLabel)
            ic_idx.push_back(i);
        else
            oc_idx[*label].push_back(i);
    }
    if (ic_idx.size() < 3) throw InvalidInput("ingested corpus has fewer than 3 in-control images");
    out.ic = partition(all.subset(ic_idx), split);
    for (const auto& [label, idx] : oc_idx)
        out.oc.push_back({"class_" + std::to_string(label), static_cast<double>(label), all.subset(idx)});
    return out;
}

// ---------------------------------------------------------------- stats CSV

namespace {

void write_stats(const fs::path& path, const std::vector<MonitoringRecord>& records, const ControlLimits& limits,
                 const std::vector<double>* t2_alt, std::optional<double> ucl_alt) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "sample_id,label,q_ere,t2_kld,alarm_q,alarm_t2";
    if (t2_alt) out << ",t2_kld_alt,alarm_t2_alt";
    out << '\n';
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        out << r.sample_id << ',';
        if (r.label) out << *r.label;
        out << ',' << r.q_ere << ',';
        if (r.t2_kld) out << *r.t2_kld; else out << "NA";
        out << ',' << (r.q_ere > limits.ucl_q ? 1 : 0) << ',';
        if (r.t2_kld && limits.ucl_t2) out << (*r.t2_kld > *limits.ucl_t2 ? 1 : 0); else out << "NA";
        if (t2_alt) out << ',' << (*t2_alt)[i] << ',' << ((*t2_alt)[i] > ucl_alt.value_or(INFINITY) ? 1 : 0);
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_stats_csv(const fs::path& path, const std::vector<MonitoringRecord>& records, const ControlLimits& limits) {
    write_stats(path, records, limits, nullptr, std::nullopt);
}

StatsColumns read_stats_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw InvalidInput(path.string() + ": missing header");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    auto col = [&](const char* name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw InvalidInput(path.string() + ": missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t cid = col("sample_id"), cq = col("q_ere"), ct = col("t2_kld");
    StatsColumns s;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < header.size()) cells.resize(header.size());
        try {
            s.sample_id.push_back(cells[cid]);
            s.q.push_back(std::stod(cells[cq]));
            s.t2.push_back(cells[ct] == "NA" ? std::nullopt : std::optional<double>(std::stod(cells[ct])));
        } catch (const std::invalid_argument&) {
            throw InvalidInput(path.string() + ": bad number in row '" + line + "'");
        }
    }
    return s;
}

// ---------------------------------------------------------------- manifests

json to_json(const RunManifest& m) {
    json lim{{"ucl_q", m.limits.ucl_q}, {"percentile", m.limits.percentile}, {"estimated_far", m.limits.estimated_far}};
    lim["ucl_t2"] = m.limits.ucl_t2 ? json(*m.limits.ucl_t2) : json(nullptr);
    lim["estimated_far_t2"] = m.limits.estimated_far_t2 ? json(*m.limits.estimated_far_t2) : json(nullptr);
    lim["ucl_t2_alt"] = m.ucl_t2_alt ? json(*m.ucl_t2_alt) : json(nullptr);
    json sc = json::array();
    for (const auto& s : m.scenarios) {
        sc.push_back({{"scenario", s.scenario},
                      {"delta", s.delta},
                      {"bucket", intensity_bucket(s.scenario, s.delta)},
                      {"stats", s.stats_file},
                      {"power_q", s.power_q},
                      {"power_t2", s.power_t2 ? json(*s.power_t2) : json(nullptr)}});
    }
    return json{{"format", kRunFormat},
                {"version", kRunVersion},
                {"model", to_string(m.model)},
                {"replication", m.replication},
                {"config_index", m.config_index},
                {"train", to_json(m.train)},
                {"experiment", m.experiment},
                {"model_files", m.model_files},
                {"model_entry", m.model_entry},
                {"validation_error", m.validation_error},
                {"epoch_loss", m.epoch_loss},
                {"components", m.components},
                {"limits", lim},
                {"sizes", {{"train", m.n_train}, {"validation", m.n_validation}, {"test", m.n_test}}},
                {"stats", {{"validation", m.stats_validation}, {"test", m.stats_test}}},
                {"scenarios", sc}};
}

RunManifest manifest_from_json(const json& j, const fs::path& directory) {
    try {
        if (j.at("format") != kRunFormat) throw CompatibilityError("not a run manifest");
        if (j.at("version") != kRunVersion)
            throw CompatibilityError("run manifest version " + j.at("version").dump() + " is not supported");
        RunManifest m;
        m.directory = directory;
        m.model = parse_model_kind(j.at("model").get<std::string>());
        m.replication = j.at("replication").get<std::uint64_t>();
        m.config_index = j.at("config_index").get<int>();
        m.train = train_config_from_json(j.at("train"));
        m.experiment = j.at("experiment");
        m.model_files = j.at("model_files").get<std::vector<std::string>>();
        m.model_entry = j.at("model_entry").get<std::string>();
        m.validation_error = j.at("validation_error").get<double>();
        m.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
        m.components = j.at("components").get<int>();
        const json& lim = j.at("limits");
        m.limits.ucl_q = lim.at("ucl_q").get<double>();
        m.limits.percentile = lim.at("percentile").get<double>();
        m.limits.estimated_far = lim.at("estimated_far").get<double>();
        if (!lim.at("ucl_t2").is_null()) m.limits.ucl_t2 = lim.at("ucl_t2").get<double>();
        if (!lim.at("estimated_far_t2").is_null()) m.limits.estimated_far_t2 = lim.at("estimated_far_t2").get<double>();
        if (!lim.at("ucl_t2_alt").is_null()) m.ucl_t2_alt = lim.at("ucl_t2_alt").get<double>();
        m.n_train = j.at("sizes").at("train").get<std::size_t>();
        m.n_validation = j.at("sizes").at("validation").get<std::size_t>();
        m.n_test = j.at("sizes").at("test").get<std::size_t>();
        m.stats_validation = j.at("stats").at("validation").get<std::string>();
        m.stats_test = j.at("stats").at("test").get<std::string>();
        for (const auto& s : j.at("scenarios")) {
            ScenarioResult r;
            r.scenario = s.at("scenario").get<std::string>();
            r.delta = s.at("delta").get<double>();
            r.stats_file = s.at("stats").get<std::string>();
            r.power_q = s.at("power_q").get<double>();
            if (!s.at("power_t2").is_null()) r.power_t2 = s.at("power_t2").get<double>();
            m.scenarios.push_back(std::move(r));
        }
        return m;
    } catch (const json::exception& e) {
        throw CompatibilityError(std::string("malformed run manifest: ") + e.what());
    } catch (const InvalidInput& e) {
        throw CompatibilityError(std::string("malformed run manifest: ") + e.what());
    }
}

RunManifest load_manifest(const fs::path& manifest_file) {
    json j;
    try {
        j = read_json(manifest_file);
    } catch (const InvalidInput& e) {
        throw CompatibilityError(e.what());
    }
    try {
        return manifest_from_json(j, manifest_file.parent_path());
    } catch (const CompatibilityError& e) {
        throw CompatibilityError(manifest_file.string() + ": " + e.what());
    }
}

std::unique_ptr<Monitor> load_monitor(const RunManifest& m) {
    const fs::path entry = m.directory / m.model_entry;
    if (m.model == ModelKind::PCA || m.model == ModelKind::PPCA) {
        auto model = load_linear(entry);
        if (m.model == ModelKind::PCA) {
            if (!std::holds_alternative<PCAModel>(model)) throw CompatibilityError(entry.string() + " is not a PCA model");
            return std::make_unique<PCAMonitor>(std::get<PCAModel>(std::move(model)));
        }
        if (!std::holds_alternative<PPCAModel>(model)) throw CompatibilityError(entry.string() + " is not a PPCA model");
        auto ppca = std::get<PPCAModel>(std::move(model));
        const bool sq = ppca.convention == PosteriorConvention::Literal;
        return std::make_unique<PPCAMonitor>(std::move(ppca), sq);
    }
    auto ae = std::make_shared<const Autoencoder<float>>(load_autoencoder(entry));
    if (ae->kind != m.model) throw CompatibilityError(entry.string() + " holds a different model kind");
    return std::make_unique<AutoencoderMonitor>(std::move(ae));
}

// ---------------------------------------------------------------- phase I / II

RunManifest run_experiment(const ExperimentConfig& config, const PreparedData& data, std::uint64_t replication,
                           const TrainConfig& train_cfg, int config_index, const fs::path& dir) {
    const auto start = std::chrono::steady_clock::now();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    RunManifest m;
    m.model = config.model;
    m.replication = replication;
    m.config_index = config_index;
    m.experiment = to_json(config);
    m.directory = dir;
    m.n_train = data.ic.train.size();
    m.n_validation = data.ic.validation.size();
    m.n_test = data.ic.test.size();
    if (data.ic.train.empty() || data.ic.validation.empty() || data.ic.test.empty())
        throw InvalidInput("train, validation and test partitions must all be nonempty");

    TrainConfig eff = train_cfg;
    eff.seed = derive_seed(replication, {3, train_cfg.seed});
    m.train = eff;

    std::unique_ptr<Monitor> monitor, alt;
    std::optional<double> deep_val_error;
    double train_seconds = 0.0;
    if (config.model == ModelKind::PCA) {
        auto pca = fit_pca(data.ic.train, config.pca);
        m.components = pca.components();
        m.model_entry = "model.pwlin";
        save_linear(dir / m.model_entry, pca);
        monitor = std::make_unique<PCAMonitor>(std::move(pca));
    } else if (config.model == ModelKind::PPCA) {
        auto ppca = fit_ppca(data.ic.train, config.ppca_latent_dim);
        ppca.convention = config.ppca_posterior;
        m.components = ppca.latent_dim();
        m.model_entry = "model.pwlin";
        save_linear(dir / m.model_entry, ppca);
        const bool literal = config.ppca_posterior == PosteriorConvention::Literal;
        alt = std::make_unique<PPCAMonitor>(ppca, !literal);
        monitor = std::make_unique<PPCAMonitor>(std::move(ppca), literal);
    } else {
        auto model = make_autoencoder<float>(config.model, eff);
        const auto t0 = std::chrono::steady_clock::now();
        TrainingReport report;
        try {
            report = train(model, data.ic.train, data.ic.validation, eff);
        } catch (const TrainingError& e) {
            throw TrainingError("replication " + std::to_string(replication) + ", config " +
                                    std::to_string(config_index) + ": " + e.what(),
                                e.epoch());
        }
        train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        m.components = model.r;
        m.epoch_loss = report.epoch_loss;
        deep_val_error = report.validation_error;
        m.model_entry = "model.json";
        save_autoencoder(dir / m.model_entry, model);
        monitor = std::make_unique<AutoencoderMonitor>(std::make_shared<const Autoencoder<float>>(std::move(model)));
    }
    m.model_files.push_back(m.model_entry);
    if (is_deep(config.model)) {
        m.model_files.push_back("model.encoder.pwnet");
        m.model_files.push_back("model.decoder.pwnet");
        if (config.model == ModelKind::AAE) m.model_files.push_back("model.discriminator.pwnet");
    }

    const ScoreOptions opt{config.q_mc_samples, derive_seed(replication, {4}), false};
    const auto val = score(*monitor, data.ic.validation, opt);
    const auto test = score(*monitor, data.ic.test, opt);
    m.limits = set_limits(val, test, config.percentile);
    if (deep_val_error) {
        m.validation_error = *deep_val_error;
    } else {
        double sum = 0.0;
        for (const auto& r : val) sum += r.q_ere;
        m.validation_error = sum / (static_cast<double>(val.size()) * static_cast<double>(data.ic.validation.dim()));
    }

    auto alt_values = [&](const Dataset& d) {
        std::vector<double> v;
        for (const auto& r : score(*alt, d, opt)) v.push_back(*r.t2_kld);
        return v;
    };
    std::vector<double> val_alt, test_alt;
    if (alt) {
        val_alt = alt_values(data.ic.validation);
        test_alt = alt_values(data.ic.test);
        m.ucl_t2_alt = compute_ucl(val_alt, config.percentile);
    }

    m.stats_validation = "stats_validation.csv";
    m.stats_test = "stats_test.csv";
    write_stats(dir / m.stats_validation, val, m.limits, alt ? &val_alt : nullptr, m.ucl_t2_alt);
    write_stats(dir / m.stats_test, test, m.limits, alt ? &test_alt : nullptr, m.ucl_t2_alt);

    for (const auto& sc : data.oc) {
        const auto recs = score(*monitor, sc.data, opt);
        ScenarioResult r;
        r.scenario = sc.name;
        r.delta = sc.delta;
        r.stats_file = "stats_" + sc.name + "_" + format_delta(sc.delta) + ".csv";
        r.power_q = detection_power(q_values(recs), m.limits.ucl_q);
        if (m.limits.ucl_t2) r.power_t2 = detection_power(t2_values(recs), *m.limits.ucl_t2);
        std::vector<double> oc_alt;
        if (alt) oc_alt = alt_values(sc.data);
        write_stats(dir / r.stats_file, recs, m.limits, alt ? &oc_alt : nullptr, m.ucl_t2_alt);
        m.scenarios.push_back(std::move(r));
    }

    write_text(dir / "manifest.json", to_json(m).dump(2) + "\n");
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(dir / "timings.json", json{{"train_seconds", train_seconds}, {"total_seconds", total}}.dump(2) + "\n");
    return m;
}

RunManifest phase1(const ExperimentConfig& config, std::uint64_t replication) {
    config.validate();
    const PreparedData data = prepare_data(config, replication);
    const fs::path dir = config.output_dir / to_string(config.model) / ("seed_" + std::to_string(replication));
    return run_experiment(config, data, replication, config.train, 0, dir);
}

std::vector<MonitoringRecord> phase2_score(const fs::path& manifest_file, const Dataset& stream,
                                           const fs::path& csv_out) {
    const RunManifest m = load_manifest(manifest_file);
    const auto monitor = load_monitor(m);
    if (!stream.empty() && static_cast<Eigen::Index>(stream.dim()) != monitor->dim())
        throw CompatibilityError("stream profiles have dimension " + std::to_string(stream.dim()) +
                                 " but the model expects " + std::to_string(monitor->dim()));
    const int mc = m.experiment.value("q_mc_samples", 0);
    const auto records = score(*monitor, stream, {mc, derive_seed(m.replication, {5}), false});
    if (!csv_out.empty()) write_stats_csv(csv_out, records, m.limits);
    return records;
}

// ---------------------------------------------------------------- grid search

std::vector<TrainConfig> expand_grid(const ExperimentConfig& config) {
    if (!is_deep(config.model)) return {config.train};
    std::vector<TrainConfig> out{config.train};
    auto axis = [&out](const auto& values, auto setter) {
        if (values.empty()) return;
        std::vector<TrainConfig> next;
        for (const auto& base : out)
            for (const auto& v : values) {
                TrainConfig c = base;
                setter(c, v);
                next.push_back(c);
            }
        out = std::move(next);
    };
    axis(config.grid.learning_rate, [](TrainConfig& c, double v) { c.learning_rate = v; });
    axis(config.grid.dropout, [](TrainConfig& c, double v) { c.dropout = v; });
    axis(config.grid.batch_size, [](TrainConfig& c, int v) { c.batch_size = v; });
    axis(config.grid.latent_dim, [](TrainConfig& c, int v) { c.latent_dim = v; });
    if (config.model == ModelKind::AAE) axis(config.grid.lambda, [](TrainConfig& c, double v) { c.lambda = v; });
    return out;
}

std::vector<GridEntry> rank_entries(std::vector<GridEntry> entries) {
    std::stable_sort(entries.begin(), entries.end(), [](const GridEntry& a, const GridEntry& b) {
        if (a.ok() != b.ok()) return a.ok();
        if (!a.ok()) return a.config_index < b.config_index;
        const double ea = a.manifest->validation_error, eb = b.manifest->validation_error;
        if (ea != eb) return ea < eb;
        if (a.train.seed != b.train.seed) return a.train.seed < b.train.seed;
        return a.config_index < b.config_index;
    });
    return entries;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

GridResult grid_search(const ExperimentConfig& config, const std::function<void(const GridEntry&)>& progress) {
    config.validate();
    const auto configs = expand_grid(config);
    if (configs.empty()) throw InvalidInput("hyperparameter grid is empty");
    GridResult result;
    std::mutex mu;
    for (std::uint64_t rep : config.seeds) {
        const PreparedData data = prepare_data(config, rep);
        const fs::path seed_dir = config.output_dir / to_string(config.model) / ("seed_" + std::to_string(rep));
        std::vector<GridEntry> entries(configs.size());
        parallel_for(configs.size(), config.jobs, [&](std::size_t i) {
            GridEntry& e = entries[i];
            e.replication = rep;
            e.config_index = static_cast<int>(i);
            e.train = configs[i];
            try {
                e.manifest = run_experiment(config, data, rep, configs[i], static_cast<int>(i),
                                            seed_dir / ("cfg_" + std::to_string(i)));
            } catch (const Error& err) {
                e.error = err.what();
            }
            if (progress) {
                std::lock_guard lock(mu);
                progress(e);
            }
        });
        auto ranked = rank_entries(entries);
        if (!ranked.front().ok()) {
            std::string msg = "every configuration failed for replication " + std::to_string(rep) + ":";
            for (const auto& e : entries) msg += "\n  config " + std::to_string(e.config_index) + ": " + e.error;
            throw TrainingError(msg);
        }
        std::ofstream rank_csv(seed_dir / "ranking.csv");
        rank_csv.precision(17);
        rank_csv << "rank,config_index,learning_rate,dropout,batch_size,latent_dim,lambda,seed,validation_error,error\n";
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            const auto& e = ranked[k];
            rank_csv << k + 1 << ',' << e.config_index << ',' << e.train.learning_rate << ',' << e.train.dropout << ','
                     << e.train.batch_size << ',' << e.train.latent_dim << ',' << e.train.lambda << ',' << e.train.seed
                     << ',';
            if (e.ok()) rank_csv << e.manifest->validation_error;
            rank_csv << ',' << '"' << e.error << '"' << '\n';
        }
        write_text(seed_dir / "best.json",
                   json{{"config_index", ranked.front().config_index},
                        {"manifest", "cfg_" + std::to_string(ranked.front().config_index) + "/manifest.json"}}
                           .dump(2) + "\n");
        result.best.push_back(*ranked.front().manifest);
        result.entries.insert(result.entries.end(), entries.begin(), entries.end());
        result.ranked.push_back(std::move(ranked));
    }
    return result;
}

// ---------------------------------------------------------------- reports

CorrelationReport correlation_report(const std::vector<GridEntry>& entries) {
    using Key = std::tuple<std::string, std::string, double, std::string>;
    std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& e : entries) {
        if (!e.ok()) continue;
        const auto& m = *e.manifest;
        for (const auto& s : m.scenarios) {
            for (const std::string& rep : {std::string("all"), std::to_string(m.replication)}) {
                auto& g = groups[{to_string(m.model), s.scenario, s.delta, rep}];
                g.first.push_back(m.validation_error);
                g.second.push_back(s.power_q);
            }
        }
    }
    CorrelationReport report;
    int negative = 0, significant = 0, rep_defined = 0, rep_negative = 0;
    for (const auto& [key, series] : groups) {
        CorrelationCell cell;
        std::tie(cell.model, cell.scenario, cell.delta, cell.replication) = key;
        const bool pooled = cell.replication == "all";
        if (series.first.size() < 3) {
            cell.note = "fewer than 3 configurations";
        } else {
            try {
                cell.result = pearson(series.first, series.second);
            } catch (const UndefinedCorrelation&) {
                cell.note = std::equal(series.second.begin() + 1, series.second.end(), series.second.begin())
                                ? "constant detection power"
                                : "constant validation error";
            }
        }
        if (pooled) {
            if (cell.result) {
                ++report.defined_cells;
                negative += cell.result->r < 0.0;
                significant += cell.result->p <= 0.05;
            } else {
                ++report.undefined_cells;
            }
        } else if (cell.result) {
            ++rep_defined;
            rep_negative += cell.result->r < 0.0;
        }
        report.cells.push_back(std::move(cell));
    }
    if (report.defined_cells > 0) {
        report.negative_ratio = static_cast<double>(negative) / report.defined_cells;
        report.significant_ratio = static_cast<double>(significant) / report.defined_cells;
    }
    if (rep_defined > 0) report.replication_negative_ratio = static_cast<double>(rep_negative) / rep_defined;
    return report;
}

void write_correlation_csv(const fs::path& path, const CorrelationReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "model,shift,delta,bucket,replication,n,r,p,note\n";
    for (const auto& c : report.cells) {
        out << c.model << ',' << c.scenario << ',' << c.delta << ',' << intensity_bucket(c.scenario, c.delta) << ','
            << c.replication << ',';
        if (c.result)
            out << c.result->n << ',' << c.result->r << ',' << c.result->p << ',';
        else
            out << ",NA,NA,";
        out << c.note << '\n';
    }
    out << "# pooled_negative_ratio," << report.negative_ratio << '\n';
    out << "# pooled_significant_ratio," << report.significant_ratio << '\n';
    out << "# replication_negative_ratio," << report.replication_negative_ratio << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<PowerCell> report_tables(const std::vector<RunManifest>& manifests) {
    using Key = std::tuple<int, std::string, std::string, double>;
    std::map<Key, std::vector<double>> groups;
    for (const auto& m : manifests) {
        for (const auto& s : m.scenarios) {
            const auto stats = read_stats_csv(m.directory / s.stats_file);
            if (stats.q.empty()) continue;
            groups[{static_cast<int>(m.model), "Q", s.scenario, s.delta}].push_back(
                detection_power(stats.q, m.limits.ucl_q));
            if (m.limits.ucl_t2) {
                std::vector<double> t2;
                for (const auto& v : stats.t2)
                    if (v) t2.push_back(*v);
                if (t2.size() == stats.q.size())
                    groups[{static_cast<int>(m.model), "T2", s.scenario, s.delta}].push_back(
                        detection_power(t2, *m.limits.ucl_t2));
            }
        }
    }
    std::vector<PowerCell> cells;
    for (const auto& [key, values] : groups) {
        PowerCell c;
        c.model = to_string(static_cast<ModelKind>(std::get<0>(key)));
        c.statistic = std::get<1>(key);
        c.scenario = std::get<2>(key);
        c.delta = std::get<3>(key);
        c.bucket = intensity_bucket(c.scenario, c.delta);
        c.median = median(values);
        c.min = *std::min_element(values.begin(), values.end());
        c.max = *std::max_element(values.begin(), values.end());
        c.replications = static_cast<int>(values.size());
        cells.push_back(std::move(c));
    }
    return cells;
}

void write_power_csv(const fs::path& path, const std::vector<PowerCell>& cells) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "model,statistic,shift,delta,bucket,median,min,max,replications\n";
    for (const auto& c : cells)
        out << c.model << ',' << c.statistic << ',' << c.scenario << ',' << c.delta << ',' << c.bucket << ','
            << c.median << ',' << c.min << ',' << c.max << ',' << c.replications << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<fs::path> find_manifests(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError("not a directory: " + root.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() == "manifest.json") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace profmon
