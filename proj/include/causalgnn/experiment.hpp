#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "causalgnn/bayes_net.hpp"
#include "causalgnn/dataset.hpp"
#include "causalgnn/inference.hpp"
#include "causalgnn/train.hpp"

namespace cgnn {

/// Fixed-format double for reports: deterministic bytes for identical values.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline uint64_t fnv1a_hash(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Where the SCM comes from: a builtin structure (with explicit noise probs
/// or a recorded noise seed) or a Bayesian-network file.
struct ScmSource {
    std::string builtin;               // "m1" | "m2" | "m3", or empty
    std::vector<double> noise_probs;   // explicit parameterization
    uint64_t noise_seed{0};
    bool has_noise_seed{false};
    std::string network_path;

    Scm load() const {
        if (!network_path.empty()) return load_bayes_net(network_path);
        if (builtin.empty()) throw std::invalid_argument("scm source is empty");
        std::vector<double> probs = noise_probs;
        if (probs.empty()) {
            if (!has_noise_seed) throw std::invalid_argument("builtin scm needs noise_probs or noise_seed");
            probs = random_noise_probs(noise_seed);
        }
        return builtin_scm(builtin, probs);
    }

    /// The parameterization actually used (resolving a noise seed).
    std::vector<double> resolved_noise_probs() const {
        if (!noise_probs.empty() || !has_noise_seed) return noise_probs;
        return random_noise_probs(noise_seed);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        if (!builtin.empty()) j["builtin"] = builtin;
        if (!noise_probs.empty()) j["noise_probs"] = noise_probs;
        if (has_noise_seed) j["noise_seed"] = noise_seed;
        if (!network_path.empty()) j["network"] = network_path;
        return j;
    }

    static ScmSource from_json(const nlohmann::json& j) {
        ScmSource s;
        if (j.contains("builtin")) s.builtin = j["builtin"].get<std::string>();
        if (j.contains("noise_probs")) s.noise_probs = j["noise_probs"].get<std::vector<double>>();
        if (j.contains("noise_seed")) {
            s.noise_seed = j["noise_seed"].get<uint64_t>();
            s.has_noise_seed = true;
        }
        if (j.contains("network")) s.network_path = j["network"].get<std::string>();
        return s;
    }
};

struct ExperimentConfig {
    std::string name{"run"};
    ScmSource scm;
    std::vector<Intervention> regimes;
    int samples_per_regime{10000};
    uint64_t data_seed{0};
    TrainConfig train;
    std::vector<uint64_t> seeds;
    std::string out_dir{"runs/out"};

    void validate() const {
        if (regimes.empty()) throw std::invalid_argument("config needs at least one regime");
        if (samples_per_regime <= 0) throw std::invalid_argument("samples_per_regime must be positive");
        if (seeds.empty()) throw std::invalid_argument("config needs at least one seed");
        for (size_t i = 0; i < seeds.size(); ++i)
            for (size_t j = i + 1; j < seeds.size(); ++j)
                if (seeds[i] == seeds[j]) throw std::invalid_argument("seeds must be distinct");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["name"] = name;
        j["scm"] = scm.to_json();
        j["regimes"] = nlohmann::json::array();
        for (const auto& r : regimes) j["regimes"].push_back(intervention_to_json(r));
        j["samples_per_regime"] = samples_per_regime;
        j["data_seed"] = data_seed;
        j["train"] = train.to_json();
        j["seeds"] = seeds;
        j["out_dir"] = out_dir;
        return j;
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        if (j.contains("name")) c.name = j["name"].get<std::string>();
        c.scm = ScmSource::from_json(j.at("scm"));
        for (const auto& r : j.at("regimes")) c.regimes.push_back(intervention_from_json(r));
        if (j.contains("samples_per_regime")) c.samples_per_regime = j["samples_per_regime"].get<int>();
        if (j.contains("data_seed")) c.data_seed = j["data_seed"].get<uint64_t>();
        if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
        c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
        if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
        c.validate();
        return c;
    }

    static ExperimentConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("cannot open config " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }

    uint64_t hash() const { return fnv1a_hash(to_json().dump()); }

    std::string dataset_csv(int regime_index) const {
        return out_dir + "/data/regime_" + std::to_string(regime_index) + ".csv";
    }
    std::string dataset_manifest(int regime_index) const {
        return out_dir + "/data/regime_" + std::to_string(regime_index) + ".manifest.json";
    }
    std::string checkpoint_path(uint64_t seed) const {
        return out_dir + "/ckpt_seed" + std::to_string(seed) + ".json";
    }
    std::string manifest_path() const { return out_dir + "/manifest.json"; }
};

struct SeedSummary {
    uint64_t seed{0};
    bool failed{false};
    long clamp_events{0};
    int nan_steps{0};
    int best_step{0};
    double mean_train_elbo{0.0};
    double mean_valid_elbo{0.0};
    double mean_test_elbo{0.0};
    double mean_valid_logp{0.0};
    double mean_test_logp{0.0};
    std::vector<RegimeMetrics> regimes;
};

/// Per-run aggregate record. Aggregates cover non-failed seeds only;
/// failures stay listed.
struct RunManifest {
    std::string name;
    uint64_t config_hash{0};
    nlohmann::json config;
    std::vector<SeedSummary> seeds;
    int failed_seeds{0};
    double mean_train_elbo{0.0};
    double mean_valid_elbo{0.0};
    double mean_test_elbo{0.0};
    double mean_valid_logp{0.0};
    double mean_test_logp{0.0};
    double best_test_elbo{0.0};
    double worst_test_elbo{0.0};

    void compute_aggregates() {
        failed_seeds = 0;
        int ok = 0;
        mean_train_elbo = mean_valid_elbo = mean_test_elbo = mean_valid_logp = mean_test_logp = 0.0;
        best_test_elbo = -std::numeric_limits<double>::infinity();
        worst_test_elbo = std::numeric_limits<double>::infinity();
        for (const auto& s : seeds) {
            if (s.failed) {
                ++failed_seeds;
                continue;
            }
            ++ok;
            mean_train_elbo += s.mean_train_elbo;
            mean_valid_elbo += s.mean_valid_elbo;
            mean_test_elbo += s.mean_test_elbo;
            mean_valid_logp += s.mean_valid_logp;
            mean_test_logp += s.mean_test_logp;
            best_test_elbo = std::max(best_test_elbo, s.mean_test_elbo);
            worst_test_elbo = std::min(worst_test_elbo, s.mean_test_elbo);
        }
        if (ok > 0) {
            mean_train_elbo /= ok;
            mean_valid_elbo /= ok;
            mean_test_elbo /= ok;
            mean_valid_logp /= ok;
            mean_test_logp /= ok;
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["name"] = name;
        j["config_hash"] = config_hash;
        j["config"] = config;
        j["failed_seeds"] = failed_seeds;
        j["aggregate"] = {
            {"mean_train_elbo", mean_train_elbo}, {"mean_valid_elbo", mean_valid_elbo},
            {"mean_test_elbo", mean_test_elbo},   {"mean_valid_logp", mean_valid_logp},
            {"mean_test_logp", mean_test_logp},   {"best_test_elbo", best_test_elbo},
            {"worst_test_elbo", worst_test_elbo},
        };
        j["seeds"] = nlohmann::json::array();
        for (const auto& s : seeds) {
            nlohmann::json js;
            js["seed"] = s.seed;
            js["failed"] = s.failed;
            js["clamp_events"] = s.clamp_events;
            js["nan_steps"] = s.nan_steps;
            js["best_step"] = s.best_step;
            js["mean_train_elbo"] = s.mean_train_elbo;
            js["mean_valid_elbo"] = s.mean_valid_elbo;
            js["mean_test_elbo"] = s.mean_test_elbo;
            js["mean_valid_logp"] = s.mean_valid_logp;
            js["mean_test_logp"] = s.mean_test_logp;
            js["regimes"] = nlohmann::json::array();
            for (const auto& r : s.regimes) {
                js["regimes"].push_back({{"regime", r.regime_label},
                                         {"train_elbo", r.train_elbo},
                                         {"valid_elbo", r.valid_elbo},
                                         {"test_elbo", r.test_elbo},
                                         {"valid_logp", r.valid_logp},
                                         {"test_logp", r.test_logp}});
            }
            j["seeds"].push_back(js);
        }
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.name = j.at("name").get<std::string>();
        m.config_hash = j.at("config_hash").get<uint64_t>();
        m.config = j.at("config");
        for (const auto& js : j.at("seeds")) {
            SeedSummary s;
            s.seed = js.at("seed").get<uint64_t>();
            s.failed = js.at("failed").get<bool>();
            s.clamp_events = js.at("clamp_events").get<long>();
            s.nan_steps = js.at("nan_steps").get<int>();
            s.best_step = js.at("best_step").get<int>();
            s.mean_train_elbo = js.at("mean_train_elbo").get<double>();
            s.mean_valid_elbo = js.at("mean_valid_elbo").get<double>();
            s.mean_test_elbo = js.at("mean_test_elbo").get<double>();
            s.mean_valid_logp = js.at("mean_valid_logp").get<double>();
            s.mean_test_logp = js.at("mean_test_logp").get<double>();
            for (const auto& jr : js.at("regimes")) {
                RegimeMetrics r;
                r.regime_label = jr.at("regime").get<std::string>();
                r.train_elbo = jr.at("train_elbo").get<double>();
                r.valid_elbo = jr.at("valid_elbo").get<double>();
                r.test_elbo = jr.at("test_elbo").get<double>();
                r.valid_logp = jr.at("valid_logp").get<double>();
                r.test_logp = jr.at("test_logp").get<double>();
                s.regimes.push_back(r);
            }
            m.seeds.push_back(std::move(s));
        }
        m.compute_aggregates();
        return m;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write manifest " + path);
        out << to_json().dump(2) << "\n";
    }

    static RunManifest load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("cannot open manifest " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }
};

/// Run f(i) for i in [0, count) on a bounded worker pool. The fan-out unit is
/// one seed/run; each worker owns its model and RNG streams.
template <class F>
inline void parallel_for(int count, F f) {
    const int workers = std::min<int>(std::max(1u, std::thread::hardware_concurrency()), count);
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Writes one CSV + manifest per regime, seeded and split 80/10/10.
inline std::vector<std::string> run_generate(const ExperimentConfig& cfg) {
    cfg.validate();
    const Scm scm = cfg.scm.load();
    std::filesystem::create_directories(cfg.out_dir + "/data");
    std::vector<std::string> files;
    for (size_t k = 0; k < cfg.regimes.size(); ++k) {
        RegimeDataset ds = ancestral_sample(scm, cfg.regimes[k], cfg.samples_per_regime,
                                            Rng::derive(cfg.data_seed, k));
        write_dataset(ds, cfg.dataset_csv(static_cast<int>(k)), cfg.dataset_manifest(static_cast<int>(k)));
        files.push_back(cfg.dataset_csv(static_cast<int>(k)));
    }
    return files;
}

inline std::vector<RegimeDataset> load_datasets(const ExperimentConfig& cfg) {
    std::vector<RegimeDataset> out;
    for (size_t k = 0; k < cfg.regimes.size(); ++k) {
        const std::string csv = cfg.dataset_csv(static_cast<int>(k));
        if (!std::filesystem::exists(csv))
            throw std::invalid_argument("dataset missing (run generate first): " + csv);
        out.push_back(read_dataset(csv, cfg.dataset_manifest(static_cast<int>(k))));
    }
    return out;
}

/// Trains one model per seed on the generated datasets, writes checkpoints
/// and the run manifest. Seeds fan out to the worker pool.
inline RunManifest run_train(const ExperimentConfig& cfg, bool write_files = true) {
    cfg.validate();
    const Scm scm = cfg.scm.load();
    const std::vector<RegimeDataset> datasets = load_datasets(cfg);
    const GraphSpec graph = GraphSpec::from_scm(scm);

    RunManifest manifest;
    manifest.name = cfg.name;
    manifest.config = cfg.to_json();
    manifest.config_hash = cfg.hash();
    manifest.seeds.resize(cfg.seeds.size());

    parallel_for(static_cast<int>(cfg.seeds.size()), [&](int i) {
        const uint64_t seed = cfg.seeds[i];
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        IvgaeModel model = IvgaeModel::create(graph, scm.variables(), tc.latent_dim, tc.hidden, seed);
        const TrainTrace trace = train(model, datasets, tc);

        SeedSummary s;
        s.seed = seed;
        s.failed = trace.failed;
        s.clamp_events = trace.clamp_events;
        s.nan_steps = trace.nan_steps;
        s.best_step = trace.best_step;
        s.mean_train_elbo = trace.mean_train_elbo();
        s.mean_valid_elbo = trace.mean_valid_elbo();
        s.mean_test_elbo = trace.mean_test_elbo();
        s.mean_valid_logp = trace.mean_valid_logp();
        s.mean_test_logp = trace.mean_test_logp();
        s.regimes = trace.final_metrics;
        manifest.seeds[i] = std::move(s);

        if (write_files) save_model(model, cfg.checkpoint_path(seed));
    });

    manifest.compute_aggregates();
    if (write_files) {
        std::filesystem::create_directories(cfg.out_dir);
        manifest.save(cfg.manifest_path());
    }
    return manifest;
}

inline bool all_seeds_failed(const RunManifest& m) {
    return m.failed_seeds == static_cast<int>(m.seeds.size()) && !m.seeds.empty();
}

/// Seed of the non-failed run with the best mean validation ELBO.
inline uint64_t best_seed(const RunManifest& m) {
    double best = -std::numeric_limits<double>::infinity();
    uint64_t who = 0;
    bool found = false;
    for (const auto& s : m.seeds) {
        if (s.failed) continue;
        if (s.mean_valid_elbo > best) {
            best = s.mean_valid_elbo;
            who = s.seed;
            found = true;
        }
    }
    if (!found) throw std::runtime_error("no non-failed seed in manifest");
    return who;
}

}  // namespace cgnn
