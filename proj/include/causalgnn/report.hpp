#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalgnn/experiment.hpp"

namespace cgnn {

/// Table-2-style aggregate rows, one per run manifest.
inline void write_stats_by_run(const std::vector<RunManifest>& manifests, const std::string& path) {
    if (manifests.empty()) throw std::invalid_argument("report: no manifests given");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "name,regimes,steps,seeds,failed_seeds,mean_train_elbo,mean_valid_elbo,mean_test_elbo,"
           "mean_valid_logp,mean_test_logp,best_test_elbo,worst_test_elbo,config_hash\n";
    for (const auto& m : manifests) {
        const auto& cfg = m.config;
        out << m.name << "," << cfg.at("regimes").size() << "," << cfg.at("train").at("steps").get<int>() << ","
            << m.seeds.size() << "," << m.failed_seeds << "," << fmt_double(m.mean_train_elbo) << ","
            << fmt_double(m.mean_valid_elbo) << "," << fmt_double(m.mean_test_elbo) << ","
            << fmt_double(m.mean_valid_logp) << "," << fmt_double(m.mean_test_logp) << ","
            << fmt_double(m.best_test_elbo) << "," << fmt_double(m.worst_test_elbo) << "," << m.config_hash << "\n";
    }
}

/// Table-1-style rows: per regime, aggregated over non-failed seeds.
inline void write_stats_by_regime(const std::vector<RunManifest>& manifests, const std::string& path) {
    if (manifests.empty()) throw std::invalid_argument("report: no manifests given");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "name,regime,mean_train_elbo,mean_valid_elbo,mean_test_elbo,mean_valid_logp,mean_test_logp,"
           "best_test_elbo,worst_test_elbo,config_hash\n";
    for (const auto& m : manifests) {
        if (m.seeds.empty()) continue;
        const size_t nregimes = m.seeds.front().regimes.size();
        for (size_t r = 0; r < nregimes; ++r) {
            double tr = 0, va = 0, te = 0, vl = 0, tl = 0;
            double best = -std::numeric_limits<double>::infinity();
            double worst = std::numeric_limits<double>::infinity();
            int ok = 0;
            std::string label;
            for (const auto& s : m.seeds) {
                if (s.failed) continue;
                const RegimeMetrics& met = s.regimes.at(r);
                label = met.regime_label;
                tr += met.train_elbo;
                va += met.valid_elbo;
                te += met.test_elbo;
                vl += met.valid_logp;
                tl += met.test_logp;
                best = std::max(best, met.test_elbo);
                worst = std::min(worst, met.test_elbo);
                ++ok;
            }
            if (ok == 0) continue;
            out << m.name << "," << label << "," << fmt_double(tr / ok) << "," << fmt_double(va / ok) << ","
                << fmt_double(te / ok) << "," << fmt_double(vl / ok) << "," << fmt_double(tl / ok) << ","
                << fmt_double(best) << "," << fmt_double(worst) << "," << m.config_hash << "\n";
        }
    }
}

/// Per-node model-vs-oracle marginals for every regime of a run, evaluated on
/// the best-validation seed's checkpoint.
inline void write_density_report(const ExperimentConfig& cfg, const RunManifest& manifest, int samples,
                                 const std::string& out_dir) {
    const Scm scm = cfg.scm.load();
    const uint64_t seed = best_seed(manifest);
    const IvgaeModel model = load_model(cfg.checkpoint_path(seed));
    std::filesystem::create_directories(out_dir);
    for (size_t k = 0; k < cfg.regimes.size(); ++k) {
        const DensityReport rep = density_table(model, scm, cfg.regimes[k], samples, Rng::derive(cfg.data_seed, 900 + k));
        const std::string path = out_dir + "/density_regime_" + std::to_string(k) + ".csv";
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << "node,model_p1,oracle_p1,abs_error,regime,seed,config_hash\n";
        for (size_t i = 0; i < rep.nodes.size(); ++i)
            out << rep.nodes[i] << "," << fmt_double(rep.model_p1[i]) << "," << fmt_double(rep.oracle_p1[i]) << ","
                << fmt_double(rep.abs_error[i]) << "," << rep.regime_label << "," << seed << "," << manifest.config_hash
                << "\n";
    }
}

/// True-vs-estimated ATE(X, Y) per seed, for runs trained on the two atomic
/// regimes of X (the Fig.-2(b) scatter data).
inline void write_ate_report(const ExperimentConfig& cfg, const RunManifest& manifest, const std::string& x,
                             const std::string& y, int samples, const std::string& path, bool append = false) {
    const Scm scm = cfg.scm.load();
    const double truth = exact_ate(scm, x, y);
    std::ofstream out(path, append ? std::ios::app : std::ios::out);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (!append) out << "name,seed,true_ate,estimated_ate,abs_error,config_hash\n";
    for (const auto& s : manifest.seeds) {
        if (s.failed) continue;
        const IvgaeModel model = load_model(cfg.checkpoint_path(s.seed));
        const double est = estimate_ate(model, x, y, samples, Rng::derive(cfg.data_seed, 700 + s.seed));
        out << cfg.name << "," << s.seed << "," << fmt_double(truth) << "," << fmt_double(est) << ","
            << fmt_double(std::abs(est - truth)) << "," << manifest.config_hash << "\n";
    }
}

struct SweepPoint {
    int batch;
    int hidden;
    double learning_rate;
    double mean_valid_elbo;
    double mean_test_elbo;
    int failed_seeds;
};

/// Deterministic grid sweep over batch size, hidden width and learning rate.
/// Each point trains cfg.seeds models with the shortened step budget and is
/// scored by mean validation ELBO.
inline std::vector<SweepPoint> run_sweep(const ExperimentConfig& base, const std::vector<int>& batches,
                                         const std::vector<int>& hiddens, const std::vector<double>& rates,
                                         int steps, const std::string& csv_path) {
    std::vector<SweepPoint> points;
    for (int b : batches)
        for (int h : hiddens)
            for (double lr : rates) {
                ExperimentConfig cfg = base;
                cfg.train.batch = b;
                cfg.train.hidden = h;
                cfg.train.learning_rate = lr;
                cfg.train.steps = steps;
                const RunManifest m = run_train(cfg, /*write_files=*/false);
                points.push_back({b, h, lr, m.mean_valid_elbo, m.mean_test_elbo, m.failed_seeds});
            }
    std::sort(points.begin(), points.end(),
              [](const SweepPoint& a, const SweepPoint& b) { return a.mean_valid_elbo > b.mean_valid_elbo; });
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw std::runtime_error("cannot write " + csv_path);
        out << "batch,hidden,learning_rate,mean_valid_elbo,mean_test_elbo,failed_seeds\n";
        for (const auto& p : points)
            out << p.batch << "," << p.hidden << "," << fmt_double(p.learning_rate) << ","
                << fmt_double(p.mean_valid_elbo) << "," << fmt_double(p.mean_test_elbo) << "," << p.failed_seeds << "\n";
    }
    return points;
}

}  // namespace cgnn
