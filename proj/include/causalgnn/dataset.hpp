#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "causalgnn/scm.hpp"

namespace cgnn {

inline nlohmann::json intervention_to_json(const Intervention& iv) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, r] : iv.targets()) {
        nlohmann::json t;
        t["var"] = name;
        if (r.kind == Replacement::Kind::constant)
            t["value"] = r.value;
        else
            t["coin"] = r.coin_prob;
        arr.push_back(t);
    }
    return arr;
}

inline Intervention intervention_from_json(const nlohmann::json& arr) {
    Intervention iv;
    for (const auto& t : arr) {
        const std::string var = t.at("var").get<std::string>();
        if (t.contains("value"))
            iv.and_assign(var, t["value"].get<int>());
        else if (t.contains("coin"))
            iv.and_coin(var, t["coin"].get<double>());
        else
            throw std::invalid_argument("intervention target needs value or coin");
    }
    return iv;
}

/// Samples of one intervention regime with a fixed 80/10/10 split.
struct RegimeDataset {
    Intervention regime;
    std::vector<std::string> variables;
    std::vector<uint8_t> samples;  // n x d, row-major
    int n{0};
    int d{0};
    uint64_t seed{0};
    int train_end{0};
    int valid_end{0};

    const uint8_t* row(int i) const { return &samples[static_cast<size_t>(i) * d]; }
    int train_count() const { return train_end; }
    int valid_count() const { return valid_end - train_end; }
    int test_count() const { return n - valid_end; }

    void set_split() {
        train_end = n * 8 / 10;
        valid_end = n * 9 / 10;
    }
};

/// Draw n samples by topological-order evaluation: noise from each
/// mechanism's distribution, intervened variables from their replacement.
/// Deterministic given the seed.
inline RegimeDataset ancestral_sample(const Scm& scm, const Intervention& iv, int n, uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("ancestral_sample requires n > 0");
    const int d = scm.num_vars();
    std::vector<const Replacement*> repl(d, nullptr);
    for (const auto& [name, r] : iv.targets()) repl[scm.index_of(name)] = &r;

    RegimeDataset ds;
    ds.regime = iv;
    ds.variables = scm.variables();
    ds.n = n;
    ds.d = d;
    ds.seed = seed;
    ds.samples.resize(static_cast<size_t>(n) * d);
    ds.set_split();

    Rng rng(Rng::derive(seed, 0x64617461ULL));
    std::vector<uint8_t> v(d);
    for (int s = 0; s < n; ++s) {
        for (int i : scm.topo_order()) {
            if (repl[i]) {
                v[i] = repl[i]->kind == Replacement::Kind::constant
                           ? static_cast<uint8_t>(repl[i]->value)
                           : static_cast<uint8_t>(rng.bernoulli(repl[i]->coin_prob));
            } else {
                const Mechanism& m = scm.mechanism(i);
                const int u = m.noise_levels == 2 ? rng.bernoulli(m.noise_dist[1]) : rng.categorical(m.noise_dist);
                v[i] = m.eval(scm.parent_assignment(i, v), u);
            }
        }
        std::copy(v.begin(), v.end(), ds.samples.begin() + static_cast<size_t>(s) * d);
    }
    return ds;
}

/// Empirical joint distribution of a sample block (for convergence checks).
inline DistributionTable empirical_joint(const RegimeDataset& ds) {
    std::vector<double> probs(1ULL << ds.d, 0.0);
    for (int s = 0; s < ds.n; ++s) {
        uint32_t a = 0;
        const uint8_t* r = ds.row(s);
        for (int i = 0; i < ds.d; ++i) a |= static_cast<uint32_t>(r[i]) << (ds.d - 1 - i);
        probs[a] += 1.0 / ds.n;
    }
    return DistributionTable(ds.variables, std::move(probs));
}

/// CSV with a header of variable names and one 0/1 row per sample, plus a
/// JSON manifest sidecar (regime, seed, split boundaries).
inline void write_dataset(const RegimeDataset& ds, const std::string& csv_path, const std::string& manifest_path) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    for (int i = 0; i < ds.d; ++i) csv << (i ? "," : "") << ds.variables[i];
    csv << "\n";
    for (int s = 0; s < ds.n; ++s) {
        const uint8_t* r = ds.row(s);
        for (int i = 0; i < ds.d; ++i) csv << (i ? "," : "") << static_cast<int>(r[i]);
        csv << "\n";
    }
    csv.close();

    nlohmann::json man;
    man["regime"] = intervention_to_json(ds.regime);
    man["seed"] = ds.seed;
    man["n"] = ds.n;
    man["split"] = {{"train_end", ds.train_end}, {"valid_end", ds.valid_end}};
    std::ofstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot write " + manifest_path);
    mf << man.dump(2) << "\n";
}

inline RegimeDataset read_dataset(const std::string& csv_path, const std::string& manifest_path) {
    std::ifstream csv(csv_path);
    if (!csv) throw std::invalid_argument("cannot open " + csv_path);
    RegimeDataset ds;
    std::string line;
    if (!std::getline(csv, line)) throw std::invalid_argument("empty dataset file " + csv_path);
    {
        std::istringstream hs(line);
        std::string tok;
        while (std::getline(hs, tok, ',')) ds.variables.push_back(tok);
    }
    ds.d = static_cast<int>(ds.variables.size());
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream rs(line);
        std::string tok;
        int col = 0;
        while (std::getline(rs, tok, ',')) {
            if (tok != "0" && tok != "1")
                throw std::invalid_argument("dataset value not binary in " + csv_path + ": " + tok);
            ds.samples.push_back(tok == "1" ? 1 : 0);
            ++col;
        }
        if (col != ds.d) throw std::invalid_argument("ragged dataset row in " + csv_path);
        ++ds.n;
    }

    std::ifstream mf(manifest_path);
    if (!mf) throw std::invalid_argument("cannot open " + manifest_path);
    nlohmann::json man;
    mf >> man;
    ds.regime = intervention_from_json(man.at("regime"));
    ds.seed = man.at("seed").get<uint64_t>();
    ds.train_end = man.at("split").at("train_end").get<int>();
    ds.valid_end = man.at("split").at("valid_end").get<int>();
    if (man.at("n").get<int>() != ds.n) throw std::invalid_argument("manifest row count mismatch for " + csv_path);
    return ds;
}

}  // namespace cgnn
