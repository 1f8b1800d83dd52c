#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "causalgnn/scm.hpp"

namespace cgnn {

/// Loads a CPT-specified Bayesian network from JSON and converts it to an
/// SCM. Expected fields:
///   variables: ordered list of names
///   parents:   name -> list of parent names
///   cpt:       name -> row-major table [P(V=0|row), P(V=1|row), ...] with
///              parent assignments in binary counting order, last parent
///              fastest. Each row must sum to 1 within 1e-9.
///
/// Conversion: each variable gets one exogenous uniform coin, discretized at
/// the distinct row probabilities; V = [U < P(V=1|row)]. Any functional
/// representation with independent noise reproduces the same L1/L2
/// distributions, which is all this toolkit queries.
inline Scm load_bayes_net(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open bayes net file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("bayes net parse error in " + path + ": " + e.what());
    }

    if (!doc.contains("variables") || !doc.contains("parents") || !doc.contains("cpt"))
        throw std::invalid_argument("bayes net file missing variables/parents/cpt: " + path);

    const std::vector<std::string> names = doc["variables"].get<std::vector<std::string>>();
    const int d = static_cast<int>(names.size());
    std::map<std::string, int> index;
    for (int i = 0; i < d; ++i) {
        if (index.count(names[i])) throw std::invalid_argument("duplicate variable " + names[i]);
        index[names[i]] = i;
    }

    std::vector<Mechanism> mechs(d);
    for (int i = 0; i < d; ++i) {
        const std::string& name = names[i];
        if (!doc["parents"].contains(name)) throw std::invalid_argument("missing parents entry for " + name);
        if (!doc["cpt"].contains(name)) throw std::invalid_argument("missing cpt entry for " + name);

        std::vector<int> parents;
        for (const auto& pn : doc["parents"][name]) {
            const std::string ps = pn.get<std::string>();
            if (!index.count(ps)) throw std::invalid_argument("unknown parent " + ps + " of " + name);
            parents.push_back(index[ps]);
        }
        const std::vector<double> flat = doc["cpt"][name].get<std::vector<double>>();
        const size_t rows = 1ULL << parents.size();
        if (flat.size() != rows * 2)
            throw std::invalid_argument("cpt for " + name + " must have " + std::to_string(rows * 2) + " entries");

        std::vector<double> p_one(rows);
        for (size_t r = 0; r < rows; ++r) {
            const double p0 = flat[2 * r], p1 = flat[2 * r + 1];
            if (p0 < 0.0 || p1 < 0.0 || std::abs(p0 + p1 - 1.0) > 1e-9)
                throw std::invalid_argument("cpt row " + std::to_string(r) + " of " + name + " does not sum to 1");
            p_one[r] = p1;
        }

        // Discretize one uniform coin at the distinct row thresholds.
        std::set<double> cuts(p_one.begin(), p_one.end());
        cuts.insert(0.0);
        cuts.insert(1.0);
        const std::vector<double> bounds(cuts.begin(), cuts.end());

        Mechanism m;
        m.parents = std::move(parents);
        m.noise_levels = static_cast<int>(bounds.size()) - 1;
        m.noise_dist.resize(m.noise_levels);
        for (int u = 0; u < m.noise_levels; ++u) m.noise_dist[u] = bounds[u + 1] - bounds[u];
        m.table.resize(rows * m.noise_levels);
        for (size_t r = 0; r < rows; ++r)
            for (int u = 0; u < m.noise_levels; ++u)
                m.table[r * m.noise_levels + u] = bounds[u + 1] <= p_one[r] ? 1 : 0;
        mechs[i] = std::move(m);
    }

    return Scm(names, std::move(mechs));  // Scm ctor rejects cyclic graphs
}

}  // namespace cgnn
