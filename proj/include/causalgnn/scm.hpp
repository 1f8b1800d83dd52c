#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalgnn/random.hpp"

namespace cgnn {

using Adjacency = std::vector<std::vector<uint8_t>>;  // adj[i][j] = 1 <=> j is a parent of i

/// One structural equation: a deterministic table over (parent assignment,
/// noise level). Binary-noise mechanisms (levels = 2) carry P(U=1) in
/// noise_dist[1]; CPT-derived mechanisms discretize one uniform coin into
/// more levels. Parent assignment bits: first listed parent is the most
/// significant bit (last parent fastest).
struct Mechanism {
    std::vector<int> parents;
    int noise_levels{2};
    std::vector<double> noise_dist;  // size noise_levels, sums to 1
    std::vector<uint8_t> table;      // size 2^|parents| * noise_levels

    int rows() const { return 1 << parents.size(); }

    uint8_t eval(int pa_assign, int noise) const {
        return table[static_cast<size_t>(pa_assign) * noise_levels + noise];
    }

    /// P(V = 1 | parent assignment), marginalizing the noise.
    double prob_one(int pa_assign) const {
        double p = 0.0;
        for (int u = 0; u < noise_levels; ++u)
            if (eval(pa_assign, u)) p += noise_dist[u];
        return p;
    }
};

/// Markovian SCM over binary variables: one independent exogenous term per
/// endogenous variable, deterministic mechanisms, acyclic induced graph.
class Scm {
public:
    Scm(std::vector<std::string> names, std::vector<Mechanism> mechanisms)
        : names_(std::move(names)), mechs_(std::move(mechanisms)) {
        if (names_.empty() || names_.size() != mechs_.size())
            throw std::invalid_argument("scm: variable/mechanism count mismatch");
        const int d = static_cast<int>(names_.size());
        for (int i = 0; i < d; ++i) {
            if (index_.count(names_[i])) throw std::invalid_argument("scm: duplicate variable " + names_[i]);
            index_[names_[i]] = i;
            const Mechanism& m = mechs_[i];
            if (m.noise_levels < 1 || static_cast<int>(m.noise_dist.size()) != m.noise_levels)
                throw std::invalid_argument("scm: bad noise distribution for " + names_[i]);
            double s = 0.0;
            for (double p : m.noise_dist) {
                if (p < 0.0) throw std::invalid_argument("scm: negative noise probability for " + names_[i]);
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-9)
                throw std::invalid_argument("scm: noise probabilities of " + names_[i] + " do not sum to 1");
            if (m.table.size() != static_cast<size_t>(m.rows()) * m.noise_levels)
                throw std::invalid_argument("scm: mechanism table size mismatch for " + names_[i]);
            for (int p : m.parents)
                if (p < 0 || p >= d || p == i) throw std::invalid_argument("scm: bad parent index for " + names_[i]);
        }
        topo_ = compute_topo_order();
    }

    /// Binary-noise constructor: each table covers 2^(|parents|+1) rows
    /// indexed by (parent assignment, noise bit) and noise_probs[i] = P(U_i=1).
    static Scm binary(std::vector<std::string> names, std::vector<std::vector<int>> parents,
                      std::vector<std::function<int(int pa_assign, int u)>> equations,
                      std::vector<double> noise_probs) {
        const int d = static_cast<int>(names.size());
        if (static_cast<int>(parents.size()) != d || static_cast<int>(equations.size()) != d ||
            static_cast<int>(noise_probs.size()) != d)
            throw std::invalid_argument("scm::binary argument sizes mismatch");
        std::vector<Mechanism> mechs(d);
        for (int i = 0; i < d; ++i) {
            Mechanism m;
            m.parents = parents[i];
            m.noise_levels = 2;
            const double p = noise_probs[i];
            if (p < 0.0 || p > 1.0) throw std::invalid_argument("scm::binary noise prob out of [0,1]");
            m.noise_dist = {1.0 - p, p};
            m.table.resize(static_cast<size_t>(m.rows()) * 2);
            for (int pa = 0; pa < m.rows(); ++pa)
                for (int u = 0; u < 2; ++u) {
                    const int v = equations[i](pa, u);
                    if (v != 0 && v != 1) throw std::invalid_argument("scm::binary equation output not binary");
                    m.table[static_cast<size_t>(pa) * 2 + u] = static_cast<uint8_t>(v);
                }
            mechs[i] = std::move(m);
        }
        return Scm(std::move(names), std::move(mechs));
    }

    int num_vars() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& variables() const { return names_; }
    const Mechanism& mechanism(int i) const { return mechs_.at(i); }
    const std::vector<int>& topo_order() const { return topo_; }

    int index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("scm: unknown variable " + name);
        return it->second;
    }

    /// P(U_i = 1) for a binary-noise mechanism.
    double noise_prob(int i) const {
        const Mechanism& m = mechs_.at(i);
        if (m.noise_levels != 2) throw std::invalid_argument("noise_prob requires binary noise");
        return m.noise_dist[1];
    }

    Adjacency dag() const {
        const int d = num_vars();
        Adjacency a(d, std::vector<uint8_t>(d, 0));
        for (int i = 0; i < d; ++i)
            for (int p : mechs_[i].parents) a[i][p] = 1;
        return a;
    }

    /// Parent-assignment index of variable i under full assignment v.
    int parent_assignment(int i, const std::vector<uint8_t>& v) const {
        const Mechanism& m = mechs_[i];
        int pa = 0;
        for (int b : m.parents) pa = (pa << 1) | v[b];
        return pa;
    }

private:
    std::vector<std::string> names_;
    std::vector<Mechanism> mechs_;
    std::map<std::string, int> index_;
    std::vector<int> topo_;

    std::vector<int> compute_topo_order() const {
        const int d = num_vars();
        std::vector<int> indeg(d, 0);
        std::vector<std::vector<int>> children(d);
        for (int i = 0; i < d; ++i)
            for (int p : mechs_[i].parents) {
                children[p].push_back(i);
                ++indeg[i];
            }
        std::vector<int> order;
        std::vector<int> ready;
        for (int i = 0; i < d; ++i)
            if (indeg[i] == 0) ready.push_back(i);
        while (!ready.empty()) {
            const int v = ready.back();
            ready.pop_back();
            order.push_back(v);
            for (int c : children[v])
                if (--indeg[c] == 0) ready.push_back(c);
        }
        if (static_cast<int>(order.size()) != d) throw std::invalid_argument("scm: induced graph is cyclic");
        return order;
    }
};

/// Replacement mechanism for one intervened variable: a constant or an
/// independent Bernoulli coin.
struct Replacement {
    enum class Kind { constant, coin };
    Kind kind{Kind::constant};
    int value{0};
    double coin_prob{0.5};

    static Replacement constant(int v) {
        if (v != 0 && v != 1) throw std::invalid_argument("constant replacement must be 0 or 1");
        return {Kind::constant, v, 0.0};
    }
    static Replacement coin(double q) {
        if (q < 0.0 || q > 1.0) throw std::invalid_argument("coin probability out of [0,1]");
        return {Kind::coin, 0, q};
    }

    double prob_of(int v) const {
        if (kind == Kind::constant) return v == value ? 1.0 : 0.0;
        return v == 1 ? coin_prob : 1.0 - coin_prob;
    }
};

/// do(W): a set of targets with distinct variables. Empty = observational.
class Intervention {
public:
    static Intervention none() { return Intervention{}; }

    static Intervention assign(const std::string& var, int value) {
        return Intervention{}.and_assign(var, value);
    }
    static Intervention coin(const std::string& var, double q) { return Intervention{}.and_coin(var, q); }

    Intervention& and_assign(const std::string& var, int value) { return set(var, Replacement::constant(value)); }
    Intervention& and_coin(const std::string& var, double q) { return set(var, Replacement::coin(q)); }

    Intervention& set(const std::string& var, Replacement r) {
        if (targets_.count(var)) throw std::invalid_argument("duplicate intervention target " + var);
        targets_[var] = r;
        return *this;
    }

    bool empty() const { return targets_.empty(); }
    size_t size() const { return targets_.size(); }
    const std::map<std::string, Replacement>& targets() const { return targets_; }

    const Replacement* find(const std::string& var) const {
        auto it = targets_.find(var);
        return it == targets_.end() ? nullptr : &it->second;
    }

    /// Target indices resolved against an SCM's variable order; errors on
    /// unknown names.
    std::vector<int> resolve(const Scm& scm) const {
        std::vector<int> idx;
        for (const auto& [name, r] : targets_) idx.push_back(scm.index_of(name));
        return idx;
    }

    std::string label() const {
        std::ostringstream os;
        os << "do(";
        bool first = true;
        for (const auto& [name, r] : targets_) {
            if (!first) os << ",";
            first = false;
            if (r.kind == Replacement::Kind::constant)
                os << name << "=" << r.value;
            else
                os << name << "=coin" << r.coin_prob;
        }
        os << ")";
        return os.str();
    }

private:
    std::map<std::string, Replacement> targets_;
};

/// Remove every edge into each target; all other edges intact. Idempotent.
inline Adjacency mutilate(const Adjacency& dag, const std::vector<int>& targets) {
    Adjacency out = dag;
    const int d = static_cast<int>(dag.size());
    for (int t : targets) {
        if (t < 0 || t >= d) throw std::invalid_argument("mutilate: target index out of range");
        std::fill(out[t].begin(), out[t].end(), 0);
    }
    return out;
}

inline Adjacency mutilate(const Scm& scm, const Intervention& iv) {
    return mutilate(scm.dag(), iv.resolve(scm));
}

/// Exact joint/marginal probabilities over full binary assignments for one
/// regime. Assignment index: variable i occupies bit (d-1-i), so the first
/// variable is the most significant bit.
class DistributionTable {
public:
    DistributionTable(std::vector<std::string> order, std::vector<double> probs)
        : order_(std::move(order)), probs_(std::move(probs)) {
        const int d = static_cast<int>(order_.size());
        if (d < 1 || d > 24) throw std::invalid_argument("distribution table dimension out of range");
        if (probs_.size() != (1ULL << d)) throw std::invalid_argument("distribution table size mismatch");
        long double s = 0.0L;
        for (double p : probs_) {
            if (p < -1e-15) throw std::invalid_argument("distribution table has negative entry");
            s += p;
        }
        if (std::abs(static_cast<double>(s) - 1.0) > 1e-12)
            throw std::invalid_argument("distribution table does not sum to 1");
        for (int i = 0; i < d; ++i) index_[order_[i]] = i;
    }

    int num_vars() const { return static_cast<int>(order_.size()); }
    const std::vector<std::string>& variable_order() const { return order_; }
    const std::vector<double>& probs() const { return probs_; }
    double prob(uint32_t assignment) const { return probs_[assignment]; }

    int bit_of(int var_index) const { return num_vars() - 1 - var_index; }

    int value_in(uint32_t assignment, int var_index) const {
        return (assignment >> bit_of(var_index)) & 1u;
    }

    int index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("distribution table: unknown variable " + name);
        return it->second;
    }

    /// P(var = 1)
    double marginal(const std::string& var) const {
        const int vi = index_of(var);
        double s = 0.0;
        for (uint32_t a = 0; a < probs_.size(); ++a)
            if (value_in(a, vi)) s += probs_[a];
        return s;
    }

    /// P(target = 1 | given). Errors if the conditioning event has zero mass.
    double conditional(const std::string& target, const std::map<std::string, int>& given) const {
        const int ti = index_of(target);
        double num = 0.0, den = 0.0;
        for (uint32_t a = 0; a < probs_.size(); ++a) {
            bool match = true;
            for (const auto& [name, val] : given)
                if (value_in(a, index_of(name)) != val) {
                    match = false;
                    break;
                }
            if (!match) continue;
            den += probs_[a];
            if (value_in(a, ti)) num += probs_[a];
        }
        if (den <= 0.0) throw std::invalid_argument("conditional on zero-probability event");
        return num / den;
    }

    double max_abs_diff(const DistributionTable& o) const {
        if (order_ != o.order_) throw std::invalid_argument("distribution tables over different variables");
        double m = 0.0;
        for (size_t i = 0; i < probs_.size(); ++i) m = std::max(m, std::abs(probs_[i] - o.probs_[i]));
        return m;
    }

    /// Total-variation distance.
    double tv_distance(const DistributionTable& o) const {
        if (order_ != o.order_) throw std::invalid_argument("distribution tables over different variables");
        double s = 0.0;
        for (size_t i = 0; i < probs_.size(); ++i) s += std::abs(probs_[i] - o.probs_[i]);
        return 0.5 * s;
    }

private:
    std::vector<std::string> order_;
    std::vector<double> probs_;
    std::map<std::string, int> index_;
};

namespace detail {

inline void check_enumeration_bounds(const Scm& scm, const Intervention& iv) {
    if (scm.num_vars() > 20) throw std::invalid_argument("exact enumeration limited to 20 variables");
    long double states = 1.0L;
    for (int i = 0; i < scm.num_vars(); ++i) states *= scm.mechanism(i).noise_levels;
    states *= static_cast<long double>(1ULL << iv.size());
    if (states > 4194304.0L) throw std::invalid_argument("noise space too large for exact enumeration");
}

}  // namespace detail

/// Brute-force L1/L2 valuation: sum P(u) over every noise assignment,
/// evaluating the (mutilated) equations deterministically. BernoulliCoin
/// targets are enumerated as extra independent coins.
inline DistributionTable exact_joint(const Scm& scm, const Intervention& iv) {
    detail::check_enumeration_bounds(scm, iv);
    const int d = scm.num_vars();
    std::vector<const Replacement*> repl(d, nullptr);
    for (const auto& [name, r] : iv.targets()) repl[scm.index_of(name)] = &r;

    // Mixed-radix enumeration: one digit per non-clamped noise source.
    struct Digit {
        int var;           // variable whose noise this is, or coin target
        bool is_coin;
        int levels;
        const std::vector<double>* dist;
        std::vector<double> coin_dist;
    };
    std::vector<Digit> digits;
    for (int i = 0; i < d; ++i) {
        if (repl[i] && repl[i]->kind == Replacement::Kind::constant) continue;  // consumes no randomness
        if (repl[i] && repl[i]->kind == Replacement::Kind::coin) {
            Digit dg{i, true, 2, nullptr, {1.0 - repl[i]->coin_prob, repl[i]->coin_prob}};
            digits.push_back(std::move(dg));
        } else {
            digits.push_back(Digit{i, false, scm.mechanism(i).noise_levels, &scm.mechanism(i).noise_dist, {}});
        }
    }

    std::vector<double> probs(1ULL << d, 0.0);
    std::vector<int> state(digits.size(), 0);
    std::vector<uint8_t> v(d, 0);
    std::vector<int> noise_of(d, 0);
    const auto& topo = scm.topo_order();

    bool done = digits.empty();
    bool first = true;
    while (first || !done) {
        first = false;
        double p = 1.0;
        for (size_t k = 0; k < digits.size(); ++k) {
            const Digit& dg = digits[k];
            p *= dg.is_coin ? dg.coin_dist[state[k]] : (*dg.dist)[state[k]];
            if (!dg.is_coin) noise_of[dg.var] = state[k];
        }
        if (p > 0.0) {
            for (int i : topo) {
                if (repl[i]) {
                    if (repl[i]->kind == Replacement::Kind::constant) {
                        v[i] = static_cast<uint8_t>(repl[i]->value);
                    } else {
                        for (size_t k = 0; k < digits.size(); ++k)
                            if (digits[k].is_coin && digits[k].var == i) {
                                v[i] = static_cast<uint8_t>(state[k]);
                                break;
                            }
                    }
                } else {
                    v[i] = scm.mechanism(i).eval(scm.parent_assignment(i, v), noise_of[i]);
                }
            }
            uint32_t a = 0;
            for (int i = 0; i < d; ++i) a |= static_cast<uint32_t>(v[i]) << (d - 1 - i);
            probs[a] += p;
        }
        // advance mixed-radix counter
        done = true;
        for (size_t k = 0; k < digits.size(); ++k) {
            if (++state[k] < digits[k].levels) {
                done = false;
                break;
            }
            state[k] = 0;
        }
        if (digits.empty()) break;
    }
    return DistributionTable(scm.variables(), std::move(probs));
}

/// Interventional joint via the truncated factorization: product over
/// non-intervened variables of p(V | pa(V)), times the replacement
/// distribution of each target.
inline DistributionTable truncated_factorization_joint(const Scm& scm, const Intervention& iv) {
    if (scm.num_vars() > 20) throw std::invalid_argument("exact enumeration limited to 20 variables");
    const int d = scm.num_vars();
    std::vector<const Replacement*> repl(d, nullptr);
    for (const auto& [name, r] : iv.targets()) repl[scm.index_of(name)] = &r;

    std::vector<double> probs(1ULL << d, 0.0);
    std::vector<uint8_t> v(d, 0);
    for (uint32_t a = 0; a < probs.size(); ++a) {
        for (int i = 0; i < d; ++i) v[i] = (a >> (d - 1 - i)) & 1u;
        double p = 1.0;
        for (int i = 0; i < d && p > 0.0; ++i) {
            if (repl[i]) {
                p *= repl[i]->prob_of(v[i]);
            } else {
                const double p1 = scm.mechanism(i).prob_one(scm.parent_assignment(i, v));
                p *= v[i] ? p1 : 1.0 - p1;
            }
        }
        probs[a] = p;
    }
    return DistributionTable(scm.variables(), std::move(probs));
}

/// ATE(X, Y) = E[Y | do(X=1)] - E[Y | do(X=0)] from exact joints.
inline double exact_ate(const Scm& scm, const std::string& x, const std::string& y) {
    if (x == y) throw std::invalid_argument("exact_ate: treatment equals outcome");
    scm.index_of(x);
    scm.index_of(y);
    const double p1 = exact_joint(scm, Intervention::assign(x, 1)).marginal(y);
    const double p0 = exact_joint(scm, Intervention::assign(x, 0)).marginal(y);
    return p1 - p0;
}

/// True iff p(V | pa(V)) is unchanged (<= 1e-12) by the intervention for
/// every parent assignment with positive probability in both regimes.
inline bool autonomy_check(const Scm& scm, const Intervention& iv, const std::string& variable) {
    const int vi = scm.index_of(variable);
    for (int t : iv.resolve(scm))
        if (t == vi) throw std::invalid_argument("autonomy_check: variable is an intervention target");

    const DistributionTable orig = exact_joint(scm, Intervention::none());
    const DistributionTable intv = exact_joint(scm, iv);
    const Mechanism& m = scm.mechanism(vi);
    const int d = scm.num_vars();

    for (int pa = 0; pa < m.rows(); ++pa) {
        double p_pa_orig = 0.0, p_v1_orig = 0.0, p_pa_intv = 0.0, p_v1_intv = 0.0;
        for (uint32_t a = 0; a < orig.probs().size(); ++a) {
            bool match = true;
            for (size_t k = 0; k < m.parents.size(); ++k) {
                const int want = (pa >> (m.parents.size() - 1 - k)) & 1;
                if (((a >> (d - 1 - m.parents[k])) & 1u) != static_cast<uint32_t>(want)) {
                    match = false;
                    break;
                }
            }
            if (!match) continue;
            const int vv = (a >> (d - 1 - vi)) & 1u;
            p_pa_orig += orig.prob(a);
            p_pa_intv += intv.prob(a);
            if (vv) {
                p_v1_orig += orig.prob(a);
                p_v1_intv += intv.prob(a);
            }
        }
        if (p_pa_orig > 1e-15 && p_pa_intv > 1e-15) {
            if (std::abs(p_v1_orig / p_pa_orig - p_v1_intv / p_pa_intv) > 1e-12) return false;
        }
    }
    return true;
}

/// The benchmark boolean structures. Variables are ordered {X, Y, Z, W} and
/// noise_probs follows that order.
///   m1 (chain):      X=U_X, Y=X&U_Y, Z=Y&U_Z, W=Z&U_W
///   m2 (confounder): X=Z^U_X, Y=(X&U_Y)^(Z&U_Y), Z=U_Z, W=X&U_W
///   m3 (backdoor):   X=Z^U_X, Y=X&(W&U_Y), Z=U_Z, W=Z&U_W
inline Scm builtin_scm(const std::string& name, const std::vector<double>& noise_probs) {
    if (noise_probs.size() != 4) throw std::invalid_argument("builtin_scm expects 4 noise probabilities");
    const std::vector<std::string> vars = {"X", "Y", "Z", "W"};
    // Parent-assignment convention: first listed parent = most significant bit.
    auto bit = [](int pa, int width, int pos) { return (pa >> (width - 1 - pos)) & 1; };
    if (name == "m1") {
        return Scm::binary(
            vars,
            {{}, {0}, {1}, {2}},
            {
                [](int, int u) { return u; },
                [bit](int pa, int u) { return bit(pa, 1, 0) & u; },
                [bit](int pa, int u) { return bit(pa, 1, 0) & u; },
                [bit](int pa, int u) { return bit(pa, 1, 0) & u; },
            },
            noise_probs);
    }
    if (name == "m2") {
        return Scm::binary(
            vars,
            {{2}, {0, 2}, {}, {0}},
            {
                [bit](int pa, int u) { return bit(pa, 1, 0) ^ u; },
                [bit](int pa, int u) { return ((bit(pa, 2, 0) & u) ^ (bit(pa, 2, 1) & u)); },
                [](int, int u) { return u; },
                [bit](int pa, int u) { return bit(pa, 1, 0) & u; },
            },
            noise_probs);
    }
    if (name == "m3") {
        return Scm::binary(
            vars,
            {{2}, {3, 0}, {}, {2}},
            {
                [bit](int pa, int u) { return bit(pa, 1, 0) ^ u; },
                [bit](int pa, int u) { return bit(pa, 2, 1) & (bit(pa, 2, 0) & u); },
                [](int, int u) { return u; },
                [bit](int pa, int u) { return bit(pa, 1, 0) & u; },
            },
            noise_probs);
    }
    throw std::invalid_argument("unknown builtin scm: " + name);
}

/// Noise probabilities drawn uniformly at random, for benchmark
/// parameterizations.
inline std::vector<double> random_noise_probs(uint64_t seed, int count = 4) {
    Rng rng(Rng::derive(seed, 0x6e6f6973ULL));
    std::vector<double> p(count);
    for (double& v : p) v = rng.uniform01();
    return p;
}

/// Random small boolean SCM: random DAG over at most max_vars nodes (parent
/// count capped at 3), random truth tables, noise probs in [0.05, 0.95].
inline Scm random_boolean_scm(Rng& rng, int max_vars = 5) {
    const int d = 2 + static_cast<int>(rng.uniform01() * (max_vars - 1));
    std::vector<std::string> names(d);
    for (int i = 0; i < d; ++i) names[i] = "V" + std::to_string(i);
    std::vector<Mechanism> mechs(d);
    for (int i = 0; i < d; ++i) {
        Mechanism m;
        for (int j = 0; j < i && m.parents.size() < 3; ++j)
            if (rng.bernoulli(0.5)) m.parents.push_back(j);
        const double p = rng.uniform(0.05, 0.95);
        m.noise_levels = 2;
        m.noise_dist = {1.0 - p, p};
        m.table.resize(static_cast<size_t>(m.rows()) * 2);
        for (auto& cell : m.table) cell = static_cast<uint8_t>(rng.bernoulli(0.5));
        mechs[i] = std::move(m);
    }
    return Scm(std::move(names), std::move(mechs));
}

}  // namespace cgnn
