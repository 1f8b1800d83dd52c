#pragma once

#include <array>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalgnn/scm.hpp"

namespace cgnn {

/// Scalar decomposition of one structural equation into univariate parent
/// dependency terms plus a noise-joining remainder:
///   f_i(pa, U) = f_U(U, A_i) + sum_j f_ij(V_j),   exact on the full grid.
/// Terms are anchored at (parents = 0, noise = its highest level); with that
/// anchor f_ij takes the identity of the parent for conjunctive equations.
struct Decomposition {
    int variable{0};
    std::vector<int> parents;
    int noise_levels{2};
    std::vector<int> linear_term_at_one;  // f_ij(1) per parent; f_ij(0) = 0
    std::vector<int> remainder;           // [pa_assign * noise_levels + u], integer
    std::vector<int> remainder_args;      // A_i: parents the remainder depends on

    int linear_term(size_t parent_pos, int v) const { return v ? linear_term_at_one[parent_pos] : 0; }

    int remainder_at(int pa_assign, int u) const {
        return remainder[static_cast<size_t>(pa_assign) * noise_levels + u];
    }

    /// f_U(U, A) + sum_j f_ij(V_j), reconstructing the equation.
    int eval(int pa_assign, int u) const {
        int s = remainder_at(pa_assign, u);
        const int k = static_cast<int>(parents.size());
        for (int j = 0; j < k; ++j) s += linear_term(j, (pa_assign >> (k - 1 - j)) & 1);
        return s;
    }
};

inline Decomposition decompose(const Scm& scm, int variable) {
    const Mechanism& m = scm.mechanism(variable);
    const int k = static_cast<int>(m.parents.size());
    if (k > 8) throw std::invalid_argument("decompose limited to 8 parents");

    Decomposition dec;
    dec.variable = variable;
    dec.parents = m.parents;
    dec.noise_levels = m.noise_levels;

    const int anchor_u = m.noise_levels - 1;
    const int base = m.eval(0, anchor_u);
    dec.linear_term_at_one.resize(k);
    for (int j = 0; j < k; ++j)
        dec.linear_term_at_one[j] = m.eval(1 << (k - 1 - j), anchor_u) - base;

    dec.remainder.resize(static_cast<size_t>(m.rows()) * m.noise_levels);
    for (int pa = 0; pa < m.rows(); ++pa) {
        int linear = 0;
        for (int j = 0; j < k; ++j)
            if ((pa >> (k - 1 - j)) & 1) linear += dec.linear_term_at_one[j];
        for (int u = 0; u < m.noise_levels; ++u)
            dec.remainder[static_cast<size_t>(pa) * m.noise_levels + u] = m.eval(pa, u) - linear;
    }

    // A_i = parents the remainder actually depends on.
    for (int j = 0; j < k; ++j) {
        bool depends = false;
        for (int pa = 0; pa < m.rows() && !depends; ++pa) {
            if ((pa >> (k - 1 - j)) & 1) continue;
            const int flipped = pa | (1 << (k - 1 - j));
            for (int u = 0; u < m.noise_levels; ++u)
                if (dec.remainder_at(pa, u) != dec.remainder_at(flipped, u)) {
                    depends = true;
                    break;
                }
        }
        if (depends) dec.remainder_args.push_back(m.parents[j]);
    }
    return dec;
}

/// The Thm.-1 construction: feature space V union U with node identity tags,
/// a shared message function psi dispatching on the edge tag, and a shared
/// update phi adding the node's noise-joining term to the aggregated sum.
class ConstructedGnn {
public:
    explicit ConstructedGnn(std::vector<Decomposition> decomps) : decomps_(std::move(decomps)) {}

    const std::vector<Decomposition>& decompositions() const { return decomps_; }
    std::vector<Decomposition>& decompositions() { return decomps_; }

    /// Shared message: the univariate dependency term for edge (j -> i);
    /// zero when j is not a parent of i.
    int psi(int i, int j, int v_j) const {
        const Decomposition& d = decomps_[i];
        for (size_t p = 0; p < d.parents.size(); ++p)
            if (d.parents[p] == j) return d.linear_term(p, v_j);
        return 0;
    }

    /// Shared update: noise-joining term of node i plus the aggregated sum.
    int phi(int i, int u_i, int pa_assign, int aggregated) const {
        return decomps_[i].remainder_at(pa_assign, u_i) + aggregated;
    }

    /// h_i for every node given full endogenous values and noise levels.
    std::vector<int> forward(const std::vector<uint8_t>& values, const std::vector<int>& noise) const {
        const int d = static_cast<int>(decomps_.size());
        std::vector<int> h(d);
        for (int i = 0; i < d; ++i) {
            const Decomposition& dec = decomps_[i];
            int agg = 0;
            for (int j : dec.parents) agg += psi(i, j, values[j]);
            int pa = 0;
            for (int j : dec.parents) pa = (pa << 1) | values[j];
            h[i] = phi(i, noise[i], pa, agg);
        }
        return h;
    }

private:
    std::vector<Decomposition> decomps_;
};

inline ConstructedGnn construct_gnn_from_scm(const Scm& scm) {
    std::vector<Decomposition> decomps;
    for (int i = 0; i < scm.num_vars(); ++i) decomps.push_back(decompose(scm, i));
    return ConstructedGnn(std::move(decomps));
}

struct ConversionCheck {
    bool ok{true};
    std::vector<uint8_t> values;
    std::vector<int> noise;
    int variable{-1};
    int expected{0};
    int actual{0};

    std::string describe() const {
        if (ok) return "conversion exact";
        std::ostringstream os;
        os << "mismatch at variable " << variable << ": expected " << expected << " got " << actual << " for v=[";
        for (size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << int(values[i]);
        os << "] u=[";
        for (size_t i = 0; i < noise.size(); ++i) os << (i ? "," : "") << noise[i];
        os << "]";
        return os.str();
    }
};

/// Exhaustive check that the constructed layer reproduces every structural
/// equation on every (values, noise) input; returns the first counterexample.
inline ConversionCheck verify_conversion(const Scm& scm, const ConstructedGnn& gnn) {
    const int d = scm.num_vars();
    long double combos = 1.0L;
    for (int i = 0; i < d; ++i) combos *= scm.mechanism(i).noise_levels;
    combos *= static_cast<long double>(1ULL << d);
    if (combos > 1048576.0L) throw std::invalid_argument("verify_conversion input space too large");

    std::vector<uint8_t> v(d, 0);
    std::vector<int> u(d, 0);
    ConversionCheck check;

    const uint32_t vmax = 1u << d;
    for (uint32_t va = 0; va < vmax; ++va) {
        for (int i = 0; i < d; ++i) v[i] = (va >> (d - 1 - i)) & 1u;
        std::fill(u.begin(), u.end(), 0);
        bool udone = false;
        while (!udone) {
            const std::vector<int> h = gnn.forward(v, u);
            for (int i = 0; i < d; ++i) {
                const int f = scm.mechanism(i).eval(scm.parent_assignment(i, v), u[i]);
                if (h[i] != f) {
                    check.ok = false;
                    check.values = v;
                    check.noise = u;
                    check.variable = i;
                    check.expected = f;
                    check.actual = h[i];
                    return check;
                }
            }
            udone = true;
            for (int i = 0; i < d; ++i) {
                if (++u[i] < scm.mechanism(i).noise_levels) {
                    udone = false;
                    break;
                }
                u[i] = 0;
            }
        }
    }
    return check;
}

/// NCM-Type 2: per-edge dependency terms plus a per-node noise-joining term
/// under a sum aggregator. Table-backed here (the feedforward-net variant is
/// not trained in this toolkit).
struct NcmType2 {
    struct NoiseTerm {
        std::vector<int> args;        // A_i as variable indices
        int levels{2};
        std::vector<int> table;       // [args_assign * levels + u]
        int eval(int args_assign, int u) const { return table[static_cast<size_t>(args_assign) * levels + u]; }
    };

    int d{0};
    std::vector<std::vector<int>> parents;
    std::map<std::pair<int, int>, std::array<int, 2>> edge_terms;  // (target, source) -> f^{ij}(0), f^{ij}(1)
    std::vector<NoiseTerm> noise_terms;
    std::vector<std::vector<double>> noise_dists;

    std::vector<int> forward(const std::vector<uint8_t>& values, const std::vector<int>& noise) const {
        std::vector<int> h(d);
        for (int i = 0; i < d; ++i) {
            int s = 0;
            for (int j : parents[i]) {
                auto it = edge_terms.find({i, j});
                if (it != edge_terms.end()) s += it->second[values[j]];
            }
            int args_assign = 0;
            for (int a : noise_terms[i].args) args_assign = (args_assign << 1) | values[a];
            h[i] = s + noise_terms[i].eval(args_assign, noise[i]);
        }
        return h;
    }
};

/// Builds the table-backed NCM-Type 2 from the decompositions of an SCM.
inline NcmType2 ncm_from_scm(const Scm& scm) {
    NcmType2 ncm;
    ncm.d = scm.num_vars();
    ncm.parents.resize(ncm.d);
    ncm.noise_terms.resize(ncm.d);
    ncm.noise_dists.resize(ncm.d);
    for (int i = 0; i < ncm.d; ++i) {
        const Decomposition dec = decompose(scm, i);
        ncm.parents[i] = dec.parents;
        ncm.noise_dists[i] = scm.mechanism(i).noise_dist;
        for (size_t p = 0; p < dec.parents.size(); ++p)
            ncm.edge_terms[{i, dec.parents[p]}] = {0, dec.linear_term_at_one[p]};

        NcmType2::NoiseTerm nt;
        nt.args = dec.remainder_args;
        nt.levels = dec.noise_levels;
        const int k = static_cast<int>(dec.parents.size());
        nt.table.resize((1ULL << nt.args.size()) * nt.levels);
        for (uint32_t aa = 0; aa < (1u << nt.args.size()); ++aa) {
            // Expand the A_i assignment to a full parent assignment with the
            // non-argument parents at the anchor (zero); the remainder does
            // not depend on them.
            int pa = 0;
            for (int j = 0; j < k; ++j) {
                int bit = 0;
                for (size_t q = 0; q < nt.args.size(); ++q)
                    if (nt.args[q] == dec.parents[j]) bit = (aa >> (nt.args.size() - 1 - q)) & 1u;
                pa = (pa << 1) | bit;
            }
            for (int u = 0; u < nt.levels; ++u)
                nt.table[static_cast<size_t>(aa) * nt.levels + u] = dec.remainder_at(pa, u);
        }
        ncm.noise_terms[i] = std::move(nt);
    }
    return ncm;
}

/// Rebuilds an SCM whose mechanisms are the NCM's node computations; errors
/// if any output leaves {0,1}.
inline Scm ncm_to_scm(const NcmType2& ncm, const std::vector<std::string>& names) {
    std::vector<Mechanism> mechs(ncm.d);
    for (int i = 0; i < ncm.d; ++i) {
        Mechanism m;
        m.parents = ncm.parents[i];
        m.noise_levels = ncm.noise_terms[i].levels;
        m.noise_dist = ncm.noise_dists[i];
        const int k = static_cast<int>(m.parents.size());
        m.table.resize(static_cast<size_t>(m.rows()) * m.noise_levels);
        std::vector<uint8_t> values(ncm.d, 0);
        std::vector<int> noise(ncm.d, 0);
        for (int pa = 0; pa < m.rows(); ++pa) {
            for (int j = 0; j < k; ++j) values[m.parents[j]] = (pa >> (k - 1 - j)) & 1;
            for (int u = 0; u < m.noise_levels; ++u) {
                noise[i] = u;
                const int out = ncm.forward(values, noise)[i];
                if (out != 0 && out != 1)
                    throw std::invalid_argument("ncm_to_scm: node output not binary");
                m.table[static_cast<size_t>(pa) * m.noise_levels + u] = static_cast<uint8_t>(out);
            }
        }
        mechs[i] = std::move(m);
    }
    return Scm(names, std::move(mechs));
}

}  // namespace cgnn
