#pragma once

#include <stdexcept>
#include <vector>

#include "causalgnn/scm.hpp"
#include "causalgnn/tensor.hpp"

namespace cgnn {

/// Causal graph handed to GNN layers. adj[i][j] = 1 means j is a parent of i
/// (diagonal must be empty); with self_loops the effective adjacency is A + I.
struct GraphSpec {
    int d{0};
    Adjacency adj;
    bool self_loops{true};

    GraphSpec() = default;
    GraphSpec(Adjacency a, bool loops = true) : d(static_cast<int>(a.size())), adj(std::move(a)), self_loops(loops) {
        for (int i = 0; i < d; ++i) {
            if (static_cast<int>(adj[i].size()) != d) throw std::invalid_argument("adjacency not square");
            if (adj[i][i]) throw std::invalid_argument("adjacency diagonal must be empty; use the self-loop flag");
        }
        check_acyclic();
    }

    static GraphSpec from_scm(const Scm& scm, bool loops = true) { return GraphSpec(scm.dag(), loops); }

    std::vector<int> parents(int i) const {
        std::vector<int> out;
        for (int j = 0; j < d; ++j)
            if (adj[i][j]) out.push_back(j);
        return out;
    }

    /// Regular neighborhood: parents plus self when self-loops are on.
    std::vector<int> neighborhood(int i) const {
        std::vector<int> out;
        for (int j = 0; j < d; ++j)
            if (adj[i][j] || (self_loops && j == i)) out.push_back(j);
        return out;
    }

    /// Def.-1 neighborhood: an intervened node drops its parents (the
    /// self-loop is kept); everything else keeps its full neighborhood.
    std::vector<int> intervened_neighborhood(int i, const std::vector<uint8_t>& target_mask) const {
        if (i < 0 || i >= d) throw std::invalid_argument("node index out of range");
        if (static_cast<int>(target_mask.size()) != d) throw std::invalid_argument("target mask size mismatch");
        if (!target_mask[i]) return neighborhood(i);
        std::vector<int> out;
        if (self_loops) out.push_back(i);
        return out;
    }

    /// Aggregation matrix S with S[i][j] = 1 iff j is in the intervened
    /// neighborhood of i. The observational regime (all-zero mask) gives the
    /// plain A (+ I) matrix.
    Tensor aggregation_matrix(const std::vector<uint8_t>& target_mask) const {
        Tensor s = Tensor::zeros(d, d);
        for (int i = 0; i < d; ++i)
            for (int j : intervened_neighborhood(i, target_mask)) s.at(i, j) = 1.0;
        return s;
    }

    /// The adjacency implied by the intervened neighborhoods (self-loops
    /// stripped) — the layer-side mutilated graph of Prop. 1.
    GraphSpec mutilated(const std::vector<uint8_t>& target_mask) const {
        Adjacency out(d, std::vector<uint8_t>(d, 0));
        for (int i = 0; i < d; ++i)
            for (int j : intervened_neighborhood(i, target_mask))
                if (j != i) out[i][j] = 1;
        return GraphSpec(std::move(out), self_loops);
    }

    bool operator==(const GraphSpec& o) const { return d == o.d && adj == o.adj && self_loops == o.self_loops; }

private:
    void check_acyclic() const {
        std::vector<int> indeg(d, 0);
        std::vector<std::vector<int>> children(d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                if (adj[i][j]) {
                    children[j].push_back(i);
                    ++indeg[i];
                }
        std::vector<int> ready;
        for (int i = 0; i < d; ++i)
            if (indeg[i] == 0) ready.push_back(i);
        int seen = 0;
        while (!ready.empty()) {
            const int v = ready.back();
            ready.pop_back();
            ++seen;
            for (int c : children[v])
                if (--indeg[c] == 0) ready.push_back(c);
        }
        if (seen != d) throw std::invalid_argument("graph adjacency is cyclic");
    }
};

/// Resolve an Intervention into a per-node 0/1 target mask.
inline std::vector<uint8_t> target_mask(const std::vector<std::string>& variables, const Intervention& iv) {
    std::vector<uint8_t> mask(variables.size(), 0);
    for (const auto& [name, r] : iv.targets()) {
        bool found = false;
        for (size_t i = 0; i < variables.size(); ++i)
            if (variables[i] == name) {
                mask[i] = 1;
                found = true;
                break;
            }
        if (!found) throw std::invalid_argument("intervention target not a graph variable: " + name);
    }
    return mask;
}

}  // namespace cgnn
