#include "creditrbm/sectors.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/threading.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>

namespace creditrbm {

std::vector<ReceptiveField> receptive_fields(const RbmParameters& p) {
    p.validate();
    std::vector<ReceptiveField> fields;
    fields.reserve(static_cast<std::size_t>(p.n_hidden()));
    for (Eigen::Index j = 0; j < p.n_hidden(); ++j) {
        ReceptiveField f;
        f.hidden_index = static_cast<int>(j);
        f.magnitudes = p.weights.row(j).cwiseAbs().transpose();
        const double mx = f.magnitudes.maxCoeff();
        if (mx == 0.0) {
            f.zero_row = true;
        } else {
            f.magnitudes /= mx;
        }
        fields.push_back(std::move(f));
    }
    return fields;
}

double SectorGraph::total_weight() const {
    double w = 0.0;
    for (const auto& [edge, weight] : edges) w += weight;
    return w;
}

int SectorGraph::degree_weight(int v) const {
    int d = 0;
    for (const auto& [edge, weight] : edges) {
        if (edge.first == v || edge.second == v) d += weight;
    }
    return d;
}

SectorGraph build_graph(const std::vector<ReceptiveField>& fields, double epsilon) {
    CRBM_REQUIRE(epsilon > 0.0 && epsilon < 1.0, "build_graph: epsilon must lie in (0,1)");
    CRBM_REQUIRE(!fields.empty(), "build_graph: no receptive fields");

    SectorGraph g;
    g.epsilon = epsilon;
    g.n_vertices = static_cast<int>(fields.front().magnitudes.size());
    const double cut = 1.0 - epsilon;

    for (const auto& f : fields) {
        if (f.zero_row) continue;
        CRBM_REQUIRE(f.magnitudes.size() == g.n_vertices,
                     "build_graph: inconsistent field lengths");
        std::vector<int> above;
        for (Eigen::Index i = 0; i < f.magnitudes.size(); ++i) {
            if (f.magnitudes[i] > cut) above.push_back(static_cast<int>(i));
        }
        // Each hidden unit's super-threshold set induces a clique.
        for (std::size_t a = 0; a < above.size(); ++a) {
            for (std::size_t b = a + 1; b < above.size(); ++b) {
                ++g.edges[{above[a], above[b]}];
            }
        }
    }
    return g;
}

int Partition::n_blocks() const {
    if (block_of.empty()) return 0;
    return *std::max_element(block_of.begin(), block_of.end()) + 1;
}

void Partition::validate() const {
    CRBM_REQUIRE(!block_of.empty(), "Partition: empty");
    const int k = n_blocks();
    std::vector<bool> seen(static_cast<std::size_t>(k), false);
    for (int b : block_of) {
        CRBM_REQUIRE(b >= 0 && b < k, "Partition: block id out of range");
        seen[static_cast<std::size_t>(b)] = true;
    }
    for (bool s : seen) CRBM_REQUIRE(s, "Partition: empty block id");
}

double weighted_modularity(const SectorGraph& graph, const std::vector<int>& block_of) {
    CRBM_REQUIRE(static_cast<int>(block_of.size()) == graph.n_vertices,
                 "weighted_modularity: label count mismatch");
    const double w2 = 2.0 * graph.total_weight();
    if (w2 == 0.0) return 0.0;

    const int k = *std::max_element(block_of.begin(), block_of.end()) + 1;
    std::vector<double> intra(static_cast<std::size_t>(k), 0.0);
    std::vector<double> degree(static_cast<std::size_t>(graph.n_vertices), 0.0);
    for (const auto& [edge, weight] : graph.edges) {
        degree[static_cast<std::size_t>(edge.first)] += weight;
        degree[static_cast<std::size_t>(edge.second)] += weight;
        if (block_of[static_cast<std::size_t>(edge.first)] ==
            block_of[static_cast<std::size_t>(edge.second)]) {
            intra[static_cast<std::size_t>(block_of[static_cast<std::size_t>(edge.first)])] +=
                weight;
        }
    }
    std::vector<double> block_degree(static_cast<std::size_t>(k), 0.0);
    for (int v = 0; v < graph.n_vertices; ++v) {
        block_degree[static_cast<std::size_t>(block_of[static_cast<std::size_t>(v)])] +=
            degree[static_cast<std::size_t>(v)];
    }
    double q = 0.0;
    for (int c = 0; c < k; ++c) {
        q += 2.0 * intra[static_cast<std::size_t>(c)] / w2 -
             (block_degree[static_cast<std::size_t>(c)] / w2) *
                 (block_degree[static_cast<std::size_t>(c)] / w2);
    }
    return q;
}

Partition detect_communities(const SectorGraph& graph) {
    CRBM_REQUIRE(graph.n_vertices >= 1, "detect_communities: empty graph");
    const int n = graph.n_vertices;

    // Community bookkeeping: e[c][d] = weight fraction between c and d,
    // a[c] = degree fraction. Communities are keyed by their smallest vertex.
    const double w2 = 2.0 * graph.total_weight();
    std::vector<int> comm_of(static_cast<std::size_t>(n));
    std::iota(comm_of.begin(), comm_of.end(), 0);

    if (w2 > 0.0) {
        std::map<int, std::map<int, double>> e; // symmetric, between-community
        std::map<int, double> a;
        for (int v = 0; v < n; ++v) a[v] = 0.0;
        for (const auto& [edge, weight] : graph.edges) {
            const double frac = weight / w2;
            e[edge.first][edge.second] += frac;
            e[edge.second][edge.first] += frac;
            a[edge.first] += frac;
            a[edge.second] += frac;
        }
        std::map<int, std::set<int>> members;
        for (int v = 0; v < n; ++v) members[v] = {v};

        while (true) {
            double best_gain = 0.0;
            int best_c = -1, best_d = -1;
            for (const auto& [c, row] : e) {
                for (const auto& [d, ecd] : row) {
                    if (d <= c) continue;
                    const double gain = 2.0 * (ecd - a[c] * a[d]);
                    const bool better =
                        gain > best_gain + 1e-15 ||
                        (gain > best_gain - 1e-15 &&
                         (best_c == -1 || c < best_c || (c == best_c && d < best_d)));
                    if (gain > 1e-15 && better) {
                        best_gain = gain;
                        best_c = c;
                        best_d = d;
                    }
                }
            }
            if (best_c < 0) break;

            // Merge d into c (c is the smaller key, so labels stay anchored
            // to the smallest member).
            for (const auto& [x, exd] : e[best_d]) {
                if (x == best_c) continue;
                e[best_c][x] += exd;
                e[x][best_c] += exd;
                e[x].erase(best_d);
            }
            e[best_c].erase(best_d);
            for (auto& [x, row] : e) row.erase(best_d);
            e.erase(best_d);
            a[best_c] += a[best_d];
            a.erase(best_d);
            members[best_c].insert(members[best_d].begin(), members[best_d].end());
            members.erase(best_d);
        }
        for (const auto& [c, verts] : members) {
            for (int v : verts) comm_of[static_cast<std::size_t>(v)] = c;
        }
    }

    // Dense relabeling in order of smallest member id.
    std::map<int, int> relabel;
    for (int v = 0; v < n; ++v) {
        if (!relabel.count(comm_of[static_cast<std::size_t>(v)])) {
            const int next = static_cast<int>(relabel.size());
            relabel[comm_of[static_cast<std::size_t>(v)]] = next;
        }
    }
    Partition part;
    part.block_of.resize(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) {
        part.block_of[static_cast<std::size_t>(v)] = relabel[comm_of[static_cast<std::size_t>(v)]];
    }
    part.modularity = weighted_modularity(graph, part.block_of);
    part.validate();
    return part;
}

EpsilonSweepResult sweep_epsilon(const RbmParameters& p, const std::vector<double>& grid,
                                 int threads) {
    CRBM_REQUIRE(!grid.empty(), "sweep_epsilon: empty grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CRBM_REQUIRE(grid[i] > 0.0 && grid[i] < 1.0, "sweep_epsilon: epsilon outside (0,1)");
        if (i > 0) CRBM_REQUIRE(grid[i] > grid[i - 1], "sweep_epsilon: grid not sorted");
    }
    const auto fields = receptive_fields(p);

    std::vector<Partition> partitions(grid.size());
    EpsilonSweepResult result;
    result.table.resize(grid.size());
    parallel_for(static_cast<int>(grid.size()), threads, [&](int k) {
        const auto idx = static_cast<std::size_t>(k);
        const SectorGraph g = build_graph(fields, grid[idx]);
        partitions[idx] = detect_communities(g);
        result.table[idx] =
            EpsilonSweepRow{grid[idx], partitions[idx].n_blocks(), partitions[idx].modularity};
    });

    std::size_t best = 0;
    for (std::size_t k = 1; k < grid.size(); ++k) {
        const auto& row = result.table[k];
        const auto& cur = result.table[best];
        if (row.communities < cur.communities ||
            (row.communities == cur.communities && row.modularity > cur.modularity + 1e-12)) {
            best = k;
        }
    }
    result.selected_epsilon = grid[best];
    result.selected_partition = partitions[best];
    return result;
}

std::vector<double> default_epsilon_grid() {
    std::vector<double> grid;
    const double lo = std::log(0.01), hi = std::log(0.5);
    for (int k = 0; k < 50; ++k) {
        grid.push_back(std::exp(lo + (hi - lo) * k / 49.0));
    }
    return grid;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    CRBM_REQUIRE(a.size() == b.size() && !a.empty(),
                 "adjusted_rand_index: label vectors must match and be nonempty");
    const auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };

    std::map<int, double> ca, cb;
    std::map<std::pair<int, int>, double> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1.0;
        cb[b[i]] += 1.0;
        joint[{a[i], b[i]}] += 1.0;
    }
    double sum_ab = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [key, cnt] : joint) sum_ab += choose2(cnt);
    for (const auto& [key, cnt] : ca) sum_a += choose2(cnt);
    for (const auto& [key, cnt] : cb) sum_b += choose2(cnt);
    const double total = choose2(static_cast<double>(a.size()));
    const double expected = sum_a * sum_b / total;
    const double maximum = 0.5 * (sum_a + sum_b);
    if (maximum == expected) return 1.0; // both trivial partitions
    return (sum_ab - expected) / (maximum - expected);
}

void write_edge_list(const SectorGraph& graph, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "write_edge_list: cannot open " + path);
    for (const auto& [edge, weight] : graph.edges) {
        out << edge.first << ' ' << edge.second << ' ' << weight << "\n";
    }
}

void write_partition_csv(const Partition& partition, const std::vector<std::string>& ids,
                         const std::string& path) {
    partition.validate();
    CRBM_REQUIRE(ids.size() == partition.block_of.size(),
                 "write_partition_csv: id count mismatch");
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "write_partition_csv: cannot open " + path);
    out << "obligor,block\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out << ids[i] << ',' << partition.block_of[i] << "\n";
    }
}

} // namespace creditrbm
