#ifndef CREDITRBM_SECTORS_HPP
#define CREDITRBM_SECTORS_HPP

#include "creditrbm/rbm.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace creditrbm {

// Weight-magnitude profile of one hidden unit across visible units,
// normalized by its maximum: entries in [0,1] with maximum exactly 1.
// All-zero weight rows are flagged and excluded from graph building.
struct ReceptiveField {
    int hidden_index = 0;
    Vector magnitudes;
    bool zero_row = false;
};

std::vector<ReceptiveField> receptive_fields(const RbmParameters& p);

// Weighted undirected graph over obligors. An edge (l,k) exists when at
// least one hidden unit has both field values above 1 - epsilon; the weight
// counts such hidden units. No self loops.
struct SectorGraph {
    int n_vertices = 0;
    double epsilon = 0.0;
    std::map<std::pair<int, int>, int> edges; // key (u,v) with u < v

    double total_weight() const;
    int degree_weight(int v) const; // sum of incident edge weights
};

SectorGraph build_graph(const std::vector<ReceptiveField>& fields, double epsilon);

struct Partition {
    std::vector<int> block_of; // dense block ids, numbered by smallest member
    double modularity = 0.0;

    int n_blocks() const;
    void validate() const;
};

// Standard weighted Newman modularity at resolution 1.
double weighted_modularity(const SectorGraph& graph, const std::vector<int>& block_of);

// Greedy agglomerative modularity maximization (CNM): merge the pair with
// the largest positive modularity gain until none remains. Ties break on the
// smallest member vertex ids; isolated vertices stay singletons.
Partition detect_communities(const SectorGraph& graph);

struct EpsilonSweepRow {
    double epsilon = 0.0;
    int communities = 0;
    double modularity = 0.0;
};

struct EpsilonSweepResult {
    std::vector<EpsilonSweepRow> table;
    double selected_epsilon = 0.0;
    Partition selected_partition;
};

// Runs build_graph + detect_communities per grid point and keeps the one
// with the fewest communities; ties prefer higher modularity, then smaller
// epsilon.
EpsilonSweepResult sweep_epsilon(const RbmParameters& p, const std::vector<double>& grid,
                                 int threads = 1);

// Fifty log-spaced points on [0.01, 0.5].
std::vector<double> default_epsilon_grid();

// Agreement between two labelings, corrected for chance; 1 is identity.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// Plain-text exports: "u v weight" per line, and obligor,block CSV.
void write_edge_list(const SectorGraph& graph, const std::string& path);
void write_partition_csv(const Partition& partition, const std::vector<std::string>& ids,
                         const std::string& path);

} // namespace creditrbm

#endif
