#include "creditrbm/sectors.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

using namespace creditrbm;

namespace {

ReceptiveField make_field(int j, std::initializer_list<double> mags) {
    ReceptiveField f;
    f.hidden_index = j;
    f.magnitudes = Vector(static_cast<Eigen::Index>(mags.size()));
    Eigen::Index i = 0;
    for (double m : mags) f.magnitudes[i++] = m;
    return f;
}

// All partitions of {0..n-1} via restricted growth strings.
void enumerate_partitions(int n, const std::function<void(const std::vector<int>&)>& visit) {
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    std::function<void(int, int)> rec = [&](int i, int max_used) {
        if (i == n) {
            visit(labels);
            return;
        }
        for (int b = 0; b <= max_used + 1; ++b) {
            labels[static_cast<std::size_t>(i)] = b;
            rec(i + 1, std::max(max_used, b));
        }
    };
    rec(0, -1);
}

} // namespace

TEST_CASE("receptive fields normalize by the row maximum") {
    RbmParameters p = RbmParameters::zeros(3, 3);
    p.weights.row(0) << 2.0, -4.0, 1.0;
    p.weights.row(1) << 0.7, 0.7, 0.7;
    p.weights.row(2) << 0.0, 0.0, 0.0;
    const auto fields = receptive_fields(p);

    CHECK(fields[0].magnitudes[0] == doctest::Approx(0.5));
    CHECK(fields[0].magnitudes[1] == doctest::Approx(1.0));
    CHECK(fields[0].magnitudes[2] == doctest::Approx(0.25));
    CHECK_FALSE(fields[0].zero_row);

    for (Eigen::Index i = 0; i < 3; ++i) CHECK(fields[1].magnitudes[i] == doctest::Approx(1.0));

    CHECK(fields[2].zero_row);

    Rng rng(3, 0);
    RbmParameters q = RbmParameters::zeros(5, 7);
    for (Eigen::Index j = 0; j < 5; ++j)
        for (Eigen::Index i = 0; i < 7; ++i) q.weights(j, i) = 2.0 * rng.uniform01() - 1.0;
    for (const auto& f : receptive_fields(q)) {
        CHECK(f.magnitudes.maxCoeff() == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(f.magnitudes.minCoeff() >= 0.0);
    }
}

TEST_CASE("build_graph thresholding") {
    // Unique per-row maxima and epsilon -> 0+: singleton sets, no edges.
    std::vector<ReceptiveField> unique = {make_field(0, {1.0, 0.5, 0.2}),
                                          make_field(1, {0.3, 1.0, 0.6})};
    CHECK(build_graph(unique, 1e-9).edges.empty());

    // Two hidden units with the same super-threshold pair: weight 2.
    std::vector<ReceptiveField> twin = {make_field(0, {1.0, 0.95, 0.1}),
                                        make_field(1, {0.97, 1.0, 0.2})};
    const SectorGraph g = build_graph(twin, 0.1);
    REQUIRE(g.edges.size() == 1);
    CHECK(g.edges.at({0, 1}) == 2);

    // Three peaks above 0.9 at epsilon = 0.1 induce one triangle.
    std::vector<ReceptiveField> peaks = {
        make_field(0, {0.95, 0.2, 1.0, 0.91, 0.3, 0.05})};
    const SectorGraph tri = build_graph(peaks, 0.1);
    CHECK(tri.edges.size() == 3);
    CHECK(tri.edges.count({0, 2}) == 1);
    CHECK(tri.edges.count({0, 3}) == 1);
    CHECK(tri.edges.count({2, 3}) == 1);

    CHECK_THROWS_AS(build_graph(peaks, 0.0), DataError);
    CHECK_THROWS_AS(build_graph(peaks, 1.0), DataError);
}

TEST_CASE("monotone edge growth and the clique property") {
    Rng rng(5, 0);
    RbmParameters p = RbmParameters::zeros(6, 10);
    for (Eigen::Index j = 0; j < 6; ++j)
        for (Eigen::Index i = 0; i < 10; ++i) p.weights(j, i) = 2.0 * rng.uniform01() - 1.0;
    const auto fields = receptive_fields(p);

    const SectorGraph g1 = build_graph(fields, 0.2);
    const SectorGraph g2 = build_graph(fields, 0.4);
    for (const auto& [edge, weight] : g1.edges) {
        REQUIRE(g2.edges.count(edge) == 1);
        CHECK(g2.edges.at(edge) >= weight);
    }

    // Every super-threshold set induces a complete subgraph.
    for (const auto& f : fields) {
        std::vector<int> above;
        for (Eigen::Index i = 0; i < 10; ++i)
            if (f.magnitudes[i] > 1.0 - 0.4) above.push_back(static_cast<int>(i));
        for (std::size_t a = 0; a < above.size(); ++a)
            for (std::size_t b = a + 1; b < above.size(); ++b)
                CHECK(g2.edges.count({above[a], above[b]}) == 1);
    }
}

TEST_CASE("detect_communities: two cliques, edgeless graph, empty graph") {
    SectorGraph g;
    g.n_vertices = 10;
    g.epsilon = 0.1;
    for (int a = 0; a < 5; ++a)
        for (int b = a + 1; b < 5; ++b) {
            g.edges[{a, b}] = 1;
            g.edges[{a + 5, b + 5}] = 1;
        }
    const Partition part = detect_communities(g);
    CHECK(part.n_blocks() == 2);
    for (int v = 0; v < 5; ++v) {
        CHECK(part.block_of[static_cast<std::size_t>(v)] == part.block_of[0]);
        CHECK(part.block_of[static_cast<std::size_t>(v + 5)] == part.block_of[5]);
    }
    CHECK(part.block_of[0] != part.block_of[5]);

    SectorGraph edgeless;
    edgeless.n_vertices = 4;
    const Partition singletons = detect_communities(edgeless);
    CHECK(singletons.n_blocks() == 4);

    SectorGraph empty;
    empty.n_vertices = 0;
    CHECK_THROWS_AS(detect_communities(empty), DataError);
}

TEST_CASE("greedy modularity is near the exhaustive optimum") {
    // Two triangles joined by one edge, n = 6 (plus weights), and a uniform
    // complete graph on 8 vertices.
    SectorGraph g;
    g.n_vertices = 6;
    g.edges[{0, 1}] = 2;
    g.edges[{0, 2}] = 1;
    g.edges[{1, 2}] = 3;
    g.edges[{3, 4}] = 1;
    g.edges[{3, 5}] = 2;
    g.edges[{4, 5}] = 1;
    g.edges[{2, 3}] = 1;

    double best_q = -1.0;
    enumerate_partitions(6, [&](const std::vector<int>& labels) {
        best_q = std::max(best_q, weighted_modularity(g, labels));
    });
    const Partition greedy = detect_communities(g);
    CHECK(greedy.modularity >= best_q - 0.02);

    SectorGraph complete;
    complete.n_vertices = 8;
    for (int a = 0; a < 8; ++a)
        for (int b = a + 1; b < 8; ++b) complete.edges[{a, b}] = 1;
    double best_q8 = -1.0;
    enumerate_partitions(8, [&](const std::vector<int>& labels) {
        best_q8 = std::max(best_q8, weighted_modularity(complete, labels));
    });
    const Partition greedy8 = detect_communities(complete);
    CHECK(greedy8.modularity >= best_q8 - 0.02);
}

TEST_CASE("detect_communities is deterministic") {
    Rng rng(6, 0);
    RbmParameters p = RbmParameters::zeros(8, 12);
    for (Eigen::Index j = 0; j < 8; ++j)
        for (Eigen::Index i = 0; i < 12; ++i) p.weights(j, i) = 2.0 * rng.uniform01() - 1.0;
    const auto fields = receptive_fields(p);
    const SectorGraph g = build_graph(fields, 0.3);
    const Partition a = detect_communities(g);
    const Partition b = detect_communities(g);
    CHECK(a.block_of == b.block_of);
    CHECK(a.modularity == b.modularity);
}

TEST_CASE("sweep_epsilon: single grid point, threading determinism") {
    Rng rng(7, 0);
    RbmParameters p = RbmParameters::zeros(6, 9);
    for (Eigen::Index j = 0; j < 6; ++j)
        for (Eigen::Index i = 0; i < 9; ++i) p.weights(j, i) = 2.0 * rng.uniform01() - 1.0;

    const auto single = sweep_epsilon(p, {0.25});
    CHECK(single.selected_epsilon == 0.25);
    CHECK(single.table.size() == 1);

    const auto grid = default_epsilon_grid();
    CHECK(grid.size() == 50);
    CHECK(grid.front() == doctest::Approx(0.01));
    CHECK(grid.back() == doctest::Approx(0.5));

    const auto s1 = sweep_epsilon(p, grid, 1);
    const auto s2 = sweep_epsilon(p, grid, 4);
    CHECK(s1.selected_epsilon == s2.selected_epsilon);
    CHECK(s1.selected_partition.block_of == s2.selected_partition.block_of);

    CHECK_THROWS_AS(sweep_epsilon(p, {}), DataError);
    CHECK_THROWS_AS(sweep_epsilon(p, {0.5, 0.2}), DataError);
}

TEST_CASE("adjusted rand index") {
    const std::vector<int> a = {0, 0, 1, 1, 2, 2};
    CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));

    const std::vector<int> relabeled = {2, 2, 0, 0, 1, 1};
    CHECK(adjusted_rand_index(a, relabeled) == doctest::Approx(1.0));

    // Large independent random labelings have ARI near zero.
    Rng rng(8, 0);
    std::vector<int> x(2000), y(2000);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = static_cast<int>(rng.uniform_below(4));
        y[i] = static_cast<int>(rng.uniform_below(4));
    }
    CHECK(std::abs(adjusted_rand_index(x, y)) < 0.02);
}

TEST_CASE("graph and partition exports") {
    SectorGraph g;
    g.n_vertices = 3;
    g.edges[{0, 1}] = 2;
    g.edges[{1, 2}] = 1;
    const auto dir = std::filesystem::temp_directory_path();
    const std::string epath = (dir / "crbm_edges.txt").string();
    write_edge_list(g, epath);
    std::ifstream in(epath);
    std::string line;
    std::getline(in, line);
    CHECK(line == "0 1 2");
    std::getline(in, line);
    CHECK(line == "1 2 1");
    std::filesystem::remove(epath);

    const Partition part = detect_communities(g);
    const std::string ppath = (dir / "crbm_partition.csv").string();
    write_partition_csv(part, {"a", "b", "c"}, ppath);
    std::ifstream pin(ppath);
    std::getline(pin, line);
    CHECK(line == "obligor,block");
    std::filesystem::remove(ppath);
}
