#include "creditrbm/rbm.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

using namespace creditrbm;

namespace {

RbmParameters random_params(Eigen::Index m, Eigen::Index n, Rng& rng, double scale = 1.0) {
    RbmParameters p = RbmParameters::zeros(m, n);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < n; ++i) p.weights(j, i) = scale * (2.0 * rng.uniform01() - 1.0);
    for (Eigen::Index i = 0; i < n; ++i) p.visible_bias[i] = scale * (2.0 * rng.uniform01() - 1.0);
    for (Eigen::Index j = 0; j < m; ++j) p.hidden_bias[j] = scale * (2.0 * rng.uniform01() - 1.0);
    return p;
}

// Naive scalar-loop energy, kept independent of the Eigen expression path.
double energy_oracle(const RbmParameters& p, const Vector& v, const Vector& h) {
    double coupling = 0.0;
    for (Eigen::Index j = 0; j < p.n_hidden(); ++j)
        for (Eigen::Index i = 0; i < p.n_visible(); ++i) coupling += h[j] * p.weights(j, i) * v[i];
    double vis = 0.0;
    for (Eigen::Index i = 0; i < p.n_visible(); ++i) vis += p.visible_bias[i] * v[i];
    double hid = 0.0;
    for (Eigen::Index j = 0; j < p.n_hidden(); ++j) hid += p.hidden_bias[j] * h[j];
    return -coupling - vis - hid;
}

// Brute-force double loop over every (v,h) pair, all in the linear domain.
double naive_partition(const RbmParameters& p) {
    const auto n = p.n_visible();
    const auto m = p.n_hidden();
    double z = 0.0;
    for (std::uint32_t vm = 0; vm < (1u << n); ++vm) {
        const Vector v = bitmask_to_vector(vm, n);
        for (std::uint32_t hm = 0; hm < (1u << m); ++hm) {
            z += std::exp(-energy(p, v, bitmask_to_vector(hm, m)));
        }
    }
    return z;
}

std::vector<double> naive_marginal(const RbmParameters& p) {
    const auto n = p.n_visible();
    const auto m = p.n_hidden();
    const double z = naive_partition(p);
    std::vector<double> out(1u << n, 0.0);
    for (std::uint32_t vm = 0; vm < (1u << n); ++vm) {
        const Vector v = bitmask_to_vector(vm, n);
        double s = 0.0;
        for (std::uint32_t hm = 0; hm < (1u << m); ++hm) {
            s += std::exp(-energy(p, v, bitmask_to_vector(hm, m)));
        }
        out[vm] = s / z;
    }
    return out;
}

} // namespace

TEST_CASE("energy matches direct evaluations") {
    RbmParameters zero = RbmParameters::zeros(2, 3);
    Vector v(3), h(2);
    v << 1, 0, 1;
    h << 1, 1;
    CHECK(energy(zero, v, h) == 0.0);

    RbmParameters tiny = RbmParameters::zeros(1, 1);
    tiny.weights(0, 0) = 1.0;
    tiny.visible_bias[0] = 0.5;
    tiny.hidden_bias[0] = -0.25;
    Vector v1(1), h1(1);
    v1 << 1;
    h1 << 1;
    CHECK(energy(tiny, v1, h1) == doctest::Approx(-1.25).epsilon(1e-15));

    Rng rng(31, 0);
    RbmParameters p = random_params(3, 2, rng);
    for (std::uint32_t vm = 0; vm < 4; ++vm) {
        for (std::uint32_t hm = 0; hm < 8; ++hm) {
            const Vector vv = bitmask_to_vector(vm, 2);
            const Vector hh = bitmask_to_vector(hm, 3);
            CHECK(energy(p, vv, hh) == doctest::Approx(energy_oracle(p, vv, hh)).epsilon(1e-13));
        }
    }
}

TEST_CASE("energy reports the offending axis") {
    RbmParameters p = RbmParameters::zeros(2, 3);
    Vector bad_v(4), h(2);
    bad_v.setZero();
    h.setZero();
    CHECK_THROWS_WITH_AS(energy(p, bad_v, h), doctest::Contains("visible"), DataError);
    Vector v(3), bad_h(1);
    v.setZero();
    bad_h.setZero();
    CHECK_THROWS_WITH_AS(energy(p, v, bad_h), doctest::Contains("hidden"), DataError);
}

TEST_CASE("conditionals: closed forms and enumeration") {
    RbmParameters zero = RbmParameters::zeros(2, 3);
    Vector h(2);
    h << 1, 0;
    const Vector pv = cond_visible(zero, h);
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(pv[i] == doctest::Approx(0.5));

    RbmParameters p11 = RbmParameters::zeros(1, 1);
    p11.weights(0, 0) = 2.0;
    p11.visible_bias[0] = -1.0;
    Vector h1(1);
    h1 << 1;
    CHECK(cond_visible(p11, h1)[0] == doctest::Approx(stats::sigmoid(1.0)).epsilon(1e-12));
    CHECK(cond_visible(p11, h1)[0] == doctest::Approx(0.731059).epsilon(1e-5));

    RbmParameters pm = RbmParameters::zeros(1, 2);
    pm.weights(0, 0) = 1.0;
    pm.weights(0, 1) = -1.0;
    Vector v2(2);
    v2 << 1, 0;
    CHECK(cond_hidden(pm, v2)[0] == doctest::Approx(stats::sigmoid(1.0)).epsilon(1e-12));

    // P(V_i = 1 | H = h) against enumeration of the joint restricted to h.
    Rng rng(17, 0);
    RbmParameters p = random_params(2, 3, rng);
    for (std::uint32_t hm = 0; hm < 4; ++hm) {
        const Vector hh = bitmask_to_vector(hm, 2);
        const Vector cond = cond_visible(p, hh);
        double z_h = 0.0;
        Vector num = Vector::Zero(3);
        for (std::uint32_t vm = 0; vm < 8; ++vm) {
            const Vector vv = bitmask_to_vector(vm, 3);
            const double w = std::exp(-energy(p, vv, hh));
            z_h += w;
            num += w * vv;
        }
        for (Eigen::Index i = 0; i < 3; ++i) {
            CHECK(cond[i] == doctest::Approx(num[i] / z_h).epsilon(1e-10));
        }
    }
    // P(H_j = 1 | V = v) the same way.
    for (std::uint32_t vm = 0; vm < 8; ++vm) {
        const Vector vv = bitmask_to_vector(vm, 3);
        const Vector cond = cond_hidden(p, vv);
        double z_v = 0.0;
        Vector num = Vector::Zero(2);
        for (std::uint32_t hm = 0; hm < 4; ++hm) {
            const Vector hh = bitmask_to_vector(hm, 2);
            const double w = std::exp(-energy(p, vv, hh));
            z_v += w;
            num += w * hh;
        }
        for (Eigen::Index j = 0; j < 2; ++j) {
            CHECK(cond[j] == doctest::Approx(num[j] / z_v).epsilon(1e-10));
        }
    }
}

TEST_CASE("cond_visible rejects non-binary hidden values") {
    RbmParameters p = RbmParameters::zeros(2, 2);
    Vector h(2);
    h << 0.5, 1.0;
    CHECK_THROWS_AS(cond_visible(p, h), DataError);
}

TEST_CASE("exact_partition: closed forms and naive oracle") {
    RbmParameters zero = RbmParameters::zeros(3, 4);
    CHECK(exact_partition(zero) == doctest::Approx(7.0 * std::log(2.0)).epsilon(1e-12));

    const double beta = 0.73;
    RbmParameters pb = RbmParameters::zeros(1, 1);
    pb.visible_bias[0] = beta;
    CHECK(exact_partition(pb) ==
          doctest::Approx(std::log(2.0 * (1.0 + std::exp(beta)))).epsilon(1e-12));

    Rng rng(99, 0);
    for (int trial = 0; trial < 5; ++trial) {
        RbmParameters p = random_params(4, 4, rng);
        const double log_z = exact_partition(p);
        CHECK(log_z == doctest::Approx(std::log(naive_partition(p))).epsilon(1e-12));
    }
}

TEST_CASE("exact_partition guard") {
    RbmParameters big = RbmParameters::zeros(13, 12);
    CHECK_THROWS_WITH_AS(exact_partition(big), doctest::Contains("too large"), DataError);
}

TEST_CASE("exact_visible_marginal: uniform, factorized, brute force") {
    RbmParameters zero = RbmParameters::zeros(2, 3);
    const auto marg = exact_visible_marginal(zero);
    for (double q : marg) CHECK(q == doctest::Approx(1.0 / 8.0).epsilon(1e-12));

    // W = 0: marginal factorizes into sigmoid(b_i) Bernoullis.
    RbmParameters indep = RbmParameters::zeros(2, 2);
    indep.visible_bias << 0.3, -1.1;
    const auto m2 = exact_visible_marginal(indep);
    for (std::uint32_t mask = 0; mask < 4; ++mask) {
        double expect = 1.0;
        for (int i = 0; i < 2; ++i) {
            const double pi = stats::sigmoid(indep.visible_bias[i]);
            expect *= ((mask >> i) & 1u) ? pi : 1.0 - pi;
        }
        CHECK(m2[mask] == doctest::Approx(expect).epsilon(1e-12));
    }

    Rng rng(5, 0);
    RbmParameters p = random_params(3, 3, rng);
    const auto got = exact_visible_marginal(p);
    const auto want = naive_marginal(p);
    for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-11));
    }
    CHECK(std::accumulate(got.begin(), got.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("visible-index permutation permutes the marginal") {
    Rng rng(21, 0);
    RbmParameters p = random_params(3, 4, rng);
    // Swap visible units 1 and 3 together with weight columns and biases.
    RbmParameters q = p;
    q.weights.col(1).swap(q.weights.col(3));
    std::swap(q.visible_bias[1], q.visible_bias[3]);

    const auto mp = exact_visible_marginal(p);
    const auto mq = exact_visible_marginal(q);
    for (std::uint32_t mask = 0; mask < 16; ++mask) {
        std::uint32_t swapped = mask & ~0b1010u;
        if (mask & 0b0010u) swapped |= 0b1000u;
        if (mask & 0b1000u) swapped |= 0b0010u;
        CHECK(mq[swapped] == doctest::Approx(mp[mask]).epsilon(1e-12));
    }
}

TEST_CASE("bayes consistency of the marginal with cond_visible") {
    Rng rng(77, 0);
    RbmParameters p = random_params(2, 3, rng);
    const double log_z = exact_partition(p);
    for (std::uint32_t hm = 0; hm < 4; ++hm) {
        const Vector h = bitmask_to_vector(hm, 2);
        const Vector cv = cond_visible(p, h);
        // P(v | h) from the joint exp(-E)/Z divided by P(h).
        double ph = 0.0;
        for (std::uint32_t vm = 0; vm < 8; ++vm) {
            ph += std::exp(-energy(p, bitmask_to_vector(vm, 3), h) - log_z);
        }
        for (std::uint32_t vm = 0; vm < 8; ++vm) {
            const Vector v = bitmask_to_vector(vm, 3);
            const double joint = std::exp(-energy(p, v, h) - log_z);
            double prod = 1.0;
            for (Eigen::Index i = 0; i < 3; ++i) prod *= v[i] == 1.0 ? cv[i] : 1.0 - cv[i];
            CHECK(joint / ph == doctest::Approx(prod).epsilon(1e-10));
        }
    }
}

TEST_CASE("one blocked-Gibbs transition preserves the exact joint") {
    Rng rng(13, 0);
    const Eigen::Index n = 3, m = 2;
    RbmParameters p = random_params(m, n, rng);
    const double log_z = exact_partition(p);

    const std::uint32_t nv = 1u << n, nh = 1u << m;
    // pi(v,h) and the transition T((v,h) -> (v',h')) = P(h'|v) P(v'|h').
    std::vector<double> pi(nv * nh), next(nv * nh, 0.0);
    for (std::uint32_t vm = 0; vm < nv; ++vm)
        for (std::uint32_t hm = 0; hm < nh; ++hm)
            pi[vm * nh + hm] =
                std::exp(-energy(p, bitmask_to_vector(vm, n), bitmask_to_vector(hm, m)) - log_z);

    for (std::uint32_t vm = 0; vm < nv; ++vm) {
        const Vector ph = cond_hidden(p, bitmask_to_vector(vm, n));
        double mass = 0.0;
        for (std::uint32_t hm = 0; hm < nh; ++hm) mass += pi[vm * nh + hm];
        for (std::uint32_t hm2 = 0; hm2 < nh; ++hm2) {
            const Vector h2 = bitmask_to_vector(hm2, m);
            double p_h2 = 1.0;
            for (Eigen::Index j = 0; j < m; ++j) p_h2 *= h2[j] == 1.0 ? ph[j] : 1.0 - ph[j];
            const Vector pv = cond_visible(p, h2);
            for (std::uint32_t vm2 = 0; vm2 < nv; ++vm2) {
                const Vector v2 = bitmask_to_vector(vm2, n);
                double p_v2 = 1.0;
                for (Eigen::Index i = 0; i < n; ++i) p_v2 *= v2[i] == 1.0 ? pv[i] : 1.0 - pv[i];
                next[vm2 * nh + hm2] += mass * p_h2 * p_v2;
            }
        }
    }
    double tv = 0.0;
    for (std::size_t k = 0; k < pi.size(); ++k) tv += std::abs(next[k] - pi[k]);
    CHECK(tv / 2.0 <= 1e-10);
}

TEST_CASE("gibbs_sample: fair coins under zero parameters") {
    RbmParameters zero = RbmParameters::zeros(2, 3);
    Rng rng(1234, 0);
    const int draws = 100000;
    Vector sums = Vector::Zero(3);
    for (int k = 0; k < draws; ++k) {
        const Configuration c = gibbs_sample(zero, 1, std::nullopt, rng);
        sums += c.visible;
    }
    const double sigma = std::sqrt(0.25 / draws);
    for (Eigen::Index i = 0; i < 3; ++i) {
        CHECK(std::abs(sums[i] / draws - 0.5) < 4.0 * sigma);
    }
}

TEST_CASE("gibbs_sample determinism") {
    Rng rng(55, 2);
    RbmParameters p = random_params(3, 4, rng, 0.8);
    Rng r1(9, 9), r2(9, 9);
    for (int k = 0; k < 50; ++k) {
        const Configuration a = gibbs_sample(p, 3, std::nullopt, r1);
        const Configuration b = gibbs_sample(p, 3, std::nullopt, r2);
        CHECK(a.visible == b.visible);
        CHECK(a.hidden == b.hidden);
    }
}

TEST_CASE("long-run gibbs frequencies match the exact marginal") {
    Rng prng(8, 0);
    RbmParameters p = random_params(3, 4, prng, 0.6); // n+m = 7
    const auto marg = exact_visible_marginal(p);

    Rng rng(31415, 0);
    Configuration c = gibbs_sample(p, 1000, std::nullopt, rng); // burn-in
    const int kept = 100000;
    std::vector<double> counts(marg.size(), 0.0);
    for (int k = 0; k < kept; ++k) {
        c = gibbs_sample(p, 1, c.visible, rng);
        std::uint32_t mask = 0;
        for (Eigen::Index i = 0; i < 4; ++i) mask |= (c.visible[i] == 1.0 ? 1u : 0u) << i;
        counts[mask] += 1.0;
    }
    double stat = 0.0;
    for (std::size_t s = 0; s < marg.size(); ++s) {
        const double expect = marg[s] * kept;
        stat += (counts[s] - expect) * (counts[s] - expect) / expect;
    }
    const double pvalue = stats::chi_squared_sf(static_cast<double>(marg.size() - 1), stat);
    CHECK(pvalue > 0.001);
}

TEST_CASE("batched sampling equals independent single chains") {
    Rng prng(3, 0);
    RbmParameters p = random_params(2, 3, prng, 0.7);
    Rng base(777, 4);
    const Matrix batch = sample_visible_batch(p, 6, 5, base, 1);
    const Matrix batch4 = sample_visible_batch(p, 6, 5, base, 4);
    CHECK(batch == batch4);

    for (int c = 0; c < 6; ++c) {
        Rng chain = base.substream(static_cast<std::uint64_t>(c));
        const Configuration single = gibbs_sample(p, 5, std::nullopt, chain);
        CHECK(Vector(batch.col(c)) == single.visible);
    }
}

TEST_CASE("model round trip is byte-stable") {
    Rng rng(61, 0);
    RbmParameters p = random_params(5, 7, rng);
    const std::string path = (std::filesystem::temp_directory_path() / "crbm_model_test.bin").string();
    save_model(p, VisibleMode::Probability, path);
    const LoadedModel back = load_model(path);
    CHECK(back.mode == VisibleMode::Probability);
    CHECK(back.params.weights == p.weights);
    CHECK(back.params.visible_bias == p.visible_bias);
    CHECK(back.params.hidden_bias == p.hidden_bias);

    // Saving the loaded model reproduces the file bit for bit.
    const std::string path2 = path + ".2";
    save_model(back.params, back.mode, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}
