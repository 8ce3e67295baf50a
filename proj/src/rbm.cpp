#include "creditrbm/rbm.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"
#include "creditrbm/threading.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace creditrbm {

namespace {

void require_visible_len(const RbmParameters& p, const Vector& v, const char* op) {
    if (v.size() != p.n_visible()) {
        throw DataError(std::string(op) + ": visible vector length " +
                        std::to_string(v.size()) + " does not match n=" +
                        std::to_string(p.n_visible()));
    }
}

void require_hidden_len(const RbmParameters& p, const Vector& h, const char* op) {
    if (h.size() != p.n_hidden()) {
        throw DataError(std::string(op) + ": hidden vector length " +
                        std::to_string(h.size()) + " does not match m=" +
                        std::to_string(p.n_hidden()));
    }
}

void require_binary(const Vector& x, const char* op) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x[i] != 0.0 && x[i] != 1.0) {
            throw DataError(std::string(op) + ": entry " + std::to_string(i) +
                            " is not binary");
        }
    }
}

// Streaming log-sum-exp accumulator.
class LogSumExp {
public:
    void add(double x) {
        if (x <= max_) {
            sum_ += std::exp(x - max_);
        } else {
            sum_ = sum_ * std::exp(max_ - x) + 1.0;
            max_ = x;
        }
    }
    double value() const {
        return max_ + std::log(sum_);
    }

private:
    double max_ = -std::numeric_limits<double>::infinity();
    double sum_ = 0.0;
};

void require_enumerable(const RbmParameters& p, const char* op) {
    if (p.n_visible() + p.n_hidden() > kEnumerationGuard) {
        throw DataError(std::string(op) + ": oracle too large, n+m=" +
                        std::to_string(p.n_visible() + p.n_hidden()) + " exceeds " +
                        std::to_string(kEnumerationGuard));
    }
}

// log of the unnormalized visible marginal: b^T v + sum_j log(1+exp((Wv+c)_j)).
double log_unnorm_visible(const RbmParameters& p, const Vector& v) {
    const Vector act = p.weights * v + p.hidden_bias;
    double s = p.visible_bias.dot(v);
    for (Eigen::Index j = 0; j < act.size(); ++j) s += stats::log1pexp(act[j]);
    return s;
}

} // namespace

void RbmParameters::validate() const {
    CRBM_REQUIRE(weights.rows() >= 1, "RbmParameters: need m >= 1 hidden units");
    CRBM_REQUIRE(weights.cols() >= 1, "RbmParameters: need n >= 1 visible units");
    if (visible_bias.size() != weights.cols()) {
        throw DataError("RbmParameters: visible_bias length " +
                        std::to_string(visible_bias.size()) +
                        " does not match weight columns n=" + std::to_string(weights.cols()));
    }
    if (hidden_bias.size() != weights.rows()) {
        throw DataError("RbmParameters: hidden_bias length " +
                        std::to_string(hidden_bias.size()) +
                        " does not match weight rows m=" + std::to_string(weights.rows()));
    }
    CRBM_REQUIRE(weights.allFinite() && visible_bias.allFinite() && hidden_bias.allFinite(),
                 "RbmParameters: non-finite entry");
}

RbmParameters RbmParameters::zeros(Eigen::Index m, Eigen::Index n) {
    return RbmParameters{Matrix::Zero(m, n), Vector::Zero(n), Vector::Zero(m)};
}

double energy(const RbmParameters& p, const Vector& v, const Vector& h) {
    require_visible_len(p, v, "energy");
    require_hidden_len(p, h, "energy");
    return -h.dot(p.weights * v) - p.visible_bias.dot(v) - p.hidden_bias.dot(h);
}

Vector cond_visible(const RbmParameters& p, const Vector& h) {
    require_hidden_len(p, h, "cond_visible");
    require_binary(h, "cond_visible");
    Vector act = p.weights.transpose() * h + p.visible_bias;
    for (Eigen::Index i = 0; i < act.size(); ++i) act[i] = stats::sigmoid(act[i]);
    return act;
}

Vector cond_hidden(const RbmParameters& p, const Vector& v) {
    require_visible_len(p, v, "cond_hidden");
    Vector act = p.weights * v + p.hidden_bias;
    for (Eigen::Index j = 0; j < act.size(); ++j) act[j] = stats::sigmoid(act[j]);
    return act;
}

Configuration gibbs_sample(const RbmParameters& p, int steps,
                           const std::optional<Vector>& init, Rng& rng) {
    CRBM_REQUIRE(steps >= 1, "gibbs_sample: steps must be >= 1");
    p.validate();
    const Eigen::Index n = p.n_visible();
    const Eigen::Index m = p.n_hidden();

    Vector v(n);
    if (init) {
        require_visible_len(p, *init, "gibbs_sample");
        v = *init;
    } else {
        for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }

    Vector h(m);
    for (int s = 0; s < steps; ++s) {
        Vector hp = cond_hidden(p, v);
        for (Eigen::Index j = 0; j < m; ++j) h[j] = rng.bernoulli(hp[j]) ? 1.0 : 0.0;
        Vector vp = cond_visible(p, h);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.bernoulli(vp[i]) ? 1.0 : 0.0;
    }
    return Configuration{v, h, VisibleMode::Binary};
}

void gibbs_step_batch(const RbmParameters& p, Matrix& visible, Matrix& hidden,
                      std::vector<Rng>& rngs) {
    const Eigen::Index chains = visible.cols();
    CRBM_REQUIRE(hidden.cols() == chains && static_cast<Eigen::Index>(rngs.size()) == chains,
                 "gibbs_step_batch: chain count mismatch");
    Matrix act = (p.weights * visible).colwise() + p.hidden_bias;
    for (Eigen::Index c = 0; c < chains; ++c) {
        for (Eigen::Index j = 0; j < act.rows(); ++j) {
            hidden(j, c) = rngs[c].bernoulli(stats::sigmoid(act(j, c))) ? 1.0 : 0.0;
        }
    }
    act = (p.weights.transpose() * hidden).colwise() + p.visible_bias;
    for (Eigen::Index c = 0; c < chains; ++c) {
        for (Eigen::Index i = 0; i < act.rows(); ++i) {
            visible(i, c) = rngs[c].bernoulli(stats::sigmoid(act(i, c))) ? 1.0 : 0.0;
        }
    }
}

namespace {

// Shared driver for the batched independent-restart samplers. emit() receives
// the final (v, h) states of one block of chains.
template <typename Emit>
void run_restart_chains(const RbmParameters& p, int count, int burnin, const Rng& rng,
                        int threads, Emit emit) {
    CRBM_REQUIRE(count >= 1, "sample batch: count must be >= 1");
    CRBM_REQUIRE(burnin >= 1, "sample batch: burnin must be >= 1");
    p.validate();
    const Eigen::Index n = p.n_visible();
    const Eigen::Index m = p.n_hidden();

    constexpr int kBlock = 512;
    const int blocks = (count + kBlock - 1) / kBlock;
    parallel_for(blocks, threads, [&](int blk) {
        const int lo = blk * kBlock;
        const int hi = std::min(count, lo + kBlock);
        const int width = hi - lo;
        std::vector<Rng> rngs;
        rngs.reserve(width);
        for (int c = lo; c < hi; ++c) rngs.push_back(rng.substream(static_cast<std::uint64_t>(c)));

        Matrix v(n, width), h(m, width);
        for (int c = 0; c < width; ++c) {
            for (Eigen::Index i = 0; i < n; ++i) {
                v(i, c) = rngs[c].bernoulli(0.5) ? 1.0 : 0.0;
            }
        }
        for (int s = 0; s < burnin; ++s) gibbs_step_batch(p, v, h, rngs);
        emit(lo, width, v, h);
    });
}

} // namespace

Matrix sample_visible_batch(const RbmParameters& p, int count, int burnin,
                            const Rng& rng, int threads) {
    Matrix out(p.n_visible(), count);
    run_restart_chains(p, count, burnin, rng, threads,
                       [&](int lo, int width, const Matrix& v, const Matrix&) {
                           out.middleCols(lo, width) = v;
                       });
    return out;
}

Matrix sample_pd_batch(const RbmParameters& p, int count, int burnin,
                       const Rng& rng, int threads) {
    Matrix out(p.n_visible(), count);
    run_restart_chains(p, count, burnin, rng, threads,
                       [&](int lo, int width, const Matrix&, const Matrix& h) {
                           Matrix act = (p.weights.transpose() * h).colwise() + p.visible_bias;
                           for (Eigen::Index c = 0; c < act.cols(); ++c)
                               for (Eigen::Index i = 0; i < act.rows(); ++i)
                                   act(i, c) = stats::sigmoid(act(i, c));
                           out.middleCols(lo, width) = act;
                       });
    return out;
}

double exact_partition(const RbmParameters& p) {
    p.validate();
    require_enumerable(p, "exact_partition");
    const Eigen::Index n = p.n_visible();
    const Eigen::Index m = p.n_hidden();

    LogSumExp acc;
    if (n <= m) {
        // Sum over visible configurations; hidden layer integrates analytically.
        const std::uint32_t states = 1u << n;
        for (std::uint32_t mask = 0; mask < states; ++mask) {
            acc.add(log_unnorm_visible(p, bitmask_to_vector(mask, n)));
        }
    } else {
        const std::uint32_t states = 1u << m;
        for (std::uint32_t mask = 0; mask < states; ++mask) {
            const Vector h = bitmask_to_vector(mask, m);
            const Vector act = p.weights.transpose() * h + p.visible_bias;
            double s = p.hidden_bias.dot(h);
            for (Eigen::Index i = 0; i < act.size(); ++i) s += stats::log1pexp(act[i]);
            acc.add(s);
        }
    }
    return acc.value();
}

std::vector<double> exact_visible_marginal(const RbmParameters& p) {
    p.validate();
    require_enumerable(p, "exact_visible_marginal");
    const Eigen::Index n = p.n_visible();
    const std::uint32_t states = 1u << n;

    std::vector<double> logp(states);
    LogSumExp acc;
    for (std::uint32_t mask = 0; mask < states; ++mask) {
        logp[mask] = log_unnorm_visible(p, bitmask_to_vector(mask, n));
        acc.add(logp[mask]);
    }
    const double log_z = acc.value();
    std::vector<double> prob(states);
    for (std::uint32_t mask = 0; mask < states; ++mask) prob[mask] = std::exp(logp[mask] - log_z);
    return prob;
}

double exact_mean_loss(const RbmParameters& p) {
    const std::vector<double> marg = exact_visible_marginal(p);
    double mean = 0.0;
    for (std::uint32_t mask = 0; mask < marg.size(); ++mask) {
        mean += marg[mask] * static_cast<double>(std::popcount(mask));
    }
    return mean;
}

Vector bitmask_to_vector(std::uint32_t mask, Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = (mask >> i) & 1u ? 1.0 : 0.0;
    return v;
}

namespace {
constexpr char kMagic[8] = {'C', 'R', 'B', 'M', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kFormatVersion = 1;
} // namespace

void save_model(const RbmParameters& p, VisibleMode mode, const std::string& path) {
    p.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    CRBM_REQUIRE(out.good(), "save_model: cannot open " + path);

    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kFormatVersion), sizeof(kFormatVersion));
    const std::uint8_t mode_byte = static_cast<std::uint8_t>(mode);
    out.write(reinterpret_cast<const char*>(&mode_byte), sizeof(mode_byte));
    const std::uint64_t n = static_cast<std::uint64_t>(p.n_visible());
    const std::uint64_t m = static_cast<std::uint64_t>(p.n_hidden());
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&m), sizeof(m));

    // Row-major weight dump; Eigen stores column-major internally.
    for (Eigen::Index j = 0; j < p.weights.rows(); ++j) {
        for (Eigen::Index i = 0; i < p.weights.cols(); ++i) {
            const double w = p.weights(j, i);
            out.write(reinterpret_cast<const char*>(&w), sizeof(w));
        }
    }
    out.write(reinterpret_cast<const char*>(p.visible_bias.data()),
              static_cast<std::streamsize>(sizeof(double) * n));
    out.write(reinterpret_cast<const char*>(p.hidden_bias.data()),
              static_cast<std::streamsize>(sizeof(double) * m));
    CRBM_REQUIRE(out.good(), "save_model: write failed for " + path);
}

LoadedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    CRBM_REQUIRE(in.good(), "load_model: cannot open " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    CRBM_REQUIRE(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
                 "load_model: " + path + " is not a model file");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    CRBM_REQUIRE(version == kFormatVersion,
                 "load_model: unsupported format version " + std::to_string(version));
    std::uint8_t mode_byte = 0;
    in.read(reinterpret_cast<char*>(&mode_byte), sizeof(mode_byte));
    CRBM_REQUIRE(mode_byte <= 1, "load_model: bad visible-mode flag");
    std::uint64_t n = 0, m = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&m), sizeof(m));
    CRBM_REQUIRE(in.good() && n >= 1 && m >= 1 && n <= (1u << 24) && m <= (1u << 24),
                 "load_model: bad dimensions");

    RbmParameters p;
    p.weights.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::uint64_t j = 0; j < m; ++j) {
        for (std::uint64_t i = 0; i < n; ++i) {
            double w;
            in.read(reinterpret_cast<char*>(&w), sizeof(w));
            p.weights(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = w;
        }
    }
    p.visible_bias.resize(static_cast<Eigen::Index>(n));
    in.read(reinterpret_cast<char*>(p.visible_bias.data()),
            static_cast<std::streamsize>(sizeof(double) * n));
    p.hidden_bias.resize(static_cast<Eigen::Index>(m));
    in.read(reinterpret_cast<char*>(p.hidden_bias.data()),
            static_cast<std::streamsize>(sizeof(double) * m));
    CRBM_REQUIRE(in.good(), "load_model: truncated file " + path);
    p.validate();
    return LoadedModel{std::move(p), static_cast<VisibleMode>(mode_byte)};
}

} // namespace creditrbm
