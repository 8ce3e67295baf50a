#ifndef CREDITRBM_RBM_HPP
#define CREDITRBM_RBM_HPP

#include "creditrbm/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace creditrbm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Whether visible vectors are hard 0/1 indicators or activation
// probabilities in [0,1] (the convention used for training panels).
enum class VisibleMode : std::uint8_t { Binary = 0, Probability = 1 };

// theta = (W, b, c). W is m x n: one row per hidden unit, one column per
// visible unit.
struct RbmParameters {
    Matrix weights;     // m x n
    Vector visible_bias; // n
    Vector hidden_bias;  // m

    Eigen::Index n_visible() const { return weights.cols(); }
    Eigen::Index n_hidden() const { return weights.rows(); }

    // Throws DataError on inconsistent dimensions or non-finite entries.
    void validate() const;

    static RbmParameters zeros(Eigen::Index n_hidden, Eigen::Index n_visible);
};

struct Configuration {
    Vector visible;
    Vector hidden;
    VisibleMode mode = VisibleMode::Binary;
};

// -(h^T W v) - b^T v - c^T h
double energy(const RbmParameters& p, const Vector& v, const Vector& h);

// P(V_i = 1 | H = h), elementwise sigmoid of W^T h + b. h must be binary.
Vector cond_visible(const RbmParameters& p, const Vector& h);

// P(H_j = 1 | V = v), elementwise sigmoid of W v + c. v may be in [0,1].
Vector cond_hidden(const RbmParameters& p, const Vector& v);

// Blocked Gibbs sampling: exactly `steps` alternations of (h | v, v | h),
// whole layers at a time. `init` empty means uniform random binary start.
Configuration gibbs_sample(const RbmParameters& p, int steps,
                           const std::optional<Vector>& init, Rng& rng);

// One alternation on a batch of chains held column-wise (visible n x C,
// hidden m x C). Chain c consumes draws only from rngs[c], so the result is
// independent of how chains are grouped into batches.
void gibbs_step_batch(const RbmParameters& p, Matrix& visible, Matrix& hidden,
                      std::vector<Rng>& rngs);

// `count` independent chains, each burned in for `burnin` alternations from
// a uniform random binary start; returns the final binary visible states,
// one column per chain. Chain i draws from rng.substream(i); `threads` only
// partitions work, never changes output.
Matrix sample_visible_batch(const RbmParameters& p, int count, int burnin,
                            const Rng& rng, int threads = 1);

// As above, but returns the visible activation probabilities sigmoid(W^T h + b)
// of the final hidden state instead of hard 0/1 draws. This is the generative
// analogue of a default-probability panel row.
Matrix sample_pd_batch(const RbmParameters& p, int count, int burnin,
                       const Rng& rng, int threads = 1);

// ---- Enumeration oracles (guarded at n + m <= 24) ----

inline constexpr int kEnumerationGuard = 24;

// log Z = log sum over all (v,h) of exp(-E), via the analytic sum over the
// smaller layer and streaming log-sum-exp over the larger.
double exact_partition(const RbmParameters& p);

// Probability table over {0,1}^n, indexed by bitmask (bit i = v_i).
std::vector<double> exact_visible_marginal(const RbmParameters& p);

// E[sum_i V_i] under the exact visible marginal.
double exact_mean_loss(const RbmParameters& p);

Vector bitmask_to_vector(std::uint32_t mask, Eigen::Index n);

// ---- Persistence ----
// Single self-describing binary file: magic, format version, visible-unit
// mode, dimensions, then W (row-major), b, c as 64-bit floats.

void save_model(const RbmParameters& p, VisibleMode mode, const std::string& path);

struct LoadedModel {
    RbmParameters params;
    VisibleMode mode;
};

LoadedModel load_model(const std::string& path);

} // namespace creditrbm

#endif
