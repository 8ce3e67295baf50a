#ifndef CREDITRBM_TRAINING_HPP
#define CREDITRBM_TRAINING_HPP

#include "creditrbm/rbm.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace creditrbm {

enum class LrSchedule : std::uint8_t { Constant = 0, LinearDecayToZero = 1 };

struct TrainConfig {
    int hidden_units = 250;
    int gibbs_steps_k = 100;
    int epochs = 5000;
    double initial_learning_rate = 2e-3;
    LrSchedule schedule = LrSchedule::LinearDecayToZero;
    int minibatch_size = 250;
    std::uint64_t seed = 0;

    void validate(Eigen::Index dataset_rows) const;
};

// Plain-text key=value round trip.
void save_train_config(const TrainConfig& cfg, const std::string& path);
TrainConfig load_train_config(const std::string& path);

struct TrainReport {
    std::vector<double> reconstruction_errors; // one entry per epoch run
    double wall_seconds = 0.0;
    TrainConfig config;

    void write_csv(const std::string& path) const;
};

struct TrainResult {
    RbmParameters params;
    TrainReport report;
};

// Learning rate used in 1-based epoch t of T. Linear decay follows
// eta_t = eta0 * (1 - t/T) and is exactly zero in the final epoch.
double learning_rate(const TrainConfig& cfg, int epoch);

struct GradientTriple {
    Matrix d_weights;
    Vector d_visible_bias;
    Vector d_hidden_bias;
};

// Exact log-likelihood gradient (data expectation minus model expectation of
// the energy derivatives), enumeration-backed; n + m <= 24. Rows of `batch`
// are visible vectors; `weights` optionally reweights rows (normalized
// internally, defaults to uniform).
GradientTriple loglik_gradient_exact(const RbmParameters& p, const Matrix& batch,
                                     const std::optional<Vector>& weights = std::nullopt);

// Mean log p(v) over batch rows (same weighting convention); enumeration-backed.
double exact_log_likelihood(const RbmParameters& p, const Matrix& batch,
                            const std::optional<Vector>& weights = std::nullopt);

// Positive-phase statistics of a (possibly probability-valued) batch and
// negative-phase statistics of a set of fantasy-chain states. Both use mean
// hidden activations; train_pcd updates with pos - neg.
GradientTriple pcd_positive_stats(const RbmParameters& p, const Matrix& batch);
GradientTriple pcd_negative_stats(const RbmParameters& p, const Matrix& chain_visible);

// k-step Persistent Contrastive Divergence on probability-valued data
// (rows = observations). Fantasy chains (one per minibatch slot) start at the
// first rows of the data and persist across updates.
TrainResult train_pcd(const Matrix& data, const TrainConfig& cfg, int threads = 1);

// Mean squared L2 reconstruction error with deterministic mean-activation
// hidden step.
double reconstruction_error(const RbmParameters& p, const Matrix& batch);

// Unbiased squared maximum mean discrepancy with Gaussian kernel
// exp(-|x-y|^2 / (2 bandwidth^2)); rows are observations.
double mmd(const Matrix& sample_a, const Matrix& sample_b, double bandwidth);

// Median pairwise distance of the rows; the usual kernel bandwidth heuristic.
double median_heuristic_bandwidth(const Matrix& sample, int max_rows = 500);

struct CrossValidationCell {
    int hidden_units = 0;
    int fold = 0;
    double mmd_score = 0.0;
    double reconstruction = 0.0;
};

struct CrossValidationResult {
    int selected_hidden_units = 0;
    std::vector<CrossValidationCell> table;
};

// k-fold cross-validation over a grid of hidden-unit counts. Folds are
// contiguous in time; each held-out fold is scored by MMD between its rows
// and model-generated activation-probability samples, plus reconstruction
// error. Selection minimizes mean MMD, ties broken by smaller hidden count.
CrossValidationResult cross_validate(const Matrix& data, const std::vector<int>& hidden_grid,
                                     int folds, const TrainConfig& cfg_template,
                                     int threads = 1);

} // namespace creditrbm

#endif
