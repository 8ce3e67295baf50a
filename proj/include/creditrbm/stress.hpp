#ifndef CREDITRBM_STRESS_HPP
#define CREDITRBM_STRESS_HPP

#include "creditrbm/importance.hpp"
#include "creditrbm/panel.hpp"
#include "creditrbm/rbm.hpp"
#include "creditrbm/tail.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace creditrbm {

// Min-max scaler for one macro column. Degenerate (constant) columns map
// everything to 0.5 and invert to the constant.
struct ColumnScaler {
    double min = 0.0;
    double max = 1.0;
    bool degenerate = false;

    double scale(double x) const;
    double unscale(double y) const;
};

// Obligor PD columns concatenated with min-max scaled macro columns; the
// visible layer of a stress-testing RBM.
struct JointPanel {
    std::vector<std::string> dates;
    std::vector<std::string> obligor_ids;
    std::vector<std::string> macro_names;
    Matrix values; // rows = dates; columns = obligors then macros, in [0,1]
    std::vector<ColumnScaler> macro_scalers;

    Eigen::Index n_obligors() const { return static_cast<Eigen::Index>(obligor_ids.size()); }
    Eigen::Index n_macros() const { return static_cast<Eigen::Index>(macro_names.size()); }
    void validate() const;
};

// Everything the stress CLI needs to interpret a trained joint model.
struct JointMeta {
    std::vector<std::string> obligor_ids;
    std::vector<std::string> macro_names;
    std::vector<ColumnScaler> macro_scalers;

    void save(const std::string& path) const;
    static JointMeta load(const std::string& path);
    static JointMeta from_panel(const JointPanel& panel);
};

// Raw macro time series in original units, possibly at a coarser frequency.
struct MacroSeries {
    std::vector<std::string> names;
    std::vector<std::string> dates;
    Matrix values;

    void validate() const;
};

MacroSeries load_macro_series(const std::string& path);
void save_macro_series(const MacroSeries& series, const std::string& path);

struct AlignmentReport {
    int rows_dropped = 0;  // panel dates before the first macro observation
    int forward_fills = 0; // macro values reused from an earlier date
};

// Aligns macro observations to panel dates by forward fill, scales macros
// into [0,1], and labels column roles.
JointPanel assemble_joint(const PortfolioPanel& panel, const MacroSeries& macro,
                          AlignmentReport* report = nullptr);

// Named macro scenario in original units plus its normalized image.
struct Scenario {
    std::string name;
    std::vector<std::string> variables;
    Vector original;
    Vector normalized;
    std::vector<bool> clipped;
};

// Plain-text "variable = value" lines; values stay in original units until
// normalize_scenario maps them through the panel scalers.
Scenario load_scenario(const std::string& path);
Scenario normalize_scenario(const Scenario& raw, const JointMeta& meta);

// Visible-unit clamp map (index -> value in [0,1]) for a normalized scenario.
std::map<Eigen::Index, double> scenario_clamp_map(const Scenario& scenario,
                                                  const JointMeta& meta);

// The conditional model given clamped visible units is itself an RBM over
// the free units: hidden biases absorb W_clamped * values.
RbmParameters conditioned_rbm(const RbmParameters& p,
                              const std::map<Eigen::Index, double>& clamp);

// Blocked Gibbs with clamped visible coordinates reset to their values after
// every visible update. Returns M samples of the unclamped coordinates
// (rows = unclamped visible indices in ascending order, columns = samples).
// Default: one chain, `steps` burn-in alternations, consecutive samples.
// With independent_restarts, M chains each burn `steps` and yield one sample.
Matrix conditional_gibbs(const RbmParameters& p, const std::map<Eigen::Index, double>& clamp,
                         int steps, int M, const Rng& rng,
                         bool independent_restarts = false, int threads = 1);

// Indices of unclamped obligor coordinates (clamp keys removed from
// 0..n_obligors-1).
std::vector<Eigen::Index> unclamped_obligors(Eigen::Index n_obligors,
                                             const std::map<Eigen::Index, double>& clamp);

// Conditional loss tail under a clamp: losses are counted over unclamped
// obligor coordinates, relative to their number.
TailCurve stressed_tail(const RbmParameters& p, const std::map<Eigen::Index, double>& clamp,
                        Eigen::Index n_obligors, const std::vector<double>& thresholds,
                        int steps, int M, const Rng& rng, const std::string& label = "",
                        bool independent_restarts = false, int threads = 1);

struct StressedVarRow {
    double alpha = 0.0;
    VarEstimate var;
    EstimatorTag method = EstimatorTag::PlainMc;
};

// VaR per confidence level from the stressed curve. Levels beyond the plain
// Monte Carlo resolution are routed through importance sampling on the
// conditioned model, tilting only the obligor biases.
std::vector<StressedVarRow> stressed_var(const RbmParameters& p,
                                         const std::map<Eigen::Index, double>& clamp,
                                         Eigen::Index n_obligors,
                                         const std::vector<double>& alpha_grid, int steps,
                                         int M, const Rng& rng, int threads = 1);

struct Histogram {
    std::vector<double> edges; // size bins + 1
    std::vector<int> counts;   // size bins
};

Histogram histogram_counts(const std::vector<double>& values, int bins, double lo, double hi);

} // namespace creditrbm

#endif
