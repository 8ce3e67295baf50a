#include "creditrbm/stress.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"
#include "creditrbm/threading.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace creditrbm {

double ColumnScaler::scale(double x) const {
    if (degenerate) return 0.5;
    return (x - min) / (max - min);
}

double ColumnScaler::unscale(double y) const {
    if (degenerate) return min;
    return min + y * (max - min);
}

void JointPanel::validate() const {
    CRBM_REQUIRE(values.cols() == n_obligors() + n_macros(),
                 "JointPanel: column roles do not cover the matrix");
    CRBM_REQUIRE(values.rows() == static_cast<Eigen::Index>(dates.size()),
                 "JointPanel: date count mismatch");
    CRBM_REQUIRE(macro_scalers.size() == macro_names.size(),
                 "JointPanel: one scaler per macro column required");
    CRBM_REQUIRE(values.minCoeff() >= 0.0 && values.maxCoeff() <= 1.0,
                 "JointPanel: entries must lie in [0,1]");
}

namespace {

nlohmann::json scaler_to_json(const ColumnScaler& s) {
    return nlohmann::json{{"min", s.min}, {"max", s.max}, {"degenerate", s.degenerate}};
}

ColumnScaler scaler_from_json(const nlohmann::json& j) {
    ColumnScaler s;
    s.min = j.at("min").get<double>();
    s.max = j.at("max").get<double>();
    s.degenerate = j.at("degenerate").get<bool>();
    return s;
}

} // namespace

void JointMeta::save(const std::string& path) const {
    nlohmann::json j;
    j["obligor_ids"] = obligor_ids;
    j["macro_names"] = macro_names;
    j["macro_scalers"] = nlohmann::json::array();
    for (const auto& s : macro_scalers) j["macro_scalers"].push_back(scaler_to_json(s));
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "JointMeta: cannot open " + path);
    out << j.dump(2) << "\n";
}

JointMeta JointMeta::load(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "JointMeta: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
        JointMeta meta;
        meta.obligor_ids = j.at("obligor_ids").get<std::vector<std::string>>();
        meta.macro_names = j.at("macro_names").get<std::vector<std::string>>();
        for (const auto& s : j.at("macro_scalers")) {
            meta.macro_scalers.push_back(scaler_from_json(s));
        }
        CRBM_REQUIRE(meta.macro_scalers.size() == meta.macro_names.size(),
                     "JointMeta: scaler count mismatch in " + path);
        return meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("JointMeta: malformed " + path + ": " + e.what());
    }
}

JointMeta JointMeta::from_panel(const JointPanel& panel) {
    return JointMeta{panel.obligor_ids, panel.macro_names, panel.macro_scalers};
}

void MacroSeries::validate() const {
    CRBM_REQUIRE(values.cols() == static_cast<Eigen::Index>(names.size()),
                 "MacroSeries: name count mismatch");
    CRBM_REQUIRE(values.rows() == static_cast<Eigen::Index>(dates.size()),
                 "MacroSeries: date count mismatch");
    CRBM_REQUIRE(values.rows() >= 1 && values.cols() >= 1, "MacroSeries: empty series");
    for (std::size_t i = 1; i < dates.size(); ++i) {
        CRBM_REQUIRE(date_less(dates[i - 1], dates[i]),
                     "MacroSeries: dates not strictly increasing at row " + std::to_string(i + 1));
    }
    CRBM_REQUIRE(values.allFinite(), "MacroSeries: non-finite entry");
}

MacroSeries load_macro_series(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "load_macro_series: cannot open " + path);
    std::string line;
    CRBM_REQUIRE(static_cast<bool>(std::getline(in, line)),
                 "load_macro_series: empty file " + path);

    auto cells_of = [](const std::string& l) {
        std::vector<std::string> cells;
        std::stringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            cells.push_back(cell);
        }
        return cells;
    };

    const auto header = cells_of(line);
    CRBM_REQUIRE(header.size() >= 2 && header[0] == "date",
                 "load_macro_series: line 1: header must be 'date,<name>,...'");
    MacroSeries series;
    series.names.assign(header.begin() + 1, header.end());

    std::vector<double> values;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = cells_of(line);
        CRBM_REQUIRE(cells.size() == header.size(),
                     "load_macro_series: line " + std::to_string(lineno) + ": ragged row");
        series.dates.push_back(cells[0]);
        for (std::size_t c = 1; c < cells.size(); ++c) {
            try {
                values.push_back(std::stod(cells[c]));
            } catch (const std::exception&) {
                throw DataError("load_macro_series: line " + std::to_string(lineno) +
                                ": non-numeric cell '" + cells[c] + "'");
            }
        }
    }
    series.values.resize(static_cast<Eigen::Index>(series.dates.size()),
                         static_cast<Eigen::Index>(series.names.size()));
    for (Eigen::Index r = 0; r < series.values.rows(); ++r)
        for (Eigen::Index c = 0; c < series.values.cols(); ++c)
            series.values(r, c) =
                values[static_cast<std::size_t>(r) * series.names.size() +
                       static_cast<std::size_t>(c)];
    series.validate();
    return series;
}

void save_macro_series(const MacroSeries& series, const std::string& path) {
    series.validate();
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "save_macro_series: cannot open " + path);
    out << "date";
    for (const auto& n : series.names) out << ',' << n;
    out << "\n" << std::setprecision(17);
    for (Eigen::Index r = 0; r < series.values.rows(); ++r) {
        out << series.dates[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < series.values.cols(); ++c) out << ',' << series.values(r, c);
        out << "\n";
    }
}

JointPanel assemble_joint(const PortfolioPanel& panel, const MacroSeries& macro,
                          AlignmentReport* report) {
    panel.validate();
    macro.validate();

    AlignmentReport rep;
    const Eigen::Index k = macro.values.cols();

    // Forward-fill macro rows onto panel dates; panel dates before the first
    // macro observation cannot be filled and are dropped.
    std::vector<Eigen::Index> keep_rows;
    std::vector<Eigen::Index> macro_row;
    for (Eigen::Index r = 0; r < panel.n_dates(); ++r) {
        const std::string& d = panel.dates[static_cast<std::size_t>(r)];
        // Last macro date <= d.
        Eigen::Index best = -1;
        for (Eigen::Index mr = 0; mr < macro.values.rows(); ++mr) {
            if (!date_less(d, macro.dates[static_cast<std::size_t>(mr)])) {
                best = mr;
            } else {
                break;
            }
        }
        if (best < 0) {
            ++rep.rows_dropped;
            continue;
        }
        if (macro.dates[static_cast<std::size_t>(best)] != d) ++rep.forward_fills;
        keep_rows.push_back(r);
        macro_row.push_back(best);
    }
    CRBM_REQUIRE(!keep_rows.empty(), "assemble_joint: no overlapping dates");

    JointPanel joint;
    joint.obligor_ids = panel.obligor_ids;
    joint.macro_names = macro.names;
    const auto rows = static_cast<Eigen::Index>(keep_rows.size());
    joint.values.resize(rows, panel.n_obligors() + k);
    joint.dates.reserve(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
        joint.dates.push_back(panel.dates[static_cast<std::size_t>(keep_rows[r])]);
        joint.values.block(r, 0, 1, panel.n_obligors()) = panel.pd.row(keep_rows[r]);
    }

    // Min-max scaling over the aligned window; constant columns map to 0.5.
    for (Eigen::Index c = 0; c < k; ++c) {
        ColumnScaler scaler;
        scaler.min = std::numeric_limits<double>::infinity();
        scaler.max = -std::numeric_limits<double>::infinity();
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double v = macro.values(macro_row[static_cast<std::size_t>(r)], c);
            scaler.min = std::min(scaler.min, v);
            scaler.max = std::max(scaler.max, v);
        }
        scaler.degenerate = scaler.max == scaler.min;
        for (Eigen::Index r = 0; r < rows; ++r) {
            joint.values(r, panel.n_obligors() + c) =
                scaler.scale(macro.values(macro_row[static_cast<std::size_t>(r)], c));
        }
        joint.macro_scalers.push_back(scaler);
    }
    joint.validate();
    if (report) *report = rep;
    return joint;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "load_scenario: cannot open " + path);
    Scenario s;
    s.name = std::filesystem::path(path).stem().string();
    std::vector<double> vals;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        CRBM_REQUIRE(eq != std::string::npos,
                     "load_scenario: line " + std::to_string(lineno) + " has no '='");
        std::istringstream name_ss(line.substr(0, eq));
        std::string name;
        name_ss >> name;
        CRBM_REQUIRE(!name.empty(),
                     "load_scenario: line " + std::to_string(lineno) + ": blank variable name");
        std::istringstream val_ss(line.substr(eq + 1));
        double value = 0.0;
        val_ss >> value;
        CRBM_REQUIRE(!val_ss.fail(),
                     "load_scenario: line " + std::to_string(lineno) + ": bad value");
        s.variables.push_back(name);
        vals.push_back(value);
    }
    CRBM_REQUIRE(!s.variables.empty(), "load_scenario: no variables in " + path);
    s.original = Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    return s;
}

Scenario normalize_scenario(const Scenario& raw, const JointMeta& meta) {
    Scenario s = raw;
    s.normalized.resize(s.original.size());
    s.clipped.assign(static_cast<std::size_t>(s.original.size()), false);
    for (Eigen::Index i = 0; i < s.original.size(); ++i) {
        const auto it = std::find(meta.macro_names.begin(), meta.macro_names.end(),
                                  s.variables[static_cast<std::size_t>(i)]);
        CRBM_REQUIRE(it != meta.macro_names.end(),
                     "normalize_scenario: '" + s.variables[static_cast<std::size_t>(i)] +
                         "' is not a trained macro column");
        const auto idx = static_cast<std::size_t>(it - meta.macro_names.begin());
        double y = meta.macro_scalers[idx].scale(s.original[i]);
        if (y < 0.0 || y > 1.0) {
            // Stress values routinely leave the historical range; clip loudly.
            s.clipped[static_cast<std::size_t>(i)] = true;
            y = std::clamp(y, 0.0, 1.0);
        }
        s.normalized[i] = y;
    }
    return s;
}

std::map<Eigen::Index, double> scenario_clamp_map(const Scenario& scenario,
                                                  const JointMeta& meta) {
    CRBM_REQUIRE(scenario.normalized.size() == scenario.original.size(),
                 "scenario_clamp_map: scenario not normalized yet");
    std::map<Eigen::Index, double> clamp;
    const auto n_obl = static_cast<Eigen::Index>(meta.obligor_ids.size());
    for (Eigen::Index i = 0; i < scenario.normalized.size(); ++i) {
        const auto it = std::find(meta.macro_names.begin(), meta.macro_names.end(),
                                  scenario.variables[static_cast<std::size_t>(i)]);
        CRBM_REQUIRE(it != meta.macro_names.end(), "scenario_clamp_map: unknown variable");
        clamp[n_obl + (it - meta.macro_names.begin())] = scenario.normalized[i];
    }
    return clamp;
}

namespace {

void check_clamp(const RbmParameters& p, const std::map<Eigen::Index, double>& clamp) {
    for (const auto& [idx, value] : clamp) {
        CRBM_REQUIRE(idx >= 0 && idx < p.n_visible(),
                     "clamp index " + std::to_string(idx) + " outside the visible layer");
        CRBM_REQUIRE(value >= 0.0 && value <= 1.0, "clamp values must lie in [0,1]");
    }
    CRBM_REQUIRE(static_cast<Eigen::Index>(clamp.size()) < p.n_visible(),
                 "all visible units clamped: nothing to sample");
}

} // namespace

RbmParameters conditioned_rbm(const RbmParameters& p,
                              const std::map<Eigen::Index, double>& clamp) {
    p.validate();
    check_clamp(p, clamp);
    const Eigen::Index n = p.n_visible();

    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!clamp.count(i)) free_idx.push_back(i);
    }
    RbmParameters out;
    out.weights.resize(p.n_hidden(), static_cast<Eigen::Index>(free_idx.size()));
    out.visible_bias.resize(static_cast<Eigen::Index>(free_idx.size()));
    for (std::size_t k = 0; k < free_idx.size(); ++k) {
        out.weights.col(static_cast<Eigen::Index>(k)) = p.weights.col(free_idx[k]);
        out.visible_bias[static_cast<Eigen::Index>(k)] = p.visible_bias[free_idx[k]];
    }
    out.hidden_bias = p.hidden_bias;
    for (const auto& [idx, value] : clamp) {
        out.hidden_bias += value * p.weights.col(idx);
    }
    return out;
}

std::vector<Eigen::Index> unclamped_obligors(Eigen::Index n_obligors,
                                             const std::map<Eigen::Index, double>& clamp) {
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < n_obligors; ++i) {
        if (!clamp.count(i)) out.push_back(i);
    }
    return out;
}

Matrix conditional_gibbs(const RbmParameters& p, const std::map<Eigen::Index, double>& clamp,
                         int steps, int M, const Rng& rng, bool independent_restarts,
                         int threads) {
    p.validate();
    check_clamp(p, clamp);
    CRBM_REQUIRE(steps >= 1, "conditional_gibbs: steps must be >= 1");
    CRBM_REQUIRE(M >= 1, "conditional_gibbs: M must be >= 1");

    const Eigen::Index n = p.n_visible();
    const Eigen::Index m = p.n_hidden();
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!clamp.count(i)) free_idx.push_back(i);
    }
    Matrix out(static_cast<Eigen::Index>(free_idx.size()), M);

    auto reset_clamped = [&](Matrix& v, Eigen::Index col) {
        for (const auto& [idx, value] : clamp) v(idx, col) = value;
    };
    auto step_block = [&](Matrix& v, Matrix& h, std::vector<Rng>& rngs) {
        Matrix act = (p.weights * v).colwise() + p.hidden_bias;
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            for (Eigen::Index j = 0; j < m; ++j)
                h(j, c) = rngs[static_cast<std::size_t>(c)].bernoulli(stats::sigmoid(act(j, c)))
                              ? 1.0
                              : 0.0;
        }
        act = (p.weights.transpose() * h).colwise() + p.visible_bias;
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
            for (Eigen::Index i = 0; i < n; ++i)
                v(i, c) = rngs[static_cast<std::size_t>(c)].bernoulli(stats::sigmoid(act(i, c)))
                              ? 1.0
                              : 0.0;
            // Clamped coordinates return to the scenario after every update.
            reset_clamped(v, c);
        }
    };

    if (!independent_restarts) {
        Rng chain_rng = rng;
        Matrix v(n, 1), h(m, 1);
        for (Eigen::Index i = 0; i < n; ++i) v(i, 0) = chain_rng.bernoulli(0.5) ? 1.0 : 0.0;
        reset_clamped(v, 0);
        std::vector<Rng> rngs = {chain_rng};
        for (int s = 0; s < steps; ++s) step_block(v, h, rngs);
        for (int k = 0; k < M; ++k) {
            step_block(v, h, rngs);
            for (std::size_t i = 0; i < free_idx.size(); ++i)
                out(static_cast<Eigen::Index>(i), k) = v(free_idx[i], 0);
        }
        return out;
    }

    constexpr int kBlock = 512;
    const int blocks = (M + kBlock - 1) / kBlock;
    parallel_for(blocks, threads, [&](int blk) {
        const int lo = blk * kBlock;
        const int hi = std::min(M, lo + kBlock);
        const int width = hi - lo;
        std::vector<Rng> rngs;
        rngs.reserve(width);
        for (int c = lo; c < hi; ++c) rngs.push_back(rng.substream(static_cast<std::uint64_t>(c)));
        Matrix v(n, width), h(m, width);
        for (int c = 0; c < width; ++c) {
            for (Eigen::Index i = 0; i < n; ++i)
                v(i, c) = rngs[static_cast<std::size_t>(c)].bernoulli(0.5) ? 1.0 : 0.0;
            reset_clamped(v, c);
        }
        for (int s = 0; s < steps; ++s) step_block(v, h, rngs);
        for (int c = 0; c < width; ++c)
            for (std::size_t i = 0; i < free_idx.size(); ++i)
                out(static_cast<Eigen::Index>(i), lo + c) = v(free_idx[i], c);
    });
    return out;
}

TailCurve stressed_tail(const RbmParameters& p, const std::map<Eigen::Index, double>& clamp,
                        Eigen::Index n_obligors, const std::vector<double>& thresholds,
                        int steps, int M, const Rng& rng, const std::string& label,
                        bool independent_restarts, int threads) {
    CRBM_REQUIRE(M >= 100, "stressed_tail: need at least 100 samples");
    const auto obligors = unclamped_obligors(n_obligors, clamp);
    CRBM_REQUIRE(!obligors.empty(), "stressed_tail: no unclamped obligor coordinates");

    const Matrix samples =
        conditional_gibbs(p, clamp, steps, M, rng, independent_restarts, threads);

    // Row positions of the obligor coordinates within the unclamped output.
    std::vector<Eigen::Index> free_idx;
    for (Eigen::Index i = 0; i < p.n_visible(); ++i) {
        if (!clamp.count(i)) free_idx.push_back(i);
    }
    std::vector<Eigen::Index> obligor_rows;
    for (std::size_t k = 0; k < free_idx.size(); ++k) {
        if (free_idx[k] < n_obligors) obligor_rows.push_back(static_cast<Eigen::Index>(k));
    }

    std::vector<double> losses(static_cast<std::size_t>(M));
    const double denom = static_cast<double>(obligor_rows.size());
    for (int c = 0; c < M; ++c) {
        double sum = 0.0;
        for (Eigen::Index r : obligor_rows) sum += samples(r, c);
        losses[static_cast<std::size_t>(c)] = sum / denom;
    }
    TailCurve curve = curve_from_losses(losses, thresholds, EstimatorTag::PlainMc);
    curve.label = label;
    return curve;
}

std::vector<StressedVarRow> stressed_var(const RbmParameters& p,
                                         const std::map<Eigen::Index, double>& clamp,
                                         Eigen::Index n_obligors,
                                         const std::vector<double>& alpha_grid, int steps,
                                         int M, const Rng& rng, int threads) {
    CRBM_REQUIRE(!alpha_grid.empty(), "stressed_var: empty alpha grid");
    const auto obligors = unclamped_obligors(n_obligors, clamp);
    const auto n_free = static_cast<Eigen::Index>(obligors.size());
    const std::vector<double> grid = default_threshold_grid(n_free);

    const TailCurve mc_curve = stressed_tail(p, clamp, n_obligors, grid, steps, M,
                                             rng.substream(0), "", true, threads);

    // Lazily built deep-tail curve on the conditioned model, tilted on the
    // obligor biases only (macro units are already absorbed into the
    // conditioned hidden bias).
    std::optional<TailCurve> is_curve;
    auto deep_curve = [&]() -> const TailCurve& {
        if (!is_curve) {
            const RbmParameters reduced = conditioned_rbm(p, clamp);
            // For integer losses, E[L] = sum_k P(L > k); the grid is k/n.
            double mean0 = 0.0;
            for (Eigen::Index k = 0; k < n_free; ++k)
                mean0 += mc_curve.estimates[static_cast<std::size_t>(k)];
            // Push the tilted mean loss halfway from the conditional mean
            // toward full default so the far tail carries weight.
            const double target = mean0 + 0.5 * (static_cast<double>(n_free) - mean0);
            const TstarResult t = find_tstar(reduced, target, 0.05 * n_free, 2000,
                                             rng.substream(1), 10.0, steps, threads);
            const RatioEstimate ratio =
                ais_ratio(reduced, t.tstar, 2000, 100, rng.substream(2), steps, threads);
            is_curve = is_tail(reduced, t.tstar, ratio, grid, std::max(M, 2000),
                               rng.substream(3), steps, threads);
        }
        return *is_curve;
    };

    std::vector<StressedVarRow> rows;
    for (double alpha : alpha_grid) {
        StressedVarRow row;
        row.alpha = alpha;
        try {
            row.var = var_from_tail(mc_curve, alpha);
            row.method = EstimatorTag::PlainMc;
        } catch (const NumericalError&) {
            row.var = var_from_tail(deep_curve(), alpha);
            row.method = EstimatorTag::ImportanceSampling;
        }
        rows.push_back(row);
    }
    return rows;
}

Histogram histogram_counts(const std::vector<double>& values, int bins, double lo, double hi) {
    CRBM_REQUIRE(bins >= 1, "histogram_counts: bins must be >= 1");
    CRBM_REQUIRE(hi > lo, "histogram_counts: empty range");
    Histogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double v : values) {
        if (v < lo || v > hi) continue;
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        if (b == bins) b = bins - 1; // right edge belongs to the last bin
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

} // namespace creditrbm
