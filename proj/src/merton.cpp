#include "creditrbm/merton.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/panel.hpp"
#include "creditrbm/stats.hpp"
#include "creditrbm/threading.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace creditrbm {

void MertonInputs::validate_series() const {
    const auto n = static_cast<Eigen::Index>(dates.size());
    CRBM_REQUIRE(n >= 2, "MertonInputs: need at least two dates");
    CRBM_REQUIRE(equity_value.size() == n && current_liabilities.size() == n &&
                     non_current_liabilities.size() == n && risk_free_rate.size() == n,
                 "MertonInputs: series lengths differ");
    CRBM_REQUIRE(equity_value.minCoeff() > 0.0, "MertonInputs: equity values must be positive");
    CRBM_REQUIRE(current_liabilities.minCoeff() >= 0.0 &&
                     non_current_liabilities.minCoeff() >= 0.0,
                 "MertonInputs: liabilities must be nonnegative");
    for (std::size_t i = 1; i < dates.size(); ++i) {
        CRBM_REQUIRE(date_less(dates[i - 1], dates[i]),
                     "MertonInputs: dates not strictly increasing at row " +
                         std::to_string(i + 1));
    }
}

void MertonInputs::validate() const {
    validate_series();
    CRBM_REQUIRE(horizon_years > 0.0, "MertonInputs: horizon must be positive");
    CRBM_REQUIRE(vol_window >= 30, "MertonInputs: volatility window must be >= 30");
    CRBM_REQUIRE(vol_window < static_cast<int>(dates.size()),
                 "MertonInputs: volatility window longer than the series");
    CRBM_REQUIRE(long_term_weight >= 0.0 && long_term_weight <= 1.0,
                 "MertonInputs: long-term weight must lie in [0,1]");
}

MertonInputs load_merton_inputs(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "load_merton_inputs: cannot open " + path);
    std::string line;
    CRBM_REQUIRE(static_cast<bool>(std::getline(in, line)),
                 "load_merton_inputs: empty file " + path);
    {
        std::string h = line;
        if (!h.empty() && h.back() == '\r') h.pop_back();
        CRBM_REQUIRE(h == "date,equity_value,lctq,lltq,rate",
                     "load_merton_inputs: line 1: header must be "
                     "'date,equity_value,lctq,lltq,rate'");
    }
    MertonInputs inputs;
    std::vector<double> eq, lc, ll, r;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            cells.push_back(cell);
        }
        CRBM_REQUIRE(cells.size() == 5,
                     "load_merton_inputs: line " + std::to_string(lineno) + ": need 5 cells");
        inputs.dates.push_back(cells[0]);
        try {
            eq.push_back(std::stod(cells[1]));
            lc.push_back(std::stod(cells[2]));
            ll.push_back(std::stod(cells[3]));
            r.push_back(std::stod(cells[4]));
        } catch (const std::exception&) {
            throw DataError("load_merton_inputs: line " + std::to_string(lineno) +
                            ": non-numeric cell");
        }
    }
    const auto n = static_cast<Eigen::Index>(inputs.dates.size());
    inputs.equity_value = Eigen::Map<Vector>(eq.data(), n);
    inputs.current_liabilities = Eigen::Map<Vector>(lc.data(), n);
    inputs.non_current_liabilities = Eigen::Map<Vector>(ll.data(), n);
    inputs.risk_free_rate = Eigen::Map<Vector>(r.data(), n);
    inputs.validate_series();
    return inputs;
}

void save_merton_inputs(const MertonInputs& inputs, const std::string& path) {
    inputs.validate_series();
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "save_merton_inputs: cannot open " + path);
    out << "date,equity_value,lctq,lltq,rate\n" << std::setprecision(17);
    for (std::size_t i = 0; i < inputs.dates.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out << inputs.dates[i] << ',' << inputs.equity_value[r] << ','
            << inputs.current_liabilities[r] << ',' << inputs.non_current_liabilities[r] << ','
            << inputs.risk_free_rate[r] << "\n";
    }
}

void MertonResult::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "MertonResult: cannot open " + path);
    out << "date,pd,asset_value,asset_volatility,equity_volatility\n" << std::setprecision(17);
    for (std::size_t i = 0; i < dates.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out << dates[i] << ',' << pd[r] << ',' << asset_value[r] << ',' << asset_volatility[r]
            << ',' << equity_volatility[r] << "\n";
    }
}

double merton_call_price(double asset, double strike, double rate, double horizon,
                         double asset_vol) {
    const double sq = asset_vol * std::sqrt(horizon);
    const double d1 = (std::log(asset / strike) + (rate + 0.5 * asset_vol * asset_vol) * horizon) / sq;
    const double d2 = d1 - sq;
    return asset * stats::normal_cdf(d1) - strike * std::exp(-rate * horizon) * stats::normal_cdf(d2);
}

namespace {

struct SolveOutcome {
    double asset = 0.0;
    double asset_vol = 0.0;
    double pd = 0.0;
};

// Invert the call price in the asset value by Newton with the analytic delta.
double invert_call(double equity, double strike, double rate, double horizon, double asset_vol,
                   double initial) {
    double a = initial;
    for (int it = 0; it < 200; ++it) {
        const double price = merton_call_price(a, strike, rate, horizon, asset_vol);
        const double diff = price - equity;
        if (std::abs(diff) <= 1e-12 * std::max(1.0, equity)) return a;
        const double sq = asset_vol * std::sqrt(horizon);
        const double d1 =
            (std::log(a / strike) + (rate + 0.5 * asset_vol * asset_vol) * horizon) / sq;
        const double delta = stats::normal_cdf(d1);
        a = std::max(a - diff / std::max(delta, 1e-12), 0.5 * equity);
    }
    throw NumericalError("merton_pd: call-price inversion failed; residual " +
                         std::to_string(merton_call_price(a, strike, rate, horizon, asset_vol) -
                                        equity));
}

SolveOutcome solve_point(double equity, double strike, double rate, double horizon,
                         double equity_vol) {
    SolveOutcome out;
    if (strike <= 0.0) {
        // No debt: the firm cannot default within the horizon.
        out.asset = equity;
        out.asset_vol = equity_vol;
        out.pd = 0.0;
        return out;
    }
    double asset = equity + strike * std::exp(-rate * horizon);
    double asset_vol = std::max(1e-6, equity_vol * equity / asset);
    constexpr double kDamp = 0.5;

    double residual_vol = 0.0;
    for (int it = 0; it < 500; ++it) {
        asset = invert_call(equity, strike, rate, horizon, asset_vol, asset);
        const double sq = asset_vol * std::sqrt(horizon);
        const double d1 =
            (std::log(asset / strike) + (rate + 0.5 * asset_vol * asset_vol) * horizon) / sq;
        const double target_vol = equity_vol * equity / (asset * stats::normal_cdf(d1));
        residual_vol = target_vol - asset_vol;
        asset_vol = std::max(1e-8, asset_vol + kDamp * residual_vol);
        if (std::abs(residual_vol) < 1e-10 * std::max(1.0, asset_vol)) {
            const double d2 = d1 - sq;
            out.asset = asset;
            out.asset_vol = asset_vol;
            out.pd = stats::normal_cdf(-d2);
            return out;
        }
    }
    std::ostringstream msg;
    msg << "merton_pd: fixed point not converged in 500 iterations; vol residual "
        << residual_vol << ", price residual "
        << merton_call_price(asset, strike, rate, horizon, asset_vol) - equity;
    throw NumericalError(msg.str());
}

} // namespace

MertonResult merton_pd(const MertonInputs& inputs, int threads) {
    inputs.validate();
    const auto n = static_cast<Eigen::Index>(inputs.dates.size());
    const int w = inputs.vol_window;
    const auto out_n = n - w;

    // Annualized realized volatility of log equity returns over the window.
    Vector log_eq(n);
    for (Eigen::Index t = 0; t < n; ++t) log_eq[t] = std::log(inputs.equity_value[t]);

    MertonResult result;
    result.dates.assign(inputs.dates.begin() + w, inputs.dates.end());
    result.pd.resize(out_n);
    result.asset_value.resize(out_n);
    result.asset_volatility.resize(out_n);
    result.equity_volatility.resize(out_n);

    std::vector<int> zero_flags(static_cast<std::size_t>(out_n), 0);
    parallel_for(static_cast<int>(out_n), threads, [&](int k) {
        const Eigen::Index t = w + k;
        double mean = 0.0;
        for (Eigen::Index s = t - w + 1; s <= t; ++s) mean += log_eq[s] - log_eq[s - 1];
        mean /= w;
        double var = 0.0;
        for (Eigen::Index s = t - w + 1; s <= t; ++s) {
            const double d = log_eq[s] - log_eq[s - 1] - mean;
            var += d * d;
        }
        var /= (w - 1);
        const double equity_vol = std::sqrt(var * 252.0);

        const double strike = inputs.current_liabilities[t] +
                              inputs.long_term_weight * inputs.non_current_liabilities[t];
        const SolveOutcome point =
            solve_point(inputs.equity_value[t], strike, inputs.risk_free_rate[t],
                        inputs.horizon_years, equity_vol);
        if (strike <= 0.0) zero_flags[static_cast<std::size_t>(k)] = 1;
        result.pd[k] = point.pd;
        result.asset_value[k] = point.asset;
        result.asset_volatility[k] = point.asset_vol;
        result.equity_volatility[k] = equity_vol;
    });
    for (int f : zero_flags) result.zero_liability_dates += f;
    return result;
}

} // namespace creditrbm
