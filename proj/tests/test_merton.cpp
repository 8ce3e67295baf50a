#include "creditrbm/merton.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/panel.hpp"
#include "creditrbm/rng.hpp"
#include "creditrbm/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace creditrbm;

namespace {

// Equity series produced by pricing a call on simulated driftless GBM
// assets, so the true asset volatility is known exactly.
MertonInputs simulate_firm(double asset0, double asset_vol, double strike, double rate,
                           int days, Rng& rng, Vector* asset_path = nullptr) {
    MertonInputs inputs;
    inputs.dates = synthetic_dates(days);
    inputs.equity_value.resize(days);
    inputs.current_liabilities = Vector::Constant(days, 0.6 * strike);
    inputs.non_current_liabilities = Vector::Constant(days, 0.4 * strike);
    inputs.risk_free_rate = Vector::Constant(days, rate);
    if (asset_path) asset_path->resize(days);

    const double dt = 1.0 / 252.0;
    double asset = asset0;
    for (int t = 0; t < days; ++t) {
        inputs.equity_value[t] = merton_call_price(asset, strike, rate, 1.0, asset_vol);
        if (asset_path) (*asset_path)[t] = asset;
        asset *= std::exp(-0.5 * asset_vol * asset_vol * dt +
                          asset_vol * std::sqrt(dt) * rng.normal());
    }
    return inputs;
}

} // namespace

TEST_CASE("merton_pd: riskless and insolvent limits") {
    Rng rng(1, 0);
    // Liabilities at zero: PD is exactly zero and flagged.
    MertonInputs no_debt = simulate_firm(100.0, 0.25, 40.0, 0.02, 100, rng);
    no_debt.current_liabilities.setZero();
    no_debt.non_current_liabilities.setZero();
    no_debt.vol_window = 60;
    const MertonResult r0 = merton_pd(no_debt);
    CHECK(r0.pd.maxCoeff() == 0.0);
    CHECK(r0.zero_liability_dates == static_cast<int>(r0.dates.size()));

    // Deep insolvency: assets below the barrier with substantial volatility,
    // so equity is pure time value against the liabilities. The true PD at
    // asset <= 85 and vol 0.6 exceeds 0.7, so the estimate must clear 0.5.
    int insolvent_dates = 0;
    for (int seed = 0; seed < 6; ++seed) {
        Rng noise(static_cast<std::uint64_t>(seed), 2);
        Vector asset_path;
        MertonInputs deep = simulate_firm(80.0, 0.6, 100.0, 0.01, 80, noise, &asset_path);
        deep.vol_window = 60;
        const MertonResult r1 = merton_pd(deep);
        for (Eigen::Index t = 0; t < r1.pd.size(); ++t) {
            if (asset_path[60 + t] <= 85.0) {
                ++insolvent_dates;
                CHECK(r1.pd[t] > 0.5);
            }
        }
    }
    CHECK(insolvent_dates > 0);
}

TEST_CASE("merton_pd recovers the generating asset volatility within 10%") {
    // Moderate leverage and a short window keep the equity delta stable, the
    // regime in which the realized-equity-vol bridge is accurate.
    Rng rng(7, 0);
    const double true_vol = 0.2;
    MertonInputs inputs = simulate_firm(100.0, true_vol, 20.0, 0.02, 450, rng);
    inputs.vol_window = 378; // realized-vol sampling noise ~ 1/sqrt(2w)
    const MertonResult res = merton_pd(inputs, 2);
    REQUIRE(res.dates.size() == 450 - 378);
    for (Eigen::Index t = 0; t < res.asset_volatility.size(); ++t) {
        CHECK(std::abs(res.asset_volatility[t] - true_vol) / true_vol < 0.10);
    }
    // The implied asset value stays close to the simulated path's scale.
    CHECK(res.asset_value.minCoeff() > 50.0);
    CHECK(res.asset_value.maxCoeff() < 200.0);
}

TEST_CASE("merton_pd: monotone in liabilities and in volatility") {
    Rng rng(3, 0);
    MertonInputs base = simulate_firm(100.0, 0.2, 50.0, 0.02, 100, rng);
    base.vol_window = 60;

    double prev_pd = -1.0;
    for (double k : {20.0, 40.0, 60.0, 80.0}) {
        MertonInputs in = base;
        in.current_liabilities = Vector::Constant(100, 0.6 * k);
        in.non_current_liabilities = Vector::Constant(100, 0.4 * k);
        const MertonResult r = merton_pd(in);
        const double pd = r.pd[r.pd.size() - 1];
        CHECK(pd >= prev_pd);
        prev_pd = pd;
    }

    // Scaling the equity fluctuations scales the estimated vol and the PD.
    prev_pd = -1.0;
    for (double scale : {0.5, 1.0, 2.0}) {
        MertonInputs in = base;
        const double mean_log = std::log(base.equity_value.mean());
        for (int t = 0; t < 100; ++t) {
            const double dev = std::log(base.equity_value[t]) - mean_log;
            in.equity_value[t] = std::exp(mean_log + scale * dev);
        }
        const MertonResult r = merton_pd(in);
        const double pd = r.pd[r.pd.size() - 1];
        CHECK(pd >= prev_pd);
        prev_pd = pd;
    }
}

TEST_CASE("long-term weight lowers the barrier and the PD") {
    Rng rng(4, 0);
    MertonInputs in = simulate_firm(100.0, 0.3, 70.0, 0.02, 100, rng);
    in.vol_window = 60;
    const MertonResult full = merton_pd(in);
    in.long_term_weight = 0.5;
    const MertonResult kmv = merton_pd(in);
    for (Eigen::Index t = 0; t < full.pd.size(); ++t) {
        CHECK(kmv.pd[t] <= full.pd[t] + 1e-15);
    }
}

TEST_CASE("merton inputs CSV round trip and validation") {
    Rng rng(5, 0);
    MertonInputs in = simulate_firm(100.0, 0.2, 50.0, 0.02, 40, rng);
    in.vol_window = 30;
    const std::string path =
        (std::filesystem::temp_directory_path() / "crbm_merton.csv").string();
    save_merton_inputs(in, path);
    const MertonInputs back = load_merton_inputs(path);
    CHECK(back.equity_value == in.equity_value);
    CHECK(back.current_liabilities == in.current_liabilities);
    CHECK(back.risk_free_rate == in.risk_free_rate);
    std::filesystem::remove(path);

    MertonInputs bad = in;
    bad.vol_window = 10;
    CHECK_THROWS_AS(merton_pd(bad), DataError);
    bad = in;
    bad.equity_value[3] = -1.0;
    CHECK_THROWS_AS(merton_pd(bad), DataError);
}
