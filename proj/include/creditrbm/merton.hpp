#ifndef CREDITRBM_MERTON_HPP
#define CREDITRBM_MERTON_HPP

#include "creditrbm/rbm.hpp"

#include <string>
#include <vector>

namespace creditrbm {

// Market inputs for structural PD estimation: equity (market cap) series,
// balance-sheet liabilities, and risk-free rates, all on the same dates.
struct MertonInputs {
    std::vector<std::string> dates;
    Vector equity_value;
    Vector current_liabilities;     // maturity up to one year
    Vector non_current_liabilities; // maturity beyond one year
    Vector risk_free_rate;          // annualized, continuous compounding
    double horizon_years = 1.0;
    int vol_window = 252; // trading days used for equity-vol estimation
    // Weight on non-current liabilities in the default barrier; 1 uses full
    // liabilities, 0.5 is the usual short-term-plus-half-long-term variant.
    double long_term_weight = 1.0;

    // Series-only checks (lengths, positivity, date order); the window and
    // horizon are run parameters checked by merton_pd.
    void validate_series() const;
    void validate() const;
};

MertonInputs load_merton_inputs(const std::string& path);
void save_merton_inputs(const MertonInputs& inputs, const std::string& path);

struct MertonResult {
    std::vector<std::string> dates; // first vol_window input dates are consumed
    Vector pd;
    Vector asset_value;
    Vector asset_volatility;
    Vector equity_volatility;
    int zero_liability_dates = 0; // PD reported as 0 with this flag

    void write_csv(const std::string& path) const;
};

// Per date: solve the call-option system
//   E = A Phi(d1) - K e^{-rT} Phi(d2),   sigma_E E = Phi(d1) A sigma_A
// for (A, sigma_A) by damped fixed-point iteration, then PD = Phi(-d2) with
// the risk-free drift. K = current + weight * non-current liabilities.
MertonResult merton_pd(const MertonInputs& inputs, int threads = 1);

// Black-Scholes call on assets, exposed for the inversion tests.
double merton_call_price(double asset, double strike, double rate, double horizon,
                         double asset_vol);

} // namespace creditrbm

#endif
