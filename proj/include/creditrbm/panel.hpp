#ifndef CREDITRBM_PANEL_HPP
#define CREDITRBM_PANEL_HPP

#include "creditrbm/rbm.hpp"

#include <string>
#include <utility>
#include <vector>

namespace creditrbm {

// Dated panel of per-obligor default probabilities. Rows follow the strictly
// increasing date index; every entry lies inside (0,1) after ingestion.
struct PortfolioPanel {
    std::vector<std::string> obligor_ids;
    std::vector<std::string> dates;
    Matrix pd; // rows = dates, cols = obligors

    Eigen::Index n_obligors() const { return pd.cols(); }
    Eigen::Index n_dates() const { return pd.rows(); }
    void validate() const;
};

// Orders date tokens numerically when both are integers, lexicographically
// otherwise (ISO dates compare correctly that way).
bool date_less(const std::string& a, const std::string& b);

struct IngestReport {
    int rows_dropped = 0;   // rows with blank cells
    int values_clamped = 0; // entries pulled into [1e-6, 1-1e-6]
};

inline constexpr double kPdClampLow = 1e-6;
inline constexpr double kPdClampHigh = 1.0 - 1e-6;

// CSV with header "date,<id>,<id>,..."; one row per date. Blank cells drop
// the row; non-numeric cells, bad headers and unsorted dates are errors that
// carry the line number.
PortfolioPanel load_panel(const std::string& path, IngestReport* report = nullptr);

void save_panel(const PortfolioPanel& panel, const std::string& path);

// Chronological split: the earliest ceil(fraction * rows) rows go to train.
std::pair<PortfolioPanel, PortfolioPanel> split_panel(const PortfolioPanel& panel,
                                                      double train_fraction);

// Sequential zero-padded date tokens "000001", "000002", ... for synthetic panels.
std::vector<std::string> synthetic_dates(int days);

} // namespace creditrbm

#endif
