#include "creditrbm/panel.hpp"

#include "creditrbm/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace creditrbm {

namespace {

bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

void PortfolioPanel::validate() const {
    CRBM_REQUIRE(pd.cols() == static_cast<Eigen::Index>(obligor_ids.size()),
                 "PortfolioPanel: id count does not match columns");
    CRBM_REQUIRE(pd.rows() == static_cast<Eigen::Index>(dates.size()),
                 "PortfolioPanel: date count does not match rows");
    CRBM_REQUIRE(pd.rows() >= 1 && pd.cols() >= 1, "PortfolioPanel: empty panel");
    for (std::size_t i = 1; i < dates.size(); ++i) {
        CRBM_REQUIRE(date_less(dates[i - 1], dates[i]),
                     "PortfolioPanel: dates not strictly increasing at row " +
                         std::to_string(i + 1));
    }
    CRBM_REQUIRE(pd.minCoeff() > 0.0 && pd.maxCoeff() < 1.0,
                 "PortfolioPanel: entries must lie strictly inside (0,1)");
}

bool date_less(const std::string& a, const std::string& b) {
    if (all_digits(a) && all_digits(b)) {
        if (a.size() != b.size()) return a.size() < b.size();
        return a < b;
    }
    return a < b;
}

PortfolioPanel load_panel(const std::string& path, IngestReport* report) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "load_panel: cannot open " + path);

    std::string line;
    CRBM_REQUIRE(static_cast<bool>(std::getline(in, line)), "load_panel: empty file " + path);
    const auto header = split_csv_line(line);
    CRBM_REQUIRE(header.size() >= 2 && trim(header[0]) == "date",
                 "load_panel: line 1: header must start with 'date' followed by obligor ids");

    PortfolioPanel panel;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string id = trim(header[c]);
        CRBM_REQUIRE(!id.empty(), "load_panel: line 1: blank obligor id in header");
        panel.obligor_ids.push_back(id);
    }
    const std::size_t ncols = panel.obligor_ids.size();

    IngestReport rep;
    std::vector<std::string> dates;
    std::vector<double> values;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        CRBM_REQUIRE(cells.size() == ncols + 1,
                     "load_panel: line " + std::to_string(lineno) + ": expected " +
                         std::to_string(ncols + 1) + " cells, got " +
                         std::to_string(cells.size()));

        bool has_gap = false;
        std::vector<double> row(ncols);
        for (std::size_t c = 0; c < ncols; ++c) {
            const std::string cell = trim(cells[c + 1]);
            if (cell.empty()) {
                has_gap = true;
                continue;
            }
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != cell.size() || !std::isfinite(v)) {
                throw DataError("load_panel: line " + std::to_string(lineno) +
                                ": non-numeric cell '" + cell + "'");
            }
            if (v < kPdClampLow) {
                v = kPdClampLow;
                ++rep.values_clamped;
            } else if (v > kPdClampHigh) {
                v = kPdClampHigh;
                ++rep.values_clamped;
            }
            row[c] = v;
        }
        if (has_gap) {
            ++rep.rows_dropped;
            continue;
        }
        const std::string date = trim(cells[0]);
        CRBM_REQUIRE(!date.empty(), "load_panel: line " + std::to_string(lineno) + ": blank date");
        if (!dates.empty() && !date_less(dates.back(), date)) {
            throw DataError("load_panel: line " + std::to_string(lineno) +
                            ": dates not strictly increasing ('" + dates.back() + "' then '" +
                            date + "')");
        }
        dates.push_back(date);
        values.insert(values.end(), row.begin(), row.end());
    }
    CRBM_REQUIRE(!dates.empty(), "load_panel: no usable data rows in " + path);

    panel.dates = std::move(dates);
    panel.pd.resize(static_cast<Eigen::Index>(panel.dates.size()),
                    static_cast<Eigen::Index>(ncols));
    for (Eigen::Index r = 0; r < panel.pd.rows(); ++r)
        for (Eigen::Index c = 0; c < panel.pd.cols(); ++c)
            panel.pd(r, c) = values[static_cast<std::size_t>(r) * ncols +
                                    static_cast<std::size_t>(c)];
    panel.validate();
    if (report) *report = rep;
    return panel;
}

void save_panel(const PortfolioPanel& panel, const std::string& path) {
    panel.validate();
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "save_panel: cannot open " + path);
    out << "date";
    for (const auto& id : panel.obligor_ids) out << ',' << id;
    out << "\n";
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < panel.pd.rows(); ++r) {
        out << panel.dates[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < panel.pd.cols(); ++c) out << ',' << panel.pd(r, c);
        out << "\n";
    }
    CRBM_REQUIRE(out.good(), "save_panel: write failed for " + path);
}

std::pair<PortfolioPanel, PortfolioPanel> split_panel(const PortfolioPanel& panel,
                                                      double train_fraction) {
    panel.validate();
    CRBM_REQUIRE(train_fraction > 0.0 && train_fraction < 1.0,
                 "split_panel: fraction must lie in (0,1)");
    const Eigen::Index rows = panel.n_dates();
    const auto train_rows = static_cast<Eigen::Index>(
        std::ceil(train_fraction * static_cast<double>(rows)));
    CRBM_REQUIRE(train_rows >= 1 && train_rows < rows,
                 "split_panel: fraction leaves an empty side");

    PortfolioPanel train, test;
    train.obligor_ids = panel.obligor_ids;
    test.obligor_ids = panel.obligor_ids;
    train.dates.assign(panel.dates.begin(), panel.dates.begin() + train_rows);
    test.dates.assign(panel.dates.begin() + train_rows, panel.dates.end());
    train.pd = panel.pd.topRows(train_rows);
    test.pd = panel.pd.bottomRows(rows - train_rows);
    return {std::move(train), std::move(test)};
}

std::vector<std::string> synthetic_dates(int days) {
    CRBM_REQUIRE(days >= 1, "synthetic_dates: days must be >= 1");
    std::vector<std::string> dates;
    dates.reserve(static_cast<std::size_t>(days));
    for (int d = 1; d <= days; ++d) {
        std::ostringstream ss;
        ss << std::setw(6) << std::setfill('0') << d;
        dates.push_back(ss.str());
    }
    return dates;
}

} // namespace creditrbm
