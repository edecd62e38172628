#pragma once

#include "concnn/csv.hpp"
#include "concnn/error.hpp"
#include "concnn/matrix.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace concnn {

/// Weekly sales panel: d products by n weeks with p covariates per cell.
/// A cell that is not offered has available == false and zero sales.
struct PanelDataset {
    std::vector<std::string> product_ids;
    std::vector<std::int64_t> weeks;
    std::vector<std::string> covariate_names;
    Matrix<std::int64_t> sales;
    Matrix<unsigned char> available;
    std::vector<double> covariates; // d * n * p, product-major then week
    std::vector<double> oracle_scaler; // length n when an oracle column was supplied

    [[nodiscard]] std::size_t products() const noexcept { return product_ids.size(); }
    [[nodiscard]] std::size_t week_count() const noexcept { return weeks.size(); }
    [[nodiscard]] std::size_t covariate_count() const noexcept { return covariate_names.size(); }

    [[nodiscard]] bool is_available(std::size_t i, std::size_t t) const noexcept { return available(i, t) != 0; }

    [[nodiscard]] std::span<const double> covariates_at(std::size_t i, std::size_t t) const noexcept {
        const std::size_t p = covariate_count();
        return {covariates.data() + (i * week_count() + t) * p, p};
    }
    [[nodiscard]] std::span<double> covariates_at(std::size_t i, std::size_t t) noexcept {
        const std::size_t p = covariate_count();
        return {covariates.data() + (i * week_count() + t) * p, p};
    }

    /// Allocates a d x n panel with every cell unavailable.
    static PanelDataset empty(std::vector<std::string> ids, std::vector<std::int64_t> weeks,
                              std::vector<std::string> covariate_names) {
        PanelDataset panel;
        const std::size_t d = ids.size();
        const std::size_t n = weeks.size();
        const std::size_t p = covariate_names.size();
        panel.product_ids = std::move(ids);
        panel.weeks = std::move(weeks);
        panel.covariate_names = std::move(covariate_names);
        panel.sales = Matrix<std::int64_t>(d, n, 0);
        panel.available = Matrix<unsigned char>(d, n, 0);
        panel.covariates.assign(d * n * p, 0.0);
        return panel;
    }

    /// Throws on any broken invariant.
    void validate() const {
        const std::size_t d = products();
        const std::size_t n = week_count();
        require(sales.rows() == d && sales.cols() == n, ErrorCode::LengthMismatch, "sales shape");
        require(available.rows() == d && available.cols() == n, ErrorCode::LengthMismatch, "availability shape");
        require(covariates.size() == d * n * covariate_count(), ErrorCode::LengthMismatch, "covariate shape");
        require(oracle_scaler.empty() || oracle_scaler.size() == n, ErrorCode::LengthMismatch, "oracle scaler length");
        for (std::size_t t = 1; t < n; ++t) {
            require(weeks[t - 1] < weeks[t], ErrorCode::MalformedValue, "weeks must be strictly increasing");
        }
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t t = 0; t < n; ++t) {
                require(sales(i, t) >= 0, ErrorCode::NegativeSales,
                        fmt::format("product '{}' week {}", product_ids[i], weeks[t]));
                if (!is_available(i, t)) {
                    require(sales(i, t) == 0, ErrorCode::MalformedValue, "sales on an unavailable cell");
                    continue;
                }
                for (double v : covariates_at(i, t)) {
                    require(std::isfinite(v), ErrorCode::MalformedValue,
                            fmt::format("undefined covariate for '{}' week {}", product_ids[i], weeks[t]));
                }
            }
        }
    }
};

/// Column names of the ingestion CSV.
struct PanelSchema {
    std::string product_column = "product_id";
    std::string week_column = "week";
    std::string sales_column = "sales";
    std::vector<std::string> covariate_columns;
    std::string oracle_column = "s_oracle"; // optional; used when present
};

namespace detail {

/// Integer week index, or an ISO date (YYYY-MM-DD) mapped to its 7-day block
/// counted from the Unix epoch.
inline std::int64_t parse_week(std::string_view text) {
    if (text.size() == 10 && text[4] == '-' && text[7] == '-') {
        using namespace std::chrono;
        const auto y = static_cast<int>(csv::parse_int(text.substr(0, 4), "week year"));
        const auto m = static_cast<unsigned>(csv::parse_int(text.substr(5, 2), "week month"));
        const auto dd = static_cast<unsigned>(csv::parse_int(text.substr(8, 2), "week day"));
        const year_month_day ymd{year{y}, month{m}, day{dd}};
        require(ymd.ok(), ErrorCode::MalformedValue, fmt::format("invalid date '{}'", text));
        const auto days = sys_days{ymd}.time_since_epoch().count();
        return days >= 0 ? days / 7 : -((-days + 6) / 7);
    }
    return csv::parse_int(text, "week");
}

} // namespace detail

/// Builds a dense panel from a parsed table. Weeks span every index from the
/// smallest to the largest seen; (product, week) pairs absent from the table
/// are unavailable with zero sales.
inline PanelDataset panel_from_table(const csv::Table& table, const PanelSchema& schema) {
    require(!table.header.empty() && !table.rows.empty(), ErrorCode::EmptyFile, "no data rows");

    auto column = [&](const std::string& name) {
        const auto c = table.column(name);
        require(c >= 0, ErrorCode::MissingColumn, fmt::format("column '{}'", name));
        return static_cast<std::size_t>(c);
    };
    const std::size_t product_col = column(schema.product_column);
    const std::size_t week_col = column(schema.week_column);
    const std::size_t sales_col = column(schema.sales_column);
    std::vector<std::size_t> covariate_cols;
    for (const auto& name : schema.covariate_columns) {
        covariate_cols.push_back(column(name));
    }
    const auto oracle_pos = table.column(schema.oracle_column);

    struct Row {
        std::int64_t sales;
        std::vector<double> covariates;
    };
    std::map<std::string, std::size_t> product_index;
    std::vector<std::string> ids;
    std::map<std::pair<std::size_t, std::int64_t>, Row> cells;
    std::map<std::int64_t, double> oracle;

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        require(row.size() == table.header.size(), ErrorCode::MalformedValue,
                fmt::format("row {} has {} fields, header has {}", r + 2, row.size(), table.header.size()));
        const std::string& id = row[product_col];
        auto [it, inserted] = product_index.try_emplace(id, ids.size());
        if (inserted) {
            ids.push_back(id);
        }
        const std::int64_t week = detail::parse_week(row[week_col]);
        Row cell;
        cell.sales = csv::parse_int(row[sales_col], "sales");
        require(cell.sales >= 0, ErrorCode::NegativeSales, fmt::format("product '{}' week {}", id, week));
        for (std::size_t c : covariate_cols) {
            cell.covariates.push_back(csv::parse_double(row[c], table.header[c]));
        }
        if (oracle_pos >= 0 && !row[static_cast<std::size_t>(oracle_pos)].empty()) {
            const double s = csv::parse_double(row[static_cast<std::size_t>(oracle_pos)], schema.oracle_column);
            auto [oit, fresh] = oracle.try_emplace(week, s);
            require(fresh || oit->second == s, ErrorCode::ConflictingDuplicate,
                    fmt::format("oracle scaler differs within week {}", week));
        }
        auto [cit, fresh] = cells.try_emplace({it->second, week}, cell);
        if (!fresh) {
            require(cit->second.sales == cell.sales && cit->second.covariates == cell.covariates,
                    ErrorCode::ConflictingDuplicate, fmt::format("product '{}' week {}", id, week));
        }
    }

    std::int64_t first_week = cells.begin()->first.second;
    std::int64_t last_week = first_week;
    for (const auto& [key, _] : cells) {
        first_week = std::min(first_week, key.second);
        last_week = std::max(last_week, key.second);
    }
    std::vector<std::int64_t> weeks;
    for (std::int64_t w = first_week; w <= last_week; ++w) {
        weeks.push_back(w);
    }

    PanelDataset panel = PanelDataset::empty(std::move(ids), std::move(weeks), schema.covariate_columns);
    for (const auto& [key, cell] : cells) {
        const std::size_t i = key.first;
        const auto t = static_cast<std::size_t>(key.second - first_week);
        panel.sales(i, t) = cell.sales;
        panel.available(i, t) = 1;
        std::copy(cell.covariates.begin(), cell.covariates.end(), panel.covariates_at(i, t).begin());
    }
    if (!oracle.empty()) {
        require(oracle.size() == panel.week_count(), ErrorCode::MissingColumn,
                fmt::format("'{}' must be given for every week", schema.oracle_column));
        for (const auto& [week, s] : oracle) {
            panel.oracle_scaler.push_back(s);
        }
    }
    panel.validate();
    return panel;
}

inline PanelDataset load_panel(const std::string& path, const PanelSchema& schema) {
    return panel_from_table(csv::read_file(path), schema);
}

/// Writes available cells only, in (week, product) order, with an
/// s_oracle column when the panel carries one.
inline void write_panel_csv(std::ostream& out, const PanelDataset& panel) {
    out << "product_id,week,sales";
    for (const auto& name : panel.covariate_names) {
        out << ',' << csv::escape(name);
    }
    if (!panel.oracle_scaler.empty()) {
        out << ",s_oracle";
    }
    out << '\n';
    for (std::size_t t = 0; t < panel.week_count(); ++t) {
        for (std::size_t i = 0; i < panel.products(); ++i) {
            if (!panel.is_available(i, t)) {
                continue;
            }
            out << csv::escape(panel.product_ids[i]) << ',' << panel.weeks[t] << ',' << panel.sales(i, t);
            for (double v : panel.covariates_at(i, t)) {
                out << ',' << csv::number(v);
            }
            if (!panel.oracle_scaler.empty()) {
                out << ',' << csv::number(panel.oracle_scaler[t]);
            }
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Scaler

enum class ScalerMethod { Oracle, TrailingMovingAverage, TotalActual };

struct ScalerOptions {
    ScalerMethod method = ScalerMethod::TrailingMovingAverage;
    std::size_t window = 8;
    double floor = 1.0;
    /// Oracle values; when empty the panel's oracle column is used.
    std::vector<double> oracle;
};

/// Positive per-week estimate s(t) of total category sales.
struct Scaler {
    std::vector<double> values;
    ScalerMethod method = ScalerMethod::TotalActual;
    std::size_t window = 0;

    /// max_t s(t+1) / s(t); 1 for a single week.
    [[nodiscard]] double ratio_bound() const {
        if (values.size() < 2) {
            return 1.0;
        }
        double tau_s = values[1] / values[0];
        for (std::size_t t = 2; t < values.size(); ++t) {
            tau_s = std::max(tau_s, values[t] / values[t - 1]);
        }
        return tau_s;
    }

    [[nodiscard]] double max_value() const {
        return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
    }
};

inline std::vector<double> weekly_totals(const PanelDataset& panel) {
    std::vector<double> totals(panel.week_count(), 0.0);
    for (std::size_t i = 0; i < panel.products(); ++i) {
        for (std::size_t t = 0; t < panel.week_count(); ++t) {
            totals[t] += static_cast<double>(panel.sales(i, t));
        }
    }
    return totals;
}

inline Scaler compute_scaler(const PanelDataset& panel, const ScalerOptions& options) {
    Scaler scaler;
    scaler.method = options.method;
    const std::size_t n = panel.week_count();
    switch (options.method) {
    case ScalerMethod::Oracle: {
        const auto& values = options.oracle.empty() ? panel.oracle_scaler : options.oracle;
        require(values.size() == n, ErrorCode::LengthMismatch,
                fmt::format("oracle scaler has {} values for {} weeks", values.size(), n));
        for (double v : values) {
            require(v > 0.0 && std::isfinite(v), ErrorCode::NonPositiveOracleValue, csv::number(v));
        }
        scaler.values = values;
        return scaler;
    }
    case ScalerMethod::TotalActual: {
        scaler.values = weekly_totals(panel);
        break;
    }
    case ScalerMethod::TrailingMovingAverage: {
        const std::size_t w = options.window;
        require(w >= 1, ErrorCode::WindowTooLarge, "window must be at least 1");
        require(n >= w, ErrorCode::WindowTooLarge, fmt::format("window {} exceeds {} weeks", w, n));
        scaler.window = w;
        const auto totals = weekly_totals(panel);
        scaler.values.resize(n);
        for (std::size_t t = 0; t < n; ++t) {
            // Week 0 has no history and falls back on itself.
            const std::size_t end = std::max<std::size_t>(t, 1);
            const std::size_t begin = end > w ? end - w : 0;
            double sum = 0.0;
            for (std::size_t u = begin; u < end; ++u) {
                sum += totals[u];
            }
            scaler.values[t] = sum / static_cast<double>(end - begin);
        }
        break;
    }
    }
    for (double& v : scaler.values) {
        v = std::max(v, options.floor);
    }
    return scaler;
}

// ---------------------------------------------------------------------------
// Shares and splits

struct ShareMatrix {
    Matrix<double> shares;
};

inline ShareMatrix market_shares(const PanelDataset& panel, const Scaler& scaler) {
    require(scaler.values.size() == panel.week_count(), ErrorCode::LengthMismatch,
            fmt::format("scaler has {} values for {} weeks", scaler.values.size(), panel.week_count()));
    ShareMatrix out{Matrix<double>(panel.products(), panel.week_count(), 0.0)};
    for (std::size_t i = 0; i < panel.products(); ++i) {
        for (std::size_t t = 0; t < panel.week_count(); ++t) {
            out.shares(i, t) = static_cast<double>(panel.sales(i, t)) / scaler.values[t];
        }
    }
    return out;
}

/// Half-open range of week positions [begin, end).
struct WeekRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t size() const noexcept { return end - begin; }
    bool operator==(const WeekRange&) const = default;
};

/// Split boundaries as week positions: train = [0, train_end),
/// validation = [train_end, valid_end), test = [valid_end, test_end).
struct SplitSpec {
    std::size_t train_end = 0;
    std::size_t valid_end = 0;
    std::size_t test_end = 0;
};

struct SplitViews {
    WeekRange train;
    WeekRange valid;
    WeekRange test;
};

inline SplitViews split(std::size_t week_count, const SplitSpec& spec) {
    require(spec.train_end >= 1 && spec.train_end < spec.valid_end && spec.valid_end < spec.test_end &&
                spec.test_end <= week_count,
            ErrorCode::InvalidSplit,
            fmt::format("need 0 < train_end < valid_end < test_end <= {}, got {}/{}/{}", week_count,
                        spec.train_end, spec.valid_end, spec.test_end));
    return {{0, spec.train_end}, {spec.train_end, spec.valid_end}, {spec.valid_end, spec.test_end}};
}

/// Everything derived from one panel that the modelling code reads.
struct Dataset {
    PanelDataset panel;
    Scaler scaler;
    ShareMatrix shares;
    std::vector<std::optional<std::size_t>> launch; // first available week per product

    [[nodiscard]] double share(std::size_t i, std::size_t t) const noexcept { return shares.shares(i, t); }

    /// True when product i is offered at week t and already was offered at
    /// or before t - h, so a lagged observation exists.
    [[nodiscard]] bool has_lag(std::size_t i, std::size_t t, std::size_t h) const noexcept {
        return t >= h && panel.is_available(i, t) && launch[i].has_value() && *launch[i] <= t - h;
    }
};

inline Dataset make_dataset(PanelDataset panel, Scaler scaler) {
    Dataset data;
    data.shares = market_shares(panel, scaler);
    data.launch.assign(panel.products(), std::nullopt);
    for (std::size_t i = 0; i < panel.products(); ++i) {
        for (std::size_t t = 0; t < panel.week_count(); ++t) {
            if (panel.is_available(i, t)) {
                data.launch[i] = t;
                break;
            }
        }
    }
    data.panel = std::move(panel);
    data.scaler = std::move(scaler);
    return data;
}

} // namespace concnn
