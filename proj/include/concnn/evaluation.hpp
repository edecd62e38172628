#pragma once

#include "concnn/concurrent.hpp"
#include "concnn/csv.hpp"
#include "concnn/data.hpp"
#include "concnn/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace concnn {

/// 100 * sum |yhat - y| / sum y.
inline double mape(std::span<const double> predictions, std::span<const double> actuals) {
    require(predictions.size() == actuals.size(), ErrorCode::LengthMismatch,
            fmt::format("{} predictions for {} actuals", predictions.size(), actuals.size()));
    double err = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < actuals.size(); ++k) {
        err += std::fabs(predictions[k] - actuals[k]);
        total += actuals[k];
    }
    require(total > 0.0, ErrorCode::ZeroActualTotal, "actual shares sum to zero");
    return 100.0 * err / total;
}

/// A model "predicts zero" when its predictions total less than a thousandth
/// of the actual shares.
inline bool is_zero_prediction(std::span<const double> predictions, std::span<const double> actuals) {
    double p = 0.0;
    double a = 0.0;
    for (std::size_t k = 0; k < actuals.size(); ++k) {
        p += std::fabs(predictions[k]);
        a += actuals[k];
    }
    return p <= 1e-3 * a;
}

/// Records the latest week any forecaster read through a ForecastContext.
struct AccessLog {
    std::optional<std::size_t> latest_read;
    std::size_t reads = 0;
};

/// What a forecaster may see when predicting week t at horizon h: shares and
/// availability up to the origin t - h, the covariates planned for t, and the
/// products to predict. Reading past the origin throws std::logic_error.
class ForecastContext {
public:
    ForecastContext(const Dataset& data, std::size_t target_week, std::size_t horizon,
                    std::vector<std::size_t> products, AccessLog* log = nullptr)
        : data_(&data), target_(target_week), horizon_(horizon), products_(std::move(products)), log_(log) {}

    [[nodiscard]] std::size_t target_week() const noexcept { return target_; }
    [[nodiscard]] std::size_t horizon() const noexcept { return horizon_; }
    [[nodiscard]] std::size_t origin() const noexcept { return target_ - horizon_; }
    [[nodiscard]] std::span<const std::size_t> products() const noexcept { return products_; }
    [[nodiscard]] std::size_t covariate_count() const noexcept { return data_->panel.covariate_count(); }

    [[nodiscard]] double share(std::size_t i, std::size_t week) const {
        touch(week);
        return data_->share(i, week);
    }

    [[nodiscard]] bool available(std::size_t i, std::size_t week) const {
        touch(week);
        return data_->panel.is_available(i, week);
    }

    [[nodiscard]] std::span<const double> covariates(std::size_t i) const {
        return data_->panel.covariates_at(i, target_);
    }

private:
    void touch(std::size_t week) const {
        if (week > origin()) {
            throw std::logic_error(fmt::format("forecast for week {} read week {} past origin {}", target_, week,
                                               origin()));
        }
        if (log_ != nullptr) {
            log_->latest_read = std::max(log_->latest_read.value_or(0), week);
            ++log_->reads;
        }
    }

    const Dataset* data_;
    std::size_t target_;
    std::size_t horizon_;
    std::vector<std::size_t> products_;
    AccessLog* log_;
};

/// Predicted shares aligned with ctx.products().
using Forecaster = std::function<std::vector<double>(const ForecastContext&)>;

/// Lagged shares then covariates, read through the context.
inline std::vector<double> context_features(const ForecastContext& ctx, std::size_t i, std::size_t lag_count) {
    std::vector<double> f;
    f.reserve(lag_count + ctx.covariate_count());
    for (std::size_t j = 0; j < lag_count; ++j) {
        f.push_back(ctx.origin() >= j ? ctx.share(i, ctx.origin() - j) : 0.0);
    }
    const auto theta = ctx.covariates(i);
    f.insert(f.end(), theta.begin(), theta.end());
    return f;
}

inline Forecaster model_forecaster(ConcurrentModel model) {
    return [model = std::move(model)](const ForecastContext& ctx) {
        std::vector<double> w;
        w.reserve(ctx.products().size());
        for (std::size_t i : ctx.products()) {
            w.push_back(forward(model.phi, context_features(ctx, i, model.lag_count)));
        }
        if (model.variant == Variant::FeedForwardDirect) {
            return w;
        }
        return normalize_weights(w, model.alpha);
    };
}

struct PredictionRecord {
    std::size_t product = 0;
    std::size_t week = 0;
    double actual = 0.0;
    double predicted = 0.0;
};

struct EvaluationReport {
    std::string model;
    std::size_t horizon = 0;
    double mape = 0.0;
    bool zero_prediction = false;
    std::vector<PredictionRecord> records;
};

/// Fixed-horizon, non-recursive evaluation over `range`: week t is predicted
/// from data at t - h. Products launched inside (t - h, t] are skipped.
inline EvaluationReport rolling_evaluate(const Forecaster& forecaster, const Dataset& data, WeekRange range,
                                         std::size_t h, std::string name, AccessLog* log = nullptr) {
    require(h >= 1, ErrorCode::InvalidConfig, "horizon must be at least 1");
    require(range.begin >= h, ErrorCode::InsufficientHistory,
            fmt::format("range starts at week {} but horizon is {}", range.begin, h));
    require(range.end <= data.panel.week_count(), ErrorCode::InvalidSplit, "range past the panel end");
    EvaluationReport report;
    report.model = std::move(name);
    report.horizon = h;
    for (std::size_t t = range.begin; t < range.end; ++t) {
        std::vector<std::size_t> products;
        for (std::size_t i = 0; i < data.panel.products(); ++i) {
            if (data.has_lag(i, t, h)) {
                products.push_back(i);
            }
        }
        if (products.empty()) {
            continue;
        }
        const ForecastContext ctx(data, t, h, products, log);
        const auto predicted = forecaster(ctx);
        require(predicted.size() == products.size(), ErrorCode::LengthMismatch,
                fmt::format("forecaster returned {} values for {} products", predicted.size(), products.size()));
        for (std::size_t k = 0; k < products.size(); ++k) {
            report.records.push_back({products[k], t, data.share(products[k], t), predicted[k]});
        }
    }
    std::vector<double> p;
    std::vector<double> a;
    for (const auto& r : report.records) {
        p.push_back(r.predicted);
        a.push_back(r.actual);
    }
    report.mape = mape(p, a);
    report.zero_prediction = is_zero_prediction(p, a);
    return report;
}

inline void write_predictions_header(std::ostream& out) {
    out << "product_id,week,actual_share,predicted_share,model\n";
}

inline void write_predictions_rows(std::ostream& out, const Dataset& data, const EvaluationReport& report) {
    for (const auto& r : report.records) {
        out << csv::escape(data.panel.product_ids[r.product]) << ',' << data.panel.weeks[r.week] << ','
            << csv::number(r.actual) << ',' << csv::number(r.predicted) << ',' << csv::escape(report.model) << '\n';
    }
}

inline void write_mape_summary(std::ostream& out, std::span<const EvaluationReport> reports) {
    out << "model,horizon,mape,zero_prediction\n";
    for (const auto& r : reports) {
        out << csv::escape(r.model) << ',' << r.horizon << ',' << csv::number(r.mape) << ','
            << (r.zero_prediction ? 1 : 0) << '\n';
    }
}

/// Re-computes MAPE per model from a predictions CSV
/// (product_id, week, actual_share, predicted_share, model).
inline std::vector<EvaluationReport> mape_from_predictions(const csv::Table& table, std::size_t horizon) {
    for (const char* name : {"actual_share", "predicted_share", "model"}) {
        require(table.column(name) >= 0, ErrorCode::MissingColumn, fmt::format("column '{}'", name));
    }
    const auto actual_col = static_cast<std::size_t>(table.column("actual_share"));
    const auto pred_col = static_cast<std::size_t>(table.column("predicted_share"));
    const auto model_col = static_cast<std::size_t>(table.column("model"));
    std::vector<std::string> order;
    std::vector<std::vector<double>> preds;
    std::vector<std::vector<double>> actuals;
    for (const auto& row : table.rows) {
        require(row.size() == table.header.size(), ErrorCode::MalformedValue, "ragged predictions row");
        const auto it = std::find(order.begin(), order.end(), row[model_col]);
        const auto k = static_cast<std::size_t>(it - order.begin());
        if (it == order.end()) {
            order.push_back(row[model_col]);
            preds.emplace_back();
            actuals.emplace_back();
        }
        preds[k].push_back(csv::parse_double(row[pred_col], "predicted_share"));
        actuals[k].push_back(csv::parse_double(row[actual_col], "actual_share"));
    }
    std::vector<EvaluationReport> out;
    for (std::size_t k = 0; k < order.size(); ++k) {
        EvaluationReport r;
        r.model = order[k];
        r.horizon = horizon;
        r.mape = mape(preds[k], actuals[k]);
        r.zero_prediction = is_zero_prediction(preds[k], actuals[k]);
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Partial dependence

struct PartialDependenceCurve {
    std::string feature;
    std::vector<double> bin_values;
    std::vector<double> average_weights;
    bool degenerate = false; // fewer distinct training values than requested bins
};

inline constexpr std::size_t kPartialDependenceBins = 100;

/// Equal-frequency bin means of `values`. With fewer distinct values than
/// `bins`, each distinct value becomes its own bin.
inline std::pair<std::vector<double>, bool> quantile_bin_means(std::vector<double> values, std::size_t bins) {
    std::sort(values.begin(), values.end());
    std::vector<double> distinct;
    std::unique_copy(values.begin(), values.end(), std::back_inserter(distinct));
    if (distinct.size() < bins) {
        return {distinct, true};
    }
    std::vector<double> means;
    const std::size_t n = values.size();
    for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t lo = b * n / bins;
        const std::size_t hi = (b + 1) * n / bins;
        double sum = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            sum += values[k];
        }
        means.push_back(sum / static_cast<double>(hi - lo));
    }
    return {means, false};
}

/// Average phi over the test points with `feature` overridden by each bin
/// mean of its training distribution.
inline PartialDependenceCurve partial_dependence(const ConcurrentModel& model, const Dataset& data, WeekRange train,
                                                 WeekRange test, const std::string& feature,
                                                 std::size_t bins = kPartialDependenceBins) {
    const auto names = model.features.empty() ? feature_names(model.lag_count, data.panel.covariate_names)
                                              : model.features;
    const auto pos = std::find(names.begin(), names.end(), feature);
    require(pos != names.end(), ErrorCode::UnknownFeature, fmt::format("'{}'", feature));
    const auto f = static_cast<std::size_t>(pos - names.begin());

    const auto train_batches = build_batches(data, train, model.horizon, model.lag_count);
    const auto test_batches = build_batches(data, test, model.horizon, model.lag_count);
    require(!test_batches.empty(), ErrorCode::InsufficientHistory, "no test points with lagged data");
    std::vector<double> train_values;
    for (const auto& b : train_batches) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            train_values.push_back(b.input(k)[f]);
        }
    }
    require(!train_values.empty(), ErrorCode::InsufficientHistory, "no training points with lagged data");

    PartialDependenceCurve curve;
    curve.feature = feature;
    auto [means, degenerate] = quantile_bin_means(std::move(train_values), bins);
    curve.bin_values = std::move(means);
    curve.degenerate = degenerate;

    std::vector<double> input;
    for (double v : curve.bin_values) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& b : test_batches) {
            for (std::size_t k = 0; k < b.size(); ++k) {
                const auto x = b.input(k);
                input.assign(x.begin(), x.end());
                input[f] = v;
                sum += forward(model.phi, input);
                ++count;
            }
        }
        curve.average_weights.push_back(sum / static_cast<double>(count));
    }
    return curve;
}

inline void write_partial_dependence(std::ostream& out, const PartialDependenceCurve& curve) {
    out << "bin_value,avg_weight\n";
    for (std::size_t b = 0; b < curve.bin_values.size(); ++b) {
        out << csv::number(curve.bin_values[b]) << ',' << csv::number(curve.average_weights[b]) << '\n';
    }
}

} // namespace concnn
