#pragma once

#include "concnn/data.hpp"
#include "concnn/error.hpp"
#include "concnn/evaluation.hpp"

#include <fmt/format.h>

#include <array>
#include <concepts>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace concnn {

enum class BaselineKind { LastValue, MovingAverage };

struct BaselineModel {
    BaselineKind kind = BaselineKind::LastValue;
    std::size_t window = 1;
    std::size_t horizon = 1;

    [[nodiscard]] std::string name() const {
        return kind == BaselineKind::LastValue ? std::string("LV") : fmt::format("MA({})", window);
    }
};

/// Any type exposing share(i, week) and available(i, week).
template <typename H>
concept ShareHistory = requires(const H& h, std::size_t i, std::size_t t) {
    { h.share(i, t) } -> std::convertible_to<double>;
    { h.available(i, t) } -> std::convertible_to<bool>;
};

/// ShareHistory over a raw share matrix and availability mask.
struct MatrixHistory {
    const Matrix<double>* shares;
    const Matrix<unsigned char>* availability;

    [[nodiscard]] double share(std::size_t i, std::size_t t) const { return (*shares)(i, t); }
    [[nodiscard]] bool available(std::size_t i, std::size_t t) const { return (*availability)(i, t) != 0; }
};

/// Mean share over the `window` most recent available weeks at or before
/// t - h; zero when the product was never available.
template <ShareHistory H>
double moving_average(const H& history, std::size_t i, std::size_t t, std::size_t h, std::size_t window) {
    require(window >= 1, ErrorCode::InvalidConfig, "moving-average window must be at least 1");
    require(t >= h, ErrorCode::HorizonExceedsHistory, fmt::format("week {} with horizon {}", t, h));
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t s = t - h + 1; s-- > 0 && used < window;) {
        if (history.available(i, s)) {
            sum += history.share(i, s);
            ++used;
        }
    }
    return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

/// y_{i,t-h}, or the most recent available share before it, else zero.
template <ShareHistory H>
double last_value(const H& history, std::size_t i, std::size_t t, std::size_t h) {
    return moving_average(history, i, t, h, 1);
}

struct RescaleResult {
    std::vector<double> values;
    bool degenerate = false; // input summed to zero; returned unchanged
};

/// Scales predictions so they sum to target_total.
inline RescaleResult rescale_to_total(std::span<const double> predictions, double target_total) {
    RescaleResult out{std::vector<double>(predictions.begin(), predictions.end()), false};
    double sum = 0.0;
    for (double p : predictions) {
        sum += p;
    }
    if (!(sum > 0.0)) {
        out.degenerate = true;
        return out;
    }
    const double factor = target_total / sum;
    for (double& v : out.values) {
        v *= factor;
    }
    return out;
}

/// Wraps any forecaster so each week's predictions sum to a target derived
/// from the context (e.g. the forecast of total share).
inline Forecaster rescaled(Forecaster base, std::function<double(const ForecastContext&)> target) {
    return [base = std::move(base), target = std::move(target)](const ForecastContext& ctx) {
        return rescale_to_total(base(ctx), target(ctx)).values;
    };
}

inline Forecaster baseline_forecaster(const BaselineModel& model) {
    return [model](const ForecastContext& ctx) {
        std::vector<double> out;
        out.reserve(ctx.products().size());
        const std::size_t window = model.kind == BaselineKind::LastValue ? 1 : model.window;
        for (std::size_t i : ctx.products()) {
            out.push_back(moving_average(ctx, i, ctx.target_week(), ctx.horizon(), window));
        }
        return out;
    };
}

inline constexpr std::array<std::size_t, 6> kMovingAverageWindows{1, 2, 4, 8, 13, 26};

/// Picks the moving-average window with the lowest MAPE on `validation`;
/// ties go to the smaller window.
inline BaselineModel select_moving_average(const Dataset& data, WeekRange validation, std::size_t h,
                                           std::span<const std::size_t> windows = kMovingAverageWindows) {
    require(!windows.empty(), ErrorCode::InvalidConfig, "empty window grid");
    BaselineModel best{BaselineKind::MovingAverage, windows.front(), h};
    double best_mape = 0.0;
    bool first = true;
    for (std::size_t w : windows) {
        const BaselineModel candidate{BaselineKind::MovingAverage, w, h};
        const double m = rolling_evaluate(baseline_forecaster(candidate), data, validation, h, candidate.name()).mape;
        if (first || m < best_mape) {
            best = candidate;
            best_mape = m;
            first = false;
        }
    }
    return best;
}

} // namespace concnn
