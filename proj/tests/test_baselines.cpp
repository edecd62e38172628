#include "concnn/baselines.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <random>

using namespace concnn;

namespace {

/// One product; NaN marks an unavailable week.
struct SeriesHistory {
    std::vector<double> values;
    [[nodiscard]] double share(std::size_t, std::size_t t) const { return std::isnan(values[t]) ? 0.0 : values[t]; }
    [[nodiscard]] bool available(std::size_t, std::size_t t) const { return !std::isnan(values[t]); }
};

const double kOff = std::nan("");

Dataset random_dataset(std::uint64_t seed, std::size_t d, std::size_t n) {
    std::mt19937_64 gen(seed);
    std::uniform_int_distribution<int> sales(0, 40);
    std::bernoulli_distribution offered(0.8);
    std::vector<std::string> ids;
    std::vector<std::int64_t> weeks;
    for (std::size_t i = 0; i < d; ++i) {
        ids.push_back("p" + std::to_string(i));
    }
    for (std::size_t t = 0; t < n; ++t) {
        weeks.push_back(static_cast<std::int64_t>(t));
    }
    auto panel = PanelDataset::empty(ids, weeks, {});
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t t = 0; t < n; ++t) {
            if (offered(gen)) {
                panel.available(i, t) = 1;
                panel.sales(i, t) = sales(gen);
            }
        }
    }
    return make_dataset(panel, Scaler{std::vector<double>(n, 200.0)});
}

} // namespace

static_assert(ShareHistory<SeriesHistory>);
static_assert(ShareHistory<MatrixHistory>);
static_assert(ShareHistory<ForecastContext>);

TEST(LastValue, Examples) {
    const SeriesHistory h{{0.1, 0.2, 0.3, 0.5}};
    EXPECT_DOUBLE_EQ(last_value(h, 0, 3, 1), 0.3);
    EXPECT_DOUBLE_EQ(last_value(h, 0, 3, 3), 0.1);
    const SeriesHistory never{{kOff, kOff, kOff, 0.4}};
    EXPECT_EQ(last_value(never, 0, 3, 1), 0.0);
    try {
        (void)last_value(h, 0, 2, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::HorizonExceedsHistory);
    }
}

TEST(LastValue, FallsBackToMostRecentAvailableShare) {
    const SeriesHistory h{{0.1, 0.25, kOff, kOff, 0.9}};
    EXPECT_DOUBLE_EQ(last_value(h, 0, 4, 1), 0.25);
    EXPECT_DOUBLE_EQ(last_value(h, 0, 4, 2), 0.25);
}

TEST(MovingAverage, Examples) {
    const SeriesHistory h{{0.9, 0.2, 0.4, 0.7}};
    EXPECT_NEAR(moving_average(h, 0, 3, 1, 2), 0.3, 1e-15);
    const SeriesHistory one{{kOff, kOff, 0.6, 0.1}};
    EXPECT_DOUBLE_EQ(moving_average(one, 0, 3, 1, 4), 0.6);
    // Skips unavailable weeks rather than counting them as zero.
    const SeriesHistory gap{{0.2, kOff, 0.4, kOff, 0.0}};
    EXPECT_NEAR(moving_average(gap, 0, 4, 1, 2), 0.3, 1e-15);
    EXPECT_THROW((void)moving_average(h, 0, 3, 1, 0), Error);
}

TEST(MovingAverage, PropertyWindowOneIsLastValue) {
    const auto data = random_dataset(1, 6, 40);
    const MatrixHistory h{&data.shares.shares, &data.panel.available};
    for (std::size_t horizon : {1U, 4U, 12U}) {
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t t = horizon; t < 40; ++t) {
                EXPECT_EQ(moving_average(h, i, t, horizon, 1), last_value(h, i, t, horizon));
            }
        }
    }
}

TEST(Baselines, PropertyNonNegative) {
    const auto data = random_dataset(2, 8, 60);
    for (std::size_t w : kMovingAverageWindows) {
        const auto r = rolling_evaluate(baseline_forecaster({BaselineKind::MovingAverage, w, 4}), data, {10, 60}, 4,
                                        "ma");
        for (const auto& rec : r.records) {
            EXPECT_GE(rec.predicted, 0.0);
        }
    }
}

TEST(Rescale, Examples) {
    const auto a = rescale_to_total(std::vector<double>{0.1, 0.3}, 1.0);
    EXPECT_NEAR(a.values[0], 0.25, 1e-15);
    EXPECT_NEAR(a.values[1], 0.75, 1e-15);
    EXPECT_FALSE(a.degenerate);
    const auto b = rescale_to_total(std::vector<double>{0.25, 0.5}, 0.75);
    EXPECT_DOUBLE_EQ(b.values[0], 0.25);
    EXPECT_DOUBLE_EQ(b.values[1], 0.5);
    const auto c = rescale_to_total(std::vector<double>{0.0, 0.0}, 0.6);
    EXPECT_EQ(c.values, (std::vector<double>{0.0, 0.0}));
    EXPECT_TRUE(c.degenerate);
}

TEST(Rescale, PropertySumsToTarget) {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<double> p(1 + static_cast<std::size_t>(rep % 30));
        for (double& v : p) {
            v = u(gen);
        }
        const double target = u(gen);
        const auto r = rescale_to_total(p, target);
        const double sum = std::accumulate(r.values.begin(), r.values.end(), 0.0);
        EXPECT_NEAR(sum, target, 1e-12 * std::max(target, 1e-300) + 1e-300);
        for (double v : r.values) {
            EXPECT_GE(v, 0.0);
        }
    }
}

TEST(Rescale, WrapperAppliesPerWeekTarget) {
    const auto data = random_dataset(4, 5, 30);
    const auto wrapped = rescaled(baseline_forecaster({BaselineKind::LastValue, 1, 1}),
                                  [](const ForecastContext&) { return 0.5; });
    const auto r = rolling_evaluate(wrapped, data, {5, 30}, 1, "S-LV");
    std::map<std::size_t, double> totals;
    for (const auto& rec : r.records) {
        totals[rec.week] += rec.predicted;
    }
    for (const auto& [week, total] : totals) {
        EXPECT_NEAR(total, 0.5, 1e-12) << week;
    }
}

TEST(Baselines, ConstantSharesGiveZeroError) {
    auto panel = PanelDataset::empty({"a", "b"}, {0, 1, 2, 3, 4, 5, 6, 7}, {});
    for (std::size_t t = 0; t < 8; ++t) {
        panel.available(0, t) = panel.available(1, t) = 1;
        panel.sales(0, t) = 30;
        panel.sales(1, t) = 10;
    }
    const auto data = make_dataset(panel, Scaler{std::vector<double>(8, 100.0)});
    for (std::size_t w : {1U, 2U, 4U}) {
        const auto r = rolling_evaluate(baseline_forecaster({BaselineKind::MovingAverage, w, 2}), data, {2, 8}, 2, "");
        EXPECT_NEAR(r.mape, 0.0, 1e-12);
    }
}

TEST(Baselines, WindowSelectionPicksLowestValidationMape) {
    const auto data = random_dataset(5, 8, 80);
    const auto chosen = select_moving_average(data, {40, 80}, 2);
    const double chosen_mape =
        rolling_evaluate(baseline_forecaster(chosen), data, {40, 80}, 2, chosen.name()).mape;
    for (std::size_t w : kMovingAverageWindows) {
        const double m =
            rolling_evaluate(baseline_forecaster({BaselineKind::MovingAverage, w, 2}), data, {40, 80}, 2, "").mape;
        EXPECT_LE(chosen_mape, m);
    }
    EXPECT_EQ(chosen.kind, BaselineKind::MovingAverage);
    EXPECT_EQ((BaselineModel{BaselineKind::MovingAverage, 13, 1}).name(), "MA(13)");
    EXPECT_EQ(BaselineModel{}.name(), "LV");
}
