#include "concnn/data.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <random>
#include <sstream>

using namespace concnn;
using concnn::testing::TempDir;

namespace {

PanelDataset panel_from_text(const std::string& text, PanelSchema schema = {}) {
    std::istringstream in(text);
    return panel_from_table(csv::read(in), schema);
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorCode::InvalidConfig;
}

/// Two-product panel whose weekly totals are `totals`.
PanelDataset totals_panel(const std::vector<std::int64_t>& totals) {
    std::vector<std::int64_t> weeks(totals.size());
    std::iota(weeks.begin(), weeks.end(), 0);
    auto panel = PanelDataset::empty({"A", "B"}, weeks, {});
    for (std::size_t t = 0; t < totals.size(); ++t) {
        panel.available(0, t) = 1;
        panel.available(1, t) = 1;
        panel.sales(0, t) = totals[t] / 2;
        panel.sales(1, t) = totals[t] - totals[t] / 2;
    }
    return panel;
}

} // namespace

TEST(LoadPanel, FullGridIsDenseAndAvailable) {
    TempDir dir;
    const auto path = dir.write("p.csv", "product_id,week,sales,price\n"
                                         "A,1,3,9.5\nB,1,4,10\nA,2,5,9.5\nB,2,0,10\nA,3,1,8\nB,3,2,11\n");
    PanelSchema schema;
    schema.covariate_columns = {"price"};
    const auto panel = load_panel(path, schema);
    EXPECT_EQ(panel.products(), 2U);
    EXPECT_EQ(panel.week_count(), 3U);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t t = 0; t < 3; ++t) {
            EXPECT_TRUE(panel.is_available(i, t));
        }
    }
    EXPECT_EQ(panel.sales(0, 1), 5);
    EXPECT_EQ(panel.sales(1, 1), 0);
    EXPECT_DOUBLE_EQ(panel.covariates_at(1, 2)[0], 11.0);
}

TEST(LoadPanel, MissingRowMeansNotOffered) {
    const auto panel = panel_from_text("product_id,week,sales\nA,1,3\nB,1,4\nA,2,5\nA,3,1\nB,3,2\n");
    EXPECT_FALSE(panel.is_available(1, 1));
    EXPECT_EQ(panel.sales(1, 1), 0);
    EXPECT_TRUE(panel.is_available(1, 2));
}

TEST(LoadPanel, ConflictingDuplicateIsRejected) {
    EXPECT_EQ(code_of([] { panel_from_text("product_id,week,sales\nA,1,3\nA,1,5\n"); }),
              ErrorCode::ConflictingDuplicate);
}

TEST(LoadPanel, IdenticalDuplicateIsMerged) {
    const auto panel = panel_from_text("product_id,week,sales\nA,1,3\nA,1,3\nA,2,1\n");
    EXPECT_EQ(panel.products(), 1U);
    EXPECT_EQ(panel.sales(0, 0), 3);
}

TEST(LoadPanel, ErrorPaths) {
    EXPECT_EQ(code_of([] { panel_from_text("product_id,week\nA,1\n"); }), ErrorCode::MissingColumn);
    EXPECT_EQ(code_of([] { panel_from_text("product_id,week,sales\nA,1,-2\n"); }), ErrorCode::NegativeSales);
    EXPECT_EQ(code_of([] { panel_from_text("product_id,week,sales\n"); }), ErrorCode::EmptyFile);
    EXPECT_EQ(code_of([] { panel_from_text(""); }), ErrorCode::EmptyFile);
    EXPECT_EQ(code_of([] { panel_from_text("product_id,week,sales\nA,1,2.5\n"); }), ErrorCode::MalformedValue);
    PanelSchema schema;
    schema.covariate_columns = {"price"};
    EXPECT_EQ(code_of([&] { panel_from_text("product_id,week,sales\nA,1,2\n", schema); }), ErrorCode::MissingColumn);
}

TEST(LoadPanel, GapWeeksBecomeUnavailableColumns) {
    const auto panel = panel_from_text("product_id,week,sales\nA,10,1\nA,13,2\n");
    ASSERT_EQ(panel.week_count(), 4U);
    EXPECT_EQ(panel.weeks.front(), 10);
    EXPECT_FALSE(panel.is_available(0, 1));
    EXPECT_FALSE(panel.is_available(0, 2));
    EXPECT_EQ(panel.sales(0, 3), 2);
}

TEST(LoadPanel, IsoDatesMapToConsecutiveWeeks) {
    const auto panel = panel_from_text("product_id,week,sales\nA,2024-01-04,1\nA,2024-01-11,2\nA,2024-01-18,3\n");
    ASSERT_EQ(panel.week_count(), 3U);
    EXPECT_EQ(panel.weeks[1] - panel.weeks[0], 1);
    EXPECT_EQ(panel.sales(0, 2), 3);
    EXPECT_EQ(code_of([] { panel_from_text("product_id,week,sales\nA,2024-02-30,1\n"); }),
              ErrorCode::MalformedValue);
}

TEST(LoadPanel, OracleColumnAndCustomNames) {
    PanelSchema schema;
    schema.product_column = "sku";
    schema.week_column = "wk";
    schema.sales_column = "units";
    const auto panel = panel_from_text("sku,wk,units,s_oracle\n\"X,1\",0,3,50\nY,0,2,50\nY,1,4,60\n", schema);
    EXPECT_EQ(panel.product_ids[0], "X,1");
    ASSERT_EQ(panel.oracle_scaler.size(), 2U);
    EXPECT_DOUBLE_EQ(panel.oracle_scaler[1], 60.0);
}

TEST(LoadPanel, CsvRoundTrip) {
    const auto panel = panel_from_text("product_id,week,sales,p\nA,0,3,0.1\nB,0,4,0.30000000000000004\nA,1,5,1e-7\n",
                                       PanelSchema{.covariate_columns = {"p"}});
    std::ostringstream out;
    write_panel_csv(out, panel);
    std::istringstream in(out.str());
    const auto again = panel_from_table(csv::read(in), PanelSchema{.covariate_columns = {"p"}});
    EXPECT_EQ(again.sales, panel.sales);
    EXPECT_EQ(again.available, panel.available);
    EXPECT_EQ(again.covariates, panel.covariates);
}

TEST(Scaler, TotalActual) {
    const auto s = compute_scaler(totals_panel({10, 20, 30}), {.method = ScalerMethod::TotalActual});
    EXPECT_EQ(s.values, (std::vector<double>{10, 20, 30}));
}

TEST(Scaler, TrailingMovingAverageWarmUp) {
    const auto s =
        compute_scaler(totals_panel({10, 20, 30}), {.method = ScalerMethod::TrailingMovingAverage, .window = 2});
    EXPECT_EQ(s.values, (std::vector<double>{10, 10, 15}));
}

TEST(Scaler, FloorClampsDeadWeeks) {
    const auto s = compute_scaler(totals_panel({0, 5}), {.method = ScalerMethod::TotalActual, .floor = 1.0});
    EXPECT_EQ(s.values, (std::vector<double>{1, 5}));
}

TEST(Scaler, OracleIsVerbatimAndMustBePositive) {
    const auto panel = totals_panel({1, 2, 3});
    const std::vector<double> oracle{0.5, 7.25, 1e6};
    const auto s = compute_scaler(panel, {.method = ScalerMethod::Oracle, .oracle = oracle});
    EXPECT_EQ(s.values, oracle);
    EXPECT_EQ(code_of([&] { compute_scaler(panel, {.method = ScalerMethod::Oracle, .oracle = {1, 0, 2}}); }),
              ErrorCode::NonPositiveOracleValue);
    EXPECT_EQ(code_of([&] { compute_scaler(panel, {.method = ScalerMethod::Oracle, .oracle = {1, -3, 2}}); }),
              ErrorCode::NonPositiveOracleValue);
}

TEST(Scaler, WindowErrors) {
    const auto panel = totals_panel({1, 2, 3});
    EXPECT_EQ(code_of([&] { compute_scaler(panel, {.method = ScalerMethod::TrailingMovingAverage, .window = 4}); }),
              ErrorCode::WindowTooLarge);
    EXPECT_EQ(code_of([&] { compute_scaler(panel, {.method = ScalerMethod::TrailingMovingAverage, .window = 0}); }),
              ErrorCode::WindowTooLarge);
}

TEST(Scaler, RatioBound) {
    Scaler s{{100, 200, 100, 150}};
    EXPECT_DOUBLE_EQ(s.ratio_bound(), 2.0);
    EXPECT_DOUBLE_EQ((Scaler{{5}}).ratio_bound(), 1.0);
    EXPECT_DOUBLE_EQ((Scaler{{5, 4, 3}}).ratio_bound(), 0.8);
}

TEST(MarketShares, Examples) {
    auto panel = totals_panel({10, 0});
    panel.sales(0, 0) = 5;
    panel.sales(1, 0) = 5;
    const auto shares = market_shares(panel, Scaler{{100, 3}}).shares;
    EXPECT_DOUBLE_EQ(shares(0, 0), 0.05);
    EXPECT_DOUBLE_EQ(shares(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(shares(1, 1), 0.0);
    EXPECT_EQ(code_of([&] { market_shares(panel, Scaler{{100}}); }), ErrorCode::LengthMismatch);
}

TEST(MarketShares, ColumnSumsAreOneWhenScalerIsTheTotal) {
    const auto panel = totals_panel({7, 13, 1000});
    const auto shares = market_shares(panel, compute_scaler(panel, {.method = ScalerMethod::TotalActual})).shares;
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_NEAR(shares(0, t) + shares(1, t), 1.0, 1e-15);
    }
}

TEST(MarketShares, PropertyRoundTripRecoversSales) {
    std::mt19937_64 gen(2024);
    std::uniform_int_distribution<std::int64_t> count(0, 100000);
    std::uniform_real_distribution<double> scale(0.01, 1e7);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t d = 1 + rep % 7;
        const std::size_t n = 2 + rep % 11;
        std::vector<std::int64_t> weeks(n);
        std::iota(weeks.begin(), weeks.end(), 0);
        auto panel = PanelDataset::empty(std::vector<std::string>(d, "x"), weeks, {});
        Scaler s;
        for (std::size_t t = 0; t < n; ++t) {
            s.values.push_back(scale(gen));
            for (std::size_t i = 0; i < d; ++i) {
                panel.available(i, t) = 1;
                panel.sales(i, t) = count(gen);
            }
        }
        const auto shares = market_shares(panel, s).shares;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t t = 0; t < n; ++t) {
                const double back = shares(i, t) * s.values[t];
                const double x = static_cast<double>(panel.sales(i, t));
                EXPECT_LE(std::fabs(back - x), 1e-12 * std::max(1.0, x));
                EXPECT_GE(shares(i, t), 0.0);
            }
        }
    }
}

TEST(Scaler, PropertyTotalActualMatchesColumnSumsWhereUnclamped) {
    std::mt19937_64 gen(99);
    std::uniform_int_distribution<std::int64_t> count(0, 3);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 3 + rep;
        std::vector<std::int64_t> weeks(n);
        std::iota(weeks.begin(), weeks.end(), 0);
        auto panel = PanelDataset::empty({"a", "b", "c"}, weeks, {});
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t i = 0; i < 3; ++i) {
                panel.available(i, t) = 1;
                panel.sales(i, t) = count(gen);
            }
        }
        const auto s = compute_scaler(panel, {.method = ScalerMethod::TotalActual, .floor = 1.0});
        for (std::size_t t = 0; t < n; ++t) {
            const double sum = static_cast<double>(panel.sales(0, t) + panel.sales(1, t) + panel.sales(2, t));
            if (sum >= 1.0) {
                EXPECT_EQ(s.values[t], sum);
            } else {
                EXPECT_EQ(s.values[t], 1.0);
            }
        }
    }
}

TEST(Split, SizesAndErrors) {
    const auto v = split(208, {156, 182, 208});
    EXPECT_EQ(v.train.size(), 156U);
    EXPECT_EQ(v.valid.size(), 26U);
    EXPECT_EQ(v.test.size(), 26U);
    EXPECT_EQ(code_of([] { split(208, {182, 182, 208}); }), ErrorCode::InvalidSplit);
    EXPECT_EQ(code_of([] { split(208, {190, 182, 208}); }), ErrorCode::InvalidSplit);
    EXPECT_EQ(code_of([] { split(208, {100, 182, 209}); }), ErrorCode::InvalidSplit);
    EXPECT_EQ(code_of([] { split(208, {0, 182, 200}); }), ErrorCode::InvalidSplit);
}

TEST(Split, PropertyPartitionWithoutGapOrOverlap) {
    for (std::size_t a = 1; a < 12; ++a) {
        for (std::size_t b = a + 1; b < 14; ++b) {
            for (std::size_t c = b + 1; c <= 15; ++c) {
                const auto v = split(15, {a, b, c});
                EXPECT_EQ(v.train.begin, 0U);
                EXPECT_EQ(v.train.end, v.valid.begin);
                EXPECT_EQ(v.valid.end, v.test.begin);
                EXPECT_EQ(v.test.end, c);
                EXPECT_EQ(v.train.size() + v.valid.size() + v.test.size(), c);
            }
        }
    }
}

TEST(Split, LagAtHorizonFourReadsTheValidationPeriod) {
    const auto views = split(20, {10, 14, 20});
    auto panel = totals_panel(std::vector<std::int64_t>(20, 4));
    const auto data = make_dataset(panel, Scaler{std::vector<double>(20, 4.0)});
    const std::size_t h = 4;
    const std::size_t t = views.test.begin;
    ASSERT_TRUE(data.has_lag(0, t, h));
    EXPECT_GE(t - h, views.valid.begin);
    EXPECT_LT(t - h, views.valid.end);
}

TEST(Dataset, LaunchGovernsLagAvailability) {
    auto panel = panel_from_text("product_id,week,sales\nA,0,1\nA,1,1\nA,2,1\nA,3,1\nB,2,4\nB,3,4\n");
    const auto data = make_dataset(panel, Scaler{{10, 10, 10, 10}});
    EXPECT_EQ(data.launch[1], 2U);
    EXPECT_TRUE(data.has_lag(0, 1, 1));
    EXPECT_FALSE(data.has_lag(1, 2, 1));
    EXPECT_TRUE(data.has_lag(1, 3, 1));
    EXPECT_FALSE(data.has_lag(1, 3, 2));
    EXPECT_FALSE(data.has_lag(0, 0, 1));
}

TEST(PanelDataset, ValidateRejectsBrokenInvariants) {
    auto panel = totals_panel({1, 2});
    panel.available(0, 1) = 0;
    EXPECT_EQ(code_of([&] { panel.validate(); }), ErrorCode::MalformedValue);
    panel = totals_panel({1, 2});
    panel.weeks = {3, 3};
    EXPECT_EQ(code_of([&] { panel.validate(); }), ErrorCode::MalformedValue);
}
