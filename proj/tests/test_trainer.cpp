#include "concnn/simulator.hpp"
#include "concnn/trainer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace concnn;
using namespace concnn::testing;

namespace {

Dataset simulated(WeightFunction phi, std::size_t d, std::size_t n, double s, std::uint64_t seed) {
    GenerativeSpec spec;
    spec.phi = std::move(phi);
    spec.scaler = constant_scaler(s, n);
    spec.products = d;
    spec.weeks = n;
    spec.seed = seed;
    const auto sim = simulate(spec);
    return make_dataset(sim.panel, spec.scaler);
}

Dataset standard_data() {
    static const Dataset data = simulated(as_weight_function(analytic_phi(2.0, {1.0}, -0.5)), 10, 80, 500.0, 3);
    return data;
}

TrainConfig quick_config(std::size_t epochs = 8) {
    TrainConfig c;
    c.epochs = epochs;
    c.seed = 5;
    c.optimizer.learning_rate = 1e-2;
    return c;
}

const WeekRange kTrain{0, 50};
const WeekRange kValid{50, 65};

TrainResult fake_result(double mape, bool zero, std::size_t params) {
    TrainResult r;
    r.model.phi.parameters.assign(params, 0.0);
    r.report.valid_mape = {mape + 1.0, mape};
    r.report.selected_epoch = 2;
    r.report.zero_prediction = zero;
    return r;
}

} // namespace

TEST(TrainConfig, EpochsMustBePositive) {
    auto c = quick_config(0);
    try {
        c.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    }
    const auto data = standard_data();
    const auto model = make_model({2, {}}, data, kTrain, 1, 1, Variant::Concurrent, 1);
    EXPECT_THROW(train(model, data, kTrain, kValid, c), Error);
    auto lr = quick_config();
    lr.optimizer.learning_rate = 0.0;
    EXPECT_THROW(lr.validate(), Error);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersUnchanged) {
    for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
        OptimizerConfig config;
        config.kind = kind;
        Optimizer opt(config, 3);
        opt.set_learning_rate(0.0);
        std::vector<double> params{0.5, -1.0, 2.0};
        const auto before = params;
        for (int k = 0; k < 10; ++k) {
            opt.step(params, std::vector<double>{1.0, -3.0, 0.25});
        }
        EXPECT_EQ(params, before);
    }
}

TEST(Optimizer, SgdAndFirstAdamStep) {
    OptimizerConfig sgd{OptimizerKind::Sgd, 0.1};
    Optimizer a(sgd, 2);
    std::vector<double> p{1.0, 1.0};
    a.step(p, std::vector<double>{2.0, -4.0});
    EXPECT_DOUBLE_EQ(p[0], 0.8);
    EXPECT_DOUBLE_EQ(p[1], 1.4);
    // Adam's bias-corrected first step moves each coordinate by about lr * sign(g).
    OptimizerConfig adam;
    adam.learning_rate = 0.01;
    Optimizer b(adam, 2);
    std::vector<double> q{0.0, 0.0};
    b.step(q, std::vector<double>{5.0, -0.2});
    EXPECT_NEAR(q[0], -0.01, 1e-9);
    EXPECT_NEAR(q[1], 0.01, 1e-7);
}

TEST(Train, LossDecreasesOnConstantWeightData) {
    const auto data = simulated([](double, std::span<const double>) { return 1.0; }, 10, 80, 500.0, 8);
    const auto model = make_model({2, {}}, data, kTrain, 1, 1, Variant::Concurrent, 3);
    TrainConfig config;
    config.epochs = 5;
    config.seed = 5;
    const auto result = train(model, data, kTrain, {}, config);
    const auto& loss = result.report.train_loss;
    ASSERT_EQ(loss.size(), 5U);
    for (std::size_t e = 1; e < loss.size(); ++e) {
        EXPECT_LE(loss[e], loss[e - 1] + 1e-9 * std::fabs(loss[e - 1])) << "epoch " << e + 1;
    }
    EXPECT_EQ(result.report.selected_epoch, 5U);
    EXPECT_TRUE(result.report.valid_mape.empty());
}

TEST(Train, DeterministicForFixedSeed) {
    const auto data = standard_data();
    const auto model = make_model({2, {8}}, data, kTrain, 1, 1, Variant::Concurrent, 9);
    const auto a = train(model, data, kTrain, kValid, quick_config());
    const auto b = train(model, data, kTrain, kValid, quick_config());
    EXPECT_TRUE(a.report.same_outcome(b.report));
    EXPECT_EQ(a.model, b.model);
    auto other = quick_config();
    other.seed = 6;
    const auto c = train(model, data, kTrain, kValid, other);
    EXPECT_NE(c.model.phi.parameters, a.model.phi.parameters);
}

TEST(Train, ReportInvariants) {
    const auto data = standard_data();
    for (Variant variant : {Variant::Concurrent, Variant::FeedForwardDirect}) {
        for (LossKind loss : {LossKind::Poisson, LossKind::L1}) {
            auto config = quick_config(6);
            config.variant = variant;
            config.loss = loss;
            const auto model = make_model({2, {8}}, data, kTrain, 1, 1, variant, 2);
            const auto r = train(model, data, kTrain, kValid, config);
            EXPECT_GE(r.report.selected_epoch, 1U);
            EXPECT_LE(r.report.selected_epoch, config.epochs);
            EXPECT_EQ(r.report.train_loss.size(), r.report.valid_mape.size());
            for (double v : r.report.train_loss) {
                EXPECT_TRUE(std::isfinite(v));
            }
            const double best = *std::min_element(r.report.valid_mape.begin(), r.report.valid_mape.end());
            EXPECT_EQ(r.report.valid_mape[r.report.selected_epoch - 1], best);
            EXPECT_EQ(r.model.variant, variant);
        }
    }
}

TEST(Train, FinalLossNotAboveFirstAtDefaultRate) {
    const auto data = standard_data();
    const auto model = make_model({2, {16}}, data, kTrain, 1, 1, Variant::Concurrent, 4);
    TrainConfig config;
    config.epochs = 30;
    config.seed = 1;
    const auto r = train(model, data, kTrain, {}, config);
    EXPECT_LE(r.report.train_loss.back(), r.report.train_loss.front());
}

TEST(Train, EarlyStoppingHonoursPatience) {
    const auto data = standard_data();
    const auto model = make_model({2, {}}, data, kTrain, 1, 1, Variant::Concurrent, 4);
    auto config = quick_config(200);
    config.early_stop_patience = 3;
    const auto r = train(model, data, kTrain, kValid, config);
    EXPECT_LE(r.report.valid_mape.size(), r.report.selected_epoch + 3);
}

TEST(Train, InsufficientHistory) {
    const auto data = standard_data();
    const auto model = make_model({2, {}}, data, kTrain, 1, 1, Variant::Concurrent, 4);
    try {
        train(model, data, {0, 1}, {}, quick_config());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InsufficientHistory);
    }
}

TEST(Train, DivergenceAbortsWithReport) {
    const auto data = standard_data();
    const auto model = make_model({2, {8}}, data, kTrain, 1, 1, Variant::Concurrent, 4);
    auto config = quick_config(3);
    config.optimizer.kind = OptimizerKind::Sgd;
    config.optimizer.learning_rate = 1e300;
    try {
        train(model, data, kTrain, kValid, config);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.code(), ErrorCode::DivergedLoss);
        ASSERT_FALSE(e.report().train_loss.empty());
        EXPECT_TRUE(std::isnan(e.report().train_loss.back()));
    }
}

TEST(Selection, GridOfOneReturnsThatModel) {
    const auto data = standard_data();
    const std::vector<Architecture> grid{{2, {8}}};
    const auto sel = select_model(grid, data, kTrain, kValid, 1, 1, quick_config());
    EXPECT_EQ(sel.best_index, 0U);
    ASSERT_EQ(sel.candidates.size(), 1U);
    EXPECT_EQ(sel.best.model.phi.architecture, grid[0]);
    EXPECT_EQ(sel.best.model, sel.candidates[0].result->model);
}

TEST(Selection, IdenticalArchitecturesPickLowerValidationMape) {
    const auto data = standard_data();
    const std::vector<Architecture> grid{{2, {8}}, {2, {8}}};
    const auto sel = select_model(grid, data, kTrain, kValid, 1, 1, quick_config(4));
    const auto mape_of = [](const TrainResult& r) { return r.report.valid_mape[r.report.selected_epoch - 1]; };
    const double m0 = mape_of(*sel.candidates[0].result);
    const double m1 = mape_of(*sel.candidates[1].result);
    EXPECT_NE(sel.candidates[0].result->model.phi.parameters, sel.candidates[1].result->model.phi.parameters);
    EXPECT_EQ(sel.best_index, m1 < m0 ? 1U : 0U);
}

TEST(Selection, RankingRule) {
    const auto good_zero = fake_result(1.0, true, 5);
    const auto bad = fake_result(80.0, false, 50);
    EXPECT_TRUE(ranks_before(bad, 1, good_zero, 0));
    EXPECT_FALSE(ranks_before(good_zero, 0, bad, 1));
    // Ties on MAPE: fewer parameters, then earlier position.
    const auto small = fake_result(10.0, false, 5);
    const auto large = fake_result(10.0, false, 9);
    EXPECT_TRUE(ranks_before(small, 3, large, 0));
    EXPECT_TRUE(ranks_before(small, 0, small, 1));
    EXPECT_FALSE(ranks_before(small, 1, small, 0));
    EXPECT_TRUE(ranks_before(fake_result(9.0, false, 50), 4, small, 0));
}

TEST(Selection, EmptyGridRejected) {
    const auto data = standard_data();
    EXPECT_THROW(select_model(std::vector<Architecture>{}, data, kTrain, kValid, 1, 1, quick_config()), Error);
}

TEST(Pretrain, ZeroEpochTransferCopiesPhi) {
    const auto data = standard_data();
    auto ff_config = quick_config(4);
    ff_config.variant = Variant::FeedForwardDirect;
    ff_config.loss = LossKind::L1;
    const auto ff = train(make_model({2, {8}}, data, kTrain, 1, 1, Variant::FeedForwardDirect, 2), data, kTrain,
                          kValid, ff_config);
    const auto target = make_model({2, {8}}, data, kTrain, 1, 1, Variant::Concurrent, 7);
    auto copy = quick_config();
    copy.epochs = 0;
    const auto out = pretrain_transfer(ff, target, data, kTrain, kValid, copy);
    EXPECT_EQ(out.model.phi, ff.model.phi);
    EXPECT_EQ(out.model.variant, Variant::ConcurrentPretrained);
    for (const auto& b : build_batches(data, kValid, 1, 1)) {
        EXPECT_EQ(batch_weights(out.model.phi, b), batch_weights(ff.model.phi, b));
    }
    const auto tuned = pretrain_transfer(ff, target, data, kTrain, kValid, quick_config(3));
    EXPECT_EQ(tuned.model.variant, Variant::ConcurrentPretrained);
    EXPECT_GE(tuned.report.selected_epoch, 1U);
}

TEST(Pretrain, ArchitectureMismatch) {
    const auto data = standard_data();
    TrainResult ff;
    ff.model = make_model({2, {8}}, data, kTrain, 1, 1, Variant::FeedForwardDirect, 2);
    const auto target = make_model({2, {16}}, data, kTrain, 1, 1, Variant::Concurrent, 7);
    try {
        pretrain_transfer(ff, target, data, kTrain, kValid, quick_config());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ArchitectureMismatch);
    }
}

TEST(Pretrain, FlagsPropagate) {
    const auto data = standard_data();
    const auto target = make_model({2, {}}, data, kTrain, 1, 1, Variant::Concurrent, 7);
    auto copy = quick_config();
    copy.epochs = 0;

    TrainResult zero;
    zero.model = target;
    zero.report.zero_prediction = true;
    const auto a = pretrain_transfer(zero, target, data, kTrain, kValid, copy);
    EXPECT_TRUE(a.report.zero_prediction);
    EXPECT_FALSE(a.report.small_weights);

    TrainResult tiny;
    tiny.model = target;
    tiny.model.phi.parameters.back() = -40.0;
    const auto b = pretrain_transfer(tiny, target, data, kTrain, kValid, copy);
    EXPECT_TRUE(b.report.small_weights);
    EXPECT_TRUE(b.report.zero_prediction);
}

TEST(MakeModel, FitsNormalizerAndNamesFeatures) {
    const auto data = standard_data();
    const auto m = make_model({99, {8}}, data, kTrain, 2, 3, Variant::Concurrent, 1);
    EXPECT_EQ(m.phi.architecture.input_dim, 4U);
    EXPECT_EQ(m.features, (std::vector<std::string>{"lag1", "lag2", "lag3", "theta1"}));
    EXPECT_EQ(m.alpha, 1.0);
    EXPECT_GT(m.phi.normalizer.scale[0], 0.0);
    EXPECT_NE(m.phi.normalizer.mean[0], 0.0);
    EXPECT_EQ(make_model({1, {}}, data, kTrain, 12, 1, Variant::Concurrent, 1).alpha, 0.8);
    const auto grid = default_grid(2);
    EXPECT_EQ(grid.size(), 10U);
    for (const auto& a : grid) {
        EXPECT_NO_THROW(a.validate());
    }
}
