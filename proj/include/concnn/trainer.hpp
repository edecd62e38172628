#pragma once

#include "concnn/concurrent.hpp"
#include "concnn/data.hpp"
#include "concnn/error.hpp"
#include "concnn/evaluation.hpp"
#include "concnn/neuralnet.hpp"
#include "concnn/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace concnn {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Plain SGD or Adam over a flat parameter vector.
class Optimizer {
public:
    Optimizer(const OptimizerConfig& config, std::size_t size)
        : config_(config), learning_rate_(config.learning_rate), m_(size, 0.0), v_(size, 0.0) {}

    void set_learning_rate(double lr) noexcept { learning_rate_ = lr; }

    void step(std::span<double> params, std::span<const double> grad) {
        const double lr = learning_rate_;
        if (config_.kind == OptimizerKind::Sgd) {
            for (std::size_t k = 0; k < params.size(); ++k) {
                params[k] -= lr * grad[k];
            }
            return;
        }
        ++t_;
        const double b1 = config_.beta1;
        const double b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            m_[k] = b1 * m_[k] + (1.0 - b1) * grad[k];
            v_[k] = b2 * v_[k] + (1.0 - b2) * grad[k] * grad[k];
            params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + config_.epsilon);
        }
    }

private:
    OptimizerConfig config_;
    double learning_rate_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t t_ = 0;
};

struct TrainConfig {
    LossKind loss = LossKind::Poisson;
    Variant variant = Variant::Concurrent;
    OptimizerConfig optimizer;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    std::size_t early_stop_patience = 10;
    bool weight_by_scale = false; // multiply each week's loss by s(t)
    double learning_rate_decay = 0.0; // epoch e runs at lr / (1 + decay * (e - 1))

    void validate() const {
        require(optimizer.learning_rate > 0.0, ErrorCode::InvalidConfig, "learning rate must be positive");
        require(epochs >= 1, ErrorCode::InvalidConfig, "epochs must be at least 1");
        require(learning_rate_decay >= 0.0, ErrorCode::InvalidConfig, "learning-rate decay must be non-negative");
        require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0,
                ErrorCode::InvalidConfig, "Adam betas must lie in [0, 1)");
    }
};

struct TrainReport {
    std::vector<double> train_loss;  // mean loss per cell, per epoch
    std::vector<double> valid_mape;  // per epoch; empty without a validation range
    std::size_t selected_epoch = 0;  // 1-based
    double wall_seconds = 0.0;
    bool zero_prediction = false;
    bool small_weights = false;      // set by pretrain_transfer
    std::size_t clamped_predictions = 0;

    /// Equality of everything the run determines; wall time is excluded.
    [[nodiscard]] bool same_outcome(const TrainReport& o) const {
        return train_loss == o.train_loss && valid_mape == o.valid_mape && selected_epoch == o.selected_epoch &&
               zero_prediction == o.zero_prediction && small_weights == o.small_weights &&
               clamped_predictions == o.clamped_predictions;
    }
};

struct TrainResult {
    ConcurrentModel model;
    TrainReport report;
};

/// Raised when a loss turns non-finite; carries the epochs completed so far.
class TrainingError : public Error {
public:
    TrainingError(ErrorCode code, const std::string& message, TrainReport report)
        : Error(code, message), report_(std::move(report)) {}

    [[nodiscard]] const TrainReport& report() const noexcept { return report_; }

private:
    TrainReport report_;
};

/// Fresh model for `arch` with its feature normalizer fitted on the training
/// inputs.
inline ConcurrentModel make_model(const Architecture& arch, const Dataset& data, WeekRange train, std::size_t horizon,
                                  std::size_t lag_count, Variant variant, std::uint64_t seed,
                                  std::optional<double> alpha = std::nullopt) {
    Architecture a = arch;
    a.input_dim = lag_count + data.panel.covariate_count();
    ConcurrentModel model;
    model.phi = init_params(a, seed);
    model.horizon = horizon;
    model.lag_count = lag_count;
    model.variant = variant;
    model.alpha = alpha.value_or(default_alpha(horizon));
    model.features = feature_names(lag_count, data.panel.covariate_names);
    std::vector<double> rows;
    for (const auto& batch : build_batches(data, train, horizon, lag_count)) {
        rows.insert(rows.end(), batch.features.begin(), batch.features.end());
    }
    model.phi.normalizer = FeatureNormalizer::fit(rows, a.input_dim);
    model.validate();
    return model;
}

/// Ten candidates: no hidden layer, then 1-3 hidden layers of width 8, 16, 32.
inline std::vector<Architecture> default_grid(std::size_t input_dim) {
    std::vector<Architecture> grid{{input_dim, {}}};
    for (std::size_t depth = 1; depth <= 3; ++depth) {
        for (std::size_t width : {8, 16, 32}) {
            grid.push_back({input_dim, std::vector<std::size_t>(depth, width)});
        }
    }
    return grid;
}

inline constexpr std::uint64_t kShuffleStream = 0x5f0ffULL;

/// Empirical risk minimization over week batches presented in a seeded
/// random order each epoch. Returns the parameters of the epoch with the best
/// validation MAPE (the last epoch when `valid` is empty).
inline TrainResult train(const ConcurrentModel& initial, const Dataset& data, WeekRange train_range, WeekRange valid,
                         const TrainConfig& config) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    ConcurrentModel model = initial;
    model.variant = config.variant;
    model.validate();
    const std::size_t h = model.horizon;
    const std::size_t k = model.lag_count;
    require(train_range.size() >= h + k, ErrorCode::InsufficientHistory,
            fmt::format("{} training weeks for horizon {} and {} lags", train_range.size(), h, k));
    const auto batches = build_batches(data, train_range, h, k);
    require(!batches.empty(), ErrorCode::InsufficientHistory, "no training week has lagged data");
    std::size_t cells = 0;
    for (const auto& b : batches) {
        cells += b.size();
    }

    TrainResult result{model, {}};
    auto& report = result.report;
    Optimizer optimizer(config.optimizer, model.phi.parameters.size());
    std::vector<std::size_t> order(batches.size());
    std::iota(order.begin(), order.end(), 0);
    const bool validating = valid.size() > 0;
    double best_mape = 0.0;
    std::size_t since_best = 0;

    auto validation_mape = [&](const ConcurrentModel& m) {
        return rolling_evaluate(model_forecaster(m), data, valid, h, "valid").mape;
    };

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng rng = Rng::substream(config.seed, {kShuffleStream, epoch});
        shuffle(std::span(order), rng);
        optimizer.set_learning_rate(config.optimizer.learning_rate /
                                    (1.0 + config.learning_rate_decay * static_cast<double>(epoch - 1)));
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            const auto g = batch_gradient(model, batches[idx], config.loss, config.weight_by_scale);
            report.clamped_predictions += g.clamped;
            bool finite = std::isfinite(g.loss);
            for (double v : g.parameters) {
                finite = finite && std::isfinite(v);
            }
            if (!finite) {
                report.train_loss.push_back(std::nan(""));
                throw TrainingError(ErrorCode::DivergedLoss,
                                    fmt::format("non-finite loss in epoch {} week {}", epoch, batches[idx].week),
                                    report);
            }
            epoch_loss += g.loss;
            optimizer.step(model.phi.parameters, g.parameters);
        }
        report.train_loss.push_back(epoch_loss / static_cast<double>(cells));

        if (!validating) {
            result.model = model;
            report.selected_epoch = epoch;
            continue;
        }
        const double m = validation_mape(model);
        report.valid_mape.push_back(m);
        if (epoch == 1 || m < best_mape) {
            best_mape = m;
            since_best = 0;
            result.model = model;
            report.selected_epoch = epoch;
        } else if (++since_best >= config.early_stop_patience) {
            break;
        }
    }

    WeekRange check = validating ? valid : train_range;
    check.begin = std::max(check.begin, h);
    const auto eval = rolling_evaluate(model_forecaster(result.model), data, check, h, "check");
    report.zero_prediction = eval.zero_prediction;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

struct CandidateOutcome {
    Architecture architecture;
    std::optional<TrainResult> result; // empty when training diverged
    std::string failure;
};

struct SelectionResult {
    TrainResult best;
    std::size_t best_index = 0;
    std::vector<CandidateOutcome> candidates;
};

/// Selection order between two trained candidates at grid positions ai and
/// bi: non-zero-prediction first, then lower validation MAPE at the selected
/// epoch, then fewer parameters, then earlier grid position.
inline bool ranks_before(const TrainResult& a, std::size_t ai, const TrainResult& b, std::size_t bi) {
    if (a.report.zero_prediction != b.report.zero_prediction) {
        return !a.report.zero_prediction;
    }
    const double ma = a.report.valid_mape[a.report.selected_epoch - 1];
    const double mb = b.report.valid_mape[b.report.selected_epoch - 1];
    if (ma != mb) {
        return ma < mb;
    }
    const auto pa = a.model.phi.parameters.size();
    const auto pb = b.model.phi.parameters.size();
    if (pa != pb) {
        return pa < pb;
    }
    return ai < bi;
}

/// Trains every grid candidate (seeded by its grid index) and keeps the one
/// with the lowest validation MAPE. Zero-prediction candidates rank after all
/// others; ties go to fewer parameters, then earlier grid position.
inline SelectionResult select_model(std::span<const Architecture> grid, const Dataset& data, WeekRange train_range,
                                    WeekRange valid, std::size_t horizon, std::size_t lag_count,
                                    const TrainConfig& config, std::optional<double> alpha = std::nullopt) {
    require(!grid.empty(), ErrorCode::InvalidConfig, "empty architecture grid");
    require(valid.size() > 0, ErrorCode::InvalidSplit, "model selection needs a validation range");
    SelectionResult out;
    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        TrainConfig candidate_config = config;
        candidate_config.seed = mix64(config.seed ^ mix64(g + 1));
        CandidateOutcome outcome{grid[g], std::nullopt, {}};
        try {
            const auto initial = make_model(grid[g], data, train_range, horizon, lag_count, config.variant,
                                            candidate_config.seed, alpha);
            outcome.result = train(initial, data, train_range, valid, candidate_config);
        } catch (const TrainingError& e) {
            outcome.failure = e.what();
        }
        if (outcome.result &&
            (!best || ranks_before(*outcome.result, g, *out.candidates[*best].result, *best))) {
            best = g;
        }
        out.candidates.push_back(std::move(outcome));
    }
    require(best.has_value(), ErrorCode::AllCandidatesDiverged, "every grid candidate diverged");
    out.best_index = *best;
    out.best = *out.candidates[*best].result;
    return out;
}

/// Weights below this mean total per week count as "too small" after a
/// transfer; the normalized predictions then collapse towards zero.
inline constexpr double kSmallWeightTotal = 1e-2;

/// Starts a concurrent model from a trained feed-forward net and fine-tunes
/// it under normalization. config.epochs == 0 returns the transferred model
/// untouched.
inline TrainResult pretrain_transfer(const TrainResult& feedforward, const ConcurrentModel& target,
                                     const Dataset& data, WeekRange train_range, WeekRange valid,
                                     const TrainConfig& config) {
    require(feedforward.model.phi.architecture == target.phi.architecture, ErrorCode::ArchitectureMismatch,
            fmt::format("{} vs {}", feedforward.model.phi.architecture.describe(),
                        target.phi.architecture.describe()));
    ConcurrentModel model = target;
    model.phi = feedforward.model.phi;
    model.variant = Variant::ConcurrentPretrained;

    double weight_total = 0.0;
    const auto batches = build_batches(data, train_range, model.horizon, model.lag_count);
    for (const auto& b : batches) {
        for (double w : batch_weights(model.phi, b)) {
            weight_total += w;
        }
    }
    const bool small = batches.empty() || weight_total / static_cast<double>(batches.size()) < kSmallWeightTotal;

    TrainResult out;
    if (config.epochs == 0) {
        out.model = model;
        out.report.selected_epoch = 0;
    } else {
        TrainConfig tuned = config;
        tuned.variant = Variant::ConcurrentPretrained;
        out = train(model, data, train_range, valid, tuned);
    }
    out.report.small_weights = small;
    out.report.zero_prediction = out.report.zero_prediction || feedforward.report.zero_prediction || small;
    return out;
}

} // namespace concnn
