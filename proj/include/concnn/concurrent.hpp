#pragma once

#include "concnn/data.hpp"
#include "concnn/error.hpp"
#include "concnn/neuralnet.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace concnn {

enum class LossKind { L1, Poisson };

/// How predictions are formed from phi. FeedForwardDirect uses phi's output
/// as the share itself; the concurrent variants normalize across products.
enum class Variant { FeedForwardDirect, Concurrent, ConcurrentPretrained };

inline std::string_view to_string(LossKind loss) { return loss == LossKind::L1 ? "l1" : "poisson"; }

inline std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::FeedForwardDirect: return "feedforward";
    case Variant::Concurrent: return "concurrent";
    case Variant::ConcurrentPretrained: return "pretrained";
    }
    return "concurrent";
}

inline LossKind parse_loss(std::string_view text) {
    if (text == "l1") {
        return LossKind::L1;
    }
    if (text == "poisson") {
        return LossKind::Poisson;
    }
    fail(ErrorCode::InvalidConfig, fmt::format("unknown loss '{}' (l1|poisson)", text));
}

inline Variant parse_variant(std::string_view text) {
    if (text == "feedforward" || text == "ff-nn") {
        return Variant::FeedForwardDirect;
    }
    if (text == "concurrent" || text == "conc-nn") {
        return Variant::Concurrent;
    }
    if (text == "pretrained" || text == "pre-conc-nn") {
        return Variant::ConcurrentPretrained;
    }
    fail(ErrorCode::InvalidConfig, fmt::format("unknown variant '{}' (feedforward|concurrent|pretrained)", text));
}

/// Scale factor policy: 1 up to an 8-week horizon, 0.8 beyond.
inline double default_alpha(std::size_t horizon) noexcept { return horizon <= 8 ? 1.0 : 0.8; }

/// Input names in phi's feature order: lag1..lagk, then covariates.
inline std::vector<std::string> feature_names(std::size_t lag_count, const std::vector<std::string>& covariates) {
    std::vector<std::string> names;
    for (std::size_t j = 1; j <= lag_count; ++j) {
        names.push_back("lag" + std::to_string(j));
    }
    names.insert(names.end(), covariates.begin(), covariates.end());
    return names;
}

struct ConcurrentModel {
    WeightNet phi;
    double alpha = 1.0;
    std::size_t horizon = 1;
    std::size_t lag_count = 1;
    Variant variant = Variant::Concurrent;
    std::vector<std::string> features;

    void validate() const {
        phi.validate();
        require(alpha > 0.0 && alpha <= 1.0, ErrorCode::InvalidConfig, fmt::format("alpha {} outside (0, 1]", alpha));
        require(horizon >= 1, ErrorCode::InvalidConfig, "horizon must be at least 1");
        require(lag_count >= 1, ErrorCode::InvalidConfig, "lag count must be at least 1");
        require(features.empty() || features.size() == phi.architecture.input_dim, ErrorCode::InvalidConfig,
                "feature names do not match phi's input dimension");
    }

    bool operator==(const ConcurrentModel&) const = default;
};

/// One week of training or evaluation data: the products offered at `week`
/// that also have a lagged observation, with their phi inputs and targets.
struct WeekBatch {
    std::size_t week = 0;
    std::size_t feature_dim = 0;
    std::vector<std::size_t> active;
    std::vector<double> features; // active.size() x feature_dim
    std::vector<double> targets;
    double scale = 1.0; // s(week), for optionally weighted losses

    [[nodiscard]] std::size_t size() const noexcept { return active.size(); }
    [[nodiscard]] bool empty() const noexcept { return active.empty(); }
    [[nodiscard]] std::span<const double> input(std::size_t k) const noexcept {
        return {features.data() + k * feature_dim, feature_dim};
    }
};

/// Lagged shares y_{i,t-h}, ..., y_{i,t-h-k+1} (zero before the panel start)
/// followed by the covariates at t.
inline void append_features(const Dataset& data, std::size_t i, std::size_t t, std::size_t h, std::size_t k,
                            std::vector<double>& out) {
    for (std::size_t j = 0; j < k; ++j) {
        const std::size_t back = h + j;
        out.push_back(t >= back ? data.share(i, t - back) : 0.0);
    }
    const auto theta = data.panel.covariates_at(i, t);
    out.insert(out.end(), theta.begin(), theta.end());
}

/// Builds the batch for week t. Reads shares only at weeks <= t - h, plus
/// the targets y_{i,t}.
inline WeekBatch build_week_batch(const Dataset& data, std::size_t t, std::size_t h, std::size_t k) {
    WeekBatch batch;
    batch.week = t;
    batch.feature_dim = k + data.panel.covariate_count();
    batch.scale = data.scaler.values[t];
    for (std::size_t i = 0; i < data.panel.products(); ++i) {
        if (!data.has_lag(i, t, h)) {
            continue;
        }
        batch.active.push_back(i);
        append_features(data, i, t, h, k, batch.features);
        batch.targets.push_back(data.share(i, t));
    }
    return batch;
}

inline std::vector<WeekBatch> build_batches(const Dataset& data, WeekRange range, std::size_t h, std::size_t k) {
    std::vector<WeekBatch> batches;
    for (std::size_t t = range.begin; t < range.end; ++t) {
        if (t < h) {
            continue;
        }
        auto batch = build_week_batch(data, t, h, k);
        if (!batch.empty()) {
            batches.push_back(std::move(batch));
        }
    }
    return batches;
}

/// phi evaluated on every active product of the batch.
inline std::vector<double> batch_weights(const WeightNet& phi, const WeekBatch& batch) {
    std::vector<double> w(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        w[k] = forward(phi, batch.input(k));
    }
    return w;
}

/// alpha * w_i / (1 + sum_j w_j) over the active products.
inline std::vector<double> normalize_weights(std::span<const double> weights, double alpha) {
    double total = 1.0;
    for (double w : weights) {
        total += w;
    }
    std::vector<double> shares(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) {
        shares[k] = alpha * weights[k] / total;
    }
    return shares;
}

/// Predicted shares, aligned with batch.active.
inline std::vector<double> predict_shares(const ConcurrentModel& model, const WeekBatch& batch) {
    require(!batch.empty(), ErrorCode::EmptyBatch, fmt::format("no active products in week {}", batch.week));
    auto w = batch_weights(model.phi, batch);
    if (model.variant == Variant::FeedForwardDirect) {
        return w;
    }
    return normalize_weights(w, model.alpha);
}

inline double poisson_loss(double y, double yhat) {
    require(yhat > 0.0, ErrorCode::NonPositivePrediction, fmt::format("prediction {}", yhat));
    return yhat - y * std::log(yhat);
}

inline double l1_loss(double y, double yhat) noexcept { return std::fabs(y - yhat); }

inline constexpr double kPoissonLogFloor = 1e-12;

struct BatchGradient {
    std::vector<double> parameters;
    double loss = 0.0;
    std::size_t clamped = 0; // predictions floored at kPoissonLogFloor inside the log
};

namespace detail {

/// Loss value and dL/dyhat for one cell. Poisson: yhat is floored inside the
/// log (never silently: `clamped` counts it). L1: subgradient 0 at a tie.
inline double loss_and_slope(LossKind loss, double y, double yhat, double& slope, std::size_t& clamped) {
    if (loss == LossKind::L1) {
        slope = yhat > y ? 1.0 : (yhat < y ? -1.0 : 0.0);
        return std::fabs(y - yhat);
    }
    if (yhat < kPoissonLogFloor) {
        ++clamped;
        slope = 1.0;
        return yhat - y * std::log(kPoissonLogFloor);
    }
    slope = 1.0 - y / yhat;
    return yhat - y * std::log(yhat);
}

} // namespace detail

/// Summed loss over the batch and its exact gradient w.r.t. phi's
/// parameters. Under normalization every w_j moves every yhat_i:
///   dL/dw_j = (alpha * g_j - sum_i g_i * yhat_i) / (1 + sum w),  g = dL/dyhat.
inline BatchGradient batch_gradient(const ConcurrentModel& model, const WeekBatch& batch, LossKind loss,
                                    bool weight_by_scale = false) {
    require(!batch.empty(), ErrorCode::EmptyBatch, fmt::format("no active products in week {}", batch.week));
    BatchGradient out;
    out.parameters.assign(model.phi.parameters.size(), 0.0);
    const auto weights = batch_weights(model.phi, batch);
    const bool direct = model.variant == Variant::FeedForwardDirect;
    const auto yhat = direct ? weights : normalize_weights(weights, model.alpha);
    const double cell_weight = weight_by_scale ? batch.scale : 1.0;

    std::vector<double> slope(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
        out.loss += cell_weight * detail::loss_and_slope(loss, batch.targets[k], yhat[k], slope[k], out.clamped);
        slope[k] *= cell_weight;
    }

    std::vector<double> dweight(batch.size());
    if (direct) {
        dweight = slope;
    } else {
        double total = 1.0;
        double coupling = 0.0;
        for (std::size_t k = 0; k < batch.size(); ++k) {
            total += weights[k];
            coupling += slope[k] * yhat[k];
        }
        for (std::size_t k = 0; k < batch.size(); ++k) {
            dweight[k] = (model.alpha * slope[k] - coupling) / total;
        }
    }
    for (std::size_t k = 0; k < batch.size(); ++k) {
        if (dweight[k] != 0.0) {
            accumulate_gradient(model.phi, batch.input(k), dweight[k], out.parameters);
        }
    }
    return out;
}

/// Summed loss over the batch without gradients.
inline double batch_loss(const ConcurrentModel& model, const WeekBatch& batch, LossKind loss,
                         bool weight_by_scale = false) {
    const auto yhat = predict_shares(model, batch);
    const double cell_weight = weight_by_scale ? batch.scale : 1.0;
    double total = 0.0;
    std::size_t clamped = 0;
    double slope = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        total += cell_weight * detail::loss_and_slope(loss, batch.targets[k], yhat[k], slope, clamped);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Model files: a small header followed by the weight-net block.

inline constexpr std::string_view kModelMagic = "concnn-model";
inline constexpr int kModelVersion = 1;

inline void write_model(std::ostream& out, const ConcurrentModel& model) {
    out << kModelMagic << ' ' << kModelVersion << '\n';
    out << "variant " << to_string(model.variant) << '\n';
    out << "alpha " << fmt::format("{:a}", model.alpha) << '\n';
    out << "horizon " << model.horizon << '\n';
    out << "lags " << model.lag_count << '\n';
    out << "features " << model.features.size();
    for (const auto& f : model.features) {
        require(f.find_first_of(" \t\n") == std::string::npos, ErrorCode::InvalidConfig,
                fmt::format("feature name '{}' contains whitespace", f));
        out << ' ' << f;
    }
    out << '\n';
    write_weightnet(out, model.phi);
}

inline ConcurrentModel read_model(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    require(in.good() && magic == kModelMagic, ErrorCode::InvalidModelFile, "not a model file");
    require(version == kModelVersion, ErrorCode::InvalidModelFile, fmt::format("unsupported version {}", version));
    ConcurrentModel model;
    auto expect = [&](std::string_view key) {
        std::string word;
        in >> word;
        require(in.good() && word == key, ErrorCode::InvalidModelFile, fmt::format("expected '{}'", key));
    };
    std::string text;
    expect("variant");
    in >> text;
    model.variant = parse_variant(text);
    expect("alpha");
    in >> text;
    model.alpha = detail::parse_hex_real(text);
    expect("horizon");
    in >> model.horizon;
    expect("lags");
    in >> model.lag_count;
    expect("features");
    std::size_t count = 0;
    in >> count;
    model.features.resize(count);
    for (auto& f : model.features) {
        in >> f;
    }
    require(!in.fail(), ErrorCode::InvalidModelFile, "truncated header");
    model.phi = read_weightnet(in);
    try {
        model.validate();
    } catch (const Error& e) {
        fail(ErrorCode::InvalidModelFile, e.what());
    }
    return model;
}

inline void save_model(const std::string& path, const ConcurrentModel& model) {
    std::ofstream out(path);
    require(out.good(), ErrorCode::InvalidConfig, fmt::format("cannot write '{}'", path));
    write_model(out, model);
}

inline ConcurrentModel load_model(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::InvalidConfig, fmt::format("cannot open model '{}'", path));
    return read_model(in);
}

} // namespace concnn
