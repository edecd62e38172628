#pragma once

#include "concnn/data.hpp"
#include "concnn/error.hpp"
#include "concnn/matrix.hpp"
#include "concnn/neuralnet.hpp"
#include "concnn/random.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace concnn {

/// phi(lagged share, covariates) >= 0.
using WeightFunction = std::function<double(double share, std::span<const double> theta)>;

/// Adapts a one-lag weight net to the simulator's callable form.
inline WeightFunction as_weight_function(WeightNet net) {
    return [net = std::move(net)](double share, std::span<const double> theta) {
        thread_local std::vector<double> input;
        input.assign(1, share);
        input.insert(input.end(), theta.begin(), theta.end());
        return forward(net, input);
    };
}

/// softplus(share_coef * x + theta_coef . theta + bias) as a zero-hidden-layer
/// net with identity normalization, so the same object serves simulation,
/// prediction and the theory checks.
inline WeightNet analytic_phi(double share_coef, const std::vector<double>& theta_coef, double bias) {
    WeightNet net;
    net.architecture.input_dim = 1 + theta_coef.size();
    net.parameters.push_back(share_coef);
    net.parameters.insert(net.parameters.end(), theta_coef.begin(), theta_coef.end());
    net.parameters.push_back(bias);
    net.normalizer = FeatureNormalizer::identity(net.architecture.input_dim);
    return net;
}

enum class CovariateKind { Constant, IidUniform, RandomWalk };

struct CovariateProcess {
    CovariateKind kind = CovariateKind::IidUniform;
    std::size_t count = 1;
    std::vector<double> values; // Constant: one value per covariate
    double lo = 0.0;            // IidUniform bounds
    double hi = 1.0;
    double step = 0.1;          // RandomWalk: increments uniform in [-step, step], starting at 0
};

enum class InitKind { Zeros, PoissonAt };

struct InitialDistribution {
    InitKind kind = InitKind::Zeros;
    double rate = 0.0;
};

struct GenerativeSpec {
    WeightFunction phi;
    Scaler scaler;
    CovariateProcess covariates;
    std::size_t products = 1;
    std::size_t weeks = 2;
    InitialDistribution init;
    std::uint64_t seed = 0;

    void validate() const {
        require(static_cast<bool>(phi), ErrorCode::InvalidConfig, "weight function missing");
        require(products >= 1, ErrorCode::InvalidConfig, "need at least one product");
        require(weeks >= 2, ErrorCode::InvalidConfig, "need at least two weeks");
        require(scaler.values.size() == weeks, ErrorCode::LengthMismatch,
                fmt::format("scaler has {} values for {} weeks", scaler.values.size(), weeks));
        for (double s : scaler.values) {
            require(s > 0.0 && std::isfinite(s), ErrorCode::NonPositiveOracleValue, "scaler must be positive");
        }
        require(init.rate >= 0.0, ErrorCode::InvalidConfig, "initial rate must be non-negative");
        if (covariates.kind == CovariateKind::Constant) {
            require(covariates.values.size() == covariates.count, ErrorCode::InvalidConfig,
                    "constant covariates need one value per covariate");
        }
        if (covariates.kind == CovariateKind::IidUniform) {
            require(covariates.lo <= covariates.hi, ErrorCode::InvalidConfig, "uniform bounds reversed");
        }
    }
};

struct SimulatedPanel {
    PanelDataset panel;
    Matrix<double> lambdas;
    Matrix<double> weights; // zero in the first week, which comes from the initial distribution
};

/// Substream tags.
inline constexpr std::uint64_t kNoiseStream = 0x9015'50e1ULL;
inline constexpr std::uint64_t kCovariateStream = 0xc0fa'7a1eULL;
inline constexpr std::uint64_t kInitStream = 0x1a17ULL;

/// Randomness for one week of the chain; each product draws from its own
/// (seed, week, product) substream.
struct WeekNoise {
    std::uint64_t seed = 0;
    std::uint64_t week = 0;

    [[nodiscard]] Rng for_product(std::size_t i) const noexcept {
        return Rng::substream(seed, {kNoiseStream, week, i});
    }
};

struct Intensities {
    std::vector<double> weights;
    std::vector<double> lambdas;
};

/// w_i = phi(x_i / s_prev, theta_i), lambda_i = s_cur * w_i / (1 + sum_j w_j).
/// theta is d x p row-major.
inline Intensities transition_intensities(std::span<const double> x_prev, std::span<const double> theta,
                                          double s_prev, double s_cur, const WeightFunction& phi) {
    require(s_prev > 0.0 && s_cur > 0.0, ErrorCode::NonPositiveOracleValue, "scaler must be positive");
    const std::size_t d = x_prev.size();
    const std::size_t p = d == 0 ? 0 : theta.size() / d;
    Intensities out{std::vector<double>(d), std::vector<double>(d)};
    double total = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double w = phi(x_prev[i] / s_prev, theta.subspan(i * p, p));
        require(w >= 0.0 && std::isfinite(w), ErrorCode::NegativeWeightFromPhi, fmt::format("phi returned {}", w));
        out.weights[i] = w;
        total += w;
    }
    for (std::size_t i = 0; i < d; ++i) {
        out.lambdas[i] = s_cur * out.weights[i] / total;
    }
    return out;
}

struct StepResult {
    std::vector<std::int64_t> counts;
    Intensities intensities;
};

/// One application of the transition F_t with fresh Poisson noise.
inline StepResult step(std::span<const double> x_prev, std::span<const double> theta, double s_prev, double s_cur,
                       const WeightFunction& phi, const WeekNoise& noise) {
    StepResult out;
    out.intensities = transition_intensities(x_prev, theta, s_prev, s_cur, phi);
    out.counts.resize(x_prev.size());
    for (std::size_t i = 0; i < x_prev.size(); ++i) {
        Rng rng = noise.for_product(i);
        out.counts[i] = static_cast<std::int64_t>(sample_poisson(out.intensities.lambdas[i], rng));
    }
    return out;
}

/// Covariate path per the process, d x n x p in panel layout.
inline std::vector<double> generate_covariates(const CovariateProcess& process, std::size_t d, std::size_t n,
                                               std::uint64_t seed) {
    const std::size_t p = process.count;
    std::vector<double> out(d * n * p, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t t = 0; t < n; ++t) {
            Rng rng = Rng::substream(seed, {kCovariateStream, t, i});
            double* cell = out.data() + (i * n + t) * p;
            for (std::size_t c = 0; c < p; ++c) {
                switch (process.kind) {
                case CovariateKind::Constant: cell[c] = process.values[c]; break;
                case CovariateKind::IidUniform: cell[c] = rng.uniform(process.lo, process.hi); break;
                case CovariateKind::RandomWalk: {
                    const double prev = t == 0 ? 0.0 : out[(i * n + t - 1) * p + c];
                    cell[c] = prev + rng.uniform(-process.step, process.step);
                    break;
                }
                }
            }
        }
    }
    return out;
}

inline std::vector<std::string> default_covariate_names(std::size_t p) {
    std::vector<std::string> names;
    for (std::size_t c = 1; c <= p; ++c) {
        names.push_back("theta" + std::to_string(c));
    }
    return names;
}

inline std::vector<std::string> default_product_ids(std::size_t d) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < d; ++i) {
        ids.push_back(fmt::format("P{:04d}", i + 1));
    }
    return ids;
}

/// Runs the chain X_1 ~ init, X_t = F_t(X_{t-1}, eps_t). Every product is
/// offered every week and the panel carries s(t) as its oracle scaler.
inline SimulatedPanel simulate(const GenerativeSpec& spec) {
    spec.validate();
    const std::size_t d = spec.products;
    const std::size_t n = spec.weeks;
    const std::size_t p = spec.covariates.count;
    std::vector<std::int64_t> weeks(n);
    for (std::size_t t = 0; t < n; ++t) {
        weeks[t] = static_cast<std::int64_t>(t);
    }
    SimulatedPanel out{PanelDataset::empty(default_product_ids(d), std::move(weeks), default_covariate_names(p)),
                       Matrix<double>(d, n, 0.0), Matrix<double>(d, n, 0.0)};
    auto& panel = out.panel;
    panel.covariates = generate_covariates(spec.covariates, d, n, spec.seed);
    panel.oracle_scaler = spec.scaler.values;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t t = 0; t < n; ++t) {
            panel.available(i, t) = 1;
        }
    }

    std::vector<double> x(d, 0.0);
    if (spec.init.kind == InitKind::PoissonAt) {
        for (std::size_t i = 0; i < d; ++i) {
            Rng rng = Rng::substream(spec.seed, {kInitStream, i});
            const auto draw = static_cast<std::int64_t>(sample_poisson(spec.init.rate, rng));
            panel.sales(i, 0) = draw;
            out.lambdas(i, 0) = spec.init.rate;
            x[i] = static_cast<double>(draw);
        }
    }

    std::vector<double> theta(d * p);
    for (std::size_t t = 1; t < n; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            const auto cell = panel.covariates_at(i, t);
            std::copy(cell.begin(), cell.end(), theta.begin() + static_cast<std::ptrdiff_t>(i * p));
        }
        const auto result = step(x, theta, spec.scaler.values[t - 1], spec.scaler.values[t], spec.phi,
                                 WeekNoise{spec.seed, t});
        for (std::size_t i = 0; i < d; ++i) {
            panel.sales(i, t) = result.counts[i];
            out.lambdas(i, t) = result.intensities.lambdas[i];
            out.weights(i, t) = result.intensities.weights[i];
            x[i] = static_cast<double>(result.counts[i]);
        }
    }
    return out;
}

inline Scaler constant_scaler(double value, std::size_t n) {
    Scaler s;
    s.method = ScalerMethod::Oracle;
    s.values.assign(n, value);
    return s;
}

/// Sidecar with the true intensities and weights.
inline void write_truth_csv(std::ostream& out, const SimulatedPanel& sim) {
    out << "product_id,week,lambda,weight\n";
    for (std::size_t t = 0; t < sim.panel.week_count(); ++t) {
        for (std::size_t i = 0; i < sim.panel.products(); ++i) {
            out << csv::escape(sim.panel.product_ids[i]) << ',' << sim.panel.weeks[t] << ','
                << csv::number(sim.lambdas(i, t)) << ',' << csv::number(sim.weights(i, t)) << '\n';
        }
    }
}

} // namespace concnn
