#pragma once

#include "concnn/concurrent.hpp"
#include "concnn/csv.hpp"
#include "concnn/data.hpp"
#include "concnn/error.hpp"
#include "concnn/neuralnet.hpp"
#include "concnn/random.hpp"
#include "concnn/simulator.hpp"
#include "concnn/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace concnn {

// ---------------------------------------------------------------------------
// Exact Poisson quantities

/// E[X^k] for X ~ Poisson(lambda): the Touchard polynomial sum_j S(k, j) lambda^j
/// with S the Stirling numbers of the second kind.
inline double poisson_raw_moment(double lambda, std::size_t k) {
    std::vector<double> stirling(k + 1, 0.0);
    stirling[0] = 1.0; // S(0, 0)
    for (std::size_t row = 1; row <= k; ++row) {
        for (std::size_t j = row; j >= 1; --j) {
            stirling[j] = static_cast<double>(j) * stirling[j] + stirling[j - 1];
        }
        stirling[0] = 0.0;
    }
    double sum = 0.0;
    double power = 1.0;
    for (std::size_t j = 0; j <= k; ++j) {
        sum += stirling[j] * power;
        power *= lambda;
    }
    return sum;
}

/// E|Y - c| for Y ~ Poisson(lambda), exactly: (lambda - c) + 2 E[(c - Y)^+].
inline double poisson_abs_deviation(double lambda, double c) {
    if (lambda <= 0.0) {
        return std::fabs(c);
    }
    double below = 0.0;
    double pmf = std::exp(-lambda);
    for (double y = 0.0; y < c; y += 1.0) {
        below += (c - y) * pmf;
        pmf *= lambda / (y + 1.0);
    }
    return lambda - c + 2.0 * below;
}

inline double factorial(std::size_t k) { return std::tgamma(static_cast<double>(k) + 1.0); }

// ---------------------------------------------------------------------------
// Lipschitz constant and contraction

struct LipschitzEstimate {
    double sampled = 0.0;   // max |d phi / dx| over the probe grid
    double certified = 0.0; // layer-norm product bound; always >= sampled
    double argmax_x = 0.0;
};

/// Probes |d phi / d x| on `grid` evenly spaced x in [x_lo, x_hi] for every
/// covariate sample; x is the first (most recent) lagged share.
inline LipschitzEstimate estimate_lipschitz(const WeightNet& phi, double x_lo, double x_hi,
                                            std::span<const std::vector<double>> theta_samples, std::size_t grid) {
    require(!theta_samples.empty(), ErrorCode::EmptyThetaSamples, "no covariate samples");
    require(grid >= 2, ErrorCode::InvalidConfig, "grid needs at least 2 points");
    require(x_lo <= x_hi, ErrorCode::InvalidConfig, "x range reversed");
    LipschitzEstimate out;
    out.certified = certified_lipschitz(phi, 0);
    std::vector<double> input;
    const std::size_t extra_lags = phi.architecture.input_dim - 1 - theta_samples.front().size();
    for (const auto& theta : theta_samples) {
        for (std::size_t g = 0; g < grid; ++g) {
            const double x = x_lo + (x_hi - x_lo) * static_cast<double>(g) / static_cast<double>(grid - 1);
            input.assign(1, x);
            input.insert(input.end(), extra_lags, 0.0);
            input.insert(input.end(), theta.begin(), theta.end());
            const double slope = std::fabs(backward(phi, input, 1.0).input[0]);
            if (slope > out.sampled) {
                out.sampled = slope;
                out.argmax_x = x;
            }
        }
    }
    return out;
}

struct ContractionResult {
    double tau = 0.0;
    double tau_s = 1.0;
    double rho = 0.0;
    bool pass = false;
};

/// rho = 3 * tau_s * tau; passes when rho < 1.
inline ContractionResult contraction_check(double tau, const Scaler& scaler) {
    require(!scaler.values.empty(), ErrorCode::LengthMismatch, "empty scaler");
    ContractionResult out;
    out.tau = tau;
    out.tau_s = scaler.ratio_bound();
    out.rho = 3.0 * out.tau_s * out.tau;
    out.pass = out.rho < 1.0;
    return out;
}

/// Uses the certified Lipschitz bound of phi in its first input as tau.
inline ContractionResult contraction_check(const WeightNet& phi, const Scaler& scaler) {
    return contraction_check(certified_lipschitz(phi, 0), scaler);
}

/// Draws a coupled pair (Y, Y') with Y ~ Poisson(a), Y' ~ Poisson(b) from one
/// unit-rate Poisson process on [0, max(a, b)]: Y counts the points below a,
/// Y' those below b, so |Y - Y'| ~ Poisson(|a - b|).
inline std::pair<std::uint64_t, std::uint64_t> coupled_poisson(double a, double b, Rng& rng) {
    const double top = std::max(a, b);
    const std::uint64_t points = sample_poisson(top, rng);
    std::uint64_t ya = 0;
    std::uint64_t yb = 0;
    for (std::uint64_t k = 0; k < points; ++k) {
        const double u = rng.uniform() * top;
        ya += u <= a ? 1 : 0;
        yb += u <= b ? 1 : 0;
    }
    return {ya, yb};
}

struct StatePair {
    std::vector<double> x;
    std::vector<double> x_prime;
};

struct ContractionEstimate {
    std::vector<double> ratios; // per pair: MC mean of ||F(X) - F(X')|| / ||X - X'||
    std::vector<double> sigmas; // per pair: MC standard error
    double max_ratio = 0.0;
    double max_ratio_sigma = 0.0;

    /// True when every pair's estimate sits at or below rho + 3 sigma.
    [[nodiscard]] bool within(double rho) const {
        for (std::size_t k = 0; k < ratios.size(); ++k) {
            if (ratios[k] > rho + 3.0 * sigmas[k]) {
                return false;
            }
        }
        return true;
    }
};

inline constexpr std::uint64_t kCouplingStream = 0xc0091eULL;

/// Monte-Carlo estimate of E||F_t(X, eps) - F_t(X', eps)||_1 / ||X - X'||_1
/// with both chains driven by the same noise, at transition week `week`.
inline ContractionEstimate empirical_contraction(const GenerativeSpec& spec, std::span<const StatePair> pairs,
                                                 std::size_t replicas, std::size_t week = 1) {
    spec.validate();
    require(replicas >= 100, ErrorCode::InvalidConfig, "need at least 100 replicas");
    require(week >= 1 && week < spec.weeks, ErrorCode::InvalidConfig, "week outside the chain");
    const std::size_t d = spec.products;
    const auto covariates = generate_covariates(spec.covariates, d, spec.weeks, spec.seed);
    const std::size_t p = spec.covariates.count;
    std::vector<double> theta(d * p);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t c = 0; c < p; ++c) {
            theta[i * p + c] = covariates[(i * spec.weeks + week) * p + c];
        }
    }
    const double s_prev = spec.scaler.values[week - 1];
    const double s_cur = spec.scaler.values[week];

    ContractionEstimate out;
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        const auto& pair = pairs[pi];
        require(pair.x.size() == d && pair.x_prime.size() == d, ErrorCode::LengthMismatch, "state dimension");
        double dist = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dist += std::fabs(pair.x[i] - pair.x_prime[i]);
        }
        require(dist > 0.0, ErrorCode::IdenticalStates, fmt::format("pair {} has identical states", pi));
        const auto a = transition_intensities(pair.x, theta, s_prev, s_cur, spec.phi);
        const auto b = transition_intensities(pair.x_prime, theta, s_prev, s_cur, spec.phi);
        double sum = 0.0;
        double sum_sq = 0.0;
        for (std::size_t r = 0; r < replicas; ++r) {
            double diff = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                Rng rng = Rng::substream(spec.seed, {kCouplingStream, pi, r, i});
                const auto [ya, yb] = coupled_poisson(a.lambdas[i], b.lambdas[i], rng);
                diff += std::fabs(static_cast<double>(ya) - static_cast<double>(yb));
            }
            const double ratio = diff / dist;
            sum += ratio;
            sum_sq += ratio * ratio;
        }
        const auto rn = static_cast<double>(replicas);
        const double mean = sum / rn;
        const double var = std::max(0.0, sum_sq / rn - mean * mean) * rn / (rn - 1.0);
        out.ratios.push_back(mean);
        out.sigmas.push_back(std::sqrt(var / rn));
        if (pi == 0 || mean > out.max_ratio) {
            out.max_ratio = mean;
            out.max_ratio_sigma = out.sigmas.back();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bernstein constants and the risk bound

struct BernsteinConstants {
    double R = 0.0; // max_t s(t)
    double M = 0.0; // d * max(1, e R)
    double V = 0.0; // 4 M^2, used for both V1 and V2
};

inline BernsteinConstants bernstein_constants(std::size_t d, const Scaler& scaler) {
    require(!scaler.values.empty(), ErrorCode::LengthMismatch, "empty scaler");
    BernsteinConstants out;
    out.R = scaler.max_value();
    out.M = static_cast<double>(d) * std::max(1.0, std::numbers::e * out.R);
    out.V = 4.0 * out.M * out.M;
    return out;
}

/// K_t(rho) = (1 - rho^t) / (1 - rho).
inline double geometric_sum(double rho, std::size_t t) {
    return (1.0 - std::pow(rho, static_cast<double>(t))) / (1.0 - rho);
}

/// Which confidence term the bound uses: log(1/delta) as displayed with the
/// statement, or log(2/delta) as obtained after the union bound.
enum class ConfidenceLog { OneOverDelta, TwoOverDelta };

struct BoundInputs {
    std::size_t n = 2;
    double delta = 0.05;
    double tau = 0.0;
    double rho = 0.0;
    double M = 1.0;
    double V1 = 1.0;
    double V2 = 1.0;
    ConfidenceLog log_variant = ConfidenceLog::TwoOverDelta;
};

/// (1 + tau) * ( sqrt(2 V2 L) / sqrt(n) + sqrt(2 V1 L) / n + 2 M K_{n-1}(rho) L / n )
/// with L the chosen log term.
inline double theorem_bound(const BoundInputs& in) {
    require(in.delta > 0.0 && in.delta < 1.0, ErrorCode::InvalidDelta, fmt::format("delta = {}", in.delta));
    require(in.rho >= 0.0 && in.rho < 1.0, ErrorCode::RhoOutOfRange, fmt::format("rho = {}", in.rho));
    require(in.n >= 2, ErrorCode::InvalidConfig, "n must be at least 2");
    const double L = std::log((in.log_variant == ConfidenceLog::TwoOverDelta ? 2.0 : 1.0) / in.delta);
    const auto n = static_cast<double>(in.n);
    return (1.0 + in.tau) * (std::sqrt(2.0 * in.V2 * L) / std::sqrt(n) + std::sqrt(2.0 * in.V1 * L) / n +
                             2.0 * in.M * geometric_sum(in.rho, in.n - 1) * L / n);
}

// ---------------------------------------------------------------------------
// Moment checks

struct MomentRow {
    std::size_t k = 0;
    double exact = 0.0;    // Touchard moment
    double estimate = 0.0; // Monte-Carlo mean of X^k
    double sigma = 0.0;    // Monte-Carlo standard error
    double bound = 0.0;    // k! M^k
    double margin = 0.0;   // bound - exact
    bool within_bound = false;
    bool matches_exact = false; // |estimate - exact| <= 4 sigma
};

struct MomentCheck {
    double lambda = 0.0;
    double M = 1.0;
    std::vector<MomentRow> rows;

    [[nodiscard]] bool passed() const {
        return std::all_of(rows.begin(), rows.end(), [](const MomentRow& r) { return r.within_bound && r.matches_exact; });
    }
};

inline constexpr std::uint64_t kMomentStream = 0x303e47ULL;

/// Checks E[X^k] <= k! max(1, lambda e)^k for X ~ Poisson(lambda), k = 1..k_max,
/// and compares Monte-Carlo moments with the exact ones.
inline MomentCheck poisson_moment_check(double lambda, std::size_t k_max, std::size_t samples, std::uint64_t seed) {
    require(k_max >= 1, ErrorCode::InvalidConfig, "k_max must be at least 1");
    require(samples >= 10000, ErrorCode::InvalidConfig, "need at least 10^4 samples");
    require(lambda >= 0.0, ErrorCode::InvalidConfig, "lambda must be non-negative");
    MomentCheck out;
    out.lambda = lambda;
    out.M = std::max(1.0, lambda * std::numbers::e);
    std::vector<double> sum(k_max + 1, 0.0);
    std::vector<double> sum_sq(k_max + 1, 0.0);
    Rng rng = Rng::substream(seed, {kMomentStream});
    for (std::size_t s = 0; s < samples; ++s) {
        const auto x = static_cast<double>(sample_poisson(lambda, rng));
        double power = 1.0;
        for (std::size_t k = 1; k <= k_max; ++k) {
            power *= x;
            sum[k] += power;
            sum_sq[k] += power * power;
        }
    }
    const auto n = static_cast<double>(samples);
    for (std::size_t k = 1; k <= k_max; ++k) {
        MomentRow row;
        row.k = k;
        row.exact = poisson_raw_moment(lambda, k);
        row.estimate = sum[k] / n;
        const double var = std::max(0.0, sum_sq[k] / n - row.estimate * row.estimate) * n / (n - 1.0);
        row.sigma = std::sqrt(var / n);
        row.bound = factorial(k) * std::pow(out.M, static_cast<double>(k));
        row.margin = row.bound - row.exact;
        row.within_bound = row.exact <= row.bound && row.estimate <= row.bound;
        row.matches_exact = std::fabs(row.estimate - row.exact) <= 4.0 * row.sigma + 1e-12 * std::fabs(row.exact);
        out.rows.push_back(row);
    }
    return out;
}

struct DispersionMoment {
    std::size_t k = 0;
    double estimate = 0.0; // MC estimate of E[H^k] (or E[G^k])
    double bound = 0.0;    // k!/2 V M^(k-2)
};

inline constexpr std::uint64_t kDispersionStream = 0xd15e7ULL;

/// E[H^k] for H(x, eps) = E_eps' ||F(x, eps) - F(x, eps')||_1 at the given
/// intensities; the inner expectation is exact per product.
inline std::vector<DispersionMoment> dispersion_moments(std::span<const double> lambdas, std::size_t k_max,
                                                        std::size_t samples, const BernsteinConstants& constants,
                                                        std::uint64_t seed) {
    std::vector<double> sum(k_max + 1, 0.0);
    for (std::size_t s = 0; s < samples; ++s) {
        double h = 0.0;
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            Rng rng = Rng::substream(seed, {kDispersionStream, s, i});
            const auto y = static_cast<double>(sample_poisson(lambdas[i], rng));
            h += poisson_abs_deviation(lambdas[i], y);
        }
        double power = 1.0;
        for (std::size_t k = 1; k <= k_max; ++k) {
            power *= h;
            sum[k] += power;
        }
    }
    std::vector<DispersionMoment> out;
    for (std::size_t k = 2; k <= k_max; ++k) {
        out.push_back({k, sum[k] / static_cast<double>(samples),
                       factorial(k) / 2.0 * constants.V * std::pow(constants.M, static_cast<double>(k) - 2.0)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Risk decay

/// How the excess risk of a trained phi over the true phi* is measured on a
/// held-out trajectory. All three use exact Poisson expectations per cell.
enum class ExcessMetric {
    /// mean_t ||s(t) (G_hat - G*)||_1: the distance between predicted and true
    /// intensities, which bounds R(phi_hat) - R(phi*) from above.
    IntensityL1,
    /// mean_t (E||X_t - s G_hat||_1 - E||X_t - s G*||_1).
    L1Risk,
    /// Expected share-level Poisson loss of phi_hat minus that of phi*.
    PoissonRisk,
};

struct DecayConfig {
    WeightNet truth;                 // phi*, one lag
    double scale = 100.0;            // constant s(t)
    std::size_t products = 10;
    CovariateProcess covariates;
    InitialDistribution init;
    std::vector<std::size_t> n_grid{100, 400, 1600};
    std::size_t replicas = 20;
    std::size_t test_weeks = 2000;
    std::uint64_t seed = 0;
    Architecture architecture;       // hidden layers only; input_dim is derived
    TrainConfig train;
    ExcessMetric metric = ExcessMetric::IntensityL1;
    bool inject_oracle = false;      // use phi* as the estimator
};

struct DecayRow {
    std::size_t n = 0;
    double mean_excess = 0.0;
    double sd_excess = 0.0;
    std::vector<double> excess; // per replica
};

struct DecayResult {
    std::vector<DecayRow> rows;
    double slope = 0.0; // least-squares slope of log(mean excess) on log(n)
};

inline constexpr std::uint64_t kDecayTrainStream = 0xdeca1ULL;
inline constexpr std::uint64_t kDecayTestStream = 0xdeca2ULL;

namespace detail {

inline GenerativeSpec decay_spec(const DecayConfig& config, std::size_t weeks, std::uint64_t seed) {
    GenerativeSpec spec;
    spec.phi = as_weight_function(config.truth);
    spec.scaler = constant_scaler(config.scale, weeks);
    spec.covariates = config.covariates;
    spec.products = config.products;
    spec.weeks = weeks;
    spec.init = config.init;
    spec.seed = seed;
    return spec;
}

/// Excess of `estimate` over `truth` on a simulated test trajectory.
inline double excess_risk(const ConcurrentModel& estimate, const ConcurrentModel& truth, const Dataset& test,
                          const SimulatedPanel& sim, ExcessMetric metric) {
    double total = 0.0;
    std::size_t weeks = 0;
    for (std::size_t t = 1; t < test.panel.week_count(); ++t) {
        const auto batch = build_week_batch(test, t, 1, 1);
        if (batch.empty()) {
            continue;
        }
        const auto hat = predict_shares(estimate, batch);
        const auto star = predict_shares(truth, batch);
        const double s = test.scaler.values[t];
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const std::size_t i = batch.active[k];
            const double lambda = sim.lambdas(i, t);
            switch (metric) {
            case ExcessMetric::IntensityL1:
                total += std::fabs(s * hat[k] - s * star[k]);
                break;
            case ExcessMetric::L1Risk:
                total += poisson_abs_deviation(lambda, s * hat[k]) - poisson_abs_deviation(lambda, s * star[k]);
                break;
            case ExcessMetric::PoissonRisk: {
                const double mu = lambda / s;
                total += (hat[k] - mu * std::log(hat[k])) - (star[k] - mu * std::log(star[k]));
                break;
            }
            }
        }
        ++weeks;
    }
    return weeks == 0 ? 0.0 : total / static_cast<double>(weeks);
}

} // namespace detail

/// For each n: simulate n weeks from phi*, fit phi by ERM (Poisson loss, no
/// validation), and measure the excess risk against phi* on an independent
/// trajectory; averaged over replicas. Fits the log-log slope across n.
inline DecayResult risk_decay_experiment(const DecayConfig& config) {
    require(config.n_grid.size() >= 3, ErrorCode::InvalidConfig, "n grid needs at least 3 points");
    for (std::size_t g = 1; g < config.n_grid.size(); ++g) {
        require(config.n_grid[g] > config.n_grid[g - 1], ErrorCode::InvalidConfig, "n grid must increase");
    }
    require(config.replicas >= 1, ErrorCode::InvalidConfig, "need at least one replica");
    const std::size_t p = config.covariates.count;
    require(config.truth.architecture.input_dim == 1 + p, ErrorCode::ArchitectureMismatch,
            "phi* must take one lag plus the covariates");

    ConcurrentModel truth;
    truth.phi = config.truth;
    truth.alpha = 1.0;
    truth.horizon = 1;
    truth.lag_count = 1;

    DecayResult out;
    for (std::size_t g = 0; g < config.n_grid.size(); ++g) {
        const std::size_t n = config.n_grid[g];
        DecayRow row;
        row.n = n;
        for (std::size_t r = 0; r < config.replicas; ++r) {
            const std::uint64_t train_seed = Rng::substream(config.seed, {kDecayTrainStream, n, r})();
            const std::uint64_t test_seed = Rng::substream(config.seed, {kDecayTestStream, r})();
            const auto train_sim = simulate(detail::decay_spec(config, n, train_seed));
            const auto train_data = make_dataset(train_sim.panel, constant_scaler(config.scale, n));
            const auto test_sim = simulate(detail::decay_spec(config, config.test_weeks, test_seed));
            const auto test_data = make_dataset(test_sim.panel, constant_scaler(config.scale, config.test_weeks));

            ConcurrentModel estimate = truth;
            if (!config.inject_oracle) {
                const auto initial = make_model(config.architecture, train_data, {0, n}, 1, 1, Variant::Concurrent,
                                                train_seed, 1.0);
                TrainConfig tc = config.train;
                tc.seed = train_seed;
                tc.variant = Variant::Concurrent;
                try {
                    estimate = train(initial, train_data, {0, n}, {0, 0}, tc).model;
                } catch (const TrainingError& e) {
                    fail(ErrorCode::TrainingDiverged, fmt::format("n = {}, replica {}: {}", n, r, e.what()));
                }
            }
            row.excess.push_back(detail::excess_risk(estimate, truth, test_data, test_sim, config.metric));
        }
        double sum = 0.0;
        for (double e : row.excess) {
            sum += e;
        }
        row.mean_excess = sum / static_cast<double>(row.excess.size());
        double ss = 0.0;
        for (double e : row.excess) {
            ss += (e - row.mean_excess) * (e - row.mean_excess);
        }
        row.sd_excess = row.excess.size() > 1 ? std::sqrt(ss / static_cast<double>(row.excess.size() - 1)) : 0.0;
        out.rows.push_back(std::move(row));
    }

    double mx = 0.0;
    double my = 0.0;
    std::size_t used = 0;
    for (const auto& row : out.rows) {
        if (row.mean_excess > 0.0) {
            mx += std::log(static_cast<double>(row.n));
            my += std::log(row.mean_excess);
            ++used;
        }
    }
    if (used >= 2) {
        mx /= static_cast<double>(used);
        my /= static_cast<double>(used);
        double sxy = 0.0;
        double sxx = 0.0;
        for (const auto& row : out.rows) {
            if (row.mean_excess > 0.0) {
                const double dx = std::log(static_cast<double>(row.n)) - mx;
                sxy += dx * (std::log(row.mean_excess) - my);
                sxx += dx * dx;
            }
        }
        out.slope = sxy / sxx;
    } else {
        out.slope = std::nan("");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregate report

struct TheoryReport {
    double tau = 0.0;
    double tau_sampled = 0.0;
    double tau_s = 1.0;
    double rho = 0.0;
    bool contraction_pass = false;
    double M = 0.0;
    double V1 = 0.0;
    double V2 = 0.0;
    double K = 0.0;
    double bound_value = 0.0;
    std::vector<MomentCheck> moment_checks;
    std::vector<DispersionMoment> h_moments;
    std::vector<DispersionMoment> g_moments; // initial-distribution moments
};

/// One `key = value` line per scalar field.
inline void write_theory_report(std::ostream& out, const TheoryReport& r) {
    out << "tau = " << csv::number(r.tau) << '\n';
    out << "tau_sampled = " << csv::number(r.tau_sampled) << '\n';
    out << "tau_s = " << csv::number(r.tau_s) << '\n';
    out << "rho = " << csv::number(r.rho) << '\n';
    out << "contraction_pass = " << (r.contraction_pass ? "true" : "false") << '\n';
    out << "M = " << csv::number(r.M) << '\n';
    out << "V1 = " << csv::number(r.V1) << '\n';
    out << "V2 = " << csv::number(r.V2) << '\n';
    out << "K = " << csv::number(r.K) << '\n';
    out << "bound_value = " << csv::number(r.bound_value) << '\n';
    bool moments_ok = true;
    for (const auto& m : r.moment_checks) {
        moments_ok = moments_ok && m.passed();
    }
    out << "moment_check_pass = " << (moments_ok ? "true" : "false") << '\n';
}

inline void write_moment_margins(std::ostream& out, std::span<const MomentCheck> checks) {
    out << "lambda,k,exact,estimate,sigma,bound,margin,within_bound,matches_exact\n";
    for (const auto& c : checks) {
        for (const auto& row : c.rows) {
            out << csv::number(c.lambda) << ',' << row.k << ',' << csv::number(row.exact) << ','
                << csv::number(row.estimate) << ',' << csv::number(row.sigma) << ',' << csv::number(row.bound)
                << ',' << csv::number(row.margin) << ',' << (row.within_bound ? 1 : 0) << ','
                << (row.matches_exact ? 1 : 0) << '\n';
        }
    }
}

inline void write_dispersion_moments(std::ostream& out, const TheoryReport& r) {
    out << "quantity,k,estimate,bound\n";
    for (const auto& [name, rows] : {std::pair{"H", &r.h_moments}, std::pair{"G", &r.g_moments}}) {
        for (const auto& m : *rows) {
            out << name << ',' << m.k << ',' << csv::number(m.estimate) << ',' << csv::number(m.bound) << '\n';
        }
    }
}

inline void write_decay_table(std::ostream& out, const DecayResult& result) {
    out << "n,mean_excess,sd_excess\n";
    for (const auto& row : result.rows) {
        out << row.n << ',' << csv::number(row.mean_excess) << ',' << csv::number(row.sd_excess) << '\n';
    }
}

} // namespace concnn
