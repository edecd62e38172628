#pragma once

// Test-only oracles. Nothing here calls into the code paths it checks: the
// reference forward pass re-implements phi from the documented parameter
// layout, and derivatives come from central differences.

#include "concnn/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace concnn::testing {

/// phi from the canonical layout: per layer, [out][in] weights then biases.
inline double reference_forward(const WeightNet& net, std::span<const double> input) {
    std::vector<double> a(input.size());
    for (std::size_t f = 0; f < input.size(); ++f) {
        a[f] = (input[f] - net.normalizer.mean[f]) / net.normalizer.scale[f];
    }
    const auto widths = net.architecture.widths();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        std::vector<double> z(out);
        for (std::size_t j = 0; j < out; ++j) {
            double acc = net.parameters[offset + in * out + j];
            for (std::size_t k = 0; k < in; ++k) {
                acc += net.parameters[offset + j * in + k] * a[k];
            }
            z[j] = acc;
        }
        offset += in * out + out;
        const bool last = l + 2 == widths.size();
        for (double& v : z) {
            v = last ? std::log1p(std::exp(v)) : (v > 0.0 ? v : 0.0);
        }
        a = std::move(z);
    }
    return a[0];
}

/// Smallest |pre-activation| of any hidden unit at input, per the reference.
inline double reference_kink_distance(const WeightNet& net, std::span<const double> input) {
    std::vector<double> a(input.size());
    for (std::size_t f = 0; f < input.size(); ++f) {
        a[f] = (input[f] - net.normalizer.mean[f]) / net.normalizer.scale[f];
    }
    const auto widths = net.architecture.widths();
    std::size_t offset = 0;
    double closest = INFINITY;
    for (std::size_t l = 0; l + 2 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        std::vector<double> z(out);
        for (std::size_t j = 0; j < out; ++j) {
            double acc = net.parameters[offset + in * out + j];
            for (std::size_t k = 0; k < in; ++k) {
                acc += net.parameters[offset + j * in + k] * a[k];
            }
            closest = std::min(closest, std::fabs(acc));
            z[j] = std::max(acc, 0.0);
        }
        offset += in * out + out;
        a = std::move(z);
    }
    return closest;
}

/// Central-difference gradient of f at x.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double step) {
    std::vector<double> g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = x[k];
        x[k] = saved + step;
        const double plus = f(x);
        x[k] = saved - step;
        const double minus = f(x);
        x[k] = saved;
        g[k] = (plus - minus) / (2.0 * step);
    }
    return g;
}

/// max_k |a_k - b_k| / max(|a_k|, |b_k|, floor).
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double denom = std::max({std::fabs(a[k]), std::fabs(b[k]), floor});
        worst = std::max(worst, std::fabs(a[k] - b[k]) / denom);
    }
    return worst;
}

/// Random net with parameters in [-1, 1] and a random positive normalizer.
inline WeightNet random_net(std::mt19937_64& gen, std::size_t input_dim, std::vector<std::size_t> hidden) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> pos(0.5, 2.0);
    WeightNet net;
    net.architecture = {input_dim, std::move(hidden)};
    net.parameters.resize(net.architecture.parameter_count());
    for (double& p : net.parameters) {
        p = u(gen);
    }
    net.normalizer.mean.resize(input_dim);
    net.normalizer.scale.resize(input_dim);
    for (std::size_t f = 0; f < input_dim; ++f) {
        net.normalizer.mean[f] = 0.2 * u(gen);
        net.normalizer.scale[f] = pos(gen);
    }
    return net;
}

/// Net whose output is the constant `weight` (all weights zero).
inline WeightNet constant_net(std::size_t input_dim, double weight, std::vector<std::size_t> hidden = {}) {
    WeightNet net;
    net.architecture = {input_dim, std::move(hidden)};
    net.parameters.assign(net.architecture.parameter_count(), 0.0);
    net.parameters.back() = softplus_inverse(weight);
    net.normalizer = FeatureNormalizer::identity(input_dim);
    return net;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("concnn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

    std::string write(const std::string& name, const std::string& content) const {
        const auto p = file(name);
        std::ofstream(p) << content;
        return p;
    }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace concnn::testing
