#pragma once

#include "concnn/error.hpp"
#include "concnn/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace concnn {

inline double softplus(double z) noexcept {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// d softplus / dz.
inline double sigmoid(double z) noexcept {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus_inverse(double w) noexcept { return w > 30.0 ? w : std::log(std::expm1(w)); }

/// Feed-forward shape: input -> ReLU hidden layers -> one Softplus output.
struct Architecture {
    static constexpr std::size_t kMaxHiddenLayers = 4;
    static constexpr std::size_t kMaxWidth = 32;

    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden;

    void validate() const {
        require(input_dim >= 1, ErrorCode::InvalidArchitecture, "input_dim must be positive");
        require(hidden.size() <= kMaxHiddenLayers, ErrorCode::InvalidArchitecture,
                fmt::format("{} hidden layers, at most {}", hidden.size(), kMaxHiddenLayers));
        for (std::size_t w : hidden) {
            require(w >= 1 && w <= kMaxWidth, ErrorCode::InvalidArchitecture,
                    fmt::format("hidden width {} outside [1, {}]", w, kMaxWidth));
        }
    }

    /// Width of every layer including input and the scalar output.
    [[nodiscard]] std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w{input_dim};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(1);
        return w;
    }

    [[nodiscard]] std::size_t parameter_count() const {
        const auto w = widths();
        std::size_t count = 0;
        for (std::size_t l = 0; l + 1 < w.size(); ++l) {
            count += w[l] * w[l + 1] + w[l + 1];
        }
        return count;
    }

    [[nodiscard]] std::string describe() const {
        std::string out = std::to_string(input_dim);
        for (std::size_t w : hidden) {
            out += "-" + std::to_string(w);
        }
        return out + "-1";
    }

    bool operator==(const Architecture&) const = default;
};

/// Per-feature affine map (x - mean) / scale applied before the first layer.
struct FeatureNormalizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static FeatureNormalizer identity(std::size_t dim) {
        return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
    }

    /// Fits mean and standard deviation per column; columns with (near) zero
    /// spread keep scale 1.
    static FeatureNormalizer fit(std::span<const double> rows, std::size_t dim) {
        FeatureNormalizer norm = identity(dim);
        const std::size_t count = dim == 0 ? 0 : rows.size() / dim;
        if (count == 0) {
            return norm;
        }
        for (std::size_t f = 0; f < dim; ++f) {
            double sum = 0.0;
            for (std::size_t r = 0; r < count; ++r) {
                sum += rows[r * dim + f];
            }
            const double mean = sum / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t r = 0; r < count; ++r) {
                const double dv = rows[r * dim + f] - mean;
                ss += dv * dv;
            }
            const double sd = std::sqrt(ss / static_cast<double>(count));
            norm.mean[f] = mean;
            norm.scale[f] = sd > 1e-12 * std::max(1.0, std::fabs(mean)) ? sd : 1.0;
        }
        return norm;
    }

    bool operator==(const FeatureNormalizer&) const = default;
};

/// The weight function phi. Parameters are stored layer by layer, each layer
/// as its row-major [out][in] weight block followed by its out biases.
struct WeightNet {
    Architecture architecture;
    std::vector<double> parameters;
    FeatureNormalizer normalizer;

    void validate() const {
        architecture.validate();
        require(parameters.size() == architecture.parameter_count(), ErrorCode::InvalidArchitecture,
                fmt::format("{} parameters for architecture {} expecting {}", parameters.size(),
                            architecture.describe(), architecture.parameter_count()));
        require(normalizer.mean.size() == architecture.input_dim &&
                    normalizer.scale.size() == architecture.input_dim,
                ErrorCode::InvalidArchitecture, "normalizer dimension");
        for (double s : normalizer.scale) {
            require(s > 0.0 && std::isfinite(s), ErrorCode::InvalidArchitecture, "normalizer scale must be positive");
        }
    }

    bool operator==(const WeightNet&) const = default;
};

/// Derivatives of upstream * phi with respect to the parameters and the raw
/// (un-normalized) input features.
struct Gradient {
    std::vector<double> parameters;
    std::vector<double> input;
};

inline WeightNet init_params(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    WeightNet net{arch, std::vector<double>(arch.parameter_count(), 0.0), FeatureNormalizer::identity(arch.input_dim)};
    const auto widths = arch.widths();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        const bool output_layer = l + 2 == widths.size();
        // He-uniform; the output layer at a tenth of the range keeps initial weights near 1.
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in)) * (output_layer ? 0.1 : 1.0);
        Rng rng = Rng::substream(seed, {0x1417ULL, l});
        for (std::size_t k = 0; k < fan_in * fan_out; ++k) {
            net.parameters[offset + k] = rng.uniform(-limit, limit);
        }
        offset += fan_in * fan_out;
        if (output_layer) {
            net.parameters[offset] = softplus_inverse(1.0);
        }
        offset += fan_out;
    }
    return net;
}

namespace detail {

/// Activations recorded by a forward pass.
struct Tape {
    std::vector<std::vector<double>> pre;  // pre-activation per layer (after the input)
    std::vector<std::vector<double>> post; // post[0] = normalized input

    double run(const WeightNet& net, std::span<const double> input) {
        const auto& arch = net.architecture;
        for (double v : input) {
            require(std::isfinite(v), ErrorCode::NonFiniteInput, "phi input must be finite");
        }
        require(input.size() == arch.input_dim, ErrorCode::LengthMismatch,
                fmt::format("phi expects {} inputs, got {}", arch.input_dim, input.size()));
        const std::size_t layers = arch.hidden.size() + 1;
        pre.resize(layers);
        post.resize(layers + 1);
        post[0].resize(arch.input_dim);
        for (std::size_t f = 0; f < arch.input_dim; ++f) {
            post[0][f] = (input[f] - net.normalizer.mean[f]) / net.normalizer.scale[f];
        }
        const double* p = net.parameters.data();
        for (std::size_t l = 0; l < layers; ++l) {
            const auto& in = post[l];
            const std::size_t out_dim = l < arch.hidden.size() ? arch.hidden[l] : 1;
            const double* bias = p + out_dim * in.size();
            auto& z = pre[l];
            auto& a = post[l + 1];
            z.resize(out_dim);
            a.resize(out_dim);
            for (std::size_t j = 0; j < out_dim; ++j) {
                const double* row = p + j * in.size();
                double acc = bias[j];
                for (std::size_t k = 0; k < in.size(); ++k) {
                    acc += row[k] * in[k];
                }
                z[j] = acc;
                a[j] = l + 1 < layers ? std::max(acc, 0.0) : softplus(acc);
            }
            p = bias + out_dim;
        }
        return post[layers][0];
    }

    /// Adds upstream * d phi / d theta into param_grad; writes d phi / d input
    /// (raw features) into input_grad when non-empty.
    void backprop(const WeightNet& net, double upstream, std::span<double> param_grad, std::span<double> input_grad) {
        const auto& arch = net.architecture;
        const std::size_t layers = arch.hidden.size() + 1;
        std::vector<std::size_t> offsets(layers);
        {
            std::size_t offset = 0;
            for (std::size_t l = 0; l < layers; ++l) {
                offsets[l] = offset;
                const std::size_t out_dim = l < arch.hidden.size() ? arch.hidden[l] : 1;
                offset += out_dim * post[l].size() + out_dim;
            }
        }
        delta_.assign(1, upstream * sigmoid(pre[layers - 1][0]));
        for (std::size_t l = layers; l-- > 0;) {
            const auto& in = post[l];
            const std::size_t out_dim = delta_.size();
            const double* w = net.parameters.data() + offsets[l];
            double* gw = param_grad.data() + offsets[l];
            double* gb = gw + out_dim * in.size();
            for (std::size_t j = 0; j < out_dim; ++j) {
                const double dj = delta_[j];
                if (dj == 0.0) {
                    continue;
                }
                gb[j] += dj;
                for (std::size_t k = 0; k < in.size(); ++k) {
                    gw[j * in.size() + k] += dj * in[k];
                }
            }
            if (l == 0 && input_grad.empty()) {
                break;
            }
            next_.assign(in.size(), 0.0);
            for (std::size_t j = 0; j < out_dim; ++j) {
                const double dj = delta_[j];
                if (dj == 0.0) {
                    continue;
                }
                for (std::size_t k = 0; k < in.size(); ++k) {
                    next_[k] += dj * w[j * in.size() + k];
                }
            }
            if (l > 0) {
                // ReLU'(0) := 0
                for (std::size_t k = 0; k < in.size(); ++k) {
                    if (!(pre[l - 1][k] > 0.0)) {
                        next_[k] = 0.0;
                    }
                }
            }
            delta_.swap(next_);
        }
        if (!input_grad.empty()) {
            for (std::size_t f = 0; f < arch.input_dim; ++f) {
                input_grad[f] = delta_[f] / net.normalizer.scale[f];
            }
        }
    }

private:
    std::vector<double> delta_;
    std::vector<double> next_;
};

inline Tape& scratch_tape() {
    thread_local Tape tape;
    return tape;
}

} // namespace detail

/// phi(input) > 0.
inline double forward(const WeightNet& net, std::span<const double> input) {
    return detail::scratch_tape().run(net, input);
}

/// Pre-Softplus output of phi, i.e. softplus^{-1}(phi(input)).
inline double forward_logit(const WeightNet& net, std::span<const double> input) {
    auto& tape = detail::scratch_tape();
    tape.run(net, input);
    return tape.pre.back()[0];
}

/// Runs forward at input and adds upstream * d phi / d theta into param_grad.
/// Returns phi(input).
inline double accumulate_gradient(const WeightNet& net, std::span<const double> input, double upstream,
                                  std::span<double> param_grad, std::span<double> input_grad = {}) {
    auto& tape = detail::scratch_tape();
    const double out = tape.run(net, input);
    tape.backprop(net, upstream, param_grad, input_grad);
    return out;
}

inline Gradient backward(const WeightNet& net, std::span<const double> input, double upstream) {
    Gradient g{std::vector<double>(net.parameters.size(), 0.0), std::vector<double>(net.architecture.input_dim, 0.0)};
    accumulate_gradient(net, input, upstream, g.parameters, g.input);
    return g;
}

/// Hidden-unit on/off pattern at input; used to detect ReLU kinks.
inline std::vector<bool> activation_pattern(const WeightNet& net, std::span<const double> input) {
    auto& tape = detail::scratch_tape();
    tape.run(net, input);
    std::vector<bool> pattern;
    for (std::size_t l = 0; l + 1 < tape.pre.size(); ++l) {
        for (double z : tape.pre[l]) {
            pattern.push_back(z > 0.0);
        }
    }
    return pattern;
}

struct GradientCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_coordinate = 0;
    std::size_t coordinates_checked = 0;
    std::size_t kink_coordinates = 0; // skipped: the +-step probes straddle a ReLU kink
    bool near_kink = false;
    bool passed = false;
};

/// Compares backward() to central differences on every parameter and every
/// input feature. Coordinates whose probes switch a ReLU unit are flagged and
/// left out of the verdict.
inline GradientCheckReport check_gradient(const WeightNet& net, std::span<const double> input, double step,
                                          double tolerance) {
    require(step > 0.0, ErrorCode::InvalidConfig, "finite-difference step must be positive");
    const Gradient analytic = backward(net, input, 1.0);
    GradientCheckReport report;
    WeightNet probe = net;
    std::vector<double> x(input.begin(), input.end());

    auto consider = [&](double exact, double plus, double minus, bool kink, std::size_t index) {
        if (kink) {
            ++report.kink_coordinates;
            report.near_kink = true;
            return;
        }
        const double numeric = (plus - minus) / (2.0 * step);
        const double denom = std::max({std::fabs(exact), std::fabs(numeric), 1e-8});
        const double err = std::fabs(exact - numeric) / denom;
        ++report.coordinates_checked;
        if (err > report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_coordinate = index;
        }
    };

    const auto base_pattern = activation_pattern(net, x);
    for (std::size_t k = 0; k < probe.parameters.size(); ++k) {
        const double saved = probe.parameters[k];
        probe.parameters[k] = saved + step;
        const double plus = forward(probe, x);
        const bool kink_plus = activation_pattern(probe, x) != base_pattern;
        probe.parameters[k] = saved - step;
        const double minus = forward(probe, x);
        const bool kink_minus = activation_pattern(probe, x) != base_pattern;
        probe.parameters[k] = saved;
        consider(analytic.parameters[k], plus, minus, kink_plus || kink_minus, k);
    }
    for (std::size_t f = 0; f < x.size(); ++f) {
        const double saved = x[f];
        x[f] = saved + step;
        const double plus = forward(net, x);
        const bool kink_plus = activation_pattern(net, x) != base_pattern;
        x[f] = saved - step;
        const double minus = forward(net, x);
        const bool kink_minus = activation_pattern(net, x) != base_pattern;
        x[f] = saved;
        consider(analytic.input[f], plus, minus, kink_plus || kink_minus, probe.parameters.size() + f);
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
}

/// Upper bound on |d phi / d input[feature]| over all inputs: the feature's
/// first-layer column sum times the induced 1-norms of the later layers
/// (ReLU and Softplus are 1-Lipschitz), divided by the normalizer scale.
inline double certified_lipschitz(const WeightNet& net, std::size_t feature) {
    const auto widths = net.architecture.widths();
    const double* p = net.parameters.data();
    double bound = 0.0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        if (l == 0) {
            for (std::size_t j = 0; j < out; ++j) {
                bound += std::fabs(p[j * in + feature]);
            }
        } else {
            double norm = 0.0;
            for (std::size_t k = 0; k < in; ++k) {
                double col = 0.0;
                for (std::size_t j = 0; j < out; ++j) {
                    col += std::fabs(p[j * in + k]);
                }
                norm = std::max(norm, col);
            }
            bound *= norm;
        }
        p += in * out + out;
    }
    return bound / net.normalizer.scale[feature];
}

// ---------------------------------------------------------------------------
// Serialization. Text, versioned, reals as hexadecimal floating point so the
// round trip is bit-exact.

inline constexpr std::string_view kWeightNetMagic = "concnn-weightnet";
inline constexpr int kWeightNetVersion = 1;

namespace detail {

inline void write_reals(std::ostream& out, std::string_view key, std::span<const double> values) {
    out << key << ' ' << values.size();
    for (double v : values) {
        out << ' ' << fmt::format("{:a}", v);
    }
    out << '\n';
}

inline double parse_hex_real(const std::string& token) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    require(end != token.c_str() && *end == '\0', ErrorCode::InvalidModelFile, fmt::format("bad real '{}'", token));
    return v;
}

inline std::vector<double> read_reals(std::istream& in, std::string_view key) {
    std::string name;
    std::size_t count = 0;
    in >> name >> count;
    require(in.good() && name == key, ErrorCode::InvalidModelFile, fmt::format("expected '{}'", key));
    std::vector<double> values(count);
    for (auto& v : values) {
        std::string token;
        in >> token;
        require(!in.fail(), ErrorCode::InvalidModelFile, fmt::format("truncated '{}'", key));
        v = parse_hex_real(token);
    }
    return values;
}

} // namespace detail

inline void write_weightnet(std::ostream& out, const WeightNet& net) {
    out << kWeightNetMagic << ' ' << kWeightNetVersion << '\n';
    out << "input_dim " << net.architecture.input_dim << '\n';
    out << "hidden " << net.architecture.hidden.size();
    for (std::size_t w : net.architecture.hidden) {
        out << ' ' << w;
    }
    out << '\n';
    detail::write_reals(out, "normalizer_mean", net.normalizer.mean);
    detail::write_reals(out, "normalizer_scale", net.normalizer.scale);
    detail::write_reals(out, "parameters", net.parameters);
}

inline WeightNet read_weightnet(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    require(in.good() && magic == kWeightNetMagic, ErrorCode::InvalidModelFile, "not a weight-net file");
    require(version == kWeightNetVersion, ErrorCode::InvalidModelFile, fmt::format("unsupported version {}", version));
    WeightNet net;
    std::string key;
    in >> key >> net.architecture.input_dim;
    require(in.good() && key == "input_dim", ErrorCode::InvalidModelFile, "expected 'input_dim'");
    std::size_t layers = 0;
    in >> key >> layers;
    require(in.good() && key == "hidden", ErrorCode::InvalidModelFile, "expected 'hidden'");
    net.architecture.hidden.resize(layers);
    for (auto& w : net.architecture.hidden) {
        in >> w;
    }
    net.normalizer.mean = detail::read_reals(in, "normalizer_mean");
    net.normalizer.scale = detail::read_reals(in, "normalizer_scale");
    net.parameters = detail::read_reals(in, "parameters");
    try {
        net.validate();
    } catch (const Error& e) {
        fail(ErrorCode::InvalidModelFile, e.what());
    }
    return net;
}

} // namespace concnn
