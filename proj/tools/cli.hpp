#pragma once

#include "concnn/concnn.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace concnn::cli {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

/// Run configuration. Every value read is echoed, defaults included, into
/// `resolved()`, which is written out as the run manifest.
class Config {
public:
    explicit Config(pt::ptree tree) : tree_(std::move(tree)) {}

    std::optional<std::string> optional_text(const std::string& key) {
        const auto v = tree_.get_optional<std::string>(key);
        if (!v || csv::trim(*v).empty()) {
            return std::nullopt;
        }
        std::string out(csv::trim(*v));
        resolved_.put(key, out);
        return out;
    }

    std::string text(const std::string& key, const std::string& fallback) {
        auto v = optional_text(key);
        if (!v) {
            resolved_.put(key, fallback);
            return fallback;
        }
        return *v;
    }

    std::string required_text(const std::string& key) {
        auto v = optional_text(key);
        require(v.has_value(), ErrorCode::InvalidConfig, fmt::format("missing required key '{}'", key));
        return *v;
    }

    double real(const std::string& key, double fallback) { return to_real(key, text(key, csv::number(fallback))); }

    std::size_t count(const std::string& key, std::size_t fallback) {
        return to_count(key, text(key, std::to_string(fallback)));
    }

    bool flag(const std::string& key, bool fallback) {
        const auto v = text(key, fallback ? "true" : "false");
        if (v == "true" || v == "1" || v == "yes" || v == "on") {
            return true;
        }
        if (v == "false" || v == "0" || v == "no" || v == "off") {
            return false;
        }
        fail(ErrorCode::InvalidConfig, fmt::format("{}: '{}' is not a boolean", key, v));
    }

    std::vector<std::string> list(const std::string& key, const std::string& fallback) {
        return split(text(key, fallback));
    }

    std::vector<double> reals(const std::string& key, const std::string& fallback) {
        std::vector<double> out;
        for (const auto& item : list(key, fallback)) {
            out.push_back(to_real(key, item));
        }
        return out;
    }

    std::vector<std::size_t> counts(const std::string& key, const std::string& fallback) {
        std::vector<std::size_t> out;
        for (const auto& item : list(key, fallback)) {
            out.push_back(to_count(key, item));
        }
        return out;
    }

    /// Remembers a file the run reads so that no output may replace it.
    const std::string& input(const std::string& path) {
        require(fs::is_regular_file(path), ErrorCode::InvalidConfig, fmt::format("file '{}' not found", path));
        inputs_.emplace_back(path);
        return path;
    }

    [[nodiscard]] const std::vector<fs::path>& inputs() const noexcept { return inputs_; }

    /// Records a value computed by the run (e.g. a drawn seed).
    void record(const std::string& key, const std::string& value) { resolved_.put(key, value); }

    void set(const std::string& key, const std::string& value) { tree_.put(key, value); }

    [[nodiscard]] const pt::ptree& resolved() const noexcept { return resolved_; }

    static std::vector<std::string> split(const std::string& text) {
        std::vector<std::string> out;
        for (auto& item : csv::split_record(text)) {
            const auto t = csv::trim(item);
            if (!t.empty()) {
                out.emplace_back(t);
            }
        }
        return out;
    }

    static double to_real(const std::string& key, const std::string& value) {
        try {
            return csv::parse_double(value, key);
        } catch (const Error& e) {
            fail(ErrorCode::InvalidConfig, e.what());
        }
    }

    static std::size_t to_count(const std::string& key, const std::string& value) {
        std::int64_t v = 0;
        try {
            v = csv::parse_int(value, key);
        } catch (const Error& e) {
            fail(ErrorCode::InvalidConfig, e.what());
        }
        require(v >= 0, ErrorCode::InvalidConfig, fmt::format("{} must be non-negative", key));
        return static_cast<std::size_t>(v);
    }

private:
    pt::ptree tree_;
    pt::ptree resolved_;
    std::vector<fs::path> inputs_;
};

/// Flag values that override configuration keys.
struct Overrides {
    std::string config;
    std::optional<std::size_t> horizon;
    std::optional<std::string> seed;
    std::optional<std::string> out;
    std::optional<std::string> variant;
    std::optional<std::string> loss;
};

/// Hidden widths joined by '-', or "linear" for no hidden layer.
inline Architecture parse_architecture(const std::string& token) {
    Architecture arch;
    if (token == "linear" || token == "none") {
        return arch;
    }
    std::size_t start = 0;
    while (start <= token.size()) {
        const auto end = std::min(token.find('-', start), token.size());
        arch.hidden.push_back(Config::to_count("model.grid", token.substr(start, end - start)));
        start = end + 1;
    }
    arch.validate();
    return arch;
}

inline std::string describe_hidden(const Architecture& arch) {
    if (arch.hidden.empty()) {
        return "linear";
    }
    std::string out;
    for (std::size_t w : arch.hidden) {
        out += (out.empty() ? "" : "-") + std::to_string(w);
    }
    return out;
}

inline std::string model_label(Variant variant, LossKind loss) {
    const std::string prefix = loss == LossKind::L1 ? "L1-" : "P-";
    switch (variant) {
    case Variant::FeedForwardDirect: return "FF-NN";
    case Variant::Concurrent: return prefix + "Conc-NN";
    case Variant::ConcurrentPretrained: return prefix + "Pre-Conc-NN";
    }
    return "model";
}

/// Shared state of one invocation.
struct Run {
    Config config;
    std::string command;
    fs::path out_dir;
    std::uint64_t seed = 0;
    std::ostream& log;
    std::vector<std::string> written;

    fs::path output(const std::string& name) {
        const auto path = out_dir / name;
        std::error_code ec;
        for (const auto& in : config.inputs()) {
            require(!fs::equivalent(path, in, ec), ErrorCode::InvalidConfig,
                    fmt::format("output '{}' would overwrite input '{}'", path.string(), in.string()));
        }
        written.push_back(name);
        return path;
    }

    std::ofstream open(const std::string& name) {
        const auto path = output(name);
        std::ofstream out(path, std::ios::binary);
        require(out.good(), ErrorCode::InvalidConfig, fmt::format("cannot write '{}'", path.string()));
        return out;
    }
};

// ---------------------------------------------------------------------------
// Pieces shared by subcommands

inline std::string existing_file(Config& cfg, const std::string& key) {
    const auto path = cfg.required_text(key);
    require(fs::is_regular_file(path), ErrorCode::InvalidConfig, fmt::format("{}: file '{}' not found", key, path));
    return cfg.input(path);
}

inline Dataset load_dataset(Config& cfg) {
    const auto path = existing_file(cfg, "data.panel");
    PanelSchema schema;
    schema.product_column = cfg.text("data.product_column", schema.product_column);
    schema.week_column = cfg.text("data.week_column", schema.week_column);
    schema.sales_column = cfg.text("data.sales_column", schema.sales_column);
    schema.oracle_column = cfg.text("data.oracle_column", schema.oracle_column);
    schema.covariate_columns = cfg.list("data.covariates", "");
    auto panel = load_panel(path, schema);

    ScalerOptions options;
    const auto method = cfg.text("data.scaler", "tma");
    if (method == "oracle") {
        options.method = ScalerMethod::Oracle;
    } else if (method == "total") {
        options.method = ScalerMethod::TotalActual;
    } else if (method == "tma") {
        options.method = ScalerMethod::TrailingMovingAverage;
    } else {
        fail(ErrorCode::InvalidConfig, fmt::format("data.scaler: unknown method '{}' (oracle|total|tma)", method));
    }
    options.window = cfg.count("data.scaler_window", options.window);
    options.floor = cfg.real("data.scaler_floor", options.floor);
    auto scaler = compute_scaler(panel, options);
    return make_dataset(std::move(panel), std::move(scaler));
}

/// Defaults: the last 52 weeks are the test period and the 26 before them
/// the validation period.
inline SplitViews resolve_split(Config& cfg, std::size_t weeks) {
    const std::size_t test_end = cfg.count("split.test_end", weeks);
    const std::size_t valid_end = cfg.count("split.valid_end", test_end > 52 ? test_end - 52 : 0);
    const std::size_t train_end = cfg.count("split.train_end", valid_end > 26 ? valid_end - 26 : 0);
    return split(weeks, {train_end, valid_end, test_end});
}

inline WeekRange clamp_to_horizon(WeekRange range, std::size_t h) {
    range.begin = std::max(range.begin, h);
    range.end = std::max(range.end, range.begin);
    return range;
}

inline std::optional<double> resolve_alpha(Config& cfg) {
    const auto text = cfg.text("model.alpha", "auto");
    if (text == "auto") {
        return std::nullopt;
    }
    return Config::to_real("model.alpha", text);
}

inline std::vector<Architecture> resolve_grid(Config& cfg) {
    const auto items = cfg.list("model.grid", "default");
    if (items.size() == 1 && items.front() == "default") {
        return default_grid(1);
    }
    std::vector<Architecture> grid;
    for (const auto& item : items) {
        grid.push_back(parse_architecture(item));
    }
    require(!grid.empty(), ErrorCode::InvalidConfig, "model.grid is empty");
    return grid;
}

inline TrainConfig resolve_train_config(Config& cfg, LossKind loss, Variant variant, std::uint64_t seed) {
    TrainConfig tc;
    tc.loss = loss;
    tc.variant = variant;
    tc.seed = seed;
    const auto optimizer = cfg.text("train.optimizer", "adam");
    if (optimizer == "adam") {
        tc.optimizer.kind = OptimizerKind::Adam;
    } else if (optimizer == "sgd") {
        tc.optimizer.kind = OptimizerKind::Sgd;
    } else {
        fail(ErrorCode::InvalidConfig, fmt::format("train.optimizer: unknown '{}' (adam|sgd)", optimizer));
    }
    tc.optimizer.learning_rate = cfg.real("train.lr", tc.optimizer.learning_rate);
    tc.optimizer.beta1 = cfg.real("train.beta1", tc.optimizer.beta1);
    tc.optimizer.beta2 = cfg.real("train.beta2", tc.optimizer.beta2);
    tc.optimizer.epsilon = cfg.real("train.epsilon", tc.optimizer.epsilon);
    tc.epochs = cfg.count("train.epochs", tc.epochs);
    tc.early_stop_patience = cfg.count("train.patience", tc.early_stop_patience);
    tc.learning_rate_decay = cfg.real("train.lr_decay", tc.learning_rate_decay);
    tc.weight_by_scale = cfg.flag("train.weight_by_scale", tc.weight_by_scale);
    tc.validate();
    return tc;
}

inline WeightNet resolve_phi(Config& cfg, const std::string& section, std::size_t& covariate_count) {
    if (auto path = cfg.optional_text(section + ".phi_model")) {
        require(fs::is_regular_file(*path), ErrorCode::InvalidConfig,
                fmt::format("{}.phi_model: file '{}' not found", section, *path));
        auto model = load_model(cfg.input(*path));
        require(model.lag_count == 1, ErrorCode::InvalidConfig, "the generative phi must use exactly one lag");
        covariate_count = model.phi.architecture.input_dim - 1;
        return model.phi;
    }
    const double share_coef = cfg.real(section + ".share_coef", 2.0);
    const auto theta_coef = cfg.reals(section + ".theta_coef", "1");
    const double bias = cfg.real(section + ".bias", -0.5);
    covariate_count = theta_coef.size();
    return analytic_phi(share_coef, theta_coef, bias);
}

inline CovariateProcess resolve_covariates(Config& cfg, std::size_t count) {
    CovariateProcess process;
    process.count = count;
    const auto kind = cfg.text("simulate.covariates", "uniform");
    if (kind == "uniform") {
        process.kind = CovariateKind::IidUniform;
        process.lo = cfg.real("simulate.covariate_lo", 0.0);
        process.hi = cfg.real("simulate.covariate_hi", 1.0);
    } else if (kind == "constant") {
        process.kind = CovariateKind::Constant;
        process.values = cfg.reals("simulate.covariate_values", "");
    } else if (kind == "walk") {
        process.kind = CovariateKind::RandomWalk;
        process.step = cfg.real("simulate.covariate_step", 0.1);
    } else {
        fail(ErrorCode::InvalidConfig,
             fmt::format("simulate.covariates: unknown process '{}' (uniform|constant|walk)", kind));
    }
    return process;
}

/// Generative model described by the [simulate] section.
inline GenerativeSpec resolve_generative_spec(Config& cfg, std::uint64_t seed, WeightNet& phi_out) {
    std::size_t p = 0;
    phi_out = resolve_phi(cfg, "simulate", p);
    GenerativeSpec spec;
    spec.phi = as_weight_function(phi_out);
    spec.products = cfg.count("simulate.products", 20);
    spec.weeks = cfg.count("simulate.weeks", 260);
    spec.scaler = constant_scaler(cfg.real("simulate.scale", 1000.0), spec.weeks);
    spec.covariates = resolve_covariates(cfg, p);
    const auto init = cfg.text("simulate.init", "zeros");
    if (init == "zeros") {
        spec.init.kind = InitKind::Zeros;
    } else if (init == "poisson") {
        spec.init.kind = InitKind::PoissonAt;
        spec.init.rate = cfg.real("simulate.init_rate", 0.0);
    } else {
        fail(ErrorCode::InvalidConfig, fmt::format("simulate.init: unknown '{}' (zeros|poisson)", init));
    }
    spec.seed = seed;
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void run_simulate(Run& run) {
    WeightNet phi;
    const auto spec = resolve_generative_spec(run.config, run.seed, phi);
    const auto sim = simulate(spec);
    {
        auto out = run.open("panel.csv");
        write_panel_csv(out, sim.panel);
    }
    {
        auto out = run.open("truth.csv");
        write_truth_csv(out, sim);
    }
    fmt::print(run.log, "simulated {} products x {} weeks\n", spec.products, spec.weeks);
}

inline void write_selection_rows(std::ostream& out, const std::string& stage, const SelectionResult& sel) {
    for (std::size_t g = 0; g < sel.candidates.size(); ++g) {
        const auto& c = sel.candidates[g];
        out << stage << ',' << g << ',' << describe_hidden(c.architecture) << ',';
        if (c.result) {
            const auto& r = c.result->report;
            out << c.result->model.phi.parameters.size() << ',' << r.selected_epoch << ','
                << csv::number(r.valid_mape[r.selected_epoch - 1]) << ',' << (r.zero_prediction ? 1 : 0) << ','
                << (g == sel.best_index ? "selected" : "trained") << '\n';
        } else {
            out << ",,,," << "diverged" << '\n';
        }
    }
}

inline void run_train(Run& run) {
    auto& cfg = run.config;
    const auto data = load_dataset(cfg);
    const auto views = resolve_split(cfg, data.panel.week_count());
    const std::size_t h = cfg.count("model.horizon", 1);
    const std::size_t k = cfg.count("model.lags", 1);
    const auto alpha = resolve_alpha(cfg);
    const auto variant = parse_variant(cfg.text("model.variant", "concurrent"));
    const auto loss = parse_loss(cfg.text("model.loss", "poisson"));
    const auto grid = resolve_grid(cfg);
    const auto tc = resolve_train_config(cfg, loss, variant, run.seed);
    const WeekRange valid = clamp_to_horizon(views.valid, h);

    auto selection_out = run.open("selection.csv");
    selection_out << "stage,candidate,architecture,parameters,selected_epoch,valid_mape,zero_prediction,status\n";
    TrainResult result;
    if (variant == Variant::ConcurrentPretrained) {
        TrainConfig ff = tc;
        ff.variant = Variant::FeedForwardDirect;
        ff.loss = parse_loss(cfg.text("train.pretrain_loss", "l1"));
        const auto pre = select_model(grid, data, views.train, valid, h, k, ff, alpha);
        write_selection_rows(selection_out, "pretrain", pre);
        const auto target = make_model(pre.best.model.phi.architecture, data, views.train, h, k,
                                       Variant::ConcurrentPretrained, run.seed, alpha);
        TrainConfig tune = tc;
        tune.epochs = cfg.count("train.finetune_epochs", tc.epochs);
        result = pretrain_transfer(pre.best, target, data, views.train, valid, tune);
        if (result.report.small_weights) {
            fmt::print(run.log, "warning: transferred weights are small; predictions may collapse to zero\n");
        }
    } else {
        const auto sel = select_model(grid, data, views.train, valid, h, k, tc, alpha);
        write_selection_rows(selection_out, "select", sel);
        result = sel.best;
    }
    save_model(run.output("model.txt").string(), result.model);
    {
        auto out = run.open("train_report.csv");
        out << "epoch,train_loss,valid_mape\n";
        const auto& r = result.report;
        for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
            out << e + 1 << ',' << csv::number(r.train_loss[e]) << ','
                << (e < r.valid_mape.size() ? csv::number(r.valid_mape[e]) : std::string()) << '\n';
        }
    }
    const auto& r = result.report;
    fmt::print(run.log, "trained {} ({}), selected epoch {}, zero_prediction={}, clamped={}\n",
               model_label(variant, loss), result.model.phi.architecture.describe(), r.selected_epoch,
               r.zero_prediction, r.clamped_predictions);
}

inline WeekRange resolve_range(Config& cfg, const std::string& key, const SplitViews& views, std::size_t weeks,
                               std::size_t h) {
    const auto which = cfg.text(key, "test");
    WeekRange range;
    if (which == "test") {
        range = views.test;
    } else if (which == "valid") {
        range = views.valid;
    } else if (which == "train") {
        range = views.train;
    } else if (which == "all") {
        range = {0, weeks};
    } else {
        fail(ErrorCode::InvalidConfig, fmt::format("{}: unknown range '{}' (train|valid|test|all)", key, which));
    }
    return clamp_to_horizon(range, h);
}

inline ConcurrentModel load_model_file(Config& cfg, const std::string& key) {
    return load_model(existing_file(cfg, key));
}

inline void run_predict(Run& run) {
    auto& cfg = run.config;
    const auto model = load_model_file(cfg, "model.file");
    const auto data = load_dataset(cfg);
    require(data.panel.covariate_count() + model.lag_count == model.phi.architecture.input_dim,
            ErrorCode::ArchitectureMismatch, "model inputs do not match the configured covariates");
    const auto views = resolve_split(cfg, data.panel.week_count());
    const auto range = resolve_range(cfg, "predict.range", views, data.panel.week_count(), model.horizon);
    const auto name = cfg.text("model.name", model_label(model.variant, LossKind::Poisson));
    const auto report = rolling_evaluate(model_forecaster(model), data, range, model.horizon, name);
    auto out = run.open("predictions.csv");
    write_predictions_header(out);
    write_predictions_rows(out, data, report);
    fmt::print(run.log, "{} predictions, MAPE {:.4f}\n", report.records.size(), report.mape);
}

/// Rescales each week's predictions to the total lagged share of the
/// predicted products at the forecast origin.
inline Forecaster rescaled_to_origin_total(Forecaster base) {
    return rescaled(std::move(base), [](const ForecastContext& ctx) {
        double total = 0.0;
        for (std::size_t i : ctx.products()) {
            total += ctx.share(i, ctx.origin());
        }
        return total;
    });
}

inline void run_evaluate(Run& run) {
    auto& cfg = run.config;
    std::vector<EvaluationReport> reports;
    if (auto predictions = cfg.optional_text("evaluate.predictions")) {
        require(fs::is_regular_file(*predictions), ErrorCode::InvalidConfig,
                fmt::format("evaluate.predictions: file '{}' not found", *predictions));
        reports = mape_from_predictions(csv::read_file(cfg.input(*predictions)), cfg.count("model.horizon", 1));
    } else {
        const auto data = load_dataset(cfg);
        const auto views = resolve_split(cfg, data.panel.week_count());
        const auto horizons = cfg.counts("evaluate.horizons", std::to_string(cfg.count("model.horizon", 1)));
        const bool baselines = cfg.flag("evaluate.baselines", true);
        const bool with_rescaled = cfg.flag("evaluate.rescaled", false);
        std::vector<ConcurrentModel> models;
        std::vector<std::string> names;
        for (const auto& path : cfg.list("evaluate.models", "")) {
            require(fs::is_regular_file(path), ErrorCode::InvalidConfig,
                    fmt::format("evaluate.models: file '{}' not found", path));
            models.push_back(load_model(cfg.input(path)));
            names.push_back(fs::path(path).stem().string());
        }
        const auto labels = cfg.list("evaluate.names", "");
        for (std::size_t m = 0; m < labels.size() && m < names.size(); ++m) {
            names[m] = labels[m];
        }
        for (std::size_t h : horizons) {
            require(h >= 1, ErrorCode::InvalidConfig, "evaluate.horizons must be positive");
            const auto test = clamp_to_horizon(views.test, h);
            std::vector<std::pair<std::string, Forecaster>> entries;
            if (baselines) {
                const BaselineModel lv{BaselineKind::LastValue, 1, h};
                entries.emplace_back(lv.name(), baseline_forecaster(lv));
                const auto ma = select_moving_average(data, clamp_to_horizon(views.valid, h), h);
                entries.emplace_back(ma.name(), baseline_forecaster(ma));
            }
            for (std::size_t m = 0; m < models.size(); ++m) {
                if (models[m].horizon == h) {
                    entries.emplace_back(names[m], model_forecaster(models[m]));
                }
            }
            if (with_rescaled) {
                const std::size_t base = entries.size();
                for (std::size_t e = 0; e < base; ++e) {
                    entries.emplace_back("S-" + entries[e].first, rescaled_to_origin_total(entries[e].second));
                }
            }
            auto out = run.open(fmt::format("predictions_h{}.csv", h));
            write_predictions_header(out);
            for (const auto& [name, forecaster] : entries) {
                auto report = rolling_evaluate(forecaster, data, test, h, name);
                write_predictions_rows(out, data, report);
                report.records.clear();
                reports.push_back(std::move(report));
            }
        }
    }
    auto out = run.open("mape_summary.csv");
    write_mape_summary(out, reports);
    for (const auto& r : reports) {
        fmt::print(run.log, "{:<16} h={:<3} MAPE {:.4f}{}\n", r.model, r.horizon, r.mape,
                   r.zero_prediction ? " (predicts zero)" : "");
    }
}

inline void run_pdp(Run& run) {
    auto& cfg = run.config;
    const auto model = load_model_file(cfg, "model.file");
    const auto data = load_dataset(cfg);
    const auto views = resolve_split(cfg, data.panel.week_count());
    const auto names = model.features.empty() ? feature_names(model.lag_count, data.panel.covariate_names)
                                              : model.features;
    const auto feature = cfg.text("pdp.feature", names.back());
    const auto bins = cfg.count("pdp.bins", kPartialDependenceBins);
    const auto curve = partial_dependence(model, data, views.train, views.test, feature, bins);
    auto out = run.open("pdp_" + feature + ".csv");
    write_partial_dependence(out, curve);
    if (curve.degenerate) {
        fmt::print(run.log, "warning: '{}' has {} distinct training values; one bin per value\n", feature,
                   curve.bin_values.size());
    }
    fmt::print(run.log, "partial dependence of '{}' over {} bins\n", feature, curve.bin_values.size());
}

inline void run_check_theory(Run& run) {
    auto& cfg = run.config;
    WeightNet phi;
    auto spec = resolve_generative_spec(cfg, run.seed, phi);
    const std::size_t d = spec.products;

    TheoryReport report;
    const auto theta_count = cfg.count("theory.theta_samples", 64);
    const auto covariates = generate_covariates(spec.covariates, d, spec.weeks, spec.seed);
    std::vector<std::vector<double>> thetas;
    const std::size_t p = spec.covariates.count;
    for (std::size_t c = 0; c < theta_count && c < d * spec.weeks; ++c) {
        thetas.emplace_back(covariates.begin() + static_cast<std::ptrdiff_t>(c * p),
                            covariates.begin() + static_cast<std::ptrdiff_t>((c + 1) * p));
    }
    const auto lip = estimate_lipschitz(phi, cfg.real("theory.x_lo", 0.0), cfg.real("theory.x_hi", 1.0), thetas,
                                        cfg.count("theory.grid", 101));
    report.tau = lip.certified;
    report.tau_sampled = lip.sampled;
    const auto contraction = contraction_check(report.tau, spec.scaler);
    report.tau_s = contraction.tau_s;
    report.rho = contraction.rho;
    report.contraction_pass = contraction.pass;

    // Coupled Monte Carlo on random state pairs around the typical sales level.
    const std::size_t pair_count = cfg.count("theory.pairs", 8);
    const std::size_t replicas = cfg.count("theory.replicas", 10000);
    std::vector<StatePair> pairs;
    Rng pair_rng = Rng::substream(run.seed, {0x9a125ULL});
    const double level = 2.0 * spec.scaler.values[0] / static_cast<double>(d + 1);
    for (std::size_t k = 0; k < pair_count; ++k) {
        StatePair pair{std::vector<double>(d), std::vector<double>(d)};
        for (std::size_t i = 0; i < d; ++i) {
            pair.x[i] = std::floor(pair_rng.uniform(0.0, level));
            pair.x_prime[i] = std::floor(pair_rng.uniform(0.0, level));
        }
        pair.x_prime[0] = pair.x[0] + 1.0 + std::floor(pair_rng.uniform(0.0, level));
        pairs.push_back(std::move(pair));
    }
    const auto empirical = empirical_contraction(spec, pairs, replicas);

    const auto constants = bernstein_constants(d, spec.scaler);
    report.M = constants.M;
    report.V1 = constants.V;
    report.V2 = constants.V;
    BoundInputs bound;
    bound.n = cfg.count("theory.n", spec.weeks);
    bound.delta = cfg.real("theory.delta", 0.05);
    const auto log_term = cfg.text("theory.log", "two");
    require(log_term == "one" || log_term == "two", ErrorCode::InvalidConfig, "theory.log must be one|two");
    bound.log_variant = log_term == "one" ? ConfidenceLog::OneOverDelta : ConfidenceLog::TwoOverDelta;
    bound.tau = report.tau;
    bound.rho = report.rho;
    bound.M = report.M;
    bound.V1 = report.V1;
    bound.V2 = report.V2;
    if (report.rho < 1.0) {
        report.K = geometric_sum(report.rho, bound.n - 1);
        report.bound_value = theorem_bound(bound);
    } else {
        report.K = std::nan("");
        report.bound_value = std::nan("");
    }

    const auto k_max = cfg.count("theory.k_max", 6);
    const auto samples = cfg.count("theory.samples", 100000);
    for (double lambda : cfg.reals("theory.lambdas", "0.5, 1, 5")) {
        report.moment_checks.push_back(poisson_moment_check(lambda, k_max, samples, run.seed));
    }
    const auto dispersion_samples = cfg.count("theory.dispersion_samples", 10000);
    {
        std::vector<double> theta(d * p);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t c = 0; c < p; ++c) {
                theta[i * p + c] = covariates[(i * spec.weeks + 1) * p + c];
            }
        }
        const std::vector<double> x0(d, 0.0);
        const auto intensities =
            transition_intensities(x0, theta, spec.scaler.values[0], spec.scaler.values[1], spec.phi);
        report.h_moments = dispersion_moments(intensities.lambdas, k_max, dispersion_samples, constants, run.seed);
        const std::vector<double> initial(d, spec.init.kind == InitKind::PoissonAt ? spec.init.rate : 0.0);
        report.g_moments = dispersion_moments(initial, k_max, dispersion_samples, constants, run.seed);
    }

    {
        auto out = run.open("theory_report.txt");
        write_theory_report(out, report);
        out << "n = " << bound.n << '\n';
        out << "delta = " << csv::number(bound.delta) << '\n';
        out << "log_term = " << (bound.log_variant == ConfidenceLog::OneOverDelta ? "log(1/delta)" : "log(2/delta)")
            << '\n';
        out << "R = " << csv::number(constants.R) << '\n';
        out << "contraction_max_ratio = " << csv::number(empirical.max_ratio) << '\n';
        out << "contraction_max_ratio_sigma = " << csv::number(empirical.max_ratio_sigma) << '\n';
        out << "contraction_within_band = " << (empirical.within(report.rho) ? "true" : "false") << '\n';
        if (cfg.flag("theory.decay", false)) {
            DecayConfig dc;
            dc.truth = phi;
            dc.scale = spec.scaler.values[0];
            dc.products = cfg.count("theory.decay_products", 10);
            dc.covariates = spec.covariates;
            dc.init = spec.init;
            dc.n_grid = cfg.counts("theory.decay_grid", "100, 400, 1600");
            dc.replicas = cfg.count("theory.decay_replicas", 20);
            dc.test_weeks = cfg.count("theory.decay_test_weeks", 2000);
            dc.seed = run.seed;
            dc.architecture = parse_architecture(cfg.text("theory.decay_architecture", "linear"));
            dc.train = resolve_train_config(cfg, LossKind::Poisson, Variant::Concurrent, run.seed);
            const auto decay = risk_decay_experiment(dc);
            out << "decay_slope = " << csv::number(decay.slope) << '\n';
            auto table = run.open("decay_table.csv");
            write_decay_table(table, decay);
            fmt::print(run.log, "risk decay slope {:.4f}\n", decay.slope);
        }
    }
    {
        auto out = run.open("moment_margins.csv");
        write_moment_margins(out, report.moment_checks);
    }
    {
        auto out = run.open("dispersion_moments.csv");
        write_dispersion_moments(out, report);
    }
    fmt::print(run.log, "tau {:.6g}, tau_s {:.6g}, rho {:.6g} ({}), bound {:.6g}\n", report.tau, report.tau_s,
               report.rho, report.contraction_pass ? "contraction" : "no contraction", report.bound_value);
}

// ---------------------------------------------------------------------------
// Entry point

inline std::uint64_t resolve_seed(Config& cfg) {
    const auto text = cfg.text("run.seed", "1");
    if (text == "random") {
        std::random_device device;
        const std::uint64_t seed = (static_cast<std::uint64_t>(device()) << 32U) ^ device();
        cfg.record("run.seed", std::to_string(seed));
        return seed;
    }
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
    require(ec == std::errc{} && ptr == text.data() + text.size(), ErrorCode::InvalidConfig,
            fmt::format("run.seed: '{}' is neither an unsigned integer nor 'random'", text));
    return seed;
}

inline void report_error(std::ostream& err, int status, std::string_view code, std::string_view message) {
    if (message.substr(0, code.size()) == code && message.substr(code.size(), 2) == ": ") {
        message.remove_prefix(code.size() + 2);
    }
    std::string flat(message);
    std::replace(flat.begin(), flat.end(), '\n', ' ');
    std::string quoted;
    for (char c : flat) {
        if (c == '"' || c == '\\') {
            quoted.push_back('\\');
        }
        quoted.push_back(c);
    }
    const char* category = status == 1 ? "config" : (status == 2 ? "data" : "numerical");
    fmt::print(err, "error: exit={} category={} code={} message=\"{}\"\n", status, category, code, quoted);
}

/// Runs one command line. Returns the process exit status: 0 success,
/// 1 configuration error, 2 data error, 3 numerical failure.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Competition-aware market-share forecasting", "concnn"};
    app.require_subcommand(1);
    Overrides flags;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "Simulate a panel from the generative model"},
        {"train", "Train and select a weight network"},
        {"predict", "Predict shares with a trained model"},
        {"evaluate", "Rolling evaluation of models and baselines"},
        {"pdp", "Partial dependence of a trained model"},
        {"check-theory", "Contraction, moment and risk-bound checks"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", flags.config, "INI configuration file");
        sub->add_option("--horizon", flags.horizon, "Forecast horizon in weeks");
        sub->add_option("--seed", flags.seed, "Seed, or 'random'");
        sub->add_option("--out", flags.out, "Output directory");
        sub->add_option("--variant", flags.variant, "feedforward | concurrent | pretrained");
        sub->add_option("--loss", flags.loss, "l1 | poisson");
    }

    if (!args.empty() && !args.front().empty() && args.front().front() != '-' &&
        std::none_of(commands.begin(), commands.end(), [&](const auto& c) { return c.first == args.front(); })) {
        report_error(err, 1, "Usage", fmt::format("unknown subcommand '{}'", args.front()));
        err << app.help();
        return 1;
    }

    std::vector<const char*> argv{"concnn"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        report_error(err, 1, "Usage", e.what());
        err << app.help();
        return 1;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        pt::ptree tree;
        if (!flags.config.empty()) {
            require(fs::is_regular_file(flags.config), ErrorCode::InvalidConfig,
                    fmt::format("config file '{}' not found", flags.config));
            pt::read_ini(flags.config, tree);
        }
        Config cfg(std::move(tree));
        if (!flags.config.empty()) {
            cfg.input(flags.config);
        }
        if (flags.horizon) {
            cfg.set("model.horizon", std::to_string(*flags.horizon));
        }
        if (flags.seed) {
            cfg.set("run.seed", *flags.seed);
        }
        if (flags.out) {
            cfg.set("run.out", *flags.out);
        }
        if (flags.variant) {
            cfg.set("model.variant", *flags.variant);
        }
        if (flags.loss) {
            cfg.set("model.loss", *flags.loss);
        }
        cfg.record("run.command", command);
        const std::uint64_t seed = resolve_seed(cfg);
        const fs::path out_dir = cfg.text("run.out", "out");
        fs::create_directories(out_dir);
        Run state{std::move(cfg), command, out_dir, seed, out, {}};
        const auto manifest = state.output("manifest.ini");

        if (command == "simulate") {
            run_simulate(state);
        } else if (command == "train") {
            run_train(state);
        } else if (command == "predict") {
            run_predict(state);
        } else if (command == "evaluate") {
            run_evaluate(state);
        } else if (command == "pdp") {
            run_pdp(state);
        } else {
            run_check_theory(state);
        }
        pt::write_ini(manifest.string(), state.config.resolved());
        for (const auto& name : state.written) {
            fmt::print(out, "wrote {}\n", (out_dir / name).string());
        }
        return 0;
    } catch (const Error& e) {
        const int status = static_cast<int>(e.category());
        report_error(err, status, to_string(e.code()), e.what());
        return status;
    } catch (const pt::ptree_error& e) {
        report_error(err, 1, "ConfigSyntax", e.what());
        return 1;
    } catch (const fs::filesystem_error& e) {
        report_error(err, 1, "FileSystem", e.what());
        return 1;
    }
}

} // namespace concnn::cli
