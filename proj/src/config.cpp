#include "pvi/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pvi/serialize.hpp"

namespace config {

namespace {

const json& require(const json& j, const std::string& field) {
    if (!j.contains(field)) {
        throw ConfigError("missing required field '" + field + "'");
    }
    return j.at(field);
}

template <typename T>
T get_or(const json& j, const std::string& field, T fallback) {
    if (!j.contains(field)) return fallback;
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("malformed field '" + field + "'");
    }
}

models::Kind parse_model_kind(const std::string& s) {
    if (s == "gaussian_mean") return models::Kind::GaussianMean;
    if (s == "linear_regression") return models::Kind::LinearRegression;
    if (s == "logistic_regression") return models::Kind::LogisticRegression;
    throw ConfigError("unknown model.kind '" + s + "'");
}

std::string model_kind_name(models::Kind k) {
    switch (k) {
        case models::Kind::GaussianMean: return "gaussian_mean";
        case models::Kind::LinearRegression: return "linear_regression";
        default: return "logistic_regression";
    }
}

StrategyKind parse_strategy(const std::string& s) {
    if (s == "global_vi") return StrategyKind::GlobalVi;
    if (s == "pvi_sequential") return StrategyKind::PviSequential;
    if (s == "pvi_sync") return StrategyKind::PviSync;
    if (s == "pvi_async") return StrategyKind::PviAsync;
    if (s == "bcm_same") return StrategyKind::BcmSame;
    if (s == "bcm_split") return StrategyKind::BcmSplit;
    if (s == "pep_check") return StrategyKind::PepCheck;
    if (s == "spep_check") return StrategyKind::SpepCheck;
    throw ConfigError("unknown strategy '" + s + "'");
}

pvi::Strategy parse_optimizer_strategy(const std::string& s) {
    if (s == "analytic") return pvi::Strategy::Analytic;
    if (s == "fixed_point") return pvi::Strategy::FixedPoint;
    if (s == "gradient") return pvi::Strategy::GradientAscent;
    throw ConfigError("unknown optimizer.strategy '" + s + "'");
}

std::string optimizer_strategy_name(pvi::Strategy s) {
    switch (s) {
        case pvi::Strategy::Analytic: return "analytic";
        case pvi::Strategy::FixedPoint: return "fixed_point";
        default: return "gradient";
    }
}

fedsim::PartitionMode parse_partition_mode(const std::string& s) {
    if (s == "iid") return fedsim::PartitionMode::IID;
    if (s == "by_label") return fedsim::PartitionMode::ByLabel;
    if (s == "dirichlet") return fedsim::PartitionMode::DirichletSkew;
    throw ConfigError("unknown partition.mode '" + s + "'");
}

std::string partition_mode_name(fedsim::PartitionMode m) {
    switch (m) {
        case fedsim::PartitionMode::IID: return "iid";
        case fedsim::PartitionMode::ByLabel: return "by_label";
        default: return "dirichlet";
    }
}

}  // namespace

std::string strategy_name(StrategyKind s) {
    switch (s) {
        case StrategyKind::GlobalVi: return "global_vi";
        case StrategyKind::PviSequential: return "pvi_sequential";
        case StrategyKind::PviSync: return "pvi_sync";
        case StrategyKind::PviAsync: return "pvi_async";
        case StrategyKind::BcmSame: return "bcm_same";
        case StrategyKind::BcmSplit: return "bcm_split";
        case StrategyKind::PepCheck: return "pep_check";
        default: return "spep_check";
    }
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
    return serialize(*this) == serialize(other);
}

ExperimentConfig parse(const json& j) {
    ExperimentConfig cfg;

    const json& model = require(j, "model");
    cfg.model.kind = parse_model_kind(require(model, "kind").get<std::string>());
    cfg.model.mc_samples = get_or(model, "mc_samples", 64);
    if (cfg.model.mc_samples < 1) throw ConfigError("model.mc_samples must be >= 1");
    cfg.model.mc_seed_base = get_or<std::uint64_t>(model, "mc_seed_base", 0);
    cfg.model.integration = get_or<std::string>(model, "integration",
                                                "monte_carlo") == "quadrature"
                                ? models::Integration::Quadrature
                                : models::Integration::MonteCarlo;
    cfg.model.quadrature_order = get_or(model, "quadrature_order", 61);
    if (model.contains("hyper")) {
        cfg.hyper = serialize::hyper_from_json(model.at("hyper"));
    } else if (cfg.model.kind != models::Kind::LogisticRegression) {
        throw ConfigError("missing required field 'model.hyper'");
    }

    const json& prior = require(j, "prior");
    cfg.prior_dim = get_or(prior, "dim", 0);
    cfg.prior_mean = get_or(prior, "mean", 0.0);
    cfg.prior_variance = require(prior, "variance").get<double>();
    if (!(cfg.prior_variance > 0.0)) throw ConfigError("prior.variance must be > 0");

    const json& data = require(j, "data");
    cfg.train_csv = get_or<std::string>(data, "train_csv", "");
    cfg.test_csv = get_or<std::string>(data, "test_csv", "");
    cfg.append_bias = get_or(data, "append_bias", true);

    const json& part = get_or(j, "partition", json::object());
    cfg.partition.mode =
        parse_partition_mode(get_or<std::string>(part, "mode", "iid"));
    cfg.partition.workers = get_or(part, "workers", 1);
    cfg.partition.seed = get_or<std::uint64_t>(part, "seed", 0);
    cfg.partition.concentration = get_or(part, "concentration", 0.5);
    cfg.partition.validate();

    cfg.strategy = parse_strategy(require(j, "strategy").get<std::string>());

    const json& opt = get_or(j, "optimizer", json::object());
    cfg.optimizer.strategy =
        parse_optimizer_strategy(get_or<std::string>(opt, "strategy", "gradient"));
    cfg.optimizer.rho = get_or(opt, "rho", 1.0);
    cfg.optimizer.inner_steps = get_or(opt, "inner_steps", 1);
    cfg.optimizer.step_size = get_or(opt, "step_size", 0.05);
    cfg.optimizer.tolerance = get_or(opt, "tolerance", 1e-8);
    cfg.optimizer.fresh_seed_per_visit = get_or(opt, "fresh_seed_per_visit", true);
    cfg.optimizer.validate();
    cfg.sweeps = get_or(j, "sweeps", 10);

    const json& server = get_or(j, "server", json::object());
    cfg.server_damping = get_or(server, "damping", 1.0);
    if (!(cfg.server_damping > 0.0 && cfg.server_damping <= 1.0)) {
        throw ConfigError("server.damping must be in (0, 1]");
    }
    cfg.rounds = get_or(server, "rounds", 10);
    cfg.budget = get_or(server, "budget", 0.0);
    cfg.duration_lo = get_or(server, "duration_lo", 1.0);
    cfg.duration_hi = get_or(server, "duration_hi", 1.0);
    cfg.max_updates_per_worker = get_or(server, "max_updates_per_worker", 0);

    const json& hyper_learn = get_or(j, "hyper_learning", json::object());
    cfg.hyper_learning = get_or(hyper_learn, "enabled", false);
    cfg.hyper_step_size = get_or(hyper_learn, "step_size", 0.05);
    cfg.hyper_outer_steps = get_or(hyper_learn, "outer_steps", 0);

    const json& pep = get_or(j, "pep", json::object());
    cfg.pep_alphas = get_or(pep, "alphas", std::vector<double>{1e-2, 5e-3, 2.5e-3});
    cfg.pep_rho = get_or(pep, "rho", 2.5e-3);

    const json& seeds = get_or(j, "seeds", json::object());
    cfg.seed_run = get_or<std::uint64_t>(seeds, "run", 1);
    cfg.seed_scheduler = get_or<std::uint64_t>(seeds, "scheduler", 2);
    cfg.seed_eval = get_or<std::uint64_t>(seeds, "eval", 3);

    const json& eval = get_or(j, "eval", json::object());
    cfg.eval_mc_samples = get_or(eval, "mc_samples", 1000);

    const json& output = get_or(j, "output", json::object());
    cfg.metrics_csv = get_or<std::string>(output, "metrics_csv", "");
    cfg.trace_csv = get_or<std::string>(output, "trace_csv", "");
    cfg.checkpoint_path = get_or<std::string>(output, "checkpoint", "");

    // Strategy-specific requirements, checked before any compute.
    if (cfg.strategy != StrategyKind::PepCheck &&
        cfg.strategy != StrategyKind::SpepCheck && cfg.train_csv.empty()) {
        throw ConfigError("missing required field 'data.train_csv'");
    }
    if (cfg.strategy == StrategyKind::PviAsync && !(cfg.budget > 0.0)) {
        throw ConfigError("strategy pvi_async requires server.budget > 0");
    }
    if (cfg.strategy == StrategyKind::PviSync && cfg.rounds < 1) {
        throw ConfigError("strategy pvi_sync requires server.rounds >= 1");
    }
    if ((cfg.strategy == StrategyKind::PepCheck ||
         cfg.strategy == StrategyKind::SpepCheck) &&
        cfg.train_csv.empty()) {
        throw ConfigError("missing required field 'data.train_csv'");
    }
    return cfg;
}

json serialize(const ExperimentConfig& cfg) {
    json j;
    j["model"] = {{"kind", model_kind_name(cfg.model.kind)},
                  {"mc_samples", cfg.model.mc_samples},
                  {"mc_seed_base", cfg.model.mc_seed_base},
                  {"integration", cfg.model.integration ==
                                          models::Integration::Quadrature
                                      ? "quadrature"
                                      : "monte_carlo"},
                  {"quadrature_order", cfg.model.quadrature_order},
                  {"hyper", serialize::hyper_to_json(cfg.hyper)}};
    j["prior"] = {{"dim", cfg.prior_dim},
                  {"mean", cfg.prior_mean},
                  {"variance", cfg.prior_variance}};
    j["data"] = {{"train_csv", cfg.train_csv},
                 {"test_csv", cfg.test_csv},
                 {"append_bias", cfg.append_bias}};
    j["partition"] = {{"mode", partition_mode_name(cfg.partition.mode)},
                      {"workers", cfg.partition.workers},
                      {"seed", cfg.partition.seed},
                      {"concentration", cfg.partition.concentration}};
    j["strategy"] = strategy_name(cfg.strategy);
    j["optimizer"] = {{"strategy", optimizer_strategy_name(cfg.optimizer.strategy)},
                      {"rho", cfg.optimizer.rho},
                      {"inner_steps", cfg.optimizer.inner_steps},
                      {"step_size", cfg.optimizer.step_size},
                      {"tolerance", cfg.optimizer.tolerance},
                      {"fresh_seed_per_visit", cfg.optimizer.fresh_seed_per_visit}};
    j["sweeps"] = cfg.sweeps;
    j["server"] = {{"damping", cfg.server_damping},
                   {"rounds", cfg.rounds},
                   {"budget", cfg.budget},
                   {"duration_lo", cfg.duration_lo},
                   {"duration_hi", cfg.duration_hi},
                   {"max_updates_per_worker", cfg.max_updates_per_worker}};
    j["hyper_learning"] = {{"enabled", cfg.hyper_learning},
                           {"step_size", cfg.hyper_step_size},
                           {"outer_steps", cfg.hyper_outer_steps}};
    j["pep"] = {{"alphas", cfg.pep_alphas}, {"rho", cfg.pep_rho}};
    j["seeds"] = {{"run", cfg.seed_run},
                  {"scheduler", cfg.seed_scheduler},
                  {"eval", cfg.seed_eval}};
    j["eval"] = {{"mc_samples", cfg.eval_mc_samples}};
    j["output"] = {{"metrics_csv", cfg.metrics_csv},
                   {"trace_csv", cfg.trace_csv},
                   {"checkpoint", cfg.checkpoint_path}};
    return j;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    json* node = &j;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("override: empty path");
    for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // treat as a bare string
    (*node)[parts.back()] = parsed;
}

ExperimentConfig load_file(const std::string& path,
                           const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (const std::string& o : overrides) apply_override(j, o);
    ExperimentConfig cfg = parse(j);
    if (const char* env = std::getenv("PVI_SEED")) {
        cfg.seed_run = std::strtoull(env, nullptr, 10);
    }
    return cfg;
}

}  // namespace config
