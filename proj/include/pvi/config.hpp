#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvi/fedsim.hpp"
#include "pvi/models.hpp"
#include "pvi/pvi.hpp"

namespace config {

using json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class StrategyKind {
    GlobalVi,
    PviSequential,
    PviSync,
    PviAsync,
    BcmSame,
    BcmSplit,
    PepCheck,
    SpepCheck,
};

struct ExperimentConfig {
    // model
    models::ModelKind model;
    models::Hyperparams hyper;
    // prior: dim 0 means "infer from the data"
    int prior_dim = 0;
    double prior_mean = 0.0;
    double prior_variance = 1.0;
    // data
    std::string train_csv;
    std::string test_csv;
    bool append_bias = true;
    // partition
    fedsim::PartitionSpec partition;
    // strategy + optimizer
    StrategyKind strategy = StrategyKind::GlobalVi;
    pvi::LocalOptimizerCfg optimizer;
    int sweeps = 10;  // schedule length for global_vi / bcm training
    // server (sync/async)
    double server_damping = 1.0;
    int rounds = 10;
    double budget = 0.0;
    double duration_lo = 1.0;
    double duration_hi = 1.0;
    int max_updates_per_worker = 0;
    // hyper learning (coordinate ascent between sweeps)
    bool hyper_learning = false;
    double hyper_step_size = 0.05;
    int hyper_outer_steps = 0;
    // pep_check / spep_check
    std::vector<double> pep_alphas = {1e-2, 5e-3, 2.5e-3};
    double pep_rho = 2.5e-3;
    // seeds
    std::uint64_t seed_run = 1;
    std::uint64_t seed_scheduler = 2;
    std::uint64_t seed_eval = 3;
    // evaluation
    int eval_mc_samples = 1000;
    // outputs
    std::string metrics_csv;
    std::string trace_csv;
    std::string checkpoint_path;

    bool operator==(const ExperimentConfig& other) const;
};

// Throws ConfigError naming the missing or malformed field.
ExperimentConfig parse(const json& j);
json serialize(const ExperimentConfig& cfg);

ExperimentConfig load_file(const std::string& path,
                           const std::vector<std::string>& overrides = {});

// Applies one "dotted.path=value" assignment onto the raw JSON document.
void apply_override(json& j, const std::string& assignment);

std::string strategy_name(StrategyKind s);

}  // namespace config
