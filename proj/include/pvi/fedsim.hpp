#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "pvi/dataset.hpp"
#include "pvi/expfam.hpp"
#include "pvi/models.hpp"
#include "pvi/pvi.hpp"

namespace fedsim {

struct DataShard {
    int shard_id = 0;
    data::Dataset data;
};

enum class PartitionMode { IID, ByLabel, DirichletSkew };

struct PartitionSpec {
    PartitionMode mode = PartitionMode::IID;
    int workers = 1;             // K
    std::uint64_t seed = 0;
    double concentration = 0.5;  // DirichletSkew only, > 0

    void validate() const;
};

// Disjoint cover of the dataset, deterministic given the seed. IID shuffles
// then deals round-robin; ByLabel requires K == number of distinct labels and
// gives each shard one label; DirichletSkew splits each label's rows by a
// Dirichlet(concentration) draw over workers (empty shards are legal).
std::vector<DataShard> partition(const data::Dataset& ds,
                                 const PartitionSpec& spec);

struct ServerState {
    pvi::PosteriorState state;
    double damping = 1.0;  // scales incoming site deltas in natural space
    long messages_up = 0;
    long messages_down = 0;
    long rejected_deltas = 0;
    double simulated_time = 0.0;
};

struct WorkerCfg {
    pvi::LocalOptimizerCfg local;
    // Asynchronous schedule only: per-job simulated durations are uniform on
    // [duration_lo, duration_hi), drawn from the scheduler seed.
    double duration_lo = 1.0;
    double duration_hi = 1.0;
    // Optional per-worker start offsets (defaults to all zero).
    std::vector<double> start_offsets;
    // 0 means no per-worker cap.
    int max_updates_per_worker = 0;
};

struct EventRow {
    double event_time = 0.0;
    std::string event_type;  // "apply", "reject", "round"
    int worker = -1;
    int round = -1;
    std::optional<double> error;
    std::optional<double> nll;
    long messages_up = 0;
    long messages_down = 0;
    std::optional<double> global_fe;
};

// Optional per-event evaluation on a held-out set.
struct EvalHook {
    data::Dataset test;
    int mc_samples = 1000;
    std::uint64_t seed = 0;
    bool record_global_fe = false;
};

struct SimResult {
    ServerState server;
    std::vector<EventRow> events;
};

// One pass, shards in index order, each worker running its local refinement
// against the running posterior; equivalent to pvi::run with that schedule.
// Counters: one down plus one up message per worker.
SimResult run_sequential(const ServerState& server,
                         const std::vector<DataShard>& shards,
                         const models::ModelKind& model,
                         const models::Hyperparams& eps, const WorkerCfg& cfg,
                         std::uint64_t seed,
                         const std::optional<EvalHook>& eval = std::nullopt);

// Rounds of: broadcast the posterior, refine every shard from the same
// snapshot, apply all deltas serially with server damping. A round that
// rejects every delta aborts the run.
SimResult run_synchronous(const ServerState& server,
                          const std::vector<DataShard>& shards, int rounds,
                          const models::ModelKind& model,
                          const models::Hyperparams& eps, const WorkerCfg& cfg,
                          std::uint64_t seed,
                          const std::optional<EvalHook>& eval = std::nullopt);

// Lock-free updates simulated by a deterministic discrete-event queue: a
// finishing worker's delta is applied immediately and the worker refetches a
// possibly stale-inconsistent context. Event order is a pure function of the
// scheduler seed.
SimResult run_asynchronous(const ServerState& server,
                           const std::vector<DataShard>& shards,
                           double wallclock_budget,
                           const models::ModelKind& model,
                           const models::Hyperparams& eps, const WorkerCfg& cfg,
                           std::uint64_t scheduler_seed,
                           const std::optional<EvalHook>& eval = std::nullopt);

enum class BcmMode { Same, Split };

// Committee combination of independently trained sub-posteriors:
// Same uses sum eta_k - (K-1) eta_0, Split assumes worker k trained with the
// prior raised to N_k / N and simply sums.
expfam::GaussianDist bcm_combine(
    const std::vector<expfam::NaturalParams>& sub_posteriors,
    const expfam::NaturalParams& prior, BcmMode mode);

struct Evaluation {
    double error = 0.0;
    double mean_nll = 0.0;
};

// Classification error at threshold 0.5 plus mean negative log-likelihood
// for the logistic model; squared-error and Gaussian NLL for regression.
Evaluation evaluate(const expfam::GaussianDist& posterior,
                    const models::ModelKind& model, const data::Dataset& test,
                    const models::Hyperparams& eps, int mc_samples,
                    std::uint64_t seed);

void write_metrics_csv(const std::vector<EventRow>& rows,
                       const std::string& path);

}  // namespace fedsim
