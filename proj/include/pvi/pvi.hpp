#pragma once

#include <map>
#include <optional>
#include <vector>

#include "pvi/dataset.hpp"
#include "pvi/expfam.hpp"
#include "pvi/models.hpp"

namespace pvi {

struct DivergenceError : std::runtime_error {
    int iteration = -1;
    explicit DivergenceError(const std::string& msg, int iter = -1)
        : std::runtime_error(msg), iteration(iter) {}
};

struct UnknownShardError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// One approximate-likelihood factor t_m(theta) = exp(eta^T T(theta) +
// log_scale). The scale keeps q(theta) = p(theta) prod_m t_m(theta) an exact
// identity of normalized densities, which is what makes the local
// free-energies sum to the global one at fixed points.
struct SiteFactor {
    int shard_id = 0;
    expfam::NaturalParams natural;
    double log_scale = 0.0;
};

// Immutable posterior snapshot: prior natural parameters plus the site
// registry. The cached posterior is always recomputed as prior + sites in
// ascending shard order, so the conservation identity holds bit-for-bit.
class PosteriorState {
  public:
    PosteriorState(expfam::NaturalParams prior, const std::vector<int>& shard_ids);

    const expfam::NaturalParams& prior() const { return prior_; }
    const expfam::NaturalParams& posterior() const { return posterior_; }
    expfam::GaussianDist posterior_dist() const {
        return expfam::GaussianDist(posterior_);
    }
    int dim() const { return prior_.dim(); }

    const std::map<int, SiteFactor>& sites() const { return sites_; }
    const SiteFactor& site(int shard_id) const;
    bool has_shard(int shard_id) const { return sites_.count(shard_id) > 0; }
    std::vector<int> shard_ids() const;

    // New state with one site's natural parameters replaced. The site's
    // log_scale absorbs the posterior's log-partition change so the density
    // identity is preserved. Throws if the new posterior is improper.
    PosteriorState with_site(int shard_id, const expfam::NaturalParams& eta) const;
    // As above but returns nullopt instead of throwing on impropriety.
    std::optional<PosteriorState> try_with_site(
        int shard_id, const expfam::NaturalParams& eta) const;
    // Replace several sites from one snapshot (parallel update).
    PosteriorState with_sites(
        const std::vector<std::pair<int, expfam::NaturalParams>>& updates) const;
    PosteriorState with_prior(const expfam::NaturalParams& prior) const;

    // Recomputes prior + sum of sites and compares to the cache bit-for-bit.
    bool conservation_holds() const;

    // Rebuild a state from checkpointed sites, log scales included verbatim.
    static PosteriorState restore(expfam::NaturalParams prior,
                                  const std::vector<SiteFactor>& sites);

  private:
    PosteriorState() = default;
    void recompute();

    expfam::NaturalParams prior_;
    std::map<int, SiteFactor> sites_;
    expfam::NaturalParams posterior_;
};

enum class Strategy { Analytic, FixedPoint, GradientAscent };

struct LocalOptimizerCfg {
    Strategy strategy = Strategy::FixedPoint;
    double rho = 1.0;       // damping in (0, 1]
    int inner_steps = 1;    // >= 1
    double step_size = 0.05;
    double tolerance = 1e-8;
    // When false, every visit passes the run seed through unchanged so all
    // Monte Carlo estimates share one sample path (common random numbers).
    bool fresh_seed_per_visit = true;

    void validate() const;
};

struct TraceRow {
    int iteration = 0;
    int shard_id = 0;
    double local_free_energy = 0.0;
    std::optional<double> global_free_energy;
    double site_delta_norm = 0.0;
    models::Hyperparams hyper;
};

class RunTrace {
  public:
    void append(TraceRow row);
    const std::vector<TraceRow>& rows() const { return rows_; }
    bool empty() const { return rows_.empty(); }
    const TraceRow& back() const { return rows_.back(); }

  private:
    std::vector<TraceRow> rows_;
};

// q^(0) = p, all sites unity.
PosteriorState init(const expfam::NaturalParams& prior,
                    const std::vector<int>& shard_ids);

// Effective prior q / t_m; improper cavities are a hard error.
expfam::NaturalParams cavity(const PosteriorState& state, int shard_id);

// Local free-energy of the state's own posterior for one shard, with the
// scale convention fixed so that sums over shards match the global
// free-energy at fixed points: F_m = E_q[log p(y_m|theta)] - eta_m^T mu_q -
// log_scale_m.
double local_free_energy(const PosteriorState& state, int shard_id,
                         const data::Dataset& ds, const models::ModelKind& model,
                         const models::Hyperparams& eps, std::uint64_t seed);

// Local free-energy of a candidate q against the state as q^(i-1).
double local_free_energy_at(const PosteriorState& state, int shard_id,
                            const expfam::GaussianDist& q,
                            const data::Dataset& ds,
                            const models::ModelKind& model,
                            const models::Hyperparams& eps, std::uint64_t seed);

struct RefineResult {
    PosteriorState state;
    TraceRow row;
};

// The damped site assignment shared by the fixed-point and mirror updates:
// site <- (1-rho) site + rho target, halving rho up to 10 times while the
// posterior would be improper. Exhausting the halvings raises
// DivergenceError.
PosteriorState damped_site_update(const PosteriorState& state, int shard_id,
                                  const expfam::NaturalParams& target,
                                  double rho);

// Damped natural-parameter fixed-point iteration: site <- (1-rho) site +
// rho dE_q[log lik]/dmu_q, with rho halved (at most 10 times) on steps that
// would make the posterior improper.
RefineResult refine_fixed_point(const PosteriorState& state, int shard_id,
                                const data::Dataset& ds,
                                const models::ModelKind& model,
                                const models::Hyperparams& eps,
                                const LocalOptimizerCfg& cfg, std::uint64_t seed);

// Adam ascent of the local free-energy over (mean, log stddev), followed by
// the division update for the site.
RefineResult refine_gradient(const PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps,
                             const LocalOptimizerCfg& cfg, std::uint64_t seed);

// Closed-form KL projection of cavity x exact shard likelihood; Gaussian
// likelihood models only.
RefineResult refine_analytic(const PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps,
                             const LocalOptimizerCfg& cfg, std::uint64_t seed);

// One mirror-descent step in mean-parameter space; identical to one damped
// fixed-point step.
PosteriorState mirror_step(const PosteriorState& state, int shard_id,
                           const data::Dataset& ds,
                           const models::ModelKind& model,
                           const models::Hyperparams& eps, double rho,
                           std::uint64_t seed);

// -KL(q || p) + sum_m E_q[log p(y_m | theta)].
double global_free_energy(const PosteriorState& state,
                          const std::map<int, data::Dataset>& shards,
                          const models::ModelKind& model,
                          const models::Hyperparams& eps, std::uint64_t seed);

// Likelihood hyper gradients summed over shards plus the closed-form prior
// term (mu_q - mu_0)^T d eta_0 / d eps for "prior_log_variance".
models::Hyperparams hyper_gradient(const PosteriorState& state,
                                   const std::map<int, data::Dataset>& shards,
                                   const models::ModelKind& model,
                                   const models::Hyperparams& eps,
                                   std::uint64_t seed);

struct RunResult {
    PosteriorState state;
    RunTrace trace;
};

struct RunOptions {
    bool record_global_fe = false;
};

// Applies the configured refinement along an explicit schedule of shard
// visits; stops early once a full window of visits moves every site by less
// than cfg.tolerance.
RunResult run(const PosteriorState& state, const std::vector<int>& schedule,
              const std::map<int, data::Dataset>& shards,
              const models::ModelKind& model, const models::Hyperparams& eps,
              const LocalOptimizerCfg& cfg, std::uint64_t seed,
              const RunOptions& opts = {});

// All sites refreshed by one damped fixed-point update from the same
// snapshot.
PosteriorState parallel_fixed_point_sweep(const PosteriorState& state,
                                          const std::map<int, data::Dataset>& shards,
                                          const models::ModelKind& model,
                                          const models::Hyperparams& eps,
                                          double rho, std::uint64_t seed);

std::vector<int> round_robin_schedule(const std::vector<int>& shard_ids,
                                      int sweeps);

}  // namespace pvi
