#pragma once

#include "pvi/dataset.hpp"
#include "pvi/expfam.hpp"
#include "pvi/models.hpp"
#include "pvi/pvi.hpp"

namespace pep {

struct UnreliableMomentsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TiltedMethod { Quadrature1D, MonteCarlo };

// Moment-matched summary of the tilted distribution
// q(theta) (p(y|theta) / t(theta))^alpha: its normalizer and the matched
// mean parameters.
struct TiltedMoments {
    double zhat = 0.0;
    expfam::MeanParams mean_params;
};

struct TiltedOptions {
    TiltedMethod method = TiltedMethod::Quadrature1D;
    int quadrature_order = 61;  // Gauss-Hermite nodes on the Gaussian envelope
    int mc_samples = 100000;    // self-normalized importance samples from q
    double min_ess = 10.0;
};

TiltedMoments tilted_moments(const pvi::PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps, double alpha,
                             const TiltedOptions& opts, std::uint64_t seed);

struct PepOptions {
    TiltedOptions tilted;
    // The posterior exponent 1 - rho/alpha goes negative when rho > alpha;
    // callers must opt in to that regime.
    bool allow_rho_above_alpha = false;
};

// One Power-EP step: tilt with exponent alpha, moment match, update the
// posterior by geometric interpolation q_prev^(1-rho/alpha) q_alpha^(rho/alpha),
// refresh the site by division.
pvi::PosteriorState pep_step(const pvi::PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps, double alpha,
                             double rho, const PepOptions& opts,
                             std::uint64_t seed);

// One Stochastic Power-EP step on a state holding exactly one shared site
// that stands in for the average of N_total data groups. The posterior
// exponent becomes N rho / alpha and the shared site is recomputed as
// (q_new / prior)^(1/N).
pvi::PosteriorState spep_step(const pvi::PosteriorState& state, int shard_id,
                              const data::Dataset& ds,
                              const models::ModelKind& model,
                              const models::Hyperparams& eps, double alpha,
                              double rho, int n_total, const PepOptions& opts,
                              std::uint64_t seed);

}  // namespace pep
