#include "pvi/pep.hpp"

#include <cmath>

#include "pvi/quadrature.hpp"
#include "pvi/rng.hpp"

namespace pep {

using expfam::NaturalParams;

namespace {

struct TiltedTarget {
    NaturalParams t_eta;  // factor divided out of the likelihood
    double t_scale = 0.0;
};

double factor_log_density(const TiltedTarget& t, const Eigen::VectorXd& theta) {
    return t.t_eta.eta1.dot(theta) +
           t.t_eta.eta2.dot(theta.cwiseProduct(theta)) + t.t_scale;
}

TiltedMoments tilted_from_quadrature(const pvi::PosteriorState& state,
                                     const TiltedTarget& target,
                                     const data::Dataset& ds,
                                     const models::ModelKind& model,
                                     const models::Hyperparams& eps, double alpha,
                                     const TiltedOptions& opts) {
    if (state.dim() != 1) {
        throw std::invalid_argument("tilted_moments: Quadrature1D needs dim 1");
    }
    // Split the tilt into its exact Gaussian envelope q (lik-free part) and
    // the residual exp(alpha loglik).
    NaturalParams env_eta = expfam::divide(state.posterior(),
                                           expfam::scale(target.t_eta, alpha));
    env_eta.require_normalizable("tilted envelope");
    const double env_mean = env_eta.mean()[0];
    const double env_var = env_eta.variance()[0];

    const auto& rule = quadrature::hermite(opts.quadrature_order);
    const int n = static_cast<int>(rule.nodes.size());
    const double s = std::sqrt(2.0 * env_var);
    Eigen::VectorXd thetas(n), logf(n);
    Eigen::VectorXd point(1);
    for (int j = 0; j < n; ++j) {
        thetas[j] = env_mean + s * rule.nodes[j];
        point[0] = thetas[j];
        logf[j] = alpha * models::loglik_at(model, point, ds, eps);
    }
    const double shift = logf.maxCoeff();
    double w_sum = 0.0, m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < n; ++j) {
        const double w = rule.weights[j] * std::exp(logf[j] - shift);
        w_sum += w;
        m1 += w * thetas[j];
        m2 += w * thetas[j] * thetas[j];
    }
    TiltedMoments out;
    Eigen::VectorXd mu1(1), mu2(1);
    mu1[0] = m1 / w_sum;
    mu2[0] = m2 / w_sum;
    out.mean_params = expfam::MeanParams(mu1, mu2);
    out.mean_params.require_valid("tilted moments");
    // E_env[f] carries the envelope normalization back to the posterior's.
    const double log_e_f = std::log(w_sum / std::sqrt(M_PI)) + shift;
    out.zhat = std::exp(log_e_f + expfam::log_partition(env_eta) -
                        expfam::log_partition(state.posterior()) -
                        alpha * target.t_scale);
    return out;
}

TiltedMoments tilted_from_monte_carlo(const pvi::PosteriorState& state,
                                      const TiltedTarget& target,
                                      const data::Dataset& ds,
                                      const models::ModelKind& model,
                                      const models::Hyperparams& eps, double alpha,
                                      const TiltedOptions& opts,
                                      std::uint64_t seed) {
    const int dim = state.dim();
    const int count = opts.mc_samples;
    const Eigen::MatrixXd draws =
        expfam::sample(state.posterior_dist(), count, seed);
    Eigen::VectorXd logw(count);
    for (int s = 0; s < count; ++s) {
        const Eigen::VectorXd theta = draws.row(s).transpose();
        logw[s] = alpha * (models::loglik_at(model, theta, ds, eps) -
                           factor_log_density(target, theta));
    }
    const double shift = logw.maxCoeff();
    const Eigen::ArrayXd w = (logw.array() - shift).exp();
    const double w_sum = w.sum();
    const double ess = w_sum * w_sum / w.square().sum();
    if (ess < opts.min_ess) {
        throw UnreliableMomentsError(
            "tilted_moments: effective sample size " + std::to_string(ess) +
            " < " + std::to_string(opts.min_ess));
    }
    Eigen::VectorXd mu1 = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd mu2 = Eigen::VectorXd::Zero(dim);
    for (int s = 0; s < count; ++s) {
        const auto row = draws.row(s);
        mu1 += w[s] * row.transpose();
        mu2 += w[s] * row.cwiseProduct(row).transpose();
    }
    mu1 /= w_sum;
    mu2 /= w_sum;
    TiltedMoments out;
    out.mean_params = expfam::MeanParams(std::move(mu1), std::move(mu2));
    out.mean_params.require_valid("tilted moments");
    out.zhat = std::exp(std::log(w_sum / count) + shift);
    return out;
}

TiltedMoments tilted_against(const pvi::PosteriorState& state,
                             const TiltedTarget& target, const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps, double alpha,
                             const TiltedOptions& opts, std::uint64_t seed) {
    if (opts.method == TiltedMethod::Quadrature1D) {
        return tilted_from_quadrature(state, target, ds, model, eps, alpha, opts);
    }
    return tilted_from_monte_carlo(state, target, ds, model, eps, alpha, opts,
                                   seed);
}

pvi::PosteriorState interpolate_and_divide(const pvi::PosteriorState& state,
                                           int shard_id,
                                           const TiltedMoments& moments,
                                           double exponent) {
    const NaturalParams eta_tilt = expfam::to_natural(moments.mean_params);
    const NaturalParams& eta_prev = state.posterior();
    const NaturalParams eta_new = expfam::multiply(
        eta_prev, expfam::scale(expfam::divide(eta_tilt, eta_prev), exponent));
    eta_new.require_normalizable("pep posterior");
    const NaturalParams site_new =
        expfam::multiply(state.site(shard_id).natural,
                         expfam::divide(eta_new, eta_prev));
    return state.with_site(shard_id, site_new);
}

}  // namespace

TiltedMoments tilted_moments(const pvi::PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps, double alpha,
                             const TiltedOptions& opts, std::uint64_t seed) {
    const pvi::SiteFactor& site = state.site(shard_id);
    return tilted_against(state, TiltedTarget{site.natural, site.log_scale}, ds,
                          model, eps, alpha, opts, seed);
}

pvi::PosteriorState pep_step(const pvi::PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps, double alpha,
                             double rho, const PepOptions& opts,
                             std::uint64_t seed) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("pep_step: alpha must be in (0, 1]");
    }
    if (rho > alpha && !opts.allow_rho_above_alpha) {
        throw std::invalid_argument(
            "pep_step: rho > alpha makes the posterior exponent negative; set "
            "allow_rho_above_alpha to proceed");
    }
    const TiltedMoments moments =
        tilted_moments(state, shard_id, ds, model, eps, alpha, opts.tilted, seed);
    return interpolate_and_divide(state, shard_id, moments, rho / alpha);
}

pvi::PosteriorState spep_step(const pvi::PosteriorState& state, int shard_id,
                              const data::Dataset& ds,
                              const models::ModelKind& model,
                              const models::Hyperparams& eps, double alpha,
                              double rho, int n_total, const PepOptions& opts,
                              std::uint64_t seed) {
    if (state.sites().size() != 1) {
        throw std::invalid_argument("spep_step: state must carry exactly one "
                                    "shared site");
    }
    if (!(alpha > 0.0 && alpha <= 1.0) || n_total < 1) {
        throw std::invalid_argument("spep_step: need alpha in (0, 1], n_total >= 1");
    }
    if (n_total * rho > alpha && !opts.allow_rho_above_alpha) {
        throw std::invalid_argument(
            "spep_step: n_total * rho > alpha makes the posterior exponent "
            "negative; set allow_rho_above_alpha to proceed");
    }
    // The stored site is the full likelihood approximation t^N; one data
    // group's share is its N-th root.
    const pvi::SiteFactor& site = state.site(shard_id);
    const TiltedTarget share{expfam::scale(site.natural, 1.0 / n_total),
                             site.log_scale / n_total};
    const TiltedMoments moments =
        tilted_against(state, share, ds, model, eps, alpha, opts.tilted, seed);
    const NaturalParams eta_tilt = expfam::to_natural(moments.mean_params);
    const NaturalParams& eta_prev = state.posterior();
    const double exponent = n_total * rho / alpha;
    const NaturalParams eta_new = expfam::multiply(
        eta_prev, expfam::scale(expfam::divide(eta_tilt, eta_prev), exponent));
    eta_new.require_normalizable("spep posterior");
    // t^N = q_new / prior, recomputed from scratch each step.
    return state.with_site(shard_id, expfam::divide(eta_new, state.prior()));
}

}  // namespace pep
