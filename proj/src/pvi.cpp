#include "pvi/pvi.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "pvi/rng.hpp"

namespace pvi {

using expfam::GaussianDist;
using expfam::NaturalParams;

PosteriorState::PosteriorState(NaturalParams prior,
                               const std::vector<int>& shard_ids)
    : prior_(std::move(prior)) {
    prior_.require_normalizable("PosteriorState prior");
    for (int id : shard_ids) {
        if (!sites_.emplace(id, SiteFactor{id, NaturalParams::zero(prior_.dim()), 0.0})
                 .second) {
            throw std::invalid_argument("PosteriorState: duplicate shard id " +
                                        std::to_string(id));
        }
    }
    recompute();
}

void PosteriorState::recompute() {
    // Canonical order: prior first, then sites by ascending shard id. Both
    // the cache and the conservation check walk this exact sequence.
    NaturalParams acc = prior_;
    for (const auto& [id, site] : sites_) acc = expfam::multiply(acc, site.natural);
    acc.require_normalizable("posterior");
    posterior_ = std::move(acc);
}

const SiteFactor& PosteriorState::site(int shard_id) const {
    auto it = sites_.find(shard_id);
    if (it == sites_.end()) {
        throw UnknownShardError("unknown shard id " + std::to_string(shard_id));
    }
    return it->second;
}

std::vector<int> PosteriorState::shard_ids() const {
    std::vector<int> ids;
    ids.reserve(sites_.size());
    for (const auto& [id, site] : sites_) ids.push_back(id);
    return ids;
}

PosteriorState PosteriorState::with_site(int shard_id,
                                         const NaturalParams& eta) const {
    PosteriorState next = *this;
    auto it = next.sites_.find(shard_id);
    if (it == next.sites_.end()) {
        throw UnknownShardError("unknown shard id " + std::to_string(shard_id));
    }
    const double a_before = expfam::log_partition(posterior_);
    it->second.natural = eta;
    next.recompute();
    // Division by the old posterior and multiplication by the new one leaves
    // the site scaled by their partition-function ratio.
    it->second.log_scale += a_before - expfam::log_partition(next.posterior_);
    return next;
}

std::optional<PosteriorState> PosteriorState::try_with_site(
    int shard_id, const NaturalParams& eta) const {
    NaturalParams candidate = expfam::multiply(
        expfam::divide(posterior_, site(shard_id).natural), eta);
    if (!candidate.normalizable()) return std::nullopt;
    return with_site(shard_id, eta);
}

PosteriorState PosteriorState::with_sites(
    const std::vector<std::pair<int, NaturalParams>>& updates) const {
    PosteriorState next = *this;
    const double a_before = expfam::log_partition(posterior_);
    for (const auto& [id, eta] : updates) {
        auto it = next.sites_.find(id);
        if (it == next.sites_.end()) {
            throw UnknownShardError("unknown shard id " + std::to_string(id));
        }
        it->second.natural = eta;
    }
    next.recompute();
    // Attribute the whole scale change to the first updated site; only the
    // sum of scales enters the free-energy identities.
    if (!updates.empty()) {
        next.sites_.find(updates.front().first)->second.log_scale +=
            a_before - expfam::log_partition(next.posterior_);
    }
    return next;
}

PosteriorState PosteriorState::with_prior(const NaturalParams& prior) const {
    PosteriorState next = *this;
    prior.require_normalizable("with_prior");
    const double a_p_before = expfam::log_partition(prior_);
    const double a_q_before = expfam::log_partition(posterior_);
    next.prior_ = prior;
    next.recompute();
    // Keep sum(log_scale) == A(eta_0) - A(eta_q) through the prior swap.
    if (!next.sites_.empty()) {
        const double correction =
            (expfam::log_partition(prior) - a_p_before) -
            (expfam::log_partition(next.posterior_) - a_q_before);
        next.sites_.begin()->second.log_scale += correction;
    }
    return next;
}

bool PosteriorState::conservation_holds() const {
    NaturalParams acc = prior_;
    for (const auto& [id, site] : sites_) acc = expfam::multiply(acc, site.natural);
    return acc == posterior_;
}

PosteriorState PosteriorState::restore(NaturalParams prior,
                                       const std::vector<SiteFactor>& sites) {
    PosteriorState state;
    state.prior_ = std::move(prior);
    state.prior_.require_normalizable("restore prior");
    for (const SiteFactor& s : sites) {
        if (!state.sites_.emplace(s.shard_id, s).second) {
            throw std::invalid_argument("restore: duplicate shard id " +
                                        std::to_string(s.shard_id));
        }
    }
    state.recompute();
    return state;
}

void LocalOptimizerCfg::validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("LocalOptimizerCfg: rho must be in (0, 1]");
    }
    if (inner_steps < 1) {
        throw std::invalid_argument("LocalOptimizerCfg: inner_steps must be >= 1");
    }
}

void RunTrace::append(TraceRow row) {
    if (!rows_.empty() && row.iteration <= rows_.back().iteration) {
        throw std::invalid_argument("RunTrace: iterations must strictly increase");
    }
    rows_.push_back(std::move(row));
}

PosteriorState init(const NaturalParams& prior, const std::vector<int>& shard_ids) {
    return PosteriorState(prior, shard_ids);
}

expfam::NaturalParams cavity(const PosteriorState& state, int shard_id) {
    NaturalParams cav =
        expfam::divide(state.posterior(), state.site(shard_id).natural);
    cav.require_normalizable("cavity for shard " + std::to_string(shard_id));
    return cav;
}

double local_free_energy(const PosteriorState& state, int shard_id,
                         const data::Dataset& ds, const models::ModelKind& model,
                         const models::Hyperparams& eps, std::uint64_t seed) {
    const SiteFactor& site = state.site(shard_id);
    GaussianDist q = state.posterior_dist();
    const expfam::MeanParams mu = q.mean_params();
    const double site_term =
        site.natural.eta1.dot(mu.mu1) + site.natural.eta2.dot(mu.mu2);
    return models::expected_loglik(model, q, ds, eps, seed) - site_term -
           site.log_scale;
}

double local_free_energy_at(const PosteriorState& state, int shard_id,
                            const GaussianDist& q, const data::Dataset& ds,
                            const models::ModelKind& model,
                            const models::Hyperparams& eps, std::uint64_t seed) {
    const SiteFactor& site = state.site(shard_id);
    const expfam::MeanParams mu = q.mean_params();
    const NaturalParams& prev = state.posterior();
    const Eigen::VectorXd d1 = prev.eta1 - site.natural.eta1 - q.natural().eta1;
    const Eigen::VectorXd d2 = prev.eta2 - site.natural.eta2 - q.natural().eta2;
    return models::expected_loglik(model, q, ds, eps, seed) + d1.dot(mu.mu1) +
           d2.dot(mu.mu2) + q.log_partition() - expfam::log_partition(prev) -
           site.log_scale;
}

PosteriorState damped_site_update(const PosteriorState& state, int shard_id,
                                  const NaturalParams& target, double rho) {
    const NaturalParams& old_site = state.site(shard_id).natural;
    double r = rho;
    for (int attempt = 0; attempt <= 10; ++attempt) {
        NaturalParams candidate = expfam::multiply(expfam::scale(old_site, 1.0 - r),
                                                   expfam::scale(target, r));
        if (auto next = state.try_with_site(shard_id, candidate)) return *next;
        r *= 0.5;
    }
    throw DivergenceError("shard " + std::to_string(shard_id) +
                          ": posterior improper after 10 damping halvings");
}

namespace {

NaturalParams grad_as_site(const models::ModelKind& model, const GaussianDist& q,
                           const data::Dataset& ds, const models::Hyperparams& eps,
                           std::uint64_t seed) {
    const Eigen::VectorXd g =
        models::grad_loglik_mean_params(model, q, ds, eps, seed);
    const int d = q.dim();
    return NaturalParams(g.head(d), g.tail(d));
}

TraceRow make_row(const PosteriorState& before, const PosteriorState& after,
                  int shard_id, const data::Dataset& ds,
                  const models::ModelKind& model, const models::Hyperparams& eps,
                  std::uint64_t seed) {
    TraceRow row;
    row.shard_id = shard_id;
    row.local_free_energy = local_free_energy(after, shard_id, ds, model, eps, seed);
    const NaturalParams delta = expfam::divide(after.site(shard_id).natural,
                                               before.site(shard_id).natural);
    row.site_delta_norm = std::max(delta.eta1.cwiseAbs().maxCoeff(),
                                   delta.eta2.cwiseAbs().maxCoeff());
    row.hyper = eps;
    return row;
}

}  // namespace

RefineResult refine_fixed_point(const PosteriorState& state, int shard_id,
                                const data::Dataset& ds,
                                const models::ModelKind& model,
                                const models::Hyperparams& eps,
                                const LocalOptimizerCfg& cfg, std::uint64_t seed) {
    cfg.validate();
    cavity(state, shard_id);
    PosteriorState current = state;
    for (int step = 0; step < cfg.inner_steps; ++step) {
        const NaturalParams target =
            grad_as_site(model, current.posterior_dist(), ds, eps, seed);
        PosteriorState next = damped_site_update(current, shard_id, target, cfg.rho);
        const NaturalParams moved = expfam::divide(next.site(shard_id).natural,
                                                   current.site(shard_id).natural);
        current = std::move(next);
        const double delta = std::max(moved.eta1.cwiseAbs().maxCoeff(),
                                      moved.eta2.cwiseAbs().maxCoeff());
        if (delta < cfg.tolerance) break;
    }
    TraceRow row = make_row(state, current, shard_id, ds, model, eps, seed);
    return RefineResult{std::move(current), std::move(row)};
}

RefineResult refine_gradient(const PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps,
                             const LocalOptimizerCfg& cfg, std::uint64_t seed) {
    cfg.validate();
    const NaturalParams cav = cavity(state, shard_id);
    const Eigen::ArrayXd cav_mean = cav.mean().array();
    const Eigen::ArrayXd cav_var = cav.variance().array();

    const int d = state.dim();
    GaussianDist q = state.posterior_dist();
    Eigen::ArrayXd m = q.mean().array();
    Eigen::ArrayXd log_s = 0.5 * q.variance().array().log();

    // Adam state over the stacked (m, log s) coordinates.
    Eigen::ArrayXd adam_m = Eigen::ArrayXd::Zero(2 * d);
    Eigen::ArrayXd adam_v = Eigen::ArrayXd::Zero(2 * d);
    const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

    for (int step = 1; step <= cfg.inner_steps; ++step) {
        const Eigen::ArrayXd v = (2.0 * log_s).exp();
        GaussianDist qc(NaturalParams::from_moments(m.matrix(), v.matrix()));
        const Eigen::VectorXd g =
            models::grad_loglik_mean_params(model, qc, ds, eps, seed);
        const Eigen::ArrayXd g1 = g.head(d).array();
        const Eigen::ArrayXd g2 = g.tail(d).array();
        // d/dm of E_q[loglik] - KL(q || cavity).
        Eigen::ArrayXd grad_m = g1 + 2.0 * m * g2 - (m - cav_mean) / cav_var;
        Eigen::ArrayXd grad_ls = 2.0 * v * g2 - (v / cav_var - 1.0);
        if (!grad_m.allFinite() || !grad_ls.allFinite()) {
            throw models::NumericError("refine_gradient: non-finite objective");
        }
        Eigen::ArrayXd grad(2 * d);
        grad << grad_m, grad_ls;
        adam_m = b1 * adam_m + (1.0 - b1) * grad;
        adam_v = b2 * adam_v + (1.0 - b2) * grad.square();
        const double c1 = 1.0 - std::pow(b1, step);
        const double c2 = 1.0 - std::pow(b2, step);
        const Eigen::ArrayXd update =
            cfg.step_size * (adam_m / c1) / ((adam_v / c2).sqrt() + adam_eps);
        m += update.head(d);
        log_s += update.tail(d);
        if (update.abs().maxCoeff() < cfg.tolerance) break;
    }

    const Eigen::ArrayXd v = (2.0 * log_s).exp();
    const NaturalParams q_new = NaturalParams::from_moments(m.matrix(), v.matrix());
    // Algorithm-1 site update: t <- (q_new / q_old) t.
    const NaturalParams site_new =
        expfam::multiply(expfam::divide(q_new, state.posterior()),
                         state.site(shard_id).natural);
    PosteriorState next = state.with_site(shard_id, site_new);
    TraceRow row = make_row(state, next, shard_id, ds, model, eps, seed);
    return RefineResult{std::move(next), std::move(row)};
}

RefineResult refine_analytic(const PosteriorState& state, int shard_id,
                             const data::Dataset& ds,
                             const models::ModelKind& model,
                             const models::Hyperparams& eps,
                             const LocalOptimizerCfg& cfg, std::uint64_t seed) {
    cfg.validate();
    if (model.kind == models::Kind::LogisticRegression) {
        throw std::invalid_argument(
            "refine_analytic: no closed-form update for the logistic model");
    }
    const NaturalParams cav = cavity(state, shard_id);
    const Eigen::VectorXd cav_prec = (-2.0 * cav.eta2.array()).matrix();
    const Eigen::VectorXd cav_mean = cav.mean();
    const double sy2 = std::exp(eps.get("obs_log_variance"));

    // Exact Gaussian posterior of cavity x shard likelihood, then the KL
    // projection onto the diagonal family: exact mean, diagonal of the
    // precision.
    Eigen::MatrixXd lambda = cav_prec.asDiagonal();
    Eigen::VectorXd h = cav_prec.cwiseProduct(cav_mean);
    for (const data::Row& r : ds.rows()) {
        Eigen::VectorXd x;
        if (model.kind == models::Kind::GaussianMean) {
            x = Eigen::VectorXd::Ones(1);
        } else {
            x = r.features;
        }
        lambda.noalias() += x * x.transpose() / sy2;
        h.noalias() += x * (r.target / sy2);
    }
    const Eigen::VectorXd mean = lambda.ldlt().solve(h);
    const Eigen::VectorXd var = lambda.diagonal().cwiseInverse();
    const NaturalParams q_new = NaturalParams::from_moments(mean, var);
    const NaturalParams site_new =
        expfam::multiply(expfam::divide(q_new, state.posterior()),
                         state.site(shard_id).natural);
    PosteriorState next = state.with_site(shard_id, site_new);
    TraceRow row = make_row(state, next, shard_id, ds, model, eps, seed);
    return RefineResult{std::move(next), std::move(row)};
}

PosteriorState mirror_step(const PosteriorState& state, int shard_id,
                           const data::Dataset& ds,
                           const models::ModelKind& model,
                           const models::Hyperparams& eps, double rho,
                           std::uint64_t seed) {
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("mirror_step: rho must be in (0, 1]");
    }
    cavity(state, shard_id);
    const NaturalParams g =
        grad_as_site(model, state.posterior_dist(), ds, eps, seed);
    const NaturalParams& old_site = state.site(shard_id).natural;
    double r = rho;
    for (int attempt = 0; attempt <= 10; ++attempt) {
        // Stationarity of the mean-space proximal objective: eta_q moves by
        // rho (g - eta_site); mapping back through the division update gives
        // the new site directly.
        NaturalParams site_new = expfam::multiply(
            old_site, expfam::scale(expfam::divide(g, old_site), r));
        if (auto next = state.try_with_site(shard_id, site_new)) return *next;
        r *= 0.5;
    }
    throw DivergenceError("mirror_step: shard " + std::to_string(shard_id) +
                          " improper after 10 damping halvings");
}

double global_free_energy(const PosteriorState& state,
                          const std::map<int, data::Dataset>& shards,
                          const models::ModelKind& model,
                          const models::Hyperparams& eps, std::uint64_t seed) {
    GaussianDist q = state.posterior_dist();
    GaussianDist p(state.prior());
    double fe = -expfam::kl_divergence(q, p);
    for (const auto& [id, ds] : shards) {
        fe += models::expected_loglik(model, q, ds, eps,
                                      rng::derive(seed, static_cast<std::uint64_t>(id)));
    }
    return fe;
}

models::Hyperparams hyper_gradient(const PosteriorState& state,
                                   const std::map<int, data::Dataset>& shards,
                                   const models::ModelKind& model,
                                   const models::Hyperparams& eps,
                                   std::uint64_t seed) {
    models::Hyperparams grad;
    for (const auto& [id, ds] : shards) {
        models::Hyperparams g = models::grad_loglik_hyper(
            model, state.posterior_dist(), ds, eps,
            rng::derive(seed, static_cast<std::uint64_t>(id)));
        for (const auto& [name, value] : g.values) grad.values[name] += value;
    }
    if (eps.has("prior_log_variance")) {
        // (mu_q - mu_0)^T d eta_0 / d eps with eta_0 parameterized by the
        // prior's log variance: d eta1 / d eps = -m0/v0, d eta2 / d eps =
        // 1/(2 v0).
        const expfam::MeanParams mu_q = expfam::to_mean(state.posterior());
        const expfam::MeanParams mu_0 = expfam::to_mean(state.prior());
        const Eigen::ArrayXd m0 = state.prior().mean().array();
        const Eigen::ArrayXd v0 = state.prior().variance().array();
        const double term =
            ((mu_q.mu1 - mu_0.mu1).array() * (-m0 / v0)).sum() +
            ((mu_q.mu2 - mu_0.mu2).array() * (0.5 / v0)).sum();
        grad.values["prior_log_variance"] += term;
    }
    return grad;
}

RunResult run(const PosteriorState& state, const std::vector<int>& schedule,
              const std::map<int, data::Dataset>& shards,
              const models::ModelKind& model, const models::Hyperparams& eps,
              const LocalOptimizerCfg& cfg, std::uint64_t seed,
              const RunOptions& opts) {
    cfg.validate();
    for (int id : schedule) {
        if (!state.has_shard(id)) {
            throw UnknownShardError("run: schedule visits unregistered shard " +
                                    std::to_string(id));
        }
    }
    RunResult result{state, {}};
    const size_t window = state.sites().size();
    size_t calm_visits = 0;
    int iteration = 0;
    for (int shard_id : schedule) {
        ++iteration;
        const std::uint64_t visit_seed =
            cfg.fresh_seed_per_visit
                ? rng::derive(seed, static_cast<std::uint64_t>(iteration))
                : seed;
        const auto& ds = shards.at(shard_id);
        RefineResult step = [&] {
            switch (cfg.strategy) {
                case Strategy::Analytic:
                    return refine_analytic(result.state, shard_id, ds, model, eps,
                                           cfg, visit_seed);
                case Strategy::FixedPoint:
                    return refine_fixed_point(result.state, shard_id, ds, model,
                                              eps, cfg, visit_seed);
                case Strategy::GradientAscent:
                default:
                    return refine_gradient(result.state, shard_id, ds, model, eps,
                                           cfg, visit_seed);
            }
        }();
        result.state = std::move(step.state);
        step.row.iteration = iteration;
        if (opts.record_global_fe) {
            step.row.global_free_energy =
                global_free_energy(result.state, shards, model, eps, visit_seed);
        }
        result.trace.append(std::move(step.row));
        calm_visits =
            result.trace.back().site_delta_norm < cfg.tolerance ? calm_visits + 1 : 0;
        if (window > 0 && calm_visits >= window) break;
    }
    return result;
}

PosteriorState parallel_fixed_point_sweep(const PosteriorState& state,
                                          const std::map<int, data::Dataset>& shards,
                                          const models::ModelKind& model,
                                          const models::Hyperparams& eps,
                                          double rho, std::uint64_t seed) {
    GaussianDist snapshot = state.posterior_dist();
    std::vector<std::pair<int, NaturalParams>> updates;
    for (const auto& [id, ds] : shards) {
        const NaturalParams g = grad_as_site(
            model, snapshot, ds, eps, rng::derive(seed, static_cast<std::uint64_t>(id)));
        const NaturalParams& old_site = state.site(id).natural;
        updates.emplace_back(id,
                             expfam::multiply(expfam::scale(old_site, 1.0 - rho),
                                              expfam::scale(g, rho)));
    }
    return state.with_sites(updates);
}

std::vector<int> round_robin_schedule(const std::vector<int>& shard_ids,
                                      int sweeps) {
    std::vector<int> schedule;
    schedule.reserve(shard_ids.size() * static_cast<size_t>(sweeps));
    for (int s = 0; s < sweeps; ++s) {
        for (int id : shard_ids) schedule.push_back(id);
    }
    return schedule;
}

}  // namespace pvi
