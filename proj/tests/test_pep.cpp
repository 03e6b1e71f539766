#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pvi/pep.hpp"
#include "pvi/quadrature.hpp"
#include "pvi/rng.hpp"
#include "testutil.hpp"

using expfam::GaussianDist;
using expfam::NaturalParams;

namespace {

NaturalParams nat1(double e1, double e2) {
    return NaturalParams(Eigen::VectorXd::Constant(1, e1),
                         Eigen::VectorXd::Constant(1, e2));
}

data::Dataset logistic_rows(const std::vector<std::pair<double, double>>& xy) {
    std::vector<data::Row> rows;
    for (size_t i = 0; i < xy.size(); ++i) {
        rows.push_back(data::Row{Eigen::VectorXd::Constant(1, xy[i].first),
                                 xy[i].second, static_cast<std::int64_t>(i)});
    }
    return data::Dataset(rows);
}

data::Dataset gauss_row(double y) {
    return data::Dataset({data::Row{Eigen::VectorXd::Zero(0), y, 0}});
}

double max_abs_diff(const NaturalParams& a, const NaturalParams& b) {
    return std::max((a.eta1 - b.eta1).cwiseAbs().maxCoeff(),
                    (a.eta2 - b.eta2).cwiseAbs().maxCoeff());
}

const models::ModelKind kLogisticQuad = models::ModelKind::logistic_quadrature();

}  // namespace

TEST_CASE("tilted moments with unit likelihood ratio reproduce q") {
    // Zero data and a fresh site: the tilt is q itself for any alpha.
    pvi::PosteriorState state = pvi::init(nat1(0.6, -0.8), {0});
    const expfam::MeanParams expect = state.posterior_dist().mean_params();
    for (double alpha : {1.0, 0.3, 1e-3}) {
        pep::TiltedOptions quad;
        const pep::TiltedMoments tm = pep::tilted_moments(
            state, 0, data::Dataset{}, kLogisticQuad, {}, alpha, quad, 7);
        CHECK(tm.mean_params.mu1[0] == doctest::Approx(expect.mu1[0]));
        CHECK(tm.mean_params.mu2[0] == doctest::Approx(expect.mu2[0]));
        CHECK(tm.zhat == doctest::Approx(1.0));

        // Monte Carlo sees uniform weights, so it reports the sample moments.
        pep::TiltedOptions mc;
        mc.method = pep::TiltedMethod::MonteCarlo;
        const pep::TiltedMoments sm = pep::tilted_moments(
            state, 0, data::Dataset{}, kLogisticQuad, {}, alpha, mc, 7);
        CHECK(std::abs(sm.mean_params.mu1[0] - expect.mu1[0]) < 0.02);
        CHECK(std::abs(sm.mean_params.mu2[0] - expect.mu2[0]) < 0.05);
        CHECK(sm.zhat == doctest::Approx(1.0));
    }
}

TEST_CASE("gaussian likelihood keeps the tilt in closed form") {
    const models::ModelKind model = models::ModelKind::gaussian_mean();
    const models::Hyperparams eps = models::Hyperparams::obs_log_variance(0.0);
    const double y = 1.4;

    pvi::PosteriorState state = pvi::init(nat1(0.3, -0.7), {0});
    state = state.with_site(0, nat1(0.2, -0.1));
    const NaturalParams site = state.site(0).natural;
    const double site_scale = state.site(0).log_scale;

    for (double alpha : {1.0, 0.5, 0.05}) {
        pep::TiltedOptions opts;
        const pep::TiltedMoments tm =
            pep::tilted_moments(state, 0, gauss_row(y), model, eps, alpha, opts, 1);

        // Exact Gaussian tilt: eta_q + alpha (eta_lik - eta_site).
        const NaturalParams lik = nat1(y, -0.5);
        const double lik_const = -0.5 * y * y - 0.5 * std::log(2.0 * M_PI);
        NaturalParams tilt = state.posterior();
        tilt.eta1 += alpha * (lik.eta1 - site.eta1);
        tilt.eta2 += alpha * (lik.eta2 - site.eta2);
        const expfam::MeanParams expect = expfam::to_mean(tilt);
        CHECK(std::abs(tm.mean_params.mu1[0] - expect.mu1[0]) < 1e-8);
        CHECK(std::abs(tm.mean_params.mu2[0] - expect.mu2[0]) < 1e-8);

        const double zhat_expect =
            std::exp(alpha * (lik_const - site_scale) + expfam::log_partition(tilt) -
                     expfam::log_partition(state.posterior()));
        CHECK(tm.zhat == doctest::Approx(zhat_expect).epsilon(1e-8));
    }
}

TEST_CASE("logistic tilt matches a dense-grid oracle at alpha one") {
    const data::Dataset ds =
        logistic_rows({{1.2, 1.0}, {-0.4, 0.0}, {2.0, 1.0}});
    pvi::PosteriorState state = pvi::init(nat1(0.2, -0.6), {0});
    state = state.with_site(0, nat1(-0.1, -0.05));

    pep::TiltedOptions opts;
    const pep::TiltedMoments tm =
        pep::tilted_moments(state, 0, ds, kLogisticQuad, {}, 1.0, opts, 1);

    // 2001-point dense grid over +-10 posterior sd.
    const double qm = state.posterior().mean()[0];
    const double qv = state.posterior().variance()[0];
    const NaturalParams site = state.site(0).natural;
    const double lo = qm - 10.0 * std::sqrt(qv), hi = qm + 10.0 * std::sqrt(qv);
    const int n = 2001;
    const double step = (hi - lo) / (n - 1);
    double w_sum = 0.0, m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double theta = lo + i * step;
        Eigen::VectorXd point(1);
        point[0] = theta;
        const double logq = testutil::normal_logpdf(theta, qm, qv);
        const double log_site = site.eta1[0] * theta + site.eta2[0] * theta * theta +
                                state.site(0).log_scale;
        const double w = std::exp(
            logq + models::loglik_at(kLogisticQuad, point, ds, {}) - log_site);
        w_sum += w;
        m1 += w * theta;
        m2 += w * theta * theta;
    }
    CHECK(std::abs(tm.mean_params.mu1[0] - m1 / w_sum) < 1e-5);
    CHECK(std::abs(tm.mean_params.mu2[0] - m2 / w_sum) < 1e-5);
    CHECK(tm.zhat == doctest::Approx(w_sum * step).epsilon(1e-5));
}

TEST_CASE("monte carlo tilt agrees with quadrature within its standard error") {
    rng::Stream s(11);
    for (int trial = 0; trial < 5; ++trial) {
        const data::Dataset ds = logistic_rows(
            {{3.0 * (2 * s.uniform() - 1), s.uniform() < 0.5 ? 0.0 : 1.0},
             {3.0 * (2 * s.uniform() - 1), s.uniform() < 0.5 ? 0.0 : 1.0}});
        pvi::PosteriorState state =
            pvi::init(testutil::random_proper(s, 1, 0.5), {0});
        const double alpha = 0.2 + 0.8 * s.uniform();

        pep::TiltedOptions quad;
        const pep::TiltedMoments reference =
            pep::tilted_moments(state, 0, ds, kLogisticQuad, {}, alpha, quad, 1);

        const std::uint64_t mc_seed = 100 + trial;
        pep::TiltedOptions mc;
        mc.method = pep::TiltedMethod::MonteCarlo;
        mc.mc_samples = 100000;
        const pep::TiltedMoments sampled = pep::tilted_moments(
            state, 0, ds, kLogisticQuad, {}, alpha, mc, mc_seed);

        // Recreate the importance weights from the same draws to estimate
        // the self-normalized standard errors.
        const Eigen::MatrixXd draws =
            expfam::sample(state.posterior_dist(), mc.mc_samples, mc_seed);
        Eigen::VectorXd logw(mc.mc_samples);
        for (int i = 0; i < mc.mc_samples; ++i) {
            Eigen::VectorXd point = draws.row(i).transpose();
            const double site_log = 0.0;  // fresh site
            logw[i] =
                alpha * (models::loglik_at(kLogisticQuad, point, ds, {}) - site_log);
        }
        const Eigen::ArrayXd w = (logw.array() - logw.maxCoeff()).exp();
        const double wsum = w.sum();
        auto weighted_stderr = [&](auto value_of) {
            double mean = 0.0;
            for (int i = 0; i < mc.mc_samples; ++i) mean += w[i] * value_of(i);
            mean /= wsum;
            double var = 0.0;
            for (int i = 0; i < mc.mc_samples; ++i) {
                const double d = value_of(i) - mean;
                var += w[i] * w[i] * d * d;
            }
            return std::sqrt(var) / wsum;
        };
        const double se1 = weighted_stderr([&](int i) { return draws(i, 0); });
        const double se2 =
            weighted_stderr([&](int i) { return draws(i, 0) * draws(i, 0); });
        CHECK(std::abs(sampled.mean_params.mu1[0] - reference.mean_params.mu1[0]) <
              3.0 * se1 + 1e-12);
        CHECK(std::abs(sampled.mean_params.mu2[0] - reference.mean_params.mu2[0]) <
              3.0 * se2 + 1e-12);
        // zhat: mean of raw weights; normal-approximation standard error.
        const Eigen::ArrayXd raw = logw.array().exp();
        const double raw_mean = raw.mean();
        const double raw_se =
            std::sqrt((raw - raw_mean).square().sum()) / mc.mc_samples;
        CHECK(std::abs(sampled.zhat - reference.zhat) < 3.0 * raw_se + 1e-12);
    }
}

TEST_CASE("degenerate importance weights raise an effective-sample-size error") {
    // Mixed labels at an extreme feature value concentrate the likelihood in
    // a sliver of the proposal's support.
    pvi::PosteriorState state = pvi::init(nat1(0.0, -0.5), {0});
    std::vector<std::pair<double, double>> xy;
    for (int i = 0; i < 20; ++i) xy.push_back({1e4, i % 2 == 0 ? 1.0 : 0.0});
    const data::Dataset ds = logistic_rows(xy);
    pep::TiltedOptions mc;
    mc.method = pep::TiltedMethod::MonteCarlo;
    mc.mc_samples = 100000;
    CHECK_THROWS_AS(
        pep::tilted_moments(state, 0, ds, kLogisticQuad, {}, 1.0, mc, 3),
        pep::UnreliableMomentsError);
}

TEST_CASE("pep step at alpha one on the conjugate model is the exact posterior") {
    const models::ModelKind model = models::ModelKind::gaussian_mean();
    const models::Hyperparams eps = models::Hyperparams::obs_log_variance(0.0);
    pvi::PosteriorState state = pvi::init(nat1(0.0, -0.5), {0});

    pep::PepOptions opts;
    const pvi::PosteriorState after =
        pep::pep_step(state, 0, gauss_row(2.0), model, eps, 1.0, 1.0, opts, 1);
    CHECK(after.posterior().mean()[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(after.posterior().variance()[0] == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(after.conservation_holds());

    // rho = alpha = 1 is the undamped moment-matched update: the posterior
    // equals the tilted moments exactly.
    pep::TiltedOptions topts;
    const pep::TiltedMoments tm =
        pep::tilted_moments(state, 0, gauss_row(2.0), model, eps, 1.0, topts, 1);
    const NaturalParams from_moments = expfam::to_natural(tm.mean_params);
    CHECK(max_abs_diff(after.posterior(), from_moments) < 1e-10);
}

TEST_CASE("pep step approaches the fixed-point update as alpha vanishes") {
    rng::Stream s(13);
    const data::Dataset ds =
        logistic_rows({{0.8, 1.0}, {-1.1, 0.0}, {0.3, 1.0}, {1.7, 1.0}});
    pvi::PosteriorState state = pvi::init(testutil::random_proper(s, 1, 0.5), {0});
    state = state.with_site(0, nat1(0.15, -0.08));

    const double rho = 2.5e-3;
    pvi::LocalOptimizerCfg cfg;
    cfg.strategy = pvi::Strategy::FixedPoint;
    cfg.rho = rho;
    cfg.inner_steps = 1;
    cfg.tolerance = 0.0;
    const NaturalParams fp =
        pvi::refine_fixed_point(state, 0, ds, kLogisticQuad, {}, cfg, 1)
            .state.posterior();

    double prev_gap = -1.0;
    for (double alpha : {1e-2, 5e-3, 2.5e-3}) {
        pep::PepOptions opts;
        const NaturalParams stepped =
            pep::pep_step(state, 0, ds, kLogisticQuad, {}, alpha, rho, opts, 1)
                .posterior();
        const double gap = max_abs_diff(stepped, fp);
        if (prev_gap > 0.0) CHECK(gap <= 0.6 * prev_gap);
        prev_gap = gap;
    }
}

TEST_CASE("rho above alpha requires the explicit flag") {
    pvi::PosteriorState state = pvi::init(nat1(0.0, -0.5), {0});
    const data::Dataset ds = logistic_rows({{1.0, 1.0}});
    pep::PepOptions opts;
    CHECK_THROWS_AS(
        pep::pep_step(state, 0, ds, kLogisticQuad, {}, 0.1, 0.5, opts, 1),
        std::invalid_argument);
    opts.allow_rho_above_alpha = true;
    const pvi::PosteriorState stepped =
        pep::pep_step(state, 0, ds, kLogisticQuad, {}, 0.1, 0.5, opts, 1);
    CHECK(stepped.posterior().normalizable());

    CHECK_THROWS_AS(
        pep::pep_step(state, 0, ds, kLogisticQuad, {}, 1.5, 0.5, opts, 1),
        std::invalid_argument);
}

TEST_CASE("spep step with one group reduces to pep; zero data is a no-op") {
    const data::Dataset ds = logistic_rows({{0.9, 1.0}, {-0.5, 0.0}});
    pvi::PosteriorState state = pvi::init(nat1(0.1, -0.6), {0});

    pep::PepOptions opts;
    const pvi::PosteriorState via_spep =
        pep::spep_step(state, 0, ds, kLogisticQuad, {}, 0.5, 0.1, 1, opts, 1);
    const pvi::PosteriorState via_pep =
        pep::pep_step(state, 0, ds, kLogisticQuad, {}, 0.5, 0.1, opts, 1);
    CHECK(max_abs_diff(via_spep.posterior(), via_pep.posterior()) < 1e-12);

    const pvi::PosteriorState still =
        pep::spep_step(state, 0, data::Dataset{}, kLogisticQuad, {}, 0.5, 0.1, 4,
                       opts, 1);
    CHECK(max_abs_diff(still.posterior(), state.posterior()) < 1e-12);

    pvi::PosteriorState two_sites = pvi::init(nat1(0.1, -0.6), {0, 1});
    CHECK_THROWS_AS(pep::spep_step(two_sites, 0, ds, kLogisticQuad, {}, 0.5, 0.1,
                                   2, opts, 1),
                    std::invalid_argument);
}

TEST_CASE("spep approaches the mini-batch natural-gradient update") {
    rng::Stream s(17);
    const data::Dataset ds = logistic_rows({{1.1, 1.0}, {-0.7, 0.0}});
    const int n_total = 5;
    pvi::PosteriorState state = pvi::init(testutil::random_proper(s, 1, 0.5), {0});
    state = state.with_site(0, nat1(0.3, -0.12));
    const double rho = 2.5e-3 / n_total;

    // Stochastic natural-gradient oracle: eta + N rho (g - eta_like / N).
    const Eigen::VectorXd g = models::grad_loglik_mean_params(
        kLogisticQuad, state.posterior_dist(), ds, {}, 1);
    NaturalParams target = state.posterior();
    target.eta1 +=
        n_total * rho * (g.head(1) - state.site(0).natural.eta1 / n_total);
    target.eta2 +=
        n_total * rho * (g.tail(1) - state.site(0).natural.eta2 / n_total);

    double prev_gap = -1.0;
    for (double alpha : {1e-2, 5e-3, 2.5e-3}) {
        pep::PepOptions opts;
        const NaturalParams stepped =
            pep::spep_step(state, 0, ds, kLogisticQuad, {}, alpha, rho, n_total,
                           opts, 1)
                .posterior();
        const double gap = max_abs_diff(stepped, target);
        if (prev_gap > 0.0) CHECK(gap <= 0.6 * prev_gap);
        prev_gap = gap;
    }
}
