#pragma once

// Shared oracles for the test suites: finite differences, dense-grid
// quadrature, conjugate closed forms, and small optimizers. Everything here
// is independent of the library's own computation paths.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "pvi/dataset.hpp"
#include "pvi/expfam.hpp"
#include "pvi/rng.hpp"

namespace testutil {

inline expfam::NaturalParams random_proper(rng::Stream& s, int dim,
                                           double mean_scale = 1.0,
                                           double var_lo = 0.2,
                                           double var_hi = 2.2) {
    Eigen::VectorXd mean(dim), var(dim);
    for (int i = 0; i < dim; ++i) {
        mean[i] = mean_scale * (2.0 * s.uniform() - 1.0);
        var[i] = var_lo + (var_hi - var_lo) * s.uniform();
    }
    return expfam::NaturalParams::from_moments(mean, var);
}

inline double centered_diff(const std::function<double(double)>& f, double x,
                            double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Trapezoid rule on a uniform grid.
inline double trapezoid(const std::function<double(double)>& f, double lo,
                        double hi, int n) {
    const double step = (hi - lo) / (n - 1);
    double acc = 0.5 * (f(lo) + f(hi));
    for (int i = 1; i + 1 < n; ++i) acc += f(lo + i * step);
    return acc * step;
}

inline double normal_logpdf(double x, double mean, double var) {
    const double r = x - mean;
    return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * r * r / var;
}

// Bayesian linear regression normal equations for y ~ N(X theta, sy2 I),
// theta ~ N(prior_mean, diag(prior_var)); returns the exact posterior mean
// and precision matrix.
struct GaussianPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd precision;
};

inline GaussianPosterior linear_regression_posterior(
    const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double sy2,
    const Eigen::VectorXd& prior_mean, const Eigen::VectorXd& prior_var) {
    Eigen::MatrixXd lambda = prior_var.cwiseInverse().asDiagonal();
    Eigen::VectorXd h = prior_mean.cwiseQuotient(prior_var);
    lambda += x.transpose() * x / sy2;
    h += x.transpose() * y / sy2;
    GaussianPosterior post;
    post.precision = lambda;
    post.mean = lambda.ldlt().solve(h);
    return post;
}

// The KL projection of that posterior onto the diagonal family: exact mean,
// variances from the precision diagonal.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> diagonal_projection(
    const GaussianPosterior& post) {
    return {post.mean, post.precision.diagonal().cwiseInverse()};
}

// log N(y; X prior_mean, sy2 I + X diag(prior_var) X^T), evaluated directly.
inline double linear_regression_log_evidence(const Eigen::MatrixXd& x,
                                             const Eigen::VectorXd& y,
                                             double sy2,
                                             const Eigen::VectorXd& prior_mean,
                                             const Eigen::VectorXd& prior_var) {
    const int n = static_cast<int>(x.rows());
    Eigen::MatrixXd cov = sy2 * Eigen::MatrixXd::Identity(n, n);
    cov += x * prior_var.asDiagonal() * x.transpose();
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const Eigen::VectorXd resid = y - x * prior_mean;
    const Eigen::VectorXd alpha = llt.solve(resid);
    double logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    return -0.5 * (n * std::log(2.0 * M_PI) + logdet + resid.dot(alpha));
}

// Gaussian-mean model y_i ~ N(theta, sy2), theta ~ N(m0, v0): the same
// evidence through the one-feature design.
inline double gaussian_mean_log_evidence(const Eigen::VectorXd& y, double sy2,
                                         double m0, double v0) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(y.size(), 1);
    Eigen::VectorXd pm(1), pv(1);
    pm << m0;
    pv << v0;
    return linear_regression_log_evidence(x, y, sy2, pm, pv);
}

// Nelder-Mead on R^n, good enough for the 2-D KL projections in the tests.
inline Eigen::VectorXd nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
    double scale, int iterations) {
    const int n = static_cast<int>(x0.size());
    std::vector<Eigen::VectorXd> simplex(static_cast<size_t>(n) + 1, x0);
    for (int i = 0; i < n; ++i) simplex[static_cast<size_t>(i) + 1][i] += scale;
    std::vector<double> fx(simplex.size());
    for (size_t i = 0; i < simplex.size(); ++i) fx[i] = f(simplex[i]);
    for (int it = 0; it < iterations; ++it) {
        // order ascending
        for (size_t i = 0; i < simplex.size(); ++i) {
            for (size_t j = i + 1; j < simplex.size(); ++j) {
                if (fx[j] < fx[i]) {
                    std::swap(fx[i], fx[j]);
                    std::swap(simplex[i], simplex[j]);
                }
            }
        }
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (size_t i = 0; i + 1 < simplex.size(); ++i) centroid += simplex[i];
        centroid /= n;
        const Eigen::VectorXd& worst = simplex.back();
        Eigen::VectorXd reflected = centroid + (centroid - worst);
        const double fr = f(reflected);
        if (fr < fx.front()) {
            Eigen::VectorXd expanded = centroid + 2.0 * (centroid - worst);
            const double fe = f(expanded);
            simplex.back() = fe < fr ? expanded : reflected;
            fx.back() = std::min(fe, fr);
        } else if (fr < fx[fx.size() - 2]) {
            simplex.back() = reflected;
            fx.back() = fr;
        } else {
            Eigen::VectorXd contracted = centroid + 0.5 * (worst - centroid);
            const double fc = f(contracted);
            if (fc < fx.back()) {
                simplex.back() = contracted;
                fx.back() = fc;
            } else {
                for (size_t i = 1; i < simplex.size(); ++i) {
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
                    fx[i] = f(simplex[i]);
                }
            }
        }
    }
    size_t best = 0;
    for (size_t i = 1; i < fx.size(); ++i) {
        if (fx[i] < fx[best]) best = i;
    }
    return simplex[best];
}

}  // namespace testutil
