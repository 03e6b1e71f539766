#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "pvi/dataset.hpp"
#include "pvi/expfam.hpp"

namespace models {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Named scalar hyperparameters. Gaussian-likelihood models read
// "obs_log_variance" (log sigma_y^2); priors read "prior_log_variance".
struct Hyperparams {
    std::map<std::string, double> values;

    double get(const std::string& name) const;
    bool has(const std::string& name) const { return values.count(name) > 0; }
    static Hyperparams obs_log_variance(double v) {
        return Hyperparams{{{"obs_log_variance", v}}};
    }
};

enum class Kind { GaussianMean, LinearRegression, LogisticRegression };

enum class Integration { MonteCarlo, Quadrature };

struct ModelKind {
    Kind kind = Kind::GaussianMean;
    // Monte Carlo settings for the logistic likelihood.
    int mc_samples = 64;
    std::uint64_t mc_seed_base = 0;
    // Quadrature evaluates the 1-D activation integral exactly; used by the
    // deterministic equivalence checks.
    Integration integration = Integration::MonteCarlo;
    int quadrature_order = 61;

    static ModelKind gaussian_mean() { return ModelKind{Kind::GaussianMean}; }
    static ModelKind linear_regression() {
        return ModelKind{Kind::LinearRegression};
    }
    static ModelKind logistic(int mc_samples = 64, std::uint64_t seed_base = 0) {
        ModelKind m;
        m.kind = Kind::LogisticRegression;
        m.mc_samples = mc_samples;
        m.mc_seed_base = seed_base;
        return m;
    }
    static ModelKind logistic_quadrature(int order = 61) {
        ModelKind m;
        m.kind = Kind::LogisticRegression;
        m.integration = Integration::Quadrature;
        m.quadrature_order = order;
        return m;
    }
};

// E_q[log p(y | theta)] summed over the dataset's rows. Analytic for the
// Gaussian likelihoods; for the logistic likelihood a deterministic
// reparameterized Monte Carlo estimate over the 1-D activation a = x.theta
// (or exact quadrature), with per-row streams keyed on
// (mc_seed_base, seed, row id).
double expected_loglik(const ModelKind& model, const expfam::GaussianDist& q,
                       const data::Dataset& ds, const Hyperparams& eps,
                       std::uint64_t seed);

// d expected_loglik / d (mu1, mu2), as a 2*dim vector [d/dmu1..., d/dmu2...].
// Monte Carlo models differentiate the same sample paths (common random
// numbers), then chain from (m, v) to mean parameters via v = mu2 - mu1^2.
Eigen::VectorXd grad_loglik_mean_params(const ModelKind& model,
                                        const expfam::GaussianDist& q,
                                        const data::Dataset& ds,
                                        const Hyperparams& eps,
                                        std::uint64_t seed);

// Expectation under q of the per-row log-likelihood derivative with respect
// to each hyperparameter the model owns. Logistic has none.
Hyperparams grad_loglik_hyper(const ModelKind& model,
                              const expfam::GaussianDist& q,
                              const data::Dataset& ds, const Hyperparams& eps,
                              std::uint64_t seed);

// log p(y | theta) at a fixed parameter vector (no expectation); used by the
// power-EP tilted integrals.
double loglik_at(const ModelKind& model, const Eigen::VectorXd& theta,
                 const data::Dataset& ds, const Hyperparams& eps);

struct Prediction {
    double mean = 0.0;      // regression mean or class-1 probability
    double variance = 0.0;  // predictive variance (regression only)
};

Prediction predict(const ModelKind& model, const expfam::GaussianDist& q,
                   const Eigen::VectorXd& features, const Hyperparams& eps,
                   int mc_samples, std::uint64_t seed);

inline double sigmoid(double a) {
    return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
}

// log(1 + e^a) without overflow.
inline double softplus(double a) {
    return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

}  // namespace models
