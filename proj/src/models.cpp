#include "pvi/models.hpp"

#include <cmath>

#include "pvi/quadrature.hpp"
#include "pvi/rng.hpp"

namespace models {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double obs_variance(const Hyperparams& eps) {
    return std::exp(eps.get("obs_log_variance"));
}

void check_dim(const ModelKind& model, const expfam::GaussianDist& q,
               const data::Dataset& ds) {
    if (model.kind == Kind::LogisticRegression && model.mc_samples < 1) {
        throw std::invalid_argument("model: mc_samples must be >= 1");
    }
    if (ds.empty()) return;
    const int want = model.kind == Kind::GaussianMean ? 1 : ds.feature_dim();
    if (q.dim() != want) {
        throw expfam::DimensionMismatchError(
            "model: q.dim " + std::to_string(q.dim()) + " != expected " +
            std::to_string(want));
    }
    if (model.kind == Kind::GaussianMean) return;
    if (ds.feature_dim() != q.dim()) {
        throw expfam::DimensionMismatchError("model: feature width mismatch");
    }
}

// Activation moments of a = x.theta under q.
struct Activation {
    double mean;
    double var;
};

Activation activation(const Eigen::VectorXd& x, const Eigen::VectorXd& m,
                      const Eigen::VectorXd& v) {
    return {x.dot(m), x.cwiseProduct(x).dot(v)};
}

// Accumulates the logistic row value and its derivatives w.r.t. the 1-D
// activation moments (mean, variance).
struct LogisticRow {
    double value = 0.0;
    double d_mean = 0.0;
    double d_var = 0.0;
};

LogisticRow logistic_row(const ModelKind& model, double y, double a_mean,
                         double a_var, std::uint64_t row_key) {
    LogisticRow out;
    const double sd = std::sqrt(a_var);
    if (model.integration == Integration::Quadrature) {
        const auto& rule = quadrature::hermite(model.quadrature_order);
        const double s = std::sqrt(2.0 * a_var);
        double val = 0.0, dm = 0.0, dv = 0.0;
        for (int j = 0; j < rule.nodes.size(); ++j) {
            const double a = a_mean + s * rule.nodes[j];
            const double sig = sigmoid(a);
            const double w = rule.weights[j];
            val += w * (y * a - softplus(a));
            dm += w * (y - sig);
            dv += w * (-sig * (1.0 - sig));  // f''(a)
        }
        const double norm = std::sqrt(M_PI);
        out.value = val / norm;
        out.d_mean = dm / norm;
        out.d_var = 0.5 * dv / norm;
        return out;
    }
    rng::Stream s(row_key);
    const int S = model.mc_samples;
    double val = 0.0, dm = 0.0, ds_ = 0.0, d2 = 0.0;
    for (int k = 0; k < S; ++k) {
        const double e = s.normal();
        const double a = a_mean + sd * e;
        const double sig = sigmoid(a);
        val += y * a - softplus(a);
        dm += y - sig;
        ds_ += (y - sig) * e;
        d2 += -sig * (1.0 - sig);
    }
    out.value = val / S;
    out.d_mean = dm / S;
    // d/dvar = d/dsd / (2 sd); near-zero variance falls back to the exact
    // second-derivative limit.
    out.d_var = sd > 1e-7 ? (ds_ / S) / (2.0 * sd) : 0.5 * (d2 / S);
    return out;
}

std::uint64_t row_key(const ModelKind& model, std::uint64_t seed,
                      const data::Row& row) {
    return rng::derive(model.mc_seed_base, seed,
                       static_cast<std::uint64_t>(row.id));
}

}  // namespace

double Hyperparams::get(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) {
        throw std::invalid_argument("Hyperparams: unknown hyperparameter '" +
                                    name + "'");
    }
    return it->second;
}

double expected_loglik(const ModelKind& model, const expfam::GaussianDist& q,
                       const data::Dataset& ds, const Hyperparams& eps,
                       std::uint64_t seed) {
    if (ds.empty()) return 0.0;
    check_dim(model, q, ds);
    const Eigen::VectorXd m = q.mean();
    const Eigen::VectorXd v = q.variance();
    double total = 0.0;
    if (model.kind == Kind::LogisticRegression) {
        for (const data::Row& r : ds.rows()) {
            const Activation act = activation(r.features, m, v);
            total += logistic_row(model, r.target, act.mean, act.var,
                                  row_key(model, seed, r))
                         .value;
        }
    } else {
        const double sy2 = obs_variance(eps);
        for (const data::Row& r : ds.rows()) {
            double pred_mean, pred_var;
            if (model.kind == Kind::GaussianMean) {
                pred_mean = m[0];
                pred_var = v[0];
            } else {
                const Activation act = activation(r.features, m, v);
                pred_mean = act.mean;
                pred_var = act.var;
            }
            const double resid = r.target - pred_mean;
            total += -0.5 * (kLog2Pi + std::log(sy2)) -
                     (resid * resid + pred_var) / (2.0 * sy2);
        }
    }
    if (!std::isfinite(total)) {
        throw NumericError("expected_loglik: non-finite result over " +
                           std::to_string(ds.n()) + " rows");
    }
    return total;
}

Eigen::VectorXd grad_loglik_mean_params(const ModelKind& model,
                                        const expfam::GaussianDist& q,
                                        const data::Dataset& ds,
                                        const Hyperparams& eps,
                                        std::uint64_t seed) {
    const int d = q.dim();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(2 * d);
    if (ds.empty()) return grad;
    check_dim(model, q, ds);
    const Eigen::VectorXd m = q.mean();
    const Eigen::VectorXd v = q.variance();
    auto g1 = grad.head(d);
    auto g2 = grad.tail(d);
    if (model.kind == Kind::GaussianMean) {
        const double sy2 = obs_variance(eps);
        for (const data::Row& r : ds.rows()) {
            g1[0] += r.target / sy2;
            g2[0] += -0.5 / sy2;
        }
    } else if (model.kind == Kind::LinearRegression) {
        const double sy2 = obs_variance(eps);
        for (const data::Row& r : ds.rows()) {
            const Eigen::VectorXd& x = r.features;
            const double xm = x.dot(m);
            for (int i = 0; i < d; ++i) {
                g1[i] += x[i] * (r.target - xm + x[i] * m[i]) / sy2;
                g2[i] += -0.5 * x[i] * x[i] / sy2;
            }
        }
    } else {
        for (const data::Row& r : ds.rows()) {
            const Eigen::VectorXd& x = r.features;
            const Activation act = activation(x, m, v);
            const LogisticRow lr = logistic_row(model, r.target, act.mean,
                                                act.var, row_key(model, seed, r));
            // d/dm_i = x_i dE/da_mean, d/dv_i = x_i^2 dE/da_var; then map
            // (m, v) -> (mu1, mu2) with dv/dmu1 = -2 mu1.
            for (int i = 0; i < d; ++i) {
                const double dm_i = x[i] * lr.d_mean;
                const double dv_i = x[i] * x[i] * lr.d_var;
                g1[i] += dm_i - 2.0 * m[i] * dv_i;
                g2[i] += dv_i;
            }
        }
    }
    if (!grad.allFinite()) {
        throw NumericError("grad_loglik_mean_params: non-finite gradient");
    }
    return grad;
}

Hyperparams grad_loglik_hyper(const ModelKind& model,
                              const expfam::GaussianDist& q,
                              const data::Dataset& ds, const Hyperparams& eps,
                              std::uint64_t /*seed*/) {
    Hyperparams out;
    if (model.kind == Kind::LogisticRegression) return out;  // no hypers
    out.values["obs_log_variance"] = 0.0;
    if (ds.empty()) return out;
    check_dim(model, q, ds);
    const Eigen::VectorXd m = q.mean();
    const Eigen::VectorXd v = q.variance();
    const double sy2 = obs_variance(eps);
    double acc = 0.0;
    for (const data::Row& r : ds.rows()) {
        double pred_mean, pred_var;
        if (model.kind == Kind::GaussianMean) {
            pred_mean = m[0];
            pred_var = v[0];
        } else {
            const Activation act = activation(r.features, m, v);
            pred_mean = act.mean;
            pred_var = act.var;
        }
        const double resid = r.target - pred_mean;
        acc += -0.5 + (resid * resid + pred_var) / (2.0 * sy2);
    }
    out.values["obs_log_variance"] = acc;
    return out;
}

double loglik_at(const ModelKind& model, const Eigen::VectorXd& theta,
                 const data::Dataset& ds, const Hyperparams& eps) {
    if (ds.empty()) return 0.0;
    double total = 0.0;
    if (model.kind == Kind::LogisticRegression) {
        for (const data::Row& r : ds.rows()) {
            const double a = r.features.dot(theta);
            total += r.target * a - softplus(a);
        }
        return total;
    }
    const double sy2 = obs_variance(eps);
    for (const data::Row& r : ds.rows()) {
        const double pred =
            model.kind == Kind::GaussianMean ? theta[0] : r.features.dot(theta);
        const double resid = r.target - pred;
        total += -0.5 * (kLog2Pi + std::log(sy2)) - resid * resid / (2.0 * sy2);
    }
    return total;
}

Prediction predict(const ModelKind& model, const expfam::GaussianDist& q,
                   const Eigen::VectorXd& features, const Hyperparams& eps,
                   int mc_samples, std::uint64_t seed) {
    if (features.size() != q.dim() && model.kind != Kind::GaussianMean) {
        throw expfam::DimensionMismatchError("predict: feature width mismatch");
    }
    const Eigen::VectorXd m = q.mean();
    const Eigen::VectorXd v = q.variance();
    if (model.kind == Kind::LogisticRegression) {
        const Activation act = activation(features, m, v);
        double p;
        if (model.integration == Integration::Quadrature) {
            p = quadrature::gauss_expect([](double a) { return sigmoid(a); },
                                         act.mean, std::max(act.var, 1e-300),
                                         model.quadrature_order);
        } else {
            rng::Stream s(rng::derive(model.mc_seed_base, seed, 0x9a3d));
            const double sd = std::sqrt(act.var);
            double acc = 0.0;
            for (int k = 0; k < mc_samples; ++k) {
                acc += sigmoid(act.mean + sd * s.normal());
            }
            p = acc / mc_samples;
        }
        return Prediction{p, p * (1.0 - p)};
    }
    double pred_mean, pred_var;
    if (model.kind == Kind::GaussianMean) {
        pred_mean = m[0];
        pred_var = v[0];
    } else {
        const Activation act = activation(features, m, v);
        pred_mean = act.mean;
        pred_var = act.var;
    }
    return Prediction{pred_mean, pred_var + obs_variance(eps)};
}

}  // namespace models
