#include "pvi/expfam.hpp"

#include <cmath>

#include "pvi/rng.hpp"

namespace expfam {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_same_dim(int a, int b, const char* op) {
    if (a != b) {
        throw DimensionMismatchError(std::string(op) + ": dimension mismatch (" +
                                     std::to_string(a) + " vs " + std::to_string(b) +
                                     ")");
    }
}

void check_finite(const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite()) {
        throw std::invalid_argument(std::string(what) + ": non-finite entry");
    }
}

}  // namespace

const Tolerances& tolerances() {
    static const Tolerances tol{};
    return tol;
}

NaturalParams::NaturalParams(Eigen::VectorXd e1, Eigen::VectorXd e2)
    : eta1(std::move(e1)), eta2(std::move(e2)) {
    check_same_dim(static_cast<int>(eta1.size()), static_cast<int>(eta2.size()),
                   "NaturalParams");
    check_finite(eta1, "NaturalParams eta1");
    check_finite(eta2, "NaturalParams eta2");
}

NaturalParams NaturalParams::zero(int dim) {
    return NaturalParams(Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim));
}

NaturalParams NaturalParams::isotropic(int dim, double mean, double variance) {
    return from_moments(Eigen::VectorXd::Constant(dim, mean),
                        Eigen::VectorXd::Constant(dim, variance));
}

NaturalParams NaturalParams::from_moments(const Eigen::VectorXd& mean,
                                          const Eigen::VectorXd& variance) {
    check_same_dim(static_cast<int>(mean.size()), static_cast<int>(variance.size()),
                   "from_moments");
    for (int i = 0; i < variance.size(); ++i) {
        if (!(variance[i] > 0.0)) {
            throw ImproperError("from_moments: variance must be > 0 at index " +
                                std::to_string(i));
        }
    }
    Eigen::VectorXd e2 = (-0.5 * variance.array().inverse()).matrix();
    Eigen::VectorXd e1 = mean.cwiseQuotient(variance);
    return NaturalParams(std::move(e1), std::move(e2));
}

bool NaturalParams::normalizable() const {
    return (eta2.array() < 0.0).all();
}

void NaturalParams::require_normalizable(const std::string& what) const {
    for (int i = 0; i < eta2.size(); ++i) {
        if (!(eta2[i] < 0.0)) {
            throw ImproperError(what + ": eta2 >= 0 at index " + std::to_string(i) +
                                " (value " + std::to_string(eta2[i]) + ")");
        }
    }
}

Eigen::VectorXd NaturalParams::mean() const {
    require_normalizable("mean");
    return (-eta1.array() / (2.0 * eta2.array())).matrix();
}

Eigen::VectorXd NaturalParams::variance() const {
    require_normalizable("variance");
    return (-0.5 * eta2.array().inverse()).matrix();
}

bool NaturalParams::operator==(const NaturalParams& other) const {
    return eta1 == other.eta1 && eta2 == other.eta2;
}

NaturalParams multiply(const NaturalParams& a, const NaturalParams& b) {
    check_same_dim(a.dim(), b.dim(), "multiply");
    return NaturalParams(a.eta1 + b.eta1, a.eta2 + b.eta2);
}

NaturalParams divide(const NaturalParams& a, const NaturalParams& b) {
    check_same_dim(a.dim(), b.dim(), "divide");
    return NaturalParams(a.eta1 - b.eta1, a.eta2 - b.eta2);
}

NaturalParams scale(const NaturalParams& a, double power) {
    return NaturalParams(power * a.eta1, power * a.eta2);
}

MeanParams::MeanParams(Eigen::VectorXd m1, Eigen::VectorXd m2)
    : mu1(std::move(m1)), mu2(std::move(m2)) {
    check_same_dim(static_cast<int>(mu1.size()), static_cast<int>(mu2.size()),
                   "MeanParams");
}

void MeanParams::require_valid(const std::string& what) const {
    for (int i = 0; i < mu1.size(); ++i) {
        if (!(mu2[i] - mu1[i] * mu1[i] > 0.0)) {
            throw ImproperError(what + ": non-positive variance at index " +
                                std::to_string(i));
        }
    }
}

MeanParams to_mean(const NaturalParams& n) {
    n.require_normalizable("to_mean");
    Eigen::ArrayXd v = -0.5 * n.eta2.array().inverse();
    Eigen::ArrayXd m = n.eta1.array() * v;
    return MeanParams(m.matrix(), (v + m * m).matrix());
}

NaturalParams to_natural(const MeanParams& mp) {
    mp.require_valid("to_natural");
    Eigen::ArrayXd v = mp.mu2.array() - mp.mu1.array() * mp.mu1.array();
    Eigen::ArrayXd e2 = -0.5 / v;
    Eigen::ArrayXd e1 = mp.mu1.array() / v;
    return NaturalParams(e1.matrix(), e2.matrix());
}

double log_partition(const NaturalParams& n) {
    n.require_normalizable("log_partition");
    const Eigen::ArrayXd& e1 = n.eta1.array();
    const Eigen::ArrayXd& e2 = n.eta2.array();
    return (-e1 * e1 / (4.0 * e2) - 0.5 * (-2.0 * e2).log() + 0.5 * kLog2Pi).sum();
}

GaussianDist::GaussianDist(NaturalParams natural) : natural_(std::move(natural)) {
    natural_.require_normalizable("GaussianDist");
    log_partition_ = expfam::log_partition(natural_);
}

double kl_divergence(const GaussianDist& q, const GaussianDist& p) {
    check_same_dim(q.dim(), p.dim(), "kl_divergence");
    Eigen::ArrayXd vq = q.variance().array();
    Eigen::ArrayXd vp = p.variance().array();
    Eigen::ArrayXd dm = (q.mean() - p.mean()).array();
    return (0.5 * ((vp / vq).log() + (vq + dm * dm) / vp - 1.0)).sum();
}

Eigen::MatrixXd sample(const GaussianDist& q, int count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
    Eigen::VectorXd m = q.mean();
    Eigen::VectorXd sd = q.variance().cwiseSqrt();
    Eigen::MatrixXd eps = rng::standard_normal_matrix(seed, count, q.dim());
    return (eps.array().rowwise() * sd.transpose().array()).matrix().rowwise() +
           m.transpose();
}

Eigen::VectorXd fisher_diag(const GaussianDist& q) {
    Eigen::ArrayXd v = q.variance().array();
    Eigen::ArrayXd m = q.mean().array();
    Eigen::VectorXd out(2 * q.dim());
    out.head(q.dim()) = v.matrix();                            // d mu1 / d eta1
    out.tail(q.dim()) = (2.0 * v * v + 4.0 * m * m * v).matrix();  // d mu2 / d eta2
    return out;
}

Eigen::Matrix2d fisher_block(const GaussianDist& q, int i) {
    const double v = q.variance()[i];
    const double m = q.mean()[i];
    Eigen::Matrix2d block;
    // cov_q of (theta_i, theta_i^2): off-diagonal 2 m v by Isserlis.
    block << v, 2.0 * m * v, 2.0 * m * v, 2.0 * v * v + 4.0 * m * m * v;
    return block;
}

}  // namespace expfam
