#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace expfam {

// Diagonal-Gaussian exponential family over a parameter vector theta in R^D
// with sufficient statistics T(theta) = (theta, theta^2) per coordinate.
// Natural coordinates per dimension:
//   eta1 = mean / variance          (precision-times-mean)
//   eta2 = -1 / (2 * variance)      (negative half precision)
// Mean coordinates:
//   mu1 = E[theta],  mu2 = E[theta^2].
//
// All types are immutable values; operations return fresh objects.

struct DimensionMismatchError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Raised when a normalizable distribution is required but eta2 >= 0 (or a
// variance is non-positive); the message names the offending index.
struct ImproperError : std::domain_error {
    using std::domain_error::domain_error;
};

// Numeric tolerances shared across the library and its self-checks.
struct Tolerances {
    double log_partition_cache = 1e-12;
    double dual_map_roundtrip = 1e-10;
    double finite_diff_rel = 1e-4;
    double fixed_point_delta_analytic = 1e-8;
    double fixed_point_delta_mc = 1e-4;
    double fe_sum_match = 1e-6;
    double mirror_identity = 1e-12;
};

const Tolerances& tolerances();

struct MeanParams;

struct NaturalParams {
    Eigen::VectorXd eta1;
    Eigen::VectorXd eta2;

    NaturalParams() = default;
    NaturalParams(Eigen::VectorXd e1, Eigen::VectorXd e2);

    int dim() const { return static_cast<int>(eta1.size()); }

    // A factor with all-zero parameters: the multiplicative identity.
    static NaturalParams zero(int dim);
    // Natural parameters of N(mean, variance) repeated over dim coordinates.
    static NaturalParams isotropic(int dim, double mean, double variance);
    static NaturalParams from_moments(const Eigen::VectorXd& mean,
                                      const Eigen::VectorXd& variance);

    // True iff eta2 < 0 in every coordinate.
    bool normalizable() const;
    // Throws ImproperError naming the first offending index.
    void require_normalizable(const std::string& what) const;

    Eigen::VectorXd mean() const;      // -eta1 / (2 eta2), requires proper
    Eigen::VectorXd variance() const;  // -1 / (2 eta2), requires proper

    bool operator==(const NaturalParams& other) const;
};

// q(theta) = p(theta) * prod_m t_m(theta): factor product is addition of
// natural parameters.
NaturalParams multiply(const NaturalParams& a, const NaturalParams& b);
// Factor division is subtraction; multiply(divide(a, b), b) == a exactly.
NaturalParams divide(const NaturalParams& a, const NaturalParams& b);
NaturalParams scale(const NaturalParams& a, double power);

struct MeanParams {
    Eigen::VectorXd mu1;
    Eigen::VectorXd mu2;

    MeanParams() = default;
    MeanParams(Eigen::VectorXd m1, Eigen::VectorXd m2);

    int dim() const { return static_cast<int>(mu1.size()); }
    Eigen::VectorXd variance() const { return mu2 - mu1.cwiseProduct(mu1); }
    void require_valid(const std::string& what) const;
};

MeanParams to_mean(const NaturalParams& n);
NaturalParams to_natural(const MeanParams& m);

// A(eta) = sum_i [ -eta1^2/(4 eta2) - log(-2 eta2)/2 + log(2 pi)/2 ].
double log_partition(const NaturalParams& n);

class GaussianDist {
  public:
    explicit GaussianDist(NaturalParams natural);

    const NaturalParams& natural() const { return natural_; }
    double log_partition() const { return log_partition_; }
    int dim() const { return natural_.dim(); }

    Eigen::VectorXd mean() const { return natural_.mean(); }
    Eigen::VectorXd variance() const { return natural_.variance(); }
    MeanParams mean_params() const { return to_mean(natural_); }

    static GaussianDist standard(int dim) {
        return GaussianDist(NaturalParams::isotropic(dim, 0.0, 1.0));
    }

  private:
    NaturalParams natural_;
    double log_partition_;
};

// Closed-form KL(q || p) between diagonal Gaussians of equal dimension.
double kl_divergence(const GaussianDist& q, const GaussianDist& p);

// count x dim matrix of reparameterized draws mean + sd .* eps, with eps a
// deterministic stream of the seed. Identical (seed, count, dim) give
// bit-identical matrices.
Eigen::MatrixXd sample(const GaussianDist& q, int count, std::uint64_t seed);

// Diagonal of the Fisher information d mu / d eta, as a 2*dim vector laid out
// [d mu1_i / d eta1_i ..., d mu2_i / d eta2_i ...].
Eigen::VectorXd fisher_diag(const GaussianDist& q);
// Full 2x2 block d(mu1_i, mu2_i)/d(eta1_i, eta2_i) for coordinate i.
Eigen::Matrix2d fisher_block(const GaussianDist& q, int i);

}  // namespace expfam
