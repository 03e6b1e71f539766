#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "pvi/expfam.hpp"
#include "pvi/rng.hpp"
#include "testutil.hpp"

using expfam::GaussianDist;
using expfam::MeanParams;
using expfam::NaturalParams;

namespace {

NaturalParams nat1(double e1, double e2) {
    return NaturalParams(Eigen::VectorXd::Constant(1, e1),
                         Eigen::VectorXd::Constant(1, e2));
}

}  // namespace

TEST_CASE("multiply and divide are componentwise natural-parameter sums") {
    const NaturalParams std_normal = nat1(0.0, -0.5);
    const NaturalParams prod = expfam::multiply(std_normal, std_normal);
    CHECK(prod.eta1[0] == 0.0);
    CHECK(prod.eta2[0] == -1.0);

    const NaturalParams a = nat1(2.0, -1.0);
    CHECK(expfam::multiply(a, NaturalParams::zero(1)) == a);

    const NaturalParams b = nat1(-1.0, -0.25);
    const NaturalParams ab = expfam::multiply(a, b);
    CHECK(ab.eta1[0] == 1.0);
    CHECK(ab.eta2[0] == -1.25);

    CHECK(expfam::divide(ab, b) == a);
    CHECK(expfam::divide(nat1(0, -1), nat1(0, -0.5)) == nat1(0, -0.5));
    CHECK(expfam::divide(a, a) == NaturalParams::zero(1));

    CHECK_THROWS_AS(expfam::multiply(a, NaturalParams::zero(2)),
                    expfam::DimensionMismatchError);
}

TEST_CASE("group action on randomized triples") {
    rng::Stream s(1);
    for (int trial = 0; trial < 100; ++trial) {
        const NaturalParams a = testutil::random_proper(s, 3);
        const NaturalParams b = testutil::random_proper(s, 3);
        const NaturalParams c = testutil::random_proper(s, 3);
        const NaturalParams left = multiply(multiply(a, b), c);
        const NaturalParams right = multiply(a, multiply(b, c));
        CHECK((left.eta1 - right.eta1).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((left.eta2 - right.eta2).cwiseAbs().maxCoeff() < 1e-12);
        // Inverse up to the rounding of the additions themselves.
        const NaturalParams back = multiply(divide(a, b), b);
        CHECK((back.eta1 - a.eta1).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((back.eta2 - a.eta2).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("dual coordinate maps") {
    const MeanParams std_mu = expfam::to_mean(nat1(0.0, -0.5));
    CHECK(std_mu.mu1[0] == doctest::Approx(0.0));
    CHECK(std_mu.mu2[0] == doctest::Approx(1.0));

    // m = 1, v = 0.5 by the closed-form map.
    const MeanParams mu = expfam::to_mean(nat1(2.0, -1.0));
    CHECK(mu.mu1[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mu.mu2[0] == doctest::Approx(1.5).epsilon(1e-12));

    rng::Stream s(2);
    const double round_trip_tol = expfam::tolerances().dual_map_roundtrip;
    for (int trial = 0; trial < 50; ++trial) {
        const NaturalParams n = testutil::random_proper(s, 4);
        const NaturalParams back = expfam::to_natural(expfam::to_mean(n));
        CHECK((back.eta1 - n.eta1).cwiseAbs().maxCoeff() < round_trip_tol);
        CHECK((back.eta2 - n.eta2).cwiseAbs().maxCoeff() < round_trip_tol);
    }

    CHECK_THROWS_WITH_AS(expfam::to_mean(nat1(0.0, 0.5)),
                         doctest::Contains("index 0"), expfam::ImproperError);
}

TEST_CASE("log partition closed form and dual gradient") {
    // A(eta) recomputation matches the cached value.
    rng::Stream s(3);
    for (int trial = 0; trial < 20; ++trial) {
        const NaturalParams n = testutil::random_proper(s, 3);
        const GaussianDist q(n);
        CHECK(std::abs(q.log_partition() - expfam::log_partition(n)) <
              expfam::tolerances().log_partition_cache);

        // dA/deta equals the mean parameters (centered differences).
        const MeanParams mu = expfam::to_mean(n);
        for (int i = 0; i < n.dim(); ++i) {
            const double h = 1e-6;
            auto a_eta1 = [&](double x) {
                NaturalParams shifted = n;
                shifted.eta1[i] = x;
                return expfam::log_partition(shifted);
            };
            auto a_eta2 = [&](double x) {
                NaturalParams shifted = n;
                shifted.eta2[i] = x;
                return expfam::log_partition(shifted);
            };
            const double d1 = testutil::centered_diff(a_eta1, n.eta1[i], h);
            const double d2 = testutil::centered_diff(a_eta2, n.eta2[i], h);
            CHECK(std::abs(d1 - mu.mu1[i]) / std::max(1.0, std::abs(mu.mu1[i])) <
                  1e-4);
            CHECK(std::abs(d2 - mu.mu2[i]) / std::max(1.0, std::abs(mu.mu2[i])) <
                  1e-4);
        }
    }
}

TEST_CASE("log partition is convex on random segments") {
    rng::Stream s(4);
    for (int trial = 0; trial < 100; ++trial) {
        const NaturalParams a = testutil::random_proper(s, 2);
        const NaturalParams b = testutil::random_proper(s, 2);
        const double t = s.uniform();
        const NaturalParams mid(t * a.eta1 + (1 - t) * b.eta1,
                                t * a.eta2 + (1 - t) * b.eta2);
        CHECK(expfam::log_partition(mid) <=
              t * expfam::log_partition(a) + (1 - t) * expfam::log_partition(b) +
                  1e-9);
    }
}

TEST_CASE("KL divergence closed form") {
    const GaussianDist std1(nat1(0.0, -0.5));
    CHECK(expfam::kl_divergence(std1, std1) < 1e-12);

    const GaussianDist shifted(NaturalParams::from_moments(
        Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.0)));
    CHECK(expfam::kl_divergence(shifted, std1) == doctest::Approx(0.5));

    // KL(N(0,2) || N(0,1)) checked against dense quadrature of q log(q/p).
    const GaussianDist wide(NaturalParams::from_moments(
        Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 2.0)));
    const double closed = expfam::kl_divergence(wide, std1);
    CHECK(closed == doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))));
    const double quad = testutil::trapezoid(
        [&](double x) {
            const double lq = testutil::normal_logpdf(x, 0.0, 2.0);
            const double lp = testutil::normal_logpdf(x, 0.0, 1.0);
            return std::exp(lq) * (lq - lp);
        },
        -20.0, 20.0, 20001);
    CHECK(closed == doctest::Approx(quad).epsilon(1e-8));

    rng::Stream s(5);
    for (int trial = 0; trial < 100; ++trial) {
        const GaussianDist q(testutil::random_proper(s, 3));
        const GaussianDist p(testutil::random_proper(s, 3));
        CHECK(expfam::kl_divergence(q, p) >= 0.0);
    }
}

TEST_CASE("seeded sampling is deterministic with correct moments") {
    const GaussianDist q = GaussianDist::standard(2);
    const Eigen::MatrixXd a = expfam::sample(q, 64, 42);
    const Eigen::MatrixXd b = expfam::sample(q, 64, 42);
    CHECK(a == b);
    CHECK(expfam::sample(q, 64, 43) != a);

    const GaussianDist q1 = GaussianDist::standard(1);
    const Eigen::MatrixXd big = expfam::sample(q1, 100000, 7);
    CHECK(std::abs(big.mean()) < 0.02);  // 5 sigma at this count

    CHECK_THROWS_AS(GaussianDist(nat1(3.0, 0.0)), expfam::ImproperError);
    CHECK_THROWS_AS(expfam::sample(q1, 0, 1), std::invalid_argument);
}

TEST_CASE("fisher information diagonal and blocks") {
    // N(0,1): d mu1 / d eta1 = 1.
    const GaussianDist std1(nat1(0.0, -0.5));
    CHECK(expfam::fisher_diag(std1)[0] == doctest::Approx(1.0));

    rng::Stream s(6);
    for (int trial = 0; trial < 20; ++trial) {
        const NaturalParams n = testutil::random_proper(s, 2);
        const GaussianDist q(n);
        for (int i = 0; i < n.dim(); ++i) {
            const Eigen::Matrix2d closed = expfam::fisher_block(q, i);
            // Finite differences of to_mean over (eta1_i, eta2_i).
            Eigen::Matrix2d fd;
            const double h = 1e-6;
            for (int c = 0; c < 2; ++c) {
                NaturalParams up = n, down = n;
                (c == 0 ? up.eta1[i] : up.eta2[i]) += h;
                (c == 0 ? down.eta1[i] : down.eta2[i]) -= h;
                const MeanParams mu_up = expfam::to_mean(up);
                const MeanParams mu_down = expfam::to_mean(down);
                fd(0, c) = (mu_up.mu1[i] - mu_down.mu1[i]) / (2 * h);
                fd(1, c) = (mu_up.mu2[i] - mu_down.mu2[i]) / (2 * h);
            }
            for (int r = 0; r < 2; ++r) {
                for (int c = 0; c < 2; ++c) {
                    CHECK(std::abs(fd(r, c) - closed(r, c)) /
                              std::max(1.0, std::abs(closed(r, c))) <
                          1e-4);
                }
            }
            // Hessian symmetry of A and positive definiteness.
            CHECK(std::abs(fd(0, 1) - fd(1, 0)) < 1e-6);
            const Eigen::Vector2d eig =
                Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(fd).eigenvalues();
            CHECK(eig.minCoeff() > 0.0);

            const Eigen::VectorXd diag = expfam::fisher_diag(q);
            CHECK(diag[i] == doctest::Approx(closed(0, 0)));
            CHECK(diag[n.dim() + i] == doctest::Approx(closed(1, 1)));
        }
    }
}
