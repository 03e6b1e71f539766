#pragma once

#include <functional>

#include <Eigen/Core>

namespace quadrature {

// Gauss-Hermite rule for weight exp(-x^2): nodes and weights such that
// int f(x) exp(-x^2) dx ~= sum_j w_j f(x_j). Computed by Golub-Welsch and
// cached per order.
struct HermiteRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

constexpr int kDefaultOrder = 61;

const HermiteRule& hermite(int order);

// E[f(a)] for a ~ N(mean, variance), variance > 0.
double gauss_expect(const std::function<double(double)>& f, double mean,
                    double variance, int order = kDefaultOrder);

}  // namespace quadrature
