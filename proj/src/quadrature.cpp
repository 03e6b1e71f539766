#include "pvi/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace quadrature {

namespace {

HermiteRule build(int order) {
    if (order < 1) throw std::invalid_argument("hermite: order must be >= 1");
    // Symmetric tridiagonal Jacobi matrix for the Hermite recurrence; its
    // eigenvalues are the nodes and the squared first eigenvector components
    // scale the weights (Golub & Welsch 1969).
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
    for (int j = 1; j < order; ++j) {
        const double b = std::sqrt(j / 2.0);
        jacobi(j - 1, j) = b;
        jacobi(j, j - 1) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    HermiteRule rule;
    rule.nodes = es.eigenvalues();
    const double mu0 = std::sqrt(M_PI);  // int exp(-x^2) dx
    rule.weights = mu0 * es.eigenvectors().row(0).transpose().array().square();
    return rule;
}

}  // namespace

const HermiteRule& hermite(int order) {
    static std::map<int, HermiteRule> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it == cache.end()) it = cache.emplace(order, build(order)).first;
    return it->second;
}

double gauss_expect(const std::function<double(double)>& f, double mean,
                    double variance, int order) {
    if (!(variance > 0.0)) {
        throw std::invalid_argument("gauss_expect: variance must be > 0");
    }
    const HermiteRule& rule = hermite(order);
    const double s = std::sqrt(2.0 * variance);
    double acc = 0.0;
    for (int j = 0; j < rule.nodes.size(); ++j) {
        acc += rule.weights[j] * f(mean + s * rule.nodes[j]);
    }
    return acc / std::sqrt(M_PI);
}

}  // namespace quadrature
