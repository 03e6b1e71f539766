#include "pvi/rng.hpp"

#include <cmath>

namespace rng {

std::uint64_t mix(std::uint64_t state) {
    // splitmix64 finalizer (Steele, Lea, Flood 2014).
    std::uint64_t z = state + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t mix_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t acc = 0x853c49e6748fea9bULL;
    for (std::uint64_t p : parts) acc = mix(acc ^ p);
    return acc;
}

std::uint64_t Stream::next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Stream::uniform() {
    // 53 random bits into (0, 1].
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double Stream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t Stream::below(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64.
    return next_u64() % n;
}

double Stream::gamma(double shape) {
    if (shape < 1.0) {
        // Boost to shape+1 and correct with a uniform power.
        const double u = uniform();
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = uniform();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
            return d * v;
        }
    }
}

Eigen::MatrixXd standard_normal_matrix(std::uint64_t key, int count, int dim) {
    Stream s(key);
    Eigen::MatrixXd out(count, dim);
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < dim; ++j) out(i, j) = s.normal();
    return out;
}

}  // namespace rng
