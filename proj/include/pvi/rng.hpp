#pragma once

#include <cstdint>
#include <initializer_list>

#include <Eigen/Core>

namespace rng {

// Deterministic counter-based random streams. Every stochastic quantity in
// the library is a pure function of a 64-bit key, so runs replay exactly on
// any platform. Keys are derived by mixing integer coordinates such as
// (base_seed, shard, row, iteration), which keeps per-row streams stable
// under dataset partitioning.

std::uint64_t mix(std::uint64_t state);

// Left-fold of mix over the parts; mix_key(a) != mix_key(a, 0).
std::uint64_t mix_key(std::initializer_list<std::uint64_t> parts);

inline std::uint64_t derive(std::uint64_t a, std::uint64_t b) {
    return mix_key({a, b});
}
inline std::uint64_t derive(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_key({a, b, c});
}
inline std::uint64_t derive(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                            std::uint64_t d) {
    return mix_key({a, b, c, d});
}

// Sequential stream over a splitmix64 trajectory with a cached Box-Muller
// spare for normals.
class Stream {
  public:
    explicit Stream(std::uint64_t key) : state_(key) {}

    std::uint64_t next_u64();
    // Uniform on (0, 1]; never returns 0 so log() is safe.
    double uniform();
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    // Marsaglia-Tsang gamma(shape, 1), shape > 0.
    double gamma(double shape);

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// count x dim matrix of standard normals drawn from a single stream, filled
// row by row.
Eigen::MatrixXd standard_normal_matrix(std::uint64_t key, int count, int dim);

}  // namespace rng
