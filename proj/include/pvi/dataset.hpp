#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace data {

// One observation: feature vector, target, and a stable id. The id is the
// row's position in the originating dataset and keys per-row Monte Carlo
// streams, so estimates are additive across disjoint shards.
struct Row {
    Eigen::VectorXd features;
    double target = 0.0;
    std::int64_t id = 0;
};

class Dataset {
  public:
    Dataset() = default;
    explicit Dataset(std::vector<Row> rows);

    int n() const { return static_cast<int>(rows_.size()); }
    bool empty() const { return rows_.empty(); }
    // Feature width; 0 for an empty dataset.
    int feature_dim() const;
    const Row& row(int i) const { return rows_[static_cast<size_t>(i)]; }
    const std::vector<Row>& rows() const { return rows_; }

    // Rows in [0, n) x [0, feature_dim) built from a dense matrix; ids are
    // assigned 0..n-1.
    static Dataset from_matrix(const Eigen::MatrixXd& features,
                               const Eigen::VectorXd& targets);

    Dataset subset(const std::vector<int>& indices) const;

  private:
    std::vector<Row> rows_;
};

// CSV format: header "f0,...,f{D-1},target", one row per line. The loader
// appends a constant 1.0 bias feature when append_bias is set; models never
// do this themselves.
Dataset load_csv(const std::string& path, bool append_bias);
void save_csv(const Dataset& ds, const std::string& path);

// 2-D Gaussian blobs: classes c = 0..classes-1 centered on a circle of
// diameter `separation` (antipodal for two classes), unit isotropic noise.
Dataset make_blobs(int classes, int per_class, double separation,
                   std::uint64_t seed);

}  // namespace data
