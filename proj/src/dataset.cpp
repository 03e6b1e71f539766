#include "pvi/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pvi/rng.hpp"

namespace data {

Dataset::Dataset(std::vector<Row> rows) : rows_(std::move(rows)) {
    if (rows_.empty()) return;
    const auto width = rows_.front().features.size();
    for (const Row& r : rows_) {
        if (r.features.size() != width) {
            throw std::invalid_argument("Dataset: ragged feature widths");
        }
    }
}

int Dataset::feature_dim() const {
    return rows_.empty() ? 0 : static_cast<int>(rows_.front().features.size());
}

Dataset Dataset::from_matrix(const Eigen::MatrixXd& features,
                             const Eigen::VectorXd& targets) {
    if (features.rows() != targets.size()) {
        throw std::invalid_argument("from_matrix: row count mismatch");
    }
    std::vector<Row> rows(static_cast<size_t>(features.rows()));
    for (int i = 0; i < features.rows(); ++i) {
        rows[static_cast<size_t>(i)] =
            Row{features.row(i).transpose(), targets[i], i};
    }
    return Dataset(std::move(rows));
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
    std::vector<Row> rows;
    rows.reserve(indices.size());
    for (int i : indices) rows.push_back(rows_.at(static_cast<size_t>(i)));
    return Dataset(std::move(rows));
}

Dataset load_csv(const std::string& path, bool append_bias) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("load_csv: missing header in " + path);
    }
    int columns = 1;
    for (char c : line) {
        if (c == ',') ++columns;
    }
    const int d_in = columns - 1;
    if (d_in > 0 && line.rfind("f0", 0) != 0) {
        throw std::runtime_error("load_csv: expected header f0,...,target in " +
                                 path);
    }
    std::vector<Row> rows;
    std::int64_t id = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Eigen::VectorXd f(d_in + (append_bias ? 1 : 0));
        for (int j = 0; j < d_in; ++j) {
            if (!std::getline(ss, cell, ',')) {
                throw std::runtime_error("load_csv: short row in " + path);
            }
            f[j] = std::stod(cell);
        }
        if (!std::getline(ss, cell, ',')) {
            throw std::runtime_error("load_csv: missing target in " + path);
        }
        if (append_bias) f[d_in] = 1.0;
        rows.push_back(Row{std::move(f), std::stod(cell), id++});
    }
    return Dataset(std::move(rows));
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_csv: cannot open " + path);
    out.precision(17);
    const int d = ds.feature_dim();
    for (int j = 0; j < d; ++j) out << "f" << j << ",";
    out << "target\n";
    for (const Row& r : ds.rows()) {
        for (int j = 0; j < d; ++j) out << r.features[j] << ",";
        out << r.target << "\n";
    }
}

Dataset make_blobs(int classes, int per_class, double separation,
                   std::uint64_t seed) {
    if (classes < 2 || per_class < 1) {
        throw std::invalid_argument("make_blobs: need classes >= 2, per_class >= 1");
    }
    rng::Stream s(rng::derive(seed, 0xb10b5));
    std::vector<Row> rows;
    rows.reserve(static_cast<size_t>(classes) * per_class);
    std::int64_t id = 0;
    const double radius = separation / 2.0;
    for (int c = 0; c < classes; ++c) {
        const double angle = 2.0 * M_PI * c / classes;
        const double cx = radius * std::cos(angle);
        const double cy = radius * std::sin(angle);
        for (int i = 0; i < per_class; ++i) {
            Eigen::VectorXd f(2);
            f << cx + s.normal(), cy + s.normal();
            rows.push_back(Row{std::move(f), static_cast<double>(c), id++});
        }
    }
    return Dataset(std::move(rows));
}

}  // namespace data
