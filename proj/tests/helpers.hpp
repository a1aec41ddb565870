#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "cspkit/dataio.hpp"

namespace testing {

using cspkit::Matrix;
using cspkit::Vector;

// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(Eigen::Index n, std::mt19937_64& rng, double lo = 0.1, double hi = 2.0) {
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    Eigen::HouseholderQR<Matrix> qr(a);
    const Matrix q = qr.householderQ();
    Vector d(n);
    for (Eigen::Index i = 0; i < n; ++i) d(i) = u(rng);
    Matrix c = q * d.asDiagonal() * q.transpose();
    return 0.5 * (c + c.transpose());
}

inline Matrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    Eigen::HouseholderQR<Matrix> qr(a);
    return qr.householderQ();
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix a(r, c);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    return a;
}

inline double max_offdiag(const Matrix& m) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            if (i != j) worst = std::max(worst, std::abs(m(i, j)));
    return worst;
}

// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("cspkit-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace testing
