#pragma once

#include "apcd/linalg.hpp"

#include "doctest.h"

#include <filesystem>
#include <random>
#include <string>

namespace apcd::test {

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

inline Vec random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
    return random_matrix(n, 1, rng, scale).col(0);
}

inline Mat random_spd(Eigen::Index n, std::mt19937_64& rng) {
    const Mat L = random_matrix(n, n, rng);
    return symmetrize(L * L.transpose() + 0.5 * Mat::Identity(n, n));
}

inline Mat mat(std::initializer_list<std::initializer_list<double>> rows) {
    Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

inline Vec vec(std::initializer_list<double> values) {
    Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v(i++) = x;
    return v;
}

#define CHECK_MAT_NEAR(a, b, tol) CHECK(::apcd::rel_diff((a), (b), 1.0) <= (tol))

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("apcd-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace apcd::test

#include "apcd/chmm_model.hpp"

namespace apcd::test {

struct ScalarModelParams {
    std::size_t steps = 3;
    double Fx = 1.0, Fu = 1.0, f = 0.0, Qcov = 1.0;
    double Gx = 1.0, Gu = 0.0, g = 0.0, Rcov = 1.0;
    double K = 0.0, k = 0.0, S = 1.0;
    double mu0 = 0.0, sigma0 = 1.0;
};

// Time-invariant one-dimensional model; every block is 1x1.
inline ChmmModel scalar_model(const ScalarModelParams& p) {
    ChmmModel m;
    m.dims = Dims{1, 1, 1, p.steps, 1.0};
    m.prior = GaussianPrior{vec({p.mu0}), mat({{p.sigma0}})};
    m.transitions = broadcast(TransitionStep{mat({{p.Fx}}), mat({{p.Fu}}), vec({p.f}), mat({{p.Qcov}})}, p.steps - 1);
    m.emissions = broadcast(EmissionStep{mat({{p.Gx}}), mat({{p.Gu}}), vec({p.g}), mat({{p.Rcov}})}, p.steps);
    m.prior_policy.steps = broadcast(PolicyStep{mat({{p.K}}), vec({p.k}), mat({{p.S}})}, p.steps);
    return m;
}

}  // namespace apcd::test
