#include "apcd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace apcd {

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

bool is_symmetric(const Mat& m, double tol) {
    if (m.rows() != m.cols()) return false;
    if (m.size() == 0) return true;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

bool is_psd(const Mat& m, double rel_tol) {
    if (m.rows() != m.cols()) return false;
    if (m.size() == 0) return true;
    if (!m.allFinite()) return false;
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    const double largest = std::max(std::abs(ev.maxCoeff()), std::abs(ev.minCoeff()));
    return ev.minCoeff() >= -rel_tol * std::max(largest, 1e-300);
}

bool is_pd(const Mat& m) {
    if (m.rows() != m.cols() || !m.allFinite()) return false;
    Eigen::LLT<Mat> llt(symmetrize(m));
    return llt.info() == Eigen::Success;
}

Mat spd_inverse(const Mat& m, const std::string& what, std::optional<std::size_t> step) {
    Eigen::LLT<Mat> llt(symmetrize(m));
    if (llt.info() != Eigen::Success || !m.allFinite()) throw NumericalError(what, step);
    return symmetrize(llt.solve(Mat::Identity(m.rows(), m.cols())));
}

Mat psd_sqrt(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
    const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return symmetrize(es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose());
}

double gaussian_logpdf(const Vec& x, const Vec& mean, const Mat& cov) {
    Eigen::LLT<Mat> llt(symmetrize(cov));
    if (llt.info() != Eigen::Success) throw NumericalError("covariance not positive definite in log density");
    const Vec white = llt.matrixL().solve(x - mean);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double n = static_cast<double>(x.size());
    return -0.5 * (white.squaredNorm() + log_det + n * std::log(2.0 * std::numbers::pi));
}

double rel_diff(const Mat& a, const Mat& b, double floor) {
    return (a - b).norm() / std::max(b.norm(), floor);
}

}  // namespace apcd
