#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace apcd {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Raised when a factorization or propagation step fails numerically.
/// Carries the time step (if known) so that callers can report context.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
        : std::runtime_error(step ? what + " (t=" + std::to_string(*step) + ")" : what), step_(step) {}

    [[nodiscard]] std::optional<std::size_t> step() const { return step_; }

private:
    std::optional<std::size_t> step_;
};

// Relative eigenvalue floor used by every PSD check.
inline constexpr double kPsdRelTol = 1e-10;
inline constexpr double kSymmetryTol = 1e-12;

[[nodiscard]] Mat symmetrize(const Mat& m);

/// Max |m - m^T| relative to max(1, max|m|) is below `tol`.
[[nodiscard]] bool is_symmetric(const Mat& m, double tol = kSymmetryTol);

/// Symmetric part has eigenvalues >= -rel_tol * max(|largest eigenvalue|, tiny).
[[nodiscard]] bool is_psd(const Mat& m, double rel_tol = kPsdRelTol);

/// Cholesky succeeds on the symmetric part.
[[nodiscard]] bool is_pd(const Mat& m);

/// Inverse of a symmetric positive-definite matrix; throws NumericalError if not PD.
[[nodiscard]] Mat spd_inverse(const Mat& m, const std::string& what = "matrix not positive definite",
                              std::optional<std::size_t> step = std::nullopt);

/// Symmetric square root of a PSD matrix (negative roundoff eigenvalues clamped to zero).
[[nodiscard]] Mat psd_sqrt(const Mat& m);

/// Log density of N(mean, cov) at x; cov must be PD.
[[nodiscard]] double gaussian_logpdf(const Vec& x, const Vec& mean, const Mat& cov);

/// Relative difference ||a - b|| / max(||b||, floor).
[[nodiscard]] double rel_diff(const Mat& a, const Mat& b, double floor = 1.0);

}  // namespace apcd
