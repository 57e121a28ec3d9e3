#pragma once

// Time-varying linear-Gaussian controlled hidden Markov model:
//
//   x_0     ~ N(mu0, sigma0)
//   u_t     = K_t x_t + k_t + s_t,             s_t ~ N(0, S_t)      (prior policy)
//   x_{t+1} = Fx_t x_t + Fu_t u_t + f_t + q_t,  q_t ~ N(0, Qcov_t)
//   z_t     = Gx_t x_t + Gu_t u_t + g_t + r_t,  r_t ~ N(0, Rcov_t)
//
// Quadratic forms throughout drop their constant terms.

#include "apcd/linalg.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace apcd {

struct Dims {
    std::size_t n_x = 1;
    std::size_t n_u = 1;
    std::size_t n_z = 1;
    std::size_t steps = 2;  // T + 1
    double dt = 1.0;

    [[nodiscard]] std::size_t n_xi() const { return n_x + n_u; }
};

struct GaussianPrior {
    Vec mu0;
    Mat sigma0;
};

struct TransitionStep {
    Mat Fx;
    Mat Fu;
    Vec f;
    Mat Qcov;

    /// [Fx Fu]
    [[nodiscard]] Mat Fxi() const;
};

struct EmissionStep {
    Mat Gx;
    Mat Gu;
    Vec g;
    Mat Rcov;

    [[nodiscard]] Mat Gxi() const;
};

/// One step of an affine-Gaussian feedback law u ~ N(K x + k, S).
struct PolicyStep {
    Mat K;
    Vec k;
    Mat S;

    [[nodiscard]] Vec mean(const Vec& x) const { return K * x + k; }
};

struct LinearPolicy {
    std::vector<PolicyStep> steps;

    [[nodiscard]] std::size_t size() const { return steps.size(); }
    [[nodiscard]] const PolicyStep& operator[](std::size_t t) const { return steps[t]; }
    [[nodiscard]] PolicyStep& operator[](std::size_t t) { return steps[t]; }
    [[nodiscard]] Vec mean_control(std::size_t t, const Vec& x) const { return steps[t].mean(x); }
};

struct ChmmModel {
    Dims dims;
    GaussianPrior prior;
    std::vector<TransitionStep> transitions;  // steps - 1
    std::vector<EmissionStep> emissions;      // steps
    LinearPolicy prior_policy;                // steps
};

/// l(z|xi) = 1/2 xi^T Rxixi xi + Rxi^T xi + const
struct ObsQuadratic {
    Vec Rxi;
    Mat Rxixi;
};

/// y = A x + b + e, e ~ N(0, cov)
struct AffineGaussianSystem {
    Mat A;
    Vec b;
    Mat cov;
};

struct ValidationIssue {
    std::string message;
    std::optional<std::size_t> step;

    [[nodiscard]] std::string to_string() const;
    bool operator==(const ValidationIssue&) const = default;
};

using ValidationReport = std::vector<ValidationIssue>;

[[nodiscard]] ValidationReport validate_model(const ChmmModel& model);

/// Quadratic form of -log p(z | xi); throws NumericalError for a singular Rcov.
[[nodiscard]] ObsQuadratic obs_loglik_quadratic(const EmissionStep& emission, const Vec& z);

/// Elementwise mean of per-sequence quadratics.
[[nodiscard]] ObsQuadratic average(const std::vector<ObsQuadratic>& terms);

/// p(x_{t+1} | x_t) with u marginalised under the policy step.
[[nodiscard]] AffineGaussianSystem closed_loop_transition(const TransitionStep& step, const PolicyStep& pol);

/// p(z_t | x_t) with u marginalised under the policy step.
[[nodiscard]] AffineGaussianSystem closed_loop_emission(const EmissionStep& step, const PolicyStep& pol);

/// Repeats a single time-invariant step `steps` times.
template <typename Step>
[[nodiscard]] std::vector<Step> broadcast(const Step& step, std::size_t steps) {
    return std::vector<Step>(steps, step);
}

}  // namespace apcd
