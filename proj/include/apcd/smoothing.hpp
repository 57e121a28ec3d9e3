#pragma once

// Gaussian forward-backward inference on a CHMM whose controls follow the
// model's prior policy. Filtering runs on the joint (x_t, u_t) so that
// control-dependent emissions are handled exactly: the policy noise s_t
// enters both z_t and x_{t+1}, which a filter on the marginalised closed
// loop would treat as independent.

#include "apcd/chmm_model.hpp"

#include <cstddef>
#include <vector>

namespace apcd {

struct GaussianMarginal {
    Vec mean;
    Mat cov;
};

using Measurements = std::vector<Vec>;

struct FilterResult {
    std::vector<GaussianMarginal> predicted;      // p(x_t | z_0..z_{t-1})
    std::vector<GaussianMarginal> filtered;       // p(x_t | z_0..z_t)
    std::vector<GaussianMarginal> filtered_joint; // p(x_t, u_t | z_0..z_t)
    std::vector<double> log_evidence_increments;  // log p(z_t | z_0..z_{t-1})

    [[nodiscard]] double log_evidence() const;
};

struct SmootherResult {
    std::vector<GaussianMarginal> states;  // p(x_t | Z)
    std::vector<GaussianMarginal> joint;   // p(x_t, u_t | Z)
};

/// Throws NumericalError if an innovation covariance is not PD.
[[nodiscard]] FilterResult kalman_filter(const ChmmModel& model, const Measurements& z);

/// Throws NumericalError if a predicted state covariance is singular.
[[nodiscard]] SmootherResult rts_smoother(const ChmmModel& model, const FilterResult& filter);

/// Convenience: filter + smoother, smoothed state marginals only.
[[nodiscard]] std::vector<GaussianMarginal> smooth_states(const ChmmModel& model, const Measurements& z);

/// p(u | x) implied by a joint Gaussian over (x, u), as an affine-Gaussian law.
[[nodiscard]] PolicyStep condition_control_on_state(const GaussianMarginal& joint, std::size_t n_x);

/// Dense joint Gaussian over (x_0, u_0, z_0, ..., x_T, u_T, z_T) built directly
/// from the model factorisation and conditioned on Z by block Schur complements.
/// Independent of the recursive filter/smoother and backward passes; used to
/// verify them. A joint that fails Cholesky gets kRegularization * I added.
class JointGaussianOracle {
public:
    static constexpr std::size_t kMaxDimension = 5000;
    static constexpr double kRegularization = 1e-12;

    JointGaussianOracle(const ChmmModel& model, Measurements z);

    [[nodiscard]] GaussianMarginal smoothed_state(std::size_t t) const;
    [[nodiscard]] GaussianMarginal smoothed_joint(std::size_t t) const;
    /// Conditioned on z_0..z_t only.
    [[nodiscard]] GaussianMarginal filtered_state(std::size_t t) const;
    /// Conditioned on z_0..z_{t-1} only.
    [[nodiscard]] GaussianMarginal predicted_state(std::size_t t) const;
    /// Exact p(u_t | x_t, Z).
    [[nodiscard]] PolicyStep control_conditional(std::size_t t) const;
    /// log p(Z) from the joint measurement marginal.
    [[nodiscard]] double log_evidence() const;

    /// Posterior over the trajectory (x_0, u_0, ..., x_T, u_T) given Z.
    [[nodiscard]] GaussianMarginal trajectory_posterior() const;

    /// Prior (unconditioned) joint over (x_0, u_0, ..., x_T, u_T) when controls follow `policy`.
    [[nodiscard]] static GaussianMarginal trajectory_prior(const ChmmModel& model, const LinearPolicy& policy);

private:
    [[nodiscard]] std::size_t x_index(std::size_t t) const;
    [[nodiscard]] std::size_t u_index(std::size_t t) const;
    [[nodiscard]] std::size_t z_index(std::size_t t) const;
    [[nodiscard]] GaussianMarginal condition(const std::vector<Eigen::Index>& latent, std::size_t n_observed) const;

    Dims dims_;
    Measurements z_;
    Vec mean_;
    Mat cov_;
    GaussianMarginal posterior_;  // over all x, u given all z, in (x_t, u_t) order
};

}  // namespace apcd
