#pragma once

// Randomised consistency checks of the recursive algorithms against the dense
// joint-Gaussian oracle and against the two KL objectives the extractors
// minimise. Shared by `apcd oracle-check` and the test suite.

#include "apcd/apcd.hpp"
#include "apcd/chmm_model.hpp"
#include "apcd/smoothing.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace apcd {

struct RandomModelOptions {
    std::size_t max_nx = 3;
    std::size_t max_nu = 2;
    std::size_t max_nz = 2;
    std::size_t min_steps = 2;
    std::size_t max_steps = 10;
    bool control_in_emission = true;  // random Gu instead of zero
};

/// Small time-varying model with well-conditioned random parameters.
[[nodiscard]] ChmmModel random_model(std::mt19937_64& rng, const RandomModelOptions& options = {});

/// Draws (x, u, z) from the model under its prior policy and returns z.
[[nodiscard]] Measurements sample_measurements(const ChmmModel& model, std::mt19937_64& rng);

/// Replaces every Qcov by `scale * I`.
[[nodiscard]] ChmmModel with_process_noise(const ChmmModel& model, double scale);

/// KL(p || q) between dense Gaussians; q must be PD.
[[nodiscard]] double gaussian_kl(const GaussianMarginal& p, const GaussianMarginal& q);

/// D[p(Xi | Z) || p(Xi; pi)]: dense, needs PD transition noise.
[[nodiscard]] double m_projection_divergence(const ChmmModel& model, const GaussianMarginal& posterior, const LinearPolicy& policy);

/// D[p(Xi; pi) || p(Xi | Z)] in factorised form
///   E_pi[sum_t KL(pi_t || rho_t)(x_t) + sum_t -log p(z_t | xi_t)] + log p(Z),
/// which stays finite when the transitions are deterministic.
[[nodiscard]] double i_projection_divergence(const ChmmModel& model, const Measurements& z, double log_evidence,
                                             const LinearPolicy& policy);

/// All (K_t, k_t) entries of a policy, step by step.
[[nodiscard]] Vec pack_means(const LinearPolicy& policy);
[[nodiscard]] LinearPolicy unpack_means(const LinearPolicy& like, const Vec& theta);

/// Central-difference gradient with per-entry step h (1 + |theta_i|).
[[nodiscard]] Vec finite_difference_gradient(const std::function<double(const Vec&)>& f, const Vec& theta, double h);

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;      // the measured quantity
    double threshold = 0.0;  // pass boundary for `value`
    std::string detail;
};

struct OracleSuiteOptions {
    std::uint64_t seed = 20200101;
    std::size_t trials = 50;
    std::size_t max_steps = 10;
};

/// Max relative error of N=1 vanilla (K*, k*, Sigma*) against p(u_t | x_t, Z).
[[nodiscard]] CheckResult check_oracle_equivalence(const OracleSuiteOptions& options);
/// Filtered, predicted and smoothed marginals against the oracle.
[[nodiscard]] CheckResult check_smoother_agreement(const OracleSuiteOptions& options);
/// Filter log-evidence against the oracle's measurement marginal.
[[nodiscard]] CheckResult check_log_evidence(const OracleSuiteOptions& options);
/// Vanilla and natural gains coincide as Qcov -> 0 (worst ratio over trials).
[[nodiscard]] CheckResult check_deterministic_limit(const OracleSuiteOptions& options);
/// ... and differ for Qcov = I.
[[nodiscard]] CheckResult check_methods_distinct(const OracleSuiteOptions& options);
[[nodiscard]] CheckResult check_m_projection(const OracleSuiteOptions& options);
[[nodiscard]] CheckResult check_i_projection(const OracleSuiteOptions& options);
/// Rcov * 1e12 gives back the prior policy from both extractors.
[[nodiscard]] CheckResult check_prior_recovery(const OracleSuiteOptions& options);

[[nodiscard]] std::vector<CheckResult> run_oracle_suite(const OracleSuiteOptions& options);

}  // namespace apcd
