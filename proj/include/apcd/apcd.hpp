#pragma once

// A-posteriori control distributions for linear-Gaussian CHMMs.
//
// Both extractors run the same backward recursion
//
//   Q_t  = l(z_t | xi_t) + (propagated V_{t+1})
//   pi_t ∝ rho_t(u | x) exp(-Q_t(x, u))
//   V_t  = -log E_rho[exp(-Q_t)]
//
// and differ only in how V_{t+1} is propagated through the transition noise:
// the vanilla form takes -log E[exp(-V)], the natural form takes E[V].

#include "apcd/chmm_model.hpp"
#include "apcd/smoothing.hpp"

#include <cstddef>
#include <vector>

namespace apcd {

/// V(x) = 1/2 x^T Vxx x + Vx^T x + const
struct QuadraticValue {
    Vec Vx;
    Mat Vxx;

    [[nodiscard]] static QuadraticValue zero(std::size_t n_x);
    [[nodiscard]] double operator()(const Vec& x) const { return 0.5 * x.dot(Vxx * x) + Vx.dot(x); }
};

/// Q(xi) = 1/2 xi^T Qxixi xi + Qxi^T xi + const, with xi = (x, u).
struct QuadraticQ {
    Vec Qxi;
    Mat Qxixi;
    std::size_t n_x = 0;

    [[nodiscard]] static QuadraticQ from_obs(const ObsQuadratic& obs, std::size_t n_x);

    [[nodiscard]] std::size_t n_u() const { return static_cast<std::size_t>(Qxi.size()) - n_x; }
    [[nodiscard]] Vec Qx() const { return Qxi.head(static_cast<Eigen::Index>(n_x)); }
    [[nodiscard]] Vec Qu() const { return Qxi.tail(static_cast<Eigen::Index>(n_u())); }
    [[nodiscard]] Mat Qxx() const;
    [[nodiscard]] Mat Qux() const;
    [[nodiscard]] Mat Quu() const;
    [[nodiscard]] double operator()(const Vec& xi) const { return 0.5 * xi.dot(Qxixi * xi) + Qxi.dot(xi); }
};

enum class Method { Vanilla, Natural };

[[nodiscard]] const char* to_string(Method method);
/// Throws std::invalid_argument for anything other than "vanilla" / "natural".
[[nodiscard]] Method parse_method(const std::string& name);

/// Completes the square in rho(u|x) exp(-Q(x,u)):
///   Sigma* = (S^-1 + Quu)^-1, K* = Sigma*(S^-1 K - Qux), k* = Sigma*(S^-1 k - Qu).
/// Throws NumericalError when S^-1 + Quu is not PD.
[[nodiscard]] PolicyStep policy_from_q(const PolicyStep& prior, const QuadraticQ& q,
                                       std::optional<std::size_t> step = std::nullopt);

/// Value with exp(-V(x)) pi*(u|x) ∝ rho(u|x) exp(-Q(x,u)).
[[nodiscard]] QuadraticValue value_from_q(const PolicyStep& prior, const PolicyStep& posterior, const QuadraticQ& q);

/// Q = obs - log E_{x' ~ N(F xi + f, Qcov)}[exp(-V(x'))].
/// Evaluated as F^T (I + Vxx Qcov)^-1 (Vxx F) etc. so a singular Vxx is fine.
[[nodiscard]] QuadraticQ vanilla_q_update(const TransitionStep& step, const ObsQuadratic& obs, const QuadraticValue& v_next,
                                          std::optional<std::size_t> t = std::nullopt);

/// Q = obs_mean + E_{x' ~ N(F xi + f, Qcov)}[V(x')]; independent of Qcov up to a constant.
[[nodiscard]] QuadraticQ natural_q_update(const TransitionStep& step, const ObsQuadratic& obs_mean,
                                          const QuadraticValue& v_next);

/// Per-step output of one backward recursion.
struct BackwardPass {
    LinearPolicy policy;
    std::vector<QuadraticQ> q;
    std::vector<QuadraticValue> value;
};

/// Single-sequence vanilla recursion, V_{T+1} = 0.
[[nodiscard]] BackwardPass backward_vanilla(const ChmmModel& model, const Measurements& z);

/// Natural recursion with the observation likelihood averaged over all sequences.
[[nodiscard]] BackwardPass backward_natural(const ChmmModel& model, const std::vector<Measurements>& sequences);

/// N-component mixture of single-sequence vanilla policies. Component n is
/// weighted at (t, x) by the smoothed state density p(x_t = x | Z^n).
class MixturePolicy {
public:
    MixturePolicy(std::vector<LinearPolicy> components, std::vector<std::vector<GaussianMarginal>> weight_marginals);

    [[nodiscard]] std::size_t size() const { return components_.size(); }
    [[nodiscard]] std::size_t steps() const { return components_.front().size(); }
    [[nodiscard]] const std::vector<LinearPolicy>& components() const { return components_; }
    [[nodiscard]] const std::vector<std::vector<GaussianMarginal>>& weight_marginals() const { return weight_marginals_; }

    /// Normalised responsibilities at (t, x); uniform if every density underflows.
    [[nodiscard]] Vec weights(std::size_t t, const Vec& x) const;

private:
    struct CachedDensity {
        Mat precision;
        double log_norm = 0.0;  // -1/2 log det(2 pi cov)
    };

    std::vector<LinearPolicy> components_;
    std::vector<std::vector<GaussianMarginal>> weight_marginals_;
    std::vector<std::vector<CachedDensity>> cache_;
};

/// Runs one vanilla recursion per sequence (on up to `jobs` threads) plus the
/// per-sequence smoother for the mixture weights.
[[nodiscard]] MixturePolicy extract_vanilla(const ChmmModel& model, const std::vector<Measurements>& sequences,
                                            std::size_t jobs = 1);

[[nodiscard]] LinearPolicy extract_natural(const ChmmModel& model, const std::vector<Measurements>& sequences);

/// sum_n w_n(x) (K*_n x + k*_n)
[[nodiscard]] Vec mixture_mean_control(const MixturePolicy& mix, std::size_t t, const Vec& x);

}  // namespace apcd
