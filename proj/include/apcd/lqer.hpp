#pragma once

// Demonstrator synthesis for tracking problems on states laid out as
// (position, velocity). Stage cost at every t = 0..T:
//
//   c_t = 1/2 (|p_t - p*_t|^2_Rp + |v_t|^2_Rv + |u_t|^2_Ru)
//
// The LQER minimises E[exp(lambda * sum_t c_t)]; lambda -> 0 recovers the LQR.

#include "apcd/chmm_model.hpp"

#include <vector>

namespace apcd {

struct LqerCost {
    Mat Rp;
    Mat Rv;
    Mat Ru;
    double lambda = 1e-4;
    std::vector<Vec> reference;  // p*_t, one per step

    [[nodiscard]] std::size_t position_dim() const { return static_cast<std::size_t>(Rp.rows()); }
    /// blockdiag(Rp, Rv)
    [[nodiscard]] Mat state_weight() const;
    /// (p*_t, 0)
    [[nodiscard]] Vec state_target(std::size_t t) const;
    /// c_t as defined above.
    [[nodiscard]] double stage_cost(std::size_t t, const Vec& x, const Vec& u) const;
};

/// Thrown when I - lambda Qcov P loses positive definiteness.
class RiskBreakdown : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Deterministic time-varying gains u_t = K_t x_t + k_t (S_t = 0). Uses the
/// model's transitions only; emissions and prior policy are ignored.
[[nodiscard]] LinearPolicy lqer_synthesize(const ChmmModel& model, const LqerCost& cost);

/// Same recursion without the risk transform.
[[nodiscard]] LinearPolicy lqr_synthesize(const ChmmModel& model, const LqerCost& cost);

}  // namespace apcd
