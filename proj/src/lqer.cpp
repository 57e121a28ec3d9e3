#include "apcd/lqer.hpp"

#include <stdexcept>

namespace apcd {

Mat LqerCost::state_weight() const {
    const Eigen::Index np = Rp.rows();
    const Eigen::Index nv = Rv.rows();
    Mat W = Mat::Zero(np + nv, np + nv);
    W.topLeftCorner(np, np) = Rp;
    W.bottomRightCorner(nv, nv) = Rv;
    return W;
}

Vec LqerCost::state_target(std::size_t t) const {
    Vec target = Vec::Zero(Rp.rows() + Rv.rows());
    target.head(Rp.rows()) = reference.at(t);
    return target;
}

double LqerCost::stage_cost(std::size_t t, const Vec& x, const Vec& u) const {
    const Eigen::Index np = Rp.rows();
    const Vec dp = x.head(np) - reference[t];
    const Vec v = x.segment(np, Rv.rows());
    return 0.5 * (dp.dot(Rp * dp) + v.dot(Rv * v) + u.dot(Ru * u));
}

namespace {

LinearPolicy riccati(const ChmmModel& model, const LqerCost& cost, double lambda) {
    const Dims& d = model.dims;
    if (cost.reference.size() != d.steps) throw std::invalid_argument("cost reference length does not match model steps");
    if (cost.Rp.rows() + cost.Rv.rows() != static_cast<Eigen::Index>(d.n_x)) {
        throw std::invalid_argument("position and velocity weights do not cover the state");
    }
    const auto nx = static_cast<Eigen::Index>(d.n_x);
    const auto nu = static_cast<Eigen::Index>(d.n_u);
    const Mat W = cost.state_weight();
    const Mat I = Mat::Identity(nx, nx);

    LinearPolicy policy;
    policy.steps.resize(d.steps);
    // u_T only appears in its own stage cost, so it is zero.
    policy[d.steps - 1] = {Mat::Zero(nu, nx), Vec::Zero(nu), Mat::Zero(nu, nu)};

    // Value 1/2 x^T P x + p^T x at the last step.
    Mat P = W;
    Vec p = -W * cost.state_target(d.steps - 1);

    for (std::size_t t = d.steps - 1; t-- > 0;) {
        const TransitionStep& tr = model.transitions[t];
        Mat P_tilde = P;
        Vec p_tilde = p;
        if (lambda > 0.0) {
            const Mat noise_root = psd_sqrt(tr.Qcov);
            Eigen::LLT<Mat> check(symmetrize(I - lambda * noise_root * P * noise_root));
            if (check.info() != Eigen::Success) throw RiskBreakdown("risk-sensitivity breakdown: I - lambda Qcov P not PD", t);
            // P~ = (I - lambda P Qcov)^-1 P,  p~ = (I - lambda P Qcov)^-1 p
            Eigen::PartialPivLU<Mat> lu(I - lambda * P * tr.Qcov);
            P_tilde = symmetrize(lu.solve(P));
            p_tilde = lu.solve(p);
        }

        const Vec drift = P_tilde * tr.f + p_tilde;
        const Mat Quu = symmetrize(cost.Ru + tr.Fu.transpose() * P_tilde * tr.Fu);
        const Mat Qux = tr.Fu.transpose() * P_tilde * tr.Fx;
        const Vec Qu = tr.Fu.transpose() * drift;
        Eigen::LLT<Mat> llt(Quu);
        if (llt.info() != Eigen::Success) throw NumericalError("control Hessian not PD in Riccati recursion", t);

        PolicyStep& step = policy[t];
        step.K = -llt.solve(Qux);
        step.k = -llt.solve(Qu);
        step.S = Mat::Zero(nu, nu);

        P = symmetrize(W + tr.Fx.transpose() * P_tilde * tr.Fx + Qux.transpose() * step.K);
        p = -W * cost.state_target(t) + tr.Fx.transpose() * drift + Qux.transpose() * step.k;
    }
    return policy;
}

}  // namespace

LinearPolicy lqer_synthesize(const ChmmModel& model, const LqerCost& cost) {
    if (!(cost.lambda > 0.0)) throw std::invalid_argument("LQER requires lambda > 0");
    return riccati(model, cost, cost.lambda);
}

LinearPolicy lqr_synthesize(const ChmmModel& model, const LqerCost& cost) { return riccati(model, cost, 0.0); }

}  // namespace apcd
