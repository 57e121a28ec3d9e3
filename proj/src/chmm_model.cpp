#include "apcd/chmm_model.hpp"

#include <sstream>

namespace apcd {

Mat TransitionStep::Fxi() const {
    Mat out(Fx.rows(), Fx.cols() + Fu.cols());
    out << Fx, Fu;
    return out;
}

Mat EmissionStep::Gxi() const {
    Mat out(Gx.rows(), Gx.cols() + Gu.cols());
    out << Gx, Gu;
    return out;
}

std::string ValidationIssue::to_string() const {
    std::ostringstream os;
    os << message;
    if (step) os << ", t=" << *step;
    return os.str();
}

namespace {

class Checker {
public:
    explicit Checker(ValidationReport& report) : report_(report) {}

    void shape(const Mat& m, std::size_t rows, std::size_t cols, const char* name, std::optional<std::size_t> t) {
        if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
            std::ostringstream os;
            os << name << " has shape " << m.rows() << "x" << m.cols() << ", expected " << rows << "x" << cols;
            add(os.str(), t);
        }
    }

    void shape(const Vec& v, std::size_t rows, const char* name, std::optional<std::size_t> t) {
        if (static_cast<std::size_t>(v.size()) != rows) {
            std::ostringstream os;
            os << name << " has length " << v.size() << ", expected " << rows;
            add(os.str(), t);
        }
    }

    void finite(const Mat& m, const char* name, std::optional<std::size_t> t) {
        if (!m.allFinite()) add(std::string(name) + " not finite", t);
    }

    // Shape must already be square.
    void symmetric_psd(const Mat& m, const char* name, bool strict, std::optional<std::size_t> t) {
        if (m.rows() != m.cols()) return;
        if (!is_symmetric(m)) {
            add(std::string(name) + " not symmetric", t);
            return;
        }
        if (strict ? !is_pd(m) : !is_psd(m)) add(std::string(name) + (strict ? " not PD" : " not PSD"), t);
    }

    void add(std::string msg, std::optional<std::size_t> t) { report_.push_back({std::move(msg), t}); }

private:
    ValidationReport& report_;
};

}  // namespace

ValidationReport validate_model(const ChmmModel& model) {
    ValidationReport report;
    Checker check(report);
    const Dims& d = model.dims;

    if (d.n_x < 1 || d.n_u < 1 || d.n_z < 1) check.add("dimensions must be >= 1", std::nullopt);
    if (d.steps < 2) check.add("steps must be >= 2", std::nullopt);
    if (!(d.dt > 0.0)) check.add("dt must be > 0", std::nullopt);
    if (!report.empty()) return report;

    check.shape(model.prior.mu0, d.n_x, "mu0", std::nullopt);
    check.shape(model.prior.sigma0, d.n_x, d.n_x, "sigma0", std::nullopt);
    check.symmetric_psd(model.prior.sigma0, "sigma0", true, std::nullopt);

    if (model.transitions.size() != d.steps - 1) {
        std::ostringstream os;
        os << "transitions length mismatch: " << model.transitions.size() << ", expected " << d.steps - 1;
        check.add(os.str(), std::nullopt);
    }
    if (model.emissions.size() != d.steps) {
        std::ostringstream os;
        os << "emissions length mismatch: " << model.emissions.size() << ", expected " << d.steps;
        check.add(os.str(), std::nullopt);
    }
    if (model.prior_policy.size() != d.steps) {
        std::ostringstream os;
        os << "prior_policy length mismatch: " << model.prior_policy.size() << ", expected " << d.steps;
        check.add(os.str(), std::nullopt);
    }

    for (std::size_t t = 0; t < model.transitions.size(); ++t) {
        const auto& tr = model.transitions[t];
        check.shape(tr.Fx, d.n_x, d.n_x, "Fx", t);
        check.shape(tr.Fu, d.n_x, d.n_u, "Fu", t);
        check.shape(tr.f, d.n_x, "f", t);
        check.shape(tr.Qcov, d.n_x, d.n_x, "Qcov", t);
        check.finite(tr.Fx, "Fx", t);
        check.finite(tr.Fu, "Fu", t);
        check.symmetric_psd(tr.Qcov, "Qcov", false, t);
    }
    for (std::size_t t = 0; t < model.emissions.size(); ++t) {
        const auto& em = model.emissions[t];
        check.shape(em.Gx, d.n_z, d.n_x, "Gx", t);
        check.shape(em.Gu, d.n_z, d.n_u, "Gu", t);
        check.shape(em.g, d.n_z, "g", t);
        check.shape(em.Rcov, d.n_z, d.n_z, "Rcov", t);
        check.finite(em.Gx, "Gx", t);
        check.finite(em.Gu, "Gu", t);
        check.symmetric_psd(em.Rcov, "Rcov", true, t);
    }
    for (std::size_t t = 0; t < model.prior_policy.size(); ++t) {
        const auto& p = model.prior_policy[t];
        check.shape(p.K, d.n_u, d.n_x, "K", t);
        check.shape(p.k, d.n_u, "k", t);
        check.shape(p.S, d.n_u, d.n_u, "S", t);
        check.finite(p.K, "K", t);
        check.symmetric_psd(p.S, "S", true, t);
    }
    return report;
}

ObsQuadratic obs_loglik_quadratic(const EmissionStep& emission, const Vec& z) {
    const Mat Rinv = spd_inverse(emission.Rcov, "non-invertible emission covariance");
    const Mat G = emission.Gxi();
    return ObsQuadratic{G.transpose() * Rinv * (emission.g - z), symmetrize(G.transpose() * Rinv * G)};
}

ObsQuadratic average(const std::vector<ObsQuadratic>& terms) {
    if (terms.empty()) throw std::invalid_argument("average of zero observation quadratics");
    ObsQuadratic out{Vec::Zero(terms.front().Rxi.size()), Mat::Zero(terms.front().Rxixi.rows(), terms.front().Rxixi.cols())};
    for (const auto& term : terms) {
        out.Rxi += term.Rxi;
        out.Rxixi += term.Rxixi;
    }
    const double inv_n = 1.0 / static_cast<double>(terms.size());
    out.Rxi *= inv_n;
    out.Rxixi = symmetrize(out.Rxixi * inv_n);
    return out;
}

AffineGaussianSystem closed_loop_transition(const TransitionStep& step, const PolicyStep& pol) {
    return AffineGaussianSystem{step.Fx + step.Fu * pol.K, step.Fu * pol.k + step.f,
                                symmetrize(step.Qcov + step.Fu * pol.S * step.Fu.transpose())};
}

AffineGaussianSystem closed_loop_emission(const EmissionStep& step, const PolicyStep& pol) {
    return AffineGaussianSystem{step.Gx + step.Gu * pol.K, step.Gu * pol.k + step.g,
                                symmetrize(step.Rcov + step.Gu * pol.S * step.Gu.transpose())};
}

}  // namespace apcd
