#include "apcd/simulator.hpp"

#include "apcd/parallel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace apcd {

namespace {

std::mt19937_64 run_rng(std::uint64_t seed, std::size_t run) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(run), static_cast<std::uint32_t>(run >> 32)};
    return std::mt19937_64(seq);
}

Vec draw(std::normal_distribution<double>& normal, std::mt19937_64& rng, std::size_t n) {
    Vec v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
    return v;
}

// Square roots of a per-step covariance sequence, recomputed only when the covariance changes.
template <typename Get>
std::vector<Mat> roots(std::size_t n, Get&& get) {
    std::vector<Mat> out;
    out.reserve(n);
    const Mat* last = nullptr;
    for (std::size_t i = 0; i < n; ++i) {
        const Mat& cov = get(i);
        if (last != nullptr && cov.rows() == last->rows() && cov.cols() == last->cols() && cov == *last) {
            out.push_back(out.back());
        } else {
            out.push_back(psd_sqrt(cov));
        }
        last = &cov;
    }
    return out;
}

}  // namespace

NoiseBank make_noise_bank(std::uint64_t seed, const Dims& dims, std::size_t runs) {
    NoiseBank bank;
    bank.seed = seed;
    bank.runs.resize(runs);
    for (std::size_t r = 0; r < runs; ++r) {
        std::mt19937_64 rng = run_rng(seed, r);
        std::normal_distribution<double> normal;
        RunNoise& run = bank.runs[r];
        run.initial = draw(normal, rng, dims.n_x);
        run.process.reserve(dims.steps - 1);
        run.policy.reserve(dims.steps);
        run.measurement.reserve(dims.steps);
        for (std::size_t t = 0; t + 1 < dims.steps; ++t) run.process.push_back(draw(normal, rng, dims.n_x));
        for (std::size_t t = 0; t < dims.steps; ++t) run.policy.push_back(draw(normal, rng, dims.n_u));
        for (std::size_t t = 0; t < dims.steps; ++t) run.measurement.push_back(draw(normal, rng, dims.n_z));
    }
    return bank;
}

ReferenceKind parse_reference_kind(const std::string& name) {
    if (name == "lissajous") return ReferenceKind::Lissajous;
    if (name == "circle") return ReferenceKind::Circle;
    if (name == "line") return ReferenceKind::Line;
    throw std::invalid_argument("unknown reference path kind '" + name + "'");
}

const char* to_string(ReferenceKind kind) {
    switch (kind) {
        case ReferenceKind::Lissajous: return "lissajous";
        case ReferenceKind::Circle: return "circle";
        case ReferenceKind::Line: return "line";
    }
    return "unknown";
}

std::size_t BenchmarkSpec::steps() const { return static_cast<std::size_t>(std::llround(horizon / dt)) + 1; }

Mat make_random_spd(std::size_t dim, const Vec& scales, std::mt19937_64& rng) {
    if (dim < 1 || static_cast<std::size_t>(scales.size()) != dim || (scales.array() <= 0.0).any()) {
        throw std::invalid_argument("make_random_spd needs dim >= 1 and one positive scale per dimension");
    }
    const auto n = static_cast<Eigen::Index>(dim);
    std::normal_distribution<double> normal;
    Mat L(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) L(i, j) = normal(rng);
    }
    const Mat C = L * L.transpose() + 1e-3 * Mat::Identity(n, n);
    const Vec inv_sd = C.diagonal().cwiseSqrt().cwiseInverse();
    const Mat correlation = inv_sd.asDiagonal() * C * inv_sd.asDiagonal();
    return symmetrize(kUnitScaleVariance * scales.asDiagonal() * correlation * scales.asDiagonal());
}

std::vector<Vec> generate_reference_path(ReferenceKind kind, std::size_t steps, double dt, double scale, double period) {
    std::vector<Vec> path;
    path.reserve(steps);
    const double horizon = dt * static_cast<double>(steps - 1);
    const double w = 2.0 * std::numbers::pi / period;
    for (std::size_t t = 0; t < steps; ++t) {
        const double time = dt * static_cast<double>(t);
        Vec p(2);
        switch (kind) {
            case ReferenceKind::Lissajous:
                p << 0.5 * scale * std::sin(w * time), 0.25 * scale * std::sin(2.0 * w * time);
                break;
            case ReferenceKind::Circle: {
                const double r = 0.5 * scale;
                p << r * std::cos(w * time) - r, r * std::sin(w * time);
                break;
            }
            case ReferenceKind::Line:
                p << scale * (horizon > 0.0 ? time / horizon : 0.0), 0.0;
                break;
        }
        path.push_back(std::move(p));
    }
    return path;
}

TrackingProblem build_tracking_model(const BenchmarkSpec& spec) {
    if (!(spec.dt > 0.0) || !(spec.horizon > 0.0) || !(spec.mass > 0.0) || !(spec.lambda > 0.0)) {
        throw std::invalid_argument("benchmark needs positive dt, horizon, mass and lambda");
    }
    const std::size_t steps = spec.steps();
    if (steps < 2) throw std::invalid_argument("benchmark horizon shorter than one step");

    std::mt19937_64 rng(spec.model_seed);
    TrackingProblem out;
    out.input_noise = make_random_spd(2, spec.input_noise_scales, rng);
    out.measurement_noise = make_random_spd(2, spec.measurement_noise_scales, rng);

    const Mat I2 = Mat::Identity(2, 2);
    const Mat Z2 = Mat::Zero(2, 2);
    const double dt = spec.dt;

    TransitionStep tr;
    tr.Fx.resize(4, 4);
    tr.Fx << I2, dt * I2, Z2, I2;
    tr.Fu.resize(4, 2);
    tr.Fu << Z2, (dt / spec.mass) * I2;
    tr.f = Vec::Zero(4);
    // Force perturbations enter through the input channel; the position block
    // is regularised so that every covariance stays strictly PD.
    tr.Qcov = symmetrize(tr.Fu * out.input_noise * tr.Fu.transpose());
    tr.Qcov.topLeftCorner(2, 2) += 1e-12 * I2;

    EmissionStep em;
    em.Gx.resize(2, 4);
    em.Gx << I2, Z2;
    em.Gu = Mat::Zero(2, 2);
    em.g = Vec::Zero(2);
    em.Rcov = out.measurement_noise;

    ChmmModel& m = out.model;
    m.dims = Dims{4, 2, 2, steps, dt};
    m.prior = GaussianPrior{Vec::Zero(4), spec.sigma0_sq * Mat::Identity(4, 4)};
    m.transitions = broadcast(tr, steps - 1);
    m.emissions = broadcast(em, steps);
    m.prior_policy.steps = broadcast(PolicyStep{Mat::Zero(2, 4), Vec::Zero(2), spec.prior_sigma_sq * I2}, steps);

    out.cost.Rp = spec.rp * I2;
    out.cost.Rv = spec.rv * I2;
    out.cost.Ru = spec.ru * I2;
    out.cost.lambda = spec.lambda;
    out.cost.reference = generate_reference_path(spec.reference, steps, dt, spec.reference_scale, spec.reference_period);
    return out;
}

ChmmModel with_isotropic_prior_policy(const ChmmModel& model, double sigma_sq) {
    if (!(sigma_sq > 0.0)) throw std::invalid_argument("prior policy variance must be positive");
    ChmmModel out = model;
    const auto nu = static_cast<Eigen::Index>(model.dims.n_u);
    const auto nx = static_cast<Eigen::Index>(model.dims.n_x);
    out.prior_policy.steps =
        broadcast(PolicyStep{Mat::Zero(nu, nx), Vec::Zero(nu), sigma_sq * Mat::Identity(nu, nu)}, model.dims.steps);
    return out;
}

ControlLaw deterministic_law(const LinearPolicy& policy) {
    return {[&policy](std::size_t t, const Vec& x) { return policy.mean_control(t, x); }, {}};
}

ControlLaw stochastic_law(const LinearPolicy& policy) {
    ControlLaw law = deterministic_law(policy);
    law.noise_factors = roots(policy.size(), [&](std::size_t t) -> const Mat& { return policy[t].S; });
    return law;
}

ControlLaw mixture_law(const MixturePolicy& mixture) {
    return {[&mixture](std::size_t t, const Vec& x) { return mixture_mean_control(mixture, t, x); }, {}};
}

SimulationResult simulate(const ChmmModel& model, const ControlLaw& law, const NoiseBank& bank, std::size_t run_index) {
    if (run_index >= bank.size()) throw std::out_of_range("noise bank does not cover run index");
    const Dims& d = model.dims;
    const RunNoise& noise = bank.runs[run_index];
    if (noise.measurement.size() != d.steps || static_cast<std::size_t>(noise.initial.size()) != d.n_x) {
        throw std::invalid_argument("noise bank shape does not match model");
    }

    const auto q_roots = roots(d.steps - 1, [&](std::size_t t) -> const Mat& { return model.transitions[t].Qcov; });
    const auto r_roots = roots(d.steps, [&](std::size_t t) -> const Mat& { return model.emissions[t].Rcov; });

    SimulationResult out;
    auto& states = out.trajectory.states;
    auto& controls = out.trajectory.controls;
    auto& z = out.measurements.z;
    states.reserve(d.steps);
    controls.reserve(d.steps);
    z.reserve(d.steps);

    Vec x = model.prior.mu0 + psd_sqrt(model.prior.sigma0) * noise.initial;
    for (std::size_t t = 0; t < d.steps; ++t) {
        Vec u = law.mean(t, x);
        if (!law.noise_factors.empty()) u += law.noise_factors[t] * noise.policy[t];
        const EmissionStep& em = model.emissions[t];
        z.push_back(em.Gx * x + em.Gu * u + em.g + r_roots[t] * noise.measurement[t]);
        states.push_back(x);
        controls.push_back(u);
        if (t + 1 < d.steps) {
            const TransitionStep& tr = model.transitions[t];
            x = tr.Fx * x + tr.Fu * u + tr.f + q_roots[t] * noise.process[t];
            if (!x.allFinite()) throw DivergenceError("closed loop diverged: non-finite state", t + 1);
        }
    }
    return out;
}

std::vector<Measurements> Dataset::sequences(const std::vector<std::size_t>& indices) const {
    std::vector<Measurements> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(measurements.at(i).z);
    return out;
}

Dataset generate_dataset(const ChmmModel& model, const ControlLaw& demo, std::size_t runs, std::uint64_t seed,
                         std::size_t jobs) {
    if (runs < 1) throw std::invalid_argument("dataset needs at least one run");
    Dataset out;
    out.bank = make_noise_bank(seed, model.dims, runs);
    out.trajectories.resize(runs);
    out.measurements.resize(runs);
    parallel_for(runs, jobs, [&](std::size_t r) {
        SimulationResult sim = simulate(model, demo, out.bank, r);
        out.trajectories[r] = std::move(sim.trajectory);
        out.measurements[r] = std::move(sim.measurements);
    });
    return out;
}

}  // namespace apcd
