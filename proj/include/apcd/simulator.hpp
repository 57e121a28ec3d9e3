#pragma once

// Planar point-mass tracking benchmark and seeded closed-loop simulation.
// All randomness is drawn up front into a NoiseBank of standard-normal
// variates, so competing policies can be evaluated on identical noise.

#include "apcd/apcd.hpp"
#include "apcd/chmm_model.hpp"
#include "apcd/lqer.hpp"
#include "apcd/smoothing.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace apcd {

struct Trajectory {
    std::vector<Vec> states;
    std::vector<Vec> controls;
};

struct MeasurementSequence {
    std::vector<Vec> z;
};

/// Standard-normal draws for one run; scaled by the model's covariances at simulation time.
struct RunNoise {
    Vec initial;
    std::vector<Vec> process;      // steps - 1
    std::vector<Vec> policy;       // steps
    std::vector<Vec> measurement;  // steps
};

struct NoiseBank {
    std::uint64_t seed = 0;
    std::vector<RunNoise> runs;

    [[nodiscard]] std::size_t size() const { return runs.size(); }
};

[[nodiscard]] NoiseBank make_noise_bank(std::uint64_t seed, const Dims& dims, std::size_t runs);

enum class ReferenceKind { Lissajous, Circle, Line };

/// Throws std::invalid_argument for an unknown name.
[[nodiscard]] ReferenceKind parse_reference_kind(const std::string& name);
[[nodiscard]] const char* to_string(ReferenceKind kind);

struct BenchmarkSpec {
    double dt = 2e-3;
    double horizon = 2.0;
    double mass = 1.0;
    double rp = 1e4;  // Rp = rp * I
    double rv = 1.0;
    double ru = 1.0;
    double lambda = 1e-4;
    double sigma0_sq = 1e-1;
    double prior_sigma_sq = 1e4;  // rho = N(0, prior_sigma_sq * I)
    ReferenceKind reference = ReferenceKind::Lissajous;
    double reference_scale = 1.0;   // overall extent in metres
    double reference_period = 2.0;  // seconds per lissajous / circle revolution
    Vec input_noise_scales = (Vec(2) << 10.0, 100.0).finished();
    Vec measurement_noise_scales = (Vec(2) << 0.1, 0.1).finished();
    std::uint64_t model_seed = 7;

    [[nodiscard]] std::size_t steps() const;
};

struct TrackingProblem {
    ChmmModel model;
    LqerCost cost;
    Mat input_noise;        // force-noise covariance
    Mat measurement_noise;  // Rcov
};

/// Variance of each unit-scale noise dimension (mean of a U(0, 1) seed).
inline constexpr double kUnitScaleVariance = 0.5;

/// D C D with D = diag(scales) and C a random correlation matrix (from
/// L L^T + 1e-3 I, L standard normal) times kUnitScaleVariance.
[[nodiscard]] Mat make_random_spd(std::size_t dim, const Vec& scales, std::mt19937_64& rng);

/// Path sampled at t * dt for t = 0..steps-1, starting at the origin.
[[nodiscard]] std::vector<Vec> generate_reference_path(ReferenceKind kind, std::size_t steps, double dt,
                                                        double scale = 1.0, double period = 2.0);

/// Planar double integrator with force input, position measurements and
/// prior policy rho = N(0, prior_sigma_sq I). Noise covariances are drawn
/// from an RNG seeded with spec.model_seed.
[[nodiscard]] TrackingProblem build_tracking_model(const BenchmarkSpec& spec);

/// Copy of `model` whose prior policy is N(0, sigma_sq I) at every step.
[[nodiscard]] ChmmModel with_isotropic_prior_policy(const ChmmModel& model, double sigma_sq);

/// Mean control law u = mean(t, x) plus optional per-step noise factors
/// (square roots of the control covariance); empty factors mean deterministic.
struct ControlLaw {
    std::function<Vec(std::size_t, const Vec&)> mean;
    std::vector<Mat> noise_factors;
};

/// The references passed to these must outlive the returned law.
[[nodiscard]] ControlLaw deterministic_law(const LinearPolicy& policy);
[[nodiscard]] ControlLaw stochastic_law(const LinearPolicy& policy);
[[nodiscard]] ControlLaw mixture_law(const MixturePolicy& mixture);

struct SimulationResult {
    Trajectory trajectory;
    MeasurementSequence measurements;
};

/// Thrown when the closed loop produces a non-finite state.
class DivergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

[[nodiscard]] SimulationResult simulate(const ChmmModel& model, const ControlLaw& law, const NoiseBank& bank,
                                        std::size_t run_index);

struct Dataset {
    std::vector<Trajectory> trajectories;
    std::vector<MeasurementSequence> measurements;
    NoiseBank bank;

    [[nodiscard]] std::size_t size() const { return measurements.size(); }
    [[nodiscard]] std::vector<Measurements> sequences(const std::vector<std::size_t>& indices) const;
};

[[nodiscard]] Dataset generate_dataset(const ChmmModel& model, const ControlLaw& demo, std::size_t runs,
                                       std::uint64_t seed, std::size_t jobs = 1);

}  // namespace apcd
