#pragma once

// Benchmark sweep over prior-policy variance and number of demonstration
// sequences. Every candidate policy in a sweep is validated on the same
// noise bank (common random numbers).

#include "apcd/apcd.hpp"
#include "apcd/lqer.hpp"
#include "apcd/simulator.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace apcd {

/// Smallest P with prod_{p=1..P} (A - p) / (B - p) <= f_bar, where
/// A = C(pool - 1, n) and B = C(pool, n) count the n-subsets of the pool
/// without and with a given sequence.
[[nodiscard]] std::size_t required_permutations(std::size_t pool, std::size_t n, double f_bar);

/// `count` pairwise-distinct sorted n-subsets of {0, .., pool - 1}.
[[nodiscard]] std::vector<std::vector<std::size_t>> sample_subsets(std::size_t pool, std::size_t n, std::size_t count,
                                                                    std::mt19937_64& rng);

struct ObjectiveEstimate {
    double objective = 0.0;  // (1/lambda) log mean_i exp(lambda J_i)
    double quad_cost = 0.0;  // mean_i J_i
    double mean_position_error = 0.0;  // mean over runs of time-mean |p - p*|
    bool diverged = false;
    std::vector<double> run_costs;
};

/// Simulates each run with the law's mean control on the shared bank. A
/// diverging run sets `diverged` and an infinite objective.
[[nodiscard]] ObjectiveEstimate evaluate_objective(const ChmmModel& model, const LqerCost& cost, const ControlLaw& law,
                                                   const NoiseBank& bank, std::size_t runs);

struct SweepConfig {
    BenchmarkSpec bench;
    std::vector<double> sigma_sq{1e4};
    std::vector<std::size_t> n_grid{1, 2, 4, 8};
    std::size_t runs = 40;  // M
    std::size_t pool = 20;  // sequences eligible for extraction
    double f_bar = 0.01;
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
    bool record_runtime = false;  // runtime_ms stays 0 unless set, keeping outputs byte-stable

    /// steps = 251, M = 40, pool = 20, sigma^2 = 1e4, N in {1, 2, 4, 8}
    [[nodiscard]] static SweepConfig desk_scale();
    /// steps = 1001, M = 100, pool = 50
    [[nodiscard]] static SweepConfig full_scale();

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

struct SweepRow {
    double sigma_sq = 0.0;
    std::size_t n = 0;
    std::size_t perm = 0;
    std::string method;  // vanilla | natural | lqer
    double objective = 0.0;
    double quad_cost = 0.0;
    double runtime_ms = 0.0;
    bool diverged = false;

    bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

using RowSink = std::function<void(const std::vector<SweepRow>&)>;

/// Rows come back ordered by (sigma^2, N, perm, method). `sink`, when given,
/// receives each finished cell's rows as soon as it completes (serialised).
[[nodiscard]] SweepResult run_sweep(const SweepConfig& config, const RowSink& sink = {});

void write_results_csv(std::ostream& out, const std::vector<SweepRow>& rows, bool with_header = true);
[[nodiscard]] std::vector<SweepRow> read_results_csv(std::istream& in);

struct SummaryRow {
    double sigma_sq = 0.0;
    std::size_t n = 0;
    std::string method;
    std::size_t count = 0;
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    std::size_t diverged = 0;
};

[[nodiscard]] std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

/// Objective-vs-N series (median, quartiles and the LQER baseline) for one
/// (sigma^2, method) pair, as CSV text.
[[nodiscard]] std::string plot_series_csv(const std::vector<SummaryRow>& summary, double sigma_sq, const std::string& method);

[[nodiscard]] std::string format_double(double v);

}  // namespace apcd
