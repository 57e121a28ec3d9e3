#pragma once

// File formats:
//   chmm-model/v1   JSON model, row-major matrices, optional "broadcast" steps
//   apcd-policy/v1  JSON policy, linear or mixture
//   dataset dir     model.json, cost.json, demo-policy.json, bank-seed.txt,
//                   run_<i>_states.csv, run_<i>_measurements.csv

#include "apcd/apcd.hpp"
#include "apcd/chmm_model.hpp"
#include "apcd/lqer.hpp"
#include "apcd/simulator.hpp"

#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace apcd {

using Json = nlohmann::json;

inline constexpr const char* kModelSchema = "chmm-model/v1";
inline constexpr const char* kPolicySchema = "apcd-policy/v1";

/// Malformed input file; the message names the offending field path.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[nodiscard]] Json matrix_to_json(const Mat& m);
[[nodiscard]] Mat matrix_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols, const std::string& path);
[[nodiscard]] Json vector_to_json(const Vec& v);
[[nodiscard]] Vec vector_from_json(const Json& j, Eigen::Index size, const std::string& path);

/// Steps that are all identical are written once with "broadcast": true.
[[nodiscard]] Json model_to_json(const ChmmModel& model);
/// Validates shapes against the dims block and runs validate_model.
[[nodiscard]] ChmmModel model_from_json(const Json& j);

/// A stored policy: one linear component (natural APCD, LQER) or a mixture.
struct StoredPolicy {
    std::string method;  // "vanilla", "natural", "lqer", ...
    std::vector<LinearPolicy> components;
    std::vector<std::vector<GaussianMarginal>> weight_marginals;  // empty unless mixture

    [[nodiscard]] bool is_mixture() const { return !weight_marginals.empty(); }
};

[[nodiscard]] Json policy_to_json(const StoredPolicy& policy);
[[nodiscard]] StoredPolicy policy_from_json(const Json& j);

[[nodiscard]] Json cost_to_json(const LqerCost& cost);
[[nodiscard]] LqerCost cost_from_json(const Json& j);

[[nodiscard]] Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

struct DatasetFiles {
    ChmmModel model;
    LqerCost cost;
    LinearPolicy demo_policy;
    std::uint64_t bank_seed = 0;
    std::vector<Trajectory> trajectories;
    std::vector<MeasurementSequence> measurements;
};

void write_dataset(const std::filesystem::path& dir, const ChmmModel& model, const LqerCost& cost,
                   const LinearPolicy& demo_policy, const Dataset& dataset);
[[nodiscard]] DatasetFiles read_dataset(const std::filesystem::path& dir);

}  // namespace apcd
