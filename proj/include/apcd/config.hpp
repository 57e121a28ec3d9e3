#pragma once

// Run configuration file (JSON). Every field is optional; absent fields keep
// the defaults of the chosen scale. Unknown fields are rejected.
//
//   {
//     "benchmark": { "dt": 0.002, "horizon": 0.5, "lambda": 1e-4, "reference": "lissajous", ... },
//     "sweep":     { "sigma_sq": [1e4], "n_grid": [1, 2, 4, 8], "runs": 40, "pool": 20,
//                    "f_bar": 0.01, "seed": 1 }
//   }

#include "apcd/harness.hpp"
#include "apcd/io.hpp"

#include <string>

namespace apcd {

[[nodiscard]] Json benchmark_to_json(const BenchmarkSpec& spec);
/// Overlays the fields present in `j` onto `base`.
[[nodiscard]] BenchmarkSpec benchmark_from_json(const Json& j, BenchmarkSpec base, const std::string& path = "benchmark");

[[nodiscard]] Json sweep_config_to_json(const SweepConfig& config);
[[nodiscard]] SweepConfig sweep_config_from_json(const Json& j, SweepConfig base);

/// Parses config text; syntax errors report line and column.
[[nodiscard]] Json parse_config_text(const std::string& text, const std::string& source);
[[nodiscard]] Json read_config_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of the canonical (sorted-key, compact) dump.
[[nodiscard]] std::string config_digest(const Json& config);
[[nodiscard]] std::string sha256_hex(const std::string& data);

}  // namespace apcd
