#pragma once

// Seeded runs and sweeps with their on-disk outputs.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "daggerlab/config.hpp"
#include "daggerlab/io.hpp"

namespace daggerlab {

/// "<method>_<env>_s<seed>", prefixed by the sanitized sweep label if any.
std::string run_id(const RunConfig& config, const std::string& label = {});

/// Writes <id>.metrics.csv, <id>.trace.csv (if recorded), <id>.checkpoint.json
/// and <id>.config.toml into `dir`.
void write_run_outputs(const std::filesystem::path& dir, const std::string& id, const RunConfig& config,
                       const RunResult& result);

struct SweepOutcome {
    SweepPoint point;
    std::string id;
    std::optional<SessionMetrics> metrics;  ///< empty when the run failed
    std::string error;
};

struct SweepOptions {
    int workers = 1;
    std::filesystem::path out_dir;  ///< empty: nothing is written
    bool write_run_files = true;
};

/// Runs every point; a failing run yields an outcome with `error` set rather
/// than stopping the sweep. Outcomes are in enumeration order regardless of
/// worker count. Writes index.csv, metrics.csv and summary.csv to out_dir.
std::vector<SweepOutcome> run_sweep(const SweepSpec& spec, const SweepOptions& options);

}  // namespace daggerlab
