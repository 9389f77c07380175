#pragma once

// File formats: metrics / summary / trace CSVs and policy checkpoints.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daggerlab/orchestrator.hpp"

namespace daggerlab {

/// Shortest text that parses back to the same double.
std::string format_double(double value);

const std::vector<std::string>& metrics_columns();

/// One row per iteration; nswitch is left empty when the method has none.
void write_metrics_csv(std::ostream& out, std::span<const SessionMetrics> runs, bool header = true);
void write_metrics_csv(const std::filesystem::path& path, std::span<const SessionMetrics> runs);
std::string metrics_csv(const SessionMetrics& run);

std::vector<SessionMetrics> read_metrics_csv(std::istream& in);
std::vector<SessionMetrics> read_metrics_csv(const std::filesystem::path& path);

/// Final-iteration statistics of a group of runs.
struct SummaryRow {
    std::string group;  ///< sweep label, may be empty
    Method method = Method::bc;
    EnvId env = EnvId::racetrack2d;
    std::size_t runs = 0;
    double performance_mean = 0.0, performance_std = 0.0;
    std::optional<double> nswitch_mean, nswitch_std;
    double expert_frames_mean = 0.0, expert_frames_std = 0.0;
    double monitoring_frames_mean = 0.0, monitoring_frames_std = 0.0;
    double expert_minutes_mean = 0.0, expert_minutes_std = 0.0;
};

/// Groups by (group label, method, env) in first-seen order; std is the
/// sample standard deviation (0 for a single run).
std::vector<SummaryRow> summarize(std::span<const SessionMetrics> runs, std::span<const std::string> groups = {});
void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows);

void write_trace_csv(std::ostream& out, std::string_view run_id, std::span<const TraceRecord> trace,
                     bool header = true);
std::string trace_csv(std::string_view run_id, std::span<const TraceRecord> trace);

struct TraceRow {
    std::string run_id;
    TraceRecord record;
};

std::vector<TraceRow> read_trace_csv(std::istream& in);

/// Trained policy (or ensemble) with what is needed to re-score it.
struct Checkpoint {
    RunConfig config;
    std::vector<PolicyNet> members;  ///< one entry unless the run trained an ensemble
    std::optional<RndPair> rnd;
    std::uint64_t eval_seed = 0;
    int eval_episodes = 0;
    double task_performance = 0.0;
};

Checkpoint make_checkpoint(const RunConfig& config, const RunResult& result);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Re-runs the evaluation recorded in the checkpoint.
double evaluate_checkpoint(const Checkpoint& checkpoint);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace daggerlab
