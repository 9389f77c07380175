#pragma once

// Active imitation learning loops: BC, DAgger, condition-gated DAgger (Lazy /
// Ensemble), RND-DAgger and human-gated DAgger, plus evaluation and metrics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "daggerlab/envs.hpp"
#include "daggerlab/gating.hpp"
#include "daggerlab/policy.hpp"

namespace daggerlab {

enum class Method { bc, dagger, lazy, ensemble, rnd, hg };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

struct RunConfig {
    EnvId env = EnvId::racetrack2d;
    Method method = Method::rnd;
    std::uint64_t seed = 0;

    int iterations = 5;               // K
    int samples_per_iteration = 500;  // T
    int seed_episodes = 2;
    int eval_episodes = 100;
    long max_steps_guard = 0;  // 0: max(50, 20 T)

    PolicyArch policy;
    bool goal_conditioned = true;  // only meaningful for envs with a goal
    TrainConfig bc;

    double dagger_beta0 = 0.5;

    int ensemble_size = 5;
    double chi_factor = 1.5;
    double tau_factor = 1.5;

    double lazy_beta_h_factor = 1.5;
    double lazy_divider = 2.0;
    LazyMode lazy_mode = LazyMode::hysteresis;

    int met_window = 0;  // W; also wraps the lazy/ensemble conditions when > 0

    double rnd_lambda_factor = 2.0;
    std::size_t rnd_history = 10;  // H
    RndArch rnd_arch;
    RndTrainConfig rnd_train;

    bool record_trace = true;

    bool operator==(const RunConfig&) const = default;
};

/// Throws std::invalid_argument describing the first inconsistent field.
void validate(const RunConfig& config);

long effective_guard(const RunConfig& config);

struct IterationMetrics {
    int iteration = 0;
    std::size_t dataset_size = 0;
    double task_performance = 0.0;
    std::optional<long> nswitch;  // absent for bc and dagger
    long expert_frames = 0;
    long monitoring_frames = 0;
    double expert_minutes = 0.0;
    long env_steps = 0;  // environment steps sampled during active iterations

    bool operator==(const IterationMetrics&) const = default;
};

struct SessionMetrics {
    Method method = Method::bc;
    EnvId env = EnvId::racetrack2d;
    std::uint64_t seed = 0;
    std::vector<IterationMetrics> rows;

    const IterationMetrics& final() const { return rows.back(); }
    bool operator==(const SessionMetrics&) const = default;
};

double expert_minutes(long expert_frames, const EnvSpec& spec);

/// One environment step as seen by the loop.
struct TraceRecord {
    int iteration = 0;
    std::int64_t episode = 0;
    long t = 0;  // global step counter of the run
    Vec observation;
    Action action;
    Controller controller = Controller::novice;
    double measure = 0.0;
    double threshold = 0.0;
    int w = 0;

    bool operator==(const TraceRecord&) const = default;
};

/// What an expert sees before it is asked for (or merely shown) a frame.
struct Frame {
    const EnvState* state = nullptr;
    std::span<const double> observation;
    int iteration = 0;
    std::int64_t episode = 0;
    long t = 0;
    int episode_t = 0;
    double measure = 0.0;
    double threshold = 0.0;
    Controller controller = Controller::novice;
    int w = 0;
    bool handover = false;  // control just moved novice -> expert
};

enum class ExpertKind { oracle, remote_human, human_gated };
enum class HumanSignal { takeover, handback };

/// The expert lost its connection; the current episode cannot be completed.
class ExpertUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iteration sampled too many steps without filling its block.
class LivenessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ExpertProvider {
public:
    virtual ~ExpertProvider() = default;
    virtual ExpertKind kind() const = 0;
    /// Action for this frame. Remote experts block until it arrives.
    virtual Action act(const Frame& frame) = 0;
    /// A frame the expert is not asked to act on.
    virtual void watch(const Frame&) {}
    /// Human-gated experts: takeover/handback requested for this frame.
    virtual std::optional<HumanSignal> poll(const Frame&) { return std::nullopt; }
    /// Called after ExpertUnavailable; true if a new connection took over.
    virtual bool reconnect() { return false; }
};

class OracleExpert final : public ExpertProvider {
public:
    ExpertKind kind() const override { return ExpertKind::oracle; }
    Action act(const Frame& frame) override { return oracle_action(*frame.state); }
};

class RunObserver {
public:
    virtual ~RunObserver() = default;
    virtual void on_iteration(const IterationMetrics&) {}
    virtual void on_episode_discarded(std::int64_t /*episode*/) {}
};

struct RunResult {
    PolicyNet policy;
    Ensemble ensemble;  // ensemble runs only
    std::optional<RndPair> rnd;
    Dataset dataset;
    SessionMetrics metrics;
    std::vector<TraceRecord> trace;
    std::uint64_t eval_seed = 0;
};

using Actor = std::function<Action(std::span<const double>)>;

/// Full oracle rollouts, all samples tagged expert. `history` sets the
/// stored context length.
std::vector<Sample> collect_seed_dataset(EnvId env, int episodes, std::uint64_t seed, std::size_t history = 0);

double evaluate(const Actor& actor, EnvId env, int episodes, std::uint64_t seed);
double evaluate(const PolicyNet& policy, int episodes, std::uint64_t seed);
double evaluate(const Ensemble& ensemble, int episodes, std::uint64_t seed);

Actor policy_actor(const PolicyNet& policy);
Actor ensemble_actor(const Ensemble& ensemble);

RunResult run_bc(const RunConfig& config);
RunResult run_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer = nullptr);
RunResult run_condition_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer = nullptr);
RunResult run_rnd_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer = nullptr);
RunResult run_hg_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer = nullptr);

/// Dispatches on config.method.
RunResult run(const RunConfig& config, ExpertProvider& expert, RunObserver* observer = nullptr);
/// Oracle expert.
RunResult run(const RunConfig& config);

/// Novice -> expert handovers recounted from a trace (episode starts count).
long count_switches(std::span<const TraceRecord> trace);

}  // namespace daggerlab
