#pragma once

// Intervention decisions: the RND out-of-distribution measure, history
// context, threshold calibration, the DAgger mixing schedule, the Lazy and
// Ensemble conditions and the minimal-expert-time handover state machine.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "daggerlab/nn.hpp"
#include "daggerlab/policy.hpp"

namespace daggerlab {

/// Last H observations of the current episode.
class ContextBuffer {
public:
    explicit ContextBuffer(std::size_t history = 0) : history_(history) {}

    std::size_t history() const { return history_; }
    void reset() { past_.clear(); }
    void push(std::span<const double> observation);

    /// [obs_{t-H}, ..., obs_{t-1}, obs_t]; slots before the episode start
    /// repeat the earliest available observation.
    Vec context(std::span<const double> observation) const;

private:
    std::size_t history_;
    std::deque<Vec> past_;
};

Vec context_vector(const ContextBuffer& buffer, std::span<const double> observation);

struct RndArch {
    std::size_t hidden = 32;
    std::size_t extra_layers = 0;  ///< hidden layers beyond the first
    std::size_t output = 16;
    Activation activation = Activation::relu;

    bool operator==(const RndArch&) const = default;
};

struct RndPair {
    NetParams target;     ///< frozen
    NetParams predictor;  ///< trained to imitate the target
    std::size_t history = 0;
    std::size_t observation_dim = 0;
    Vec input_mean;
    Vec input_std;

    std::size_t input_dim() const { return observation_dim * (history + 1); }

    bool operator==(const RndPair&) const = default;
};

RndPair make_rnd_pair(std::size_t observation_dim, std::size_t history, const RndArch& arch, std::uint64_t seed);

/// Squared distance between target and predictor outputs on the normalized input.
double rnd_measure(const RndPair& pair, std::span<const double> context);

struct RndTrainConfig {
    int epochs = 30;
    std::size_t batch_size = 64;
    double lr = 1e-3;

    bool operator==(const RndTrainConfig&) const = default;
};

/// Recomputes normalization from `contexts`, then fits the predictor (warm start).
void rnd_train(RndPair& pair, std::span<const Vec> contexts, const RndTrainConfig& config, std::uint64_t seed);
/// Trains on the stored contexts of every expert-tagged sample.
void rnd_train(RndPair& pair, const Dataset& data, const RndTrainConfig& config, std::uint64_t seed);

std::vector<Vec> dataset_contexts(const Dataset& data);

double calibrate_threshold(std::span<const double> measures, double factor);

double lazy_thresholds(double beta_h, double divider);

enum class LazyMode { hysteresis, literal };

std::string_view to_string(LazyMode m);
LazyMode parse_lazy_mode(std::string_view name);

bool lazy_condition(double measure, double beta_h, double beta_r, Controller current, LazyMode mode);

bool ensemble_condition(double doubt, double discrepancy, double chi, double tau);

/// beta_0^i; iteration 0 is fully expert-driven.
double dagger_beta(double beta0, int iteration);

struct GateState {
    Controller controller = Controller::novice;
    int w = 0;           ///< consecutive sub-threshold steps since the last exceedance
    long nswitch = 0;    ///< novice -> expert handovers
    double threshold = 0.0;
    int met_window = 0;  ///< W
    double previous_measure = 0.0;
};

/// Minimal-expert-time rule on a precomputed exceedance flag: the expert keeps
/// control until W consecutive non-exceeding steps follow the last exceedance.
Controller dwell_step(GateState& state, bool exceeds);

/// One step of the RND-DAgger handover rule for measure m_t.
Controller gate_step(GateState& state, double measure);

/// Episode boundary: control returns to the novice and the dwell counter
/// clears; nswitch keeps accumulating.
void gate_begin_episode(GateState& state);

nlohmann::json rnd_to_json(const RndPair& pair);
RndPair rnd_from_json(const nlohmann::json& j);

}  // namespace daggerlab
