#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "daggerlab/envs.hpp"
#include "daggerlab/nn.hpp"

namespace daggerlab {

enum class Controller { novice, expert };

std::string_view to_string(Controller c);
Controller parse_controller(std::string_view name);

/// One labelled state. `context` is the observation stacked with its history
/// (see ContextBuffer); it equals `observation` when no history is kept.
struct Sample {
    Vec observation;
    Vec context;
    Action action;
    Controller tag = Controller::expert;
    std::int64_t episode = 0;
    int t = 0;
    int iteration = 0;

    bool operator==(const Sample&) const = default;
};

/// Append-only aggregate of per-iteration blocks. Block 0 is the seed set.
class Dataset {
public:
    void push_block(std::vector<Sample> block);

    const std::vector<std::vector<Sample>>& blocks() const { return blocks_; }
    std::size_t size() const;
    std::size_t expert_count() const;
    bool empty() const { return size() == 0; }

    /// Expert-tagged samples only, in block order.
    std::vector<const Sample*> training_samples() const;

    bool operator==(const Dataset&) const = default;

private:
    std::vector<std::vector<Sample>> blocks_;
};

enum class HeadKind { discrete_logits, continuous_mean };

struct PolicyArch {
    std::vector<std::size_t> hidden{64, 64};
    Activation activation = Activation::tanh;

    bool operator==(const PolicyArch&) const = default;
};

struct PolicyNet {
    NetParams params;
    HeadKind head = HeadKind::discrete_logits;
    EnvId env{};
    std::size_t observation_dim = 0;
    bool goal_conditioned = false;
    Vec input_mean;  ///< z-score statistics of the training observations
    Vec input_std;

    bool operator==(const PolicyNet&) const = default;
};

/// Untrained policy for `env`. Goal-blind policies see the goal slice zeroed.
PolicyNet make_policy(EnvId env, const PolicyArch& arch, bool goal_conditioned, std::uint64_t seed);

/// Network input for an observation: standardized, goal slice masked when goal-blind.
Vec policy_input(const PolicyNet& policy, std::span<const double> observation);

Vec policy_output(const PolicyNet& policy, std::span<const double> observation);

struct TrainConfig {
    int epochs = 50;
    std::size_t batch_size = 64;
    double lr = 1e-3;

    bool operator==(const TrainConfig&) const = default;
};

struct TrainLog {
    double initial_loss = 0.0;
    std::vector<double> epoch_losses;  ///< full-dataset loss after each epoch
};

/// Behavioural cloning from a fresh seeded initialisation on every expert-tagged
/// sample of `data`. Discrete heads use softmax cross-entropy, continuous mse.
PolicyNet bc_train(const Dataset& data, const PolicyNet& templ, const TrainConfig& config, std::uint64_t seed,
                   TrainLog* log = nullptr);

double bc_loss(const PolicyNet& policy, const Dataset& data);

enum class ActMode { deterministic, stochastic };

/// Lowest index wins argmax ties. Continuous outputs are clipped to the action bounds.
Action policy_act(const PolicyNet& policy, std::span<const double> observation,
                  ActMode mode = ActMode::deterministic, Rng* rng = nullptr);

std::size_t argmax(std::span<const double> v);

using Ensemble = std::vector<PolicyNet>;

/// Members differ only in their init/shuffle seed (base_seed + k).
Ensemble ensemble_train(const Dataset& data, std::size_t n, const PolicyNet& templ, const TrainConfig& config,
                        std::uint64_t base_seed);

struct EnsembleStats {
    Vec mean;
    double doubt = 0.0;  ///< sum over output dims of the population variance across members
};

EnsembleStats ensemble_mean_and_doubt(const Ensemble& ensemble, std::span<const double> observation);

/// Action for a raw head output (argmax of logits or clipped mean).
Action action_from_output(EnvId env, std::span<const double> output);

/// ||expert - novice||^2, comparing a one-hot expert action to softmax(logits)
/// for discrete heads and the raw action vectors otherwise.
double action_discrepancy(EnvId env, const Action& expert, std::span<const double> novice_output);

nlohmann::json policy_to_json(const PolicyNet& policy);
PolicyNet policy_from_json(const nlohmann::json& j);

}  // namespace daggerlab
