#pragma once

// Small dense networks: init, forward, reverse-mode gradients, SGD/Adam and
// a JSON checkpoint format. Everything is double precision.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "daggerlab/rng.hpp"

namespace daggerlab {

enum class Activation { tanh, relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// One affine map. `weights` is row-major with shape (in x out).
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    Vec weights;
    Vec bias;

    double& w(std::size_t i, std::size_t j) { return weights[i * out + j]; }
    double w(std::size_t i, std::size_t j) const { return weights[i * out + j]; }

    bool operator==(const DenseLayer&) const = default;
};

/// Parameters of an MLP. The activation applies to hidden layers only; the
/// output layer is affine. Two widths (no hidden layer) is a single affine map.
struct NetParams {
    std::vector<std::size_t> widths;
    Activation activation = Activation::tanh;
    std::vector<DenseLayer> layers;

    std::size_t input_width() const { return widths.front(); }
    std::size_t output_width() const { return widths.back(); }
    std::size_t parameter_count() const;

    bool operator==(const NetParams&) const = default;
};

/// Zero-valued parameters with the same shapes as `like`.
NetParams zeros_like(const NetParams& like);

/// Fan-in scaled uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
NetParams net_init(std::span<const std::size_t> widths, Activation activation, std::uint64_t seed);

Vec net_forward(const NetParams& params, std::span<const double> input);

struct GradResult {
    NetParams gradients;
    double loss = 0.0;  ///< mean batch loss at the given parameters
};

/// Mean over the batch of sum_j (y_j - target_j)^2.
GradResult net_grad(const NetParams& params, std::span<const Vec> inputs, std::span<const Vec> targets);

/// Mean over the batch of -log softmax(y)[class].
GradResult net_grad(const NetParams& params, std::span<const Vec> inputs, std::span<const int> classes);

double mse_loss(const NetParams& params, std::span<const Vec> inputs, std::span<const Vec> targets);
double cross_entropy_loss(const NetParams& params, std::span<const Vec> inputs, std::span<const int> classes);

Vec softmax(std::span<const double> logits);

enum class Optimizer { sgd, adam };

struct OptConfig {
    Optimizer algorithm = Optimizer::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptState {
    OptConfig config;
    std::uint64_t step = 0;
    NetParams first_moment;   // adam only
    NetParams second_moment;  // adam only
};

OptState make_opt_state(const NetParams& params, const OptConfig& config);

void opt_step(NetParams& params, const NetParams& gradients, OptState& state);

bool all_finite(const NetParams& params);

nlohmann::json net_to_json(const NetParams& params);
NetParams net_from_json(const nlohmann::json& j);

void save_net(std::ostream& out, const NetParams& params);
NetParams load_net(std::istream& in);

}  // namespace daggerlab
