#include "daggerlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace daggerlab {

namespace {

double activate(Activation a, double x) {
    return a == Activation::tanh ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}

// Derivative expressed through the activation output, which is what the
// backward pass keeps around.
double activate_grad_from_output(Activation a, double y) {
    return a == Activation::tanh ? 1.0 - y * y : (y > 0.0 ? 1.0 : 0.0);
}

void check_input(const NetParams& p, std::size_t n) {
    if (n != p.input_width()) {
        throw std::invalid_argument("net: input length " + std::to_string(n) + " does not match input width " +
                                    std::to_string(p.input_width()));
    }
}

// Per-sample activations, reused across the batch to avoid reallocation.
struct Workspace {
    std::vector<Vec> act;    // act[0] = input, act[l+1] = output of layer l
    std::vector<Vec> delta;  // gradient w.r.t. pre-activation of layer l

    explicit Workspace(const NetParams& p) {
        act.resize(p.layers.size() + 1);
        delta.resize(p.layers.size());
        act[0].resize(p.input_width());
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            act[l + 1].resize(p.layers[l].out);
            delta[l].resize(p.layers[l].out);
        }
    }
};

void forward_into(const NetParams& p, std::span<const double> input, Workspace& ws) {
    std::copy(input.begin(), input.end(), ws.act[0].begin());
    const std::size_t last = p.layers.size() - 1;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const DenseLayer& layer = p.layers[l];
        const Vec& x = ws.act[l];
        Vec& y = ws.act[l + 1];
        std::copy(layer.bias.begin(), layer.bias.end(), y.begin());
        for (std::size_t i = 0; i < layer.in; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            const double* row = &layer.weights[i * layer.out];
            for (std::size_t j = 0; j < layer.out; ++j) y[j] += xi * row[j];
        }
        if (l != last) {
            for (double& v : y) v = activate(p.activation, v);
        }
    }
}

// Accumulates dLoss/dparams for one sample given dLoss/dOutput already placed
// in ws.delta.back().
void backward_accumulate(const NetParams& p, Workspace& ws, NetParams& grads) {
    for (std::size_t l = p.layers.size(); l-- > 0;) {
        const DenseLayer& layer = p.layers[l];
        DenseLayer& g = grads.layers[l];
        const Vec& x = ws.act[l];
        const Vec& d = ws.delta[l];
        for (std::size_t j = 0; j < layer.out; ++j) g.bias[j] += d[j];
        for (std::size_t i = 0; i < layer.in; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            double* grow = &g.weights[i * layer.out];
            for (std::size_t j = 0; j < layer.out; ++j) grow[j] += xi * d[j];
        }
        if (l == 0) break;
        Vec& prev = ws.delta[l - 1];
        for (std::size_t i = 0; i < layer.in; ++i) {
            const double* row = &layer.weights[i * layer.out];
            double s = 0.0;
            for (std::size_t j = 0; j < layer.out; ++j) s += row[j] * d[j];
            prev[i] = s * activate_grad_from_output(p.activation, x[i]);
        }
    }
}

void scale(NetParams& g, double factor) {
    for (DenseLayer& layer : g.layers) {
        for (double& v : layer.weights) v *= factor;
        for (double& v : layer.bias) v *= factor;
    }
}

void check_same_shape(const NetParams& a, const NetParams& b) {
    if (a.widths != b.widths) throw std::invalid_argument("net: parameter shapes do not match");
}

double log_sum_exp(std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::size_t NetParams::parameter_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

NetParams zeros_like(const NetParams& like) {
    NetParams z;
    z.widths = like.widths;
    z.activation = like.activation;
    z.layers.reserve(like.layers.size());
    for (const DenseLayer& l : like.layers) {
        z.layers.push_back(DenseLayer{l.in, l.out, Vec(l.weights.size(), 0.0), Vec(l.bias.size(), 0.0)});
    }
    return z;
}

NetParams net_init(std::span<const std::size_t> widths, Activation activation, std::uint64_t seed) {
    if (widths.size() < 2) throw std::invalid_argument("net_init: need at least input and output widths");
    if (std::any_of(widths.begin(), widths.end(), [](std::size_t w) { return w == 0; })) {
        throw std::invalid_argument("net_init: layer widths must be positive");
    }
    NetParams p;
    p.widths.assign(widths.begin(), widths.end());
    p.activation = activation;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        DenseLayer layer{widths[l], widths[l + 1], Vec(widths[l] * widths[l + 1]), Vec(widths[l + 1], 0.0)};
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (double& w : layer.weights) w = rng.uniform(-bound, bound);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

Vec net_forward(const NetParams& params, std::span<const double> input) {
    check_input(params, input.size());
    Workspace ws(params);
    forward_into(params, input, ws);
    return ws.act.back();
}

GradResult net_grad(const NetParams& params, std::span<const Vec> inputs, std::span<const Vec> targets) {
    if (inputs.empty()) throw std::invalid_argument("net_grad: empty batch");
    if (inputs.size() != targets.size()) throw std::invalid_argument("net_grad: inputs/targets size mismatch");
    GradResult r{zeros_like(params), 0.0};
    Workspace ws(params);
    const std::size_t out = params.output_width();
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        check_input(params, inputs[n].size());
        if (targets[n].size() != out) throw std::invalid_argument("net_grad: target length mismatch");
        forward_into(params, inputs[n], ws);
        const Vec& y = ws.act.back();
        Vec& d = ws.delta.back();
        for (std::size_t j = 0; j < out; ++j) {
            const double diff = y[j] - targets[n][j];
            r.loss += diff * diff;
            d[j] = 2.0 * diff;
        }
        backward_accumulate(params, ws, r.gradients);
    }
    const double inv = 1.0 / static_cast<double>(inputs.size());
    scale(r.gradients, inv);
    r.loss *= inv;
    return r;
}

GradResult net_grad(const NetParams& params, std::span<const Vec> inputs, std::span<const int> classes) {
    if (inputs.empty()) throw std::invalid_argument("net_grad: empty batch");
    if (inputs.size() != classes.size()) throw std::invalid_argument("net_grad: inputs/targets size mismatch");
    GradResult r{zeros_like(params), 0.0};
    Workspace ws(params);
    const std::size_t out = params.output_width();
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        check_input(params, inputs[n].size());
        const int c = classes[n];
        if (c < 0 || static_cast<std::size_t>(c) >= out) {
            throw std::invalid_argument("net_grad: class index " + std::to_string(c) + " out of range");
        }
        forward_into(params, inputs[n], ws);
        const Vec& y = ws.act.back();
        const double lse = log_sum_exp(y);
        r.loss += lse - y[c];
        Vec& d = ws.delta.back();
        for (std::size_t j = 0; j < out; ++j) d[j] = std::exp(y[j] - lse) - (static_cast<int>(j) == c ? 1.0 : 0.0);
        backward_accumulate(params, ws, r.gradients);
    }
    const double inv = 1.0 / static_cast<double>(inputs.size());
    scale(r.gradients, inv);
    r.loss *= inv;
    return r;
}

double mse_loss(const NetParams& params, std::span<const Vec> inputs, std::span<const Vec> targets) {
    if (inputs.empty() || inputs.size() != targets.size()) throw std::invalid_argument("mse_loss: bad batch");
    Workspace ws(params);
    double loss = 0.0;
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        check_input(params, inputs[n].size());
        forward_into(params, inputs[n], ws);
        const Vec& y = ws.act.back();
        for (std::size_t j = 0; j < y.size(); ++j) loss += (y[j] - targets[n][j]) * (y[j] - targets[n][j]);
    }
    return loss / static_cast<double>(inputs.size());
}

double cross_entropy_loss(const NetParams& params, std::span<const Vec> inputs, std::span<const int> classes) {
    if (inputs.empty() || inputs.size() != classes.size()) throw std::invalid_argument("cross_entropy_loss: bad batch");
    Workspace ws(params);
    double loss = 0.0;
    for (std::size_t n = 0; n < inputs.size(); ++n) {
        check_input(params, inputs[n].size());
        forward_into(params, inputs[n], ws);
        const Vec& y = ws.act.back();
        loss += log_sum_exp(y) - y.at(static_cast<std::size_t>(classes[n]));
    }
    return loss / static_cast<double>(inputs.size());
}

Vec softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    Vec p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
    return p;
}

OptState make_opt_state(const NetParams& params, const OptConfig& config) {
    OptState s;
    s.config = config;
    if (config.algorithm == Optimizer::adam) {
        s.first_moment = zeros_like(params);
        s.second_moment = zeros_like(params);
    }
    return s;
}

void opt_step(NetParams& params, const NetParams& gradients, OptState& state) {
    check_same_shape(params, gradients);
    const OptConfig& c = state.config;
    ++state.step;
    if (c.algorithm == Optimizer::sgd) {
        for (std::size_t l = 0; l < params.layers.size(); ++l) {
            DenseLayer& p = params.layers[l];
            const DenseLayer& g = gradients.layers[l];
            for (std::size_t k = 0; k < p.weights.size(); ++k) p.weights[k] -= c.lr * g.weights[k];
            for (std::size_t k = 0; k < p.bias.size(); ++k) p.bias[k] -= c.lr * g.bias[k];
        }
        return;
    }
    check_same_shape(params, state.first_moment);
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    auto update = [&](Vec& p, const Vec& g, Vec& m, Vec& v) {
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            p[k] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update(params.layers[l].weights, gradients.layers[l].weights, state.first_moment.layers[l].weights,
               state.second_moment.layers[l].weights);
        update(params.layers[l].bias, gradients.layers[l].bias, state.first_moment.layers[l].bias,
               state.second_moment.layers[l].bias);
    }
}

bool all_finite(const NetParams& params) {
    for (const DenseLayer& l : params.layers) {
        for (double v : l.weights) if (!std::isfinite(v)) return false;
        for (double v : l.bias) if (!std::isfinite(v)) return false;
    }
    return true;
}

nlohmann::json net_to_json(const NetParams& params) {
    nlohmann::json layers = nlohmann::json::array();
    for (const DenseLayer& l : params.layers) {
        layers.push_back({{"in", l.in}, {"out", l.out}, {"weights", l.weights}, {"bias", l.bias}});
    }
    return {{"format", "daggerlab-net/1"},
            {"widths", params.widths},
            {"activation", to_string(params.activation)},
            {"layers", std::move(layers)}};
}

NetParams net_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "daggerlab-net/1") throw std::runtime_error("not a daggerlab-net/1 record");
    NetParams p;
    p.widths = j.at("widths").get<std::vector<std::size_t>>();
    p.activation = parse_activation(j.at("activation").get<std::string>());
    const auto& layers = j.at("layers");
    if (p.widths.size() < 2 || layers.size() + 1 != p.widths.size()) {
        throw std::runtime_error("net record: layer count does not match widths");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        DenseLayer layer{p.widths[l], p.widths[l + 1], layers[l].at("weights").get<Vec>(),
                         layers[l].at("bias").get<Vec>()};
        if (layer.weights.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
            throw std::runtime_error("net record: parameter array has wrong length in layer " + std::to_string(l));
        }
        p.layers.push_back(std::move(layer));
    }
    return p;
}

void save_net(std::ostream& out, const NetParams& params) { out << net_to_json(params).dump() << '\n'; }

NetParams load_net(std::istream& in) { return net_from_json(nlohmann::json::parse(in)); }

}  // namespace daggerlab
