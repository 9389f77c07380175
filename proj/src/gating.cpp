#include "daggerlab/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace daggerlab {

void ContextBuffer::push(std::span<const double> observation) {
    if (history_ == 0) return;
    past_.emplace_back(observation.begin(), observation.end());
    while (past_.size() > history_) past_.pop_front();
}

Vec ContextBuffer::context(std::span<const double> observation) const {
    Vec out;
    out.reserve(observation.size() * (history_ + 1));
    const std::size_t missing = history_ - past_.size();
    const std::span<const double> earliest = past_.empty() ? observation : std::span<const double>(past_.front());
    for (std::size_t k = 0; k < missing; ++k) out.insert(out.end(), earliest.begin(), earliest.end());
    for (const Vec& p : past_) out.insert(out.end(), p.begin(), p.end());
    out.insert(out.end(), observation.begin(), observation.end());
    return out;
}

Vec context_vector(const ContextBuffer& buffer, std::span<const double> observation) {
    return buffer.context(observation);
}

RndPair make_rnd_pair(std::size_t observation_dim, std::size_t history, const RndArch& arch, std::uint64_t seed) {
    if (observation_dim == 0 || arch.output == 0 || arch.hidden == 0) {
        throw std::invalid_argument("make_rnd_pair: widths must be positive");
    }
    RndPair pair;
    pair.history = history;
    pair.observation_dim = observation_dim;
    std::vector<std::size_t> widths{observation_dim * (history + 1)};
    for (std::size_t k = 0; k <= arch.extra_layers; ++k) widths.push_back(arch.hidden);
    widths.push_back(arch.output);
    pair.target = net_init(widths, arch.activation, mix_seed(seed, "rnd_target"));
    pair.predictor = net_init(widths, arch.activation, mix_seed(seed, "rnd_predictor"));
    pair.input_mean.assign(pair.input_dim(), 0.0);
    pair.input_std.assign(pair.input_dim(), 1.0);
    return pair;
}

namespace {

Vec normalize(const RndPair& pair, std::span<const double> context) {
    if (context.size() != pair.input_dim()) {
        throw std::invalid_argument("rnd: context length " + std::to_string(context.size()) + ", expected " +
                                    std::to_string(pair.input_dim()));
    }
    Vec x(context.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (context[i] - pair.input_mean[i]) / pair.input_std[i];
    return x;
}

}  // namespace

double rnd_measure(const RndPair& pair, std::span<const double> context) {
    const Vec x = normalize(pair, context);
    const Vec a = net_forward(pair.target, x);
    const Vec b = net_forward(pair.predictor, x);
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) m += (a[j] - b[j]) * (a[j] - b[j]);
    return m;
}

void rnd_train(RndPair& pair, std::span<const Vec> contexts, const RndTrainConfig& config, std::uint64_t seed) {
    if (contexts.empty()) throw std::invalid_argument("rnd_train: empty dataset");
    const std::size_t d = pair.input_dim();
    for (const Vec& c : contexts)
        if (c.size() != d) throw std::invalid_argument("rnd_train: context length mismatch");

    pair.input_mean.assign(d, 0.0);
    pair.input_std.assign(d, 0.0);
    for (const Vec& c : contexts)
        for (std::size_t i = 0; i < d; ++i) pair.input_mean[i] += c[i];
    for (double& m : pair.input_mean) m /= static_cast<double>(contexts.size());
    for (const Vec& c : contexts)
        for (std::size_t i = 0; i < d; ++i) pair.input_std[i] += (c[i] - pair.input_mean[i]) * (c[i] - pair.input_mean[i]);
    for (double& s : pair.input_std) s = std::max(std::sqrt(s / static_cast<double>(contexts.size())), 1e-6);

    std::vector<Vec> inputs;
    std::vector<Vec> targets;
    inputs.reserve(contexts.size());
    targets.reserve(contexts.size());
    for (const Vec& c : contexts) {
        inputs.push_back(normalize(pair, c));
        targets.push_back(net_forward(pair.target, inputs.back()));
    }

    OptState opt = make_opt_state(pair.predictor, OptConfig{Optimizer::adam, config.lr});
    Rng rng(mix_seed(seed, "rnd_shuffle"));
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Vec> bin, btg;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            bin.clear();
            btg.clear();
            for (std::size_t k = start; k < end; ++k) {
                bin.push_back(inputs[order[k]]);
                btg.push_back(targets[order[k]]);
            }
            opt_step(pair.predictor, net_grad(pair.predictor, bin, btg).gradients, opt);
        }
        if (!all_finite(pair.predictor)) throw std::runtime_error("rnd_train: predictor became non-finite");
    }
}

std::vector<Vec> dataset_contexts(const Dataset& data) {
    std::vector<Vec> out;
    for (const Sample* s : data.training_samples()) out.push_back(s->context);
    return out;
}

void rnd_train(RndPair& pair, const Dataset& data, const RndTrainConfig& config, std::uint64_t seed) {
    const auto contexts = dataset_contexts(data);
    rnd_train(pair, contexts, config, seed);
}

double calibrate_threshold(std::span<const double> measures, double factor) {
    if (measures.empty()) throw std::invalid_argument("calibrate_threshold: no measures");
    if (!(factor > 0.0)) throw std::invalid_argument("calibrate_threshold: factor must be positive");
    const double mean = std::accumulate(measures.begin(), measures.end(), 0.0) / static_cast<double>(measures.size());
    return mean * factor;
}

double lazy_thresholds(double beta_h, double divider) {
    if (!(divider >= 1.0)) throw std::invalid_argument("lazy_thresholds: divider must be >= 1");
    return beta_h / divider;
}

std::string_view to_string(LazyMode m) { return m == LazyMode::hysteresis ? "hysteresis" : "literal"; }

LazyMode parse_lazy_mode(std::string_view name) {
    if (name == "hysteresis") return LazyMode::hysteresis;
    if (name == "literal") return LazyMode::literal;
    throw std::invalid_argument("unknown lazy mode '" + std::string(name) + "'");
}

bool lazy_condition(double measure, double beta_h, double beta_r, Controller current, LazyMode mode) {
    if (mode == LazyMode::literal) {
        if (measure > beta_h) return true;
        return !(measure < beta_r);
    }
    if (current == Controller::novice) return measure > beta_h;
    return !(measure < beta_r);
}

bool ensemble_condition(double doubt, double discrepancy, double chi, double tau) {
    return doubt > chi || discrepancy > tau;
}

double dagger_beta(double beta0, int iteration) {
    if (!(beta0 > 0.0 && beta0 <= 1.0)) throw std::invalid_argument("dagger_beta: beta0 must lie in (0, 1]");
    if (iteration < 0) throw std::invalid_argument("dagger_beta: negative iteration");
    return std::pow(beta0, iteration);
}

Controller dwell_step(GateState& s, bool exceeds) {
    const bool dwelling = s.controller == Controller::expert && s.w < s.met_window;
    Controller next;
    if (exceeds || dwelling) {
        s.w = exceeds ? 0 : s.w + 1;
        next = Controller::expert;
        if (s.controller == Controller::novice) ++s.nswitch;
    } else {
        s.w = 0;
        next = Controller::novice;
    }
    s.controller = next;
    return next;
}

Controller gate_step(GateState& s, double measure) {
    const Controller c = dwell_step(s, measure > s.threshold);
    s.previous_measure = measure;
    return c;
}

void gate_begin_episode(GateState& s) {
    s.controller = Controller::novice;
    s.w = 0;
    s.previous_measure = 0.0;
}

nlohmann::json rnd_to_json(const RndPair& pair) {
    return {{"format", "daggerlab-rnd/1"},
            {"history", pair.history},
            {"observation_dim", pair.observation_dim},
            {"input_mean", pair.input_mean},
            {"input_std", pair.input_std},
            {"target", net_to_json(pair.target)},
            {"predictor", net_to_json(pair.predictor)}};
}

RndPair rnd_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "daggerlab-rnd/1") throw std::runtime_error("not a daggerlab-rnd/1 record");
    RndPair p;
    p.history = j.at("history").get<std::size_t>();
    p.observation_dim = j.at("observation_dim").get<std::size_t>();
    p.input_mean = j.at("input_mean").get<Vec>();
    p.input_std = j.at("input_std").get<Vec>();
    p.target = net_from_json(j.at("target"));
    p.predictor = net_from_json(j.at("predictor"));
    if (p.target.widths != p.predictor.widths || p.target.input_width() != p.input_dim()) {
        throw std::runtime_error("rnd record: inconsistent shapes");
    }
    return p;
}

}  // namespace daggerlab
