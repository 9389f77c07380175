#include "daggerlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace daggerlab {

namespace {

std::vector<std::size_t> policy_widths(const EnvSpec& spec, const PolicyArch& arch) {
    std::vector<std::size_t> w{spec.observation_dim};
    w.insert(w.end(), arch.hidden.begin(), arch.hidden.end());
    w.push_back(spec.action_width());
    return w;
}

void check_observation(const PolicyNet& p, std::size_t n) {
    if (n != p.observation_dim) {
        throw std::invalid_argument("policy: observation length " + std::to_string(n) + ", expected " +
                                    std::to_string(p.observation_dim));
    }
}

}  // namespace

std::string_view to_string(Controller c) { return c == Controller::expert ? "expert" : "novice"; }

Controller parse_controller(std::string_view name) {
    if (name == "expert") return Controller::expert;
    if (name == "novice") return Controller::novice;
    throw std::invalid_argument("unknown controller tag '" + std::string(name) + "'");
}

void Dataset::push_block(std::vector<Sample> block) { blocks_.push_back(std::move(block)); }

std::size_t Dataset::size() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.size();
    return n;
}

std::size_t Dataset::expert_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_)
        for (const Sample& s : b) n += s.tag == Controller::expert ? 1 : 0;
    return n;
}

std::vector<const Sample*> Dataset::training_samples() const {
    std::vector<const Sample*> out;
    for (const auto& b : blocks_)
        for (const Sample& s : b)
            if (s.tag == Controller::expert) out.push_back(&s);
    return out;
}

PolicyNet make_policy(EnvId env, const PolicyArch& arch, bool goal_conditioned, std::uint64_t seed) {
    const EnvSpec& spec = env_spec(env);
    if (goal_conditioned && !spec.goal_slice) {
        throw std::invalid_argument(std::string(to_string(env)) + " has no goal to condition on");
    }
    PolicyNet p;
    const auto widths = policy_widths(spec, arch);
    p.params = net_init(widths, arch.activation, seed);
    p.head = spec.discrete() ? HeadKind::discrete_logits : HeadKind::continuous_mean;
    p.env = env;
    p.observation_dim = spec.observation_dim;
    p.goal_conditioned = goal_conditioned;
    p.input_mean.assign(spec.observation_dim, 0.0);
    p.input_std.assign(spec.observation_dim, 1.0);
    return p;
}

Vec policy_input(const PolicyNet& policy, std::span<const double> observation) {
    check_observation(policy, observation.size());
    Vec x(observation.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (observation[i] - policy.input_mean[i]) / policy.input_std[i];
    if (!policy.goal_conditioned) {
        if (const auto& g = env_spec(policy.env).goal_slice) std::fill(x.begin() + g->first, x.begin() + g->second, 0.0);
    }
    return x;
}

Vec policy_output(const PolicyNet& policy, std::span<const double> observation) {
    return net_forward(policy.params, policy_input(policy, observation));
}

namespace {

struct Prepared {
    std::vector<Vec> inputs;
    std::vector<int> classes;
    std::vector<Vec> targets;
};

Prepared prepare(const PolicyNet& policy, const std::vector<const Sample*>& samples) {
    Prepared p;
    p.inputs.reserve(samples.size());
    for (const Sample* s : samples) {
        p.inputs.push_back(policy_input(policy, s->observation));
        if (policy.head == HeadKind::discrete_logits) {
            const int* a = std::get_if<int>(&s->action);
            if (a == nullptr) throw std::invalid_argument("bc_train: continuous action in a discrete dataset");
            p.classes.push_back(*a);
        } else {
            const Vec* a = std::get_if<Vec>(&s->action);
            if (a == nullptr || a->size() != policy.params.output_width()) {
                throw std::invalid_argument("bc_train: action arity does not match the policy head");
            }
            p.targets.push_back(*a);
        }
    }
    return p;
}

double prepared_loss(const PolicyNet& policy, const Prepared& p) {
    return policy.head == HeadKind::discrete_logits ? cross_entropy_loss(policy.params, p.inputs, p.classes)
                                                    : mse_loss(policy.params, p.inputs, p.targets);
}

}  // namespace

PolicyNet bc_train(const Dataset& data, const PolicyNet& templ, const TrainConfig& config, std::uint64_t seed,
                   TrainLog* log) {
    const auto samples = data.training_samples();
    if (samples.empty()) throw std::invalid_argument("bc_train: no expert samples in dataset");
    if (config.epochs < 0 || config.batch_size == 0) throw std::invalid_argument("bc_train: bad training config");
    for (const Sample* s : samples) check_observation(templ, s->observation.size());

    PolicyNet policy = templ;
    policy.params = net_init(templ.params.widths, templ.params.activation, mix_seed(seed, "bc_init"));
    const std::size_t d = templ.observation_dim;
    policy.input_mean.assign(d, 0.0);
    policy.input_std.assign(d, 0.0);
    for (const Sample* s : samples)
        for (std::size_t i = 0; i < d; ++i) policy.input_mean[i] += s->observation[i];
    for (double& m : policy.input_mean) m /= static_cast<double>(samples.size());
    for (const Sample* s : samples)
        for (std::size_t i = 0; i < d; ++i) {
            const double dv = s->observation[i] - policy.input_mean[i];
            policy.input_std[i] += dv * dv;
        }
    for (double& v : policy.input_std) {
        v = std::sqrt(v / static_cast<double>(samples.size()));
        if (v < 1e-6) v = 1.0;
    }

    const Prepared prep = prepare(policy, samples);
    if (log != nullptr) {
        log->initial_loss = prepared_loss(policy, prep);
        log->epoch_losses.clear();
    }

    OptState opt = make_opt_state(policy.params, OptConfig{Optimizer::adam, config.lr});
    Rng rng(mix_seed(seed, "bc_shuffle"));
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Vec> batch_in;
    std::vector<int> batch_cls;
    std::vector<Vec> batch_tgt;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch_in.clear();
            batch_cls.clear();
            batch_tgt.clear();
            for (std::size_t k = start; k < end; ++k) {
                batch_in.push_back(prep.inputs[order[k]]);
                if (policy.head == HeadKind::discrete_logits) batch_cls.push_back(prep.classes[order[k]]);
                else batch_tgt.push_back(prep.targets[order[k]]);
            }
            const GradResult g = policy.head == HeadKind::discrete_logits
                                     ? net_grad(policy.params, batch_in, batch_cls)
                                     : net_grad(policy.params, batch_in, batch_tgt);
            opt_step(policy.params, g.gradients, opt);
        }
        if (!all_finite(policy.params)) throw std::runtime_error("bc_train: parameters became non-finite");
        if (log != nullptr) log->epoch_losses.push_back(prepared_loss(policy, prep));
    }
    return policy;
}

double bc_loss(const PolicyNet& policy, const Dataset& data) {
    const auto samples = data.training_samples();
    if (samples.empty()) throw std::invalid_argument("bc_loss: no expert samples");
    return prepared_loss(policy, prepare(policy, samples));
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

Action action_from_output(EnvId env, std::span<const double> output) {
    const EnvSpec& spec = env_spec(env);
    if (spec.discrete()) return static_cast<int>(argmax(output));
    const auto& c = std::get<ContinuousActions>(spec.action_kind);
    Vec a(output.begin(), output.end());
    for (double& x : a) x = std::clamp(x, c.low, c.high);
    return a;
}

Action policy_act(const PolicyNet& policy, std::span<const double> observation, ActMode mode, Rng* rng) {
    const Vec out = policy_output(policy, observation);
    if (policy.head == HeadKind::discrete_logits && mode == ActMode::stochastic) {
        if (rng == nullptr) throw std::invalid_argument("policy_act: stochastic mode needs an rng");
        const Vec p = softmax(out);
        double u = rng->uniform();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (u < p[i]) return static_cast<int>(i);
            u -= p[i];
        }
        return static_cast<int>(p.size() - 1);
    }
    return action_from_output(policy.env, out);
}

Ensemble ensemble_train(const Dataset& data, std::size_t n, const PolicyNet& templ, const TrainConfig& config,
                        std::uint64_t base_seed) {
    if (n < 2) throw std::invalid_argument("ensemble_train: need at least 2 members");
    Ensemble members;
    members.reserve(n);
    for (std::size_t k = 0; k < n; ++k) members.push_back(bc_train(data, templ, config, base_seed + k));
    return members;
}

EnsembleStats ensemble_mean_and_doubt(const Ensemble& ensemble, std::span<const double> observation) {
    if (ensemble.empty()) throw std::invalid_argument("ensemble_mean_and_doubt: empty ensemble");
    std::vector<Vec> outs;
    outs.reserve(ensemble.size());
    for (const PolicyNet& p : ensemble) outs.push_back(policy_output(p, observation));
    const std::size_t width = outs.front().size();
    EnsembleStats s;
    s.mean.assign(width, 0.0);
    for (const Vec& o : outs) {
        if (o.size() != width) throw std::invalid_argument("ensemble: members disagree on output width");
        for (std::size_t j = 0; j < width; ++j) s.mean[j] += o[j];
    }
    const double inv = 1.0 / static_cast<double>(outs.size());
    for (double& m : s.mean) m *= inv;
    for (const Vec& o : outs)
        for (std::size_t j = 0; j < width; ++j) s.doubt += (o[j] - s.mean[j]) * (o[j] - s.mean[j]) * inv;
    return s;
}

double action_discrepancy(EnvId env, const Action& expert, std::span<const double> novice_output) {
    const EnvSpec& spec = env_spec(env);
    double sum = 0.0;
    if (spec.discrete()) {
        const int a = std::get<int>(expert);
        const Vec p = softmax(novice_output);
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double diff = (static_cast<int>(j) == a ? 1.0 : 0.0) - p[j];
            sum += diff * diff;
        }
        return sum;
    }
    const Vec& a = std::get<Vec>(expert);
    const Action clipped = action_from_output(env, novice_output);
    const Vec& b = std::get<Vec>(clipped);
    for (std::size_t j = 0; j < a.size(); ++j) sum += (a[j] - b[j]) * (a[j] - b[j]);
    return sum;
}

nlohmann::json policy_to_json(const PolicyNet& policy) {
    return {{"format", "daggerlab-policy/1"},
            {"env", to_string(policy.env)},
            {"head", policy.head == HeadKind::discrete_logits ? "discrete_logits" : "continuous_mean"},
            {"observation_dim", policy.observation_dim},
            {"goal_conditioned", policy.goal_conditioned},
            {"input_mean", policy.input_mean},
            {"input_std", policy.input_std},
            {"net", net_to_json(policy.params)}};
}

PolicyNet policy_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "daggerlab-policy/1") throw std::runtime_error("not a daggerlab-policy/1 record");
    PolicyNet p;
    p.env = parse_env_id(j.at("env").get<std::string>());
    const std::string head = j.at("head").get<std::string>();
    if (head == "discrete_logits") p.head = HeadKind::discrete_logits;
    else if (head == "continuous_mean") p.head = HeadKind::continuous_mean;
    else throw std::runtime_error("policy record: unknown head '" + head + "'");
    p.observation_dim = j.at("observation_dim").get<std::size_t>();
    p.goal_conditioned = j.at("goal_conditioned").get<bool>();
    p.input_mean = j.at("input_mean").get<Vec>();
    p.input_std = j.at("input_std").get<Vec>();
    p.params = net_from_json(j.at("net"));
    if (p.params.input_width() != p.observation_dim || p.input_mean.size() != p.observation_dim ||
        p.input_std.size() != p.observation_dim) {
        throw std::runtime_error("policy record: observation_dim inconsistent with parameters");
    }
    return p;
}

}  // namespace daggerlab
