#include "daggerlab/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace daggerlab {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::bc: return "bc";
        case Method::dagger: return "dagger";
        case Method::lazy: return "lazy";
        case Method::ensemble: return "ensemble";
        case Method::rnd: return "rnd";
        case Method::hg: return "hg";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    for (Method m : {Method::bc, Method::dagger, Method::lazy, Method::ensemble, Method::rnd, Method::hg}) {
        if (name == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

void validate(const RunConfig& c) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid run config: " + msg); };
    if (c.iterations < 1) fail("iterations must be >= 1");
    if (c.samples_per_iteration < 1) fail("samples_per_iteration must be >= 1");
    if (c.seed_episodes < 1) fail("seed_episodes must be >= 1");
    if (c.eval_episodes < 1) fail("eval_episodes must be >= 1");
    if (c.max_steps_guard < 0) fail("max_steps_guard must be >= 0");
    if (c.bc.epochs < 1 || c.bc.batch_size < 1 || !(c.bc.lr > 0.0)) fail("bc training parameters must be positive");
    if (c.met_window < 0) fail("met_window must be >= 0");
    switch (c.method) {
        case Method::dagger:
            if (!(c.dagger_beta0 > 0.0 && c.dagger_beta0 <= 1.0)) fail("dagger_beta0 must lie in (0, 1]");
            break;
        case Method::ensemble:
            if (c.ensemble_size < 2) fail("ensemble_size must be >= 2");
            if (c.chi_factor < 0.0 || c.tau_factor < 0.0) fail("chi_factor and tau_factor must be >= 0");
            break;
        case Method::lazy:
            if (c.lazy_beta_h_factor < 0.0) fail("lazy_beta_h_factor must be >= 0");
            if (!(c.lazy_divider >= 1.0)) fail("lazy_divider must be >= 1");
            break;
        case Method::rnd:
            if (!(c.rnd_lambda_factor > 0.0)) fail("rnd_lambda_factor must be > 0");
            if (c.rnd_arch.hidden < 1 || c.rnd_arch.output < 1) fail("rnd widths must be positive");
            if (c.rnd_train.epochs < 0 || c.rnd_train.batch_size < 1 || !(c.rnd_train.lr > 0.0)) {
                fail("rnd training parameters must be positive");
            }
            break;
        case Method::bc:
        case Method::hg: break;
    }
}

long effective_guard(const RunConfig& c) {
    if (c.max_steps_guard > 0) return c.max_steps_guard;
    return std::max(50L, 20L * c.samples_per_iteration);
}

double expert_minutes(long expert_frames, const EnvSpec& spec) {
    return static_cast<double>(expert_frames) / (spec.frame_rate * 60.0);
}

Actor policy_actor(const PolicyNet& policy) {
    return [&policy](std::span<const double> obs) { return policy_act(policy, obs); };
}

Actor ensemble_actor(const Ensemble& ensemble) {
    return [&ensemble](std::span<const double> obs) {
        return action_from_output(ensemble.front().env, ensemble_mean_and_doubt(ensemble, obs).mean);
    };
}

double evaluate(const Actor& actor, EnvId env, int episodes, std::uint64_t seed) {
    if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
    double total = 0.0;
    const bool by_progress = env == EnvId::pointdash;
    for (int k = 0; k < episodes; ++k) {
        auto [state, obs] = env_reset(env, mix_seed(seed, static_cast<std::uint64_t>(k)));
        double progress = 0.0;
        bool success = false;
        while (!state.done) {
            const StepResult r = env_step(state, actor(obs));
            progress += r.progress;
            success = r.success;
            obs = r.observation;
        }
        total += by_progress ? progress : (success ? 1.0 : 0.0);
    }
    return total / episodes;
}

double evaluate(const PolicyNet& policy, int episodes, std::uint64_t seed) {
    return evaluate(policy_actor(policy), policy.env, episodes, seed);
}

double evaluate(const Ensemble& ensemble, int episodes, std::uint64_t seed) {
    if (ensemble.empty()) throw std::invalid_argument("evaluate: empty ensemble");
    return evaluate(ensemble_actor(ensemble), ensemble.front().env, episodes, seed);
}

std::vector<Sample> collect_seed_dataset(EnvId env, int episodes, std::uint64_t seed, std::size_t history) {
    if (episodes < 1) throw std::invalid_argument("collect_seed_dataset: need at least one episode");
    std::vector<Sample> block;
    for (int e = 0; e < episodes; ++e) {
        auto [state, obs] = env_reset(env, mix_seed(seed, static_cast<std::uint64_t>(e)));
        ContextBuffer ctx(history);
        int t = 0;
        while (!state.done) {
            Sample s;
            s.observation = obs;
            s.context = ctx.context(obs);
            s.action = oracle_action(state);
            s.tag = Controller::expert;
            s.episode = -1 - e;  // seed episodes are numbered below zero
            s.t = t++;
            s.iteration = 0;
            const StepResult r = env_step(state, s.action);
            ctx.push(obs);
            obs = r.observation;
            block.push_back(std::move(s));
        }
    }
    return block;
}

long count_switches(std::span<const TraceRecord> trace) {
    long n = 0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        if (trace[i].controller != Controller::expert) continue;
        const bool continues = i > 0 && trace[i - 1].episode == trace[i].episode &&
                               trace[i - 1].controller == Controller::expert;
        if (!continues) ++n;
    }
    return n;
}

namespace {

// Shared state of one active-learning run.
class Loop {
public:
    Loop(const RunConfig& config, ExpertProvider& expert, RunObserver* observer)
        : cfg_(config), spec_(env_spec(config.env)), expert_(expert), observer_(observer),
          mix_rng_(mix_seed(config.seed, "dagger_mix")) {
        validate(cfg_);
        result_.metrics.method = cfg_.method;
        result_.metrics.env = cfg_.env;
        result_.metrics.seed = cfg_.seed;
        result_.eval_seed = mix_seed(cfg_.seed, "eval");
        gate_.met_window = cfg_.met_window;
        history_ = cfg_.method == Method::rnd ? cfg_.rnd_history : 0;
        ctx_ = ContextBuffer(history_);
        templ_ = make_policy(cfg_.env, cfg_.policy, cfg_.goal_conditioned && spec_.goal_slice.has_value(),
                             mix_seed(cfg_.seed, "template"));
    }

    RunResult run() {
        result_.dataset.push_block(
            collect_seed_dataset(cfg_.env, cfg_.seed_episodes, mix_seed(cfg_.seed, "seed_set"), history_));
        if (cfg_.method == Method::rnd) {
            result_.rnd = make_rnd_pair(spec_.observation_dim, history_, cfg_.rnd_arch, mix_seed(cfg_.seed, "rnd"));
        }
        retrain(0);
        record_row(0);
        if (cfg_.method == Method::bc) return std::move(result_);

        for (int i = 0; i < cfg_.iterations; ++i) {
            calibrate();
            std::vector<Sample> block = collect_block(i);
            result_.dataset.push_block(std::move(block));
            retrain(i + 1);
            record_row(i + 1);
        }
        return std::move(result_);
    }

private:
    // -- training and thresholds ---------------------------------------------

    void retrain(int round) {
        const std::uint64_t seed = mix_seed(mix_seed(cfg_.seed, "policy"), static_cast<std::uint64_t>(round));
        if (cfg_.method == Method::ensemble) {
            result_.ensemble = ensemble_train(result_.dataset, static_cast<std::size_t>(cfg_.ensemble_size), templ_,
                                              cfg_.bc, seed);
            result_.policy = result_.ensemble.front();
        } else {
            result_.policy = bc_train(result_.dataset, templ_, cfg_.bc, seed);
        }
        if (result_.rnd) {
            rnd_train(*result_.rnd, result_.dataset, cfg_.rnd_train,
                      mix_seed(mix_seed(cfg_.seed, "rnd_train"), static_cast<std::uint64_t>(round)));
        }
    }

    static double scaled_mean(const std::vector<double>& values, double factor) {
        return factor == 0.0 ? 0.0 : calibrate_threshold(values, factor);
    }

    void calibrate() {
        const auto samples = result_.dataset.training_samples();
        std::vector<double> a, b;
        switch (cfg_.method) {
            case Method::rnd:
                for (const Sample* s : samples) a.push_back(rnd_measure(*result_.rnd, s->context));
                gate_.threshold = calibrate_threshold(a, cfg_.rnd_lambda_factor);
                break;
            case Method::lazy:
                for (const Sample* s : samples) {
                    a.push_back(action_discrepancy(cfg_.env, s->action, policy_output(result_.policy, s->observation)));
                }
                beta_h_ = scaled_mean(a, cfg_.lazy_beta_h_factor);
                beta_r_ = lazy_thresholds(beta_h_, cfg_.lazy_divider);
                break;
            case Method::ensemble:
                for (const Sample* s : samples) {
                    const EnsembleStats st = ensemble_mean_and_doubt(result_.ensemble, s->observation);
                    a.push_back(st.doubt);
                    b.push_back(action_discrepancy(cfg_.env, s->action, st.mean));
                }
                chi_ = scaled_mean(a, cfg_.chi_factor);
                tau_ = scaled_mean(b, cfg_.tau_factor);
                break;
            default: break;
        }
    }

    void record_row(int iteration) {
        IterationMetrics row;
        row.iteration = iteration;
        row.dataset_size = result_.dataset.size();
        row.task_performance = cfg_.method == Method::ensemble
                                   ? evaluate(result_.ensemble, cfg_.eval_episodes, result_.eval_seed)
                                   : evaluate(result_.policy, cfg_.eval_episodes, result_.eval_seed);
        if (cfg_.method != Method::bc && cfg_.method != Method::dagger) row.nswitch = gate_.nswitch;
        row.expert_frames = expert_frames_;
        row.monitoring_frames = monitoring_frames_;
        row.expert_minutes = expert_minutes(expert_frames_, spec_);
        row.env_steps = env_steps_;
        result_.metrics.rows.push_back(row);
        if (observer_ != nullptr) observer_->on_iteration(row);
    }

    // -- rollouts --------------------------------------------------------------

    void begin_episode() {
        std::tie(state_, obs_) = env_reset(cfg_.env, mix_seed(mix_seed(cfg_.seed, "rollout"),
                                                              static_cast<std::uint64_t>(next_episode_)));
        episode_ = next_episode_++;
        episode_t_ = 0;
        ctx_.reset();
        gate_begin_episode(gate_);
    }

    Action novice_action() const {
        if (cfg_.method == Method::ensemble) {
            return action_from_output(cfg_.env, ensemble_mean_and_doubt(result_.ensemble, obs_).mean);
        }
        return policy_act(result_.policy, obs_);
    }

    Frame make_frame(int iteration, double measure, double threshold) const {
        Frame f;
        f.state = &state_;
        f.observation = obs_;
        f.iteration = iteration;
        f.episode = episode_;
        f.t = t_;
        f.episode_t = episode_t_;
        f.measure = measure;
        f.threshold = threshold;
        f.controller = gate_.controller;
        f.w = gate_.w;
        return f;
    }

    struct Decision {
        Controller controller = Controller::novice;
        Action executed;
        std::optional<Action> label;  // expert label to store
        double measure = 0.0;
        double threshold = 0.0;
    };

    Decision decide(int iteration) {
        Decision d;
        const Controller before = gate_.controller;
        switch (cfg_.method) {
            case Method::dagger: {
                const double beta = dagger_beta(cfg_.dagger_beta0, iteration);
                Frame f = make_frame(iteration, 0.0, beta);
                f.controller = Controller::expert;
                const Action a_exp = expert_.act(f);
                ++expert_frames_;
                ++monitoring_frames_;
                d.label = a_exp;
                d.threshold = beta;
                if (mix_rng_.bernoulli(beta)) {
                    d.controller = Controller::expert;
                    d.executed = a_exp;
                } else {
                    d.executed = novice_action();
                }
                return d;
            }
            case Method::lazy:
            case Method::ensemble: {
                Frame f = make_frame(iteration, 0.0, 0.0);
                const Action a_exp = expert_.act(f);
                ++expert_frames_;
                ++monitoring_frames_;
                bool exceeds = false;
                if (cfg_.method == Method::lazy) {
                    d.measure = action_discrepancy(cfg_.env, a_exp, policy_output(result_.policy, obs_));
                    d.threshold = beta_h_;
                    exceeds = lazy_condition(d.measure, beta_h_, beta_r_, before, cfg_.lazy_mode);
                } else {
                    const EnsembleStats st = ensemble_mean_and_doubt(result_.ensemble, obs_);
                    d.measure = action_discrepancy(cfg_.env, a_exp, st.mean);
                    d.threshold = tau_;
                    exceeds = ensemble_condition(st.doubt, d.measure, chi_, tau_);
                }
                d.controller = dwell_step(gate_, exceeds);
                if (d.controller == Controller::expert) {
                    d.executed = a_exp;
                    d.label = a_exp;
                } else {
                    d.executed = novice_action();
                }
                return d;
            }
            case Method::rnd: {
                d.measure = rnd_measure(*result_.rnd, ctx_.context(obs_));
                d.threshold = gate_.threshold;
                d.controller = gate_step(gate_, d.measure);
                Frame f = make_frame(iteration, d.measure, d.threshold);
                f.handover = before == Controller::novice && d.controller == Controller::expert;
                if (d.controller == Controller::expert) {
                    d.executed = expert_.act(f);
                    ++expert_frames_;
                    ++monitoring_frames_;
                    d.label = d.executed;
                } else {
                    expert_.watch(f);
                    d.executed = novice_action();
                }
                return d;
            }
            case Method::hg: {
                Frame probe = make_frame(iteration, 0.0, 0.0);
                if (const auto signal = expert_.poll(probe)) {
                    if (*signal == HumanSignal::takeover && gate_.controller == Controller::novice) {
                        gate_.controller = Controller::expert;
                        ++gate_.nswitch;
                    } else if (*signal == HumanSignal::handback) {
                        gate_.controller = Controller::novice;
                    }
                }
                d.controller = gate_.controller;
                Frame f = make_frame(iteration, 0.0, 0.0);
                f.handover = before == Controller::novice && d.controller == Controller::expert;
                ++monitoring_frames_;
                if (d.controller == Controller::expert) {
                    d.executed = expert_.act(f);
                    ++expert_frames_;
                    d.label = d.executed;
                } else {
                    expert_.watch(f);
                    d.executed = novice_action();
                }
                return d;
            }
            case Method::bc: break;
        }
        throw std::logic_error("decide: method has no rollout phase");
    }

    std::vector<Sample> collect_block(int iteration) {
        const auto target = static_cast<std::size_t>(cfg_.samples_per_iteration);
        const long guard = effective_guard(cfg_);
        std::vector<Sample> block;
        long steps = 0;
        begin_episode();
        while (block.size() < target) {
            if (steps >= guard) {
                throw LivenessError("iteration " + std::to_string(iteration) + ": only " +
                                    std::to_string(block.size()) + " of " + std::to_string(target) +
                                    " expert samples after " + std::to_string(steps) +
                                    " environment steps; the expert was not called in often enough");
            }
            Decision d;
            try {
                d = decide(iteration);
            } catch (const ExpertUnavailable&) {
                discard_episode(block);
                if (!expert_.reconnect()) throw;
                begin_episode();
                continue;
            }
            const Vec context = ctx_.context(obs_);
            if (d.label) {
                Sample s;
                s.observation = obs_;
                s.context = context;
                s.action = *d.label;
                s.tag = Controller::expert;
                s.episode = episode_;
                s.t = episode_t_;
                s.iteration = iteration + 1;
                block.push_back(std::move(s));
            }
            if (cfg_.record_trace) {
                result_.trace.push_back(TraceRecord{iteration, episode_, t_, obs_, d.executed, d.controller,
                                                    d.measure, d.threshold, gate_.w});
            }
            const StepResult r = env_step(state_, d.executed);
            ctx_.push(obs_);
            obs_ = r.observation;
            ++steps;
            ++env_steps_;
            ++t_;
            ++episode_t_;
            if (r.done && block.size() < target) begin_episode();
        }
        return block;
    }

    void discard_episode(std::vector<Sample>& block) {
        std::erase_if(block, [&](const Sample& s) { return s.episode == episode_; });
        if (observer_ != nullptr) observer_->on_episode_discarded(episode_);
    }

    const RunConfig cfg_;
    const EnvSpec& spec_;
    ExpertProvider& expert_;
    RunObserver* observer_;
    Rng mix_rng_;
    RunResult result_;
    PolicyNet templ_;
    std::size_t history_ = 0;
    ContextBuffer ctx_;
    GateState gate_;
    double beta_h_ = 0.0, beta_r_ = 0.0, chi_ = 0.0, tau_ = 0.0;

    EnvState state_;
    Vec obs_;
    std::int64_t episode_ = 0;
    std::int64_t next_episode_ = 0;
    int episode_t_ = 0;
    long t_ = 0;
    long expert_frames_ = 0;
    long monitoring_frames_ = 0;
    long env_steps_ = 0;
};

void require_method(const RunConfig& c, std::initializer_list<Method> allowed, const char* who) {
    for (Method m : allowed)
        if (c.method == m) return;
    throw std::invalid_argument(std::string(who) + ": config method is '" + std::string(to_string(c.method)) + "'");
}

}  // namespace

RunResult run_bc(const RunConfig& config) {
    require_method(config, {Method::bc}, "run_bc");
    OracleExpert oracle;
    return Loop(config, oracle, nullptr).run();
}

RunResult run_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer) {
    require_method(config, {Method::dagger}, "run_dagger");
    return Loop(config, expert, observer).run();
}

RunResult run_condition_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer) {
    require_method(config, {Method::lazy, Method::ensemble}, "run_condition_dagger");
    return Loop(config, expert, observer).run();
}

RunResult run_rnd_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer) {
    require_method(config, {Method::rnd}, "run_rnd_dagger");
    return Loop(config, expert, observer).run();
}

RunResult run_hg_dagger(const RunConfig& config, ExpertProvider& expert, RunObserver* observer) {
    require_method(config, {Method::hg}, "run_hg_dagger");
    if (expert.kind() != ExpertKind::human_gated) {
        throw std::invalid_argument("run_hg_dagger: needs a human-gated expert provider");
    }
    return Loop(config, expert, observer).run();
}

RunResult run(const RunConfig& config, ExpertProvider& expert, RunObserver* observer) {
    switch (config.method) {
        case Method::bc: return run_bc(config);
        case Method::dagger: return run_dagger(config, expert, observer);
        case Method::lazy:
        case Method::ensemble: return run_condition_dagger(config, expert, observer);
        case Method::rnd: return run_rnd_dagger(config, expert, observer);
        case Method::hg: return run_hg_dagger(config, expert, observer);
    }
    throw std::invalid_argument("run: unknown method");
}

RunResult run(const RunConfig& config) {
    OracleExpert oracle;
    return run(config, oracle);
}

}  // namespace daggerlab
