#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "daggerlab/orchestrator.hpp"

using namespace daggerlab;

namespace {

RunConfig small(Method m, EnvId env = EnvId::gridmaze) {
    RunConfig c;
    c.env = env;
    c.method = m;
    c.seed = 3;
    c.iterations = 2;
    c.samples_per_iteration = 60;
    c.seed_episodes = 2;
    c.eval_episodes = 10;
    c.policy.hidden = {32};
    c.bc.epochs = 10;
    c.ensemble_size = 3;
    c.rnd_history = 2;
    c.rnd_train.epochs = 5;
    return c;
}

// Takes over for a fixed stretch of every episode and answers like the oracle.
class ScriptedGatedExpert final : public ExpertProvider {
public:
    ScriptedGatedExpert(int on, int off) : on_(on), off_(off) {}
    ExpertKind kind() const override { return ExpertKind::human_gated; }
    Action act(const Frame& f) override { return oracle_action(*f.state); }
    std::optional<HumanSignal> poll(const Frame& f) override {
        if (on_ < 0) return std::nullopt;
        if (f.episode_t == on_) return HumanSignal::takeover;
        if (f.episode_t == off_) return HumanSignal::handback;
        return std::nullopt;
    }

private:
    int on_, off_;
};

void check_common_invariants(const RunResult& r, const RunConfig& c) {
    const auto& rows = r.metrics.rows;
    REQUIRE(rows.size() == static_cast<std::size_t>(c.iterations + 1));
    const std::size_t seed_size = r.dataset.blocks()[0].size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].iteration == static_cast<int>(i));
        CHECK(rows[i].dataset_size == seed_size + i * static_cast<std::size_t>(c.samples_per_iteration));
        CHECK(rows[i].expert_frames >= 0);
        CHECK(rows[i].monitoring_frames >= rows[i].expert_frames);
        CHECK(rows[i].task_performance >= 0.0);
        if (i > 0) {
            CHECK(rows[i].expert_frames >= rows[i - 1].expert_frames);
            CHECK(rows[i].monitoring_frames >= rows[i - 1].monitoring_frames);
            CHECK(rows[i].env_steps >= rows[i - 1].env_steps);
            if (rows[i].nswitch) CHECK(*rows[i].nswitch >= *rows[i - 1].nswitch);
        }
        CHECK(rows[i].expert_minutes == doctest::Approx(expert_minutes(rows[i].expert_frames, env_spec(c.env))));
    }
    for (std::size_t b = 1; b < r.dataset.blocks().size(); ++b)
        CHECK(r.dataset.blocks()[b].size() == static_cast<std::size_t>(c.samples_per_iteration));
    CHECK(static_cast<long>(r.trace.size()) == rows.back().env_steps);
}

}  // namespace

TEST_CASE("seed dataset collection") {
    const auto one = collect_seed_dataset(EnvId::gridmaze, 1, 5);
    auto [st, obs] = env_reset(EnvId::gridmaze, mix_seed(5, 0));
    int len = 0;
    bool success = false;
    while (!st.done) {
        const StepResult r = env_step(st, oracle_action(st));
        success = r.success;
        ++len;
    }
    CHECK(success);
    CHECK(one.size() == static_cast<std::size_t>(len));
    for (const Sample& s : one) CHECK(s.tag == Controller::expert);
    CHECK(collect_seed_dataset(EnvId::gridmaze, 1, 5) == one);
    CHECK_THROWS_AS(collect_seed_dataset(EnvId::gridmaze, 0, 5), std::invalid_argument);

    const auto ctx = collect_seed_dataset(EnvId::racetrack2d, 1, 2, 3);
    CHECK(ctx[0].context.size() == 4 * env_spec(EnvId::racetrack2d).observation_dim);
}

TEST_CASE("expert minutes") {
    CHECK(expert_minutes(11968, env_spec(EnvId::pointdash)) == doctest::Approx(6.6489).epsilon(1e-4));
    CHECK(expert_minutes(16664, env_spec(EnvId::racetrack2d)) == doctest::Approx(27.7733).epsilon(1e-4));
    CHECK(expert_minutes(0, env_spec(EnvId::racetrack2d)) == 0.0);
}

TEST_CASE("evaluation") {
    for (EnvId env : {EnvId::racetrack2d, EnvId::gridmaze}) {
        // The oracle needs the state, not just the observation, so roll it by hand.
        int wins = 0;
        for (int k = 0; k < 20; ++k) {
            auto [st, obs] = env_reset(env, mix_seed(9, static_cast<std::uint64_t>(k)));
            bool success = false;
            while (!st.done) success = env_step(st, oracle_action(st)).success;
            wins += success;
        }
        CHECK(wins == 20);
    }
    const PolicyNet untrained = make_policy(EnvId::gridmaze, PolicyArch{}, true, 1);
    const double p = evaluate(untrained, 100, 4);
    CHECK(p < 0.2);
    CHECK(evaluate(untrained, 100, 4) == p);
    CHECK_THROWS_AS(evaluate(untrained, 0, 4), std::invalid_argument);

    // Actor interface: a random walk on the maze rarely reaches the goal.
    Rng rng(3);
    const Actor walker = [&rng](std::span<const double>) -> Action { return static_cast<int>(rng.below(4)); };
    CHECK(evaluate(walker, EnvId::gridmaze, 100, 1) < 0.2);
}

TEST_CASE("bc memorizes its single demonstration") {
    Dataset d;
    d.push_block(collect_seed_dataset(EnvId::gridmaze, 1, 21));
    TrainConfig tc;
    tc.epochs = 300;
    tc.lr = 3e-3;
    const PolicyNet p = bc_train(d, make_policy(EnvId::gridmaze, PolicyArch{}, true, 0), tc, 1);
    CHECK(evaluate(p, 1, 21) == 1.0);
}

TEST_CASE("bc run reports evaluation only") {
    const RunConfig c = small(Method::bc);
    const RunResult r = run(c);
    REQUIRE(r.metrics.rows.size() == 1);
    CHECK_FALSE(r.metrics.rows[0].nswitch.has_value());
    CHECK(r.metrics.rows[0].expert_frames == 0);
    CHECK(r.trace.empty());
}

TEST_CASE("dagger with beta0 = 1 is pure expert") {
    RunConfig c = small(Method::dagger);
    c.dagger_beta0 = 1.0;
    const RunResult r = run(c);
    check_common_invariants(r, c);
    for (const TraceRecord& t : r.trace) CHECK(t.controller == Controller::expert);
    CHECK_FALSE(r.metrics.final().nswitch.has_value());
    CHECK(r.metrics.final().expert_frames == 2 * c.samples_per_iteration);
    CHECK(r.metrics.final().expert_frames == r.metrics.final().env_steps);
}

TEST_CASE("dagger mixing frequency follows beta") {
    RunConfig c = small(Method::dagger);
    c.iterations = 2;
    c.samples_per_iteration = 10000;
    c.bc.epochs = 1;
    c.eval_episodes = 1;
    c.dagger_beta0 = 0.5;
    const RunResult r = run(c);
    long expert = 0, total = 0;
    for (const TraceRecord& t : r.trace) {
        if (t.iteration != 1) continue;
        ++total;
        expert += t.controller == Controller::expert;
    }
    CHECK(total == 10000);
    CHECK(std::abs(expert / double(total) - 0.5) <= 0.02);
}

TEST_CASE("rnd run invariants") {
    const RunConfig c = small(Method::rnd);
    const RunResult r = run(c);
    check_common_invariants(r, c);
    REQUIRE(r.rnd.has_value());
    const auto& last = r.metrics.final();
    CHECK(last.expert_frames == static_cast<long>(r.dataset.size() - r.dataset.blocks()[0].size()));
    CHECK(last.expert_frames <= last.env_steps);
    REQUIRE(last.nswitch.has_value());
    CHECK(*last.nswitch == count_switches(r.trace));
    long expert_steps = 0;
    for (const TraceRecord& t : r.trace) expert_steps += t.controller == Controller::expert;
    CHECK(expert_steps == last.expert_frames);
}

TEST_CASE("rnd with a tiny threshold hands nearly everything to the expert") {
    RunConfig c = small(Method::rnd);
    c.rnd_lambda_factor = 1e-4;
    const RunResult r = run(c);
    const auto& last = r.metrics.final();
    CHECK(last.expert_frames >= 0.95 * static_cast<double>(last.env_steps));
}

TEST_CASE("rnd with an unreachable threshold trips the liveness guard") {
    RunConfig c = small(Method::rnd);
    c.rnd_lambda_factor = 1e12;
    c.max_steps_guard = 300;
    CHECK_THROWS_AS(run(c), LivenessError);
}

TEST_CASE("condition methods consult the expert every step") {
    for (Method m : {Method::lazy, Method::ensemble}) {
        CAPTURE(to_string(m));
        // The maze is too easy for the lazy gate: a near-perfect novice never trips it.
        const RunConfig c = small(m, EnvId::racetrack2d);
        const RunResult r = run(c);
        check_common_invariants(r, c);
        const auto& last = r.metrics.final();
        CHECK(last.expert_frames == last.env_steps);
        REQUIRE(last.nswitch.has_value());
        CHECK(*last.nswitch == count_switches(r.trace));
        if (m == Method::ensemble) CHECK(r.ensemble.size() == 3);
    }
}

TEST_CASE("an always-true condition fills each block in T steps") {
    RunConfig c = small(Method::ensemble);
    c.chi_factor = 0.0;
    c.tau_factor = 0.0;
    const RunResult r = run(c);
    const auto& last = r.metrics.final();
    CHECK(last.env_steps == 2L * c.samples_per_iteration);
    std::set<std::pair<int, std::int64_t>> episodes;
    for (const TraceRecord& t : r.trace) episodes.insert({t.iteration, t.episode});
    CHECK(*last.nswitch == static_cast<long>(episodes.size()));
}

TEST_CASE("human-gated run with a scripted supervisor") {
    RunConfig c = small(Method::hg);
    ScriptedGatedExpert expert(3, 13);
    const RunResult r = run(c, expert);
    check_common_invariants(r, c);
    const auto& last = r.metrics.final();
    CHECK(last.monitoring_frames == last.env_steps);
    CHECK(last.expert_frames < last.monitoring_frames);
    CHECK(last.expert_frames == static_cast<long>(r.dataset.size() - r.dataset.blocks()[0].size()));
    CHECK(*last.nswitch == count_switches(r.trace));

    CHECK_THROWS_AS(run(c), std::invalid_argument);  // the oracle cannot gate
    ScriptedGatedExpert silent(-1, -1);
    c.max_steps_guard = 200;
    CHECK_THROWS_AS(run(c, silent), LivenessError);
}

TEST_CASE("runs are deterministic") {
    for (Method m : {Method::dagger, Method::rnd, Method::lazy}) {
        const RunConfig c = small(m, EnvId::racetrack2d);
        const RunResult a = run(c);
        const RunResult b = run(c);
        CHECK(a.metrics == b.metrics);
        CHECK(a.trace == b.trace);
        CHECK(a.dataset == b.dataset);
    }
}

TEST_CASE("config validation") {
    RunConfig c = small(Method::rnd);
    c.seed_episodes = 0;
    CHECK_THROWS_AS(run(c), std::invalid_argument);
    c = small(Method::rnd);
    c.iterations = 0;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    c = small(Method::ensemble);
    c.ensemble_size = 1;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    c = small(Method::dagger);
    c.dagger_beta0 = 0.0;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    c = small(Method::lazy);
    c.lazy_divider = 0.5;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    CHECK(effective_guard(small(Method::rnd)) == 1200);
    RunConfig g = small(Method::rnd);
    g.samples_per_iteration = 1;
    CHECK(effective_guard(g) == 50);
    CHECK(parse_method("hg") == Method::hg);
    CHECK_THROWS(parse_method("magic"));
}

TEST_CASE("switch recount from a trace") {
    auto rec = [](std::int64_t ep, Controller c) {
        TraceRecord t;
        t.episode = ep;
        t.controller = c;
        return t;
    };
    const auto E = Controller::expert, N = Controller::novice;
    const std::vector<TraceRecord> tr{rec(0, N), rec(0, E), rec(0, E), rec(0, N), rec(0, E),
                                      rec(1, E), rec(1, E), rec(1, N)};
    CHECK(count_switches(tr) == 3);
}
