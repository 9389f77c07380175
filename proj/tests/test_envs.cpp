#include <doctest.h>

#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "daggerlab/envs.hpp"

using namespace daggerlab;

namespace {

constexpr double pi = std::numbers::pi;

// The track is rectilinear: centerline offset by the half width on each side.
struct AxisWall {
    bool horizontal;
    double c;       // y for horizontal walls, x for vertical ones
    double lo, hi;  // extent along the other axis
};

std::vector<AxisWall> analytic_walls() {
    const std::vector<std::array<double, 2>> inner{{3, 3}, {37, 3}, {37, 13}, {17, 13}, {17, 29}, {3, 29}};
    const std::vector<std::array<double, 2>> outer{{-3, -3}, {43, -3}, {43, 19}, {23, 19}, {23, 35}, {-3, 35}};
    std::vector<AxisWall> walls;
    for (const auto* poly : {&inner, &outer}) {
        for (std::size_t i = 0; i < poly->size(); ++i) {
            const auto& a = (*poly)[i];
            const auto& b = (*poly)[(i + 1) % poly->size()];
            if (a[1] == b[1]) {
                walls.push_back({true, a[1], std::min(a[0], b[0]), std::max(a[0], b[0])});
            } else {
                walls.push_back({false, a[0], std::min(a[1], b[1]), std::max(a[1], b[1])});
            }
        }
    }
    return walls;
}

double analytic_ray(double x, double y, double angle) {
    const double dx = std::cos(angle), dy = std::sin(angle);
    double best = std::numeric_limits<double>::infinity();
    for (const AxisWall& w : analytic_walls()) {
        if (w.horizontal) {
            if (std::abs(dy) < 1e-15) continue;
            const double t = (w.c - y) / dy;
            const double px = x + t * dx;
            if (t >= 0 && px >= w.lo - 1e-12 && px <= w.hi + 1e-12) best = std::min(best, t);
        } else {
            if (std::abs(dx) < 1e-15) continue;
            const double t = (w.c - x) / dx;
            const double py = y + t * dy;
            if (t >= 0 && py >= w.lo - 1e-12 && py <= w.hi + 1e-12) best = std::min(best, t);
        }
    }
    return best;
}

// Inside the drivable band of the L-shaped track.
bool inside_track(double x, double y) {
    const bool in_outer = (x > -3 && x < 43 && y > -3 && y < 19) || (x > -3 && x < 23 && y > -3 && y < 35);
    const bool in_inner = (x > 3 && x < 37 && y > 3 && y < 13) || (x > 3 && x < 17 && y > 3 && y < 29);
    return in_outer && !in_inner;
}

struct Episode {
    bool success = false;
    int steps = 0;
    double progress = 0.0;
};

Episode run_oracle(EnvState s) {
    Episode e;
    while (!s.done) {
        const StepResult r = env_step(s, oracle_action(s));
        s.done = r.done;
        e.success = e.success || r.success;
        e.progress += r.progress;
        ++e.steps;
    }
    return e;
}

}  // namespace

TEST_CASE("env specs") {
    CHECK(env_spec(EnvId::racetrack2d).observation_dim == 13);
    CHECK(env_spec(EnvId::gridmaze).observation_dim == 12);
    CHECK(env_spec(EnvId::pointdash).observation_dim == 6);
    CHECK(env_spec(EnvId::racetrack2d).frame_rate == 10.0);
    CHECK(env_spec(EnvId::gridmaze).frame_rate == 10.0);
    CHECK(env_spec(EnvId::pointdash).frame_rate == 30.0);
    CHECK(env_spec(EnvId::gridmaze).goal_slice == std::pair<std::size_t, std::size_t>{2, 4});
    CHECK_FALSE(env_spec(EnvId::racetrack2d).goal_slice.has_value());
    CHECK(env_spec(EnvId::pointdash).action_width() == 2);
    CHECK(parse_env_id("gridmaze") == EnvId::gridmaze);
    CHECK_THROWS_AS(parse_env_id("halfcheetah"), std::invalid_argument);
}

TEST_CASE("reset is deterministic in the seed") {
    for (EnvId id : {EnvId::racetrack2d, EnvId::gridmaze, EnvId::pointdash}) {
        const auto a = env_reset(id, 42);
        const auto b = env_reset(id, 42);
        CHECK(a.second == b.second);
        CHECK(a.second.size() == env_spec(id).observation_dim);
        CHECK(env_reset(id, 43).second != a.second);
    }
}

TEST_CASE("racetrack reset rays equal analytic wall distances") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto [s, obs] = env_reset(EnvId::racetrack2d, seed);
        const auto& r = std::get<RaceState>(s.physical);
        CHECK(r.x == doctest::Approx(4.0));
        CHECK(std::abs(r.y) <= race::start_jitter);
        CHECK(r.heading == doctest::Approx(0.0));
        const double lat = r.y;
        const std::array<double, 7> expect{3 + lat,           (3 + lat) / std::sin(pi / 3), (3 + lat) / 0.5, 39.0,
                                           (3 - lat) / 0.5,   (3 - lat) / std::sin(pi / 3), 3 - lat};
        for (std::size_t k = 0; k < 7; ++k) CHECK(obs[6 + k] == doctest::Approx(expect[k]).epsilon(1e-12));
    }
}

TEST_CASE("raycasts match the analytic walls along trajectories") {
    Rng rng(3);
    for (int ep = 0; ep < 5; ++ep) {
        auto [s, obs] = env_reset(EnvId::racetrack2d, 100 + ep);
        for (int k = 0; k < 300 && !s.done; ++k) {
            const int a = rng.bernoulli(0.6) ? std::get<int>(oracle_action(s)) : static_cast<int>(rng.below(4));
            const StepResult st = env_step(s, a);
            s.done = st.done;
            const auto& r = std::get<RaceState>(s.physical);
            for (std::size_t j = 0; j < 7; ++j) {
                const double want = analytic_ray(r.x, r.y, r.heading + race::ray_angles[j]);
                CHECK(std::abs(st.observation[6 + j] - want) <= 1e-9);
            }
            CHECK(inside_track(r.x, r.y));
        }
    }
}

TEST_CASE("racetrack forward actions follow the closed-form kinematics") {
    auto [s, obs] = env_reset(EnvId::racetrack2d, 7);
    const auto start = std::get<RaceState>(s.physical);
    // v_{k+1} = damping * min(v_k + accel dt, vmax); x advances by the pre-damping speed.
    double v = 0.0, x = start.x;
    for (int k = 0; k < 40; ++k) {
        const StepResult r = env_step(s, race::forward);
        const double moved = std::min(v + race::accel * race::dt, race::max_speed);
        x += moved * race::dt;
        v = moved * race::damping;
        const auto& now = std::get<RaceState>(s.physical);
        CHECK(now.x == doctest::Approx(x).epsilon(1e-12));
        CHECK(now.y == start.y);
        CHECK(r.observation[2] == doctest::Approx(v).epsilon(1e-12));
        CHECK(r.observation[3] == 0.0);
        CHECK_FALSE(r.success);
    }
}

TEST_CASE("turning changes heading by the turn increment") {
    auto [s, obs] = env_reset(EnvId::racetrack2d, 1);
    env_step(s, race::left);
    CHECK(std::get<RaceState>(s.physical).heading == doctest::Approx(race::turn_rate * race::dt));
    env_step(s, race::right);
    env_step(s, race::right);
    CHECK(std::get<RaceState>(s.physical).heading == doctest::Approx(-race::turn_rate * race::dt));
}

TEST_CASE("wall contact zeroes speed without moving the car") {
    auto [s, obs] = env_reset(EnvId::racetrack2d, 2);
    env_step(s, race::left);
    for (int k = 0; k < 5; ++k) env_step(s, race::left);  // face roughly +y, toward the inner wall
    bool hit = false;
    for (int k = 0; k < 40; ++k) {
        const auto before = std::get<RaceState>(s.physical);
        env_step(s, race::forward);
        const auto& now = std::get<RaceState>(s.physical);
        if (now.speed == 0.0) {
            hit = true;
            CHECK(now.x == before.x);
            CHECK(now.y == before.y);
        }
        CHECK(inside_track(now.x, now.y));
    }
    CHECK(hit);
}

TEST_CASE("stepping a finished episode or with a malformed action throws") {
    auto [s, obs] = env_reset(EnvId::racetrack2d, 0);
    CHECK_THROWS_AS(env_step(s, Vec{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(env_step(s, 4), std::invalid_argument);
    auto [d, dobs] = env_reset(EnvId::pointdash, 0);
    CHECK_THROWS_AS(env_step(d, 0), std::invalid_argument);
    CHECK_THROWS_AS(env_step(d, Vec{0.0}), std::invalid_argument);
    CHECK_THROWS_AS(env_step(d, Vec{0.0, std::nan("")}), std::invalid_argument);
    s.done = true;
    CHECK_THROWS_AS(env_step(s, 0), std::logic_error);
}

TEST_CASE("episode cap ends the episode") {
    auto [s, obs] = env_reset(EnvId::racetrack2d, 0);
    int steps = 0;
    StepResult r;
    do {
        r = env_step(s, race::backward);
        s.done = r.done;
        ++steps;
    } while (!r.done);
    CHECK(steps == env_spec(EnvId::racetrack2d).max_episode_steps);
    CHECK_FALSE(r.success);
}

TEST_CASE("identical action sequences give identical trajectories") {
    for (EnvId id : {EnvId::racetrack2d, EnvId::gridmaze, EnvId::pointdash}) {
        auto [a, oa] = env_reset(id, 5);
        auto [b, ob] = env_reset(id, 5);
        Rng rng(1);
        for (int k = 0; k < 50 && !a.done; ++k) {
            Action act = env_spec(id).discrete() ? Action(static_cast<int>(rng.below(4)))
                                                 : Action(Vec{rng.uniform(-1, 1), rng.uniform(-1, 1)});
            const StepResult ra = env_step(a, act);
            const StepResult rb = env_step(b, act);
            a.done = ra.done;
            b.done = rb.done;
            CHECK(ra.observation == rb.observation);
        }
    }
}

TEST_CASE("oracles succeed on 100 seeded episodes") {
    for (EnvId id : {EnvId::racetrack2d, EnvId::gridmaze}) {
        int ok = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) ok += run_oracle(env_reset(id, seed).first).success;
        CHECK(ok == 100);
    }
    double sum = 0.0, sq = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const double p = run_oracle(env_reset(EnvId::pointdash, seed).first).progress;
        sum += p;
        sq += p * p;
    }
    const double mean = sum / 100.0;
    const double sd = std::sqrt(std::max(0.0, sq / 100.0 - mean * mean));
    CHECK(mean > 0.0);
    CHECK(sd / mean < 0.1);
}

TEST_CASE("oracles recover from perturbed states") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto [s, obs] = env_reset(EnvId::racetrack2d, seed);
        for (int k = 0; k < 20 + 7 * static_cast<int>(seed); ++k) env_step(s, oracle_action(s));
        CHECK(run_oracle(perturb_state(s, 0.3 + 0.035 * static_cast<double>(seed), seed)).success);
    }
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto [s, obs] = env_reset(EnvId::gridmaze, seed);
        CHECK(run_oracle(perturb_state(s, 0.5, seed)).success);
    }
    const double base = run_oracle(env_reset(EnvId::pointdash, 0).first).progress;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto [s, obs] = env_reset(EnvId::pointdash, seed);
        for (int k = 0; k < 30; ++k) env_step(s, oracle_action(s));
        const EnvState p = perturb_state(s, 1.0, seed);
        CHECK(run_oracle(p).progress + std::get<DashState>(p.physical).x >= 0.9 * base);
    }
}

TEST_CASE("racetrack oracle drives forward when centered and aligned on a straight") {
    EnvState s = env_reset(EnvId::racetrack2d, 0).first;
    auto& r = std::get<RaceState>(s.physical);
    for (double x : {6.0, 15.0, 25.0}) {
        r.x = x;
        r.y = 0.0;
        r.heading = 0.0;
        CHECK(std::get<int>(oracle_action(s)) == race::forward);
    }
}

TEST_CASE("perturbation is bounded and deterministic") {
    auto [s, obs] = env_reset(EnvId::racetrack2d, 3);
    for (int k = 0; k < 30; ++k) env_step(s, oracle_action(s));
    CHECK(std::get<RaceState>(perturb_state(s, 0.0, 1).physical).x == std::get<RaceState>(s.physical).x);
    const EnvState p = perturb_state(s, 1.0, 9);
    const auto& a = std::get<RaceState>(s.physical);
    const auto& b = std::get<RaceState>(p.physical);
    CHECK(std::abs(std::remainder(b.heading - a.heading - pi, 2 * pi)) < 1e-12);
    CHECK(inside_track(b.x, b.y));
    CHECK(race::wall_clearance(race_track(), b.x, b.y) >= race::car_radius);
    CHECK(std::get<RaceState>(perturb_state(s, 1.0, 9).physical).x == b.x);
    CHECK_THROWS_AS(perturb_state(s, -0.1, 0), std::invalid_argument);

    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto [m, mobs] = env_reset(EnvId::gridmaze, seed);
        const auto& before = std::get<MazeState>(m.physical);
        const EnvState q = perturb_state(m, 0.1 + 0.03 * static_cast<double>(seed), seed);
        const auto& after = std::get<MazeState>(q.physical);
        CHECK((after.ax != before.ax || after.ay != before.ay));
        CHECK(maze::is_free(after.ax, after.ay));
        CHECK(after.gx == before.gx);
        CHECK(after.gy == before.gy);
    }
}

TEST_CASE("gridmaze reset, goal slice and raycasts") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto [s, obs] = env_reset(EnvId::gridmaze, seed);
        const auto& m = std::get<MazeState>(s.physical);
        CHECK((m.ax != m.gx || m.ay != m.gy));
        CHECK(maze::is_free(m.ax, m.ay));
        CHECK(maze::is_free(m.gx, m.gy));
        CHECK(obs[2] == m.gx);
        CHECK(obs[3] == m.gy);
        for (std::size_t k = 0; k < 8; ++k) {
            int n = 0;
            const auto d = maze::ray_dirs[k];
            while (maze::is_free(m.ax + (n + 1) * d[0], m.ay + (n + 1) * d[1])) ++n;
            CHECK(obs[4 + k] == n);
        }
    }
}

TEST_CASE("gridmaze moves, blocked moves and goal arrival") {
    EnvState s = env_reset(EnvId::gridmaze, 0).first;
    auto& m = std::get<MazeState>(s.physical);
    m = MazeState{1, 1, 2, 1};
    // (1,0) is the boundary wall.
    StepResult r = env_step(s, maze::south);
    CHECK(std::get<MazeState>(s.physical).ax == 1);
    CHECK(std::get<MazeState>(s.physical).ay == 1);
    CHECK_FALSE(r.done);
    CHECK(std::get<int>(oracle_action(s)) == maze::east);
    r = env_step(s, maze::east);
    CHECK(r.success);
    CHECK(r.done);
}

TEST_CASE("gridmaze oracle follows a shortest path") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const EnvState s = env_reset(EnvId::gridmaze, seed).first;
        const auto& m = std::get<MazeState>(s.physical);
        // Independent BFS over the free cells.
        std::vector<int> dist(maze::size * maze::size, -1);
        std::deque<std::array<int, 2>> q{{m.gx, m.gy}};
        dist[m.gy * maze::size + m.gx] = 0;
        while (!q.empty()) {
            const auto c = q.front();
            q.pop_front();
            for (const auto& mv : maze::moves) {
                const int nx = c[0] + mv[0], ny = c[1] + mv[1];
                if (maze::is_free(nx, ny) && dist[ny * maze::size + nx] < 0) {
                    dist[ny * maze::size + nx] = dist[c[1] * maze::size + c[0]] + 1;
                    q.push_back({nx, ny});
                }
            }
        }
        const Episode e = run_oracle(s);
        CHECK(e.success);
        CHECK(e.steps == dist[m.ay * maze::size + m.ax]);
        CHECK(static_cast<int>(maze::shortest_path(m.ax, m.ay, m.gx, m.gy).size()) == e.steps + 1);
    }
}

TEST_CASE("pointdash fixed points") {
    EnvState s = env_reset(EnvId::pointdash, 0).first;
    auto& d = std::get<DashState>(s.physical);
    d = DashState{0.0, 0.0, 0.0, 0.0};
    const StepResult r = env_step(s, Vec{0.0, 0.0});
    CHECK(std::get<DashState>(s.physical).x == 0.0);
    CHECK(std::get<DashState>(s.physical).y == 0.0);
    CHECK(r.progress == 0.0);
    CHECK_FALSE(r.success);

    std::get<DashState>(s.physical) = DashState{0.3, 0.0, dash::target_speed, 0.0};
    const Vec a = std::get<Vec>(oracle_action(s));
    CHECK(a[0] == 0.0);
    CHECK(a[1] == 0.0);
}

TEST_CASE("pointdash stays in its corridor") {
    auto [s, obs] = env_reset(EnvId::pointdash, 4);
    Rng rng(8);
    while (!s.done) {
        const StepResult r = env_step(s, Vec{rng.uniform(-1, 1), rng.uniform(-1, 1)});
        s.done = r.done;
        CHECK(std::abs(r.observation[1]) <= dash::half_width);
        CHECK_FALSE(r.success);
    }
}
