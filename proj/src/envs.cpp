#include "daggerlab/envs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace daggerlab {

namespace {

constexpr double pi = std::numbers::pi;

double wrap_angle(double a) { return std::remainder(a, 2.0 * pi); }

double cross(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

std::vector<std::array<double, 2>> offset_polygon(const std::vector<std::array<double, 2>>& poly, double d) {
    const std::size_t n = poly.size();
    std::vector<std::array<double, 2>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& prev = poly[(i + n - 1) % n];
        const auto& cur = poly[i];
        const auto& next = poly[(i + 1) % n];
        double d1x = cur[0] - prev[0], d1y = cur[1] - prev[1];
        double d2x = next[0] - cur[0], d2y = next[1] - cur[1];
        const double l1 = std::hypot(d1x, d1y), l2 = std::hypot(d2x, d2y);
        d1x /= l1; d1y /= l1; d2x /= l2; d2y /= l2;
        // Left normals; miter join.
        const double n1x = -d1y, n1y = d1x, n2x = -d2y, n2y = d2x;
        const double k = d / (1.0 + n1x * n2x + n1y * n2y);
        out[i] = {cur[0] + k * (n1x + n2x), cur[1] + k * (n1y + n2y)};
    }
    return out;
}

Track build_track() {
    Track t;
    t.centerline = {{0, 0}, {40, 0}, {40, 16}, {20, 16}, {20, 32}, {0, 32}};
    t.half_width = 3.0;
    const std::size_t n = t.centerline.size();
    t.cumulative.resize(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = t.centerline[i];
        const auto& b = t.centerline[(i + 1) % n];
        t.cumulative[i + 1] = t.cumulative[i] + std::hypot(b[0] - a[0], b[1] - a[1]);
    }
    t.perimeter = t.cumulative[n];
    t.inner = offset_polygon(t.centerline, t.half_width);
    t.outer = offset_polygon(t.centerline, -t.half_width);
    for (const auto* poly : {&t.inner, &t.outer}) {
        for (std::size_t i = 0; i < poly->size(); ++i) {
            const auto& a = (*poly)[i];
            const auto& b = (*poly)[(i + 1) % poly->size()];
            t.walls.push_back({a[0], a[1], b[0], b[1]});
        }
    }
    return t;
}

double point_segment_distance(const Segment& s, double x, double y) {
    const double ex = s.x1 - s.x0, ey = s.y1 - s.y0;
    const double len2 = ex * ex + ey * ey;
    double u = ((x - s.x0) * ex + (y - s.y0) * ey) / len2;
    u = std::clamp(u, 0.0, 1.0);
    return std::hypot(s.x0 + u * ex - x, s.y0 + u * ey - y);
}

bool segments_intersect(double ax, double ay, double bx, double by, const Segment& s) {
    const double rx = bx - ax, ry = by - ay;
    const double ex = s.x1 - s.x0, ey = s.y1 - s.y0;
    const double denom = cross(rx, ry, ex, ey);
    if (denom == 0.0) return false;
    const double t = cross(s.x0 - ax, s.y0 - ay, ex, ey) / denom;
    const double u = cross(s.x0 - ax, s.y0 - ay, rx, ry) / denom;
    return t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0;
}

// Layout rows are listed top-down; row r holds y = size - 1 - r.
constexpr std::array<const char*, maze::size> maze_layout = {
    "###########",
    "#.....#...#",
    "#.###.#.#.#",
    "#.#.....#.#",
    "#.#.###.#.#",
    "#...#.....#",
    "###.#.###.#",
    "#...#...#.#",
    "#.#####.#.#",
    "#.........#",
    "###########",
};

std::vector<int> maze_distances_to(int gx, int gy) {
    std::vector<int> dist(maze::size * maze::size, -1);
    std::deque<std::array<int, 2>> frontier{{gx, gy}};
    dist[gy * maze::size + gx] = 0;
    while (!frontier.empty()) {
        auto [x, y] = frontier.front();
        frontier.pop_front();
        for (const auto& m : maze::moves) {
            const int nx = x + m[0], ny = y + m[1];
            if (!maze::is_free(nx, ny) || dist[ny * maze::size + nx] >= 0) continue;
            dist[ny * maze::size + nx] = dist[y * maze::size + x] + 1;
            frontier.push_back({nx, ny});
        }
    }
    return dist;
}

Vec observe_race(const RaceState& r) {
    const Track& t = race_track();
    Vec obs{r.x, r.y, r.speed * std::cos(r.heading), r.speed * std::sin(r.heading), std::cos(r.heading),
            std::sin(r.heading)};
    for (double a : race::ray_angles) obs.push_back(race::raycast(t, r.x, r.y, r.heading + a));
    return obs;
}

Vec observe_maze(const MazeState& m) {
    Vec obs{double(m.ax), double(m.ay), double(m.gx), double(m.gy)};
    for (const auto& d : maze::ray_dirs) obs.push_back(maze::raycast(m.ax, m.ay, d[0], d[1]));
    return obs;
}

Vec observe_dash(const DashState& d) {
    const double phase = 2.0 * pi * d.x / dash::bump_period;
    return {d.x, d.y, d.vx, d.vy, std::sin(phase), std::cos(phase)};
}

StepResult step_race(EnvState& s, int action) {
    RaceState& r = std::get<RaceState>(s.physical);
    const Track& t = race_track();
    switch (action) {
        case race::forward: r.speed = std::min(r.speed + race::accel * race::dt, race::max_speed); break;
        case race::backward: r.speed = std::max(r.speed - race::accel * race::dt, race::min_speed); break;
        case race::left: r.heading = wrap_angle(r.heading + race::turn_rate * race::dt); break;
        case race::right: r.heading = wrap_angle(r.heading - race::turn_rate * race::dt); break;
        default: break;
    }
    const double nx = r.x + r.speed * race::dt * std::cos(r.heading);
    const double ny = r.y + r.speed * race::dt * std::sin(r.heading);
    bool blocked = race::wall_clearance(t, nx, ny) < race::car_radius;
    for (std::size_t i = 0; !blocked && i < t.walls.size(); ++i) {
        blocked = segments_intersect(r.x, r.y, nx, ny, t.walls[i]);
    }
    if (blocked) {
        r.speed = 0.0;
    } else {
        r.x = nx;
        r.y = ny;
    }
    r.speed *= race::damping;
    const double arc = race::project(t, r.x, r.y).first;
    r.progress += std::remainder(arc - r.arc, t.perimeter);
    r.arc = arc;
    ++s.steps;
    StepResult out;
    out.observation = observe_race(r);
    out.success = r.progress >= t.perimeter;
    out.done = out.success || s.steps >= env_spec(s.id).max_episode_steps;
    return out;
}

StepResult step_maze(EnvState& s, int action) {
    MazeState& m = std::get<MazeState>(s.physical);
    const auto& mv = maze::moves[static_cast<std::size_t>(action)];
    if (maze::is_free(m.ax + mv[0], m.ay + mv[1])) {
        m.ax += mv[0];
        m.ay += mv[1];
    }
    ++s.steps;
    StepResult out;
    out.observation = observe_maze(m);
    out.success = m.ax == m.gx && m.ay == m.gy;
    out.done = out.success || s.steps >= env_spec(s.id).max_episode_steps;
    return out;
}

StepResult step_dash(EnvState& s, const Vec& action) {
    DashState& d = std::get<DashState>(s.physical);
    const double a0 = std::clamp(action[0], -1.0, 1.0);
    const double a1 = std::clamp(action[1], -1.0, 1.0);
    const double phase = 2.0 * pi * d.x / dash::bump_period;
    const double fx = dash::accel * a0 - dash::drag * d.vx - dash::bump_drag * 0.5 * (1.0 + std::sin(phase)) * d.vx;
    const double fy = dash::accel * a1 - dash::drag * d.vy + dash::bump_push * d.vx * std::cos(phase);
    d.vx += dash::dt * fx;
    d.vy += dash::dt * fy;
    const double x_before = d.x;
    d.x += dash::dt * d.vx;
    d.y += dash::dt * d.vy;
    if (std::abs(d.y) > dash::half_width) {
        d.y = std::copysign(dash::half_width, d.y);
        d.vy = 0.0;
    }
    ++s.steps;
    StepResult out;
    out.observation = observe_dash(d);
    out.progress = d.x - x_before;
    out.done = s.steps >= env_spec(s.id).max_episode_steps;
    return out;
}

Action race_oracle(const RaceState& r) {
    const Track& t = race_track();
    const double arc = race::project(t, r.x, r.y).first;
    const auto look = race::centerline_at(t, arc + 4.0);
    const double err = wrap_angle(std::atan2(look[1] - r.y, look[0] - r.x) - r.heading);
    // The dead-band has to exceed one turn increment or the oracle oscillates.
    if (std::abs(err) > 0.3) return err > 0.0 ? race::left : race::right;
    return race::forward;
}

Action maze_oracle(const MazeState& m) {
    const std::vector<int> dist = maze_distances_to(m.gx, m.gy);
    const int here = dist[m.ay * maze::size + m.ax];
    for (int a = 0; a < 4; ++a) {
        const int nx = m.ax + maze::moves[a][0], ny = m.ay + maze::moves[a][1];
        if (maze::is_free(nx, ny) && dist[ny * maze::size + nx] == here - 1) return a;
    }
    return maze::north;
}

Action dash_oracle(const DashState& d) {
    const double a0 = std::clamp(2.0 * (dash::target_speed - d.vx), -1.0, 1.0);
    const double a1 = std::clamp(-3.0 * d.y - 1.5 * d.vy, -1.0, 1.0);
    return Vec{a0 + 0.0, a1 + 0.0};
}

}  // namespace

std::string_view to_string(EnvId id) {
    switch (id) {
        case EnvId::racetrack2d: return "racetrack2d";
        case EnvId::gridmaze: return "gridmaze";
        case EnvId::pointdash: return "pointdash";
    }
    return "?";
}

EnvId parse_env_id(std::string_view name) {
    if (name == "racetrack2d") return EnvId::racetrack2d;
    if (name == "gridmaze") return EnvId::gridmaze;
    if (name == "pointdash") return EnvId::pointdash;
    throw std::invalid_argument("unknown env id '" + std::string(name) + "'");
}

std::size_t EnvSpec::action_width() const {
    if (const auto* d = std::get_if<DiscreteActions>(&action_kind)) return static_cast<std::size_t>(d->n);
    return static_cast<std::size_t>(std::get<ContinuousActions>(action_kind).dim);
}

const EnvSpec& env_spec(EnvId id) {
    static const EnvSpec race{EnvId::racetrack2d, 13, DiscreteActions{4}, 600, std::nullopt, 10.0};
    static const EnvSpec grid{EnvId::gridmaze, 12, DiscreteActions{4}, 60, std::pair<std::size_t, std::size_t>{2, 4},
                              10.0};
    static const EnvSpec point{EnvId::pointdash, 6, ContinuousActions{2, -1.0, 1.0}, 300, std::nullopt, 30.0};
    switch (id) {
        case EnvId::racetrack2d: return race;
        case EnvId::gridmaze: return grid;
        case EnvId::pointdash: return point;
    }
    throw std::invalid_argument("unknown env id");
}

const Track& race_track() {
    static const Track track = build_track();
    return track;
}

namespace race {

double raycast(const Track& track, double x, double y, double angle) {
    const double dx = std::cos(angle), dy = std::sin(angle);
    double best = std::numeric_limits<double>::infinity();
    for (const Segment& s : track.walls) {
        const double ex = s.x1 - s.x0, ey = s.y1 - s.y0;
        const double denom = cross(dx, dy, ex, ey);
        if (denom == 0.0) continue;
        const double t = cross(s.x0 - x, s.y0 - y, ex, ey) / denom;
        const double u = cross(s.x0 - x, s.y0 - y, dx, dy) / denom;
        if (t >= 0.0 && u >= 0.0 && u <= 1.0) best = std::min(best, t);
    }
    return best;
}

std::pair<double, double> project(const Track& track, double x, double y) {
    const std::size_t n = track.centerline.size();
    double best_dist = std::numeric_limits<double>::infinity();
    std::pair<double, double> best{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = track.centerline[i];
        const auto& b = track.centerline[(i + 1) % n];
        const double ex = b[0] - a[0], ey = b[1] - a[1];
        const double len = std::hypot(ex, ey);
        const double u = std::clamp(((x - a[0]) * ex + (y - a[1]) * ey) / (len * len), 0.0, 1.0);
        const double px = a[0] + u * ex, py = a[1] + u * ey;
        const double dist = std::hypot(x - px, y - py);
        if (dist < best_dist) {
            best_dist = dist;
            double arc = track.cumulative[i] + u * len;
            if (arc >= track.perimeter) arc -= track.perimeter;
            best = {arc, cross(ex / len, ey / len, x - a[0], y - a[1])};
        }
    }
    return best;
}

std::array<double, 4> centerline_at(const Track& track, double s) {
    s = std::fmod(s, track.perimeter);
    if (s < 0.0) s += track.perimeter;
    const std::size_t n = track.centerline.size();
    std::size_t i = 0;
    while (i + 1 < n && track.cumulative[i + 1] <= s) ++i;
    const auto& a = track.centerline[i];
    const auto& b = track.centerline[(i + 1) % n];
    const double len = track.cumulative[i + 1] - track.cumulative[i];
    const double tx = (b[0] - a[0]) / len, ty = (b[1] - a[1]) / len;
    const double u = s - track.cumulative[i];
    return {a[0] + u * tx, a[1] + u * ty, tx, ty};
}

double wall_clearance(const Track& track, double x, double y) {
    double best = std::numeric_limits<double>::infinity();
    for (const Segment& s : track.walls) best = std::min(best, point_segment_distance(s, x, y));
    return best;
}

}  // namespace race

namespace maze {

bool is_free(int x, int y) {
    if (x < 0 || y < 0 || x >= size || y >= size) return false;
    return maze_layout[static_cast<std::size_t>(size - 1 - y)][x] == '.';
}

std::vector<std::array<int, 2>> free_cells() {
    std::vector<std::array<int, 2>> cells;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (is_free(x, y)) cells.push_back({x, y});
    return cells;
}

std::vector<std::array<int, 2>> shortest_path(int ax, int ay, int gx, int gy) {
    const std::vector<int> dist = maze_distances_to(gx, gy);
    if (!is_free(ax, ay) || dist[ay * size + ax] < 0) return {};
    std::vector<std::array<int, 2>> path{{ax, ay}};
    MazeState m{ax, ay, gx, gy};
    while (m.ax != gx || m.ay != gy) {
        const int a = std::get<int>(maze_oracle(m));
        m.ax += moves[a][0];
        m.ay += moves[a][1];
        path.push_back({m.ax, m.ay});
    }
    return path;
}

double raycast(int x, int y, int dx, int dy) {
    int n = 0;
    while (is_free(x + (n + 1) * dx, y + (n + 1) * dy)) ++n;
    return static_cast<double>(n);
}

}  // namespace maze

void validate_action(EnvId id, const Action& action) {
    const EnvSpec& spec = env_spec(id);
    if (const auto* d = std::get_if<DiscreteActions>(&spec.action_kind)) {
        const int* a = std::get_if<int>(&action);
        if (a == nullptr) throw std::invalid_argument(std::string(to_string(id)) + ": expected a discrete action");
        if (*a < 0 || *a >= d->n) {
            throw std::invalid_argument(std::string(to_string(id)) + ": action index " + std::to_string(*a) +
                                        " out of range");
        }
        return;
    }
    const auto& c = std::get<ContinuousActions>(spec.action_kind);
    const Vec* v = std::get_if<Vec>(&action);
    if (v == nullptr) throw std::invalid_argument(std::string(to_string(id)) + ": expected a continuous action");
    if (v->size() != static_cast<std::size_t>(c.dim)) {
        throw std::invalid_argument(std::string(to_string(id)) + ": action has " + std::to_string(v->size()) +
                                    " components, expected " + std::to_string(c.dim));
    }
    for (double x : *v)
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(to_string(id)) + ": non-finite action");
}

std::pair<EnvState, Vec> env_reset(EnvId id, std::uint64_t seed) {
    Rng rng(mix_seed(seed, "env_reset"));
    EnvState s;
    s.id = id;
    switch (id) {
        case EnvId::racetrack2d: {
            const Track& t = race_track();
            const auto c = race::centerline_at(t, race::start_arc);
            const double lateral = rng.uniform(-race::start_jitter, race::start_jitter);
            RaceState r;
            r.x = c[0] - c[3] * lateral;
            r.y = c[1] + c[2] * lateral;
            r.heading = std::atan2(c[3], c[2]);
            r.arc = race::project(t, r.x, r.y).first;
            s.physical = r;
            break;
        }
        case EnvId::gridmaze: {
            const auto cells = maze::free_cells();
            const std::size_t start = rng.below(cells.size());
            std::size_t goal = rng.below(cells.size() - 1);
            if (goal >= start) ++goal;
            s.physical = MazeState{cells[start][0], cells[start][1], cells[goal][0], cells[goal][1]};
            break;
        }
        case EnvId::pointdash: {
            DashState d;
            d.x = rng.uniform(-dash::reset_jitter, dash::reset_jitter);
            d.y = rng.uniform(-dash::reset_jitter, dash::reset_jitter);
            s.physical = d;
            break;
        }
    }
    return {s, observe(s)};
}

StepResult env_step(EnvState& state, const Action& action) {
    if (state.done) throw std::logic_error(std::string(to_string(state.id)) + ": step after episode end");
    validate_action(state.id, action);
    StepResult r;
    switch (state.id) {
        case EnvId::racetrack2d: r = step_race(state, std::get<int>(action)); break;
        case EnvId::gridmaze: r = step_maze(state, std::get<int>(action)); break;
        case EnvId::pointdash: r = step_dash(state, std::get<Vec>(action)); break;
    }
    state.done = r.done;
    return r;
}

Vec observe(const EnvState& state) {
    return std::visit(
        [](const auto& p) -> Vec {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RaceState>) return observe_race(p);
            else if constexpr (std::is_same_v<T, MazeState>) return observe_maze(p);
            else return observe_dash(p);
        },
        state.physical);
}

Action oracle_action(const EnvState& state) {
    return std::visit(
        [](const auto& p) -> Action {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RaceState>) return race_oracle(p);
            else if constexpr (std::is_same_v<T, MazeState>) return maze_oracle(p);
            else return dash_oracle(p);
        },
        state.physical);
}

EnvState perturb_state(const EnvState& state, double magnitude, std::uint64_t seed) {
    if (magnitude < 0.0) throw std::invalid_argument("perturb_state: magnitude must be non-negative");
    if (magnitude == 0.0) return state;
    Rng rng(mix_seed(seed, "perturb"));
    EnvState out = state;
    if (auto* r = std::get_if<RaceState>(&out.physical)) {
        const Track& t = race_track();
        const double m = std::min(magnitude, 1.0);
        const auto [arc, lateral] = race::project(t, r->x, r->y);
        const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
        const double edge = t.half_width - race::car_radius - 0.3;
        const double target = std::clamp((1.0 - m) * lateral + m * side * edge * rng.uniform(0.6, 1.0), -edge, edge);
        const auto c = race::centerline_at(t, arc);
        r->x = c[0] - c[3] * target;
        r->y = c[1] + c[2] * target;
        r->heading = wrap_angle(r->heading + pi * magnitude);
        r->arc = race::project(t, r->x, r->y).first;
    } else if (auto* mz = std::get_if<MazeState>(&out.physical)) {
        const auto path = maze::shortest_path(mz->ax, mz->ay, mz->gx, mz->gy);
        auto on_path = [&](int x, int y) {
            return std::any_of(path.begin(), path.end(), [&](const auto& c) { return c[0] == x && c[1] == y; });
        };
        const int radius = std::max(1, static_cast<int>(std::lround(magnitude * 20.0)));
        std::vector<std::array<int, 2>> near, far, other;
        for (const auto& c : maze::free_cells()) {
            if ((c[0] == mz->ax && c[1] == mz->ay) || (c[0] == mz->gx && c[1] == mz->gy)) continue;
            if (on_path(c[0], c[1])) {
                other.push_back(c);
                continue;
            }
            const int d = std::abs(c[0] - mz->ax) + std::abs(c[1] - mz->ay);
            (d <= radius ? near : far).push_back(c);
        }
        const auto& pool = !near.empty() ? near : (!far.empty() ? far : other);
        if (!pool.empty()) {
            const auto& c = pool[rng.below(pool.size())];
            mz->ax = c[0];
            mz->ay = c[1];
        }
    } else {
        DashState& d = std::get<DashState>(out.physical);
        d.y = std::clamp(d.y + magnitude * rng.uniform(-0.8, 0.8), -dash::half_width, dash::half_width);
        d.vx -= magnitude * rng.uniform(0.5, 2.0);
        d.vy += magnitude * rng.uniform(-2.0, 2.0);
    }
    return out;
}

}  // namespace daggerlab
