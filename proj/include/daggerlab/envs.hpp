#pragma once

// Deterministic desk-scale environments and their scripted oracle experts.
//
//   racetrack2d  kinematic car on an L-shaped closed track, 4 discrete actions,
//                obs = [x, y, vx, vy, cos h, sin h, 7 raycasts]        (13)
//   gridmaze     11x11 walled maze, goal-conditioned, 4 discrete actions,
//                obs = [ax, ay, gx, gy, 8 raycasts]                     (12)
//   pointdash    damped point mass in a corridor, 2-d continuous accel,
//                obs = [x, y, vx, vy, sin phase, cos phase]             (6)

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "daggerlab/rng.hpp"

namespace daggerlab {

enum class EnvId { racetrack2d, gridmaze, pointdash };

std::string_view to_string(EnvId id);
EnvId parse_env_id(std::string_view name);

struct DiscreteActions {
    int n = 0;
};

struct ContinuousActions {
    int dim = 0;
    double low = -1.0;
    double high = 1.0;
};

/// A discrete action index or a continuous action vector.
using Action = std::variant<int, Vec>;

struct EnvSpec {
    EnvId id{};
    std::size_t observation_dim = 0;
    std::variant<DiscreteActions, ContinuousActions> action_kind;
    int max_episode_steps = 0;
    std::optional<std::pair<std::size_t, std::size_t>> goal_slice;  ///< [begin, end)
    double frame_rate = 10.0;                                        ///< actions per second

    bool discrete() const { return std::holds_alternative<DiscreteActions>(action_kind); }
    /// Number of discrete actions or the continuous action dimension.
    std::size_t action_width() const;
};

const EnvSpec& env_spec(EnvId id);

struct RaceState {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    double speed = 0.0;
    double progress = 0.0;  ///< signed arc length travelled along the centerline
    double arc = 0.0;       ///< current centerline arc parameter in [0, perimeter)
};

struct MazeState {
    int ax = 0;
    int ay = 0;
    int gx = 0;
    int gy = 0;
};

struct DashState {
    double x = 0.0;
    double y = 0.0;
    double vx = 0.0;
    double vy = 0.0;
};

struct EnvState {
    EnvId id{};
    std::variant<RaceState, MazeState, DashState> physical;
    int steps = 0;
    bool done = false;
};

struct StepResult {
    Vec observation;
    bool done = false;
    bool success = false;
    double progress = 0.0;
};

std::pair<EnvState, Vec> env_reset(EnvId id, std::uint64_t seed);

/// Advances `state` in place. Throws on a malformed action or a finished episode.
StepResult env_step(EnvState& state, const Action& action);

Vec observe(const EnvState& state);

/// Scripted expert; stateless, so it gives a sensible action from any state.
Action oracle_action(const EnvState& state);

/// Bounded deterministic perturbation used to manufacture out-of-distribution
/// states. Magnitude 0 returns the state unchanged.
EnvState perturb_state(const EnvState& state, double magnitude, std::uint64_t seed);

/// Throws std::invalid_argument unless `action` fits the action space of `id`.
void validate_action(EnvId id, const Action& action);

// -- racetrack geometry, exposed for tests and rendering ---------------------

struct Segment {
    double x0, y0, x1, y1;
};

struct Track {
    std::vector<std::array<double, 2>> centerline;  ///< closed polygon, counter-clockwise
    std::vector<double> cumulative;                 ///< arc length at each centerline vertex
    double perimeter = 0.0;
    double half_width = 0.0;
    std::vector<Segment> walls;
    std::vector<std::array<double, 2>> inner;  ///< inner wall polygon
    std::vector<std::array<double, 2>> outer;  ///< outer wall polygon
};

const Track& race_track();

namespace race {
inline constexpr double dt = 0.1;
inline constexpr double accel = 8.0;
inline constexpr double max_speed = 6.0;
inline constexpr double min_speed = -3.0;
inline constexpr double turn_rate = 2.5;
inline constexpr double damping = 0.97;
inline constexpr double car_radius = 0.5;
inline constexpr double start_arc = 4.0;
inline constexpr double start_jitter = 1.5;
inline constexpr std::array<double, 7> ray_angles = {-1.5707963267948966, -1.0471975511965976, -0.5235987755982988, 0.0,
                                                     0.5235987755982988,  1.0471975511965976,  1.5707963267948966};
enum Action : int { forward = 0, backward = 1, left = 2, right = 3 };

/// Distance from (x, y) along `angle` to the nearest wall.
double raycast(const Track& track, double x, double y, double angle);
/// Closest centerline arc parameter and signed lateral offset (left positive).
std::pair<double, double> project(const Track& track, double x, double y);
/// Centerline point and unit tangent at arc parameter s (wrapped).
std::array<double, 4> centerline_at(const Track& track, double s);
double wall_clearance(const Track& track, double x, double y);
}  // namespace race

// -- gridmaze ----------------------------------------------------------------

namespace maze {
inline constexpr int size = 11;
enum Action : int { north = 0, south = 1, west = 2, east = 3 };
inline constexpr std::array<std::array<int, 2>, 4> moves = {{{0, 1}, {0, -1}, {-1, 0}, {1, 0}}};
inline constexpr std::array<std::array<int, 2>, 8> ray_dirs = {
    {{0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}}};

bool is_free(int x, int y);
std::vector<std::array<int, 2>> free_cells();
/// Shortest path cells from (ax, ay) to (gx, gy), inclusive; empty if unreachable.
std::vector<std::array<int, 2>> shortest_path(int ax, int ay, int gx, int gy);
double raycast(int x, int y, int dx, int dy);
}  // namespace maze

// -- pointdash ---------------------------------------------------------------

namespace dash {
inline constexpr double dt = 1.0 / 30.0;
inline constexpr double accel = 4.0;
inline constexpr double drag = 0.5;
inline constexpr double bump_drag = 1.0;
inline constexpr double bump_push = 0.8;
inline constexpr double bump_period = 2.0;
inline constexpr double half_width = 1.0;
inline constexpr double target_speed = 3.0;
inline constexpr double reset_jitter = 0.05;
}  // namespace dash

}  // namespace daggerlab
