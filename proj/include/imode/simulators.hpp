#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imode/episode.hpp"

namespace imode {

using Vec2 = std::array<double, 2>;

struct BallState {
    Vec2 p{0.0, 0.0};
    Vec2 v{0.0, 0.0};
};

// Equal-mass elastic collision: the velocity components along the line of
// centers are exchanged, tangential components pass through.
// Throws on coincident centers.
std::pair<Vec2, Vec2> elastic_collision(const Vec2& p1, const Vec2& v1, const Vec2& p2, const Vec2& v2);

struct MovingBallConfig {
    int length = 50;
    double radius = 0.1;  // all balls share it; contact distance is 2*radius
    double min_speed = 0.05, max_speed = 0.2;          // target velocity magnitude per axis
    double min_hit_speed = 0.1, max_hit_speed = 0.4;   // closing speed of the intervening ball
    double cone_half_angle = 1.0;                      // rad, approach spread around head-on
    int min_events = 1, max_events = 3;
    int first_event_time = 1, last_event_time = 48;

    nlohmann::json to_json() const;
    static MovingBallConfig from_json(const nlohmann::json& j);
};

// An intervening ball that makes contact with the target exactly at integer
// time t. a_t records its pre-collision position and velocity.
struct CollisionEvent {
    int t = 0;
    Vec2 ball_p{0.0, 0.0};
    Vec2 ball_v{0.0, 0.0};
};

// Deterministic core: ballistic motion on an unbounded plane, with the given
// collisions resolved at their timestamps.
Episode simulate_moving_ball_scripted(const MovingBallConfig& cfg, BallState init,
                                      const std::vector<CollisionEvent>& events, int length = -1);
Episode simulate_moving_ball(const MovingBallConfig& cfg, uint64_t seed);

struct ExpDecayConfig {
    double dt = 0.1;  // Euler step of the generator recursion
    int length = 50;
    std::array<double, 4> m_v{1.5, 0.0, 0.0, -2.5};  // row-major 2x2 velocity update matrix
    double rho = 0.1;                                // intervention probability per step
    double gamma = 0.5;                              // effect decay factor per step
    // The literal recursion dx/dt <- M_v dx/dt diverges geometrically over 50
    // steps; the default integrates the linear ODE with generator (M_v - I)
    // by one Euler step of size dt instead.
    bool literal_velocity_update = false;
    int effect_hidden = 16;
    double effect_scale = 1.0;  // 0 disables the effect map entirely
    uint64_t effect_seed = 1;   // fixed ReLU-MLP weights for the whole dataset

    nlohmann::json to_json() const;
    static ExpDecayConfig from_json(const nlohmann::json& j);
};

struct ExpDecayDebug {
    Episode episode;
    std::vector<Vec2> effects;  // e_k for every step
};

// Step k of the schedule forces an intervention value (overriding the
// Bernoulli draw); nullopt means no intervention at that step.
ExpDecayDebug simulate_exponential_decay_scripted(const ExpDecayConfig& cfg, Vec2 x0, Vec2 v0,
                                                  const std::vector<std::optional<Vec2>>& schedule,
                                                  int length = -1);
ExpDecayDebug simulate_exponential_decay_debug(const ExpDecayConfig& cfg, uint64_t seed);
Episode simulate_exponential_decay(const ExpDecayConfig& cfg, uint64_t seed);

enum class DatasetKind { MovingBall, ExpDecay };
std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);

struct GeneratorConfig {
    DatasetKind kind = DatasetKind::MovingBall;
    MovingBallConfig ball;
    ExpDecayConfig decay;

    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

struct DatasetSplit {
    std::vector<Episode> train, val, test;
};

// Episodes are pure functions of (config, seed); every episode gets a
// distinct derived seed.
DatasetSplit generate_dataset(const GeneratorConfig& cfg, int n_train, int n_val, int n_test, uint64_t seed);

// Ten shared steps, then branch A receives one intervention immediately after
// the split while branch B receives none; both run ten further steps.
CounterfactualPair make_counterfactual_pair(const GeneratorConfig& cfg, uint64_t seed);
std::vector<CounterfactualPair> generate_pairs(const GeneratorConfig& cfg, int n, uint64_t seed);

}  // namespace imode
