#include "imode/simulators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "imode/rng.hpp"

namespace imode {

std::pair<Vec2, Vec2> elastic_collision(const Vec2& p1, const Vec2& v1, const Vec2& p2, const Vec2& v2) {
    const double dx = p2[0] - p1[0], dy = p2[1] - p1[1];
    const double d2 = dx * dx + dy * dy;
    if (d2 <= 0.0) throw std::invalid_argument("elastic_collision: coincident centers");
    // Project the relative velocity on the line of centers and exchange it.
    const double k = ((v2[0] - v1[0]) * dx + (v2[1] - v1[1]) * dy) / d2;
    Vec2 v1p{v1[0] + k * dx, v1[1] + k * dy};
    Vec2 v2p{v2[0] - k * dx, v2[1] - k * dy};
    return {v1p, v2p};
}

nlohmann::json MovingBallConfig::to_json() const {
    return {{"length", length},
            {"radius", radius},
            {"min_speed", min_speed},
            {"max_speed", max_speed},
            {"min_hit_speed", min_hit_speed},
            {"max_hit_speed", max_hit_speed},
            {"cone_half_angle", cone_half_angle},
            {"min_events", min_events},
            {"max_events", max_events},
            {"first_event_time", first_event_time},
            {"last_event_time", last_event_time}};
}

MovingBallConfig MovingBallConfig::from_json(const nlohmann::json& j) {
    MovingBallConfig c;
    c.length = j.value("length", c.length);
    c.radius = j.value("radius", c.radius);
    c.min_speed = j.value("min_speed", c.min_speed);
    c.max_speed = j.value("max_speed", c.max_speed);
    c.min_hit_speed = j.value("min_hit_speed", c.min_hit_speed);
    c.max_hit_speed = j.value("max_hit_speed", c.max_hit_speed);
    c.cone_half_angle = j.value("cone_half_angle", c.cone_half_angle);
    c.min_events = j.value("min_events", c.min_events);
    c.max_events = j.value("max_events", c.max_events);
    c.first_event_time = j.value("first_event_time", c.first_event_time);
    c.last_event_time = j.value("last_event_time", c.last_event_time);
    return c;
}

Episode simulate_moving_ball_scripted(const MovingBallConfig& cfg, BallState init,
                                      const std::vector<CollisionEvent>& events, int length) {
    const int n = length > 0 ? length : cfg.length;
    for (size_t i = 0; i < events.size(); ++i) {
        if (i > 0 && events[i].t <= events[i - 1].t)
            throw std::invalid_argument("moving ball: events must be time-ordered");
        if (events[i].t < 0 || events[i].t >= n)
            throw std::invalid_argument("moving ball: event time outside the episode");
    }

    Episode ep;
    BallState s = init;
    size_t ei = 0;
    for (int k = 0; k < n; ++k) {
        ep.times.push_back(static_cast<double>(k));
        ep.x.push_back({s.p[0], s.p[1]});  // position only; velocity is latent
        if (ei < events.size() && events[ei].t == k) {
            const auto& ev = events[ei];
            auto [v1p, v2p] = elastic_collision(s.p, s.v, ev.ball_p, ev.ball_v);
            (void)v2p;  // the intervening ball leaves the scene
            s.v = v1p;
            ep.interventions.push_back({static_cast<double>(k), {ev.ball_p[0], ev.ball_p[1], ev.ball_v[0], ev.ball_v[1]}});
            ++ei;
        }
        s.p[0] += s.v[0];
        s.p[1] += s.v[1];
    }
    ep.validate();
    return ep;
}

namespace {

CollisionEvent sample_collision(const MovingBallConfig& cfg, int t, const BallState& target, Rng& rng) {
    // Contact point on the circle of distance 2r around the target, with the
    // intervening ball closing in within a cone around head-on.
    const double pi = 3.14159265358979323846;
    const double phi = rng.uniform(0.0, 2.0 * pi);
    const Vec2 u{std::cos(phi), std::sin(phi)};
    CollisionEvent ev;
    ev.t = t;
    ev.ball_p = {target.p[0] + 2.0 * cfg.radius * u[0], target.p[1] + 2.0 * cfg.radius * u[1]};
    const double beta = rng.uniform(-cfg.cone_half_angle, cfg.cone_half_angle);
    const double speed = rng.uniform(cfg.min_hit_speed, cfg.max_hit_speed);
    const Vec2 dir{-(u[0] * std::cos(beta) - u[1] * std::sin(beta)),
                   -(u[0] * std::sin(beta) + u[1] * std::cos(beta))};
    ev.ball_v = {target.v[0] + speed * dir[0], target.v[1] + speed * dir[1]};
    return ev;
}

}  // namespace

Episode simulate_moving_ball(const MovingBallConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    BallState init;
    init.p = {rng.uniform01(), rng.uniform01()};
    for (int i = 0; i < 2; ++i) {
        const double mag = rng.uniform(cfg.min_speed, cfg.max_speed);
        init.v[i] = rng.bernoulli(0.5) ? mag : -mag;
    }

    const int n_events = cfg.min_events + static_cast<int>(rng.uniform_int(
                             static_cast<uint64_t>(cfg.max_events - cfg.min_events + 1)));
    std::vector<int> times;
    while (static_cast<int>(times.size()) < n_events) {
        const int t = cfg.first_event_time +
                      static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.last_event_time - cfg.first_event_time + 1)));
        if (std::find(times.begin(), times.end(), t) == times.end()) times.push_back(t);
    }
    std::sort(times.begin(), times.end());

    // The intervening ball is placed relative to the target state at contact
    // time, so walk the trajectory and sample events as they come up.
    std::vector<CollisionEvent> events;
    BallState s = init;
    size_t ti = 0;
    for (int k = 0; k < cfg.length && ti < times.size(); ++k) {
        if (times[ti] == k) {
            CollisionEvent ev = sample_collision(cfg, k, s, rng);
            auto [v1p, v2p] = elastic_collision(s.p, s.v, ev.ball_p, ev.ball_v);
            (void)v2p;
            s.v = v1p;
            events.push_back(ev);
            ++ti;
        }
        s.p[0] += s.v[0];
        s.p[1] += s.v[1];
    }
    return simulate_moving_ball_scripted(cfg, init, events);
}

nlohmann::json ExpDecayConfig::to_json() const {
    return {{"dt", dt},
            {"length", length},
            {"m_v", m_v},
            {"rho", rho},
            {"gamma", gamma},
            {"literal_velocity_update", literal_velocity_update},
            {"effect_hidden", effect_hidden},
            {"effect_scale", effect_scale},
            {"effect_seed", effect_seed}};
}

ExpDecayConfig ExpDecayConfig::from_json(const nlohmann::json& j) {
    ExpDecayConfig c;
    c.dt = j.value("dt", c.dt);
    c.length = j.value("length", c.length);
    if (j.contains("m_v")) c.m_v = j.at("m_v").get<std::array<double, 4>>();
    c.rho = j.value("rho", c.rho);
    c.gamma = j.value("gamma", c.gamma);
    c.literal_velocity_update = j.value("literal_velocity_update", c.literal_velocity_update);
    c.effect_hidden = j.value("effect_hidden", c.effect_hidden);
    c.effect_scale = j.value("effect_scale", c.effect_scale);
    c.effect_seed = j.value("effect_seed", c.effect_seed);
    return c;
}

namespace {

// Fixed randomly-initialized ReLU MLP (6 -> hidden -> 2) mapping
// [x, dx/dt, a] to an additive effect.
struct EffectMlp {
    int hidden;
    std::vector<double> w1;  // hidden x 6
    std::vector<double> w2;  // 2 x hidden

    explicit EffectMlp(const ExpDecayConfig& cfg) : hidden(cfg.effect_hidden) {
        Rng rng(derive_seed(cfg.effect_seed, 0xeffec7));
        const double b1 = 1.0 / std::sqrt(6.0);
        const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        w1.resize(static_cast<size_t>(hidden) * 6);
        for (auto& w : w1) w = rng.uniform(-b1, b1);
        w2.resize(static_cast<size_t>(2 * hidden));
        for (auto& w : w2) w = rng.uniform(-b2, b2);
    }

    Vec2 operator()(const Vec2& x, const Vec2& v, const Vec2& a, double scale) const {
        if (scale == 0.0) return {0.0, 0.0};
        const double in[6] = {x[0], x[1], v[0], v[1], a[0], a[1]};
        Vec2 out{0.0, 0.0};
        for (int i = 0; i < hidden; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) s += w1[static_cast<size_t>(i) * 6 + j] * in[j];
            if (s > 0.0) {
                out[0] += w2[static_cast<size_t>(i)] * s;
                out[1] += w2[static_cast<size_t>(hidden + i)] * s;
            }
        }
        return {scale * out[0], scale * out[1]};
    }
};

}  // namespace

ExpDecayDebug simulate_exponential_decay_scripted(const ExpDecayConfig& cfg, Vec2 x0, Vec2 v0,
                                                  const std::vector<std::optional<Vec2>>& schedule,
                                                  int length) {
    const int n = length > 0 ? length : cfg.length;
    const EffectMlp mlp(cfg);
    const auto& m = cfg.m_v;

    ExpDecayDebug dbg;
    Episode& ep = dbg.episode;
    Vec2 x = x0, v = v0, e{0.0, 0.0};
    ep.times.push_back(0.0);
    ep.x.push_back({x[0], x[1]});
    dbg.effects.push_back(e);
    for (int k = 1; k < n; ++k) {
        x = {x[0] + cfg.dt * (v[0] + e[0]), x[1] + cfg.dt * (v[1] + e[1])};
        const Vec2 mv{m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1]};
        if (cfg.literal_velocity_update) {
            v = mv;
        } else {
            v = {v[0] + cfg.dt * (mv[0] - v[0]), v[1] + cfg.dt * (mv[1] - v[1])};
        }
        e = {cfg.gamma * e[0], cfg.gamma * e[1]};
        if (k < static_cast<int>(schedule.size()) && schedule[static_cast<size_t>(k)]) {
            const Vec2 a = *schedule[static_cast<size_t>(k)];
            const Vec2 add = mlp(x, v, a, cfg.effect_scale);
            e = {e[0] + add[0], e[1] + add[1]};
            ep.interventions.push_back({static_cast<double>(k), {a[0], a[1]}});
        }
        ep.times.push_back(static_cast<double>(k));
        ep.x.push_back({x[0], x[1]});
        dbg.effects.push_back(e);
    }
    ep.validate();
    return dbg;
}

ExpDecayDebug simulate_exponential_decay_debug(const ExpDecayConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    const Vec2 x0{rng.uniform01(), rng.uniform01()};
    const Vec2 v0{rng.uniform01(), rng.uniform01()};
    std::vector<std::optional<Vec2>> schedule(static_cast<size_t>(cfg.length));
    for (int k = 1; k < cfg.length; ++k)
        if (rng.bernoulli(cfg.rho)) schedule[static_cast<size_t>(k)] = Vec2{rng.normal(), rng.normal()};
    return simulate_exponential_decay_scripted(cfg, x0, v0, schedule);
}

Episode simulate_exponential_decay(const ExpDecayConfig& cfg, uint64_t seed) {
    return simulate_exponential_decay_debug(cfg, seed).episode;
}

std::string to_string(DatasetKind k) {
    return k == DatasetKind::MovingBall ? "moving-ball" : "exp-decay";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "moving-ball") return DatasetKind::MovingBall;
    if (s == "exp-decay") return DatasetKind::ExpDecay;
    throw std::invalid_argument("unknown dataset kind: " + s + " (expected moving-ball or exp-decay)");
}

nlohmann::json GeneratorConfig::to_json() const {
    return {{"kind", to_string(kind)}, {"moving_ball", ball.to_json()}, {"exp_decay", decay.to_json()}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    if (j.contains("kind")) c.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("moving_ball")) c.ball = MovingBallConfig::from_json(j.at("moving_ball"));
    if (j.contains("exp_decay")) c.decay = ExpDecayConfig::from_json(j.at("exp_decay"));
    return c;
}

namespace {

Episode simulate_one(const GeneratorConfig& cfg, uint64_t seed) {
    return cfg.kind == DatasetKind::MovingBall ? simulate_moving_ball(cfg.ball, seed)
                                               : simulate_exponential_decay(cfg.decay, seed);
}

}  // namespace

DatasetSplit generate_dataset(const GeneratorConfig& cfg, int n_train, int n_val, int n_test, uint64_t seed) {
    if (n_train <= 0 || n_val <= 0 || n_test <= 0)
        throw std::invalid_argument("generate_dataset: counts must be positive");
    DatasetSplit split;
    for (int i = 0; i < n_train; ++i) split.train.push_back(simulate_one(cfg, derive_seed(seed, 0, static_cast<uint64_t>(i))));
    for (int i = 0; i < n_val; ++i) split.val.push_back(simulate_one(cfg, derive_seed(seed, 1, static_cast<uint64_t>(i))));
    for (int i = 0; i < n_test; ++i) split.test.push_back(simulate_one(cfg, derive_seed(seed, 2, static_cast<uint64_t>(i))));
    return split;
}

namespace {

Episode sub_episode(const Episode& ep, int from, int count) {
    Episode out;
    for (int k = from; k < from + count; ++k) {
        out.times.push_back(ep.times[static_cast<size_t>(k)]);
        out.x.push_back(ep.x[static_cast<size_t>(k)]);
    }
    for (const auto& iv : ep.interventions)
        if (iv.t >= ep.times[static_cast<size_t>(from)] - 1e-9 &&
            iv.t <= ep.times[static_cast<size_t>(from + count - 1)] + 1e-9)
            out.interventions.push_back(iv);
    out.validate();
    return out;
}

}  // namespace

CounterfactualPair make_counterfactual_pair(const GeneratorConfig& cfg, uint64_t seed) {
    constexpr int kPrefix = 10, kBranch = 10;
    const int total = kPrefix + kBranch;
    Rng rng(derive_seed(seed, 0xcf));

    Episode full_a, full_b;
    if (cfg.kind == DatasetKind::MovingBall) {
        BallState init;
        init.p = {rng.uniform01(), rng.uniform01()};
        for (int i = 0; i < 2; ++i) {
            const double mag = rng.uniform(cfg.ball.min_speed, cfg.ball.max_speed);
            init.v[i] = rng.bernoulli(0.5) ? mag : -mag;
        }
        // Ballistic prefix, so the state at the split is known in closed form.
        BallState at_split = init;
        at_split.p = {init.p[0] + kPrefix * init.v[0], init.p[1] + kPrefix * init.v[1]};
        const CollisionEvent ev = sample_collision(cfg.ball, kPrefix, at_split, rng);
        full_a = simulate_moving_ball_scripted(cfg.ball, init, {ev}, total);
        full_b = simulate_moving_ball_scripted(cfg.ball, init, {}, total);
    } else {
        const Vec2 x0{rng.uniform01(), rng.uniform01()};
        const Vec2 v0{rng.uniform01(), rng.uniform01()};
        std::vector<std::optional<Vec2>> sched_b(static_cast<size_t>(total));
        for (int k = 1; k < kPrefix; ++k)
            if (rng.bernoulli(cfg.decay.rho)) sched_b[static_cast<size_t>(k)] = Vec2{rng.normal(), rng.normal()};
        auto sched_a = sched_b;
        sched_a[kPrefix] = Vec2{rng.normal(), rng.normal()};
        full_a = simulate_exponential_decay_scripted(cfg.decay, x0, v0, sched_a, total).episode;
        full_b = simulate_exponential_decay_scripted(cfg.decay, x0, v0, sched_b, total).episode;
    }

    CounterfactualPair pair;
    pair.prefix = sub_episode(full_a, 0, kPrefix);
    pair.branch_a = sub_episode(full_a, kPrefix, kBranch);
    pair.branch_b = sub_episode(full_b, kPrefix, kBranch);
    return pair;
}

std::vector<CounterfactualPair> generate_pairs(const GeneratorConfig& cfg, int n, uint64_t seed) {
    std::vector<CounterfactualPair> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(make_counterfactual_pair(cfg, derive_seed(seed, 3, static_cast<uint64_t>(i))));
    return out;
}

}  // namespace imode
