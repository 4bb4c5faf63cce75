#include "imode/baselines.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "imode/imode_model.hpp"

namespace imode {

std::vector<AlignedInput> align(const Episode& ep, int n_a) {
    ep.validate();
    const int n_x = ep.n_x();
    for (const auto& iv : ep.interventions)
        if (static_cast<int>(iv.a.size()) != n_a)
            throw std::invalid_argument("align: intervention width does not match n_a");

    std::vector<AlignedInput> out;
    out.reserve(ep.x.size());
    for (int k = 0; k < ep.length(); ++k) {
        AlignedInput in;
        in.v.assign(static_cast<size_t>(n_x + n_a), 0.0);
        for (int i = 0; i < n_x; ++i) in.v[static_cast<size_t>(i)] = ep.x[static_cast<size_t>(k)][static_cast<size_t>(i)];
        if (const auto* a = ep.intervention_at(ep.times[static_cast<size_t>(k)]))
            for (int i = 0; i < n_a; ++i) in.v[static_cast<size_t>(n_x + i)] = (*a)[static_cast<size_t>(i)];
        in.dt_prev = k == 0 ? 1.0 : ep.times[static_cast<size_t>(k)] - ep.times[static_cast<size_t>(k - 1)];
        out.push_back(std::move(in));
    }
    return out;
}

std::string to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::GruDeltaT: return "gru-dt";
        case BaselineKind::GruDecay: return "gru-decay";
        case BaselineKind::OdeRnn: return "ode-rnn";
    }
    return "gru-dt";
}

BaselineKind baseline_kind_from_string(const std::string& s) {
    if (s == "gru-dt") return BaselineKind::GruDeltaT;
    if (s == "gru-decay") return BaselineKind::GruDecay;
    if (s == "ode-rnn") return BaselineKind::OdeRnn;
    throw std::invalid_argument("unknown baseline kind: " + s);
}

BaselineModel build_baseline(BaselineKind kind, int n_x, int n_a, int hidden, uint64_t seed) {
    if (n_x <= 0 || n_a <= 0 || hidden <= 0) throw std::invalid_argument("build_baseline: bad dimensions");
    BaselineModel m;
    m.kind = kind;
    m.n_x = n_x;
    m.n_a = n_a;
    m.hidden = hidden;
    Rng rng(derive_seed(seed, 0xba5e));
    const int in_width = n_x + n_a + (kind == BaselineKind::GruDeltaT ? 1 : 0);
    m.cell = GruCell::create(m.params, "cell", in_width, hidden, rng);
    m.readout = Linear::create(m.params, "readout", hidden, n_x, rng);
    if (kind == BaselineKind::OdeRnn) m.flow = Mlp::create(m.params, "flow", hidden, hidden, hidden, rng);
    if (kind == BaselineKind::GruDecay)
        m.w_raw = m.params.add("decay.w_raw", Tensor({hidden}, std::vector<double>(static_cast<size_t>(hidden), -2.0)));
    return m;
}

Val gru_deltat_step(const BaselineModel& m, Session& s, Val h, const AlignedInput& in) {
    if (m.kind != BaselineKind::GruDeltaT) throw std::logic_error("gru_deltat_step: wrong model kind");
    std::vector<double> v = in.v;
    v.push_back(in.dt_prev);  // time gap rides along as the last input coordinate
    return m.cell.step(s, h, s.tape.leaf(std::span<const double>(v), static_cast<int>(v.size())));
}

Val decayed_hidden(Tape& tape, Val h, Val w, double dt) {
    return tape.mul(h, tape.exp(tape.affine(w, -dt, 0.0)));
}

Val gru_decay_step(const BaselineModel& m, Session& s, Val h, const AlignedInput& in) {
    if (m.kind != BaselineKind::GruDecay) throw std::logic_error("gru_decay_step: wrong model kind");
    Val w = s.tape.softplus(s.param(m.w_raw));
    Val hd = decayed_hidden(s.tape, h, w, in.dt_prev);
    return m.cell.step(s, hd, s.tape.leaf(std::span<const double>(in.v), static_cast<int>(in.v.size())));
}

namespace {

Val recurrent_step(const BaselineModel& m, Session& s, Val h, const AlignedInput& in) {
    return m.kind == BaselineKind::GruDeltaT ? gru_deltat_step(m, s, h, in) : gru_decay_step(m, s, h, in);
}

void zero_x_segment(AlignedInput& in, int n_x) {
    for (int i = 0; i < n_x; ++i) in.v[static_cast<size_t>(i)] = 0.0;
}

}  // namespace

BaselinePrediction baseline_rollout(const BaselineModel& m, Session& s, const Episode& ep, int k_obs,
                                    double horizon, double dt, StateTrace* trace) {
    if (k_obs < 1 || k_obs > ep.length()) throw std::invalid_argument("baseline_rollout: bad prefix length");
    Tape& t = s.tape;
    BaselinePrediction out;

    if (m.kind == BaselineKind::OdeRnn) {
        // Impulsive executor: jumps at every prefix observation, then only at
        // intervention times with a zero-filled observation segment.
        EventTimeline tl;
        const double t_prefix_end = ep.times[static_cast<size_t>(k_obs - 1)];
        for (int k = 0; k < k_obs; ++k) {
            Event ev;
            ev.t = ep.times[static_cast<size_t>(k)];
            ev.x = ep.x[static_cast<size_t>(k)];
            if (const auto* a = ep.intervention_at(ev.t)) ev.a = *a;
            tl.events.push_back(std::move(ev));
        }
        for (const auto& iv : ep.interventions)
            if (iv.t > t_prefix_end + 1e-9 && iv.t <= horizon + 1e-9) {
                Event ev;
                ev.t = iv.t;
                ev.a = iv.a;
                tl.events.push_back(std::move(ev));
            }

        std::vector<double> targets;
        for (int k = k_obs; k < ep.length(); ++k)
            if (ep.times[static_cast<size_t>(k)] <= horizon + 1e-9) targets.push_back(ep.times[static_cast<size_t>(k)]);

        const VectorField flow = [&m, &s](Tape&, double, Val h) { return m.flow->forward(s, h); };
        const NjdeJump jump = [&m, &s, &t](Val h, const Event& ev) {
            std::vector<double> v(static_cast<size_t>(m.n_x + m.n_a), 0.0);
            if (ev.x)
                for (int i = 0; i < m.n_x; ++i) v[static_cast<size_t>(i)] = (*ev.x)[static_cast<size_t>(i)];
            if (ev.a)
                for (int i = 0; i < m.n_a; ++i) v[static_cast<size_t>(m.n_x + i)] = (*ev.a)[static_cast<size_t>(i)];
            return m.cell.step(s, h, t.leaf(std::span<const double>(v), static_cast<int>(v.size())));
        };
        const Decoder dec = [&m, &s](Val h) { return m.readout.forward(s, h); };

        Val h0 = t.zeros(m.hidden);
        auto run = run_njde(t, flow, jump, tl, h0, ep.times.front(), horizon, dt, &dec, targets, trace);
        out.preds = std::move(run.decoded);
        return out;
    }

    // Recurrent models step on every aligned timestep; beyond the prefix the
    // observation segment is zero-filled and only true interventions remain.
    auto inputs = align(ep, m.n_a);
    Val h = t.zeros(m.hidden);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (trace) trace->rows.push_back({ep.times.front(), 0.0, nan, nan});
    for (int k = 0; k + 1 < ep.length(); ++k) {
        AlignedInput in = inputs[static_cast<size_t>(k)];
        if (k >= k_obs) zero_x_segment(in, m.n_x);
        h = recurrent_step(m, s, h, in);
        const double t_next = ep.times[static_cast<size_t>(k + 1)];
        if (k + 1 >= k_obs && t_next <= horizon + 1e-9)
            out.preds.emplace_back(t_next, m.readout.forward(s, h));
        if (trace) {
            double nh = 0.0;
            for (double x : t.value(h)) nh += x * x;
            trace->rows.push_back({t_next, std::sqrt(nh), nan, nan});
            if (const auto* a = ep.intervention_at(t_next)) {
                (void)a;
                trace->events.push_back({t_next, false, true});
            }
        }
    }
    return out;
}

Val gru_one_step_loss(const BaselineModel& m, Session& s, const Episode& ep) {
    if (ep.length() < 2) throw std::invalid_argument("gru_one_step_loss: need at least two observations");
    Tape& t = s.tape;
    auto inputs = align(ep, m.n_a);
    Val h = t.zeros(m.hidden);
    Val acc;
    for (int k = 0; k + 1 < ep.length(); ++k) {
        h = recurrent_step(m, s, h, inputs[static_cast<size_t>(k)]);
        Val truth = t.leaf(std::span<const double>(ep.x[static_cast<size_t>(k + 1)]), m.n_x);
        Val sq = t.sq_norm(t.sub(m.readout.forward(s, h), truth));
        acc = k == 0 ? sq : t.add(acc, sq);
    }
    return t.scale(acc, 1.0 / static_cast<double>(ep.length() - 1));
}

Val odernn_rollout_loss(const BaselineModel& m, Session& s, const Episode& ep, int k_obs, double horizon,
                        double dt) {
    auto pred = baseline_rollout(m, s, ep, k_obs, horizon, dt, nullptr);
    std::vector<Val> vals;
    std::vector<std::vector<double>> truths;
    for (const auto& [tt, v] : pred.preds) {
        vals.push_back(v);
        for (int k = 0; k < ep.length(); ++k)
            if (std::abs(ep.times[static_cast<size_t>(k)] - tt) <= 1e-9) truths.push_back(ep.x[static_cast<size_t>(k)]);
    }
    return reconstruction_loss(s.tape, vals, truths);
}

}  // namespace imode
