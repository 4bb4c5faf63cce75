#include "imode/imode_model.hpp"

#include <cmath>
#include <stdexcept>

namespace imode {

std::string to_string(ImodeVariant v) {
    switch (v) {
        case ImodeVariant::Switch: return "switch";
        case ImodeVariant::Decay: return "decay";
        case ImodeVariant::General: return "general";
    }
    return "general";
}

ImodeVariant imode_variant_from_string(const std::string& s) {
    if (s == "switch") return ImodeVariant::Switch;
    if (s == "decay") return ImodeVariant::Decay;
    if (s == "general") return ImodeVariant::General;
    throw std::invalid_argument("unknown imode variant: " + s);
}

double ImodeModel::alpha() const {
    if (alpha_raw < 0) throw std::logic_error("alpha is only defined for the decay variant");
    return std::exp(params.value(alpha_raw).values[0]);
}

ImodeModel build_variant(ImodeVariant variant, ImodeDims dims, int hidden, uint64_t seed) {
    if (dims.n_x <= 0 || dims.n_a <= 0) throw std::invalid_argument("build_variant: n_x and n_a required");

    ImodeModel m;
    m.variant = variant;
    m.hidden = hidden;

    switch (variant) {
        case ImodeVariant::Switch:
            // Additive mixing plus identity decoding pin every latent width.
            dims.n_h = dims.n_zx = dims.n_za = dims.n_x;
            break;
        case ImodeVariant::Decay:
            dims.n_h = dims.n_x;  // identity decoder
            if (dims.n_zx <= 0) dims.n_zx = hidden;
            if (dims.n_za <= 0) dims.n_za = hidden;
            break;
        case ImodeVariant::General:
            if (dims.n_h <= 0) dims.n_h = hidden;
            if (dims.n_zx <= 0) dims.n_zx = hidden;
            if (dims.n_za <= 0) dims.n_za = hidden;
            break;
    }
    m.dims = dims;

    Rng rng(derive_seed(seed, 0x1340de));
    if (variant != ImodeVariant::Switch)
        m.f_h = Mlp::create(m.params, "f_h", dims.n_h + dims.n_zx + dims.n_za, hidden, dims.n_h, rng);
    if (variant == ImodeVariant::General || variant == ImodeVariant::Decay)
        m.f_x = Mlp::create(m.params, "f_x", dims.n_zx, hidden, dims.n_zx, rng);
    if (variant == ImodeVariant::General)
        m.f_a = Mlp::create(m.params, "f_a", dims.n_za, hidden, dims.n_za, rng);
    if (variant == ImodeVariant::Decay)
        m.alpha_raw = m.params.add("f_a.log_alpha", Tensor::vec({0.0}));  // alpha starts at 1
    m.g_x = Mlp::create(m.params, "g_x", dims.n_h + dims.n_zx + dims.n_x, hidden, dims.n_zx, rng);
    m.g_a = Mlp::create(m.params, "g_a", dims.n_h + dims.n_za + dims.n_a, hidden, dims.n_za, rng);
    if (variant == ImodeVariant::General) {
        m.dec = Mlp::create(m.params, "dec", dims.n_h, hidden, dims.n_x, rng);
        m.embed = Linear::create(m.params, "embed", dims.n_x, dims.n_h, rng);
    }
    return m;
}

FlowSpec ImodeModel::flow_spec(Session& s) const {
    FlowSpec spec;
    Tape& t = s.tape;

    if (variant == ImodeVariant::Switch) {
        spec.f_h = [&t](Val, Val zx, Val za) { return t.add(zx, za); };
        spec.f_x = [this, &t](Val) { return t.zeros(dims.n_zx); };
        spec.f_a = [this, &t](Val) { return t.zeros(dims.n_za); };
    } else {
        spec.f_h = [this, &s, &t](Val h, Val zx, Val za) { return f_h->forward(s, t.concat({h, zx, za})); };
        spec.f_x = [this, &s](Val zx) { return f_x->forward(s, zx); };
        if (variant == ImodeVariant::Decay) {
            spec.f_a = [this, &s, &t](Val za) {
                Val neg_alpha = t.affine(t.exp(s.param(alpha_raw)), -1.0, 0.0);
                return t.smul(za, neg_alpha);
            };
        } else {
            spec.f_a = [this, &s](Val za) { return f_a->forward(s, za); };
        }
    }

    spec.g_x = [this, &s, &t](Val h, Val zx, const std::vector<double>& x) {
        if (static_cast<int>(x.size()) != dims.n_x) throw std::invalid_argument("g_x: observation width mismatch");
        return g_x.forward(s, t.concat({h, zx, t.leaf(std::span<const double>(x), static_cast<int>(x.size()))}));
    };
    spec.g_a = [this, &s, &t](Val h, Val za, const std::vector<double>& a) {
        if (static_cast<int>(a.size()) != dims.n_a) throw std::invalid_argument("g_a: intervention width mismatch");
        return g_a.forward(s, t.concat({h, za, t.leaf(std::span<const double>(a), static_cast<int>(a.size()))}));
    };
    return spec;
}

Decoder ImodeModel::decoder(Session& s) const {
    if (variant == ImodeVariant::General) return [this, &s](Val h) { return dec->forward(s, h); };
    return [](Val h) { return h; };  // identity decoder, n_h == n_x
}

HybridState ImodeModel::initial_state(Session& s, const std::vector<double>& x0) const {
    if (static_cast<int>(x0.size()) != dims.n_x) throw std::invalid_argument("initial_state: x0 width mismatch");
    HybridState st;
    Val x = s.tape.leaf(std::span<const double>(x0), dims.n_x);
    st.h = embed ? embed->forward(s, x) : x;
    st.zx = s.tape.zeros(dims.n_zx);
    st.za = s.tape.zeros(dims.n_za);
    st.t = 0.0;
    return st;
}

namespace {

// Intervention times are a subset of observation times, so the prefix
// timeline is the first k_obs observation events with any coinciding
// interventions merged in.
EventTimeline prefix_timeline(const Episode& ep, int k_obs) {
    EventTimeline tl;
    for (int k = 0; k < k_obs; ++k) {
        Event ev;
        ev.t = ep.times[static_cast<size_t>(k)];
        ev.x = ep.x[static_cast<size_t>(k)];
        if (const auto* a = ep.intervention_at(ev.t)) ev.a = *a;
        tl.events.push_back(std::move(ev));
    }
    return tl;
}

EventTimeline intervention_timeline(const Episode& ep, double t_from_excl, double t_to_incl) {
    EventTimeline tl;
    for (const auto& iv : ep.interventions) {
        if (iv.t > t_from_excl + 1e-9 && iv.t <= t_to_incl + 1e-9) {
            Event ev;
            ev.t = iv.t;
            ev.a = iv.a;
            tl.events.push_back(std::move(ev));
        }
    }
    return tl;
}

}  // namespace

HybridState encode_prefix(const ImodeModel& m, Session& s, const Episode& ep, int k_obs, double dt,
                          StateTrace* trace) {
    if (k_obs < 1 || k_obs > ep.length()) throw std::invalid_argument("encode_prefix: episode has too few observations");
    const FlowSpec spec = m.flow_spec(s);
    const EventTimeline tl = prefix_timeline(ep, k_obs);
    HybridState init = m.initial_state(s, ep.x.front());
    init.t = ep.times.front();
    const double horizon = ep.times[static_cast<size_t>(k_obs - 1)];
    auto run = run_imode(s.tape, spec, nullptr, tl, init, horizon, dt, {}, trace);
    return run.state;
}

RolloutResult rollout(const ImodeModel& m, Session& s, HybridState state, const Episode& ep,
                      double horizon, double dt, StateTrace* trace) {
    const FlowSpec spec = m.flow_spec(s);
    const Decoder dec = m.decoder(s);
    const EventTimeline tl = intervention_timeline(ep, state.t, horizon);

    std::vector<double> targets;
    std::vector<std::vector<double>> truths;
    for (int k = 0; k < ep.length(); ++k) {
        const double t = ep.times[static_cast<size_t>(k)];
        if (t > state.t + 1e-9 && t <= horizon + 1e-9) {
            targets.push_back(t);
            truths.push_back(ep.x[static_cast<size_t>(k)]);
        }
    }

    auto run = run_imode(s.tape, spec, &dec, tl, state, horizon, dt, targets, trace);

    RolloutResult res;
    res.preds = std::move(run.decoded);
    if (!res.preds.empty()) {
        std::vector<Val> pred_vals;
        pred_vals.reserve(res.preds.size());
        for (const auto& [t, v] : res.preds) pred_vals.push_back(v);
        res.loss = reconstruction_loss(s.tape, pred_vals, truths);
        res.loss_value = s.tape.scalar(res.loss);
    }
    if (trace) {
        for (const auto& [t, v] : res.preds) {
            auto vals = s.tape.value(v);
            trace->xhat.emplace_back(t, std::vector<double>(vals.begin(), vals.end()));
        }
    }
    return res;
}

Val reconstruction_loss(Tape& tape, const std::vector<Val>& preds,
                        const std::vector<std::vector<double>>& truths) {
    if (preds.empty() || preds.size() != truths.size())
        throw std::invalid_argument("reconstruction_loss: need equal, nonzero prediction/truth counts");
    Val acc;
    for (size_t k = 0; k < preds.size(); ++k) {
        Val truth = tape.leaf(std::span<const double>(truths[k]), static_cast<int>(truths[k].size()));
        Val sq = tape.sq_norm(tape.sub(preds[k], truth));
        acc = k == 0 ? sq : tape.add(acc, sq);
    }
    return tape.scale(acc, 1.0 / static_cast<double>(preds.size()));
}

}  // namespace imode
