#include "imode/hybrid.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace imode {

namespace {

double span_norm(std::span<const double> v, size_t off, size_t len) {
    double s = 0.0;
    for (size_t i = off; i < off + len; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

// Events and decode times as strictly increasing grid indices in [0, n].
std::vector<int64_t> to_indices(const char* what, std::span<const double> times, double t0, double dt,
                                int64_t n) {
    std::vector<int64_t> idx;
    idx.reserve(times.size());
    int64_t prev = -1;
    for (double t : times) {
        const int64_t k = grid_index(t, t0, dt);
        if (k < 0 || k > n) throw std::invalid_argument(std::string(what) + " time outside [start, horizon]");
        if (k <= prev) throw std::invalid_argument(std::string(what) + " times not strictly increasing on the grid");
        idx.push_back(k);
        prev = k;
    }
    return idx;
}

}  // namespace

void EventTimeline::validate() const {
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& ev : events) {
        if (!(ev.t > prev)) throw std::invalid_argument("EventTimeline: times must be strictly increasing");
        if (!ev.x && !ev.a) throw std::invalid_argument("EventTimeline: event carries neither observation nor intervention");
        prev = ev.t;
    }
}

ImodeRunResult run_imode(Tape& tape, const FlowSpec& spec, const Decoder* decoder,
                         const EventTimeline& timeline, HybridState init, double horizon, double dt,
                         std::span<const double> decode_times, StateTrace* trace) {
    timeline.validate();
    if (!decode_times.empty() && decoder == nullptr)
        throw std::invalid_argument("run_imode: decode times given without a decoder");

    const int nh = tape.size(init.h);
    const int nzx = tape.size(init.zx);
    const int nza = tape.size(init.za);
    const int64_t n_steps = grid_index(horizon, init.t, dt);

    std::vector<double> event_times;
    for (const auto& ev : timeline.events) event_times.push_back(ev.t);
    const auto event_idx = to_indices("event", event_times, init.t, dt, n_steps);
    const auto decode_idx = to_indices("decode", decode_times, init.t, dt, n_steps);

    const VectorField field = [&](Tape& t, double /*time*/, Val y) {
        Val h = t.slice(y, 0, nh);
        Val zx = t.slice(y, nh, nzx);
        Val za = t.slice(y, nh + nzx, nza);
        Val dh = spec.f_h(h, zx, za);
        Val dzx = spec.f_x(zx);
        Val dza = spec.f_a(za);
        if (t.size(dh) != nh || t.size(dzx) != nzx || t.size(dza) != nza)
            throw std::invalid_argument("run_imode: flow output dimension mismatch");
        return t.concat({dh, dzx, dza});
    };

    Val y = tape.concat({init.h, init.zx, init.za});
    ImodeRunResult res;
    size_t ei = 0, di = 0;
    for (int64_t k = 0; k <= n_steps; ++k) {
        const double tk = init.t + static_cast<double>(k) * dt;
        if (k > 0) y = rk4_step(tape, field, y, init.t + static_cast<double>(k - 1) * dt, dt);

        if (di < decode_idx.size() && decode_idx[di] == k) {
            res.decoded.emplace_back(tk, (*decoder)(tape.slice(y, 0, nh)));
            ++di;
        }
        if (ei < event_idx.size() && event_idx[ei] == k) {
            const Event& ev = timeline.events[ei];
            Val h = tape.slice(y, 0, nh);
            Val zx = tape.slice(y, nh, nzx);
            Val za = tape.slice(y, nh + nzx, nza);
            if (ev.x) {
                zx = spec.g_x(h, zx, *ev.x);
                if (tape.size(zx) != nzx) throw std::invalid_argument("run_imode: g_x output dimension mismatch");
            }
            if (ev.a) {
                za = spec.g_a(h, za, *ev.a);
                if (tape.size(za) != nza) throw std::invalid_argument("run_imode: g_a output dimension mismatch");
            }
            y = tape.concat({h, zx, za});
            if (trace) trace->events.push_back({tk, ev.x.has_value(), ev.a.has_value()});
            ++ei;
        }
        if (trace) {
            auto v = tape.value(y);
            trace->rows.push_back({tk, span_norm(v, 0, static_cast<size_t>(nh)),
                                   span_norm(v, static_cast<size_t>(nh), static_cast<size_t>(nzx)),
                                   span_norm(v, static_cast<size_t>(nh + nzx), static_cast<size_t>(nza))});
        }
    }

    res.state.h = tape.slice(y, 0, nh);
    res.state.zx = tape.slice(y, nh, nzx);
    res.state.za = tape.slice(y, nh + nzx, nza);
    res.state.t = horizon;
    return res;
}

NjdeRunResult run_njde(Tape& tape, const VectorField& flow, const NjdeJump& jump,
                       const EventTimeline& timeline, Val h0, double t0, double horizon, double dt,
                       const Decoder* decoder, std::span<const double> decode_times, StateTrace* trace) {
    timeline.validate();
    if (!decode_times.empty() && decoder == nullptr)
        throw std::invalid_argument("run_njde: decode times given without a decoder");

    const int nh = tape.size(h0);
    const int64_t n_steps = grid_index(horizon, t0, dt);
    std::vector<double> event_times;
    for (const auto& ev : timeline.events) event_times.push_back(ev.t);
    const auto event_idx = to_indices("event", event_times, t0, dt, n_steps);
    const auto decode_idx = to_indices("decode", decode_times, t0, dt, n_steps);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    Val h = h0;
    NjdeRunResult res;
    size_t ei = 0, di = 0;
    for (int64_t k = 0; k <= n_steps; ++k) {
        const double tk = t0 + static_cast<double>(k) * dt;
        if (k > 0) h = rk4_step(tape, flow, h, t0 + static_cast<double>(k - 1) * dt, dt);

        if (di < decode_idx.size() && decode_idx[di] == k) {
            res.decoded.emplace_back(tk, (*decoder)(h));
            ++di;
        }
        if (ei < event_idx.size() && event_idx[ei] == k) {
            h = jump(h, timeline.events[ei]);
            if (tape.size(h) != nh) throw std::invalid_argument("run_njde: jump output dimension mismatch");
            if (trace) trace->events.push_back({tk, timeline.events[ei].x.has_value(), timeline.events[ei].a.has_value()});
            ++ei;
        }
        if (trace) trace->rows.push_back({tk, span_norm(tape.value(h), 0, static_cast<size_t>(nh)), nan, nan});
    }
    res.h = h;
    res.t = horizon;
    return res;
}

void StateTrace::write_csv(std::ostream& os, int n_x, bool with_split_latents) const {
    os << std::setprecision(17);
    os << "t,norm_h";
    if (with_split_latents) os << ",norm_zx,norm_za";
    for (int i = 0; i < n_x; ++i) os << ",xhat_" << i;
    for (int i = 0; i < n_x; ++i) os << ",x_" << i;
    os << ",event\n";

    const double tol = 1e-6;
    size_t hi = 0, ti = 0, mi = 0;
    for (const auto& row : rows) {
        os << row.t << ',' << row.norm_h;
        if (with_split_latents) os << ',' << row.norm_zx << ',' << row.norm_za;
        while (hi < xhat.size() && xhat[hi].first < row.t - tol) ++hi;
        const bool has_hat = hi < xhat.size() && std::abs(xhat[hi].first - row.t) <= tol;
        for (int i = 0; i < n_x; ++i) {
            os << ',';
            if (has_hat && i < static_cast<int>(xhat[hi].second.size())) os << xhat[hi].second[static_cast<size_t>(i)];
        }
        while (ti < xtruth.size() && xtruth[ti].first < row.t - tol) ++ti;
        const bool has_truth = ti < xtruth.size() && std::abs(xtruth[ti].first - row.t) <= tol;
        for (int i = 0; i < n_x; ++i) {
            os << ',';
            if (has_truth && i < static_cast<int>(xtruth[ti].second.size())) os << xtruth[ti].second[static_cast<size_t>(i)];
        }
        os << ',';
        while (mi < events.size() && events[mi].t < row.t - tol) ++mi;
        if (mi < events.size() && std::abs(events[mi].t - row.t) <= tol) {
            if (events[mi].has_x) os << 'x';
            if (events[mi].has_a) os << 'a';
        }
        os << '\n';
    }
}

}  // namespace imode
