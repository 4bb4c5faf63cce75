#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "imode/ode.hpp"
#include "imode/tape.hpp"

namespace imode {

// One point of the data timeline. Carries an observation, an intervention,
// or both when they coincide.
struct Event {
    double t = 0.0;
    std::optional<std::vector<double>> x;
    std::optional<std::vector<double>> a;
};

struct EventTimeline {
    std::vector<Event> events;  // strictly increasing t, each with x and/or a
    void validate() const;
};

// The state triple evolved by the intervention-modeling executor: h mixes the
// two latent flows and never jumps; z_x and z_a jump at events.
struct HybridState {
    Val h, zx, za;
    double t = 0.0;
};

// Component functions wired by the model variants. Flow outputs must match
// the corresponding state dimensions.
struct FlowSpec {
    std::function<Val(Val h, Val zx, Val za)> f_h;
    std::function<Val(Val zx)> f_x;
    std::function<Val(Val za)> f_a;
    std::function<Val(Val h, Val zx, const std::vector<double>& x)> g_x;
    std::function<Val(Val h, Val za, const std::vector<double>& a)> g_a;
};

using Decoder = std::function<Val(Val h)>;

// Norm trace over the integration grid, one row per grid point, plus event
// markers and any decoded/true observations attached by the caller.
// norm_zx/norm_za are NaN for models without split latents.
struct StateTrace {
    struct Row {
        double t;
        double norm_h;
        double norm_zx;
        double norm_za;
    };
    struct Marker {
        double t;
        bool has_x = false;
        bool has_a = false;
    };
    std::vector<Row> rows;
    std::vector<Marker> events;
    std::vector<std::pair<double, std::vector<double>>> xhat;
    std::vector<std::pair<double, std::vector<double>>> xtruth;

    // Columns: t, norm_h, [norm_zx, norm_za,] xhat_0..n, x_0..n, event.
    // Cells are empty where a quantity is undefined.
    void write_csv(std::ostream& os, int n_x, bool with_split_latents) const;
};

struct ImodeRunResult {
    HybridState state;                            // at the horizon
    std::vector<std::pair<double, Val>> decoded;  // one entry per decode time
};

// Executes the continuous/discrete dynamics: between events the stacked state
// (h, z_x, z_a) follows (f_h, f_x, f_a) under RK4; at an event, g_x and/or
// g_a update the latents while h passes through unchanged (g_x is applied
// first; both read the pre-jump h). Decoding happens at the requested times
// using the state as of arrival, before that point's jumps.
ImodeRunResult run_imode(Tape& tape, const FlowSpec& spec, const Decoder* decoder,
                         const EventTimeline& timeline, HybridState init, double horizon, double dt,
                         std::span<const double> decode_times, StateTrace* trace);

using NjdeJump = std::function<Val(Val h, const Event& ev)>;

struct NjdeRunResult {
    Val h;
    double t = 0.0;
    std::vector<std::pair<double, Val>> decoded;
};

// Impulsive-system executor: dh/dt = f(t,h) between events, h+ = jump(h, ev)
// at events. Decoding uses the pre-jump state.
NjdeRunResult run_njde(Tape& tape, const VectorField& flow, const NjdeJump& jump,
                       const EventTimeline& timeline, Val h0, double t0, double horizon, double dt,
                       const Decoder* decoder, std::span<const double> decode_times, StateTrace* trace);

}  // namespace imode
