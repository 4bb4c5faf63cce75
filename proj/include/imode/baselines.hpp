#pragma once

#include <optional>
#include <string>
#include <vector>

#include "imode/episode.hpp"
#include "imode/hybrid.hpp"
#include "imode/nn.hpp"

namespace imode {

// Per-timestep input for the comparison models: observation and intervention
// aligned by time and concatenated, with the intervention zero-filled when
// absent.
struct AlignedInput {
    std::vector<double> v;  // width n_x + n_a
    double dt_prev = 1.0;
};

std::vector<AlignedInput> align(const Episode& ep, int n_a);

enum class BaselineKind { GruDeltaT, GruDecay, OdeRnn };
std::string to_string(BaselineKind k);
BaselineKind baseline_kind_from_string(const std::string& s);

struct BaselineModel {
    BaselineKind kind = BaselineKind::GruDeltaT;
    int n_x = 0, n_a = 0, hidden = 40;
    ParamStore params;

    GruCell cell;     // input width n_x+n_a (+1 for the dt feature of GRU-dt)
    Linear readout;   // hidden -> n_x
    std::optional<Mlp> flow;  // OdeRnn only
    int w_raw = -1;           // GruDecay only; per-dim decay w = softplus(w_raw)
};

BaselineModel build_baseline(BaselineKind kind, int n_x, int n_a, int hidden, uint64_t seed);

// GRU step on [input; dt].
Val gru_deltat_step(const BaselineModel& m, Session& s, Val h, const AlignedInput& in);

// h decayed elementwise by exp(-w*dt), then a GRU step on the input.
Val gru_decay_step(const BaselineModel& m, Session& s, Val h, const AlignedInput& in);
Val decayed_hidden(Tape& tape, Val h, Val w, double dt);

struct BaselinePrediction {
    std::vector<std::pair<double, Val>> preds;
};

// Teacher-forced prefix over the first k_obs aligned inputs, then free
// evolution: the recurrent models keep stepping on zero-filled observation
// segments, the impulsive model jumps only at intervention times. Readout
// decodes each target time from the pre-jump state.
BaselinePrediction baseline_rollout(const BaselineModel& m, Session& s, const Episode& ep, int k_obs,
                                    double horizon, double dt, StateTrace* trace = nullptr);

// One-step-ahead teacher forcing: predict x_{k+1} from inputs up to k.
Val gru_one_step_loss(const BaselineModel& m, Session& s, const Episode& ep);

// Prefix-plus-rollout reconstruction loss, same protocol as the hybrid model.
Val odernn_rollout_loss(const BaselineModel& m, Session& s, const Episode& ep, int k_obs, double horizon,
                        double dt);

}  // namespace imode
