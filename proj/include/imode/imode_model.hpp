#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "imode/episode.hpp"
#include "imode/hybrid.hpp"
#include "imode/nn.hpp"

namespace imode {

enum class ImodeVariant { Switch, Decay, General };
std::string to_string(ImodeVariant v);
ImodeVariant imode_variant_from_string(const std::string& s);

struct ImodeDims {
    int n_x = 0, n_a = 0;
    int n_h = 0, n_zx = 0, n_za = 0;
};

// One wired variant:
//   Switch : f_h = z_x + z_a, zero flows, identity decoder (n_h = n_zx = n_za = n_x)
//   Decay  : MLP f_h and f_x, f_a = -alpha * z_a with learnable alpha > 0,
//            identity decoder (n_h = n_x)
//   General: every component an MLP, trainable linear state embedding
// Jump maps g_x, g_a are MLPs over concat(h, z, event vector) in all variants.
struct ImodeModel {
    ImodeVariant variant = ImodeVariant::General;
    ImodeDims dims;
    int hidden = 40;
    ParamStore params;

    std::optional<Mlp> f_h, f_x, f_a, dec;
    Mlp g_x, g_a;
    std::optional<Linear> embed;
    int alpha_raw = -1;  // Decay only; alpha = exp(alpha_raw)

    double alpha() const;

    FlowSpec flow_spec(Session& s) const;
    Decoder decoder(Session& s) const;
    // h(0) embeds the first observation; z_x(0) = z_a(0) = 0.
    HybridState initial_state(Session& s, const std::vector<double>& x0) const;
};

// dims needs n_x and n_a; latent sizes are derived from the variant
// constraints (Switch forces n_h = n_zx = n_za = n_x; identity decoders force
// n_h = n_x).
ImodeModel build_variant(ImodeVariant variant, ImodeDims dims, int hidden, uint64_t seed);

// Runs the executor over the first k_obs observations, applying every
// observation and intervention jump in that window, and returns the state at
// the last prefix observation time.
HybridState encode_prefix(const ImodeModel& m, Session& s, const Episode& ep, int k_obs, double dt,
                          StateTrace* trace = nullptr);

struct RolloutResult {
    std::vector<std::pair<double, Val>> preds;  // one per target time
    Val loss;                                   // mean squared reconstruction error (when targets exist)
    double loss_value = 0.0;
};

// Free rollout from `state` to `horizon`: only intervention jumps are
// applied, and x_hat is decoded at every observation time in
// (state.t, horizon]. The loss covers exactly those target times.
RolloutResult rollout(const ImodeModel& m, Session& s, HybridState state, const Episode& ep,
                      double horizon, double dt, StateTrace* trace = nullptr);

// (1/K) * sum_k ||x_k - xhat_k||^2
Val reconstruction_loss(Tape& tape, const std::vector<Val>& preds,
                        const std::vector<std::vector<double>>& truths);

}  // namespace imode
