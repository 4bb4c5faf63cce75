#pragma once

#include <string>

#include "imode/param_store.hpp"
#include "imode/rng.hpp"
#include "imode/tape.hpp"

namespace imode {

// Weights uniform in +-1/sqrt(fan_in), biases zero.
Tensor init_weight(int out_dim, int in_dim, Rng& rng);

struct Linear {
    int in = 0, out = 0;
    int w = -1, b = -1;  // parameter ids

    static Linear create(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng);
    Val forward(Session& s, Val x) const;
};

// Two linear layers with one LeakyReLU in between.
struct Mlp {
    Linear l1, l2;
    double slope = 0.01;

    static Mlp create(ParamStore& store, const std::string& prefix, int in, int hidden, int out, Rng& rng);
    Val forward(Session& s, Val x) const;
    int in() const { return l1.in; }
    int out() const { return l2.out; }
};

// Standard GRU cell:
//   u = sigmoid(Wu x + Uu h + bu)
//   r = sigmoid(Wr x + Ur h + br)
//   c = tanh(Wc x + Uc (r*h) + bc)
//   h' = (1-u)*h + u*c
struct GruCell {
    int in = 0, hidden = 0;
    int wu = -1, uu = -1, bu = -1;
    int wr = -1, ur = -1, br = -1;
    int wc = -1, uc = -1, bc = -1;

    static GruCell create(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng);
    Val step(Session& s, Val h, Val x) const;
};

// v <- rho*v + (1-rho)*g^2 ; p <- p - lr*g/(sqrt(v)+eps)
struct Rmsprop {
    double lr = 1e-3;
    double rho = 0.99;
    double eps = 1e-8;
    std::vector<Tensor> v;  // lazily sized on first step

    void step(ParamStore& params, const Grads& grads);
};

// Scales gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(Grads& grads, double max_norm);

}  // namespace imode
