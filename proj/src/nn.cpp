#include "imode/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace imode {

Tensor init_weight(int out_dim, int in_dim, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    Tensor t = Tensor::zeros({out_dim, in_dim});
    for (auto& v : t.values) v = rng.uniform(-bound, bound);
    return t;
}

Linear Linear::create(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("Linear: dimensions must be positive");
    Linear l;
    l.in = in;
    l.out = out;
    l.w = store.add(prefix + ".w", init_weight(out, in, rng));
    l.b = store.add(prefix + ".b", Tensor::zeros({out}));
    return l;
}

Val Linear::forward(Session& s, Val x) const {
    return s.tape.add(s.tape.matvec(s.param(w), x), s.param(b));
}

Mlp Mlp::create(ParamStore& store, const std::string& prefix, int in, int hidden, int out, Rng& rng) {
    if (hidden <= 0) throw std::invalid_argument("Mlp: hidden width must be positive");
    Mlp m;
    m.l1 = Linear::create(store, prefix + ".l1", in, hidden, rng);
    m.l2 = Linear::create(store, prefix + ".l2", hidden, out, rng);
    return m;
}

Val Mlp::forward(Session& s, Val x) const {
    return l2.forward(s, s.tape.leaky_relu(l1.forward(s, x), slope));
}

GruCell GruCell::create(ParamStore& store, const std::string& prefix, int in, int hidden, Rng& rng) {
    GruCell c;
    c.in = in;
    c.hidden = hidden;
    c.wu = store.add(prefix + ".wu", init_weight(hidden, in, rng));
    c.uu = store.add(prefix + ".uu", init_weight(hidden, hidden, rng));
    c.bu = store.add(prefix + ".bu", Tensor::zeros({hidden}));
    c.wr = store.add(prefix + ".wr", init_weight(hidden, in, rng));
    c.ur = store.add(prefix + ".ur", init_weight(hidden, hidden, rng));
    c.br = store.add(prefix + ".br", Tensor::zeros({hidden}));
    c.wc = store.add(prefix + ".wc", init_weight(hidden, in, rng));
    c.uc = store.add(prefix + ".uc", init_weight(hidden, hidden, rng));
    c.bc = store.add(prefix + ".bc", Tensor::zeros({hidden}));
    return c;
}

Val GruCell::step(Session& s, Val h, Val x) const {
    Tape& t = s.tape;
    if (t.size(h) != hidden || t.size(x) != in) throw std::invalid_argument("GruCell: dimension mismatch");
    Val u = t.sigmoid(t.add(t.add(t.matvec(s.param(wu), x), t.matvec(s.param(uu), h)), s.param(bu)));
    Val r = t.sigmoid(t.add(t.add(t.matvec(s.param(wr), x), t.matvec(s.param(ur), h)), s.param(br)));
    Val c = t.tanh(t.add(t.add(t.matvec(s.param(wc), x), t.matvec(s.param(uc), t.mul(r, h))), s.param(bc)));
    Val keep = t.mul(t.affine(u, -1.0, 1.0), h);  // (1-u)*h
    return t.add(keep, t.mul(u, c));
}

void Rmsprop::step(ParamStore& params, const Grads& grads) {
    if (static_cast<int>(grads.g.size()) != params.count())
        throw std::invalid_argument("Rmsprop: gradient set does not match parameter store");
    if (v.empty()) {
        v.reserve(grads.g.size());
        for (int i = 0; i < params.count(); ++i) v.push_back(Tensor::zeros(params.value(i).shape));
    }
    for (int i = 0; i < params.count(); ++i) {
        auto& p = params.value(i).values;
        const auto& g = grads.g[static_cast<size_t>(i)].values;
        auto& vi = v[static_cast<size_t>(i)].values;
        if (g.size() != p.size()) throw std::invalid_argument("Rmsprop: gradient shape mismatch for " + params.name(i));
        for (size_t k = 0; k < p.size(); ++k) {
            vi[k] = rho * vi[k] + (1.0 - rho) * g[k] * g[k];
            if (g[k] != 0.0) p[k] -= lr * g[k] / (std::sqrt(vi[k]) + eps);
        }
    }
}

double clip_global_norm(Grads& grads, double max_norm) {
    const double n = grads.global_norm();
    if (n > max_norm && n > 0.0) grads.scale(max_norm / n);
    return n;
}

}  // namespace imode
