#include "imode/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "imode/rng.hpp"

namespace imode {

int ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
    const int id = static_cast<int>(entries_.size());
    entries_.push_back({name, std::move(t)});
    index_[name] = id;
    return id;
}

int ParamStore::id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
}

long long ParamStore::coord_count() const {
    long long n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

std::vector<Tensor> ParamStore::snapshot() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
}

void ParamStore::restore(const std::vector<Tensor>& snap) {
    if (snap.size() != entries_.size()) throw std::invalid_argument("ParamStore: snapshot size mismatch");
    for (size_t i = 0; i < snap.size(); ++i) entries_[i].value = snap[i];
}

nlohmann::json ParamStore::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& e : entries_) {
        j[e.name] = {{"shape", e.value.shape}, {"values", e.value.values}};
    }
    return j;
}

void ParamStore::load_json(const nlohmann::json& j) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        const int id = id_of(it.key());
        Tensor& t = entries_[static_cast<size_t>(id)].value;
        const auto shape = it.value().at("shape").get<std::vector<int>>();
        if (shape != t.shape) throw std::invalid_argument("checkpoint: shape mismatch for " + it.key());
        auto vals = it.value().at("values").get<std::vector<double>>();
        if (vals.size() != t.values.size()) throw std::invalid_argument("checkpoint: value count mismatch for " + it.key());
        t.values = std::move(vals);
    }
}

Grads Grads::zeros_like(const ParamStore& store) {
    Grads g;
    g.g.reserve(static_cast<size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i) g.g.push_back(Tensor::zeros(store.value(i).shape));
    return g;
}

void Grads::scale(double c) {
    for (auto& t : g)
        for (auto& v : t.values) v *= c;
}

void Grads::add(const Grads& other) {
    if (other.g.size() != g.size()) throw std::invalid_argument("Grads: size mismatch");
    for (size_t i = 0; i < g.size(); ++i)
        for (size_t k = 0; k < g[i].values.size(); ++k) g[i].values[k] += other.g[i].values[k];
}

double Grads::global_norm() const {
    double s = 0.0;
    for (const auto& t : g)
        for (double v : t.values) s += v * v;
    return std::sqrt(s);
}

Val Session::param(int id) {
    if (id < 0 || id >= store_.count()) throw std::invalid_argument("Session: bad parameter id");
    Val& v = bound_[static_cast<size_t>(id)];
    if (!v.valid()) v = tape.leaf(store_.value(id), /*requires_grad=*/true);
    return v;
}

void Session::add_grads_to(Grads& out) const {
    if (out.g.size() != bound_.size()) throw std::invalid_argument("Session: gradient store mismatch");
    for (size_t i = 0; i < bound_.size(); ++i) {
        if (!bound_[i].valid()) continue;
        auto g = tape.grad(bound_[i]);
        auto& dst = out.g[i].values;
        for (size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
    }
}

Tensor Session::grad_of(int id) const {
    Tensor t = Tensor::zeros(store_.value(id).shape);
    if (bound_[static_cast<size_t>(id)].valid()) {
        auto g = tape.grad(bound_[static_cast<size_t>(id)]);
        std::copy(g.begin(), g.end(), t.values.begin());
    }
    return t;
}

double grad_check(ParamStore& store, const std::function<Val(Session&)>& build_loss, double eps,
                  int max_coords_per_param, uint64_t coord_seed) {
    if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

    Tape tape;
    Session session(tape, store);
    Val loss = build_loss(session);
    tape.backward(loss);
    Grads analytic = Grads::zeros_like(store);
    session.add_grads_to(analytic);

    auto eval = [&]() {
        Tape t2;
        Session s2(t2, store);
        return t2.scalar(build_loss(s2));
    };

    Rng rng(coord_seed);
    double max_rel = 0.0;
    for (int id = 0; id < store.count(); ++id) {
        Tensor& t = store.value(id);
        const int n = t.numel();
        std::vector<int> coords;
        if (max_coords_per_param > 0 && n > max_coords_per_param) {
            for (int k = 0; k < max_coords_per_param; ++k) coords.push_back(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n))));
        } else {
            coords.resize(static_cast<size_t>(n));
            for (int k = 0; k < n; ++k) coords[static_cast<size_t>(k)] = k;
        }
        for (int c : coords) {
            const double orig = t.values[static_cast<size_t>(c)];
            const double an = analytic.g[static_cast<size_t>(id)].values[static_cast<size_t>(c)];
            auto probe = [&](double e) {
                t.values[static_cast<size_t>(c)] = orig + e;
                const double up = eval();
                t.values[static_cast<size_t>(c)] = orig - e;
                const double dn = eval();
                t.values[static_cast<size_t>(c)] = orig;
                const double fd = (up - dn) / (2.0 * e);
                return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            };
            // A piecewise-linear kink inside the probe window inflates the
            // secant; a genuine gradient bug persists at both scales, so take
            // the smaller of two window sizes.
            double rel = probe(eps);
            if (rel > 1e-5) rel = std::min(rel, probe(eps / 16.0));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace imode
