#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "imode/tape.hpp"
#include "imode/tensor.hpp"

namespace imode {

// Named trainable tensors, grouped by dotted prefixes ("f_h.w1", "g_a.b2", ...).
class ParamStore {
public:
    int add(const std::string& name, Tensor t);
    int id_of(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Tensor& value(int id) { return entries_[static_cast<size_t>(id)].value; }
    const Tensor& value(int id) const { return entries_[static_cast<size_t>(id)].value; }
    const std::string& name(int id) const { return entries_[static_cast<size_t>(id)].name; }
    int count() const { return static_cast<int>(entries_.size()); }
    long long coord_count() const;

    std::vector<Tensor> snapshot() const;
    void restore(const std::vector<Tensor>& snap);

    // Checkpoint payload: { name: {"shape": [...], "values": [...]}, ... }
    nlohmann::json to_json() const;
    // Overwrites values of matching names; every entry in `j` must exist here
    // with the same shape.
    void load_json(const nlohmann::json& j);

private:
    struct Entry {
        std::string name;
        Tensor value;
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

// Per-parameter gradients, index-aligned with a ParamStore.
struct Grads {
    std::vector<Tensor> g;

    static Grads zeros_like(const ParamStore& store);
    void scale(double c);
    void add(const Grads& other);
    double global_norm() const;
};

// Binds a ParamStore to a Tape for one forward/backward pass: parameters
// become requires-grad leaves on first use and are cached for reuse.
class Session {
public:
    Session(Tape& tape, const ParamStore& store) : tape(tape), store_(store), bound_(static_cast<size_t>(store.count()), Val{}) {}

    Tape& tape;

    Val param(int id);
    const ParamStore& store() const { return store_; }

    // After tape.backward(): adds dLoss/dParam into `out` for every parameter
    // bound during this pass. Unbound parameters contribute nothing.
    void add_grads_to(Grads& out) const;
    Tensor grad_of(int id) const;

private:
    const ParamStore& store_;
    std::vector<Val> bound_;
};

// Central-difference oracle for backward(): perturbs parameter coordinates,
// re-runs the forward closure, and compares against tape gradients.
// `build_loss` must construct the full graph on the session it is given and
// return a scalar node. Returns the maximum relative error over the checked
// coordinates (all of them, or `max_coords_per_param` sampled ones).
double grad_check(ParamStore& store, const std::function<Val(Session&)>& build_loss, double eps,
                  int max_coords_per_param = -1, uint64_t coord_seed = 1234);

}  // namespace imode
