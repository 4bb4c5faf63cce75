#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "imode/tape.hpp"

namespace imode {

using VectorField = std::function<Val(Tape&, double t, Val y)>;

// Maps t onto the uniform grid anchored at t0; throws if (t - t0)/dt is not
// within tol of an integer.
int64_t grid_index(double t, double t0, double dt, double tol = 1e-9);

// One classical RK4 update, differentiable end to end.
// Throws on non-finite output values.
Val rk4_step(Tape& tape, const VectorField& f, Val y, double t, double dt);

struct IntegrateResult {
    Val y;                                      // state at t1
    std::vector<std::pair<double, Val>> grid;   // every grid point incl. t0 and t1 (when recorded)
};

// Repeated rk4_step over the uniform grid from t0 to t1.
IntegrateResult integrate(Tape& tape, const VectorField& f, Val y0, double t0, double t1, double dt,
                          bool record_grid = false);

}  // namespace imode
