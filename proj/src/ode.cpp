#include "imode/ode.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace imode {

int64_t grid_index(double t, double t0, double dt, double tol) {
    if (!(dt > 0.0)) throw std::invalid_argument("grid_index: dt must be positive");
    const double r = (t - t0) / dt;
    const double k = std::round(r);
    if (std::abs(r - k) > tol)
        throw std::invalid_argument("time " + std::to_string(t) + " is off the integration grid (t0=" +
                                    std::to_string(t0) + ", dt=" + std::to_string(dt) + ")");
    return static_cast<int64_t>(k);
}

Val rk4_step(Tape& tape, const VectorField& f, Val y, double t, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
    Val k1 = f(tape, t, y);
    Val k2 = f(tape, t + 0.5 * dt, tape.axpy(y, k1, 0.5 * dt));
    Val k3 = f(tape, t + 0.5 * dt, tape.axpy(y, k2, 0.5 * dt));
    Val k4 = f(tape, t + dt, tape.axpy(y, k3, dt));
    Val s = tape.add(tape.axpy(k1, tape.add(k2, k3), 2.0), k4);
    Val out = tape.axpy(y, s, dt / 6.0);
    if (!tape.all_finite(out)) throw std::runtime_error("rk4_step: non-finite state at t=" + std::to_string(t));
    return out;
}

IntegrateResult integrate(Tape& tape, const VectorField& f, Val y0, double t0, double t1, double dt,
                          bool record_grid) {
    if (t1 < t0) throw std::invalid_argument("integrate: t1 must be >= t0");
    const int64_t steps = grid_index(t1, t0, dt);
    IntegrateResult res;
    res.y = y0;
    if (record_grid) res.grid.emplace_back(t0, y0);
    for (int64_t k = 0; k < steps; ++k) {
        const double t = t0 + static_cast<double>(k) * dt;
        res.y = rk4_step(tape, f, res.y, t, dt);
        if (record_grid) res.grid.emplace_back(t0 + static_cast<double>(k + 1) * dt, res.y);
    }
    return res;
}

}  // namespace imode
