#include <doctest.h>

#include <cmath>
#include <vector>

#include "imode/param_store.hpp"
#include "imode/rng.hpp"
#include "imode/tape.hpp"

using namespace imode;

TEST_SUITE("autodiff") {

TEST_CASE("add: forward values and adjoint routing") {
    Tape t;
    Val a = t.leaf({2.0, 3.0});
    Val b = t.leaf({-1.0, 5.0});
    Val c = t.add(a, b);
    CHECK(t.value(c)[0] == 1.0);
    CHECK(t.value(c)[1] == 8.0);

    // adjoints of a sum are passed through unchanged to both parents
    ParamStore store;
    const int pa = store.add("a", Tensor::vec({2.0, 3.0}));
    const int pb = store.add("b", Tensor::vec({-1.0, 5.0}));
    Tape t2;
    Session s(t2, store);
    Val sum = t2.sum(t2.add(s.param(pa), s.param(pb)));
    t2.backward(sum);
    for (int i = 0; i < 2; ++i) {
        CHECK(s.grad_of(pa).values[static_cast<size_t>(i)] == 1.0);
        CHECK(s.grad_of(pb).values[static_cast<size_t>(i)] == 1.0);
    }
}

TEST_CASE("add: x + 0 is bit-identical to x") {
    Tape t;
    Val x = t.leaf({0.25, -3.75, 1e-300});
    Val y = t.add(x, t.zeros(3));
    for (int i = 0; i < 3; ++i) CHECK(t.value(y)[static_cast<size_t>(i)] == t.value(x)[static_cast<size_t>(i)]);
}

TEST_CASE("add: chain rule through a square, d(a+b)^2/da at a=1,b=2 is 6") {
    ParamStore store;
    const int pa = store.add("a", Tensor::vec({1.0}));
    const int pb = store.add("b", Tensor::vec({2.0}));
    Tape t;
    Session s(t, store);
    Val loss = t.sq_norm(t.add(s.param(pa), s.param(pb)));
    t.backward(loss);
    CHECK(s.grad_of(pa).values[0] == doctest::Approx(6.0).epsilon(1e-14));
    CHECK(s.grad_of(pb).values[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("add: shape mismatch throws") {
    Tape t;
    Val a = t.leaf({1.0, 2.0});
    Val b = t.leaf({1.0});
    CHECK_THROWS_AS(t.add(a, b), std::invalid_argument);
}

TEST_CASE("matvec: identity and hand-computed products") {
    Tape t;
    Val I = t.leaf(Tensor::mat(2, 2, {1, 0, 0, 1}));
    Val x = t.leaf({3.0, 4.0});
    Val y = t.matvec(I, x);
    CHECK(t.value(y)[0] == 3.0);
    CHECK(t.value(y)[1] == 4.0);

    Val W = t.leaf(Tensor::mat(2, 2, {1, 2, 0, 1}));
    Val z = t.matvec(W, t.leaf({1.0, 1.0}));
    CHECK(t.value(z)[0] == 3.0);
    CHECK(t.value(z)[1] == 1.0);

    CHECK_THROWS_AS(t.matvec(W, t.leaf({1.0, 2.0, 3.0})), std::invalid_argument);
}

TEST_CASE("matvec: gradient of |Wx|^2 wrt W at W=I, x=(1,2) is 2*x*x^T") {
    ParamStore store;
    const int pw = store.add("W", Tensor::mat(2, 2, {1, 0, 0, 1}));
    Tape t;
    Session s(t, store);
    Val loss = t.sq_norm(t.matvec(s.param(pw), t.leaf({1.0, 2.0})));
    t.backward(loss);
    const Tensor g = s.grad_of(pw);
    CHECK(g.values[0] == doctest::Approx(2.0));
    CHECK(g.values[1] == doctest::Approx(4.0));
    CHECK(g.values[2] == doctest::Approx(4.0));
    CHECK(g.values[3] == doctest::Approx(8.0));
}

TEST_CASE("leaky_relu: values and slope gradient") {
    Tape t;
    Val pos = t.leaky_relu(t.leaf({5.0}), 0.01);
    CHECK(t.value(pos)[0] == 5.0);
    Val neg = t.leaky_relu(t.leaf({-2.0}), 0.01);
    CHECK(t.value(neg)[0] == doctest::Approx(-0.02).epsilon(1e-15));

    ParamStore store;
    const int px = store.add("x", Tensor::vec({-2.0}));
    Tape t2;
    Session s(t2, store);
    Val loss = t2.sum(t2.leaky_relu(s.param(px), 0.01));
    t2.backward(loss);
    CHECK(s.grad_of(px).values[0] == doctest::Approx(0.01));

    CHECK_THROWS_AS(t.leaky_relu(pos, 1.5), std::invalid_argument);
}

TEST_CASE("sigmoid/tanh/concat basics") {
    Tape t;
    CHECK(t.value(t.sigmoid(t.leaf({0.0})))[0] == 0.5);
    CHECK(t.value(t.tanh(t.leaf({0.0})))[0] == 0.0);

    ParamStore store;
    const int px = store.add("x", Tensor::vec({0.0}));
    Tape t2;
    Session s(t2, store);
    t2.backward(t2.sum(t2.tanh(s.param(px))));
    CHECK(s.grad_of(px).values[0] == 1.0);  // d tanh/dx at 0

    Tape t3;
    Val c = t3.concat({t3.leaf({1.0, 2.0}), t3.leaf({3.0})});
    CHECK(t3.size(c) == 3);
    CHECK(t3.value(c)[0] == 1.0);
    CHECK(t3.value(c)[1] == 2.0);
    CHECK(t3.value(c)[2] == 3.0);
}

TEST_CASE("concat: backward splits the adjoint by segment") {
    ParamStore store;
    const int pa = store.add("a", Tensor::vec({1.0, 2.0}));
    const int pb = store.add("b", Tensor::vec({3.0}));
    Tape t;
    Session s(t, store);
    Val cat = t.concat({s.param(pa), s.param(pb)});
    Val loss = t.sum(t.mul(cat, t.leaf({10.0, 20.0, 30.0})));
    t.backward(loss);
    CHECK(s.grad_of(pa).values[0] == 10.0);
    CHECK(s.grad_of(pa).values[1] == 20.0);
    CHECK(s.grad_of(pb).values[0] == 30.0);
}

TEST_CASE("backward: p^2 at p=3 gives gradient 6") {
    ParamStore store;
    const int pp = store.add("p", Tensor::vec({3.0}));
    Tape t;
    Session s(t, store);
    t.backward(t.sq_norm(s.param(pp)));
    CHECK(s.grad_of(pp).values[0] == 6.0);
}

TEST_CASE("backward: sum((Wx-t)^2) matches the closed form 2(Wx-t)x^T") {
    ParamStore store;
    const int pw = store.add("W", Tensor::mat(2, 2, {1, 0, 0, 1}));
    Tape t;
    Session s(t, store);
    Val err = t.sub(t.matvec(s.param(pw), t.leaf({1.0, 2.0})), t.leaf({1.0, 1.0}));
    t.backward(t.sq_norm(err));
    // Wx - t = (0, 1); gradient rows are 2*err_i*(1,2)
    const Tensor g = s.grad_of(pw);
    CHECK(g.values[0] == doctest::Approx(0.0));
    CHECK(g.values[1] == doctest::Approx(0.0));
    CHECK(g.values[2] == doctest::Approx(2.0));
    CHECK(g.values[3] == doctest::Approx(4.0));
}

TEST_CASE("backward: non-scalar loss throws") {
    Tape t;
    Val x = t.leaf({1.0, 2.0});
    CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("backward: five unrolled RK4 steps of dy/dt = theta*y match finite differences") {
    ParamStore store;
    const int ptheta = store.add("theta", Tensor::vec({0.7}));

    auto build = [&](Session& s) {
        Tape& t = s.tape;
        Val y = t.leaf({1.0});
        const double dt = 0.2;
        for (int step = 0; step < 5; ++step) {
            Val k1 = t.smul(y, s.param(ptheta));
            Val k2 = t.smul(t.axpy(y, k1, dt / 2), s.param(ptheta));
            Val k3 = t.smul(t.axpy(y, k2, dt / 2), s.param(ptheta));
            Val k4 = t.smul(t.axpy(y, k3, dt), s.param(ptheta));
            y = t.axpy(y, t.add(t.axpy(k1, t.add(k2, k3), 2.0), k4), dt / 6.0);
        }
        return t.sq_norm(y);
    };
    CHECK(grad_check(store, build, 1e-5) < 1e-5);
}

TEST_CASE("grad_check: quadratic loss error under 1e-6") {
    ParamStore store;
    const int pp = store.add("p", Tensor::vec({1.5, -0.5, 2.0}));
    auto build = [&](Session& s) { return s.tape.sq_norm(s.param(pp)); };
    CHECK(grad_check(store, build, 1e-5) < 1e-6);
}

TEST_CASE("grad_check: constant function has exactly zero gradients") {
    ParamStore store;
    const int pp = store.add("p", Tensor::vec({1.0, 2.0}));
    Tape t;
    Session s(t, store);
    Val loss = t.sq_norm(t.leaf({3.0}));  // ignores p
    s.param(pp);                          // bind so gradients are read back
    t.backward(loss);
    CHECK(s.grad_of(pp).values[0] == 0.0);
    CHECK(s.grad_of(pp).values[1] == 0.0);

    auto build = [&](Session& ss) {
        ss.param(pp);
        return ss.tape.sq_norm(ss.tape.leaf({3.0}));
    };
    CHECK(grad_check(store, build, 1e-5) == 0.0);
}

TEST_CASE("grad_check: rejects non-positive eps") {
    ParamStore store;
    store.add("p", Tensor::vec({1.0}));
    auto build = [&](Session& s) { return s.tape.sq_norm(s.param(0)); };
    CHECK_THROWS_AS(grad_check(store, build, 0.0), std::invalid_argument);
}

// Every differentiable op against central differences on random inputs in [-2,2].
TEST_CASE("property: all ops match finite differences within 1e-4 relative") {
    Rng rng(20250809);
    for (int trial = 0; trial < 20; ++trial) {
        ParamStore store;
        std::vector<double> av, bv, wv;
        for (int i = 0; i < 4; ++i) av.push_back(rng.uniform(-2.0, 2.0));
        for (int i = 0; i < 4; ++i) bv.push_back(rng.uniform(-2.0, 2.0));
        for (int i = 0; i < 24; ++i) wv.push_back(rng.uniform(-2.0, 2.0));
        const int pa = store.add("a", Tensor::vec(av));
        const int pb = store.add("b", Tensor::vec(bv));
        const int pw = store.add("W", Tensor::mat(3, 8, wv));
        const int ps = store.add("s", Tensor::vec({rng.uniform(-2.0, 2.0)}));

        auto build = [&](Session& s) {
            Tape& t = s.tape;
            Val a = s.param(pa);
            Val b = s.param(pb);
            Val mixed = t.add(t.mul(a, b), t.axpy(a, b, 0.37));
            Val acts = t.concat({t.sigmoid(mixed), t.tanh(a)});
            Val lin = t.matvec(s.param(pw), t.leaky_relu(acts, 0.01));
            Val expd = t.exp(t.affine(t.slice(lin, 0, 2), 0.25, -0.1));
            Val soft = t.softplus(t.slice(lin, 1, 2));
            Val scaled = t.smul(t.sub(expd, soft), s.param(ps));
            return t.add(t.sq_norm(scaled), t.sum(lin));
        };
        CHECK(grad_check(store, build, 1e-5) < 1e-4);
    }
}

TEST_CASE("property: backward over a single-consumer graph is independent of node-creation order") {
    ParamStore store;
    const int pa = store.add("a", Tensor::vec({0.3, -1.2}));
    const int pb = store.add("b", Tensor::vec({0.9, 0.4}));
    const int pc = store.add("c", Tensor::vec({-0.7, 0.2}));

    // same DAG (every node consumed once), different creation order with
    // unrelated nodes interleaved
    Tape t1;
    Session s1(t1, store);
    {
        Val u = t1.mul(s1.param(pa), s1.param(pb));
        Val v = t1.tanh(s1.param(pc));
        t1.backward(t1.sq_norm(t1.add(u, v)));
    }
    Tape t2;
    Session s2(t2, store);
    {
        Val v = t2.tanh(s2.param(pc));
        Val unrelated = t2.sigmoid(t2.leaf({5.0, 6.0}));
        (void)unrelated;
        Val u = t2.mul(s2.param(pa), s2.param(pb));
        t2.backward(t2.sq_norm(t2.add(u, v)));
    }
    for (int i = 0; i < 2; ++i) {
        CHECK(s1.grad_of(pa).values[static_cast<size_t>(i)] == s2.grad_of(pa).values[static_cast<size_t>(i)]);
        CHECK(s1.grad_of(pb).values[static_cast<size_t>(i)] == s2.grad_of(pb).values[static_cast<size_t>(i)]);
        CHECK(s1.grad_of(pc).values[static_cast<size_t>(i)] == s2.grad_of(pc).values[static_cast<size_t>(i)]);
    }
}

TEST_CASE("property: re-running forward reproduces bit-identical values") {
    Rng rng(7);
    std::vector<double> xs;
    for (int i = 0; i < 8; ++i) xs.push_back(rng.uniform(-2.0, 2.0));
    auto run = [&]() {
        Tape t;
        Val x = t.leaf(std::span<const double>(xs), 8);
        Val y = t.tanh(t.affine(t.mul(x, x), 0.7, -0.2));
        Val z = t.sq_norm(t.concat({y, t.sigmoid(x)}));
        return t.scalar(z);
    };
    const double first = run();
    for (int i = 0; i < 5; ++i) CHECK(run() == first);
}

TEST_CASE("tape reset reuses arena without stale state") {
    Tape t;
    for (int round = 0; round < 3; ++round) {
        t.reset();
        Val x = t.leaf({1.0, 2.0, 3.0});
        Val y = t.sq_norm(x);
        CHECK(t.scalar(y) == 14.0);
        CHECK(t.node_count() == 2);
    }
}

}  // TEST_SUITE
