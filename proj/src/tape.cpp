#include "imode/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace imode {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("tape: " + msg); }

// Dot product with four independent accumulators: fixed summation order
// (deterministic) while still letting the compiler pack lanes.
inline double dot4(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; j < n; ++j) s += a[j] * b[j];
    return s;
}

}  // namespace

const Tape::Node& Tape::node(Val v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) fail("invalid node handle");
    return nodes_[static_cast<size_t>(v.id)];
}

Tape::Node& Tape::alloc(Op op, int rows, int cols, std::initializer_list<Val> parents) {
    if (parents.size() > 4) fail("too many parents");
    Node n{};
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.n_parents = static_cast<uint8_t>(parents.size());
    n.needs_grad = false;
    int i = 0;
    for (Val p : parents) {
        node(p);  // validates
        n.parent[i++] = p.id;
        n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(p.id)].needs_grad;
    }
    const int64_t numel = static_cast<int64_t>(rows) * cols;
    n.off = used_;
    used_ += numel;
    if (static_cast<int64_t>(vals_.size()) < used_) vals_.resize(static_cast<size_t>(used_));
    nodes_.push_back(n);
    grads_valid_ = false;
    return nodes_.back();
}

Val Tape::leaf(std::span<const double> v, int rows, int cols, bool requires_grad) {
    if (static_cast<int64_t>(v.size()) != static_cast<int64_t>(rows) * cols)
        fail("leaf: data length does not match shape");
    Node& n = alloc(Op::Leaf, rows, cols, {});
    n.needs_grad = requires_grad;
    std::memcpy(data(n), v.data(), v.size() * sizeof(double));
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::leaf(const Tensor& t, bool requires_grad) {
    return leaf(std::span<const double>(t.values), t.rows(), t.cols(), requires_grad);
}

Val Tape::zeros(int n) {
    Node& nd = alloc(Op::Leaf, n, 1, {});
    std::memset(data(nd), 0, static_cast<size_t>(n) * sizeof(double));
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::binary_elemwise(Op op, Val a, Val b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) fail("elementwise op: shape mismatch");
    Node& n = alloc(op, na.rows, na.cols, {a, b});
    const double* pa = data(nodes_[static_cast<size_t>(a.id)]);
    const double* pb = data(nodes_[static_cast<size_t>(b.id)]);
    double* out = data(n);
    const int c = n.rows * n.cols;
    switch (op) {
        case Op::Add:
            for (int i = 0; i < c; ++i) out[i] = pa[i] + pb[i];
            break;
        case Op::Sub:
            for (int i = 0; i < c; ++i) out[i] = pa[i] - pb[i];
            break;
        case Op::Mul:
            for (int i = 0; i < c; ++i) out[i] = pa[i] * pb[i];
            break;
        default:
            fail("not a binary elementwise op");
    }
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::add(Val a, Val b) { return binary_elemwise(Op::Add, a, b); }
Val Tape::sub(Val a, Val b) { return binary_elemwise(Op::Sub, a, b); }
Val Tape::mul(Val a, Val b) { return binary_elemwise(Op::Mul, a, b); }

Val Tape::smul(Val v, Val s) {
    const Node& nv = node(v);
    if (node(s).rows * node(s).cols != 1) fail("smul: scalar operand must have one element");
    Node& n = alloc(Op::SMul, nv.rows, nv.cols, {v, s});
    const double* pv = data(nodes_[static_cast<size_t>(v.id)]);
    const double sv = *data(nodes_[static_cast<size_t>(s.id)]);
    double* out = data(n);
    const int c = n.rows * n.cols;
    for (int i = 0; i < c; ++i) out[i] = pv[i] * sv;
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::axpy(Val a, Val b, double c) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) fail("axpy: shape mismatch");
    Node& n = alloc(Op::Axpy, na.rows, na.cols, {a, b});
    n.aux = c;
    const double* pa = data(nodes_[static_cast<size_t>(a.id)]);
    const double* pb = data(nodes_[static_cast<size_t>(b.id)]);
    double* out = data(n);
    const int cnt = n.rows * n.cols;
    for (int i = 0; i < cnt; ++i) out[i] = pa[i] + c * pb[i];
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::unary_elemwise(Op op, Val a, double aux, double aux2) {
    const Node& na = node(a);
    Node& n = alloc(op, na.rows, na.cols, {a});
    n.aux = aux;
    n.aux2 = aux2;
    const double* pa = data(nodes_[static_cast<size_t>(a.id)]);
    double* out = data(n);
    const int c = n.rows * n.cols;
    switch (op) {
        case Op::Affine:
            for (int i = 0; i < c; ++i) out[i] = aux * pa[i] + aux2;
            break;
        case Op::LeakyRelu:
            for (int i = 0; i < c; ++i) out[i] = pa[i] > 0.0 ? pa[i] : aux * pa[i];
            break;
        case Op::Sigmoid:
            for (int i = 0; i < c; ++i) out[i] = 1.0 / (1.0 + std::exp(-pa[i]));
            break;
        case Op::Tanh:
            for (int i = 0; i < c; ++i) out[i] = std::tanh(pa[i]);
            break;
        case Op::Exp:
            for (int i = 0; i < c; ++i) out[i] = std::exp(pa[i]);
            break;
        case Op::Softplus:
            // log(1+e^x) computed from the stable side.
            for (int i = 0; i < c; ++i)
                out[i] = pa[i] > 0.0 ? pa[i] + std::log1p(std::exp(-pa[i])) : std::log1p(std::exp(pa[i]));
            break;
        default:
            fail("not a unary elementwise op");
    }
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::affine(Val a, double m, double c) { return unary_elemwise(Op::Affine, a, m, c); }

Val Tape::leaky_relu(Val a, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) fail("leaky_relu: slope must be in (0,1)");
    return unary_elemwise(Op::LeakyRelu, a, slope);
}

Val Tape::sigmoid(Val a) { return unary_elemwise(Op::Sigmoid, a); }
Val Tape::tanh(Val a) { return unary_elemwise(Op::Tanh, a); }
Val Tape::exp(Val a) { return unary_elemwise(Op::Exp, a); }
Val Tape::softplus(Val a) { return unary_elemwise(Op::Softplus, a); }

Val Tape::matvec(Val w, Val x) {
    // alloc() may grow nodes_, so parent dims are copied out first
    const int m = node(w).rows, k = node(w).cols;
    const int xr = node(x).rows, xc = node(x).cols;
    if (xc != 1) fail("matvec: x must be a vector");
    if (k != xr) fail("matvec: dimension mismatch (W is " + std::to_string(m) + "x" + std::to_string(k) +
                      ", x has " + std::to_string(xr) + ")");
    Node& n = alloc(Op::MatVec, m, 1, {w, x});
    const double* pw = data(nodes_[static_cast<size_t>(w.id)]);
    const double* px = data(nodes_[static_cast<size_t>(x.id)]);
    double* out = data(n);
    for (int i = 0; i < m; ++i) out[i] = dot4(pw + static_cast<int64_t>(i) * k, px, k);
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::concat(std::initializer_list<Val> parts) {
    return concat(std::span<const Val>(parts.begin(), parts.size()));
}

Val Tape::concat(std::span<const Val> parts) {
    if (parts.empty() || parts.size() > 4) fail("concat: takes 1..4 parts");
    int total = 0;
    for (Val p : parts) {
        if (node(p).cols != 1) fail("concat: vector parts only");
        total += node(p).rows;
    }
    Node& n = [&]() -> Node& {
        switch (parts.size()) {
            case 1: return alloc(Op::Concat, total, 1, {parts[0]});
            case 2: return alloc(Op::Concat, total, 1, {parts[0], parts[1]});
            case 3: return alloc(Op::Concat, total, 1, {parts[0], parts[1], parts[2]});
            default: return alloc(Op::Concat, total, 1, {parts[0], parts[1], parts[2], parts[3]});
        }
    }();
    double* out = data(n);
    for (Val p : parts) {
        const Node& np = nodes_[static_cast<size_t>(p.id)];
        std::memcpy(out, data(np), static_cast<size_t>(np.rows) * sizeof(double));
        out += np.rows;
    }
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::slice(Val a, int offset, int len) {
    const Node& na = node(a);
    if (na.cols != 1) fail("slice: vector input only");
    if (offset < 0 || len < 0 || offset + len > na.rows) fail("slice: range out of bounds");
    Node& n = alloc(Op::Slice, len, 1, {a});
    n.iaux = offset;
    std::memcpy(data(n), data(nodes_[static_cast<size_t>(a.id)]) + offset, static_cast<size_t>(len) * sizeof(double));
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::sum(Val a) {
    const int cnt = node(a).rows * node(a).cols;
    Node& n = alloc(Op::Sum, 1, 1, {a});
    const double* pa = data(nodes_[static_cast<size_t>(a.id)]);
    double s = 0.0;
    for (int i = 0; i < cnt; ++i) s += pa[i];
    *data(n) = s;
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

Val Tape::sq_norm(Val a) {
    const int cnt = node(a).rows * node(a).cols;
    Node& n = alloc(Op::SqNorm, 1, 1, {a});
    const double* pa = data(nodes_[static_cast<size_t>(a.id)]);
    *data(n) = dot4(pa, pa, cnt);
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
}

std::span<const double> Tape::value(Val v) const {
    const Node& n = node(v);
    return {data(n), static_cast<size_t>(n.rows) * n.cols};
}

std::span<const double> Tape::grad(Val v) const {
    const Node& n = node(v);
    if (!grads_valid_) fail("grad read before backward()");
    return {grads_.data() + n.off, static_cast<size_t>(n.rows) * n.cols};
}

double Tape::scalar(Val v) const {
    const Node& n = node(v);
    if (n.rows * n.cols != 1) fail("scalar: node has more than one element");
    return *data(n);
}

bool Tape::all_finite(Val v) const {
    for (double x : value(v))
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor Tape::tensor(Val v) const {
    const Node& n = node(v);
    std::vector<int> shape = n.cols == 1 ? std::vector<int>{n.rows} : std::vector<int>{n.rows, n.cols};
    auto vs = value(v);
    return Tensor(std::move(shape), std::vector<double>(vs.begin(), vs.end()));
}

void Tape::backward(Val loss) {
    const Node& ln = node(loss);
    if (ln.rows * ln.cols != 1) fail("backward: loss must be scalar");
    if (static_cast<int64_t>(grads_.size()) < used_) grads_.resize(static_cast<size_t>(used_));
    std::memset(grads_.data(), 0, static_cast<size_t>(used_) * sizeof(double));
    grads_valid_ = true;
    grads_[static_cast<size_t>(ln.off)] = 1.0;

    // Reverse creation order is a topological order for a define-by-run graph.
    for (int32_t id = loss.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.op == Op::Leaf) continue;
        const double* g = grads_.data() + n.off;
        const int cnt = n.rows * n.cols;
        auto pgrad = [&](int k) { return grads_.data() + nodes_[static_cast<size_t>(n.parent[k])].off; };
        auto pval = [&](int k) { return vals_.data() + nodes_[static_cast<size_t>(n.parent[k])].off; };
        auto pneeds = [&](int k) { return nodes_[static_cast<size_t>(n.parent[k])].needs_grad; };
        const double* y = data(n);

        switch (n.op) {
            case Op::Add: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i];
                }
                if (pneeds(1)) {
                    double* gb = pgrad(1);
                    for (int i = 0; i < cnt; ++i) gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i];
                }
                if (pneeds(1)) {
                    double* gb = pgrad(1);
                    for (int i = 0; i < cnt; ++i) gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    const double* b = pval(1);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i] * b[i];
                }
                if (pneeds(1)) {
                    double* gb = pgrad(1);
                    const double* a = pval(0);
                    for (int i = 0; i < cnt; ++i) gb[i] += g[i] * a[i];
                }
                break;
            }
            case Op::SMul: {
                const double s = *pval(1);
                if (pneeds(0)) {
                    double* gv = pgrad(0);
                    for (int i = 0; i < cnt; ++i) gv[i] += g[i] * s;
                }
                if (pneeds(1)) *pgrad(1) += dot4(g, pval(0), cnt);
                break;
            }
            case Op::Axpy: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i];
                }
                if (pneeds(1)) {
                    double* gb = pgrad(1);
                    const double c = n.aux;
                    for (int i = 0; i < cnt; ++i) gb[i] += c * g[i];
                }
                break;
            }
            case Op::Affine: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    const double m = n.aux;
                    for (int i = 0; i < cnt; ++i) ga[i] += m * g[i];
                }
                break;
            }
            case Op::MatVec: {
                const Node& nw = nodes_[static_cast<size_t>(n.parent[0])];
                const int m = nw.rows, k = nw.cols;
                const double* x = pval(1);
                if (pneeds(0)) {
                    double* gw = pgrad(0);
                    for (int i = 0; i < m; ++i) {
                        const double gi = g[i];
                        double* row = gw + static_cast<int64_t>(i) * k;
                        for (int j = 0; j < k; ++j) row[j] += gi * x[j];
                    }
                }
                if (pneeds(1)) {
                    double* gx = pgrad(1);
                    const double* w = pval(0);
                    for (int i = 0; i < m; ++i) {
                        const double gi = g[i];
                        const double* row = w + static_cast<int64_t>(i) * k;
                        for (int j = 0; j < k; ++j) gx[j] += row[j] * gi;
                    }
                }
                break;
            }
            case Op::LeakyRelu: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    const double* a = pval(0);
                    const double s = n.aux;
                    for (int i = 0; i < cnt; ++i) ga[i] += (a[i] > 0.0 ? g[i] : s * g[i]);
                }
                break;
            }
            case Op::Sigmoid: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
                break;
            }
            case Op::Tanh: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
                break;
            }
            case Op::Exp: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i] * y[i];
                }
                break;
            }
            case Op::Softplus: {
                if (pneeds(0)) {
                    double* ga = pgrad(0);
                    const double* a = pval(0);
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i] / (1.0 + std::exp(-a[i]));
                }
                break;
            }
            case Op::Concat: {
                int off = 0;
                for (int k = 0; k < n.n_parents; ++k) {
                    const Node& np = nodes_[static_cast<size_t>(n.parent[k])];
                    if (np.needs_grad) {
                        double* gp = pgrad(k);
                        for (int i = 0; i < np.rows; ++i) gp[i] += g[off + i];
                    }
                    off += np.rows;
                }
                break;
            }
            case Op::Slice: {
                if (pneeds(0)) {
                    double* ga = pgrad(0) + n.iaux;
                    for (int i = 0; i < cnt; ++i) ga[i] += g[i];
                }
                break;
            }
            case Op::Sum: {
                if (pneeds(0)) {
                    const Node& np = nodes_[static_cast<size_t>(n.parent[0])];
                    double* ga = pgrad(0);
                    const double g0 = g[0];
                    for (int i = 0; i < np.rows * np.cols; ++i) ga[i] += g0;
                }
                break;
            }
            case Op::SqNorm: {
                if (pneeds(0)) {
                    const Node& np = nodes_[static_cast<size_t>(n.parent[0])];
                    double* ga = pgrad(0);
                    const double* a = pval(0);
                    const double g0 = 2.0 * g[0];
                    for (int i = 0; i < np.rows * np.cols; ++i) ga[i] += g0 * a[i];
                }
                break;
            }
            case Op::Leaf:
                break;
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    used_ = 0;
    grads_valid_ = false;
}

}  // namespace imode
