#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "imode/tensor.hpp"

namespace imode {

// Handle to a node on a Tape. Only meaningful for the tape that created it
// and only until that tape is reset.
struct Val {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,        // elementwise product
    SMul,       // vector times scalar node
    Axpy,       // a + c*b, c compile-time constant
    Affine,     // m*a + c elementwise, constants
    MatVec,     // row-major matrix times vector
    LeakyRelu,
    Sigmoid,
    Tanh,
    Exp,
    Softplus,
    Concat,
    Slice,
    Sum,        // reduce to scalar
    SqNorm,     // sum of squares, scalar
};

// Reverse-mode tape built define-by-run: creating a node computes its forward
// value immediately. Values and adjoints live in flat arenas that are reused
// across reset() calls, so a steady-state training loop does not allocate.
//
// A tape and its nodes belong to one thread for the duration of a
// forward/backward pass; independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- graph construction -------------------------------------------------
    Val leaf(std::span<const double> v, int rows, int cols = 1, bool requires_grad = false);
    Val leaf(const Tensor& t, bool requires_grad = false);
    Val leaf(std::initializer_list<double> v) { return leaf(std::span<const double>(v.begin(), v.size()), static_cast<int>(v.size())); }
    Val zeros(int n);  // constant zero vector

    Val add(Val a, Val b);
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);
    Val smul(Val v, Val s);                  // s is a 1-element node
    Val axpy(Val a, Val b, double c);        // a + c*b
    Val affine(Val a, double m, double c);   // m*a + c
    Val scale(Val a, double c) { return affine(a, c, 0.0); }
    Val matvec(Val w, Val x);
    Val leaky_relu(Val a, double slope);
    Val sigmoid(Val a);
    Val tanh(Val a);
    Val exp(Val a);
    Val softplus(Val a);
    Val concat(std::initializer_list<Val> parts);
    Val concat(std::span<const Val> parts);
    Val slice(Val a, int offset, int len);
    Val sum(Val a);
    Val sq_norm(Val a);

    // --- inspection ----------------------------------------------------------
    int size(Val v) const { return node(v).rows * node(v).cols; }
    int rows(Val v) const { return node(v).rows; }
    int cols(Val v) const { return node(v).cols; }
    std::span<const double> value(Val v) const;
    std::span<const double> grad(Val v) const;
    double scalar(Val v) const;
    bool all_finite(Val v) const;
    Tensor tensor(Val v) const;

    size_t node_count() const { return nodes_.size(); }

    // --- execution -----------------------------------------------------------
    // Accumulates dLoss/dNode into every node reachable from `loss` whose
    // requires-grad flag is set. Adjoints are zeroed first.
    void backward(Val loss);

    // Drops all nodes but keeps arena capacity.
    void reset();

private:
    struct Node {
        Op op;
        uint8_t n_parents;
        bool needs_grad;
        int32_t parent[4];
        int64_t off;
        int32_t rows, cols;
        int32_t iaux;    // slice offset
        double aux;      // slope / axpy factor / affine m
        double aux2;     // affine c
    };

    const Node& node(Val v) const;
    Node& alloc(Op op, int rows, int cols, std::initializer_list<Val> parents);
    double* data(const Node& n) { return vals_.data() + n.off; }
    const double* data(const Node& n) const { return vals_.data() + n.off; }
    double* gdata(const Node& n) { return grads_.data() + n.off; }

    Val unary_elemwise(Op op, Val a, double aux = 0.0, double aux2 = 0.0);
    Val binary_elemwise(Op op, Val a, Val b);

    std::vector<Node> nodes_;
    std::vector<double> vals_;
    std::vector<double> grads_;
    int64_t used_ = 0;
    bool grads_valid_ = false;
};

}  // namespace imode
