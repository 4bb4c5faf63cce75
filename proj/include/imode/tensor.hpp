#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace imode {

// Dense 64-bit float tensor. Only the rank-1 (vector) and rank-2 (matrix)
// cases are used anywhere in this project.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (static_cast<long long>(values.size()) != numel_of(shape))
            throw std::invalid_argument("Tensor: values length does not match shape");
    }

    static long long numel_of(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        long long n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }
    static Tensor vec(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v));
    }
    // Row-major matrix.
    static Tensor mat(int rows, int cols, std::vector<double> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    int numel() const { return static_cast<int>(values.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& operator[](size_t i) { return values[i]; }
    double operator[](size_t i) const { return values[i]; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace imode
