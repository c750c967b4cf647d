#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace echoflow {

// Dense row-major matrix of doubles; just enough for feature tables and weights.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {v.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {v.data() + r * cols, cols}; }
};

}  // namespace echoflow
