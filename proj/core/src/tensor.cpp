#include "fedfew/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fedfew::ad {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
    if (shape_product(shape) != values.size()) {
        throw std::invalid_argument("tensor: shape " + shape_to_string(shape) +
                                    " does not match " + std::to_string(values.size()) +
                                    " values");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
    if (shape.size() != 2) throw std::logic_error("tensor: rows() on non-matrix");
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.size() != 2) throw std::logic_error("tensor: cols() on non-matrix");
    return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

}  // namespace fedfew::ad
