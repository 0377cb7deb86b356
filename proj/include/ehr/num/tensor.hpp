#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ehr/errors.hpp"

namespace ehr::num {

// Dense row-major tensor of 64-bit reals. Everything the network touches is
// rank 1, 2 or 3; shapes are fixed after construction.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
        values_.assign(element_count(dims_), 0.0);
    }

    Tensor(std::vector<std::size_t> dims, std::vector<double> values)
        : dims_(std::move(dims)), values_(std::move(values)) {
        if (values_.size() != element_count(dims_)) {
            throw ShapeError("tensor value count does not match dims");
        }
    }

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_[i]; }
    std::size_t size() const { return values_.size(); }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(std::size_t i, std::size_t j) {
        assert(rank() == 2);
        return values_[i * dims_[1] + j];
    }
    double at(std::size_t i, std::size_t j) const {
        assert(rank() == 2);
        return values_[i * dims_[1] + j];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        assert(rank() == 3);
        return values_[(i * dims_[1] + j) * dims_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        assert(rank() == 3);
        return values_[(i * dims_[1] + j) * dims_[2] + k];
    }

    void fill(double v) { values_.assign(values_.size(), v); }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + "]";
    }

private:
    static std::size_t element_count(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

    std::vector<std::size_t> dims_;
    std::vector<double> values_;
};

}  // namespace ehr::num
