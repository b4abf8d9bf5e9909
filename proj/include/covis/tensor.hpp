#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "covis/common.hpp"

namespace covis {

// Dense row-major tensor of doubles. Rank is dynamic; everything in the
// pipeline is rank 1..4.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s);

    static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::int64_t> s, double v);
    static Tensor scalar(double v);
    static Tensor from2d(std::initializer_list<std::initializer_list<double>> rows);

    std::int64_t numel() const;
    std::int64_t dim(int i) const;
    int rank() const { return static_cast<int>(shape.size()); }

    double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
    double& at(std::int64_t r, std::int64_t c);
    double at(std::int64_t r, std::int64_t c) const;
    double& at(std::int64_t c, std::int64_t y, std::int64_t x);
    double at(std::int64_t c, std::int64_t y, std::int64_t x) const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::string shape_str(const std::vector<std::int64_t>& s);
void check_shape(const Tensor& t, const std::vector<std::int64_t>& want, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace covis
