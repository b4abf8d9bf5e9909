#include "covis/tensor.hpp"

#include <cmath>
#include <sstream>

namespace covis {

Tensor::Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw dim_error("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    data.assign(static_cast<std::size_t>(n), 0.0);
}

Tensor Tensor::full(std::vector<std::int64_t> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::from2d(std::initializer_list<std::initializer_list<double>> rows) {
    std::int64_t r = static_cast<std::int64_t>(rows.size());
    std::int64_t c = r ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    std::int64_t i = 0;
    for (const auto& row : rows) {
        if (static_cast<std::int64_t>(row.size()) != c)
            throw dim_error("from2d: ragged rows");
        for (double v : row) t.data[static_cast<std::size_t>(i++)] = v;
    }
    return t;
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

std::int64_t Tensor::dim(int i) const {
    if (i < 0 || i >= rank())
        throw dim_error("dim index " + std::to_string(i) + " out of range for " + shape_str(shape));
    return shape[static_cast<std::size_t>(i)];
}

double& Tensor::at(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
}
double Tensor::at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
}
double& Tensor::at(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
}
double Tensor::at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
}

std::string shape_str(const std::vector<std::int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void check_shape(const Tensor& t, const std::vector<std::int64_t>& want, const char* what) {
    if (t.shape != want)
        throw dim_error(std::string(what) + ": expected shape " + shape_str(want) + ", got " +
                        shape_str(t.shape));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw dim_error("max_abs_diff: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace covis
