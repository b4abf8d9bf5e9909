#include "covis/tape.hpp"

#include <algorithm>
#include <cmath>

namespace covis {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw invariant_error("tape: invalid var id " + std::to_string(v.id));
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    return const_cast<Tape*>(this)->node(v);
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) {
        n.grad = Tensor::zeros(n.value.shape);
        n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor t, bool requires_grad) {
    return push(std::move(t), requires_grad, nullptr);
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.requires_grad) throw error("tape: gradient requested for a non-tracked var");
    return n.grad;
}

Var Tape::add(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (!ta.same_shape(tb))
        throw dim_error("add: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor y = ta;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += tb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, a, b, out]() mutable {
        const Tensor& gy = g(out);
        if (requires_grad(a)) {
            Tensor& ga = g(a);
            for (std::size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i];
        }
        if (requires_grad(b)) {
            Tensor& gb = g(b);
            for (std::size_t i = 0; i < gy.data.size(); ++i) gb.data[i] += gy.data[i];
        }
    });
    return out;
}

Var Tape::sub(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (!ta.same_shape(tb))
        throw dim_error("sub: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor y = ta;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= tb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, a, b, out]() mutable {
        const Tensor& gy = g(out);
        if (requires_grad(a)) {
            Tensor& ga = g(a);
            for (std::size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i];
        }
        if (requires_grad(b)) {
            Tensor& gb = g(b);
            for (std::size_t i = 0; i < gy.data.size(); ++i) gb.data[i] -= gy.data[i];
        }
    });
    return out;
}

Var Tape::mul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (!ta.same_shape(tb))
        throw dim_error("mul: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor y = ta;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= tb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, a, b, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor &ta2 = val(a), &tb2 = val(b);
        if (requires_grad(a)) {
            Tensor& ga = g(a);
            for (std::size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i] * tb2.data[i];
        }
        if (requires_grad(b)) {
            Tensor& gb = g(b);
            for (std::size_t i = 0; i < gy.data.size(); ++i) gb.data[i] += gy.data[i] * ta2.data[i];
        }
    });
    return out;
}

Var Tape::scale(Var x, double c) {
    Tensor y = val(x);
    for (auto& v : y.data) v *= c;
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, c, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += c * gy.data[i];
    });
    return out;
}

Var Tape::add_scalar(Var x, double c) {
    Tensor y = val(x);
    for (auto& v : y.data) v += c;
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
    });
    return out;
}

Var Tape::one_minus(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = 1.0 - v;
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] -= gy.data[i];
    });
    return out;
}

Var Tape::add_const(Var x, const Tensor& c) {
    const Tensor& tx = val(x);
    if (!tx.same_shape(c))
        throw dim_error("add_const: " + shape_str(tx.shape) + " vs " + shape_str(c.shape));
    Tensor y = tx;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += c.data[i];
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
    });
    return out;
}

Var Tape::mul_const(Var x, const Tensor& c) {
    const Tensor& tx = val(x);
    if (!tx.same_shape(c))
        throw dim_error("mul_const: " + shape_str(tx.shape) + " vs " + shape_str(c.shape));
    Tensor y = tx;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= c.data[i];
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, c, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i] * c.data[i];
    });
    return out;
}

Var Tape::mul_rows(Var x, const Tensor& w) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || w.rank() != 1 || w.dim(0) != tx.dim(0))
        throw dim_error("mul_rows: " + shape_str(tx.shape) + " vs " + shape_str(w.shape));
    std::int64_t n = tx.dim(0), c = tx.dim(1);
    Tensor y = tx;
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < c; ++j) y.at(r, j) *= w.at(r);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, w, n, c, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t j = 0; j < c; ++j) gx.at(r, j) += gy.at(r, j) * w.at(r);
    });
    return out;
}

Var Tape::powi(Var x, int n) {
    if (n < 1) throw error("powi: exponent must be >= 1");
    const Tensor& tx = val(x);
    Tensor y = tx;
    for (auto& v : y.data) {
        double p = v;
        double acc = 1.0;
        for (int i = 0; i < n; ++i) acc *= p;
        v = acc;
    }
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, n, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor& tx2 = val(x);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
            double acc = 1.0;
            for (int k = 0; k < n - 1; ++k) acc *= tx2.data[i];
            gx.data[i] += gy.data[i] * n * acc;
        }
    });
    return out;
}

Var Tape::elu_plus_one(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = v >= 0.0 ? v + 1.0 : std::exp(v);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor &tx = val(x), &ty = val(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i)
            gx.data[i] += gy.data[i] * (tx.data[i] >= 0.0 ? 1.0 : ty.data[i]);
    });
    return out;
}

Var Tape::gelu(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor& tx = val(x);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
            double v = tx.data[i];
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx.data[i] += gy.data[i] * (cdf + v * pdf);
        }
    });
    return out;
}

Var Tape::sigmoid(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor& ty = val(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) {
            double s = ty.data[i];
            gx.data[i] += gy.data[i] * s * (1.0 - s);
        }
    });
    return out;
}

Var Tape::log(Var x) {
    Tensor y = val(x);
    for (auto& v : y.data) v = std::log(v);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor& tx = val(x);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i] / tx.data[i];
    });
    return out;
}

Var Tape::clamp(Var x, double lo, double hi) {
    Tensor y = val(x);
    for (auto& v : y.data) v = std::min(std::max(v, lo), hi);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, lo, hi, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor& tx = val(x);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i)
            if (tx.data[i] > lo && tx.data[i] < hi) gx.data[i] += gy.data[i];
    });
    return out;
}

Var Tape::matmul(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw dim_error("matmul: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    std::int64_t n = ta.dim(0), k = ta.dim(1), m = tb.dim(1);
    Tensor y({n, m});
    for (std::int64_t i = 0; i < n; ++i) {
        double* yi = &y.data[static_cast<std::size_t>(i * m)];
        for (std::int64_t p = 0; p < k; ++p) {
            double av = ta.at(i, p);
            if (av == 0.0) continue;
            const double* bp = &tb.data[static_cast<std::size_t>(p * m)];
            for (std::int64_t j = 0; j < m; ++j) yi[j] += av * bp[j];
        }
    }
    bool rg = requires_grad(a) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, a, b, n, k, m, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor &ta2 = val(a), &tb2 = val(b);
        if (requires_grad(a)) {  // ga += gy . b^T
            Tensor& ga = g(a);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* gyi = &gy.data[static_cast<std::size_t>(i * m)];
                    const double* bp = &tb2.data[static_cast<std::size_t>(p * m)];
                    for (std::int64_t j = 0; j < m; ++j) acc += gyi[j] * bp[j];
                    ga.at(i, p) += acc;
                }
        }
        if (requires_grad(b)) {  // gb += a^T . gy
            Tensor& gb = g(b);
            for (std::int64_t i = 0; i < n; ++i) {
                const double* gyi = &gy.data[static_cast<std::size_t>(i * m)];
                for (std::int64_t p = 0; p < k; ++p) {
                    double av = ta2.at(i, p);
                    if (av == 0.0) continue;
                    double* gbp = &gb.data[static_cast<std::size_t>(p * m)];
                    for (std::int64_t j = 0; j < m; ++j) gbp[j] += av * gyi[j];
                }
            }
        }
    });
    return out;
}

Var Tape::transpose(Var x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2) throw dim_error("transpose: need rank 2, got " + shape_str(tx.shape));
    std::int64_t n = tx.dim(0), m = tx.dim(1);
    Tensor y({m, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) y.at(j, i) = tx.at(i, j);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, n, m, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < m; ++j) gx.at(i, j) += gy.at(j, i);
    });
    return out;
}

Var Tape::add_bias(Var x, Var b) {
    const Tensor &tx = val(x), &tb = val(b);
    if (tx.rank() != 2 || tb.rank() != 1 || tb.dim(0) != tx.dim(1))
        throw dim_error("add_bias: " + shape_str(tx.shape) + " vs " + shape_str(tb.shape));
    std::int64_t n = tx.dim(0), c = tx.dim(1);
    Tensor y = tx;
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < c; ++j) y.at(r, j) += tb.at(j);
    bool rg = requires_grad(x) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, x, b, n, c, out]() mutable {
        const Tensor& gy = g(out);
        if (requires_grad(x)) {
            Tensor& gx = g(x);
            for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
        }
        if (requires_grad(b)) {
            Tensor& gb = g(b);
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < c; ++j) gb.at(j) += gy.at(r, j);
        }
    });
    return out;
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(0) != tb.dim(0))
        throw dim_error("concat_cols: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    std::int64_t n = ta.dim(0), c1 = ta.dim(1), c2 = tb.dim(1);
    Tensor y({n, c1 + c2});
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t j = 0; j < c1; ++j) y.at(r, j) = ta.at(r, j);
        for (std::int64_t j = 0; j < c2; ++j) y.at(r, c1 + j) = tb.at(r, j);
    }
    bool rg = requires_grad(a) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, a, b, n, c1, c2, out]() mutable {
        const Tensor& gy = g(out);
        if (requires_grad(a)) {
            Tensor& ga = g(a);
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < c1; ++j) ga.at(r, j) += gy.at(r, j);
        }
        if (requires_grad(b)) {
            Tensor& gb = g(b);
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t j = 0; j < c2; ++j) gb.at(r, j) += gy.at(r, c1 + j);
        }
    });
    return out;
}

Var Tape::reshape(Var x, std::vector<std::int64_t> shape) {
    const Tensor& tx = val(x);
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    if (n != tx.numel())
        throw dim_error("reshape: " + shape_str(tx.shape) + " to " + shape_str(shape));
    Tensor y = tx;
    y.shape = std::move(shape);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
    });
    return out;
}

Var Tape::gather_rows(Var x, std::vector<std::int64_t> rows) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2) throw dim_error("gather_rows: need rank 2, got " + shape_str(tx.shape));
    std::int64_t n = tx.dim(0), c = tx.dim(1);
    std::int64_t k = static_cast<std::int64_t>(rows.size());
    for (auto r : rows)
        if (r < 0 || r >= n) throw dim_error("gather_rows: index " + std::to_string(r) +
                                             " out of range for " + shape_str(tx.shape));
    Tensor y({k, c});
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < c; ++j) y.at(i, j) = tx.at(rows[static_cast<std::size_t>(i)], j);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, rows = std::move(rows), c, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::int64_t j = 0; j < c; ++j)
                gx.at(rows[i], j) += gy.at(static_cast<std::int64_t>(i), j);
    });
    return out;
}

Var Tape::softmax(Var x, int axis) {
    const Tensor& tx = val(x);
    if (axis < 0 || axis >= tx.rank())
        throw dim_error("softmax: axis " + std::to_string(axis) + " for " + shape_str(tx.shape));
    std::int64_t outer = 1, len = tx.dim(axis), inner = 1;
    for (int i = 0; i < axis; ++i) outer *= tx.dim(i);
    for (int i = axis + 1; i < tx.rank(); ++i) inner *= tx.dim(i);
    Tensor y = tx;
    double denom_fault = fault::active() == fault::Kind::softmax_norm ? 1.0 + 1.0 / 1024.0 : 1.0;
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            std::int64_t base = o * len * inner + in;
            double m = -1e308;
            for (std::int64_t l = 0; l < len; ++l) m = std::max(m, y.at(base + l * inner));
            double s = 0.0;
            for (std::int64_t l = 0; l < len; ++l) {
                double e = std::exp(y.at(base + l * inner) - m);
                y.at(base + l * inner) = e;
                s += e;
            }
            s *= denom_fault;
            for (std::int64_t l = 0; l < len; ++l) y.at(base + l * inner) /= s;
        }
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, outer, len, inner, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor& ty = val(out);
        Tensor& gx = g(x);
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                std::int64_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::int64_t l = 0; l < len; ++l)
                    dot += gy.at(base + l * inner) * ty.at(base + l * inner);
                for (std::int64_t l = 0; l < len; ++l)
                    gx.at(base + l * inner) +=
                        ty.at(base + l * inner) * (gy.at(base + l * inner) - dot);
            }
    });
    return out;
}

Var Tape::max_axis(Var x, int axis) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || (axis != 0 && axis != 1))
        throw dim_error("max_axis: need rank 2 and axis 0/1, got " + shape_str(tx.shape));
    std::int64_t n = tx.dim(0), m = tx.dim(1);
    std::int64_t olen = axis == 1 ? n : m;
    Tensor y({olen});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(olen), 0);
    if (axis == 1) {
        for (std::int64_t r = 0; r < n; ++r) {
            double best = tx.at(r, 0);
            std::int64_t bi = 0;
            for (std::int64_t c = 1; c < m; ++c)
                if (tx.at(r, c) > best) best = tx.at(r, c), bi = c;
            y.at(r) = best;
            arg[static_cast<std::size_t>(r)] = bi;
        }
    } else {
        for (std::int64_t c = 0; c < m; ++c) {
            double best = tx.at(0, c);
            std::int64_t bi = 0;
            for (std::int64_t r = 1; r < n; ++r)
                if (tx.at(r, c) > best) best = tx.at(r, c), bi = r;
            y.at(c) = best;
            arg[static_cast<std::size_t>(c)] = bi;
        }
    }
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x),
               [this, x, axis, arg = std::move(arg), out]() mutable {
                   const Tensor& gy = g(out);
                   Tensor& gx = g(x);
                   for (std::size_t i = 0; i < arg.size(); ++i) {
                       std::int64_t o = static_cast<std::int64_t>(i);
                       if (axis == 1)
                           gx.at(o, arg[i]) += gy.at(o);
                       else
                           gx.at(arg[i], o) += gy.at(o);
                   }
               });
    return out;
}

Var Tape::sum(Var x) {
    const Tensor& tx = val(x);
    double s = 0.0;
    for (double v : tx.data) s += v;
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(Tensor::scalar(s), requires_grad(x), [this, x, out]() mutable {
        double gv = g(out).at(0);
        Tensor& gx = g(x);
        for (auto& v : gx.data) v += gv;
    });
    return out;
}

Var Tape::mean(Var x) {
    const Tensor& tx = val(x);
    if (tx.numel() == 0) throw dim_error("mean: empty tensor");
    double inv = 1.0 / static_cast<double>(tx.numel());
    double s = 0.0;
    for (double v : tx.data) s += v;
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(Tensor::scalar(s * inv), requires_grad(x), [this, x, inv, out]() mutable {
        double gv = g(out).at(0) * inv;
        Tensor& gx = g(x);
        for (auto& v : gx.data) v += gv;
    });
    return out;
}

Var Tape::conv2d_3x3(Var x, Var w, Var b, int stride) {
    const Tensor &tx = val(x), &tw = val(w), &tb = val(b);
    if (tx.rank() != 3 || tw.rank() != 4 || tw.dim(2) != 3 || tw.dim(3) != 3 ||
        tw.dim(1) != tx.dim(0) || tb.rank() != 1 || tb.dim(0) != tw.dim(0))
        throw dim_error("conv2d_3x3: x " + shape_str(tx.shape) + ", w " + shape_str(tw.shape) +
                        ", b " + shape_str(tb.shape));
    if (stride != 1 && stride != 2) throw error("conv2d_3x3: stride must be 1 or 2");
    std::int64_t cin = tx.dim(0), h = tx.dim(1), wd = tx.dim(2), cout = tw.dim(0);
    std::int64_t ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;
    Tensor y({cout, ho, wo});
    for (std::int64_t oc = 0; oc < cout; ++oc)
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double acc = tb.at(oc);
                for (std::int64_t ic = 0; ic < cin; ++ic)
                    for (int ky = 0; ky < 3; ++ky) {
                        std::int64_t iy = oy * stride + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            std::int64_t ix = ox * stride + kx - 1;
                            if (ix < 0 || ix >= wd) continue;
                            acc += tx.at(ic, iy, ix) * tw.data[static_cast<std::size_t>(
                                                           ((oc * cin + ic) * 3 + ky) * 3 + kx)];
                        }
                    }
                y.at(oc, oy, ox) = acc;
            }
    bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, x, w, b, stride, cin, h, wd, cout, ho, wo, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor &tx2 = val(x), &tw2 = val(w);
        Tensor* gx = requires_grad(x) ? &g(x) : nullptr;
        Tensor* gw = requires_grad(w) ? &g(w) : nullptr;
        Tensor* gb = requires_grad(b) ? &g(b) : nullptr;
        for (std::int64_t oc = 0; oc < cout; ++oc)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    double gv = gy.at(oc, oy, ox);
                    if (gv == 0.0) continue;
                    if (gb) gb->at(oc) += gv;
                    for (std::int64_t ic = 0; ic < cin; ++ic)
                        for (int ky = 0; ky < 3; ++ky) {
                            std::int64_t iy = oy * stride + ky - 1;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                std::int64_t ix = ox * stride + kx - 1;
                                if (ix < 0 || ix >= wd) continue;
                                std::size_t wi = static_cast<std::size_t>(
                                    ((oc * cin + ic) * 3 + ky) * 3 + kx);
                                if (gx) gx->at(ic, iy, ix) += gv * tw2.data[wi];
                                if (gw) gw->data[wi] += gv * tx2.at(ic, iy, ix);
                            }
                        }
                }
    });
    return out;
}

Var Tape::depthwise_3x3(Var x, Var w, Var b) {
    const Tensor &tx = val(x), &tw = val(w), &tb = val(b);
    if (tx.rank() != 3 || tw.rank() != 3 || tw.dim(0) != tx.dim(0) || tw.dim(1) != 3 ||
        tw.dim(2) != 3 || tb.rank() != 1 || tb.dim(0) != tx.dim(0))
        throw dim_error("depthwise_3x3: x " + shape_str(tx.shape) + ", w " + shape_str(tw.shape) +
                        ", b " + shape_str(tb.shape));
    std::int64_t c = tx.dim(0), h = tx.dim(1), wd = tx.dim(2);
    Tensor y({c, h, wd});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t oy = 0; oy < h; ++oy)
            for (std::int64_t ox = 0; ox < wd; ++ox) {
                double acc = tb.at(ch);
                for (int ky = 0; ky < 3; ++ky) {
                    std::int64_t iy = oy + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        std::int64_t ix = ox + kx - 1;
                        if (ix < 0 || ix >= wd) continue;
                        acc += tx.at(ch, iy, ix) * tw.at(ch, ky, kx);
                    }
                }
                y.at(ch, oy, ox) = acc;
            }
    bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), rg, [this, x, w, b, c, h, wd, out]() mutable {
        const Tensor& gy = g(out);
        const Tensor &tx2 = val(x), &tw2 = val(w);
        Tensor* gx = requires_grad(x) ? &g(x) : nullptr;
        Tensor* gw = requires_grad(w) ? &g(w) : nullptr;
        Tensor* gb = requires_grad(b) ? &g(b) : nullptr;
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t oy = 0; oy < h; ++oy)
                for (std::int64_t ox = 0; ox < wd; ++ox) {
                    double gv = gy.at(ch, oy, ox);
                    if (gv == 0.0) continue;
                    if (gb) gb->at(ch) += gv;
                    for (int ky = 0; ky < 3; ++ky) {
                        std::int64_t iy = oy + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            std::int64_t ix = ox + kx - 1;
                            if (ix < 0 || ix >= wd) continue;
                            if (gx) gx->at(ch, iy, ix) += gv * tw2.at(ch, ky, kx);
                            if (gw) gw->at(ch, ky, kx) += gv * tx2.at(ch, iy, ix);
                        }
                    }
                }
    });
    return out;
}

Var Tape::maxpool2d(Var x, int k, int stride) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw dim_error("maxpool2d: need rank 3, got " + shape_str(tx.shape));
    std::int64_t c = tx.dim(0), h = tx.dim(1), wd = tx.dim(2);
    if (h < k || wd < k) throw dim_error("maxpool2d: window larger than input " + shape_str(tx.shape));
    std::int64_t ho = (h - k) / stride + 1, wo = (wd - k) / stride + 1;
    Tensor y({c, ho, wo});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(c * ho * wo));
    std::size_t ai = 0;
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double best = -1e308;
                std::int64_t bi = 0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        std::int64_t iy = oy * stride + ky, ix = ox * stride + kx;
                        double v = tx.at(ch, iy, ix);
                        if (v > best) {
                            best = v;
                            bi = iy * wd + ix;
                        }
                    }
                y.at(ch, oy, ox) = best;
                arg[ai++] = bi;
            }
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x),
               [this, x, h, wd, arg = std::move(arg), out]() mutable {
                   const Tensor& gy = g(out);
                   Tensor& gx = g(x);
                   std::int64_t hw = h * wd;
                   for (std::size_t i = 0; i < arg.size(); ++i) {
                       std::int64_t ch = static_cast<std::int64_t>(i) / (gy.dim(1) * gy.dim(2));
                       gx.data[static_cast<std::size_t>(ch * hw + arg[i])] += gy.data[i];
                   }
               });
    return out;
}

Var Tape::seq2img(Var x, std::int64_t h, std::int64_t wd) {
    const Tensor& tx = val(x);
    if (tx.rank() != 2 || tx.dim(0) != h * wd)
        throw dim_error("seq2img: " + shape_str(tx.shape) + " to " + std::to_string(h) + "x" +
                        std::to_string(wd));
    std::int64_t c = tx.dim(1);
    Tensor y({c, h, wd});
    for (std::int64_t p = 0; p < h * wd; ++p)
        for (std::int64_t ch = 0; ch < c; ++ch)
            y.data[static_cast<std::size_t>(ch * h * wd + p)] = tx.at(p, ch);
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, h, wd, c, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::int64_t p = 0; p < h * wd; ++p)
            for (std::int64_t ch = 0; ch < c; ++ch)
                gx.at(p, ch) += gy.data[static_cast<std::size_t>(ch * h * wd + p)];
    });
    return out;
}

Var Tape::img2seq(Var x) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw dim_error("img2seq: need rank 3, got " + shape_str(tx.shape));
    std::int64_t c = tx.dim(0), h = tx.dim(1), wd = tx.dim(2);
    Tensor y({h * wd, c});
    for (std::int64_t p = 0; p < h * wd; ++p)
        for (std::int64_t ch = 0; ch < c; ++ch)
            y.at(p, ch) = tx.data[static_cast<std::size_t>(ch * h * wd + p)];
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, c, h, wd, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        for (std::int64_t p = 0; p < h * wd; ++p)
            for (std::int64_t ch = 0; ch < c; ++ch)
                gx.data[static_cast<std::size_t>(ch * h * wd + p)] += gy.at(p, ch);
    });
    return out;
}

Var Tape::gather_window(Var x, std::int64_t cy, std::int64_t cx, int w) {
    const Tensor& tx = val(x);
    if (tx.rank() != 3) throw dim_error("gather_window: need rank 3, got " + shape_str(tx.shape));
    if (w < 1 || w % 2 == 0) throw error("gather_window: window must be odd and positive");
    std::int64_t c = tx.dim(0), h = tx.dim(1), wd = tx.dim(2);
    std::int64_t half = w / 2;
    Tensor y({static_cast<std::int64_t>(w) * w, c});
    for (std::int64_t p = 0; p < static_cast<std::int64_t>(w) * w; ++p) {
        std::int64_t iy = cy + p / w - half, ix = cx + p % w - half;
        if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
        for (std::int64_t ch = 0; ch < c; ++ch) y.at(p, ch) = tx.at(ch, iy, ix);
    }
    Var out{static_cast<std::int32_t>(nodes_.size())};
    push(std::move(y), requires_grad(x), [this, x, cy, cx, w, h, wd, c, out]() mutable {
        const Tensor& gy = g(out);
        Tensor& gx = g(x);
        std::int64_t half = w / 2;
        for (std::int64_t p = 0; p < static_cast<std::int64_t>(w) * w; ++p) {
            std::int64_t iy = cy + p / w - half, ix = cx + p % w - half;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            for (std::int64_t ch = 0; ch < c; ++ch) gx.at(ch, iy, ix) += gy.at(p, ch);
        }
    });
    return out;
}

void Tape::backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.value.shape != std::vector<std::int64_t>{1})
        throw error("backward: loss must be a scalar of shape [1], got " +
                    shape_str(ln.value.shape));
    if (swept_) throw error("backward: tape already swept");
    swept_ = true;
    if (!ln.requires_grad) return;
    node(loss).grad.at(0) = 1.0;
    for (std::int32_t i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back) n.back();
    }
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

double max_grad_rel_err(const std::vector<Tensor>& inputs,
                        const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                        double eps) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& in : inputs) vars.push_back(t.leaf(in, true));
    Var loss = build(t, vars);
    t.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(vars.size());
    for (auto v : vars) analytic.push_back(t.grad(v));

    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape tt;
        std::vector<Var> vs;
        vs.reserve(xs.size());
        for (const auto& in : xs) vs.push_back(tt.leaf(in, false));
        return tt.val(build(tt, vs)).at(0);
    };

    double worst = 0.0;
    std::vector<Tensor> xs = inputs;
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::int64_t j = 0; j < xs[i].numel(); ++j) {
            double orig = xs[i].at(j);
            xs[i].at(j) = orig + eps;
            double fp = eval(xs);
            xs[i].at(j) = orig - eps;
            double fm = eval(xs);
            xs[i].at(j) = orig;
            double fd = (fp - fm) / (2.0 * eps);
            worst = std::max(worst, rel_err(fd, analytic[i].at(j)));
        }
    return worst;
}

}  // namespace covis
