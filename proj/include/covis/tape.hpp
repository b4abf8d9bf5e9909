#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "covis/tensor.hpp"

namespace covis {

// Handle into a Tape. Cheap to copy; only meaningful for the tape that made it.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over a fixed op vocabulary. One tape per forward pass;
// ops append nodes, backward() runs a single reverse sweep from the loss.
// Ops where no input requires gradients skip closure creation entirely, so
// inference runs on the same code path without bookkeeping cost.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor t, bool requires_grad);
    Var constant(Tensor t) { return leaf(std::move(t), false); }

    const Tensor& val(Var v) const { return node(v).value; }
    const Tensor& grad(Var v) const;
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // elementwise, same shape
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    // y = c * x  /  y = x + c
    Var scale(Var x, double c);
    Var add_scalar(Var x, double c);
    Var one_minus(Var x);  // 1 - x
    // elementwise against a plain tensor (no gradient into the constant)
    Var add_const(Var x, const Tensor& c);
    Var mul_const(Var x, const Tensor& c);
    // rows of a 2-D tensor scaled per-row: y[r,:] = x[r,:] * w[r]
    Var mul_rows(Var x, const Tensor& w);
    Var powi(Var x, int n);  // n >= 1

    // activations / pointwise nonlinearities
    Var elu_plus_one(Var x);       // x>=0: x+1, else exp(x)
    Var gelu(Var x);               // exact erf form
    Var sigmoid(Var x);
    Var log(Var x);
    Var clamp(Var x, double lo, double hi);

    // linear algebra, 2-D
    Var matmul(Var a, Var b);
    Var transpose(Var x);
    Var add_bias(Var x, Var b);    // [n,c] + [c]
    Var concat_cols(Var a, Var b); // [n,c1] ++ [n,c2] -> [n,c1+c2]
    Var reshape(Var x, std::vector<std::int64_t> shape);
    Var gather_rows(Var x, std::vector<std::int64_t> rows);

    // softmax along an axis, any rank
    Var softmax(Var x, int axis);
    // max along an axis of a 2-D tensor: axis=1 -> [n] of row maxima,
    // axis=0 -> [m] of column maxima; gradient routes to the first argmax
    Var max_axis(Var x, int axis);

    // reductions to a scalar (shape [1])
    Var sum(Var x);
    Var mean(Var x);

    // image ops; x is [c,h,w]
    Var conv2d_3x3(Var x, Var w, Var b, int stride);    // pad 1, w is [cout,cin,3,3]
    Var depthwise_3x3(Var x, Var w, Var b);             // pad 1, w is [c,3,3]
    Var maxpool2d(Var x, int k, int stride);
    Var seq2img(Var x, std::int64_t h, std::int64_t wd); // [h*w,c] -> [c,h,w]
    Var img2seq(Var x);                                  // [c,h,w] -> [h*w,c]
    // w x w crop around (cy,cx), zero outside the frame -> [w*w, c]
    Var gather_window(Var x, std::int64_t cy, std::int64_t cx, int w);

    // seeds d(loss)/d(loss)=1 and sweeps the tape in reverse
    void backward(Var loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void()> back;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Tensor value, bool requires_grad, std::function<void()> back);
    Tensor& g(Var v) { return node(v).grad; }

    std::vector<Node> nodes_;
    bool swept_ = false;
};

// |a-b| / max(|a|,|b|,1e-3)
double rel_err(double a, double b);

// Central-difference gradient check. `build` constructs the scalar loss from
// the leaves it is handed; returns the worst relative error over all leaf
// gradient entries.
double max_grad_rel_err(const std::vector<Tensor>& inputs,
                        const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                        double eps = 1e-5);

}  // namespace covis
