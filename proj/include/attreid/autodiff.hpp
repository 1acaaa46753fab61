#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "attreid/tensor.hpp"

namespace attreid {

// Parameters of the ADH activation: K * (x+1)^T for x > 0, K * e^x otherwise.
struct ActivationParams {
    double K;
    double T;

    ActivationParams(double k = 0.5, double t = 1.0) : K(k), T(t) {
        if (!(K > 0.0 && K < 1.0)) throw InvalidParam("activation K must be in (0,1)");
        if (!(T > 0.0)) throw InvalidParam("activation T must be > 0");
    }
};

// Handle to a node of a reverse-mode differentiation tape. Tapes are built
// per forward call and freed when the last handle to the result goes away;
// leaves survive as long as their owners hold them.
class Var {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;
    };

    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var leaf(Tensor value, bool requires_grad = true);
    static Var constant(Tensor value) { return leaf(std::move(value), false); }
    static Var constant(double value) { return leaf(Tensor::scalar(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool rg);  // leaves only; used to freeze parameters
    double scalar() const;
    void zero_grad();

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar root; leaf grads accumulate.
void backward(const Var& root);

// Elementwise / scalar arithmetic (same-shape operands).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);  // scalar / scalar
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var sum(const Var& a);   // -> scalar
Var mean(const Var& a);  // -> scalar
Var relu(const Var& a);
Var abs_val(const Var& a);
// max(0, x), subgradient 0 on the flat side.
inline Var hinge(const Var& x) { return relu(x); }

// Eq.-style activation applied elementwise; output strictly positive.
Var delta_activation(const Var& x, const ActivationParams& p);

// Generalized-mean pooling over the spatial dims of a [C,h,w] tensor.
// Values are clamped to >= eps before the power so non-integer p stays real.
Var gem_pool(const Var& f, double p, double eps = 1e-6);

// Cross-correlation of [Cin,h,w] with [Cout,Cin,k,k]; bias may be undefined.
Var conv2d(const Var& input, const Var& kernel, const Var& bias, std::size_t stride,
           std::size_t padding);

// Per-channel learnable scaling of a [C,h,w] tensor by a [C] vector.
Var channel_scale(const Var& f, const Var& s);

// logits = W x + b with W [N,C], x [C], b [N].
Var linear(const Var& x, const Var& weight, const Var& bias);

// View-like ops on [M,h,w] stacks.
Var slice_channel(const Var& stack, std::size_t k);     // -> [h,w]
Var spatial_mul(const Var& f, const Var& a);            // [C,h,w] * [h,w]

// Euclidean distance between two equal-length vectors; subgradient 0 at
// coincident points.
Var l2_distance(const Var& a, const Var& b);

// Softmax cross-entropy of a logit vector against a class index.
Var softmax_cross_entropy(const Var& logits, std::size_t target);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Coordinates where check_mask is false are skipped (kink exclusion).
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step,
                  const std::vector<bool>* check_mask = nullptr);

}  // namespace attreid
