#include "attreid/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace attreid {

namespace {

using Node = Var::Node;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents) {
        if (!p.defined()) continue;
        n->requires_grad = n->requires_grad || p.requires_grad();
        n->parents.push_back(p.node());
    }
    if (n->requires_grad) {
        n->grad = Tensor::zeros(n->value.shape());
        n->backward = std::move(bw);
    }
    return Var(n);
}

// Accumulation target for a parent; grads are allocated at leaf/node creation.
Tensor* grad_of(Node& n, std::size_t parent) {
    auto& p = n.parents[parent];
    if (!p->requires_grad) return nullptr;
    return &p->grad;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    if (requires_grad) n->grad = Tensor::zeros(value.shape());
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

double Var::scalar() const {
    if (node_->value.size() != 1) throw ShapeMismatch("scalar() on non-scalar tensor");
    return node_->value[0];
}

void Var::set_requires_grad(bool rg) {
    if (!node_) throw InvalidParam("set_requires_grad on undefined Var");
    node_->requires_grad = rg;
    if (rg && node_->grad.size() != node_->value.size())
        node_->grad = Tensor::zeros(node_->value.shape());
}

void Var::zero_grad() {
    if (node_ && node_->requires_grad)
        std::fill(node_->grad.data(), node_->grad.data() + node_->grad.size(), 0.0);
}

void backward(const Var& root) {
    if (!root.defined()) throw InvalidParam("backward on undefined Var");
    if (root.value().size() != 1) throw ShapeMismatch("backward root must be scalar");
    if (!root.requires_grad()) return;

    // Post-order DFS so the reverse walk visits each node before its parents.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t p = 0; p < 2; ++p)
            if (Tensor* g = grad_of(n, p))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        if (Tensor* g = grad_of(n, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        if (Tensor* g = grad_of(n, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
    });
}

Var div(const Var& a, const Var& b) {
    if (a.value().size() != 1 || b.value().size() != 1)
        throw ShapeMismatch("div expects scalar operands");
    double bv = b.value()[0];
    Tensor out = Tensor::scalar(a.value()[0] / bv);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        double av = n.parents[0]->value[0];
        double bv = n.parents[1]->value[0];
        if (Tensor* g = grad_of(n, 0)) (*g)[0] += n.grad[0] / bv;
        if (Tensor* g = grad_of(n, 1)) (*g)[0] -= n.grad[0] * av / (bv * bv);
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return make_node(std::move(out), {a}, [c](Node& n) {
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * c;
    });
}

Var add_const(const Var& a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    return make_node(std::move(out), {a}, [](Node& n) {
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i];
    return make_node(Tensor::scalar(s), {a}, [](Node& n) {
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[0];
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var relu(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    return make_node(std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (x[i] > 0.0) (*g)[i] += n.grad[i];
    });
}

Var abs_val(const Var& a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
    return make_node(std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (x[i] > 0.0)
                    (*g)[i] += n.grad[i];
                else if (x[i] < 0.0)
                    (*g)[i] -= n.grad[i];
            }
    });
}

Var delta_activation(const Var& x, const ActivationParams& p) {
    const double K = p.K, T = p.T;
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = out[i];
        out[i] = v > 0.0 ? K * std::pow(v + 1.0, T) : K * std::exp(v);
    }
    return make_node(std::move(out), {x}, [K, T](Node& n) {
        const Tensor& x = n.parents[0]->value;
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                // left-branch derivative K*e^x at exactly 0
                double d = x[i] > 0.0 ? K * T * std::pow(x[i] + 1.0, T - 1.0)
                                      : K * std::exp(x[i]);
                (*g)[i] += n.grad[i] * d;
            }
    });
}

Var gem_pool(const Var& f, double p, double eps) {
    if (p < 1.0) throw InvalidParam("gem exponent p must be >= 1");
    const Tensor& v = f.value();
    if (v.rank() != 3) throw ShapeMismatch("gem_pool expects a [C,h,w] tensor");
    const std::size_t C = v.dim(0), n_sp = v.dim(1) * v.dim(2);
    Tensor out({C});
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n_sp; ++i) {
            double u = std::max(v[c * n_sp + i], eps);
            s += (p == 1.0) ? u : std::pow(u, p);
        }
        s /= static_cast<double>(n_sp);
        out[c] = (p == 1.0) ? s : std::pow(s, 1.0 / p);
    }
    return make_node(std::move(out), {f}, [p, eps, C, n_sp](Node& n) {
        const Tensor& x = n.parents[0]->value;
        const Tensor& y = n.value;
        Tensor* g = grad_of(n, 0);
        if (!g) return;
        for (std::size_t c = 0; c < C; ++c) {
            // y = S^{1/p}, S = mean(u^p)  =>  dy/du_i = u_i^{p-1} S^{1/p-1} / n
            double s_pow = (p == 1.0) ? 1.0 : std::pow(y[c], 1.0 - p);
            for (std::size_t i = 0; i < n_sp; ++i) {
                double xi = x[c * n_sp + i];
                if (xi < eps) continue;  // clamped coordinate
                double u = std::max(xi, eps);
                double du = (p == 1.0) ? 1.0 : std::pow(u, p - 1.0) * s_pow;
                (*g)[c * n_sp + i] += n.grad[c] * du / static_cast<double>(n_sp);
            }
        }
    });
}

Var conv2d(const Var& input, const Var& kernel, const Var& bias, std::size_t stride,
           std::size_t padding) {
    const Tensor& in = input.value();
    const Tensor& ker = kernel.value();
    if (in.rank() != 3 || ker.rank() != 4) throw ShapeMismatch("conv2d: expected [Cin,h,w] and [Cout,Cin,k,k]");
    if (in.dim(0) != ker.dim(1)) throw ShapeMismatch("conv2d: input channels do not match kernel");
    if (stride == 0) throw InvalidParam("conv2d: stride must be >= 1");
    const std::size_t cin = in.dim(0), h = in.dim(1), w = in.dim(2);
    const std::size_t cout = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
    if (h + 2 * padding < kh || w + 2 * padding < kw)
        throw ShapeMismatch("conv2d: kernel larger than padded input");
    const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
    if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != cout))
        throw ShapeMismatch("conv2d: bias shape must be [Cout]");

    Tensor out({cout, ho, wo});
    for (std::size_t o = 0; o < cout; ++o) {
        const double b = bias.defined() ? bias.value()[o] : 0.0;
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t x = 0; x < wo; ++x) {
                double acc = b;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                                      static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += in.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                                   ker.at(o, ci, ky, kx);
                        }
                    }
                out.at(o, y, x) = acc;
            }
    }

    std::vector<Var> parents{input, kernel};
    if (bias.defined()) parents.push_back(bias);
    const bool has_bias = bias.defined();
    return make_node(std::move(out), std::move(parents),
                     [stride, padding, has_bias](Node& n) {
        const Tensor& in = n.parents[0]->value;
        const Tensor& ker = n.parents[1]->value;
        const std::size_t cin = in.dim(0), h = in.dim(1), w = in.dim(2);
        const std::size_t cout = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
        const std::size_t ho = n.value.dim(1), wo = n.value.dim(2);
        Tensor* gin = grad_of(n, 0);
        Tensor* gker = grad_of(n, 1);
        Tensor* gbias = has_bias ? grad_of(n, 2) : nullptr;
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x) {
                    const double g = n.grad.at(o, y, x);
                    if (g == 0.0) continue;
                    if (gbias) (*gbias)[o] += g;
                    if (!gin && !gker) continue;
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                                      static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                                          static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                const auto uy = static_cast<std::size_t>(iy);
                                const auto ux = static_cast<std::size_t>(ix);
                                if (gin) gin->at(ci, uy, ux) += g * ker.at(o, ci, ky, kx);
                                if (gker) gker->at(o, ci, ky, kx) += g * in.at(ci, uy, ux);
                            }
                        }
                }
    });
}

Var channel_scale(const Var& f, const Var& s) {
    const Tensor& v = f.value();
    if (v.rank() != 3) throw ShapeMismatch("channel_scale expects [C,h,w]");
    if (s.value().rank() != 1 || s.value().dim(0) != v.dim(0))
        throw ShapeMismatch("channel_scale: scale must be [C]");
    const std::size_t C = v.dim(0), n_sp = v.dim(1) * v.dim(2);
    Tensor out = v;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < n_sp; ++i) out[c * n_sp + i] *= s.value()[c];
    return make_node(std::move(out), {f, s}, [C, n_sp](Node& n) {
        const Tensor& fv = n.parents[0]->value;
        const Tensor& sv = n.parents[1]->value;
        Tensor* gf = grad_of(n, 0);
        Tensor* gs = grad_of(n, 1);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < n_sp; ++i) {
                const double g = n.grad[c * n_sp + i];
                if (gf) (*gf)[c * n_sp + i] += g * sv[c];
                if (gs) (*gs)[c] += g * fv[c * n_sp + i];
            }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(1) != xv.dim(0))
        throw ShapeMismatch("linear: expected x [C], W [N,C]");
    const std::size_t N = wv.dim(0), C = wv.dim(1);
    if (bias.value().rank() != 1 || bias.value().dim(0) != N)
        throw ShapeMismatch("linear: bias must be [N]");
    Tensor out({N});
    for (std::size_t i = 0; i < N; ++i) {
        double acc = bias.value()[i];
        for (std::size_t j = 0; j < C; ++j) acc += wv.at(i, j) * xv[j];
        out[i] = acc;
    }
    return make_node(std::move(out), {x, weight, bias}, [N, C](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        Tensor* gx = grad_of(n, 0);
        Tensor* gw = grad_of(n, 1);
        Tensor* gb = grad_of(n, 2);
        for (std::size_t i = 0; i < N; ++i) {
            const double g = n.grad[i];
            if (gb) (*gb)[i] += g;
            for (std::size_t j = 0; j < C; ++j) {
                if (gx) (*gx)[j] += g * wv.at(i, j);
                if (gw) gw->at(i, j) += g * xv[j];
            }
        }
    });
}

Var slice_channel(const Var& stack, std::size_t k) {
    const Tensor& v = stack.value();
    if (v.rank() != 3) throw ShapeMismatch("slice_channel expects [M,h,w]");
    if (k >= v.dim(0)) throw IndexOutOfRange("slice_channel: channel out of range");
    const std::size_t n_sp = v.dim(1) * v.dim(2);
    Tensor out({v.dim(1), v.dim(2)});
    for (std::size_t i = 0; i < n_sp; ++i) out[i] = v[k * n_sp + i];
    return make_node(std::move(out), {stack}, [k, n_sp](Node& n) {
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < n_sp; ++i) (*g)[k * n_sp + i] += n.grad[i];
    });
}

Var spatial_mul(const Var& f, const Var& a) {
    const Tensor& fv = f.value();
    const Tensor& av = a.value();
    if (fv.rank() != 3 || av.rank() != 2 || fv.dim(1) != av.dim(0) || fv.dim(2) != av.dim(1))
        throw ShapeMismatch("spatial_mul: expected [C,h,w] and matching [h,w]");
    const std::size_t C = fv.dim(0), n_sp = av.size();
    Tensor out = fv;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < n_sp; ++i) out[c * n_sp + i] *= av[i];
    return make_node(std::move(out), {f, a}, [C, n_sp](Node& n) {
        const Tensor& fv = n.parents[0]->value;
        const Tensor& av = n.parents[1]->value;
        Tensor* gf = grad_of(n, 0);
        Tensor* ga = grad_of(n, 1);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < n_sp; ++i) {
                const double g = n.grad[c * n_sp + i];
                if (gf) (*gf)[c * n_sp + i] += g * av[i];
                if (ga) (*ga)[i] += g * fv[c * n_sp + i];
            }
    });
}

Var l2_distance(const Var& a, const Var& b) {
    check_same_shape(a, b, "l2_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    return make_node(Tensor::scalar(std::sqrt(s)), {a, b}, [](Node& n) {
        const double d = n.value[0];
        if (d == 0.0) return;  // subgradient 0 at coincidence
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        Tensor* ga = grad_of(n, 0);
        Tensor* gb = grad_of(n, 1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double g = n.grad[0] * (av[i] - bv[i]) / d;
            if (ga) (*ga)[i] += g;
            if (gb) (*gb)[i] -= g;
        }
    });
}

Var softmax_cross_entropy(const Var& logits, std::size_t target) {
    const Tensor& z = logits.value();
    if (z.rank() != 1) throw ShapeMismatch("softmax_cross_entropy expects a logit vector");
    if (target >= z.dim(0)) throw IndexOutOfRange("softmax_cross_entropy: target out of range");
    double mx = z[0];
    for (std::size_t i = 1; i < z.size(); ++i) mx = std::max(mx, z[i]);
    double se = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) se += std::exp(z[i] - mx);
    const double loss = std::log(se) + mx - z[target];
    return make_node(Tensor::scalar(loss), {logits}, [target, mx, se](Node& n) {
        const Tensor& z = n.parents[0]->value;
        if (Tensor* g = grad_of(n, 0))
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double p = std::exp(z[i] - mx) / se;
                (*g)[i] += n.grad[0] * (p - (i == target ? 1.0 : 0.0));
            }
    });
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step,
                  const std::vector<bool>* check_mask) {
    Var leaf = Var::leaf(x, true);
    Var y = f(leaf);
    if (!y.value().all_finite()) throw NonFinite("grad_check: function value is non-finite");
    backward(y);
    Tensor analytic = leaf.grad();
    if (!analytic.all_finite()) throw NonFinite("grad_check: analytic gradient is non-finite");

    double max_err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (check_mask && !(*check_mask)[i]) continue;
        Tensor hi = x, lo = x;
        hi[i] += step;
        lo[i] -= step;
        const double fhi = f(Var::constant(hi)).scalar();
        const double flo = f(Var::constant(lo)).scalar();
        if (!std::isfinite(fhi) || !std::isfinite(flo))
            throw NonFinite("grad_check: perturbed function value is non-finite");
        const double fd = (fhi - flo) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace attreid
