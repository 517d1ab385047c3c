#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "advlab/core/tensor.hpp"

namespace advlab {

// Reverse-mode autodiff over a dynamic tape. A Var wraps a Node holding the
// value, the (lazily allocated) gradient, and a closure that scatters the
// node's gradient into its parents. Graphs are rebuilt every forward pass.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;  // true for leaves that want gradients
    bool needs_grad = false;     // true if any leaf below requires grad
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad() {
        if (grad.shape != val.shape) grad = Tensor::zeros(val.shape);
        return grad;
    }
    void zero_grad() {
        if (!grad.data.empty()) std::fill(grad.data.begin(), grad.data.end(), 0.0f);
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    return n;
}

inline Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = true;
    n->needs_grad = true;
    return n;
}

namespace detail {

inline bool tracked(std::initializer_list<const Var*> parents) {
    if (!grad_mode()) return false;
    for (const Var* p : parents)
        if ((*p)->needs_grad) return true;
    return false;
}

inline Var make_op(Tensor value, std::initializer_list<Var> parents, std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    bool track = grad_mode();
    if (track) {
        bool any = false;
        for (const Var& p : parents) any = any || p->needs_grad;
        track = any;
    }
    if (track) {
        n->needs_grad = true;
        n->parents.assign(parents.begin(), parents.end());
        n->backprop = std::move(back);
    }
    return n;
}

}  // namespace detail

// Runs reverse-mode accumulation from a scalar (or any) root. Root gradient
// is seeded with ones. Iterative topological order; leaf grads accumulate,
// so parameter grads must be zeroed between optimizer steps.
inline void backward(const Var& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is children-after-parents reversed below
    auto& g = root->ensure_grad();
    std::fill(g.data.begin(), g.data.end(), 1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "add");
    Tensor out = a->val;
    const float* bp = b->val.ptr();
    float* op = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] += bp[i];
    return detail::make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& n) {
        const float* g = n.grad.ptr();
        if (a->needs_grad) {
            float* ga = a->ensure_grad().ptr();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
        }
        if (b->needs_grad) {
            float* gb = b->ensure_grad().ptr();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += g[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "sub");
    Tensor out = a->val;
    const float* bp = b->val.ptr();
    float* op = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] -= bp[i];
    return detail::make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& n) {
        const float* g = n.grad.ptr();
        if (a->needs_grad) {
            float* ga = a->ensure_grad().ptr();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
        }
        if (b->needs_grad) {
            float* gb = b->ensure_grad().ptr();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] -= g[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "mul");
    Tensor out = a->val;
    const float* bp = b->val.ptr();
    float* op = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] *= bp[i];
    return detail::make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& n) {
        const float* g = n.grad.ptr();
        if (a->needs_grad) {
            float* ga = a->ensure_grad().ptr();
            const float* bv = b->val.ptr();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (b->needs_grad) {
            float* gb = b->ensure_grad().ptr();
            const float* av = a->val.ptr();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a->val;
    for (auto& v : out.data) v = static_cast<float>(v * s);
    return detail::make_op(std::move(out), {a}, [a = a.get(), s](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += static_cast<float>(g[i] * s);
    });
}

inline Var add_scalar(const Var& a, double s) {
    Tensor out = a->val;
    for (auto& v : out.data) v = static_cast<float>(v + s);
    return detail::make_op(std::move(out), {a}, [a = a.get()](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var relu(const Var& a) {
    Tensor out = a->val;
    for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
    return detail::make_op(std::move(out), {a}, [a = a.get()](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        const float* x = a->val.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (x[i] > 0.0f) ga[i] += g[i];
    });
}

inline Var silu(const Var& a) {
    Tensor out = a->val;
    for (auto& v : out.data) {
        float s = 1.0f / (1.0f + std::exp(-v));
        v = v * s;
    }
    return detail::make_op(std::move(out), {a}, [a = a.get()](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        const float* x = a->val.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            float s = 1.0f / (1.0f + std::exp(-x[i]));
            ga[i] += g[i] * s * (1.0f + x[i] * (1.0f - s));
        }
    });
}

inline Var sigmoid(const Var& a) {
    Tensor out = a->val;
    for (auto& v : out.data) v = 1.0f / (1.0f + std::exp(-v));
    return detail::make_op(std::move(out), {a}, [a = a.get()](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        const float* y = n.val.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * y[i] * (1.0f - y[i]);
    });
}

inline Var tanh_act(const Var& a) {
    Tensor out = a->val;
    for (auto& v : out.data) v = std::tanh(v);
    return detail::make_op(std::move(out), {a}, [a = a.get()](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        const float* y = n.val.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i] * (1.0f - y[i] * y[i]);
    });
}

// clamp with tensor bounds; gradient flows to `a` wherever the output equals
// the input (lo <= v <= hi), and is cut where the clamp is active
inline Var clamp(const Var& a, const Tensor& lo, const Tensor& hi) {
    require_same_shape(a->val, lo, "clamp lo");
    require_same_shape(a->val, hi, "clamp hi");
    Tensor out = a->val;
    const float* lp = lo.ptr();
    const float* hp = hi.ptr();
    float* op = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] = std::min(std::max(op[i], lp[i]), hp[i]);
    return detail::make_op(std::move(out), {a}, [a = a.get(), lo, hi](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        const float* x = a->val.ptr();
        const float* lp = lo.ptr();
        const float* hp = hi.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (x[i] >= lp[i] && x[i] <= hp[i]) ga[i] += g[i];
    });
}

inline Var clamp_scalar(const Var& a, float lo, float hi) {
    Tensor out = a->val;
    for (auto& v : out.data) v = std::min(std::max(v, lo), hi);
    return detail::make_op(std::move(out), {a}, [a = a.get(), lo, hi](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        const float* x = a->val.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace detail {

inline void matmul_acc(const float* A, const float* B, float* C, int n, int k, int m,
                       bool transpose_a, bool transpose_b) {
    // C[n,m] += opA(A) * opB(B)
    for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
            const float av = transpose_a ? A[static_cast<size_t>(p) * n + i] : A[static_cast<size_t>(i) * k + p];
            const float* brow = transpose_b ? nullptr : B + static_cast<size_t>(p) * m;
            float* crow = C + static_cast<size_t>(i) * m;
            if (!transpose_b) {
                for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
            } else {
                for (int j = 0; j < m; ++j) crow[j] += av * B[static_cast<size_t>(j) * k + p];
            }
        }
    }
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
    if (a->val.ndim() != 2 || b->val.ndim() != 2 || a->val.dim(1) != b->val.dim(0))
        throw ShapeError("matmul: incompatible shapes " + a->val.shape_str() + " x " + b->val.shape_str());
    const int n = a->val.dim(0), k = a->val.dim(1), m = b->val.dim(1);
    Tensor out({n, m});
    detail::matmul_acc(a->val.ptr(), b->val.ptr(), out.ptr(), n, k, m, false, false);
    return detail::make_op(std::move(out), {a, b}, [a = a.get(), b = b.get(), n, k, m](Node& node) {
        const float* g = node.grad.ptr();
        if (a->needs_grad) {
            // dA = G * B^T  -> [n,k]
            float* ga = a->ensure_grad().ptr();
            const float* bv = b->val.ptr();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    const float* grow = g + static_cast<size_t>(i) * m;
                    const float* brow = bv + static_cast<size_t>(p) * m;
                    double acc = 0.0;
                    for (int j = 0; j < m; ++j) acc += static_cast<double>(grow[j]) * brow[j];
                    ga[static_cast<size_t>(i) * k + p] += static_cast<float>(acc);
                }
        }
        if (b->needs_grad) {
            // dB = A^T * G -> [k,m]
            float* gb = b->ensure_grad().ptr();
            const float* av = a->val.ptr();
            detail::matmul_acc(av, g, gb, k, n, m, true, false);
        }
    });
}

inline Var transpose2d(const Var& a) {
    if (a->val.ndim() != 2) throw ShapeError("transpose2d needs 2-d input");
    const int n = a->val.dim(0), m = a->val.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at2(j, i) = a->val.at2(i, j);
    return detail::make_op(std::move(out), {a}, [a = a.get(), n, m](Node& node) {
        if (!a->needs_grad) return;
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) ga.at2(i, j) += node.grad.at2(j, i);
    });
}

// y = x + v broadcast over rows; x [n,m], v [m]
inline Var add_rowvec(const Var& x, const Var& v) {
    if (x->val.ndim() != 2 || v->val.ndim() != 1 || x->val.dim(1) != v->val.dim(0))
        throw ShapeError("add_rowvec shapes " + x->val.shape_str() + " + " + v->val.shape_str());
    const int n = x->val.dim(0), m = x->val.dim(1);
    Tensor out = x->val;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at2(i, j) += v->val[j];
    return detail::make_op(std::move(out), {x, v}, [x = x.get(), v = v.get(), n, m](Node& node) {
        const float* g = node.grad.ptr();
        if (x->needs_grad) {
            float* gx = x->ensure_grad().ptr();
            for (int64_t i = 0; i < node.grad.numel(); ++i) gx[i] += g[i];
        }
        if (v->needs_grad) {
            float* gv = v->ensure_grad().ptr();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) gv[j] += g[static_cast<size_t>(i) * m + j];
        }
    });
}

inline Var softmax_rows(const Var& x) {
    if (x->val.ndim() != 2) throw ShapeError("softmax_rows needs 2-d input");
    const int n = x->val.dim(0), m = x->val.dim(1);
    Tensor out = x->val;
    for (int i = 0; i < n; ++i) {
        float* row = out.ptr() + static_cast<size_t>(i) * m;
        float mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        const float inv = static_cast<float>(1.0 / s);
        for (int j = 0; j < m; ++j) row[j] *= inv;
    }
    return detail::make_op(std::move(out), {x}, [x = x.get(), n, m](Node& node) {
        if (!x->needs_grad) return;
        float* gx = x->ensure_grad().ptr();
        const float* g = node.grad.ptr();
        const float* y = node.val.ptr();
        for (int i = 0; i < n; ++i) {
            const float* yr = y + static_cast<size_t>(i) * m;
            const float* gr = g + static_cast<size_t>(i) * m;
            double dot = 0.0;
            for (int j = 0; j < m; ++j) dot += static_cast<double>(yr[j]) * gr[j];
            float* gxr = gx + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) gxr[j] += yr[j] * (gr[j] - static_cast<float>(dot));
        }
    });
}

inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, float eps = 1e-5f) {
    if (x->val.ndim() != 2) throw ShapeError("layer_norm_rows needs 2-d input");
    const int n = x->val.dim(0), m = x->val.dim(1);
    if (gain->val.numel() != m || bias->val.numel() != m) throw ShapeError("layer_norm params");
    Tensor out({n, m});
    Tensor mu({n}), inv_sigma({n});
    for (int i = 0; i < n; ++i) {
        const float* row = x->val.ptr() + static_cast<size_t>(i) * m;
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += row[j];
        double mean = s / m;
        double var = 0.0;
        for (int j = 0; j < m; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= m;
        float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
        mu[i] = static_cast<float>(mean);
        inv_sigma[i] = inv;
        float* orow = out.ptr() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j)
            orow[j] = (row[j] - static_cast<float>(mean)) * inv * gain->val[j] + bias->val[j];
    }
    return detail::make_op(std::move(out), {x, gain, bias},
                           [x = x.get(), gain = gain.get(), bias = bias.get(), n, m, mu, inv_sigma](Node& node) {
        const float* g = node.grad.ptr();
        for (int i = 0; i < n; ++i) {
            const float* xr = x->val.ptr() + static_cast<size_t>(i) * m;
            const float* gr = g + static_cast<size_t>(i) * m;
            const float inv = inv_sigma[i];
            const float mean = mu[i];
            if (bias->needs_grad) {
                float* gb = bias->ensure_grad().ptr();
                for (int j = 0; j < m; ++j) gb[j] += gr[j];
            }
            if (gain->needs_grad) {
                float* gg = gain->ensure_grad().ptr();
                for (int j = 0; j < m; ++j) gg[j] += gr[j] * (xr[j] - mean) * inv;
            }
            if (x->needs_grad) {
                // d/dx of (x-mu)/sigma * gain
                double sum_gy = 0.0, sum_gyx = 0.0;
                for (int j = 0; j < m; ++j) {
                    double gy = static_cast<double>(gr[j]) * gain->val[j];
                    sum_gy += gy;
                    sum_gyx += gy * (xr[j] - mean) * inv;
                }
                float* gx = x->ensure_grad().ptr() + static_cast<size_t>(i) * m;
                for (int j = 0; j < m; ++j) {
                    double gy = static_cast<double>(gr[j]) * gain->val[j];
                    double xhat = (xr[j] - mean) * inv;
                    gx[j] += static_cast<float>(inv * (gy - sum_gy / m - xhat * sum_gyx / m));
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions (double accumulators)
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
    double s = 0.0;
    for (float v : a->val.data) s += v;
    return detail::make_op(Tensor::scalar(static_cast<float>(s)), {a}, [a = a.get()](Node& n) {
        if (!a->needs_grad) return;
        const float g = n.grad[0];
        float* ga = a->ensure_grad().ptr();
        for (int64_t i = 0; i < a->val.numel(); ++i) ga[i] += g;
    });
}

inline Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->val.numel())); }

// sum of squared differences, the squared L2 distance
inline Var sum_sq_diff(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "sum_sq_diff");
    double s = 0.0;
    const float* ap = a->val.ptr();
    const float* bp = b->val.ptr();
    for (int64_t i = 0; i < a->val.numel(); ++i) {
        double d = static_cast<double>(ap[i]) - bp[i];
        s += d * d;
    }
    return detail::make_op(Tensor::scalar(static_cast<float>(s)), {a, b}, [a = a.get(), b = b.get()](Node& n) {
        const float g = n.grad[0];
        const float* ap = a->val.ptr();
        const float* bp = b->val.ptr();
        if (a->needs_grad) {
            float* ga = a->ensure_grad().ptr();
            for (int64_t i = 0; i < a->val.numel(); ++i) ga[i] += 2.0f * (ap[i] - bp[i]) * g;
        }
        if (b->needs_grad) {
            float* gb = b->ensure_grad().ptr();
            for (int64_t i = 0; i < b->val.numel(); ++i) gb[i] -= 2.0f * (ap[i] - bp[i]) * g;
        }
    });
}

inline Var mse(const Var& a, const Var& b) {
    return scale(sum_sq_diff(a, b), 1.0 / static_cast<double>(a->val.numel()));
}

inline Var dot_all(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "dot_all");
    double s = 0.0;
    const float* ap = a->val.ptr();
    const float* bp = b->val.ptr();
    for (int64_t i = 0; i < a->val.numel(); ++i) s += static_cast<double>(ap[i]) * bp[i];
    return detail::make_op(Tensor::scalar(static_cast<float>(s)), {a, b}, [a = a.get(), b = b.get()](Node& n) {
        const float g = n.grad[0];
        if (a->needs_grad) {
            float* ga = a->ensure_grad().ptr();
            const float* bp = b->val.ptr();
            for (int64_t i = 0; i < a->val.numel(); ++i) ga[i] += g * bp[i];
        }
        if (b->needs_grad) {
            float* gb = b->ensure_grad().ptr();
            const float* ap = a->val.ptr();
            for (int64_t i = 0; i < b->val.numel(); ++i) gb[i] += g * ap[i];
        }
    });
}

// cos(a, b) over flattened tensors; throws on zero norm (cosine undefined)
inline Var cosine(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "cosine");
    double dot = 0.0, na = 0.0, nb = 0.0;
    const float* ap = a->val.ptr();
    const float* bp = b->val.ptr();
    for (int64_t i = 0; i < a->val.numel(); ++i) {
        dot += static_cast<double>(ap[i]) * bp[i];
        na += static_cast<double>(ap[i]) * ap[i];
        nb += static_cast<double>(bp[i]) * bp[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na == 0.0 || nb == 0.0) throw Error("cosine: zero-norm operand");
    const double c = dot / (na * nb);
    return detail::make_op(Tensor::scalar(static_cast<float>(c)), {a, b},
                           [a = a.get(), b = b.get(), na, nb, c](Node& n) {
        const double g = n.grad[0];
        const float* ap = a->val.ptr();
        const float* bp = b->val.ptr();
        if (a->needs_grad) {
            float* ga = a->ensure_grad().ptr();
            for (int64_t i = 0; i < a->val.numel(); ++i)
                ga[i] += static_cast<float>(g * (bp[i] / (na * nb) - c * ap[i] / (na * na)));
        }
        if (b->needs_grad) {
            float* gb = b->ensure_grad().ptr();
            for (int64_t i = 0; i < b->val.numel(); ++i)
                gb[i] += static_cast<float>(g * (ap[i] / (na * nb) - c * bp[i] / (nb * nb)));
        }
    });
}

// numerically stable mean binary cross-entropy on logits
inline Var bce_with_logits_mean(const Var& z, const Tensor& targets) {
    require_same_shape(z->val, targets, "bce_with_logits");
    double s = 0.0;
    const float* zp = z->val.ptr();
    const float* yp = targets.ptr();
    const int64_t n = z->val.numel();
    for (int64_t i = 0; i < n; ++i) {
        double zv = zp[i];
        s += std::max(zv, 0.0) - zv * yp[i] + std::log1p(std::exp(-std::fabs(zv)));
    }
    s /= static_cast<double>(n);
    return detail::make_op(Tensor::scalar(static_cast<float>(s)), {z}, [z = z.get(), targets, n](Node& node) {
        if (!z->needs_grad) return;
        const float g = node.grad[0];
        float* gz = z->ensure_grad().ptr();
        const float* zp = z->val.ptr();
        const float* yp = targets.ptr();
        const float invn = 1.0f / static_cast<float>(n);
        for (int64_t i = 0; i < n; ++i) {
            float sig = 1.0f / (1.0f + std::exp(-zp[i]));
            gz[i] += g * (sig - yp[i]) * invn;
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, std::vector<int> new_shape) {
    if (Tensor::numel_of(new_shape) != a->val.numel())
        throw ShapeError("reshape: element count mismatch");
    Tensor out = a->val;
    out.shape = std::move(new_shape);
    return detail::make_op(std::move(out), {a}, [a = a.get()](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    });
}

inline Var concat_channels(const Var& a, const Var& b) {
    if (a->val.ndim() != 3 || b->val.ndim() != 3 || a->val.dim(1) != b->val.dim(1) ||
        a->val.dim(2) != b->val.dim(2))
        throw ShapeError("concat_channels: " + a->val.shape_str() + " vs " + b->val.shape_str());
    const int ca = a->val.dim(0), cb = b->val.dim(0), h = a->val.dim(1), w = a->val.dim(2);
    Tensor out({ca + cb, h, w});
    std::copy(a->val.data.begin(), a->val.data.end(), out.data.begin());
    std::copy(b->val.data.begin(), b->val.data.end(), out.data.begin() + a->val.numel());
    return detail::make_op(std::move(out), {a, b}, [a = a.get(), b = b.get()](Node& n) {
        const float* g = n.grad.ptr();
        const int64_t na = a->val.numel();
        if (a->needs_grad) {
            float* ga = a->ensure_grad().ptr();
            for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (b->needs_grad) {
            float* gb = b->ensure_grad().ptr();
            for (int64_t i = 0; i < b->val.numel(); ++i) gb[i] += g[na + i];
        }
    });
}

inline Var slice_channels(const Var& a, int c0, int c1) {
    if (a->val.ndim() != 3 || c0 < 0 || c1 > a->val.dim(0) || c0 >= c1)
        throw ShapeError("slice_channels range");
    const int h = a->val.dim(1), w = a->val.dim(2);
    const int64_t plane = static_cast<int64_t>(h) * w;
    Tensor out({c1 - c0, h, w});
    std::copy(a->val.data.begin() + c0 * plane, a->val.data.begin() + c1 * plane, out.data.begin());
    return detail::make_op(std::move(out), {a}, [a = a.get(), c0, plane](Node& n) {
        if (!a->needs_grad) return;
        float* ga = a->ensure_grad().ptr() + c0 * plane;
        const float* g = n.grad.ptr();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += g[i];
    });
}

// per-channel affine y_c = x_c * (1 + gamma_c) + beta_c  (feature modulation)
inline Var channel_affine(const Var& x, const Var& gamma, const Var& beta) {
    if (x->val.ndim() != 3) throw ShapeError("channel_affine needs [C,H,W]");
    const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
    if (gamma->val.numel() != c || beta->val.numel() != c) throw ShapeError("channel_affine params");
    const int64_t plane = static_cast<int64_t>(h) * w;
    Tensor out = x->val;
    for (int ci = 0; ci < c; ++ci) {
        const float gm = 1.0f + gamma->val[ci];
        const float bt = beta->val[ci];
        float* row = out.ptr() + ci * plane;
        for (int64_t i = 0; i < plane; ++i) row[i] = row[i] * gm + bt;
    }
    return detail::make_op(std::move(out), {x, gamma, beta},
                           [x = x.get(), gamma = gamma.get(), beta = beta.get(), c, plane](Node& n) {
        const float* g = n.grad.ptr();
        for (int ci = 0; ci < c; ++ci) {
            const float* gr = g + ci * plane;
            if (x->needs_grad) {
                float* gx = x->ensure_grad().ptr() + ci * plane;
                const float gm = 1.0f + gamma->val[ci];
                for (int64_t i = 0; i < plane; ++i) gx[i] += gr[i] * gm;
            }
            if (gamma->needs_grad) {
                const float* xv = x->val.ptr() + ci * plane;
                double acc = 0.0;
                for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(gr[i]) * xv[i];
                gamma->ensure_grad()[ci] += static_cast<float>(acc);
            }
            if (beta->needs_grad) {
                double acc = 0.0;
                for (int64_t i = 0; i < plane; ++i) acc += gr[i];
                beta->ensure_grad()[ci] += static_cast<float>(acc);
            }
        }
    });
}

// weighted mean over rows: x [L,D], w [L] fixed weights -> [D]
inline Var rows_weighted_mean(const Var& x, const Tensor& w) {
    if (x->val.ndim() != 2 || w.numel() != x->val.dim(0)) throw ShapeError("rows_weighted_mean");
    const int l = x->val.dim(0), d = x->val.dim(1);
    Tensor out({d});
    for (int i = 0; i < l; ++i) {
        const float wi = w[i];
        if (wi == 0.0f) continue;
        const float* row = x->val.ptr() + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) out[j] += wi * row[j];
    }
    return detail::make_op(std::move(out), {x}, [x = x.get(), w, l, d](Node& n) {
        if (!x->needs_grad) return;
        float* gx = x->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        for (int i = 0; i < l; ++i) {
            const float wi = w[i];
            if (wi == 0.0f) continue;
            float* row = gx + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) row[j] += wi * g[j];
        }
    });
}

// gather rows of an embedding table; ids out of range throw
inline Var embedding_rows(const Var& table, const std::vector<int>& ids) {
    if (table->val.ndim() != 2) throw ShapeError("embedding_rows table");
    const int v = table->val.dim(0), d = table->val.dim(1);
    Tensor out({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v) throw Error("embedding_rows: id out of range");
        std::copy_n(table->val.ptr() + static_cast<size_t>(ids[i]) * d, d, out.ptr() + i * d);
    }
    return detail::make_op(std::move(out), {table}, [table = table.get(), ids, d](Node& n) {
        if (!table->needs_grad) return;
        float* gt = table->ensure_grad().ptr();
        const float* g = n.grad.ptr();
        for (size_t i = 0; i < ids.size(); ++i) {
            float* row = gt + static_cast<size_t>(ids[i]) * d;
            const float* gr = g + i * d;
            for (int j = 0; j < d; ++j) row[j] += gr[j];
        }
    });
}

}  // namespace advlab
