#pragma once

// Reverse-mode autodiff on dense row-major tensors. Nodes form a DAG held
// by shared_ptr; backward() runs an iterative post-order walk so deep graphs
// don't hit the call stack. Templated on the scalar so gradient checks can
// shadow the float path in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "partswap/common.hpp"
#include "partswap/rng.hpp"

namespace partswap {

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
};

template <class T>
struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // sized lazily by ensure_grad
    bool needs_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> back;

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    }
};

template <class T>
using NodeRef = std::shared_ptr<Node<T>>;

template <class T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodeRef<T> n) : n_(std::move(n)) {}

    static Tensor from(Shape shape, std::vector<T> val) {
        if (int64_t(val.size()) != numel(shape))
            throw DimensionError("tensor: value size " + std::to_string(val.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->val = std::move(val);
        return Tensor(n);
    }

    static Tensor zeros(Shape shape) {
        return from(std::move(shape), std::vector<T>(numel(shape), T(0)));
    }

    static Tensor full(Shape shape, T v) {
        return from(std::move(shape), std::vector<T>(numel(shape), v));
    }

    static Tensor randn(Shape shape, Rng& rng, T scale = T(1)) {
        std::vector<T> v(numel(shape));
        for (auto& x : v) x = T(rng.normal()) * scale;
        return from(std::move(shape), std::move(v));
    }

    // Trainable leaf.
    static Tensor param(Shape shape, std::vector<T> val) {
        Tensor t = from(std::move(shape), std::move(val));
        t.n_->needs_grad = true;
        return t;
    }

    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[i]; }
    int rank() const { return int(n_->shape.size()); }
    int64_t size() const { return int64_t(n_->val.size()); }
    const T* data() const { return n_->val.data(); }
    T* data() { return n_->val.data(); }
    const std::vector<T>& values() const { return n_->val; }
    bool needs_grad() const { return n_->needs_grad; }
    const NodeRef<T>& node() const { return n_; }
    Node<T>* raw() const { return n_.get(); }

    T item() const {
        if (size() != 1)
            throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
        return n_->val[0];
    }

    Tensor detach() const {
        auto n = std::make_shared<Node<T>>();
        n->shape = n_->shape;
        n->val = n_->val;
        return Tensor(n);
    }

  private:
    NodeRef<T> n_;
};

template <class T>
Tensor<T> make_node(Shape shape, std::vector<T>&& val,
                    std::initializer_list<Tensor<T>> inputs,
                    std::type_identity_t<std::function<void(Node<T>&)>> back) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->val = std::move(val);
    if (g_grad_enabled) {
        for (const auto& in : inputs)
            if (in.needs_grad()) {
                n->needs_grad = true;
                break;
            }
    }
    if (n->needs_grad) {
        for (const auto& in : inputs)
            if (in.needs_grad()) n->parents.push_back(in.node());
        n->back = std::move(back);
    }
    return Tensor<T>(n);
}

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

template <class T>
void backward(const Tensor<T>& loss) {
    Node<T>* root = loss.raw();
    if (numel(root->shape) != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(root->shape));
    if (!root->needs_grad)
        throw ContractError("backward: graph has no trainable leaves");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    struct Frame {
        Node<T>* n;
        size_t i;
    };
    std::vector<Frame> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.i < f.n->parents.size()) {
            Node<T>* p = f.n->parents[f.i++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->back && !n->grad.empty()) n->back(*n);
    }
}

// ---- elementwise ----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    std::vector<T> v(a.size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < a.size(); ++i) v[i] = pa[i] + pb[i];
    return make_node(a.shape(), std::move(v), {a, b}, [a, b](Node<T>& out) {
        for (const Tensor<T>& t : {a, b})
            if (t.needs_grad()) {
                t.raw()->ensure_grad();
                T* g = t.raw()->grad.data();
                for (size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
            }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    std::vector<T> v(a.size());
    for (int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] - b.data()[i];
    return make_node(a.shape(), std::move(v), {a, b}, [a, b](Node<T>& out) {
        if (a.needs_grad()) {
            a.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) a.raw()->grad[i] += out.grad[i];
        }
        if (b.needs_grad()) {
            b.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) b.raw()->grad[i] -= out.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    std::vector<T> v(a.size());
    for (int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] * b.data()[i];
    return make_node(a.shape(), std::move(v), {a, b}, [a, b](Node<T>& out) {
        if (a.needs_grad()) {
            a.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i)
                a.raw()->grad[i] += out.grad[i] * b.data()[i];
        }
        if (b.needs_grad()) {
            b.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i)
                b.raw()->grad[i] += out.grad[i] * a.data()[i];
        }
    });
}

// y = s*x + o, scalars
template <class T>
Tensor<T> affine(const Tensor<T>& x, T s, T o) {
    std::vector<T> v(x.size());
    for (int64_t i = 0; i < x.size(); ++i) v[i] = s * x.data()[i] + o;
    return make_node(x.shape(), std::move(v), {x}, [x, s](Node<T>& out) {
        x.raw()->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) x.raw()->grad[i] += s * out.grad[i];
    });
}

template <class T>
Tensor<T> add_scaled(const Tensor<T>& a, const Tensor<T>& b, T s) {
    check_same_shape(a, b, "add_scaled");
    std::vector<T> v(a.size());
    for (int64_t i = 0; i < a.size(); ++i) v[i] = a.data()[i] + s * b.data()[i];
    return make_node(a.shape(), std::move(v), {a, b}, [a, b, s](Node<T>& out) {
        if (a.needs_grad()) {
            a.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) a.raw()->grad[i] += out.grad[i];
        }
        if (b.needs_grad()) {
            b.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) b.raw()->grad[i] += s * out.grad[i];
        }
    });
}

// [c,h,w] + per-channel bias [c]
template <class T>
Tensor<T> add_chbias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() != 3) throw DimensionError("add_chbias: need [c,h,w]");
    if (b.shape() != Shape{x.dim(0)})
        throw DimensionError("add_chbias: bias must be [" + std::to_string(x.dim(0)) + "]");
    const int64_t hw = int64_t(x.dim(1)) * x.dim(2);
    std::vector<T> v(x.size());
    for (int c = 0; c < x.dim(0); ++c)
        for (int64_t i = 0; i < hw; ++i) v[c * hw + i] = x.data()[c * hw + i] + b.data()[c];
    return make_node(x.shape(), std::move(v), {x, b}, [x, b, hw](Node<T>& out) {
        if (x.needs_grad()) {
            x.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) x.raw()->grad[i] += out.grad[i];
        }
        if (b.needs_grad()) {
            b.raw()->ensure_grad();
            for (int c = 0; c < x.dim(0); ++c) {
                T acc = 0;
                for (int64_t i = 0; i < hw; ++i) acc += out.grad[size_t(c) * hw + i];
                b.raw()->grad[c] += acc;
            }
        }
    });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    std::vector<T> v(x.size());
    for (int64_t i = 0; i < x.size(); ++i) {
        T s = T(1) / (T(1) + std::exp(-x.data()[i]));
        v[i] = x.data()[i] * s;
    }
    return make_node(x.shape(), std::move(v), {x}, [x](Node<T>& out) {
        x.raw()->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) {
            T xv = x.data()[i];
            T s = T(1) / (T(1) + std::exp(-xv));
            x.raw()->grad[i] += out.grad[i] * s * (T(1) + xv * (T(1) - s));
        }
    });
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    return make_node({1}, std::vector<T>{s}, {x}, [x](Node<T>& out) {
        x.raw()->ensure_grad();
        T g = out.grad[0];
        for (auto& gx : x.raw()->grad) gx += g;
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.size() == 0) throw ContractError("mean: empty tensor");
    T s = T(0);
    for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    T inv = T(1) / T(x.size());
    return make_node({1}, std::vector<T>{s * inv}, {x}, [x, inv](Node<T>& out) {
        x.raw()->ensure_grad();
        T g = out.grad[0] * inv;
        for (auto& gx : x.raw()->grad) gx += g;
    });
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> d = sub(a, b);
    return mean(mul(d, d));
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    std::vector<T> v(x.data(), x.data() + x.size());
    return make_node(std::move(shape), std::move(v), {x}, [x](Node<T>& out) {
        x.raw()->ensure_grad();
        for (size_t i = 0; i < out.grad.size(); ++i) x.raw()->grad[i] += out.grad[i];
    });
}

template <class T>
Tensor<T> transpose2(const Tensor<T>& x) {
    if (x.rank() != 2) throw DimensionError("transpose2: need rank 2, got " + shape_str(x.shape()));
    int m = x.dim(0), n = x.dim(1);
    std::vector<T> v(size_t(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v[size_t(j) * m + i] = x.data()[size_t(i) * n + j];
    return make_node({n, m}, std::move(v), {x}, [x, m, n](Node<T>& out) {
        x.raw()->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                x.raw()->grad[size_t(i) * n + j] += out.grad[size_t(j) * m + i];
    });
}

// [c,h,w] -> [h*w, c]
template <class T>
Tensor<T> to_tokens(const Tensor<T>& x) {
    if (x.rank() != 3) throw DimensionError("to_tokens: need [c,h,w], got " + shape_str(x.shape()));
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int hw = h * w;
    std::vector<T> v(size_t(c) * hw);
    for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) v[size_t(p) * c + ch] = x.data()[size_t(ch) * hw + p];
    return make_node({hw, c}, std::move(v), {x}, [x, c, hw](Node<T>& out) {
        x.raw()->ensure_grad();
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < hw; ++p)
                x.raw()->grad[size_t(ch) * hw + p] += out.grad[size_t(p) * c + ch];
    });
}

// [h*w, c] -> [c,h,w]
template <class T>
Tensor<T> from_tokens(const Tensor<T>& x, int h, int w) {
    if (x.rank() != 2 || x.dim(0) != h * w)
        throw DimensionError("from_tokens: need [" + std::to_string(h * w) + ",c], got " +
                             shape_str(x.shape()));
    int c = x.dim(1), hw = h * w;
    std::vector<T> v(size_t(c) * hw);
    for (int p = 0; p < hw; ++p)
        for (int ch = 0; ch < c; ++ch) v[size_t(ch) * hw + p] = x.data()[size_t(p) * c + ch];
    return make_node({c, h, w}, std::move(v), {x}, [x, c, hw](Node<T>& out) {
        x.raw()->ensure_grad();
        for (int p = 0; p < hw; ++p)
            for (int ch = 0; ch < c; ++ch)
                x.raw()->grad[size_t(p) * c + ch] += out.grad[size_t(ch) * hw + p];
    });
}

template <class T>
Tensor<T> concat_ch(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ContractError("concat_ch: no inputs");
    int h = xs[0].dim(1), w = xs[0].dim(2), ctot = 0;
    for (const auto& x : xs) {
        if (x.rank() != 3 || x.dim(1) != h || x.dim(2) != w)
            throw DimensionError("concat_ch: incompatible input " + shape_str(x.shape()));
        ctot += x.dim(0);
    }
    std::vector<T> v;
    v.reserve(size_t(ctot) * h * w);
    for (const auto& x : xs) v.insert(v.end(), x.data(), x.data() + x.size());

    auto n = std::make_shared<Node<T>>();
    n->shape = {ctot, h, w};
    n->val = std::move(v);
    bool ng = false;
    if (g_grad_enabled)
        for (const auto& x : xs) ng |= x.needs_grad();
    if (ng) {
        n->needs_grad = true;
        for (const auto& x : xs)
            if (x.needs_grad()) n->parents.push_back(x.node());
        std::vector<Tensor<T>> saved = xs;
        n->back = [saved](Node<T>& out) {
            size_t off = 0;
            for (const auto& x : saved) {
                if (x.needs_grad()) {
                    x.raw()->ensure_grad();
                    for (int64_t i = 0; i < x.size(); ++i) x.raw()->grad[i] += out.grad[off + i];
                }
                off += size_t(x.size());
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> crop2d(const Tensor<T>& x, int r0, int c0, int bh, int bw) {
    if (x.rank() != 3) throw DimensionError("crop2d: need [c,h,w], got " + shape_str(x.shape()));
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (bh <= 0 || bw <= 0 || r0 < 0 || c0 < 0 || r0 + bh > h || c0 + bw > w)
        throw DimensionError("crop2d: window " + std::to_string(r0) + "," + std::to_string(c0) +
                             " " + std::to_string(bh) + "x" + std::to_string(bw) +
                             " outside " + shape_str(x.shape()));
    std::vector<T> v(size_t(c) * bh * bw);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < bh; ++i)
            for (int j = 0; j < bw; ++j)
                v[(size_t(ch) * bh + i) * bw + j] =
                    x.data()[(size_t(ch) * h + r0 + i) * w + c0 + j];
    return make_node({c, bh, bw}, std::move(v), {x}, [x, r0, c0, bh, bw](Node<T>& out) {
        x.raw()->ensure_grad();
        int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < bh; ++i)
                for (int j = 0; j < bw; ++j)
                    x.raw()->grad[(size_t(ch) * h + r0 + i) * w + c0 + j] +=
                        out.grad[(size_t(ch) * bh + i) * bw + j];
    });
}

// Place x at (r0,c0) inside a zero canvas of HxW.
template <class T>
Tensor<T> embed2d(const Tensor<T>& x, int H, int W, int r0, int c0) {
    if (x.rank() != 3) throw DimensionError("embed2d: need [c,h,w], got " + shape_str(x.shape()));
    int c = x.dim(0), bh = x.dim(1), bw = x.dim(2);
    if (r0 < 0 || c0 < 0 || r0 + bh > H || c0 + bw > W)
        throw DimensionError("embed2d: block does not fit canvas");
    std::vector<T> v(size_t(c) * H * W, T(0));
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < bh; ++i)
            for (int j = 0; j < bw; ++j)
                v[(size_t(ch) * H + r0 + i) * W + c0 + j] =
                    x.data()[(size_t(ch) * bh + i) * bw + j];
    return make_node({c, H, W}, std::move(v), {x}, [x, H, W, r0, c0](Node<T>& out) {
        x.raw()->ensure_grad();
        int c = x.dim(0), bh = x.dim(1), bw = x.dim(2);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < bh; ++i)
                for (int j = 0; j < bw; ++j)
                    x.raw()->grad[(size_t(ch) * bh + i) * bw + j] +=
                        out.grad[(size_t(ch) * H + r0 + i) * W + c0 + j];
    });
}

// ---- matmul / linear ----

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> v(size_t(m) * n);
    gemm_nn(m, k, n, a.data(), b.data(), v.data(), false);
    return make_node({m, n}, std::move(v), {a, b}, [a, b, m, k, n](Node<T>& out) {
        if (a.needs_grad()) {
            a.raw()->ensure_grad();
            gemm_nt(m, n, k, out.grad.data(), b.data(), a.raw()->grad.data(), true);
        }
        if (b.needs_grad()) {
            b.raw()->ensure_grad();
            gemm_tn(m, k, n, a.data(), out.grad.data(), b.raw()->grad.data(), true);
        }
    });
}

// x[..., di] * w[di, dh] + b[dh]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w.rank() != 2) throw DimensionError("linear: weight must be rank 2");
    int di = w.dim(0), dh = w.dim(1);
    if (x.rank() < 1 || x.shape().back() != di)
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    if (b.shape() != Shape{dh}) throw DimensionError("linear: bias must be [" + std::to_string(dh) + "]");
    int rows = int(x.size() / di);
    std::vector<T> v(size_t(rows) * dh);
    gemm_nn(rows, di, dh, x.data(), w.data(), v.data(), false);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < dh; ++j) v[size_t(r) * dh + j] += b.data()[j];
    Shape oshape = x.shape();
    oshape.back() = dh;
    return make_node(std::move(oshape), std::move(v), {x, w, b},
                     [x, w, b, rows, di, dh](Node<T>& out) {
                         if (x.needs_grad()) {
                             x.raw()->ensure_grad();
                             gemm_nt(rows, dh, di, out.grad.data(), w.data(),
                                     x.raw()->grad.data(), true);
                         }
                         if (w.needs_grad()) {
                             w.raw()->ensure_grad();
                             gemm_tn(rows, di, dh, x.data(), out.grad.data(),
                                     w.raw()->grad.data(), true);
                         }
                         if (b.needs_grad()) {
                             b.raw()->ensure_grad();
                             for (int r = 0; r < rows; ++r)
                                 for (int j = 0; j < dh; ++j)
                                     b.raw()->grad[j] += out.grad[size_t(r) * dh + j];
                         }
                     });
}

template <class T>
Tensor<T> linear_nobias(const Tensor<T>& x, const Tensor<T>& w) {
    if (w.rank() != 2) throw DimensionError("linear: weight must be rank 2");
    int di = w.dim(0), dh = w.dim(1);
    if (x.rank() < 1 || x.shape().back() != di)
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    int rows = int(x.size() / di);
    std::vector<T> v(size_t(rows) * dh);
    gemm_nn(rows, di, dh, x.data(), w.data(), v.data(), false);
    Shape oshape = x.shape();
    oshape.back() = dh;
    return make_node(std::move(oshape), std::move(v), {x, w},
                     [x, w, rows, di, dh](Node<T>& out) {
                         if (x.needs_grad()) {
                             x.raw()->ensure_grad();
                             gemm_nt(rows, dh, di, out.grad.data(), w.data(),
                                     x.raw()->grad.data(), true);
                         }
                         if (w.needs_grad()) {
                             w.raw()->ensure_grad();
                             gemm_tn(rows, di, dh, x.data(), out.grad.data(),
                                     w.raw()->grad.data(), true);
                         }
                     });
}

// ---- softmax / attention ----

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.rank() != 2) throw DimensionError("softmax_rows: need rank 2");
    int n = x.dim(0), m = x.dim(1);
    std::vector<T> v(size_t(n) * m);
    for (int i = 0; i < n; ++i) {
        const T* r = x.data() + size_t(i) * m;
        T* o = v.data() + size_t(i) * m;
        T mx = r[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, r[j]);
        T s = T(0);
        for (int j = 0; j < m; ++j) {
            o[j] = std::exp(r[j] - mx);
            s += o[j];
        }
        T inv = T(1) / s;
        for (int j = 0; j < m; ++j) o[j] *= inv;
    }
    return make_node({n, m}, std::move(v), {x}, [x, n, m](Node<T>& out) {
        x.raw()->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const T* y = out.val.data() + size_t(i) * m;
            const T* g = out.grad.data() + size_t(i) * m;
            T dot = T(0);
            for (int j = 0; j < m; ++j) dot += g[j] * y[j];
            T* gx = x.raw()->grad.data() + size_t(i) * m;
            for (int j = 0; j < m; ++j) gx[j] += (g[j] - dot) * y[j];
        }
    });
}

// softmax(q k^T / sqrt(d)) v ; q:[n,d] k:[m,d] v:[m,dv]
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw DimensionError("attention: q,k,v must be rank 2");
    if (q.dim(1) != k.dim(1))
        throw DimensionError("attention: q/k width mismatch");
    if (k.dim(0) != v.dim(0))
        throw DimensionError("attention: k/v row mismatch");
    if (k.dim(0) == 0) throw ContractError("attention: empty key set");
    T scale = T(1) / std::sqrt(T(q.dim(1)));
    Tensor<T> s = affine(matmul(q, transpose2(k)), scale, T(0));
    return matmul(softmax_rows(s), v);
}

// ---- conv ----

namespace detail {
template <class T>
void im2col(const T* x, int ci, int h, int w, int kh, int kw, int s, int p, int oh, int ow,
            T* cols) {
    // rows indexed by (ci,ki,kj), cols by (oy,ox)
    par_for(ci, int64_t(ci) * kh * kw * oh * ow, [&](int c) {
        const T* xc = x + size_t(c) * h * w;
        T* base = cols + size_t(c) * kh * kw * oh * ow;
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                T* row = base + (size_t(ki) * kw + kj) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * s + ki - p;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) row[size_t(oy) * ow + ox] = T(0);
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * s + kj - p;
                        row[size_t(oy) * ow + ox] =
                            (ix >= 0 && ix < w) ? xc[size_t(iy) * w + ix] : T(0);
                    }
                }
            }
    });
}

template <class T>
void col2im_acc(const T* cols, int ci, int h, int w, int kh, int kw, int s, int p, int oh,
                int ow, T* gx) {
    par_for(ci, int64_t(ci) * kh * kw * oh * ow, [&](int c) {
        T* xc = gx + size_t(c) * h * w;
        const T* base = cols + size_t(c) * kh * kw * oh * ow;
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = base + (size_t(ki) * kw + kj) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * s + ki - p;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * s + kj - p;
                        if (ix >= 0 && ix < w) xc[size_t(iy) * w + ix] += row[size_t(oy) * ow + ox];
                    }
                }
            }
    });
}
}  // namespace detail

// x[ci,h,w], k[co,ci,kh,kw], b[co] optional (empty tensor to skip)
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b, int stride,
                 int pad) {
    if (x.rank() != 3 || k.rank() != 4)
        throw DimensionError("conv2d: need x[c,h,w], k[co,ci,kh,kw]");
    int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    int co = k.dim(0), kci = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    if (kci != ci)
        throw DimensionError("conv2d: input channels " + std::to_string(ci) +
                             " vs kernel " + std::to_string(kci));
    bool has_bias = b.node() != nullptr;
    if (has_bias && b.shape() != Shape{co})
        throw DimensionError("conv2d: bias must be [" + std::to_string(co) + "]");
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (w + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw DimensionError("conv2d: kernel larger than padded input");

    int K = ci * kh * kw, N = oh * ow;
    std::vector<T> cols(size_t(K) * N);
    detail::im2col(x.data(), ci, h, w, kh, kw, stride, pad, oh, ow, cols.data());
    std::vector<T> v(size_t(co) * N);
    gemm_nn(co, K, N, k.data(), cols.data(), v.data(), false);
    if (has_bias)
        for (int c = 0; c < co; ++c)
            for (int i = 0; i < N; ++i) v[size_t(c) * N + i] += b.data()[c];

    // cols are recomputed in backward rather than kept alive on the graph;
    // with batch-sized graphs the im2col buffers dominate memory otherwise.
    auto backfn = [x, k, b, has_bias, ci, h, w, co, kh, kw, stride, pad, oh, ow, K,
                   N](Node<T>& out) {
        if (has_bias && b.needs_grad()) {
            b.raw()->ensure_grad();
            for (int c = 0; c < co; ++c) {
                T s = T(0);
                for (int i = 0; i < N; ++i) s += out.grad[size_t(c) * N + i];
                b.raw()->grad[c] += s;
            }
        }
        if (k.needs_grad()) {
            std::vector<T> cols(size_t(K) * N);
            detail::im2col(x.data(), ci, h, w, kh, kw, stride, pad, oh, ow, cols.data());
            k.raw()->ensure_grad();
            gemm_nt(co, N, K, out.grad.data(), cols.data(), k.raw()->grad.data(), true);
        }
        if (x.needs_grad()) {
            std::vector<T> gcols(size_t(K) * N);
            gemm_tn(co, K, N, k.data(), out.grad.data(), gcols.data(), false);
            x.raw()->ensure_grad();
            detail::col2im_acc(gcols.data(), ci, h, w, kh, kw, stride, pad, oh, ow,
                               x.raw()->grad.data());
        }
    };
    if (has_bias) return make_node({co, oh, ow}, std::move(v), {x, k, b}, backfn);
    return make_node({co, oh, ow}, std::move(v), {x, k}, backfn);
}

// ---- normalization ----

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int groups, T eps = T(1e-5)) {
    if (x.rank() != 3) throw DimensionError("group_norm: need [c,h,w]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (groups < 1 || c % groups != 0)
        throw DimensionError("group_norm: channels " + std::to_string(c) +
                             " not divisible by groups " + std::to_string(groups));
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw DimensionError("group_norm: gamma/beta must be [c]");
    int cg = c / groups, hw = h * w;
    int64_t gn = int64_t(cg) * hw;
    std::vector<T> mu(groups), inv(groups);
    std::vector<T> v(x.size());
    for (int g = 0; g < groups; ++g) {
        const T* xs = x.data() + size_t(g) * gn;
        double s = 0.0;
        for (int64_t i = 0; i < gn; ++i) s += xs[i];
        double m = s / double(gn);
        double var = 0.0;
        for (int64_t i = 0; i < gn; ++i) {
            double d = xs[i] - m;
            var += d * d;
        }
        var /= double(gn);
        mu[g] = T(m);
        inv[g] = T(1.0 / std::sqrt(var + double(eps)));
    }
    for (int ch = 0; ch < c; ++ch) {
        int g = ch / cg;
        T gm = gamma.data()[ch], bt = beta.data()[ch];
        const T* xs = x.data() + size_t(ch) * hw;
        T* o = v.data() + size_t(ch) * hw;
        for (int i = 0; i < hw; ++i) o[i] = gm * (xs[i] - mu[g]) * inv[g] + bt;
    }
    return make_node(
        x.shape(), std::move(v), {x, gamma, beta},
        [x, gamma, beta, groups, cg, hw, gn, mu, inv](Node<T>& out) {
            int c = x.dim(0);
            if (gamma.needs_grad() || beta.needs_grad()) {
                if (gamma.needs_grad()) gamma.raw()->ensure_grad();
                if (beta.needs_grad()) beta.raw()->ensure_grad();
                for (int ch = 0; ch < c; ++ch) {
                    int g = ch / cg;
                    const T* xs = x.data() + size_t(ch) * hw;
                    const T* go = out.grad.data() + size_t(ch) * hw;
                    T sg = T(0), sgx = T(0);
                    for (int i = 0; i < hw; ++i) {
                        sg += go[i];
                        sgx += go[i] * (xs[i] - mu[g]) * inv[g];
                    }
                    if (beta.needs_grad()) beta.raw()->grad[ch] += sg;
                    if (gamma.needs_grad()) gamma.raw()->grad[ch] += sgx;
                }
            }
            if (x.needs_grad()) {
                x.raw()->ensure_grad();
                for (int g = 0; g < groups; ++g) {
                    const T* xs = x.data() + size_t(g) * gn;
                    T* gx = x.raw()->grad.data() + size_t(g) * gn;
                    // gh = dL/dxhat
                    double sgh = 0.0, sghx = 0.0;
                    for (int64_t i = 0; i < gn; ++i) {
                        int ch = g * cg + int(i / hw);
                        double gh = double(out.grad[size_t(g) * gn + i]) * gamma.data()[ch];
                        double xh = (xs[i] - mu[g]) * inv[g];
                        sgh += gh;
                        sghx += gh * xh;
                    }
                    double n = double(gn);
                    for (int64_t i = 0; i < gn; ++i) {
                        int ch = g * cg + int(i / hw);
                        double gh = double(out.grad[size_t(g) * gn + i]) * gamma.data()[ch];
                        double xh = (xs[i] - mu[g]) * inv[g];
                        gx[i] += T(double(inv[g]) / n * (n * gh - sgh - xh * sghx));
                    }
                }
            }
        });
}

// ---- resize ----

namespace detail {
struct LerpAxis {
    std::vector<int> i0, i1;
    std::vector<double> f;
};
inline LerpAxis lerp_axis(int in, int out) {
    LerpAxis a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.f.resize(out);
    double scale = double(in) / double(out);
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int i0 = int(src);
        if (i0 > in - 1) i0 = in - 1;
        int i1 = std::min(i0 + 1, in - 1);
        a.i0[o] = i0;
        a.i1[o] = i1;
        a.f[o] = src - i0;
    }
    return a;
}
}  // namespace detail

// half-pixel centers; identical sizes reproduce the input bit for bit
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int oh, int ow) {
    if (x.rank() != 3) throw DimensionError("bilinear_resize: need [c,h,w]");
    if (oh < 1 || ow < 1) throw DimensionError("bilinear_resize: bad target size");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (oh == h && ow == w) {
        std::vector<T> v(x.data(), x.data() + x.size());
        return make_node(x.shape(), std::move(v), {x}, [x](Node<T>& out) {
            x.raw()->ensure_grad();
            for (size_t i = 0; i < out.grad.size(); ++i) x.raw()->grad[i] += out.grad[i];
        });
    }
    auto ay = detail::lerp_axis(h, oh);
    auto ax = detail::lerp_axis(w, ow);
    std::vector<T> v(size_t(c) * oh * ow);
    par_for(c, int64_t(c) * oh * ow * 8, [&](int ch) {
        const T* xs = x.data() + size_t(ch) * h * w;
        T* o = v.data() + size_t(ch) * oh * ow;
        for (int i = 0; i < oh; ++i) {
            double fy = ay.f[i];
            const T* r0 = xs + size_t(ay.i0[i]) * w;
            const T* r1 = xs + size_t(ay.i1[i]) * w;
            for (int j = 0; j < ow; ++j) {
                double fx = ax.f[j];
                double top = double(r0[ax.i0[j]]) * (1 - fx) + double(r0[ax.i1[j]]) * fx;
                double bot = double(r1[ax.i0[j]]) * (1 - fx) + double(r1[ax.i1[j]]) * fx;
                o[size_t(i) * ow + j] = T(top * (1 - fy) + bot * fy);
            }
        }
    });
    return make_node({c, oh, ow}, std::move(v), {x}, [x, ay, ax, oh, ow](Node<T>& out) {
        x.raw()->ensure_grad();
        int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        par_for(c, int64_t(c) * oh * ow * 8, [&](int ch) {
            T* gx = x.raw()->grad.data() + size_t(ch) * h * w;
            const T* g = out.grad.data() + size_t(ch) * oh * ow;
            for (int i = 0; i < oh; ++i) {
                double fy = ay.f[i];
                for (int j = 0; j < ow; ++j) {
                    double fx = ax.f[j];
                    double gv = g[size_t(i) * ow + j];
                    gx[size_t(ay.i0[i]) * w + ax.i0[j]] += T(gv * (1 - fy) * (1 - fx));
                    gx[size_t(ay.i0[i]) * w + ax.i1[j]] += T(gv * (1 - fy) * fx);
                    gx[size_t(ay.i1[i]) * w + ax.i0[j]] += T(gv * fy * (1 - fx));
                    gx[size_t(ay.i1[i]) * w + ax.i1[j]] += T(gv * fy * fx);
                }
            }
        });
    });
}

template <class T>
Tensor<T> nearest_resize(const Tensor<T>& x, int oh, int ow) {
    if (x.rank() != 3) throw DimensionError("nearest_resize: need [c,h,w]");
    if (oh < 1 || ow < 1) throw DimensionError("nearest_resize: bad target size");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<int> iy(oh), ix(ow);
    for (int i = 0; i < oh; ++i) iy[i] = std::min(int((i + 0.5) * h / oh), h - 1);
    for (int j = 0; j < ow; ++j) ix[j] = std::min(int((j + 0.5) * w / ow), w - 1);
    std::vector<T> v(size_t(c) * oh * ow);
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j)
                v[(size_t(ch) * oh + i) * ow + j] = x.data()[(size_t(ch) * h + iy[i]) * w + ix[j]];
    return make_node({c, oh, ow}, std::move(v), {x}, [x, iy, ix, oh, ow](Node<T>& out) {
        x.raw()->ensure_grad();
        int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    x.raw()->grad[(size_t(ch) * h + iy[i]) * w + ix[j]] +=
                        out.grad[(size_t(ch) * oh + i) * ow + j];
    });
}

}  // namespace partswap
