#ifndef RSONET_TENSOR_HPP
#define RSONET_TENSOR_HPP

// Reverse-mode autodiff tensor. Dense row-major storage, dynamic rank
// (rank <= 4 in practice), numpy-style broadcasting on elementwise ops.
// Every operator builds the value eagerly and, when gradients are enabled
// and some input requires them, attaches a closure that routes the output
// gradient back to its parents. backward() runs the closures in reverse
// topological order.
//
// The scalar type is a template parameter: float for production,
// double for finite-difference and oracle tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rsonet/common.hpp"

namespace rsonet {

namespace detail {
inline thread_local bool grad_enabled_flag = true;
}

inline bool grad_enabled() { return detail::grad_enabled_flag; }

// RAII guard: disables tape construction (evaluation / inference paths).
struct NoGrad {
    bool prev;
    NoGrad() : prev(detail::grad_enabled_flag) { detail::grad_enabled_flag = false; }
    ~NoGrad() { detail::grad_enabled_flag = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

template <class T>
class Tensor {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until a gradient reaches this node
        bool requires_grad = false;
        std::vector<Tensor> parents;
        std::function<void(Node&)> backward;

        std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
        void ensure_grad() {
            if (grad.empty()) grad.assign(data.size(), T(0));
        }
    };

    Tensor() = default;

    static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false) {
        return full(shape, T(0), requires_grad);
    }

    static Tensor full(const std::vector<int>& shape, T value, bool requires_grad = false) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = shape;
        t.node_->data.assign(static_cast<std::size_t>(numel_of(shape)), value);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return full({1}, value, requires_grad);
    }

    static Tensor from(const std::vector<int>& shape, std::vector<T> values,
                       bool requires_grad = false) {
        Tensor t = zeros(shape, requires_grad);
        if (static_cast<std::int64_t>(values.size()) != t.numel())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(shape));
        t.node_->data = std::move(values);
        return t;
    }

    static Tensor uniform(const std::vector<int>& shape, Rng& rng, T lo, T hi,
                          bool requires_grad = false) {
        Tensor t = zeros(shape, requires_grad);
        std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                    static_cast<double>(hi));
        for (T& v : t.node_->data) v = static_cast<T>(dist(rng));
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return node_->numel(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    T value() const {
        if (numel() != 1)
            throw ShapeError("value() needs a one-element tensor, got " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    // Gradient as stored (zeros if nothing reached this node).
    std::vector<T> grad_vec() const {
        if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
        return node_->grad;
    }
    void clear_grad() { node_->grad.clear(); }

    // Leaf copy of the value; gradients do not flow across.
    Tensor detach() const {
        Tensor t = zeros(shape());
        t.node_->data = node_->data;
        return t;
    }

    Node* node() const { return node_.get(); }

    // --- graph construction helpers (used by every operator) ---

    static Tensor make(const std::vector<int>& shape) { return zeros(shape); }

    void attach(std::vector<Tensor> parents, std::function<void(Node&)> bwd) {
        if (!grad_enabled()) return;
        bool any = false;
        for (const Tensor& p : parents)
            if (p.node_->requires_grad) any = true;
        if (!any) return;
        node_->requires_grad = true;
        node_->parents = std::move(parents);
        node_->backward = std::move(bwd);
    }

private:
    std::shared_ptr<Node> node_;
};

// Row-major strides in elements.
inline std::vector<std::int64_t> strides_for(const std::vector<int>& shape) {
    std::vector<std::int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[static_cast<std::size_t>(i)] =
            st[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
    return st;
}

inline std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b,
                                        const char* op) {
    const std::size_t n = std::max(a.size(), b.size());
    std::vector<int> out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
        const int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` viewed through the broadcast shape `out` (0 on expanded axes).
inline std::vector<std::int64_t> broadcast_strides(const std::vector<int>& in,
                                                   const std::vector<int>& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    const std::vector<std::int64_t> own = strides_for(in);
    const std::size_t off = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i)
        if (in[i] != 1) st[off + i] = own[i];
    return st;
}

namespace detail {

// Walks the broadcast output space once, handing each output index together
// with the mapped linear indices of both inputs to `fn`.
template <class Fn>
void for_each_broadcast(const std::vector<int>& out_shape, const std::vector<int>& a_shape,
                        const std::vector<int>& b_shape, Fn&& fn) {
    const std::int64_t n = numel_of(out_shape);
    const std::vector<std::int64_t> so = strides_for(out_shape);
    const std::vector<std::int64_t> sa = broadcast_strides(a_shape, out_shape);
    const std::vector<std::int64_t> sb = broadcast_strides(b_shape, out_shape);
    const std::size_t nd = out_shape.size();
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t rem = i, ia = 0, ib = 0;
        for (std::size_t d = 0; d < nd; ++d) {
            const std::int64_t q = rem / so[d];
            rem -= q * so[d];
            ia += q * sa[d];
            ib += q * sb[d];
        }
        fn(i, ia, ib);
    }
}

}  // namespace detail

// Generic broadcasting binary op. fwd(a,b) -> value; da/db give the partial
// with respect to each input as a function of (a, b) at that element.
template <class T, class Fwd, class Da, class Db>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd,
                           Da da, Db db) {
    const std::vector<int> out_shape = broadcast_shape(a.shape(), b.shape(), name);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const std::vector<T>& av = a.data();
    const std::vector<T>& bv = b.data();
    std::vector<T>& ov = out.data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
    } else {
        detail::for_each_broadcast(out_shape, a.shape(), b.shape(),
                                   [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                       ov[i] = fwd(av[ia], bv[ib]);
                                   });
    }
    out.attach({a, b}, [a, b, da, db, out_shape](typename Tensor<T>::Node& self) {
        const std::vector<T>& g = self.grad;
        const std::vector<T>& av2 = a.data();
        const std::vector<T>& bv2 = b.data();
        auto* an = a.node();
        auto* bn = b.node();
        if (a.requires_grad()) an->ensure_grad();
        if (b.requires_grad()) bn->ensure_grad();
        if (a.shape() == b.shape()) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a.requires_grad()) an->grad[i] += g[i] * da(av2[i], bv2[i]);
                if (b.requires_grad()) bn->grad[i] += g[i] * db(av2[i], bv2[i]);
            }
        } else {
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(),
                                       [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                           if (a.requires_grad())
                                               an->grad[ia] += g[i] * da(av2[ia], bv2[ib]);
                                           if (b.requires_grad())
                                               bn->grad[ib] += g[i] * db(av2[ia], bv2[ib]);
                                       });
        }
    });
    return out;
}

template <class T, class Fwd, class Dx>
Tensor<T> map_unary(const Tensor<T>& x, Fwd fwd, Dx dx) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const std::vector<T>& xv = x.data();
    std::vector<T>& ov = out.data();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
    out.attach({x}, [x, dx](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        const std::vector<T>& g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i] * dx(xn->data[i], self.data[i]);
    });
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return broadcast_binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> out = broadcast_binary(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
    debug_assert_finite(out.data(), "div");
    return out;
}

// y = scale * x + offset with constant scalars.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T offset) {
    return map_unary(
        x, [scale, offset](T v) { return scale * v + offset; },
        [scale](T, T) { return scale; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return map_unary(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return map_unary(
        x,
        [](T v) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    return map_unary(
        x,
        [](T v) {
            // log1p(exp(v)) with the large-v branch folded in for stability
            return v > T(20) ? v : static_cast<T>(std::log1p(std::exp(static_cast<double>(v))));
        },
        [](T v, T) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        });
}

template <class T>
Tensor<T> log_t(const Tensor<T>& x) {
    Tensor<T> out = map_unary(
        x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
    debug_assert_finite(out.data(), "log");
    return out;
}

// Gradient passes where lo <= x <= hi (clipped regions get zero).
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return map_unary(
        x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// Reductions accumulate in double regardless of T.

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    double acc = 0;
    for (T v : x.data()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    out.attach({x}, [x](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        const T g = self.grad[0];
        for (T& gv : xn->grad) gv += g;
    });
    return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    const double n = static_cast<double>(x.numel());
    double acc = 0;
    for (T v : x.data()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
    out.attach({x}, [x, n](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        const T g = static_cast<T>(static_cast<double>(self.grad[0]) / n);
        for (T& gv : xn->grad) gv += g;
    });
    return out;
}

// [B, ...] -> [B]: sums every axis except the leading batch axis.
template <class T>
Tensor<T> sum_per_sample(const Tensor<T>& x) {
    if (x.ndim() < 1) throw ShapeError("sum_per_sample needs a batch axis");
    const int b = x.dim(0);
    const std::int64_t per = x.numel() / b;
    Tensor<T> out = Tensor<T>::zeros({b});
    for (int i = 0; i < b; ++i) {
        double acc = 0;
        const T* p = x.data().data() + static_cast<std::int64_t>(i) * per;
        for (std::int64_t j = 0; j < per; ++j) acc += static_cast<double>(p[j]);
        out.data()[static_cast<std::size_t>(i)] = static_cast<T>(acc);
    }
    out.attach({x}, [x, b, per](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        for (int i = 0; i < b; ++i) {
            const T g = self.grad[static_cast<std::size_t>(i)];
            T* gp = xn->grad.data() + static_cast<std::int64_t>(i) * per;
            for (std::int64_t j = 0; j < per; ++j) gp[j] += g;
        }
    });
    return out;
}

// Same data, new shape (sizes must agree).
template <class T>
Tensor<T> reshape(const Tensor<T>& x, const std::vector<int>& shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    Tensor<T> out = Tensor<T>::zeros(shape);
    out.data() = x.data();
    out.attach({x}, [x](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
    return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd) throw ShapeError("concat axis out of range");
    std::vector<int> out_shape = parts[0].shape();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto& s = parts[i].shape();
        if (static_cast<int>(s.size()) != nd)
            throw ShapeError("concat rank mismatch: " + shape_str(out_shape) + " vs " +
                             shape_str(s));
        for (int d = 0; d < nd; ++d)
            if (d != axis && s[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)])
                throw ShapeError("concat extent mismatch on axis " + std::to_string(d) + ": " +
                                 shape_str(parts[0].shape()) + " vs " + shape_str(s));
        out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    }
    Tensor<T> out = Tensor<T>::zeros(out_shape);

    // outer = product of dims before axis, inner = product after.
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<std::size_t>(d)];
    const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];

    std::int64_t offset = 0;
    for (const Tensor<T>& p : parts) {
        const std::int64_t ax = p.dim(axis);
        for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = p.data().data() + o * ax * inner;
            T* dst = out.data().data() + (o * out_axis + offset) * inner;
            std::copy(src, src + ax * inner, dst);
        }
        offset += ax;
    }
    out.attach({parts.begin(), parts.end()},
               [parts, outer, inner, out_axis, axis](typename Tensor<T>::Node& self) {
                   std::int64_t off = 0;
                   for (const Tensor<T>& p : parts) {
                       const std::int64_t ax = p.dim(axis);
                       if (p.requires_grad()) {
                           auto* pn = p.node();
                           pn->ensure_grad();
                           for (std::int64_t o = 0; o < outer; ++o) {
                               const T* g = self.grad.data() + (o * out_axis + off) * inner;
                               T* dst = pn->grad.data() + o * ax * inner;
                               for (std::int64_t i = 0; i < ax * inner; ++i) dst[i] += g[i];
                           }
                       }
                       off += ax;
                   }
               });
    return out;
}

// Per-sample routing: out[i] = take_a[i] ? a[i] : b[i] along the batch axis.
// Gradient flows only into the chosen branch of each sample.
template <class T>
Tensor<T> where_batch(const std::vector<char>& take_a, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("where_batch operands differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (static_cast<int>(take_a.size()) != a.dim(0))
        throw ShapeError("where_batch selector length " + std::to_string(take_a.size()) +
                         " vs batch " + std::to_string(a.dim(0)));
    const int bn = a.dim(0);
    const std::int64_t per = a.numel() / bn;
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (int i = 0; i < bn; ++i) {
        const std::vector<T>& src = take_a[static_cast<std::size_t>(i)] ? a.data() : b.data();
        std::copy(src.begin() + i * per, src.begin() + (i + 1) * per,
                  out.data().begin() + i * per);
    }
    out.attach({a, b}, [take_a, a, b, bn, per](typename Tensor<T>::Node& self) {
        if (a.requires_grad()) a.node()->ensure_grad();
        if (b.requires_grad()) b.node()->ensure_grad();
        for (int i = 0; i < bn; ++i) {
            const Tensor<T>& tgt = take_a[static_cast<std::size_t>(i)] ? a : b;
            if (!tgt.requires_grad()) continue;
            T* gp = tgt.node()->grad.data() + i * per;
            const T* g = self.grad.data() + i * per;
            for (std::int64_t j = 0; j < per; ++j) gp[j] += g[j];
        }
    });
    return out;
}

// Reorders the L axis of a [B, L, C] tensor: out[b, l, :] = x[b, perm[l], :].
// perm must be a permutation of 0..L-1; backward scatters through it.
template <class T>
Tensor<T> reorder_rows(const Tensor<T>& x, const std::vector<int>& perm) {
    if (x.ndim() != 3) throw ShapeError("reorder_rows expects [B,L,C], got " + shape_str(x.shape()));
    const int b = x.dim(0), l = x.dim(1), c = x.dim(2);
    if (static_cast<int>(perm.size()) != l)
        throw ShapeError("reorder_rows permutation length " + std::to_string(perm.size()) +
                         " vs L=" + std::to_string(l));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < l; ++j) {
            const T* src = x.data().data() + (static_cast<std::int64_t>(i) * l + perm[j]) * c;
            T* dst = out.data().data() + (static_cast<std::int64_t>(i) * l + j) * c;
            std::copy(src, src + c, dst);
        }
    out.attach({x}, [x, perm, b, l, c](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < l; ++j) {
                const T* g = self.grad.data() + (static_cast<std::int64_t>(i) * l + j) * c;
                T* dst = xn->grad.data() + (static_cast<std::int64_t>(i) * l + perm[j]) * c;
                for (int k = 0; k < c; ++k) dst[k] += g[k];
            }
    });
    return out;
}

template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    using Node = typename Tensor<T>::Node;

    // Iterative post-order DFS over parents.
    std::vector<Node*> order;
    std::unordered_set<Node*> done;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (done.count(n)) {
            stack.pop_back();
            continue;
        }
        if (next < n->parents.size()) {
            Node* p = n->parents[next].node();
            ++next;
            if (!done.count(p)) stack.emplace_back(p, 0);
        } else {
            done.insert(n);
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

}  // namespace rsonet

#endif
