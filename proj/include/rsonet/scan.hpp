#ifndef RSONET_SCAN_HPP
#define RSONET_SCAN_HPP

// Selective state-space scan over a token sequence. For each channel c a
// state vector of size N evolves along the sequence:
//
//   h_t = exp(delta_t[c] * A[c,:]) (*) h_{t-1} + delta_t[c] * B_t * x_t[c]
//   y_t[c] = <C_t, h_t[c,:]> + D[c] * x_t[c]
//
// delta is expected positive and A negative, so the decay factor stays in
// (0,1). The forward pass keeps every intermediate state; the backward pass
// replays the recurrence in reverse (backprop through time).

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "rsonet/tensor.hpp"

namespace rsonet {

// x, delta: [B,L,C]; Bm, Cm: [B,L,N]; A: [C,N]; D: [C]  ->  y: [B,L,C]
template <class T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& Bm,
                         const Tensor<T>& Cm, const Tensor<T>& A, const Tensor<T>& D) {
    if (x.ndim() != 3) throw ShapeError("scan input must be [B,L,C], got " + shape_str(x.shape()));
    const int b = x.dim(0), l = x.dim(1), c = x.dim(2);
    if (delta.shape() != x.shape())
        throw ShapeError("scan delta " + shape_str(delta.shape()) + " vs input " +
                         shape_str(x.shape()));
    if (Bm.ndim() != 3 || Bm.dim(0) != b || Bm.dim(1) != l)
        throw ShapeError("scan B must be [B,L,N], got " + shape_str(Bm.shape()));
    const int n = Bm.dim(2);
    if (Cm.shape() != Bm.shape())
        throw ShapeError("scan C " + shape_str(Cm.shape()) + " vs B " + shape_str(Bm.shape()));
    if (A.ndim() != 2 || A.dim(0) != c || A.dim(1) != n)
        throw ShapeError("scan A must be [C,N]=[" + std::to_string(c) + "," + std::to_string(n) +
                         "], got " + shape_str(A.shape()));
    if (D.ndim() != 1 || D.dim(0) != c)
        throw ShapeError("scan D must be [C]=[" + std::to_string(c) + "], got " +
                         shape_str(D.shape()));

    Tensor<T> y = Tensor<T>::zeros({b, l, c});
    // All states are kept for the reverse sweep: [B,L,C,N].
    auto states = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(b) * l * c * n, T(0));

    const T* xd = x.data().data();
    const T* dd = delta.data().data();
    const T* bd = Bm.data().data();
    const T* cd = Cm.data().data();
    const T* ad = A.data().data();
    const T* dvec = D.data().data();

    parallel_chunks(b, 1, [&](std::int64_t s0, std::int64_t s1) {
        for (std::int64_t s = s0; s < s1; ++s) {
            T* h = states->data() + s * l * c * n;
            T* ys = y.data().data() + s * l * c;
            const T* xs = xd + s * l * c;
            const T* ds = dd + s * l * c;
            const T* bs = bd + s * l * n;
            const T* cs = cd + s * l * n;
            for (int t = 0; t < l; ++t) {
                const T* hprev = t > 0 ? h + static_cast<std::int64_t>(t - 1) * c * n : nullptr;
                T* hcur = h + static_cast<std::int64_t>(t) * c * n;
                for (int ci = 0; ci < c; ++ci) {
                    const T dt = ds[static_cast<std::int64_t>(t) * c + ci];
                    const T xv = xs[static_cast<std::int64_t>(t) * c + ci];
                    double acc = 0;
                    for (int ni = 0; ni < n; ++ni) {
                        const T decay = std::exp(dt * ad[static_cast<std::int64_t>(ci) * n + ni]);
                        T hv = dt * bs[static_cast<std::int64_t>(t) * n + ni] * xv;
                        if (hprev) hv += decay * hprev[static_cast<std::int64_t>(ci) * n + ni];
                        hcur[static_cast<std::int64_t>(ci) * n + ni] = hv;
                        acc += static_cast<double>(cs[static_cast<std::int64_t>(t) * n + ni]) *
                               static_cast<double>(hv);
                    }
                    ys[static_cast<std::int64_t>(t) * c + ci] =
                        static_cast<T>(acc) + dvec[ci] * xv;
                }
            }
        }
    });

    y.attach({x, delta, Bm, Cm, A, D},
             [x, delta, Bm, Cm, A, D, states, b, l, c, n](typename Tensor<T>::Node& self) {
                 auto ensure = [](const Tensor<T>& t) {
                     if (t.requires_grad()) t.node()->ensure_grad();
                 };
                 ensure(x);
                 ensure(delta);
                 ensure(Bm);
                 ensure(Cm);
                 ensure(A);
                 ensure(D);
                 std::vector<T> gh(static_cast<std::size_t>(c) * n);
                 for (int s = 0; s < b; ++s) {
                     const T* h = states->data() + static_cast<std::int64_t>(s) * l * c * n;
                     const T* gy = self.grad.data() + static_cast<std::int64_t>(s) * l * c;
                     const T* xs = x.data().data() + static_cast<std::int64_t>(s) * l * c;
                     const T* ds = delta.data().data() + static_cast<std::int64_t>(s) * l * c;
                     const T* bs = Bm.data().data() + static_cast<std::int64_t>(s) * l * n;
                     const T* cs = Cm.data().data() + static_cast<std::int64_t>(s) * l * n;
                     std::fill(gh.begin(), gh.end(), T(0));
                     for (int t = l - 1; t >= 0; --t) {
                         const T* hcur = h + static_cast<std::int64_t>(t) * c * n;
                         const T* hprev =
                             t > 0 ? h + static_cast<std::int64_t>(t - 1) * c * n : nullptr;
                         for (int ci = 0; ci < c; ++ci) {
                             const T dy = gy[static_cast<std::int64_t>(t) * c + ci];
                             const T dt = ds[static_cast<std::int64_t>(t) * c + ci];
                             const T xv = xs[static_cast<std::int64_t>(t) * c + ci];
                             if (D.requires_grad())
                                 D.node()->grad[static_cast<std::size_t>(ci)] += dy * xv;
                             double gx_acc = static_cast<double>(dy) *
                                             static_cast<double>(D.data()[static_cast<std::size_t>(ci)]);
                             double gd_acc = 0;
                             for (int ni = 0; ni < n; ++ni) {
                                 const std::int64_t cn = static_cast<std::int64_t>(ci) * n + ni;
                                 const T hv = hcur[cn];
                                 if (Cm.requires_grad())
                                     Cm.node()->grad[static_cast<std::size_t>(
                                         (static_cast<std::int64_t>(s) * l + t) * n + ni)] +=
                                         dy * hv;
                                 // total gradient reaching h_t[ci,ni]
                                 const T g = gh[static_cast<std::size_t>(cn)] +
                                             dy * cs[static_cast<std::int64_t>(t) * n + ni];
                                 const T av = A.data()[static_cast<std::size_t>(cn)];
                                 const T decay = std::exp(dt * av);
                                 const T bv = bs[static_cast<std::int64_t>(t) * n + ni];
                                 const T hp = hprev ? hprev[cn] : T(0);
                                 if (Bm.requires_grad())
                                     Bm.node()->grad[static_cast<std::size_t>(
                                         (static_cast<std::int64_t>(s) * l + t) * n + ni)] +=
                                         g * dt * xv;
                                 if (A.requires_grad())
                                     A.node()->grad[static_cast<std::size_t>(cn)] +=
                                         g * dt * decay * hp;
                                 gx_acc += static_cast<double>(g) * static_cast<double>(dt) *
                                           static_cast<double>(bv);
                                 gd_acc += static_cast<double>(g) *
                                           (static_cast<double>(av) * static_cast<double>(decay) *
                                                static_cast<double>(hp) +
                                            static_cast<double>(bv) * static_cast<double>(xv));
                                 // carry to h_{t-1}
                                 gh[static_cast<std::size_t>(cn)] = g * decay;
                             }
                             if (x.requires_grad())
                                 x.node()->grad[static_cast<std::size_t>(
                                     (static_cast<std::int64_t>(s) * l + t) * c + ci)] +=
                                     static_cast<T>(gx_acc);
                             if (delta.requires_grad())
                                 delta.node()->grad[static_cast<std::size_t>(
                                     (static_cast<std::int64_t>(s) * l + t) * c + ci)] +=
                                     static_cast<T>(gd_acc);
                         }
                     }
                 }
             });
    debug_assert_finite(y.data(), "selective_scan");
    return y;
}

}  // namespace rsonet

#endif
