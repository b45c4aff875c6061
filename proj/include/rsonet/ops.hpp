#ifndef RSONET_OPS_HPP
#define RSONET_OPS_HPP

// Structured operators on 4-D feature maps: convolution (im2col + GEMM),
// group normalization (one group), bilinear resampling, spatial/channel
// reductions, and the [B,C,H,W] <-> [B,L,C] bridges used by the scan block.
//
// Threading: work is cut into chunks whose geometry depends only on the
// problem size, never on RSONET_THREADS, and every output element belongs to
// exactly one chunk — results are bit-identical for any worker count.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rsonet/tensor.hpp"

namespace rsonet {

namespace detail {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

// Unrolls one sample's receptive fields into a K x M matrix
// (K = Cin*k*k patch rows, M = Hout*Wout output positions).
template <class T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int dilation, int padding,
            int hout, int wout, T* cols) {
    const std::int64_t m = static_cast<std::int64_t>(hout) * wout;
    std::int64_t r = 0;
    for (int ci = 0; ci < cin; ++ci) {
        const T* plane = x + static_cast<std::int64_t>(ci) * h * w;
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj, ++r) {
                T* row = cols + r * m;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride - padding + ki * dilation;
                    const bool yin = iy >= 0 && iy < h;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride - padding + kj * dilation;
                        row[static_cast<std::int64_t>(oy) * wout + ox] =
                            (yin && ix >= 0 && ix < w) ? plane[static_cast<std::int64_t>(iy) * w + ix]
                                                       : T(0);
                    }
                }
            }
    }
}

// Transpose of im2col: scatter-adds patch-row gradients back onto the image.
template <class T>
void col2im_add(const T* cols, int cin, int h, int w, int k, int stride, int dilation, int padding,
                int hout, int wout, T* gx) {
    const std::int64_t m = static_cast<std::int64_t>(hout) * wout;
    std::int64_t r = 0;
    for (int ci = 0; ci < cin; ++ci) {
        T* plane = gx + static_cast<std::int64_t>(ci) * h * w;
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj, ++r) {
                const T* row = cols + r * m;
                for (int oy = 0; oy < hout; ++oy) {
                    const int iy = oy * stride - padding + ki * dilation;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wout; ++ox) {
                        const int ix = ox * stride - padding + kj * dilation;
                        if (ix < 0 || ix >= w) continue;
                        plane[static_cast<std::int64_t>(iy) * w + ix] +=
                            row[static_cast<std::int64_t>(oy) * wout + ox];
                    }
                }
            }
    }
}

constexpr std::int64_t kGemmChunk = 64;  // output columns per GEMM task

}  // namespace detail

// 2-D convolution, square kernel. x:[B,Cin,H,W], w:[Cout,Cin,k,k],
// bias:[Cout] or default-constructed for none.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int dilation, int padding) {
    if (x.ndim() != 4) throw ShapeError("conv2d input must be [B,Cin,H,W], got " + shape_str(x.shape()));
    if (w.ndim() != 4 || w.dim(2) != w.dim(3))
        throw ShapeError("conv2d weight must be [Cout,Cin,k,k], got " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d channel mismatch: input Cin=" + std::to_string(x.dim(1)) +
                         ", weight Cin=" + std::to_string(w.dim(1)));
    if (stride < 1 || dilation < 1 || padding < 0)
        throw ValueError("conv2d needs stride>=1, dilation>=1, padding>=0");
    const int b = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int cout = w.dim(0), k = w.dim(2);
    if (bias.defined() && bias.numel() != cout)
        throw ShapeError("conv2d bias has " + std::to_string(bias.numel()) + " entries for Cout=" +
                         std::to_string(cout));
    const int span = dilation * (k - 1) + 1;
    const int hout = (h + 2 * padding - span) / stride + 1;
    const int wout = (ww + 2 * padding - span) / stride + 1;
    if (h + 2 * padding < span || ww + 2 * padding < span)
        throw ShapeError("conv2d kernel span " + std::to_string(span) + " exceeds padded input " +
                         std::to_string(h + 2 * padding) + "x" + std::to_string(ww + 2 * padding));

    const std::int64_t kk = static_cast<std::int64_t>(cin) * k * k;
    const std::int64_t m = static_cast<std::int64_t>(hout) * wout;
    Tensor<T> out = Tensor<T>::zeros({b, cout, hout, wout});

    std::vector<T> cols(static_cast<std::size_t>(b) * kk * m);
    parallel_chunks(b, 1, [&](std::int64_t s0, std::int64_t s1) {
        for (std::int64_t s = s0; s < s1; ++s)
            detail::im2col(x.data().data() + s * cin * h * ww, cin, h, ww, k, stride, dilation,
                           padding, hout, wout, cols.data() + s * kk * m);
    });

    const std::int64_t chunks_per = (m + detail::kGemmChunk - 1) / detail::kGemmChunk;
    detail::CMapR<T> wm(w.data().data(), cout, kk);
    parallel_chunks(b * chunks_per, 1, [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
            const std::int64_t s = t / chunks_per;
            const std::int64_t c0 = (t % chunks_per) * detail::kGemmChunk;
            const std::int64_t c1 = std::min(m, c0 + detail::kGemmChunk);
            detail::CMapR<T> cm(cols.data() + s * kk * m, kk, m);
            detail::MapR<T> om(out.data().data() + s * cout * m, cout, m);
            om.middleCols(c0, c1 - c0).noalias() = wm * cm.middleCols(c0, c1 - c0);
        }
    });
    if (bias.defined()) {
        for (std::int64_t s = 0; s < b; ++s)
            for (int co = 0; co < cout; ++co) {
                T* p = out.data().data() + (s * cout + co) * m;
                const T bv = bias.data()[static_cast<std::size_t>(co)];
                for (std::int64_t i = 0; i < m; ++i) p[i] += bv;
            }
    }

    std::vector<Tensor<T>> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    out.attach(parents, [x, w, bias, stride, dilation, padding, b, cin, h, ww, cout, k, hout, wout,
                         kk, m, chunks_per](typename Tensor<T>::Node& self) {
        // Patch matrices are recomputed rather than kept alive on the tape.
        std::vector<T> cols(static_cast<std::size_t>(b) * kk * m);
        parallel_chunks(b, 1, [&](std::int64_t s0, std::int64_t s1) {
            for (std::int64_t s = s0; s < s1; ++s)
                detail::im2col(x.data().data() + s * cin * h * ww, cin, h, ww, k, stride, dilation,
                               padding, hout, wout, cols.data() + s * kk * m);
        });
        if (x.requires_grad()) {
            x.node()->ensure_grad();
            std::vector<T> gcols(static_cast<std::size_t>(b) * kk * m);
            detail::CMapR<T> wm(w.data().data(), cout, kk);
            parallel_chunks(b * chunks_per, 1, [&](std::int64_t t0, std::int64_t t1) {
                for (std::int64_t t = t0; t < t1; ++t) {
                    const std::int64_t s = t / chunks_per;
                    const std::int64_t c0 = (t % chunks_per) * detail::kGemmChunk;
                    const std::int64_t c1 = std::min(m, c0 + detail::kGemmChunk);
                    detail::CMapR<T> gy(self.grad.data() + s * cout * m, cout, m);
                    detail::MapR<T> gc(gcols.data() + s * kk * m, kk, m);
                    gc.middleCols(c0, c1 - c0).noalias() =
                        wm.transpose() * gy.middleCols(c0, c1 - c0);
                }
            });
            parallel_chunks(b, 1, [&](std::int64_t s0, std::int64_t s1) {
                for (std::int64_t s = s0; s < s1; ++s)
                    detail::col2im_add(gcols.data() + s * kk * m, cin, h, ww, k, stride, dilation,
                                       padding, hout, wout,
                                       x.node()->grad.data() + s * cin * h * ww);
            });
        }
        if (w.requires_grad()) {
            w.node()->ensure_grad();
            detail::MapR<T> gw(w.node()->grad.data(), cout, kk);
            for (std::int64_t s = 0; s < b; ++s) {  // serial: one accumulation order
                detail::CMapR<T> gy(self.grad.data() + s * cout * m, cout, m);
                detail::CMapR<T> cm(cols.data() + s * kk * m, kk, m);
                gw.noalias() += gy * cm.transpose();
            }
        }
        if (bias.defined() && bias.requires_grad()) {
            bias.node()->ensure_grad();
            for (std::int64_t s = 0; s < b; ++s)
                for (int co = 0; co < cout; ++co) {
                    const T* g = self.grad.data() + (s * cout + co) * m;
                    double acc = 0;
                    for (std::int64_t i = 0; i < m; ++i) acc += static_cast<double>(g[i]);
                    bias.node()->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
                }
        }
    });
    debug_assert_finite(out.data(), "conv2d");
    return out;
}

// x:[B,L,Ci] @ w:[Ci,Co] + b. bias may be default-constructed.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.ndim() != 3) throw ShapeError("linear input must be [B,L,C], got " + shape_str(x.shape()));
    if (w.ndim() != 2 || w.dim(0) != x.dim(2))
        throw ShapeError("linear weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
    const int b = x.dim(0), l = x.dim(1), ci = x.dim(2), co = w.dim(1);
    if (bias.defined() && bias.numel() != co)
        throw ShapeError("linear bias has " + std::to_string(bias.numel()) + " entries for Co=" +
                         std::to_string(co));
    Tensor<T> out = Tensor<T>::zeros({b, l, co});
    detail::CMapR<T> wm(w.data().data(), ci, co);
    for (int s = 0; s < b; ++s) {
        detail::CMapR<T> xm(x.data().data() + static_cast<std::int64_t>(s) * l * ci, l, ci);
        detail::MapR<T> om(out.data().data() + static_cast<std::int64_t>(s) * l * co, l, co);
        om.noalias() = xm * wm;
        if (bias.defined())
            om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
                bias.data().data(), co);
    }
    std::vector<Tensor<T>> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    out.attach(parents, [x, w, bias, b, l, ci, co](typename Tensor<T>::Node& self) {
        detail::CMapR<T> wm(w.data().data(), ci, co);
        if (x.requires_grad()) x.node()->ensure_grad();
        if (w.requires_grad()) w.node()->ensure_grad();
        if (bias.defined() && bias.requires_grad()) bias.node()->ensure_grad();
        for (int s = 0; s < b; ++s) {
            detail::CMapR<T> gy(self.grad.data() + static_cast<std::int64_t>(s) * l * co, l, co);
            if (x.requires_grad()) {
                detail::MapR<T> gx(x.node()->grad.data() + static_cast<std::int64_t>(s) * l * ci, l,
                                   ci);
                gx.noalias() += gy * wm.transpose();
            }
            if (w.requires_grad()) {
                detail::CMapR<T> xm(x.data().data() + static_cast<std::int64_t>(s) * l * ci, l, ci);
                detail::MapR<T> gw(w.node()->grad.data(), ci, co);
                gw.noalias() += xm.transpose() * gy;
            }
            if (bias.defined() && bias.requires_grad()) {
                for (int j = 0; j < co; ++j) {
                    double acc = 0;
                    for (int i = 0; i < l; ++i)
                        acc += static_cast<double>(gy(i, j));
                    bias.node()->grad[static_cast<std::size_t>(j)] += static_cast<T>(acc);
                }
            }
        }
    });
    return out;
}

// Group normalization with a single group: per-sample statistics over the
// whole (C,H,W) volume, per-channel affine. Population variance, doubles
// for the moment accumulation.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.ndim() != 4) throw ShapeError("group_norm input must be [B,C,H,W], got " + shape_str(x.shape()));
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("group_norm affine size " + std::to_string(gamma.numel()) + "/" +
                         std::to_string(beta.numel()) + " vs channels " + std::to_string(c));
    const std::int64_t n = static_cast<std::int64_t>(c) * h * w;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    std::vector<double> mean(static_cast<std::size_t>(b)), inv_std(static_cast<std::size_t>(b));
    for (int s = 0; s < b; ++s) {
        const T* xs = x.data().data() + s * n;
        double mu = 0;
        for (std::int64_t i = 0; i < n; ++i) mu += static_cast<double>(xs[i]);
        mu /= static_cast<double>(n);
        double var = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(xs[i]) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        mean[static_cast<std::size_t>(s)] = mu;
        inv_std[static_cast<std::size_t>(s)] = 1.0 / std::sqrt(var + static_cast<double>(eps));
        T* os = out.data().data() + s * n;
        const std::int64_t hw = static_cast<std::int64_t>(h) * w;
        for (int ch = 0; ch < c; ++ch) {
            const double ga = static_cast<double>(gamma.data()[static_cast<std::size_t>(ch)]);
            const double be = static_cast<double>(beta.data()[static_cast<std::size_t>(ch)]);
            for (std::int64_t i = ch * hw; i < (ch + 1) * hw; ++i)
                os[i] = static_cast<T>(
                    ga * ((static_cast<double>(xs[i]) - mu) * inv_std[static_cast<std::size_t>(s)]) +
                    be);
        }
    }
    out.attach({x, gamma, beta},
               [x, gamma, beta, b, c, h, w, n, mean, inv_std](typename Tensor<T>::Node& self) {
                   const std::int64_t hw = static_cast<std::int64_t>(h) * w;
                   if (x.requires_grad()) x.node()->ensure_grad();
                   if (gamma.requires_grad()) gamma.node()->ensure_grad();
                   if (beta.requires_grad()) beta.node()->ensure_grad();
                   for (int s = 0; s < b; ++s) {
                       const T* xs = x.data().data() + s * n;
                       const T* gy = self.grad.data() + s * n;
                       const double mu = mean[static_cast<std::size_t>(s)];
                       const double is = inv_std[static_cast<std::size_t>(s)];
                       // dL/dxhat, plus the two means the normalization couples in
                       double sum_g = 0, sum_gx = 0;
                       for (int ch = 0; ch < c; ++ch) {
                           const double ga =
                               static_cast<double>(gamma.data()[static_cast<std::size_t>(ch)]);
                           for (std::int64_t i = ch * hw; i < (ch + 1) * hw; ++i) {
                               const double xh = (static_cast<double>(xs[i]) - mu) * is;
                               const double g = static_cast<double>(gy[i]) * ga;
                               sum_g += g;
                               sum_gx += g * xh;
                           }
                       }
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (int ch = 0; ch < c; ++ch) {
                           const double ga =
                               static_cast<double>(gamma.data()[static_cast<std::size_t>(ch)]);
                           double dga = 0, dbe = 0;
                           for (std::int64_t i = ch * hw; i < (ch + 1) * hw; ++i) {
                               const double xh = (static_cast<double>(xs[i]) - mu) * is;
                               const double g = static_cast<double>(gy[i]) * ga;
                               if (x.requires_grad())
                                   x.node()->grad[s * n + i] += static_cast<T>(
                                       is * (g - inv_n * sum_g - xh * inv_n * sum_gx));
                               dga += static_cast<double>(gy[i]) * xh;
                               dbe += static_cast<double>(gy[i]);
                           }
                           if (gamma.requires_grad())
                               gamma.node()->grad[static_cast<std::size_t>(ch)] += static_cast<T>(dga);
                           if (beta.requires_grad())
                               beta.node()->grad[static_cast<std::size_t>(ch)] += static_cast<T>(dbe);
                       }
                   }
               });
    debug_assert_finite(out.data(), "group_norm");
    return out;
}

// Bilinear resize, half-pixel centers (align_corners = false). Identity when
// the size is unchanged. Works for both up- and down-scaling.
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int oh, int ow) {
    if (x.ndim() != 4) throw ShapeError("upsample input must be [B,C,H,W], got " + shape_str(x.shape()));
    if (oh < 1 || ow < 1) throw ShapeError("upsample target must be positive");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out = Tensor<T>::zeros({b, c, oh, ow});
    // Source coordinates and weights depend only on geometry.
    std::vector<int> y0(static_cast<std::size_t>(oh)), x0(static_cast<std::size_t>(ow));
    std::vector<T> fy(static_cast<std::size_t>(oh)), fx(static_cast<std::size_t>(ow));
    const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double src = (oy + 0.5) * sy - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(h - 1)));
        y0[static_cast<std::size_t>(oy)] = std::min(static_cast<int>(src), h - 1);
        fy[static_cast<std::size_t>(oy)] = static_cast<T>(src - y0[static_cast<std::size_t>(oy)]);
    }
    for (int ox = 0; ox < ow; ++ox) {
        double src = (ox + 0.5) * sx - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(w - 1)));
        x0[static_cast<std::size_t>(ox)] = std::min(static_cast<int>(src), w - 1);
        fx[static_cast<std::size_t>(ox)] = static_cast<T>(src - x0[static_cast<std::size_t>(ox)]);
    }
    for (int s = 0; s < b; ++s)
        for (int ch = 0; ch < c; ++ch) {
            const T* src = x.data().data() + (static_cast<std::int64_t>(s) * c + ch) * h * w;
            T* dst = out.data().data() + (static_cast<std::int64_t>(s) * c + ch) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const int iy = y0[static_cast<std::size_t>(oy)];
                const int iy1 = std::min(iy + 1, h - 1);
                const T wy = fy[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = x0[static_cast<std::size_t>(ox)];
                    const int ix1 = std::min(ix + 1, w - 1);
                    const T wx = fx[static_cast<std::size_t>(ox)];
                    const T v00 = src[static_cast<std::int64_t>(iy) * w + ix];
                    const T v01 = src[static_cast<std::int64_t>(iy) * w + ix1];
                    const T v10 = src[static_cast<std::int64_t>(iy1) * w + ix];
                    const T v11 = src[static_cast<std::int64_t>(iy1) * w + ix1];
                    dst[static_cast<std::int64_t>(oy) * ow + ox] =
                        (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                        wy * ((T(1) - wx) * v10 + wx * v11);
                }
            }
        }
    out.attach({x}, [x, b, c, h, w, oh, ow, y0, x0, fy, fx](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        for (int s = 0; s < b; ++s)
            for (int ch = 0; ch < c; ++ch) {
                T* gx = xn->grad.data() + (static_cast<std::int64_t>(s) * c + ch) * h * w;
                const T* gy = self.grad.data() + (static_cast<std::int64_t>(s) * c + ch) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = y0[static_cast<std::size_t>(oy)];
                    const int iy1 = std::min(iy + 1, h - 1);
                    const T wy = fy[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = x0[static_cast<std::size_t>(ox)];
                        const int ix1 = std::min(ix + 1, w - 1);
                        const T wx = fx[static_cast<std::size_t>(ox)];
                        const T g = gy[static_cast<std::int64_t>(oy) * ow + ox];
                        gx[static_cast<std::int64_t>(iy) * w + ix] += (T(1) - wy) * (T(1) - wx) * g;
                        gx[static_cast<std::int64_t>(iy) * w + ix1] += (T(1) - wy) * wx * g;
                        gx[static_cast<std::int64_t>(iy1) * w + ix] += wy * (T(1) - wx) * g;
                        gx[static_cast<std::int64_t>(iy1) * w + ix1] += wy * wx * g;
                    }
                }
            }
    });
    return out;
}

enum class Reduce {
    GlobalMax,        // [B,C,H,W] -> [B,C,1,1], max over space
    AvgSpatial,       // [B,C,H,W] -> [B,C,1,1], mean over space
    MaxOverChannels,  // [B,C,H,W] -> [B,1,H,W], max over channels
    AvgOverChannels,  // [B,C,H,W] -> [B,1,H,W], mean over channels
};

// Max gradients route to the first attaining element; means spread uniformly.
template <class T>
Tensor<T> reduce(const Tensor<T>& x, Reduce mode) {
    if (x.ndim() != 4) throw ShapeError("reduce input must be [B,C,H,W], got " + shape_str(x.shape()));
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const bool spatial = mode == Reduce::GlobalMax || mode == Reduce::AvgSpatial;
    const bool is_max = mode == Reduce::GlobalMax || mode == Reduce::MaxOverChannels;
    Tensor<T> out = Tensor<T>::zeros(spatial ? std::vector<int>{b, c, 1, 1}
                                             : std::vector<int>{b, 1, h, w});
    std::vector<std::int64_t> arg;  // winning source index per output element (max modes)
    if (is_max) arg.resize(static_cast<std::size_t>(out.numel()));

    if (spatial) {
        for (int s = 0; s < b; ++s)
            for (int ch = 0; ch < c; ++ch) {
                const T* p = x.data().data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
                const std::size_t oi = static_cast<std::size_t>(s) * c + ch;
                if (is_max) {
                    std::int64_t best = 0;
                    for (std::int64_t i = 1; i < hw; ++i)
                        if (p[i] > p[best]) best = i;
                    out.data()[oi] = p[best];
                    arg[oi] = (static_cast<std::int64_t>(s) * c + ch) * hw + best;
                } else {
                    double acc = 0;
                    for (std::int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
                    out.data()[oi] = static_cast<T>(acc / static_cast<double>(hw));
                }
            }
    } else {
        for (int s = 0; s < b; ++s)
            for (std::int64_t i = 0; i < hw; ++i) {
                const T* base = x.data().data() + static_cast<std::int64_t>(s) * c * hw + i;
                const std::size_t oi = static_cast<std::size_t>(s) * hw + i;
                if (is_max) {
                    int best = 0;
                    for (int ch = 1; ch < c; ++ch)
                        if (base[ch * hw] > base[best * hw]) best = ch;
                    out.data()[oi] = base[best * hw];
                    arg[oi] = static_cast<std::int64_t>(s) * c * hw + best * hw + i;
                } else {
                    double acc = 0;
                    for (int ch = 0; ch < c; ++ch) acc += static_cast<double>(base[ch * hw]);
                    out.data()[oi] = static_cast<T>(acc / c);
                }
            }
    }
    out.attach({x}, [x, mode, b, c, hw, arg, is_max, spatial](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        if (is_max) {
            for (std::size_t oi = 0; oi < arg.size(); ++oi)
                xn->grad[static_cast<std::size_t>(arg[oi])] += self.grad[oi];
        } else if (spatial) {
            const T inv = static_cast<T>(1.0 / static_cast<double>(hw));
            for (std::int64_t oi = 0; oi < static_cast<std::int64_t>(self.grad.size()); ++oi) {
                const T g = self.grad[static_cast<std::size_t>(oi)] * inv;
                T* dst = xn->grad.data() + oi * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += g;
            }
        } else {
            const T inv = static_cast<T>(1.0 / c);
            for (int s = 0; s < b; ++s)
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T g = self.grad[static_cast<std::size_t>(s) * hw + i] * inv;
                    T* base = xn->grad.data() + static_cast<std::int64_t>(s) * c * hw + i;
                    for (int ch = 0; ch < c; ++ch) base[ch * hw] += g;
                }
        }
    });
    return out;
}

// [B,C,H,W] -> [B,H*W,C] raster-order token sequence.
template <class T>
Tensor<T> bchw_to_blc(const Tensor<T>& x) {
    if (x.ndim() != 4) throw ShapeError("bchw_to_blc input must be [B,C,H,W], got " + shape_str(x.shape()));
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor<T> out = Tensor<T>::zeros({b, static_cast<int>(hw), c});
    for (int s = 0; s < b; ++s)
        for (int ch = 0; ch < c; ++ch) {
            const T* src = x.data().data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
            T* dst = out.data().data() + static_cast<std::int64_t>(s) * hw * c + ch;
            for (std::int64_t i = 0; i < hw; ++i) dst[i * c] = src[i];
        }
    out.attach({x}, [x, b, c, hw](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        for (int s = 0; s < b; ++s)
            for (int ch = 0; ch < c; ++ch) {
                T* dst = xn->grad.data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
                const T* g = self.grad.data() + static_cast<std::int64_t>(s) * hw * c + ch;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += g[i * c];
            }
    });
    return out;
}

// Inverse of bchw_to_blc for a known spatial extent.
template <class T>
Tensor<T> blc_to_bchw(const Tensor<T>& x, int h, int w) {
    if (x.ndim() != 3) throw ShapeError("blc_to_bchw input must be [B,L,C], got " + shape_str(x.shape()));
    if (x.dim(1) != h * w)
        throw ShapeError("blc_to_bchw: L=" + std::to_string(x.dim(1)) + " but H*W=" +
                         std::to_string(h * w));
    const int b = x.dim(0), c = x.dim(2);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor<T> out = Tensor<T>::zeros({b, c, h, w});
    for (int s = 0; s < b; ++s)
        for (int ch = 0; ch < c; ++ch) {
            const T* src = x.data().data() + static_cast<std::int64_t>(s) * hw * c + ch;
            T* dst = out.data().data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i * c];
        }
    out.attach({x}, [x, b, c, hw](typename Tensor<T>::Node& self) {
        auto* xn = x.node();
        xn->ensure_grad();
        for (int s = 0; s < b; ++s)
            for (int ch = 0; ch < c; ++ch) {
                const T* g = self.grad.data() + (static_cast<std::int64_t>(s) * c + ch) * hw;
                T* dst = xn->grad.data() + static_cast<std::int64_t>(s) * hw * c + ch;
                for (std::int64_t i = 0; i < hw; ++i) dst[i * c] += g[i];
            }
    });
    return out;
}

}  // namespace rsonet

#endif
