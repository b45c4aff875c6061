#ifndef RSONET_LOSSES_HPP
#define RSONET_LOSSES_HPP

// Hybrid supervision: BCE + soft IoU + soft F-measure per supervised map,
// averaged over maps. Sums run over the whole tensor (batch included), so
// the total is permutation-invariant over the batch axis.

#include <vector>

#include "rsonet/tensor.hpp"
#include "rsonet/ops.hpp"

namespace rsonet {

template <class T>
constexpr T kLossEps = static_cast<T>(1e-7);

namespace detail {
template <class T>
void check_loss_shapes(const Tensor<T>& s, const Tensor<T>& g, const char* op) {
    if (s.shape() != g.shape())
        throw ShapeError(std::string(op) + ": prediction " + shape_str(s.shape()) +
                         " vs target " + shape_str(g.shape()));
}
}  // namespace detail

// -mean(g*log s + (1-g)*log(1-s)), s clamped to [eps, 1-eps].
template <class T>
Tensor<T> bce_loss(const Tensor<T>& s, const Tensor<T>& g) {
    detail::check_loss_shapes(s, g, "bce_loss");
    Tensor<T> sc = clamp(s, kLossEps<T>, T(1) - kLossEps<T>);
    Tensor<T> term =
        add(mul(g, log_t(sc)), mul(affine(g, T(-1), T(1)), log_t(affine(sc, T(-1), T(1)))));
    return affine(mean_all(term), T(-1), T(0));
}

// 1 - (sum(s*g)+1)/(sum(s)+sum(g)-sum(s*g)+1).
template <class T>
Tensor<T> iou_loss(const Tensor<T>& s, const Tensor<T>& g) {
    detail::check_loss_shapes(s, g, "iou_loss");
    Tensor<T> inter = sum_all(mul(s, g));
    Tensor<T> uni = sub(add(sum_all(s), sum_all(g)), inter);
    return affine(div(affine(inter, T(1), T(1)), affine(uni, T(1), T(1))), T(-1), T(1));
}

// 1 - F with F = 1.3*P*R/(0.3*P + R + eps), P = TP/(sum s + eps),
// R = TP/(sum g + eps), TP = sum(s*g).
template <class T>
Tensor<T> fm_loss(const Tensor<T>& s, const Tensor<T>& g) {
    detail::check_loss_shapes(s, g, "fm_loss");
    Tensor<T> tp = sum_all(mul(s, g));
    Tensor<T> p = div(tp, affine(sum_all(s), T(1), kLossEps<T>));
    Tensor<T> r = div(tp, affine(sum_all(g), T(1), kLossEps<T>));
    Tensor<T> f = div(affine(mul(p, r), static_cast<T>(1.3), T(0)),
                      affine(add(affine(p, static_cast<T>(0.3), T(0)), r), T(1), kLossEps<T>));
    return affine(f, T(-1), T(1));
}

struct LossBreakdown {
    double bce = 0, iou = 0, fm = 0, total = 0;
    std::vector<double> per_map;  // per-map three-term totals
};

template <class T>
struct TotalLoss {
    Tensor<T> value;  // differentiable scalar
    LossBreakdown stats;
};

// Mean over supervised maps of (bce + iou + fm); gts must already be at each
// map's resolution.
template <class T>
TotalLoss<T> total_loss(const std::vector<Tensor<T>>& maps, const std::vector<Tensor<T>>& gts) {
    if (maps.empty() || maps.size() != gts.size())
        throw ShapeError("total_loss: " + std::to_string(maps.size()) + " maps vs " +
                         std::to_string(gts.size()) + " targets");
    TotalLoss<T> out;
    Tensor<T> acc;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        Tensor<T> b = bce_loss(maps[i], gts[i]);
        Tensor<T> j = iou_loss(maps[i], gts[i]);
        Tensor<T> f = fm_loss(maps[i], gts[i]);
        Tensor<T> map_total = add(add(b, j), f);
        out.stats.bce += static_cast<double>(b.value());
        out.stats.iou += static_cast<double>(j.value());
        out.stats.fm += static_cast<double>(f.value());
        out.stats.per_map.push_back(static_cast<double>(map_total.value()));
        acc = i == 0 ? map_total : add(acc, map_total);
    }
    const T inv = static_cast<T>(1.0 / static_cast<double>(maps.size()));
    out.value = affine(acc, inv, T(0));
    out.stats.bce /= static_cast<double>(maps.size());
    out.stats.iou /= static_cast<double>(maps.size());
    out.stats.fm /= static_cast<double>(maps.size());
    out.stats.total = static_cast<double>(out.value.value());
    return out;
}

// Ground truth brought to a map's resolution: bilinear resize then 0.5
// threshold. Returns a fresh constant tensor (no tape).
template <class T>
Tensor<T> resize_gt(const Tensor<T>& gt, int h, int w) {
    NoGrad guard;
    Tensor<T> r = upsample_bilinear(gt, h, w);
    Tensor<T> out = Tensor<T>::zeros(r.shape());
    for (std::size_t i = 0; i < out.data().size(); ++i)
        out.data()[i] = r.data()[i] >= T(0.5) ? T(1) : T(0);
    return out;
}

}  // namespace rsonet

#endif
