#ifndef RSONET_METRICS_HPP
#define RSONET_METRICS_HPP

// Evaluation metrics: MAE, adaptive-threshold F-measure, structure-measure,
// and enhanced-alignment measure, plus directory-level evaluation. All math
// in double. Degenerate-mask conventions are pinned here:
//  - f_beta: T = min(2*mean(s), 1), predict s >= T; empty gt & empty
//    prediction -> 1; F = 0 whenever 0.3*P + R == 0.
//  - s_measure: gt all-zero -> 1 - mean(s); all-one -> mean(s); result
//    clamped to [0,1]; sample statistics use N-1; centroid rounds the
//    1-indexed mean coordinate.
//  - e_measure: same adaptive binarization; gt all-zero -> mean of
//    (1 - s_bin); all-one -> mean(s_bin); zero-denominator pixels align 0.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rsonet/image_io.hpp"

namespace rsonet {

// A detection map or mask with double pixels in [0,1].
struct Grid {
    int h = 0, w = 0;
    std::vector<double> v;
};

inline Grid to_grid(const GrayImage& img) {
    Grid g{img.h, img.w, std::vector<double>(img.px.begin(), img.px.end())};
    return g;
}

namespace metric_detail {

constexpr double kEps = 2.2204e-16;

inline void check_same(const Grid& s, const Grid& g, const char* op) {
    if (s.h != g.h || s.w != g.w)
        throw ShapeError(std::string(op) + ": size " + std::to_string(s.h) + "x" +
                         std::to_string(s.w) + " vs " + std::to_string(g.h) + "x" +
                         std::to_string(g.w));
}

inline double mean_of(const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Adaptive binarization shared by f_beta and e_measure.
inline std::vector<double> adaptive_binarize(const Grid& s) {
    const double t = std::min(2.0 * mean_of(s.v), 1.0);
    std::vector<double> b(s.v.size());
    for (std::size_t i = 0; i < s.v.size(); ++i) b[i] = s.v[i] >= t ? 1.0 : 0.0;
    return b;
}

// Mean-contrast similarity of one region: 2*mean / (mean^2 + 1 + std + eps),
// with the sample (N-1) standard deviation over the masked pixels.
inline double object_score(const std::vector<double>& sm, const std::vector<double>& mask) {
    double total = 0;
    for (double v : sm) total += v;
    if (total <= 0) return 0;
    double n = 0, mean = 0;
    for (std::size_t i = 0; i < sm.size(); ++i)
        if (mask[i] > 0.5) {
            mean += sm[i];
            n += 1;
        }
    if (n == 0) return 0;
    mean /= n;
    double var = 0;
    for (std::size_t i = 0; i < sm.size(); ++i)
        if (mask[i] > 0.5) var += (sm[i] - mean) * (sm[i] - mean);
    const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

// Fan-style SSIM over one quadrant; N-1 statistics; alpha/beta special cases.
inline double quadrant_ssim(const Grid& s, const Grid& g, int y0, int y1, int x0, int x1) {
    const std::int64_t n = static_cast<std::int64_t>(y1 - y0) * (x1 - x0);
    if (n <= 0) return 1.0;  // empty quadrant (weight 0 anyway)
    double xm = 0, ym = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            xm += s.v[static_cast<std::size_t>(y) * s.w + x];
            ym += g.v[static_cast<std::size_t>(y) * g.w + x];
        }
    xm /= static_cast<double>(n);
    ym /= static_cast<double>(n);
    double sx = 0, sy = 0, sxy = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double dx = s.v[static_cast<std::size_t>(y) * s.w + x] - xm;
            const double dy = g.v[static_cast<std::size_t>(y) * g.w + x] - ym;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    const double denom_n = static_cast<double>(n) - 1.0 + kEps;
    sx /= denom_n;
    sy /= denom_n;
    sxy /= denom_n;
    const double alpha = 4.0 * xm * ym * sxy;
    const double beta = (xm * xm + ym * ym) * (sx + sy);
    if (alpha != 0) return alpha / (beta + kEps);
    return beta == 0 ? 1.0 : 0.0;
}

}  // namespace metric_detail

inline double mae(const Grid& s, const Grid& g) {
    metric_detail::check_same(s, g, "mae");
    double acc = 0;
    for (std::size_t i = 0; i < s.v.size(); ++i) acc += std::abs(s.v[i] - g.v[i]);
    return acc / static_cast<double>(s.v.size());
}

inline double f_beta(const Grid& s, const Grid& g) {
    metric_detail::check_same(s, g, "f_beta");
    const std::vector<double> pred = metric_detail::adaptive_binarize(s);
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > 0.5, t = g.v[i] > 0.5;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    if (tp + fn == 0 && tp + fp == 0) return 1.0;  // empty gt, empty prediction
    const double prec = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double denom = 0.3 * prec + rec;
    return denom > 0 ? 1.3 * prec * rec / denom : 0.0;
}

inline double s_measure(const Grid& s, const Grid& g) {
    metric_detail::check_same(s, g, "s_measure");
    const double gmean = metric_detail::mean_of(g.v);
    const double smean = metric_detail::mean_of(s.v);
    if (gmean == 0) return std::clamp(1.0 - smean, 0.0, 1.0);
    if (gmean == 1) return std::clamp(smean, 0.0, 1.0);

    // Object term: FG contrast on s, BG contrast on 1-s.
    std::vector<double> s_inv(s.v.size()), g_inv(g.v.size());
    for (std::size_t i = 0; i < s.v.size(); ++i) {
        s_inv[i] = 1.0 - s.v[i];
        g_inv[i] = 1.0 - g.v[i];
    }
    const double o_fg = metric_detail::object_score(s.v, g.v);
    const double o_bg = metric_detail::object_score(s_inv, g_inv);
    const double s_object = gmean * o_fg + (1.0 - gmean) * o_bg;

    // Region term: split at the gt centroid (rounded 1-indexed mean, then
    // back to a 0-indexed cut), quadrant SSIM weighted by quadrant area.
    double total = 0, sum_x = 0, sum_y = 0;
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            const double v = g.v[static_cast<std::size_t>(y) * g.w + x];
            total += v;
            sum_x += v * (x + 1);
            sum_y += v * (y + 1);
        }
    const int cx = static_cast<int>(std::round(sum_x / total)) - 1;
    const int cy = static_cast<int>(std::round(sum_y / total)) - 1;
    const int xcut = cx + 1, ycut = cy + 1;  // quadrant extents
    const double area = static_cast<double>(g.h) * g.w;
    struct Quad {
        int y0, y1, x0, x1;
    };
    const Quad quads[4] = {{0, ycut, 0, xcut},
                           {0, ycut, xcut, g.w},
                           {ycut, g.h, 0, xcut},
                           {ycut, g.h, xcut, g.w}};
    double s_region = 0;
    for (const Quad& q : quads) {
        const double wgt = static_cast<double>(q.y1 - q.y0) * (q.x1 - q.x0) / area;
        if (wgt == 0) continue;
        s_region += wgt * metric_detail::quadrant_ssim(s, g, q.y0, q.y1, q.x0, q.x1);
    }

    return std::clamp(0.5 * s_object + 0.5 * s_region, 0.0, 1.0);
}

inline double e_measure(const Grid& s, const Grid& g) {
    metric_detail::check_same(s, g, "e_measure");
    const std::vector<double> sb = metric_detail::adaptive_binarize(s);
    const double gmean = metric_detail::mean_of(g.v);
    double acc = 0;
    if (gmean == 0) {
        for (double v : sb) acc += 1.0 - v;
        return acc / static_cast<double>(sb.size());
    }
    if (gmean == 1) {
        for (double v : sb) acc += v;
        return acc / static_cast<double>(sb.size());
    }
    const double sbmean = metric_detail::mean_of(sb);
    for (std::size_t i = 0; i < sb.size(); ++i) {
        const double phi_s = sb[i] - sbmean;
        const double phi_g = g.v[i] - gmean;
        const double denom = phi_s * phi_s + phi_g * phi_g;
        const double xi = denom > 0 ? 2.0 * phi_s * phi_g / denom : 0.0;
        acc += (1.0 + xi) * (1.0 + xi) / 4.0;
    }
    return acc / static_cast<double>(sb.size());
}

struct MetricReport {
    double mae = 0, f_beta = 0, s_measure = 0, e_measure = 0;
    int count = 0;
};

// Averages the four metrics over matching <name>.png pairs, lexicographic
// order. Predictions are resized (bilinear) to the gt size when they differ;
// gt re-binarized at 0.5 after loading.
inline MetricReport evaluate_dir(const std::string& pred_dir, const std::string& gt_dir) {
    namespace fs = std::filesystem;
    auto list_pngs = [](const std::string& dir) {
        if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png")
                names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        return names;
    };
    const std::vector<std::string> preds = list_pngs(pred_dir);
    const std::vector<std::string> gts = list_pngs(gt_dir);
    if (preds != gts) {
        std::string missing;
        for (const auto& n : preds)
            if (!std::binary_search(gts.begin(), gts.end(), n)) missing += " pred-only:" + n;
        for (const auto& n : gts)
            if (!std::binary_search(preds.begin(), preds.end(), n)) missing += " gt-only:" + n;
        throw DataError("prediction/gt filename mismatch:" + missing);
    }
    if (preds.empty()) throw DataError("no .png pairs found in " + pred_dir);

    MetricReport rep;
    for (const std::string& name : preds) {
        GrayImage p = load_gray((fs::path(pred_dir) / name).string());
        GrayImage t = load_gray((fs::path(gt_dir) / name).string());
        if (p.h != t.h || p.w != t.w) p = resize_gray(p, t.h, t.w);
        Grid sp = to_grid(p), sg = to_grid(t);
        for (double& v : sg.v) v = v >= 0.5 ? 1.0 : 0.0;
        rep.mae += mae(sp, sg);
        rep.f_beta += f_beta(sp, sg);
        rep.s_measure += s_measure(sp, sg);
        rep.e_measure += e_measure(sp, sg);
        rep.count += 1;
    }
    rep.mae /= rep.count;
    rep.f_beta /= rep.count;
    rep.s_measure /= rep.count;
    rep.e_measure /= rep.count;
    return rep;
}

}  // namespace rsonet

#endif
