#ifndef RSONET_GUIDANCE_HPP
#define RSONET_GUIDANCE_HPP

// Stage 1: region guidance. Three parallel branches (RGB, thermal, RGB+T)
// share one encoder and one CI/SF decoder; each produces a coarse guidance
// map. The branch whose mean activation sits closest to the joint branch's
// decides which modality dominates fusion downstream.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rsonet/backbone.hpp"

namespace rsonet {

// Cross-integration: parallel kernels 1/3/5/7 with chained inputs
// (branch b sees the previous branch's output plus the raw feature),
// truncated to 4/3/2 branches at levels 1 / 2-3 / 4-5.
inline int ci_branch_count(int level) {
    if (level < 1 || level > 5) throw ValueError("ci level must be 1..5, got " + std::to_string(level));
    return level == 1 ? 4 : (level <= 3 ? 3 : 2);
}

template <class T>
struct CiModule {
    std::vector<ConvUnit<T>> branches;
    ConvUnit<T> proj;

    CiModule() = default;
    CiModule(int level, int channels, Rng& rng, UnitOptions opt = {}) {
        static constexpr int kKernels[4] = {1, 3, 5, 7};
        const int nb = ci_branch_count(level);
        branches.reserve(static_cast<std::size_t>(nb));
        for (int b = 0; b < nb; ++b)
            branches.emplace_back(channels, channels, kKernels[b], rng, 1, 1, -1, opt);
        proj = ConvUnit<T>(nb * channels, channels, 1, rng, 1, 1, -1, opt);
    }

    Tensor<T> forward(const Tensor<T>& f) const {
        std::vector<Tensor<T>> outs;
        outs.reserve(branches.size());
        for (std::size_t b = 0; b < branches.size(); ++b)
            outs.push_back(branches[b].forward(b == 0 ? f : add(outs[b - 1], f)));
        return proj.forward(concat(outs, 1));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        for (std::size_t b = 0; b < branches.size(); ++b)
            branches[b].collect(prefix + ".b" + std::to_string(b), out);
        proj.collect(prefix + ".proj", out);
    }
};

// One input path of the spatial-aware fusion block:
// F_c = conv3(conv3(x)); W = sigmoid(conv1(channel-max(F_c))); out = F_c*W + F_c.
template <class T>
struct SfPath {
    ConvUnit<T> c1, c2;
    Conv2dLayer<T> wconv;  // 1x1 on the single-channel max map, feeds sigmoid

    SfPath() = default;
    SfPath(int channels, Rng& rng, UnitOptions opt = {})
        : c1(channels, channels, 3, rng, 1, 1, -1, opt),
          c2(channels, channels, 3, rng, 1, 1, -1, opt),
          wconv(1, 1, 1, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> fc = c2.forward(c1.forward(x));
        Tensor<T> w = sigmoid(wconv.forward(reduce(fc, Reduce::MaxOverChannels)));
        return add(mul(fc, w), fc);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        c1.collect(prefix + ".c1", out);
        c2.collect(prefix + ".c2", out);
        wconv.collect(prefix + ".w", out);
    }
};

// Spatial-aware fusion at one level: the current feature's path plus,
// below the coarsest level, the previous SF output upsampled, 1x1-aligned
// to this level's width, and run through its own path; paths sum.
template <class T>
struct SfModule {
    SfPath<T> cur;
    struct PrevPath {
        ConvUnit<T> align;
        SfPath<T> path;
    };
    std::optional<PrevPath> prev;

    SfModule() = default;
    SfModule(int channels, int prev_channels, Rng& rng, UnitOptions opt = {})
        : cur(channels, rng, opt) {
        if (prev_channels > 0)
            prev.emplace(PrevPath{ConvUnit<T>(prev_channels, channels, 1, rng, 1, 1, -1, opt),
                                  SfPath<T>(channels, rng, opt)});
    }

    Tensor<T> forward(const Tensor<T>& f_ci, const Tensor<T>& f_prev) const {
        Tensor<T> out = cur.forward(f_ci);
        if (prev) {
            if (!f_prev.defined()) throw ShapeError("sf_forward: coarser-level input missing");
            Tensor<T> aligned =
                prev->align.forward(upsample_bilinear(f_prev, f_ci.dim(2), f_ci.dim(3)));
            out = add(out, prev->path.forward(aligned));
        }
        return out;
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        cur.collect(prefix + ".cur", out);
        if (prev) {
            prev->align.collect(prefix + ".prev.align", out);
            prev->path.collect(prefix + ".prev", out);
        }
    }
};

// CI -> SF (coarsest to finest) -> 1x1 head + sigmoid. One instance is
// shared by all three guidance branches.
template <class T>
struct GuidanceNet {
    std::array<CiModule<T>, 5> ci;
    std::array<SfModule<T>, 5> sf;
    Conv2dLayer<T> head;

    GuidanceNet() = default;
    GuidanceNet(const std::array<int, 5>& channels, Rng& rng) {
        for (int lv = 1; lv <= 5; ++lv) {
            const int c = channels[static_cast<std::size_t>(lv - 1)];
            const int cprev = lv == 5 ? 0 : channels[static_cast<std::size_t>(lv)];
            ci[static_cast<std::size_t>(lv - 1)] = CiModule<T>(lv, c, rng);
            sf[static_cast<std::size_t>(lv - 1)] = SfModule<T>(c, cprev, rng);
        }
        head = Conv2dLayer<T>(channels[0], 1, 1, rng);
    }

    Tensor<T> decode(const FeaturePyramid<T>& pyr) const {
        Tensor<T> carry;
        for (int lv = 5; lv >= 1; --lv) {
            Tensor<T> f = ci[static_cast<std::size_t>(lv - 1)].forward(
                pyr.levels[static_cast<std::size_t>(lv - 1)]);
            carry = sf[static_cast<std::size_t>(lv - 1)].forward(f, carry);
        }
        return sigmoid(head.forward(carry));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        for (int lv = 1; lv <= 5; ++lv) {
            ci[static_cast<std::size_t>(lv - 1)].collect(prefix + ".ci" + std::to_string(lv), out);
            sf[static_cast<std::size_t>(lv - 1)].collect(prefix + ".sf" + std::to_string(lv), out);
        }
        head.collect(prefix + ".head", out);
    }
};

// Spatial mean of a single-channel map, one value per sample, 64-bit sums.
template <class T>
std::vector<double> mean_activation(const Tensor<T>& g) {
    if (g.ndim() != 4 || g.dim(1) != 1)
        throw ShapeError("mean_activation expects [B,1,H,W], got " + shape_str(g.shape()));
    const int b = g.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(g.dim(2)) * g.dim(3);
    std::vector<double> m(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        double acc = 0;
        const T* p = g.data().data() + i * hw;
        for (std::int64_t j = 0; j < hw; ++j) acc += static_cast<double>(p[j]);
        m[static_cast<std::size_t>(i)] = acc / static_cast<double>(hw);
    }
    return m;
}

enum class Modality { RgbDominant, ThermalDominant };

struct ModalitySelection {
    Modality choice = Modality::RgbDominant;
    double delta_r = 0, delta_t = 0;
    bool tie_broken = false;
};

// Hard selection: the modality whose guidance mean sits closest to the joint
// branch's wins; exact ties go to RGB. No gradient flows through this.
inline ModalitySelection select_modality(double m_r, double m_t, double m_rt) {
    ModalitySelection sel;
    sel.delta_r = std::abs(m_r - m_rt);
    sel.delta_t = std::abs(m_t - m_rt);
    sel.tie_broken = sel.delta_r == sel.delta_t;
    sel.choice = sel.delta_r <= sel.delta_t ? Modality::RgbDominant : Modality::ThermalDominant;
    return sel;
}

template <class T>
struct GuidanceTriple {
    Tensor<T> g_r, g_t, g_rt;
    std::vector<double> m_r, m_t, m_rt;  // per-sample mean activations
};

}  // namespace rsonet

#endif
