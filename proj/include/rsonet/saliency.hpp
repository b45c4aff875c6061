#ifndef RSONET_SALIENCY_HPP
#define RSONET_SALIENCY_HPP

// Stage 2: saliency generation. Guidance-weighted directional fusion of the
// two modality features (SO), detail enhancement with densely connected
// dilated branches + scan blocks on the three fine levels (DDE), multi-scale
// semantic interaction on the two coarse levels (MIS), and a top-down decoder
// emitting five supervised maps plus the full-resolution result.

#include <array>
#include <string>
#include <vector>

#include "rsonet/guidance.hpp"

namespace rsonet {

// Directional selective fusion at one level. The guidance map excites both
// modality features; channel attention (shared weights) refines each; spatial
// attention from the dominant modality's feature reweights the other; the
// dominant feature and the transferred one sum. Both directions are computed
// and each sample takes the one its selection picked.
template <class T>
struct SoModule {
    ChannelAttention<T> ca;
    SpatialAttention<T> sa;

    SoModule() = default;
    SoModule(int channels, Rng& rng) : ca(channels, rng), sa(rng) {}

    Tensor<T> forward(const Tensor<T>& f_r, const Tensor<T>& f_t, const Tensor<T>& g,
                      const std::vector<ModalitySelection>& sel) const {
        if (f_r.shape() != f_t.shape())
            throw ShapeError("so_forward modality shapes differ: " + shape_str(f_r.shape()) +
                             " vs " + shape_str(f_t.shape()));
        Tensor<T> fre = add(mul(f_r, g), f_r);
        Tensor<T> fte = add(mul(f_t, g), f_t);
        Tensor<T> fro = add(mul(ca.forward(fre), fre), fre);
        Tensor<T> fto = add(mul(ca.forward(fte), fte), fte);
        // RGB dominant: transfer thermal under RGB's spatial attention.
        Tensor<T> out_r = add(fro, add(mul(fto, sa.forward(fro)), fto));
        // Thermal dominant: the mirror image.
        Tensor<T> out_t = add(fto, add(mul(fro, sa.forward(fto)), fro));
        std::vector<char> take_rgb(sel.size());
        for (std::size_t i = 0; i < sel.size(); ++i)
            take_rgb[i] = sel[i].choice == Modality::RgbDominant ? 1 : 0;
        return where_batch(take_rgb, out_r, out_t);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        ca.collect(prefix + ".ca", out);
        sa.collect(prefix + ".sa", out);
    }
};

// Dense detail enhancement (levels 1-3): dilated kernels 1/3/5/7 with dense
// connections, a scan block per branch, concat + 1x1 projection back to the
// input width.
template <class T>
struct DdeModule {
    ConvUnit<T> b1, b2, b3, b4;
    VssBlock<T> v1, v2, v3, v4;
    ConvUnit<T> proj;

    DdeModule() = default;
    DdeModule(int c, int state_dim, Rng& rng, UnitOptions opt = {})
        : b1(c, c, 1, rng, 1, 1, -1, opt),
          b2(c, c, 3, rng, 1, 3, -1, opt),
          b3(c, c, 5, rng, 1, 5, -1, opt),
          b4(c, c, 7, rng, 1, 7, -1, opt),
          v1(c, state_dim, rng),
          v2(c, state_dim, rng),
          v3(c, state_dim, rng),
          v4(c, state_dim, rng),
          proj(4 * c, c, 1, rng, 1, 1, -1, opt) {}

    Tensor<T> forward(const Tensor<T>& f) const {
        Tensor<T> d1 = b1.forward(f);
        Tensor<T> d2 = b2.forward(add(d1, f));
        Tensor<T> d3 = b3.forward(add(add(d1, d2), f));
        Tensor<T> d4 = b4.forward(add(add(add(d1, d2), d3), f));
        return proj.forward(
            concat<T>({v1.forward(d1), v2.forward(d2), v3.forward(d3), v4.forward(d4)}, 1));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        b1.collect(prefix + ".b1", out);
        b2.collect(prefix + ".b2", out);
        b3.collect(prefix + ".b3", out);
        b4.collect(prefix + ".b4", out);
        v1.collect(prefix + ".vss1", out);
        v2.collect(prefix + ".vss2", out);
        v3.collect(prefix + ".vss3", out);
        v4.collect(prefix + ".vss4", out);
        proj.collect(prefix + ".proj", out);
    }
};

// One MIS branch: three 3x3 convs whose dilation order distinguishes the
// branch; the first sub-output feeds the other two; concat + 3x3 fusion.
template <class T>
struct MisBranch {
    ConvUnit<T> s1, s2, s3, fuse;

    MisBranch() = default;
    MisBranch(int c, const std::array<int, 3>& dil, Rng& rng, UnitOptions opt = {})
        : s1(c, c, 3, rng, 1, dil[0], -1, opt),
          s2(c, c, 3, rng, 1, dil[1], -1, opt),
          s3(c, c, 3, rng, 1, dil[2], -1, opt),
          fuse(3 * c, c, 3, rng, 1, 1, -1, opt) {}

    Tensor<T> forward(const Tensor<T>& f) const {
        Tensor<T> x1 = s1.forward(f);
        Tensor<T> x2 = s2.forward(add(x1, f));
        Tensor<T> x3 = s3.forward(add(x1, f));
        return fuse.forward(concat<T>({x1, x2, x3}, 1));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        s1.collect(prefix + ".s1", out);
        s2.collect(prefix + ".s2", out);
        s3.collect(prefix + ".s3", out);
        fuse.collect(prefix + ".fuse", out);
    }
};

// Multi-level interactive supplement (levels 4-5): three branches with
// rotated dilation orders, fused and refined by channel attention.
template <class T>
struct MisModule {
    MisBranch<T> bx, by, bz;
    ConvUnit<T> fuse;
    ChannelAttention<T> ca;

    MisModule() = default;
    MisModule(int c, Rng& rng, UnitOptions opt = {})
        : bx(c, {1, 2, 3}, rng, opt),
          by(c, {2, 1, 3}, rng, opt),
          bz(c, {3, 1, 2}, rng, opt),
          fuse(3 * c, c, 3, rng, 1, 1, -1, opt),
          ca(c, rng) {}

    Tensor<T> forward(const Tensor<T>& f) const {
        Tensor<T> xyz = fuse.forward(concat<T>({bx.forward(f), by.forward(f), bz.forward(f)}, 1));
        return add(mul(ca.forward(xyz), xyz), xyz);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        bx.collect(prefix + ".bx", out);
        by.collect(prefix + ".by", out);
        bz.collect(prefix + ".bz", out);
        fuse.collect(prefix + ".fuse", out);
        ca.collect(prefix + ".ca", out);
    }
};

template <class T>
struct SaliencyOutput {
    std::array<Tensor<T>, 5> level_maps;  // sigmoid maps at strides 4..64
    Tensor<T> final;                      // level-1 map upsampled to input size
};

// Top-down additive decoder: u5 = in5; u_i = conv3(in_i + proj(up2(u_{i+1})));
// each u_i feeds a 1x1 head + sigmoid.
template <class T>
struct Decoder {
    std::array<ConvUnit<T>, 4> up;    // 1x1 projection after x2 upsample, level i+1 -> i
    std::array<ConvUnit<T>, 4> fuse;  // 3x3 merge at levels 1..4
    std::array<Conv2dLayer<T>, 5> head;

    Decoder() = default;
    Decoder(const std::array<int, 5>& channels, Rng& rng) {
        for (int i = 0; i < 4; ++i) {
            up[static_cast<std::size_t>(i)] = ConvUnit<T>(
                channels[static_cast<std::size_t>(i + 1)], channels[static_cast<std::size_t>(i)],
                1, rng);
            fuse[static_cast<std::size_t>(i)] = ConvUnit<T>(
                channels[static_cast<std::size_t>(i)], channels[static_cast<std::size_t>(i)], 3,
                rng);
        }
        for (int i = 0; i < 5; ++i)
            head[static_cast<std::size_t>(i)] =
                Conv2dLayer<T>(channels[static_cast<std::size_t>(i)], 1, 1, rng);
    }

    SaliencyOutput<T> forward(const std::array<Tensor<T>, 5>& feats, int input_size) const {
        for (const Tensor<T>& f : feats)
            if (!f.defined()) throw ShapeError("decode: missing level feature");
        SaliencyOutput<T> out;
        Tensor<T> u = feats[4];
        out.level_maps[4] = sigmoid(head[4].forward(u));
        for (int i = 4; i >= 1; --i) {
            const Tensor<T>& skip = feats[static_cast<std::size_t>(i - 1)];
            Tensor<T> lifted = up[static_cast<std::size_t>(i - 1)].forward(
                upsample_bilinear(u, skip.dim(2), skip.dim(3)));
            u = fuse[static_cast<std::size_t>(i - 1)].forward(add(skip, lifted));
            out.level_maps[static_cast<std::size_t>(i - 1)] =
                sigmoid(head[static_cast<std::size_t>(i - 1)].forward(u));
        }
        out.final = upsample_bilinear(out.level_maps[0], input_size, input_size);
        return out;
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        for (int i = 0; i < 4; ++i) {
            up[static_cast<std::size_t>(i)].collect(prefix + ".up" + std::to_string(i + 1), out);
            fuse[static_cast<std::size_t>(i)].collect(prefix + ".fuse" + std::to_string(i + 1),
                                                      out);
        }
        for (int i = 0; i < 5; ++i)
            head[static_cast<std::size_t>(i)].collect(prefix + ".head" + std::to_string(i + 1),
                                                      out);
    }
};

}  // namespace rsonet

#endif
