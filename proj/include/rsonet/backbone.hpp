#ifndef RSONET_BACKBONE_HPP
#define RSONET_BACKBONE_HPP

// Five-level hierarchical encoder. Each stage is a strided patch-merging
// conv (k = stride = 4 for stage 1, then 2) followed by two residual
// (3x3 conv -> norm -> ReLU) blocks, giving features at strides
// 4/8/16/32/64. One weight set serves the RGB, thermal, and summed inputs.

#include <array>
#include <string>

#include "rsonet/nn.hpp"

namespace rsonet {

struct BackboneConfig {
    int in_channels = 3;
    std::array<int, 5> stage_channels = {16, 32, 64, 128, 256};
    int input_size = 64;

    void validate() const {
        if (in_channels != 3) throw ConfigError("backbone expects 3 input channels");
        if (input_size < 64 || input_size % 64 != 0)
            throw ConfigError("input_size must be a positive multiple of 64, got " +
                              std::to_string(input_size));
        for (int c : stage_channels)
            if (c < 1) throw ConfigError("stage channels must be positive");
    }
};

template <class T>
struct FeaturePyramid {
    static constexpr std::array<int, 5> strides = {4, 8, 16, 32, 64};
    std::array<Tensor<T>, 5> levels;  // levels[i] has side input_size/strides[i]
};

template <class T>
struct Backbone {
    BackboneConfig cfg;
    struct Stage {
        ConvUnit<T> merge, res1, res2;
    };
    std::array<Stage, 5> stages;

    Backbone() = default;
    Backbone(const BackboneConfig& c, Rng& rng) : cfg(c) {
        cfg.validate();
        int cin = cfg.in_channels;
        for (int i = 0; i < 5; ++i) {
            const int k = i == 0 ? 4 : 2;
            const int cout = cfg.stage_channels[static_cast<std::size_t>(i)];
            stages[static_cast<std::size_t>(i)].merge = ConvUnit<T>(cin, cout, k, rng, k, 1, 0);
            stages[static_cast<std::size_t>(i)].res1 = ConvUnit<T>(cout, cout, 3, rng);
            stages[static_cast<std::size_t>(i)].res2 = ConvUnit<T>(cout, cout, 3, rng);
            cin = cout;
        }
    }

    FeaturePyramid<T> encode(const Tensor<T>& image) const {
        if (image.ndim() != 4 || image.dim(1) != cfg.in_channels)
            throw ShapeError("encode expects [B," + std::to_string(cfg.in_channels) + ",S,S], got " +
                             shape_str(image.shape()));
        if (image.dim(2) != cfg.input_size || image.dim(3) != cfg.input_size)
            throw ShapeError("encode expects spatial size " + std::to_string(cfg.input_size) + "x" +
                             std::to_string(cfg.input_size) + ", got " +
                             std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)));
        FeaturePyramid<T> pyr;
        Tensor<T> x = image;
        for (int i = 0; i < 5; ++i) {
            const Stage& st = stages[static_cast<std::size_t>(i)];
            x = st.merge.forward(x);
            x = add(x, st.res1.forward(x));
            x = add(x, st.res2.forward(x));
            pyr.levels[static_cast<std::size_t>(i)] = x;
        }
        return pyr;
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        for (int i = 0; i < 5; ++i) {
            const std::string p = prefix + ".stage" + std::to_string(i + 1);
            stages[static_cast<std::size_t>(i)].merge.collect(p + ".merge", out);
            stages[static_cast<std::size_t>(i)].res1.collect(p + ".res1", out);
            stages[static_cast<std::size_t>(i)].res2.collect(p + ".res2", out);
        }
    }
};

// Third-branch input: elementwise sum of the two modalities, clamped back
// into the valid pixel range.
template <class T>
Tensor<T> fuse_rt_input(const Tensor<T>& rgb, const Tensor<T>& thermal3) {
    if (rgb.shape() != thermal3.shape())
        throw ShapeError("fuse_rt_input shapes differ: " + shape_str(rgb.shape()) + " vs " +
                         shape_str(thermal3.shape()));
    return clamp(add(rgb, thermal3), T(0), T(1));
}

// [B,1,H,W] -> [B,3,H,W]: thermal replicated so one backbone serves all inputs.
template <class T>
Tensor<T> replicate3(const Tensor<T>& thermal) {
    if (thermal.ndim() != 4 || thermal.dim(1) != 1)
        throw ShapeError("replicate3 expects [B,1,H,W], got " + shape_str(thermal.shape()));
    return concat<T>({thermal, thermal, thermal}, 1);
}

}  // namespace rsonet

#endif
