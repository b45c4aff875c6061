#ifndef RSONET_NN_HPP
#define RSONET_NN_HPP

// Parameterized building blocks: convolution layers with optional
// normalization/activation, channel & spatial attention, and the
// four-direction gated state-space block. Modules register their parameters
// into a flat name -> tensor map (checkpointing, optimizer, tests).

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rsonet/ops.hpp"
#include "rsonet/scan.hpp"

namespace rsonet {

template <class T>
using ParamMap = std::map<std::string, Tensor<T>>;

template <class T>
constexpr T kNormEps = static_cast<T>(1e-5);

template <class T>
Tensor<T> init_uniform(const std::vector<int>& shape, std::int64_t fan_in, Rng& rng) {
    const T s = static_cast<T>(std::sqrt(1.0 / static_cast<double>(fan_in)));
    return Tensor<T>::uniform(shape, rng, -s, s, /*requires_grad=*/true);
}

// Plain conv layer; padding -1 selects the shape-preserving value
// d*(k-1)/2 (exact for the odd kernels used everywhere but the backbone).
template <class T>
struct Conv2dLayer {
    int stride = 1, dilation = 1, padding = 0;
    Tensor<T> weight, bias;

    Conv2dLayer() = default;
    Conv2dLayer(int cin, int cout, int k, Rng& rng, int stride_ = 1, int dilation_ = 1,
                int padding_ = -1, bool with_bias = true)
        : stride(stride_), dilation(dilation_) {
        padding = padding_ >= 0 ? padding_ : dilation_ * (k - 1) / 2;
        weight = init_uniform<T>({cout, cin, k, k}, static_cast<std::int64_t>(cin) * k * k, rng);
        if (with_bias) bias = Tensor<T>::zeros({cout}, true);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return conv2d(x, weight, bias, stride, dilation, padding);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        out.emplace(prefix + ".weight", weight);
        if (bias.defined()) out.emplace(prefix + ".bias", bias);
    }
};

template <class T>
struct GroupNormLayer {
    Tensor<T> gamma, beta;

    GroupNormLayer() = default;
    explicit GroupNormLayer(int channels) {
        gamma = Tensor<T>::full({channels}, T(1), true);
        beta = Tensor<T>::zeros({channels}, true);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return group_norm(x, gamma, beta, kNormEps<T>); }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        out.emplace(prefix + ".gamma", gamma);
        out.emplace(prefix + ".beta", beta);
    }
};

struct UnitOptions {
    bool norm = true;
    bool act = true;
};

// conv -> group norm -> ReLU, the default treatment of every feature conv.
// Norm/activation can be dropped (prediction heads, attention internals,
// unit-test isolation).
template <class T>
struct ConvUnit {
    Conv2dLayer<T> conv;
    std::optional<GroupNormLayer<T>> norm;
    bool act = true;

    ConvUnit() = default;
    ConvUnit(int cin, int cout, int k, Rng& rng, int stride = 1, int dilation = 1,
             int padding = -1, UnitOptions opt = {})
        : conv(cin, cout, k, rng, stride, dilation, padding), act(opt.act) {
        if (opt.norm) norm.emplace(cout);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> y = conv.forward(x);
        if (norm) y = norm->forward(y);
        if (act) y = relu(y);
        return y;
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        conv.collect(prefix + ".conv", out);
        if (norm) norm->collect(prefix + ".norm", out);
    }
};

// Per-channel gate: global average pool -> 1x1 conv (C->C) -> sigmoid.
template <class T>
struct ChannelAttention {
    Conv2dLayer<T> conv;

    ChannelAttention() = default;
    ChannelAttention(int channels, Rng& rng) : conv(channels, channels, 1, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        return sigmoid(conv.forward(reduce(x, Reduce::AvgSpatial)));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        conv.collect(prefix + ".conv", out);
    }
};

// Per-pixel gate: concat(channel-avg, channel-max) -> 7x7 conv (2->1) -> sigmoid.
template <class T>
struct SpatialAttention {
    Conv2dLayer<T> conv;

    SpatialAttention() = default;
    explicit SpatialAttention(Rng& rng) : conv(2, 1, 7, rng) {}

    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> pooled =
            concat<T>({reduce(x, Reduce::AvgOverChannels), reduce(x, Reduce::MaxOverChannels)}, 1);
        return sigmoid(conv.forward(pooled));
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        conv.collect(prefix + ".conv", out);
    }
};

// The four spatial traversal orders as permutations of the raster sequence:
// row-major, reverse row-major, column-major, reverse column-major.
// Entry j of a permutation is the raster index scanned at step j.
inline std::vector<std::vector<int>> scan_orders(int h, int w) {
    const int l = h * w;
    std::vector<std::vector<int>> perms(4, std::vector<int>(static_cast<std::size_t>(l)));
    for (int j = 0; j < l; ++j) {
        perms[0][static_cast<std::size_t>(j)] = j;
        perms[1][static_cast<std::size_t>(j)] = l - 1 - j;
        perms[2][static_cast<std::size_t>(j)] = (j % h) * w + j / h;
    }
    for (int j = 0; j < l; ++j)
        perms[3][static_cast<std::size_t>(j)] = perms[2][static_cast<std::size_t>(l - 1 - j)];
    return perms;
}

inline std::vector<int> invert_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t j = 0; j < perm.size(); ++j)
        inv[static_cast<std::size_t>(perm[j])] = static_cast<int>(j);
    return inv;
}

// Gated four-direction selective-scan block. Projections are shared across
// directions (the traversal order is what differs); delta goes through
// softplus so the recurrence decay exp(delta*A) stays inside (0,1).
// Output: x + sigmoid(linear(x)) (*) mean(directional scans).
template <class T>
struct VssBlock {
    int channels = 0, state_dim = 0;
    Tensor<T> w_delta, b_delta, w_b, w_c, w_gate, b_gate, a_mat, d_vec;

    VssBlock() = default;
    VssBlock(int c, int n, Rng& rng) : channels(c), state_dim(n) {
        if (n < 1) throw ValueError("vss state_dim must be >= 1");
        w_delta = init_uniform<T>({c, c}, c, rng);
        b_delta = Tensor<T>::full({c}, T(0.5), true);
        w_b = init_uniform<T>({c, n}, c, rng);
        w_c = init_uniform<T>({c, n}, c, rng);
        w_gate = init_uniform<T>({c, c}, c, rng);
        b_gate = Tensor<T>::zeros({c}, true);
        // Decay spectrum: row-constant, softplus-spaced negatives so that
        // exp(delta*A) spans a range of timescales from the start.
        a_mat = Tensor<T>::zeros({c, n}, true);
        for (int ci = 0; ci < c; ++ci)
            for (int ni = 0; ni < n; ++ni)
                a_mat.data()[static_cast<std::size_t>(ci) * n + ni] =
                    static_cast<T>(-std::log1p(std::exp(static_cast<double>(ni) + 1.0)));
        d_vec = Tensor<T>::full({c}, T(1), true);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.ndim() != 4)
            throw ShapeError("vss_block input must be [B,C,H,W], got " + shape_str(x.shape()));
        if (x.dim(1) != channels)
            throw ShapeError("vss_block channels " + std::to_string(x.dim(1)) + " vs configured " +
                             std::to_string(channels));
        const int h = x.dim(2), w = x.dim(3);
        Tensor<T> seq = bchw_to_blc(x);
        const std::vector<std::vector<int>> perms = scan_orders(h, w);
        Tensor<T> merged;
        for (int d = 0; d < 4; ++d) {
            const bool ident = d == 0;
            Tensor<T> xd = ident ? seq : reorder_rows(seq, perms[static_cast<std::size_t>(d)]);
            Tensor<T> delta = softplus(linear(xd, w_delta, b_delta));
            Tensor<T> bt = linear(xd, w_b, Tensor<T>{});
            Tensor<T> ct = linear(xd, w_c, Tensor<T>{});
            Tensor<T> yd = selective_scan(xd, delta, bt, ct, a_mat, d_vec);
            if (!ident) yd = reorder_rows(yd, invert_perm(perms[static_cast<std::size_t>(d)]));
            merged = d == 0 ? yd : add(merged, yd);
        }
        merged = affine(merged, T(0.25), T(0));
        Tensor<T> gate = sigmoid(linear(seq, w_gate, b_gate));
        return blc_to_bchw(add(seq, mul(gate, merged)), h, w);
    }

    void collect(const std::string& prefix, ParamMap<T>& out) const {
        out.emplace(prefix + ".w_delta", w_delta);
        out.emplace(prefix + ".b_delta", b_delta);
        out.emplace(prefix + ".w_b", w_b);
        out.emplace(prefix + ".w_c", w_c);
        out.emplace(prefix + ".w_gate", w_gate);
        out.emplace(prefix + ".b_gate", b_gate);
        out.emplace(prefix + ".a", a_mat);
        out.emplace(prefix + ".d", d_vec);
    }
};

}  // namespace rsonet

#endif
