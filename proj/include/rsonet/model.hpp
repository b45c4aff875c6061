#ifndef RSONET_MODEL_HPP
#define RSONET_MODEL_HPP

// The complete two-stage network plus its ablation variants: guidance-driven
// directional fusion (full), fixed-direction fusion with the guidance stage
// removed (force-r2t / force-t2r), guidance-free elementwise fusion
// (wo-so-*), and decoder wirings that bypass DDE and/or MIS.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rsonet/saliency.hpp"

namespace rsonet {

enum class AblationTag {
    Full,
    WoSoAdd,
    WoSoMul,
    WoSoCat,
    WoSoGate,
    ForceR2T,
    ForceT2R,
    WoDde,
    WoMis,
    WoDdeMis,
};

inline const std::array<std::pair<AblationTag, const char*>, 10>& ablation_table() {
    static const std::array<std::pair<AblationTag, const char*>, 10> table = {{
        {AblationTag::Full, "full"},
        {AblationTag::WoSoAdd, "wo-so-add"},
        {AblationTag::WoSoMul, "wo-so-mul"},
        {AblationTag::WoSoCat, "wo-so-cat"},
        {AblationTag::WoSoGate, "wo-so-gate"},
        {AblationTag::ForceR2T, "force-r2t"},
        {AblationTag::ForceT2R, "force-t2r"},
        {AblationTag::WoDde, "wo-dde"},
        {AblationTag::WoMis, "wo-mis"},
        {AblationTag::WoDdeMis, "wo-dde-mis"},
    }};
    return table;
}

inline std::string ablation_name(AblationTag tag) {
    for (const auto& [t, name] : ablation_table())
        if (t == tag) return name;
    throw ValueError("unknown ablation tag");
}

inline AblationTag parse_ablation(const std::string& name) {
    for (const auto& [t, n] : ablation_table())
        if (name == n) return t;
    std::string valid;
    for (const auto& [t, n] : ablation_table()) valid += std::string(" ") + n;
    throw ConfigError("unknown ablation tag '" + name + "'; valid:" + valid);
}

struct ModelConfig {
    BackboneConfig backbone;
    int state_dim = 8;
    AblationTag ablation = AblationTag::Full;

    void validate() const {
        backbone.validate();
        if (state_dim < 1) throw ConfigError("state_dim must be >= 1");
    }
};

template <class T>
struct ModelOutput {
    SaliencyOutput<T> saliency;
    std::optional<GuidanceTriple<T>> guidance;   // full pipeline only
    std::vector<ModalitySelection> selections;   // empty for wo-so-* variants
};

template <class T>
struct RsoNet {
    ModelConfig cfg;
    Backbone<T> backbone;
    std::optional<GuidanceNet<T>> guidance;
    std::optional<std::array<SoModule<T>, 5>> so;
    std::optional<std::array<ConvUnit<T>, 5>> cat_proj;      // wo-so-cat
    std::optional<std::array<Conv2dLayer<T>, 5>> gate_conv;  // wo-so-gate
    Tensor<T> const_g;                                       // force-*: learned scalar guidance
    std::optional<std::array<DdeModule<T>, 3>> dde;
    std::optional<std::array<MisModule<T>, 2>> mis;
    Decoder<T> decoder;

    RsoNet() = default;
    RsoNet(const ModelConfig& c, Rng& rng) : cfg(c) {
        cfg.validate();
        const auto& ch = cfg.backbone.stage_channels;
        backbone = Backbone<T>(cfg.backbone, rng);
        if (has_guidance()) guidance.emplace(GuidanceNet<T>(ch, rng));
        if (has_so()) {
            so.emplace();
            for (int i = 0; i < 5; ++i)
                (*so)[static_cast<std::size_t>(i)] =
                    SoModule<T>(ch[static_cast<std::size_t>(i)], rng);
        }
        if (cfg.ablation == AblationTag::WoSoCat) {
            cat_proj.emplace();
            for (int i = 0; i < 5; ++i)
                (*cat_proj)[static_cast<std::size_t>(i)] =
                    ConvUnit<T>(2 * ch[static_cast<std::size_t>(i)],
                                ch[static_cast<std::size_t>(i)], 1, rng);
        }
        if (cfg.ablation == AblationTag::WoSoGate) {
            gate_conv.emplace();
            for (int i = 0; i < 5; ++i)
                (*gate_conv)[static_cast<std::size_t>(i)] =
                    Conv2dLayer<T>(2 * ch[static_cast<std::size_t>(i)], 1, 3, rng);
        }
        if (cfg.ablation == AblationTag::ForceR2T || cfg.ablation == AblationTag::ForceT2R)
            const_g = Tensor<T>::full({1}, T(0.5), true);
        if (has_dde()) {
            dde.emplace();
            for (int i = 0; i < 3; ++i)
                (*dde)[static_cast<std::size_t>(i)] =
                    DdeModule<T>(ch[static_cast<std::size_t>(i)], cfg.state_dim, rng);
        }
        if (has_mis()) {
            mis.emplace();
            for (int i = 0; i < 2; ++i)
                (*mis)[static_cast<std::size_t>(i)] =
                    MisModule<T>(ch[static_cast<std::size_t>(i + 3)], rng);
        }
        decoder = Decoder<T>(ch, rng);
    }

    // The wo-dde / wo-mis tags alter only the decoder wiring; the guidance
    // stage and SO fusion stay. The wo-so-* and force-* tags delete the stage.
    bool has_guidance() const {
        return cfg.ablation == AblationTag::Full || cfg.ablation == AblationTag::WoDde ||
               cfg.ablation == AblationTag::WoMis || cfg.ablation == AblationTag::WoDdeMis;
    }
    bool has_so() const {
        return has_guidance() || cfg.ablation == AblationTag::ForceR2T ||
               cfg.ablation == AblationTag::ForceT2R;
    }
    bool has_dde() const {
        return cfg.ablation != AblationTag::WoDde && cfg.ablation != AblationTag::WoDdeMis;
    }
    bool has_mis() const {
        return cfg.ablation != AblationTag::WoMis && cfg.ablation != AblationTag::WoDdeMis;
    }

    // rgb: [B,3,S,S], thermal: [B,1,S,S], both in [0,1].
    ModelOutput<T> forward(const Tensor<T>& rgb, const Tensor<T>& thermal) const {
        if (rgb.ndim() != 4 || thermal.ndim() != 4 || rgb.dim(0) != thermal.dim(0) ||
            rgb.dim(2) != thermal.dim(2) || rgb.dim(3) != thermal.dim(3))
            throw ShapeError("forward: rgb " + shape_str(rgb.shape()) + " and thermal " +
                             shape_str(thermal.shape()) + " disagree");
        const int batch = rgb.dim(0);
        Tensor<T> t3 = replicate3(thermal);
        FeaturePyramid<T> enc_r = backbone.encode(rgb);
        FeaturePyramid<T> enc_t = backbone.encode(t3);

        ModelOutput<T> out;
        Tensor<T> g_used;  // stage-2 guidance operand (detached or learned constant)
        if (has_guidance()) {
            FeaturePyramid<T> enc_rt = backbone.encode(fuse_rt_input(rgb, t3));
            GuidanceTriple<T> triple;
            triple.g_r = guidance->decode(enc_r);
            triple.g_t = guidance->decode(enc_t);
            triple.g_rt = guidance->decode(enc_rt);
            triple.m_r = mean_activation(triple.g_r);
            triple.m_t = mean_activation(triple.g_t);
            triple.m_rt = mean_activation(triple.g_rt);
            for (int i = 0; i < batch; ++i)
                out.selections.push_back(select_modality(triple.m_r[static_cast<std::size_t>(i)],
                                                         triple.m_t[static_cast<std::size_t>(i)],
                                                         triple.m_rt[static_cast<std::size_t>(i)]));
            // The multiplier entering stage 2 carries no gradient back into
            // stage 1; guidance trains through its own supervision only.
            g_used = triple.g_rt.detach();
            out.guidance = std::move(triple);
        } else if (has_so()) {
            g_used = const_g;
            ModalitySelection forced;
            forced.choice = cfg.ablation == AblationTag::ForceR2T ? Modality::RgbDominant
                                                                  : Modality::ThermalDominant;
            out.selections.assign(static_cast<std::size_t>(batch), forced);
        }

        std::array<Tensor<T>, 5> fused;
        for (int i = 0; i < 5; ++i) {
            const Tensor<T>& fr = enc_r.levels[static_cast<std::size_t>(i)];
            const Tensor<T>& ft = enc_t.levels[static_cast<std::size_t>(i)];
            switch (cfg.ablation) {
                case AblationTag::WoSoAdd:
                    fused[static_cast<std::size_t>(i)] = add(fr, ft);
                    break;
                case AblationTag::WoSoMul:
                    fused[static_cast<std::size_t>(i)] = mul(fr, ft);
                    break;
                case AblationTag::WoSoCat:
                    fused[static_cast<std::size_t>(i)] =
                        (*cat_proj)[static_cast<std::size_t>(i)].forward(concat<T>({fr, ft}, 1));
                    break;
                case AblationTag::WoSoGate: {
                    Tensor<T> w = sigmoid(
                        (*gate_conv)[static_cast<std::size_t>(i)].forward(concat<T>({fr, ft}, 1)));
                    fused[static_cast<std::size_t>(i)] =
                        add(mul(w, fr), mul(affine(w, T(-1), T(1)), ft));
                    break;
                }
                case AblationTag::ForceR2T:
                case AblationTag::ForceT2R:
                    // [1]-shaped learned constant broadcasts over the feature.
                    fused[static_cast<std::size_t>(i)] =
                        (*so)[static_cast<std::size_t>(i)].forward(fr, ft, g_used, out.selections);
                    break;
                default: {  // full and the decoder-only ablations
                    Tensor<T> g_lvl = upsample_bilinear(g_used, fr.dim(2), fr.dim(3));
                    fused[static_cast<std::size_t>(i)] =
                        (*so)[static_cast<std::size_t>(i)].forward(fr, ft, g_lvl, out.selections);
                }
            }
        }

        std::array<Tensor<T>, 5> feats;
        for (int i = 0; i < 3; ++i)
            feats[static_cast<std::size_t>(i)] =
                has_dde() ? (*dde)[static_cast<std::size_t>(i)].forward(
                                fused[static_cast<std::size_t>(i)])
                          : fused[static_cast<std::size_t>(i)];
        for (int i = 3; i < 5; ++i)
            feats[static_cast<std::size_t>(i)] =
                has_mis() ? (*mis)[static_cast<std::size_t>(i - 3)].forward(
                                fused[static_cast<std::size_t>(i)])
                          : fused[static_cast<std::size_t>(i)];
        out.saliency = decoder.forward(feats, cfg.backbone.input_size);
        return out;
    }

    ParamMap<T> parameters() const {
        ParamMap<T> pm;
        backbone.collect("backbone", pm);
        if (guidance) guidance->collect("guidance", pm);
        if (so)
            for (int i = 0; i < 5; ++i)
                (*so)[static_cast<std::size_t>(i)].collect("so" + std::to_string(i + 1), pm);
        if (cat_proj)
            for (int i = 0; i < 5; ++i)
                (*cat_proj)[static_cast<std::size_t>(i)].collect(
                    "fusion" + std::to_string(i + 1) + ".proj", pm);
        if (gate_conv)
            for (int i = 0; i < 5; ++i)
                (*gate_conv)[static_cast<std::size_t>(i)].collect(
                    "fusion" + std::to_string(i + 1) + ".gate", pm);
        if (const_g.defined()) pm.emplace("fusion.const_g", const_g);
        if (dde)
            for (int i = 0; i < 3; ++i)
                (*dde)[static_cast<std::size_t>(i)].collect("dde" + std::to_string(i + 1), pm);
        if (mis)
            for (int i = 0; i < 2; ++i)
                (*mis)[static_cast<std::size_t>(i)].collect("mis" + std::to_string(i + 4), pm);
        decoder.collect("dec", pm);
        return pm;
    }
};

}  // namespace rsonet

#endif
