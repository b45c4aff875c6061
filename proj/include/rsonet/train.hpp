#ifndef RSONET_TRAIN_HPP
#define RSONET_TRAIN_HPP

// Joint two-stage optimization: RMSprop-with-momentum updates, deep
// supervision over the five decoder maps plus the three guidance maps,
// periodic metric evaluation, and checkpointing with full optimizer state
// so interrupted runs splice back bit-exactly.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "rsonet/checkpoint.hpp"
#include "rsonet/config.hpp"
#include "rsonet/data.hpp"
#include "rsonet/losses.hpp"
#include "rsonet/metrics.hpp"
#include "rsonet/model.hpp"

namespace rsonet {

// v <- rho*v + (1-rho)*g^2 ; m <- mu*m + g/sqrt(v+eps) ; p <- p - lr*m
// State lives in plain tensors so checkpoints can carry it verbatim.
template <class T>
struct Rmsprop {
    double lr = 1e-4;
    double momentum = 0.9;
    static constexpr double kRho = 0.9;
    static constexpr double kEps = 1e-8;
    std::map<std::string, Tensor<T>> v, m;

    Rmsprop() = default;
    Rmsprop(double lr_, double momentum_) : lr(lr_), momentum(momentum_) {}

    void ensure_state(const ParamMap<T>& params) {
        for (const auto& [name, p] : params) {
            if (!v.count(name)) v.emplace(name, Tensor<T>::zeros(p.shape()));
            if (!m.count(name)) m.emplace(name, Tensor<T>::zeros(p.shape()));
        }
    }

    // Applies one update from the accumulated gradients, then clears them.
    void step(ParamMap<T>& params) {
        ensure_state(params);
        for (auto& [name, p] : params) {
            const std::vector<T> g = p.grad_vec();
            std::vector<T>& vd = v.at(name).data();
            std::vector<T>& md = m.at(name).data();
            std::vector<T>& pd = p.data();
            for (std::size_t i = 0; i < pd.size(); ++i) {
                vd[i] = static_cast<T>(kRho) * vd[i] + static_cast<T>(1 - kRho) * g[i] * g[i];
                md[i] = static_cast<T>(momentum) * md[i] +
                        g[i] / std::sqrt(vd[i] + static_cast<T>(kEps));
                pd[i] -= static_cast<T>(lr) * md[i];
            }
            p.clear_grad();
        }
    }
};

struct StepStats {
    LossBreakdown loss;
    double sel_rgb_frac = -1;  // -1 when the run has no modality selection
};

namespace train_detail {

// Best-effort hunt for the tensor that went non-finite, in forward order.
template <class T>
std::string first_non_finite(const ModelOutput<T>& out, const ParamMap<T>& params) {
    for (int i = 0; i < 5; ++i)
        if (!all_finite(out.saliency.level_maps[static_cast<std::size_t>(i)].data()))
            return "decoder map " + std::to_string(i + 1);
    if (out.guidance) {
        if (!all_finite(out.guidance->g_r.data())) return "guidance map g_r";
        if (!all_finite(out.guidance->g_t.data())) return "guidance map g_t";
        if (!all_finite(out.guidance->g_rt.data())) return "guidance map g_rt";
    }
    for (const auto& [name, p] : params)
        if (!all_finite(p.data())) return "parameter " + name;
    return "loss scalar";
}

}  // namespace train_detail

// One optimizer step over a batch. Guidance maps are supervised against the
// ground truth resized to their resolution, scaled by guidance_weight.
template <class T>
StepStats train_step(RsoNet<T>& model, ParamMap<T>& params, Rmsprop<T>& opt,
                     const Batch<T>& batch, double guidance_weight) {
    ModelOutput<T> out = model.forward(batch.rgb, batch.thermal);

    std::vector<Tensor<T>> maps, gts;
    for (int i = 0; i < 5; ++i) {
        const Tensor<T>& mp = out.saliency.level_maps[static_cast<std::size_t>(i)];
        maps.push_back(mp);
        gts.push_back(resize_gt(batch.gt, mp.dim(2), mp.dim(3)));
    }
    TotalLoss<T> dec = total_loss(maps, gts);
    Tensor<T> value = dec.value;
    StepStats stats;
    stats.loss = dec.stats;
    if (out.guidance && guidance_weight > 0) {
        std::vector<Tensor<T>> gmaps{out.guidance->g_r, out.guidance->g_t, out.guidance->g_rt};
        std::vector<Tensor<T>> ggts(3, resize_gt(batch.gt, gmaps[0].dim(2), gmaps[0].dim(3)));
        TotalLoss<T> gl = total_loss(gmaps, ggts);
        value = add(value, affine(gl.value, static_cast<T>(guidance_weight), T(0)));
        stats.loss.bce += guidance_weight * gl.stats.bce;
        stats.loss.iou += guidance_weight * gl.stats.iou;
        stats.loss.fm += guidance_weight * gl.stats.fm;
        stats.loss.total += guidance_weight * gl.stats.total;
    }
    if (!all_finite(value.data()))
        throw NumericError("non-finite loss; first non-finite tensor: " +
                           train_detail::first_non_finite(out, params));

    backward(value);
    opt.step(params);

    if (!out.selections.empty()) {
        double rgb = 0;
        for (const ModalitySelection& s : out.selections)
            if (s.choice == Modality::RgbDominant) rgb += 1;
        stats.sel_rgb_frac = rgb / static_cast<double>(out.selections.size());
    }
    return stats;
}

// Forward-only metric pass over a sample list (final map vs. ground truth).
template <class T>
MetricReport evaluate_model(const RsoNet<T>& model, const std::vector<SamplePair>& samples,
                            int batch_size) {
    NoGrad guard;
    MetricReport rep;
    std::vector<int> order(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
        std::vector<int> pick(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                  order.size(),
                                                  start + static_cast<std::size_t>(batch_size))));
        Batch<T> b = to_tensors<T>(samples, pick);
        ModelOutput<T> out = model.forward(b.rgb, b.thermal);
        const Tensor<T>& fin = out.saliency.final;
        const int hw = fin.dim(2) * fin.dim(3);
        for (std::size_t i = 0; i < pick.size(); ++i) {
            Grid s{fin.dim(2), fin.dim(3), std::vector<double>(static_cast<std::size_t>(hw))};
            Grid g = s;
            for (int j = 0; j < hw; ++j) {
                s.v[static_cast<std::size_t>(j)] = static_cast<double>(
                    fin.data()[i * static_cast<std::size_t>(hw) + static_cast<std::size_t>(j)]);
                g.v[static_cast<std::size_t>(j)] = static_cast<double>(
                    b.gt.data()[i * static_cast<std::size_t>(hw) + static_cast<std::size_t>(j)]);
            }
            rep.mae += mae(s, g);
            rep.f_beta += f_beta(s, g);
            rep.s_measure += s_measure(s, g);
            rep.e_measure += e_measure(s, g);
            rep.count += 1;
        }
    }
    if (rep.count > 0) {
        rep.mae /= rep.count;
        rep.f_beta /= rep.count;
        rep.s_measure /= rep.count;
        rep.e_measure /= rep.count;
    }
    return rep;
}

// --- checkpoint plumbing ----------------------------------------------------

template <class T>
CheckpointMap snapshot_run(const ParamMap<T>& params, const Rmsprop<T>& opt, int step,
                           const ModelConfig& mc, double best_mae) {
    CheckpointMap ck;
    for (const auto& [name, p] : params) ck.emplace("param/" + name, to_entry(p));
    for (const auto& [name, t] : opt.v) ck.emplace("opt/v/" + name, to_entry(t));
    for (const auto& [name, t] : opt.m) ck.emplace("opt/m/" + name, to_entry(t));
    ck.emplace("meta/step", scalar_entry(step));
    ck.emplace("meta/ablation", scalar_entry(static_cast<double>(mc.ablation)));
    ck.emplace("meta/input_size", scalar_entry(mc.backbone.input_size));
    ck.emplace("meta/state_dim", scalar_entry(mc.state_dim));
    ck.emplace("meta/best_mae", scalar_entry(best_mae));
    CheckpointEntry chans;
    chans.shape = {5};
    for (int c : mc.backbone.stage_channels) chans.data.push_back(static_cast<float>(c));
    ck.emplace("meta/stage_channels", std::move(chans));
    return ck;
}

inline double meta_value(const CheckpointMap& ck, const std::string& key) {
    const auto it = ck.find("meta/" + key);
    if (it == ck.end() || it->second.data.size() != 1)
        throw CheckpointError(CheckpointError::Kind::Inventory, "missing meta/" + key);
    return static_cast<double>(it->second.data[0]);
}

// Rebuilds the architecture description stored alongside the weights.
inline ModelConfig model_config_from_meta(const CheckpointMap& ck) {
    ModelConfig mc;
    mc.backbone.input_size = static_cast<int>(meta_value(ck, "input_size"));
    mc.state_dim = static_cast<int>(meta_value(ck, "state_dim"));
    mc.ablation = static_cast<AblationTag>(static_cast<int>(meta_value(ck, "ablation")));
    const auto it = ck.find("meta/stage_channels");
    if (it == ck.end() || it->second.data.size() != 5)
        throw CheckpointError(CheckpointError::Kind::Inventory, "missing meta/stage_channels");
    for (int i = 0; i < 5; ++i)
        mc.backbone.stage_channels[static_cast<std::size_t>(i)] =
            static_cast<int>(it->second.data[static_cast<std::size_t>(i)]);
    mc.validate();
    return mc;
}

template <class T>
void restore_run(const CheckpointMap& ck, ParamMap<T>& params, Rmsprop<T>& opt) {
    opt.ensure_state(params);
    load_into(ck, "param/", params);
    load_into(ck, "opt/v/", opt.v);
    load_into(ck, "opt/m/", opt.m);
}

// --- the loop ----------------------------------------------------------------

struct FitResult {
    int steps_run = 0;
    double best_mae = std::numeric_limits<double>::infinity();
    int best_step = -1;
    std::string best_path, last_path;
};

// Trains for cfg.train.steps optimizer steps. The batch schedule is a pure
// function of (seed, global step), so --resume replays the exact remainder
// of an uninterrupted run. eval_set supplies the held-out metric split; the
// metric history lands in <out_dir>/metrics.csv one row per evaluation.
template <class T>
FitResult fit(const RunConfig& cfg, const std::vector<SamplePair>& train_set,
              const std::vector<SamplePair>& eval_set, const std::string& out_dir,
              const std::string& resume_path = "", std::ostream* log = &std::cout) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (train_set.empty()) throw DataError("training set is empty");
    fs::create_directories(out_dir);

    Rng init_rng = seeded_rng({cfg.train.seed, 0x52534f4eULL});
    RsoNet<T> model(cfg.model, init_rng);
    ParamMap<T> params = model.parameters();
    Rmsprop<T> opt(cfg.train.lr, cfg.train.momentum);
    opt.ensure_state(params);

    FitResult res;
    int start_step = 0;
    if (!resume_path.empty()) {
        const CheckpointMap ck = read_checkpoint(resume_path);
        const ModelConfig stored = model_config_from_meta(ck);
        if (stored.ablation != cfg.model.ablation)
            throw ConfigError("checkpoint ablation '" + ablation_name(stored.ablation) +
                              "' does not match config '" + ablation_name(cfg.model.ablation) +
                              "'");
        if (stored.backbone.input_size != cfg.model.backbone.input_size ||
            stored.backbone.stage_channels != cfg.model.backbone.stage_channels ||
            stored.state_dim != cfg.model.state_dim)
            throw ConfigError("checkpoint architecture does not match config");
        restore_run(ck, params, opt);
        start_step = static_cast<int>(meta_value(ck, "step"));
        res.best_mae = meta_value(ck, "best_mae");
    }

    const bool fresh = resume_path.empty();
    std::ofstream train_log(fs::path(out_dir) / "train_log.csv",
                            fresh ? std::ios::trunc : std::ios::app);
    if (fresh) train_log << "step,total,bce,iou,fm,sel_rgb_frac\n";
    std::ofstream metric_log(fs::path(out_dir) / "metrics.csv",
                             fresh ? std::ios::trunc : std::ios::app);
    if (fresh) metric_log << "step,mae,f_beta,s_measure,e_measure\n";

    const int n = static_cast<int>(train_set.size());
    const int bpe = (n + cfg.train.batch_size - 1) / cfg.train.batch_size;
    std::int64_t cached_epoch = -1;
    std::vector<std::vector<int>> epoch;

    const std::string best_path = (fs::path(out_dir) / "best.ckpt").string();
    const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();

    for (int step = start_step; step < cfg.train.steps; ++step) {
        const std::int64_t ep = step / bpe;
        if (ep != cached_epoch) {
            epoch = epoch_batches(n, cfg.train.batch_size, cfg.train.seed, ep);
            cached_epoch = ep;
        }
        Batch<T> batch = to_tensors<T>(train_set, epoch[static_cast<std::size_t>(step % bpe)]);
        if (cfg.train.hflip) {
            // per-step stream keeps augmentation a pure function of the step
            Rng frng = seeded_rng({cfg.train.seed, 0xF11BULL, static_cast<std::uint64_t>(step)});
            std::uniform_int_distribution<int> coin(0, 1);
            const int b = batch.rgb.dim(0), s = batch.rgb.dim(2);
            for (int i = 0; i < b; ++i) {
                if (!coin(frng)) continue;
                auto flip = [&](Tensor<T>& t, int ch) {
                    for (int c = 0; c < ch; ++c)
                        for (int y = 0; y < s; ++y)
                            for (int x = 0; x < s / 2; ++x) {
                                const std::size_t base =
                                    ((static_cast<std::size_t>(i) * static_cast<std::size_t>(ch) +
                                      static_cast<std::size_t>(c)) *
                                         static_cast<std::size_t>(s) +
                                     static_cast<std::size_t>(y)) *
                                    static_cast<std::size_t>(s);
                                std::swap(t.data()[base + static_cast<std::size_t>(x)],
                                          t.data()[base + static_cast<std::size_t>(s - 1 - x)]);
                            }
                };
                flip(batch.rgb, 3);
                flip(batch.thermal, 1);
                flip(batch.gt, 1);
            }
        }

        const StepStats st = train_step(model, params, opt, batch, cfg.train.guidance_weight);
        const int shown = step + 1;
        char line[256];
        std::snprintf(line, sizeof(line),
                      "step=%d total=%.6f bce=%.6f iou=%.6f fm=%.6f sel_rgb_frac=%.4f", shown,
                      st.loss.total, st.loss.bce, st.loss.iou, st.loss.fm, st.sel_rgb_frac);
        if (log) *log << line << "\n";
        char row[256];
        std::snprintf(row, sizeof(row), "%d,%.9g,%.9g,%.9g,%.9g,%.4f\n", shown, st.loss.total,
                      st.loss.bce, st.loss.iou, st.loss.fm, st.sel_rgb_frac);
        train_log << row;

        if (cfg.train.eval_every > 0 && shown % cfg.train.eval_every == 0 && !eval_set.empty()) {
            const MetricReport rep =
                evaluate_model(model, eval_set, cfg.train.batch_size);
            char mrow[256];
            std::snprintf(mrow, sizeof(mrow), "%d,%.9g,%.9g,%.9g,%.9g\n", shown, rep.mae,
                          rep.f_beta, rep.s_measure, rep.e_measure);
            metric_log << mrow;
            metric_log.flush();
            if (rep.mae < res.best_mae) {
                res.best_mae = rep.mae;
                res.best_step = shown;
                write_checkpoint(best_path,
                                 snapshot_run(params, opt, shown, cfg.model, res.best_mae));
            }
        }
        res.steps_run += 1;
    }

    const int final_step = std::max(start_step, cfg.train.steps);
    write_checkpoint(last_path, snapshot_run(params, opt, final_step, cfg.model, res.best_mae));
    if (!fs::exists(best_path))
        write_checkpoint(best_path, snapshot_run(params, opt, final_step, cfg.model, res.best_mae));
    res.best_path = best_path;
    res.last_path = last_path;
    train_log.flush();
    return res;
}

}  // namespace rsonet

#endif
