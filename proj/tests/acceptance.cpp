// Whole-artifact gate. Each shipping criterion runs as one check and prints
// one [PASS]/[FAIL] line with the measured numbers; the exit code is the
// number of failures. Long checks (overfitting, the variant sweep) log
// progress as they go. Scratch files stay under the system temp directory.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rsonet/losses.hpp"
#include "rsonet/metrics.hpp"
#include "rsonet/model.hpp"
#include "rsonet/train.hpp"

namespace fs = std::filesystem;
using rsonet::Rng;
using rsonet::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Gate {
    int failures = 0;
    void line(bool ok, const char* name, const std::string& detail) {
        std::printf("[%s] %-26s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

// uniform draw that stays `margin` away from every kink of a piecewise op
std::vector<double> rand_away(std::size_t n, Rng& rng, double lo, double hi,
                              std::initializer_list<double> kinks, double margin) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) {
        bool ok = false;
        while (!ok) {
            x = d(rng);
            ok = true;
            for (double k : kinks) ok = ok && std::fabs(x - k) >= margin;
        }
    }
    return v;
}

Tensor<double> rand_t(const std::vector<int>& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                      bool grad = true) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return oracle::tensor_from<double>(shape, oracle::rand_vec(n, rng, lo, hi), grad);
}

std::vector<rsonet::SamplePair> synth_pairs(int count, int size, std::uint64_t seed,
                                            double inconsistency = 0.5) {
    rsonet::SynthSpec sp;
    sp.count = count;
    sp.size = size;
    sp.seed = seed;
    sp.inconsistency = inconsistency;
    std::vector<rsonet::SamplePair> out;
    for (rsonet::SynthSample& s : rsonet::synth_generate(sp)) out.push_back(std::move(s.pair));
    return out;
}

rsonet::ModelConfig tiny_config(rsonet::AblationTag tag = rsonet::AblationTag::Full) {
    rsonet::ModelConfig mc;
    mc.backbone.stage_channels = {2, 2, 2, 2, 2};
    mc.state_dim = 2;
    mc.ablation = tag;
    return mc;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ------------------------------------------------------------------------
// 1. gradient suite: finite differences on every primitive and every block
// ------------------------------------------------------------------------

using Rebuild = std::function<Tensor<double>()>;
using Check = std::pair<Rebuild, std::vector<Tensor<double>>>;

struct FdSweep {
    double worst_primitive = 0, worst_composite = 0;
    int checks = 0;
    std::string worst_name;

    void run(const char* name, bool composite, const std::function<Check(Rng&)>& make,
             double h, int probes) {
        const double tol = composite ? 1e-3 : 1e-4;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            auto attempt = [&](double hh) {
                // identical rng -> identical weights, inputs, and probe indices
                Rng rng = rsonet::seeded_rng({0xFDULL, seed, std::hash<std::string>{}(name)});
                Check c = make(rng);
                return oracle::fd_check(c.first, c.second, rng, hh, probes).max_err;
            };
            double err = attempt(h);
            // A step that lands across a relu/max kink inflates the estimate in
            // proportion to h; a wrong gradient does not care about h. Retry at
            // smaller steps and keep the best: bugs stay loud, kinks collapse.
            if (err > tol) err = std::min(err, attempt(h / 10));
            if (err > tol) err = std::min(err, attempt(h / 100));
            double& worst = composite ? worst_composite : worst_primitive;
            if (err > worst) {
                worst = err;
                if (err > tol) worst_name = name;
            }
            ++checks;
        }
    }
};

// scalarize through fixed random weights so no gradient path is trivially 1
Rebuild weighted(const std::function<Tensor<double>()>& fwd, Rng& rng) {
    Tensor<double> probe = fwd();
    Tensor<double> w = Tensor<double>::uniform(probe.shape(), rng, -1.0, 1.0);
    return [fwd, w] { return rsonet::sum_all(rsonet::mul(fwd(), w)); };
}

std::vector<Tensor<double>> pick_params(const rsonet::ParamMap<double>& pm, int want,
                                        std::vector<Tensor<double>> extra) {
    std::vector<Tensor<double>> all;
    for (const auto& [name, t] : pm) all.push_back(t);
    const int n = static_cast<int>(all.size());
    for (int i = 0; i < want && i < n; ++i)
        extra.push_back(all[static_cast<std::size_t>(i * (n - 1) / std::max(1, want - 1))]);
    return extra;
}

void check_gradients(Gate& gate) {
    const Clock::time_point t0 = Clock::now();
    FdSweep sweep;
    constexpr double hp = 1e-5;  // primitives: smooth or kink-avoided inputs
    constexpr double hc = 1e-4;  // blocks: deep composites, keep off relu/max kinks

    // ---- primitives ----
    auto binary = [&](const char* name, auto op) {
        sweep.run(name, false, [op](Rng& rng) -> Check {
            Tensor<double> a = rand_t({2, 3, 4, 4}, rng);
            Tensor<double> b = rand_t({1, 3, 1, 1}, rng);  // broadcast path included
            return {weighted([=] { return op(a, b); }, rng), {a, b}};
        }, hp, 6);
    };
    binary("add", [](auto a, auto b) { return rsonet::add(a, b); });
    binary("sub", [](auto a, auto b) { return rsonet::sub(a, b); });
    binary("mul", [](auto a, auto b) { return rsonet::mul(a, b); });
    sweep.run("div", false, [](Rng& rng) -> Check {
        Tensor<double> a = rand_t({2, 3, 4, 4}, rng);
        Tensor<double> b =
            oracle::tensor_from<double>({1, 3, 1, 1}, rand_away(3, rng, -1.5, 1.5, {0.0}, 0.4),
                                        true);
        return {weighted([=] { return rsonet::div(a, b); }, rng), {a, b}};
    }, hp, 6);

    auto unary = [&](const char* name, auto op, std::initializer_list<double> kinks) {
        sweep.run(name, false, [op, kinks](Rng& rng) -> Check {
            Tensor<double> x = oracle::tensor_from<double>(
                {2, 3, 4, 4}, rand_away(96, rng, -1.0, 1.0, kinks, 0.05), true);
            return {weighted([=] { return op(x); }, rng), {x}};
        }, hp, 6);
    };
    unary("relu", [](auto x) { return rsonet::relu(x); }, {0.0});
    unary("sigmoid", [](auto x) { return rsonet::sigmoid(x); }, {});
    unary("softplus", [](auto x) { return rsonet::softplus(x); }, {});
    unary("affine", [](auto x) { return rsonet::affine(x, 1.7, -0.3); }, {});
    unary("clamp", [](auto x) { return rsonet::clamp(x, -0.5, 0.5); }, {-0.5, 0.5});
    sweep.run("log", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({2, 3, 4, 4}, rng, 0.2, 2.0);
        return {weighted([=] { return rsonet::log_t(x); }, rng), {x}};
    }, hp, 6);

    sweep.run("sum_all", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({3, 5}, rng);
        Tensor<double> w = Tensor<double>::uniform({3, 5}, rng, -1.0, 1.0);
        return {[=] { return rsonet::sum_all(rsonet::mul(x, w)); }, {x}};
    }, hp, 6);
    sweep.run("mean_all", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({3, 5}, rng);
        Tensor<double> w = Tensor<double>::uniform({3, 5}, rng, -1.0, 1.0);
        return {[=] { return rsonet::mean_all(rsonet::mul(x, w)); }, {x}};
    }, hp, 6);
    sweep.run("sum_per_sample", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({3, 2, 3, 3}, rng);
        return {weighted([=] { return rsonet::sum_per_sample(x); }, rng), {x}};
    }, hp, 6);
    sweep.run("reshape", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({2, 3, 4}, rng);
        return {weighted([=] { return rsonet::reshape(x, {4, 6}); }, rng), {x}};
    }, hp, 6);
    sweep.run("concat", false, [](Rng& rng) -> Check {
        Tensor<double> a = rand_t({2, 2, 3, 3}, rng);
        Tensor<double> b = rand_t({2, 1, 3, 3}, rng);
        Tensor<double> c = rand_t({2, 3, 3, 3}, rng);
        return {weighted([=] { return rsonet::concat<double>({a, b, c}, 1); }, rng), {a, b, c}};
    }, hp, 6);
    sweep.run("where_batch", false, [](Rng& rng) -> Check {
        Tensor<double> a = rand_t({3, 2, 2, 2}, rng);
        Tensor<double> b = rand_t({3, 2, 2, 2}, rng);
        std::vector<char> take = {1, 0, 1};
        return {weighted([=] { return rsonet::where_batch(take, a, b); }, rng), {a, b}};
    }, hp, 6);
    sweep.run("reorder_rows", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({2, 6, 3}, rng);
        std::vector<int> perm = {0, 1, 2, 3, 4, 5};
        std::shuffle(perm.begin(), perm.end(), rng);
        return {weighted([=] { return rsonet::reorder_rows(x, perm); }, rng), {x}};
    }, hp, 6);

    sweep.run("conv2d", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({2, 3, 6, 6}, rng);
        Tensor<double> w = rand_t({4, 3, 3, 3}, rng, -0.5, 0.5);
        Tensor<double> b = rand_t({4}, rng, -0.2, 0.2);
        return {weighted([=] { return rsonet::conv2d(x, w, b, 1, 1, 1); }, rng), {x, w, b}};
    }, hp, 6);
    sweep.run("conv2d_strided_dilated", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({1, 2, 8, 8}, rng);
        Tensor<double> w = rand_t({3, 2, 3, 3}, rng, -0.5, 0.5);
        return {weighted([=] { return rsonet::conv2d(x, w, Tensor<double>{}, 2, 2, 2); }, rng),
                {x, w}};
    }, hp, 6);
    sweep.run("linear", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({2, 5, 4}, rng);
        Tensor<double> w = rand_t({4, 3}, rng, -0.5, 0.5);
        Tensor<double> b = rand_t({3}, rng, -0.2, 0.2);
        return {weighted([=] { return rsonet::linear(x, w, b); }, rng), {x, w, b}};
    }, hp, 6);
    sweep.run("group_norm", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({2, 3, 4, 4}, rng);
        Tensor<double> g = rand_t({3}, rng, 0.5, 1.5);
        Tensor<double> b = rand_t({3}, rng, -0.3, 0.3);
        return {weighted([=] { return rsonet::group_norm(x, g, b, 1e-5); }, rng), {x, g, b}};
    }, hp, 6);
    sweep.run("upsample", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({1, 2, 4, 4}, rng);
        return {weighted([=] { return rsonet::upsample_bilinear(x, 7, 7); }, rng), {x}};
    }, hp, 6);
    sweep.run("downsample", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({1, 2, 6, 6}, rng);
        return {weighted([=] { return rsonet::upsample_bilinear(x, 3, 3); }, rng), {x}};
    }, hp, 6);
    auto reduction = [&](const char* name, rsonet::Reduce mode) {
        sweep.run(name, false, [mode](Rng& rng) -> Check {
            Tensor<double> x = rand_t({2, 3, 3, 3}, rng);
            return {weighted([=] { return rsonet::reduce(x, mode); }, rng), {x}};
        }, hp, 6);
    };
    reduction("reduce_global_max", rsonet::Reduce::GlobalMax);
    reduction("reduce_avg_spatial", rsonet::Reduce::AvgSpatial);
    reduction("reduce_max_channels", rsonet::Reduce::MaxOverChannels);
    reduction("reduce_avg_channels", rsonet::Reduce::AvgOverChannels);
    sweep.run("layout_round_trip", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({2, 3, 2, 4}, rng);
        return {weighted([=] { return rsonet::blc_to_bchw(rsonet::bchw_to_blc(x), 2, 4); }, rng),
                {x}};
    }, hp, 6);
    sweep.run("selective_scan", false, [](Rng& rng) -> Check {
        Tensor<double> x = rand_t({1, 4, 2}, rng);
        Tensor<double> dt = rand_t({1, 4, 2}, rng, 0.2, 0.9);
        Tensor<double> bm = rand_t({1, 4, 2}, rng);
        Tensor<double> cm = rand_t({1, 4, 2}, rng);
        Tensor<double> a = rand_t({2, 2}, rng, -1.5, -0.2);
        Tensor<double> d = rand_t({2}, rng, 0.5, 1.5);
        return {weighted([=] { return rsonet::selective_scan(x, dt, bm, cm, a, d); }, rng),
                {x, dt, bm, cm, a, d}};
    }, hp, 6);

    // ---- composite blocks ----
    sweep.run("ci_block", true, [](Rng& rng) -> Check {
        const int level = static_cast<int>(rng() % 5) + 1;
        rsonet::CiModule<double> ci(level, 3, rng);
        Tensor<double> f = rand_t({1, 3, 5, 5}, rng, 0.05, 0.95);
        rsonet::ParamMap<double> pm;
        ci.collect("m", pm);
        return {weighted([=] { return ci.forward(f); }, rng), pick_params(pm, 4, {f})};
    }, hc, 4);
    sweep.run("sf_block", true, [](Rng& rng) -> Check {
        rsonet::SfModule<double> sf(3, 4, rng);
        Tensor<double> f = rand_t({1, 3, 6, 6}, rng, 0.05, 0.95);
        Tensor<double> prev = rand_t({1, 4, 3, 3}, rng, 0.05, 0.95);
        rsonet::ParamMap<double> pm;
        sf.collect("m", pm);
        return {weighted([=] { return sf.forward(f, prev); }, rng), pick_params(pm, 4, {f, prev})};
    }, hc, 4);
    sweep.run("so_block_both_routes", true, [](Rng& rng) -> Check {
        rsonet::SoModule<double> so(3, rng);
        Tensor<double> fr = rand_t({2, 3, 4, 4}, rng, 0.05, 0.95);
        Tensor<double> ft = rand_t({2, 3, 4, 4}, rng, 0.05, 0.95);
        Tensor<double> g = rand_t({2, 1, 4, 4}, rng, 0.1, 0.9);
        std::vector<rsonet::ModalitySelection> sel(2);
        sel[0].choice = rsonet::Modality::RgbDominant;
        sel[1].choice = rsonet::Modality::ThermalDominant;
        if (rng() % 2) std::swap(sel[0], sel[1]);
        rsonet::ParamMap<double> pm;
        so.collect("m", pm);
        return {weighted([=] { return so.forward(fr, ft, g, sel); }, rng),
                pick_params(pm, 3, {fr, ft, g})};
    }, hc, 4);
    sweep.run("dde_block", true, [](Rng& rng) -> Check {
        rsonet::DdeModule<double> dde(2, 2, rng);
        Tensor<double> f = rand_t({1, 2, 4, 4}, rng, 0.05, 0.95);
        rsonet::ParamMap<double> pm;
        dde.collect("m", pm);
        return {weighted([=] { return dde.forward(f); }, rng), pick_params(pm, 4, {f})};
    }, hc, 4);
    sweep.run("mis_block", true, [](Rng& rng) -> Check {
        rsonet::MisModule<double> mis(2, rng);
        Tensor<double> f = rand_t({1, 2, 5, 5}, rng, 0.05, 0.95);
        rsonet::ParamMap<double> pm;
        mis.collect("m", pm);
        return {weighted([=] { return mis.forward(f); }, rng), pick_params(pm, 4, {f})};
    }, hc, 4);
    sweep.run("decoder", true, [](Rng& rng) -> Check {
        rsonet::Decoder<double> dec({2, 2, 2, 2, 2}, rng);
        std::array<Tensor<double>, 5> feats;
        const int sides[5] = {16, 8, 4, 2, 1};
        for (int i = 0; i < 5; ++i)
            feats[static_cast<std::size_t>(i)] =
                rand_t({1, 2, sides[i], sides[i]}, rng, 0.05, 0.95);
        rsonet::ParamMap<double> pm;
        dec.collect("m", pm);
        std::vector<Tensor<double>> ws;
        for (int i = 0; i < 5; ++i)
            ws.push_back(Tensor<double>::uniform({1, 1, sides[i], sides[i]}, rng, -1.0, 1.0));
        Rebuild rebuild = [=] {
            rsonet::SaliencyOutput<double> out = dec.forward(feats, 64);
            Tensor<double> acc = rsonet::mean_all(out.final);
            for (int i = 0; i < 5; ++i)
                acc = rsonet::add(
                    acc, rsonet::sum_all(rsonet::mul(out.level_maps[static_cast<std::size_t>(i)],
                                                     ws[static_cast<std::size_t>(i)])));
            return acc;
        };
        return {rebuild, pick_params(pm, 4, {feats[0], feats[4]})};
    }, hc, 4);
    auto loss_check = [&](const char* name, auto op) {
        sweep.run(name, true, [op](Rng& rng) -> Check {
            Tensor<double> s = rand_t({2, 1, 4, 4}, rng, 0.05, 0.95);
            std::vector<double> gv(32);
            for (double& v : gv) v = (rng() % 3 == 0) ? 1.0 : 0.0;
            Tensor<double> g = oracle::tensor_from<double>({2, 1, 4, 4}, gv);
            return {[=] { return op(s, g); }, {s}};
        }, 1e-5, 8);
    };
    loss_check("bce_loss", [](auto s, auto g) { return rsonet::bce_loss(s, g); });
    loss_check("iou_loss", [](auto s, auto g) { return rsonet::iou_loss(s, g); });
    loss_check("fm_loss", [](auto s, auto g) { return rsonet::fm_loss(s, g); });
    sweep.run("total_loss", true, [](Rng& rng) -> Check {
        Tensor<double> s1 = rand_t({1, 1, 4, 4}, rng, 0.05, 0.95);
        Tensor<double> s2 = rand_t({1, 1, 2, 2}, rng, 0.05, 0.95);
        std::vector<double> g1(16), g2(4);
        for (double& v : g1) v = (rng() % 2) ? 1.0 : 0.0;
        for (double& v : g2) v = (rng() % 2) ? 1.0 : 0.0;
        Tensor<double> t1 = oracle::tensor_from<double>({1, 1, 4, 4}, g1);
        Tensor<double> t2 = oracle::tensor_from<double>({1, 1, 2, 2}, g2);
        return {[=] { return rsonet::total_loss<double>({s1, s2}, {t1, t2}).value; }, {s1, s2}};
    }, 1e-5, 8);

    const double secs = seconds_since(t0);
    const bool ok = sweep.worst_primitive < 1e-4 && sweep.worst_composite < 1e-3 && secs < 300;
    gate.line(ok, "gradient-suite",
              fmt("%d checks, worst primitive %.2e (<1e-4), worst block %.2e (<1e-3), %.0fs%s%s",
                  sweep.checks, sweep.worst_primitive, sweep.worst_composite, secs,
                  sweep.worst_name.empty() ? "" : ", offender: ",
                  sweep.worst_name.c_str()));
}

// ------------------------------------------------------------------------
// 2. oracle suite: library numerics vs independent 64-bit references
// ------------------------------------------------------------------------

void check_oracles(Gate& gate) {
    auto rel = [](double got, double want) {
        return std::fabs(got - want) / std::max({1.0, std::fabs(got), std::fabs(want)});
    };

    // convolution in double and in the production precision
    double conv_d = 0, conv_f = 0;
    for (int i = 0; i < 100; ++i) {
        Rng rng = rsonet::seeded_rng({0x0AC1Eull, static_cast<std::uint64_t>(i)});
        oracle::ConvShape s;
        s.b = 1 + static_cast<int>(rng() % 2);
        s.cin = 1 + static_cast<int>(rng() % 3);
        s.cout = 1 + static_cast<int>(rng() % 3);
        s.k = 1 + 2 * static_cast<int>(rng() % 3);
        s.stride = 1 + static_cast<int>(rng() % 2);
        s.dil = 1 + static_cast<int>(rng() % 2);
        s.pad = s.dil * (s.k - 1) / 2;
        s.h = s.k * s.dil + static_cast<int>(rng() % 4);
        s.w = s.k * s.dil + static_cast<int>(rng() % 4);
        const std::vector<double> x =
            oracle::rand_vec(static_cast<std::size_t>(s.b) * s.cin * s.h * s.w, rng);
        const std::vector<double> w =
            oracle::rand_vec(static_cast<std::size_t>(s.cout) * s.cin * s.k * s.k, rng);
        const std::vector<double> b = oracle::rand_vec(static_cast<std::size_t>(s.cout), rng);
        const std::vector<double> want = oracle::conv2d(x, w, b, s);

        Tensor<double> yd = rsonet::conv2d(
            oracle::tensor_from<double>({s.b, s.cin, s.h, s.w}, x),
            oracle::tensor_from<double>({s.cout, s.cin, s.k, s.k}, w),
            oracle::tensor_from<double>({s.cout}, b), s.stride, s.dil, s.pad);
        Tensor<float> yf = rsonet::conv2d(
            oracle::tensor_from<float>({s.b, s.cin, s.h, s.w}, x),
            oracle::tensor_from<float>({s.cout, s.cin, s.k, s.k}, w),
            oracle::tensor_from<float>({s.cout}, b), s.stride, s.dil, s.pad);
        for (std::size_t j = 0; j < want.size(); ++j) {
            conv_d = std::max(conv_d, rel(yd.data()[j], want[j]));
            conv_f = std::max(conv_f, rel(yf.data()[j], want[j]));
        }
    }

    // selective scan vs the naive recurrence, both precisions
    double scan_d = 0, scan_f = 0;
    for (int i = 0; i < 100; ++i) {
        Rng rng = rsonet::seeded_rng({0x5CA2ull, static_cast<std::uint64_t>(i)});
        const int b = 1 + static_cast<int>(rng() % 2), l = 2 + static_cast<int>(rng() % 6);
        const int c = 1 + static_cast<int>(rng() % 3), n = 1 + static_cast<int>(rng() % 3);
        const auto sz = [](int a, int bb, int cc) {
            return static_cast<std::size_t>(a) * bb * cc;
        };
        const std::vector<double> x = oracle::rand_vec(sz(b, l, c), rng);
        const std::vector<double> dt = oracle::rand_vec(sz(b, l, c), rng, 0.05, 0.9);
        const std::vector<double> bm = oracle::rand_vec(sz(b, l, n), rng);
        const std::vector<double> cm = oracle::rand_vec(sz(b, l, n), rng);
        const std::vector<double> a = oracle::rand_vec(sz(c, n, 1), rng, -2.0, -0.1);
        const std::vector<double> d = oracle::rand_vec(static_cast<std::size_t>(c), rng);
        const std::vector<double> want = oracle::scan(x, dt, bm, cm, a, d, b, l, c, n);

        Tensor<double> yd = rsonet::selective_scan(
            oracle::tensor_from<double>({b, l, c}, x), oracle::tensor_from<double>({b, l, c}, dt),
            oracle::tensor_from<double>({b, l, n}, bm), oracle::tensor_from<double>({b, l, n}, cm),
            oracle::tensor_from<double>({c, n}, a), oracle::tensor_from<double>({c}, d));
        Tensor<float> yf = rsonet::selective_scan(
            oracle::tensor_from<float>({b, l, c}, x), oracle::tensor_from<float>({b, l, c}, dt),
            oracle::tensor_from<float>({b, l, n}, bm), oracle::tensor_from<float>({b, l, n}, cm),
            oracle::tensor_from<float>({c, n}, a), oracle::tensor_from<float>({c}, d));
        for (std::size_t j = 0; j < want.size(); ++j) {
            scan_d = std::max(scan_d, rel(yd.data()[j], want[j]));
            scan_f = std::max(scan_f, rel(yf.data()[j], want[j]));
        }
    }

    // full scan block: production precision against the 64-bit evaluation
    double vss_err = 0;
    for (int i = 0; i < 100; ++i) {
        Rng rng = rsonet::seeded_rng({0x755Bull, static_cast<std::uint64_t>(i)});
        rsonet::VssBlock<double> vd(2, 2, rng);
        Rng rng2 = rsonet::seeded_rng({1});
        rsonet::VssBlock<float> vf(2, 2, rng2);
        rsonet::ParamMap<double> pd;
        rsonet::ParamMap<float> pf;
        vd.collect("v", pd);
        vf.collect("v", pf);
        for (auto& [name, t] : pd)
            for (std::size_t j = 0; j < t.data().size(); ++j)
                pf.at(name).data()[j] = static_cast<float>(t.data()[j]);
        const std::vector<double> xv = oracle::rand_vec(2 * 4 * 4, rng);
        Tensor<double> yd = vd.forward(oracle::tensor_from<double>({1, 2, 4, 4}, xv));
        Tensor<float> yf = vf.forward(oracle::tensor_from<float>({1, 2, 4, 4}, xv));
        for (std::size_t j = 0; j < yd.data().size(); ++j)
            vss_err = std::max(vss_err, rel(yf.data()[j], yd.data()[j]));
    }

    // metrics and losses against the transcription oracles
    double met_err = 0, loss_err = 0;
    for (int i = 0; i < 100; ++i) {
        Rng rng = rsonet::seeded_rng({0x3E71ull, static_cast<std::uint64_t>(i)});
        const int h = 2 + static_cast<int>(rng() % 7), w = 2 + static_cast<int>(rng() % 7);
        const std::size_t n = static_cast<std::size_t>(h) * w;
        std::vector<double> s = oracle::rand_vec(n, rng, 0.0, 1.0);
        std::vector<double> g(n);
        for (double& v : g) v = (rng() % 2) ? 1.0 : 0.0;
        g[0] = 1.0;
        g[n - 1] = 0.0;
        rsonet::Grid sg{h, w, s}, gg{h, w, g};
        met_err = std::max(met_err, std::fabs(rsonet::mae(sg, gg) - oracle::metric::mae(s, g)));
        met_err =
            std::max(met_err, std::fabs(rsonet::f_beta(sg, gg) - oracle::metric::fbeta(s, g)));
        met_err = std::max(met_err, std::fabs(rsonet::s_measure(sg, gg) -
                                              oracle::metric::smeasure(s, g, h, w)));
        met_err = std::max(met_err, std::fabs(rsonet::e_measure(sg, gg) -
                                              oracle::metric::emeasure(s, g)));

        std::vector<double> sp = oracle::rand_vec(n, rng, 0.02, 0.98);
        Tensor<double> st = oracle::tensor_from<double>({1, 1, h, w}, sp);
        Tensor<double> gt = oracle::tensor_from<double>({1, 1, h, w}, g);
        loss_err =
            std::max(loss_err, std::fabs(rsonet::bce_loss(st, gt).value() - oracle::bce(sp, g)));
        loss_err =
            std::max(loss_err, std::fabs(rsonet::iou_loss(st, gt).value() - oracle::iou(sp, g)));
        loss_err =
            std::max(loss_err, std::fabs(rsonet::fm_loss(st, gt).value() - oracle::fm(sp, g)));
    }

    const bool ok = conv_d < 1e-9 && conv_f < 1e-4 && scan_d < 1e-9 && scan_f < 1e-5 &&
                    vss_err < 1e-5 && met_err < 1e-9 && loss_err < 1e-9;
    gate.line(ok, "oracle-suite",
              fmt("100 instances/family: conv64 %.1e conv32 %.1e scan64 %.1e scan32 %.1e "
                  "vss32 %.1e metrics %.1e losses %.1e",
                  conv_d, conv_f, scan_d, scan_f, vss_err, met_err, loss_err));
}

// ------------------------------------------------------------------------
// 3. selection suite: hard modality choice + gradient isolation
// ------------------------------------------------------------------------

void check_selection(Gate& gate) {
    int mismatches = 0, ties_ok = 0;
    Rng rng = rsonet::seeded_rng({0x5E1Eull});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double mr = u(rng), mt = u(rng), mrt = u(rng);
        const rsonet::ModalitySelection sel = rsonet::select_modality(mr, mt, mrt);
        const double dr = std::fabs(mr - mrt), dt = std::fabs(mt - mrt);
        const rsonet::Modality want =
            dr <= dt ? rsonet::Modality::RgbDominant : rsonet::Modality::ThermalDominant;
        if (sel.choice != want || sel.delta_r != dr || sel.delta_t != dt) ++mismatches;
    }
    for (int i = 0; i < 100; ++i) {  // dyadic spacing makes the deltas exactly equal
        const double mrt = 0.5, d = (1 + static_cast<int>(rng() % 15)) / 64.0;
        const rsonet::ModalitySelection sel = rsonet::select_modality(mrt - d, mrt + d, mrt);
        if (sel.tie_broken && sel.choice == rsonet::Modality::RgbDominant) ++ties_ok;
    }

    // gradient isolation: a saliency-only loss must not touch the guidance net
    std::vector<rsonet::SamplePair> set = synth_pairs(2, 64, 91, 0.0);
    Rng mrng = rsonet::seeded_rng({0xDE7Aull});
    rsonet::RsoNet<float> model(tiny_config(), mrng);
    rsonet::ParamMap<float> params = model.parameters();
    rsonet::Batch<float> batch = rsonet::to_tensors<float>(set, {0, 1});
    rsonet::ModelOutput<float> out = model.forward(batch.rgb, batch.thermal);
    std::vector<Tensor<float>> maps(out.saliency.level_maps.begin(),
                                    out.saliency.level_maps.end());
    std::vector<Tensor<float>> gts;
    for (const Tensor<float>& m : maps)
        gts.push_back(rsonet::resize_gt(batch.gt, m.dim(2), m.dim(3)));
    rsonet::backward(rsonet::total_loss<float>(maps, gts).value);
    double guidance_grad = 0, other_grad = 0;
    for (auto& [name, t] : params) {
        double mx = 0;
        for (float gv : t.grad_vec()) mx = std::max(mx, std::fabs(static_cast<double>(gv)));
        if (name.rfind("guidance.", 0) == 0)
            guidance_grad = std::max(guidance_grad, mx);
        else
            other_grad = std::max(other_grad, mx);
        t.clear_grad();
    }

    const bool ok = mismatches == 0 && ties_ok == 100 && guidance_grad == 0.0 && other_grad > 0.0;
    gate.line(ok, "selection-suite",
              fmt("1000 triples, %d mismatches; %d/100 ties -> rgb; guidance |grad| %.1e "
                  "(exact 0), elsewhere %.1e (>0)",
                  mismatches, ties_ok, guidance_grad, other_grad));
}

// ------------------------------------------------------------------------
// 4. metric sanity: perfect fixtures and range fuzz
// ------------------------------------------------------------------------

void check_metric_sanity(Gate& gate) {
    double perfect_err = 0;
    Rng rng = rsonet::seeded_rng({0x3A17ull});
    for (int i = 0; i < 20; ++i) {
        const int h = 3 + static_cast<int>(rng() % 6), w = 3 + static_cast<int>(rng() % 6);
        std::vector<double> m(static_cast<std::size_t>(h) * w);
        for (double& v : m) v = (rng() % 2) ? 1.0 : 0.0;
        m[0] = 1.0;
        m.back() = 0.0;
        rsonet::Grid gm{h, w, m};
        perfect_err = std::max(perfect_err, std::fabs(rsonet::mae(gm, gm)));
        perfect_err = std::max(perfect_err, std::fabs(1.0 - rsonet::f_beta(gm, gm)));
        perfect_err = std::max(perfect_err, std::fabs(1.0 - rsonet::s_measure(gm, gm)));
        perfect_err = std::max(perfect_err, std::fabs(1.0 - rsonet::e_measure(gm, gm)));
    }

    int out_of_range = 0;
    const int fuzz = 10000;
    for (int i = 0; i < fuzz; ++i) {
        const int h = 1 + static_cast<int>(rng() % 8), w = 1 + static_cast<int>(rng() % 8);
        const std::size_t n = static_cast<std::size_t>(h) * w;
        std::vector<double> s(n), g(n);
        const int kind = static_cast<int>(rng() % 4);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t j = 0; j < n; ++j) {
            s[j] = kind == 3 ? ((rng() % 2) ? 1.0 : 0.0) : u(rng);
            g[j] = kind == 0 ? 0.0 : kind == 1 ? 1.0 : ((rng() % 2) ? 1.0 : 0.0);
        }
        rsonet::Grid sg{h, w, s}, gg{h, w, g};
        for (double v : {rsonet::mae(sg, gg), rsonet::f_beta(sg, gg), rsonet::s_measure(sg, gg),
                         rsonet::e_measure(sg, gg)})
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) ++out_of_range;
    }

    const bool ok = perfect_err < 1e-6 && out_of_range == 0;
    gate.line(ok, "metric-sanity",
              fmt("perfect fixtures off by %.1e (<1e-6); %d/%d fuzz values out of [0,1]",
                  perfect_err, out_of_range, fuzz));
}

// ------------------------------------------------------------------------
// 5. determinism & persistence
// ------------------------------------------------------------------------

void check_determinism(Gate& gate) {
    std::vector<rsonet::SamplePair> set = synth_pairs(4, 64, 17);
    rsonet::RunConfig cfg;
    cfg.model = tiny_config();
    cfg.train.steps = 6;
    cfg.train.batch_size = 2;
    cfg.train.eval_every = 3;
    cfg.train.seed = 13;

    const fs::path da = fs::temp_directory_path() / "rsonet_acc_det_a";
    const fs::path db = fs::temp_directory_path() / "rsonet_acc_det_b";
    fs::remove_all(da);
    fs::remove_all(db);
    rsonet::fit<float>(cfg, set, set, da.string(), "", nullptr);
    rsonet::fit<float>(cfg, set, set, db.string(), "", nullptr);
    const bool traces_equal = slurp(da / "train_log.csv") == slurp(db / "train_log.csv") &&
                              slurp(da / "metrics.csv") == slurp(db / "metrics.csv");
    const bool ckpt_equal = slurp(da / "last.ckpt") == slurp(db / "last.ckpt");

    // checkpoint round trip preserves the forward pass bit for bit
    Rng r1 = rsonet::seeded_rng({0xACC1ull});
    rsonet::RsoNet<float> model(cfg.model, r1);
    rsonet::ParamMap<float> params = model.parameters();
    rsonet::Rmsprop<float> opt(1e-4f, 0.9f);
    rsonet::Batch<float> batch = rsonet::to_tensors<float>(set, {0, 1, 2});
    rsonet::train_step(model, params, opt, batch, 1.0);
    const fs::path ck = fs::temp_directory_path() / "rsonet_acc_round.ckpt";
    rsonet::write_checkpoint(ck.string(), rsonet::snapshot_run(params, opt, 1, cfg.model, 0.5));

    rsonet::NoGrad guard;
    const std::vector<float> want = model.forward(batch.rgb, batch.thermal).saliency.final.data();
    Rng r2 = rsonet::seeded_rng({0xACC2ull});
    rsonet::RsoNet<float> twin(cfg.model, r2);
    rsonet::ParamMap<float> twin_params = twin.parameters();
    rsonet::Rmsprop<float> twin_opt(1e-4f, 0.9f);
    rsonet::CheckpointMap stored = rsonet::read_checkpoint(ck.string());
    rsonet::restore_run(stored, twin_params, twin_opt);
    const bool forward_equal =
        twin.forward(batch.rgb, batch.thermal).saliency.final.data() == want;

    const fs::path ck2 = fs::temp_directory_path() / "rsonet_acc_round2.ckpt";
    rsonet::write_checkpoint(ck2.string(), stored);
    const bool bytes_equal = slurp(ck) == slurp(ck2);

    fs::remove_all(da);
    fs::remove_all(db);
    fs::remove(ck);
    fs::remove(ck2);
    const bool ok = traces_equal && ckpt_equal && forward_equal && bytes_equal;
    gate.line(ok, "determinism-persistence",
              fmt("same-seed traces %s, checkpoints %s; reload forward %s, rewrite bytes %s",
                  traces_equal ? "identical" : "DIFFER", ckpt_equal ? "identical" : "DIFFER",
                  forward_equal ? "bit-exact" : "DIFFER", bytes_equal ? "identical" : "DIFFER"));
}

// ------------------------------------------------------------------------
// 6. structural conformance
// ------------------------------------------------------------------------

void check_structure(Gate& gate) {
    Rng rng = rsonet::seeded_rng({0x57C7ull});
    rsonet::RsoNet<float> model(tiny_config(), rng);
    rsonet::ParamMap<float> params = model.parameters();

    std::map<int, std::set<std::string>> ci_branches;
    std::set<std::string> dde_levels, mis_levels, heads;
    for (const auto& [name, t] : params) {
        if (name.rfind("guidance.ci", 0) == 0) {
            const int level = name[11] - '0';
            const std::string rest = name.substr(13);  // after "guidance.ciL."
            if (rest[0] == 'b') ci_branches[level].insert(rest.substr(0, rest.find('.')));
        }
        if (name.rfind("dde", 0) == 0) dde_levels.insert(name.substr(0, 4));
        if (name.rfind("mis", 0) == 0) mis_levels.insert(name.substr(0, 4));
        if (name.rfind("dec.head", 0) == 0) heads.insert(name.substr(0, 9));
    }
    const bool ci_ok = ci_branches[1].size() == 4 && ci_branches[2].size() == 3 &&
                       ci_branches[3].size() == 3 && ci_branches[4].size() == 2 &&
                       ci_branches[5].size() == 2;
    const bool dde_ok = dde_levels == std::set<std::string>{"dde1", "dde2", "dde3"};
    const bool mis_ok = mis_levels == std::set<std::string>{"mis4", "mis5"};
    const bool heads_ok = heads.size() == 5;

    std::vector<rsonet::SamplePair> set = synth_pairs(1, 64, 41);
    rsonet::Batch<float> batch = rsonet::to_tensors<float>(set, {0});
    rsonet::ModelOutput<float> out = model.forward(batch.rgb, batch.thermal);
    bool maps_ok = out.saliency.final.dim(2) == 64 && out.saliency.final.dim(3) == 64 &&
                   out.saliency.final.requires_grad();
    const int sides[5] = {16, 8, 4, 2, 1};
    for (int i = 0; i < 5; ++i) {
        const Tensor<float>& m = out.saliency.level_maps[static_cast<std::size_t>(i)];
        maps_ok = maps_ok && m.dim(1) == 1 && m.dim(2) == sides[i] && m.dim(3) == sides[i] &&
                  m.requires_grad();
        for (float v : m.data()) maps_ok = maps_ok && v > 0.0f && v < 1.0f;
    }

    const bool ok = ci_ok && dde_ok && mis_ok && heads_ok && maps_ok;
    gate.line(ok, "structural-conformance",
              fmt("ci branches %zu/%zu/%zu/%zu/%zu (want 4/3/3/2/2), detail blocks {%s}, "
                  "interaction blocks {%s}, %zu heads, maps %s",
                  ci_branches[1].size(), ci_branches[2].size(), ci_branches[3].size(),
                  ci_branches[4].size(), ci_branches[5].size(),
                  dde_ok ? "levels 1-3" : "WRONG", mis_ok ? "levels 4-5" : "WRONG", heads.size(),
                  maps_ok ? "five strides + full-res, all in (0,1)" : "WRONG"));
}

// ------------------------------------------------------------------------
// 7. overfit: the full-size configuration memorizes eight pairs
// ------------------------------------------------------------------------

void check_overfit(Gate& gate) {
    const Clock::time_point t0 = Clock::now();
    std::vector<rsonet::SamplePair> set = synth_pairs(8, 64, 7);
    rsonet::ModelConfig mc;  // full width: {16,32,64,128,256}, input 64
    Rng rng = rsonet::seeded_rng({7, 1});
    rsonet::RsoNet<float> model(mc, rng);
    rsonet::ParamMap<float> params = model.parameters();
    rsonet::Rmsprop<float> opt(1e-4f, 0.9f);

    std::vector<double> losses;
    double best_mae = std::numeric_limits<double>::infinity();
    int steps = 0;
    const int max_steps = 2000;
    for (int s = 0; s < max_steps; ++s) {
        const auto picks = rsonet::epoch_batches(8, 4, 7, s / 2);
        rsonet::Batch<float> batch = rsonet::to_tensors<float>(set, picks[s % 2]);
        const rsonet::StepStats st = rsonet::train_step(model, params, opt, batch, 1.0);
        losses.push_back(st.loss.total);
        steps = s + 1;
        if (steps >= 100 && steps % 25 == 0) {
            const rsonet::MetricReport rep = rsonet::evaluate_model(model, set, 4);
            best_mae = std::min(best_mae, rep.mae);
            std::printf("  overfit step %4d  loss %.4f  mae %.4f  (%.0fs)\n", steps,
                        st.loss.total, rep.mae, seconds_since(t0));
            std::fflush(stdout);
            if (rep.mae < 0.05) break;
        }
    }
    double first50 = 0, final50 = 0;
    for (int i = 0; i < 50; ++i) {
        first50 += losses[static_cast<std::size_t>(i)] / 50;
        final50 += losses[losses.size() - 50 + static_cast<std::size_t>(i)] / 50;
    }
    const double secs = seconds_since(t0);
    const bool ok = best_mae < 0.05 && final50 < first50 && secs < 1800;
    gate.line(ok, "overfit-8-pairs",
              fmt("mae %.4f (<0.05) after %d steps; smoothed loss %.3f -> %.3f; %.0fs (<1800)",
                  best_mae, steps, first50, final50, secs));
}

// ------------------------------------------------------------------------
// 8. ablation harness: every variant trains, scores, and tabulates
// ------------------------------------------------------------------------

void check_ablations(Gate& gate) {
    const Clock::time_point t0 = Clock::now();
    std::vector<rsonet::SamplePair> set = synth_pairs(16, 64, 21);
    bool ok = true;
    double full_mae = -1;
    std::vector<std::pair<std::string, rsonet::MetricReport>> rows;

    for (const auto& [tag, name] : rsonet::ablation_table()) {
        rsonet::RunConfig cfg;  // full width, identical protocol for every row
        cfg.model.ablation = tag;
        cfg.train.steps = 40;
        cfg.train.batch_size = 4;
        cfg.train.seed = 9;
        cfg.train.eval_every = 0;
        const fs::path dir = fs::temp_directory_path() / (std::string("rsonet_acc_ab_") + name);
        fs::remove_all(dir);
        try {
            const rsonet::FitResult res = rsonet::fit<float>(cfg, set, set, dir.string(), "",
                                                             nullptr);
            rsonet::CheckpointMap ck = rsonet::read_checkpoint(res.last_path);
            const rsonet::ModelConfig mc = rsonet::model_config_from_meta(ck);
            ok = ok && mc.ablation == tag;
            Rng rng = rsonet::seeded_rng({1});
            rsonet::RsoNet<float> model(mc, rng);
            rsonet::ParamMap<float> params = model.parameters();
            rsonet::load_into(ck, "param/", params);
            const rsonet::MetricReport rep = rsonet::evaluate_model(model, set, 4);
            for (double v : {rep.mae, rep.f_beta, rep.s_measure, rep.e_measure})
                ok = ok && std::isfinite(v) && v >= 0.0 && v <= 1.0;
            ok = ok && rep.count == 16;
            rows.emplace_back(name, rep);
            if (tag == rsonet::AblationTag::Full) full_mae = rep.mae;
            std::printf("  %-12s mae %.3f  f %.3f  s %.3f  e %.3f  (%.0fs)\n", name, rep.mae,
                        rep.f_beta, rep.s_measure, rep.e_measure, seconds_since(t0));
            std::fflush(stdout);
        } catch (const std::exception& e) {
            ok = false;
            std::printf("  %-12s FAILED: %s\n", name, e.what());
        }
        fs::remove_all(dir);
    }
    int beaten = 0;
    for (const auto& [name, rep] : rows)
        if (name != std::string("full") && rep.mae < full_mae) ++beaten;
    const double secs = seconds_since(t0);
    ok = ok && rows.size() == 10 && secs < 3600;
    gate.line(ok, "ablation-harness",
              fmt("%zu/10 variants trained and scored on 16 samples in %.0fs (<3600); "
                  "%d variants beat full on mae at this scale (informational)",
                  rows.size(), secs, beaten));
}

}  // namespace

int main() {
    std::printf("artifact acceptance gate\n------------------------\n");
    Gate gate;
    check_gradients(gate);
    check_oracles(gate);
    check_selection(gate);
    check_metric_sanity(gate);
    check_determinism(gate);
    check_structure(gate);
    check_overfit(gate);
    check_ablations(gate);
    std::printf("------------------------\n%d of 8 criteria passed\n", 8 - gate.failures);
    return gate.failures;
}
