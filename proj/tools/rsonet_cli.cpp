// Command-line front end: train / eval / infer / synth / ablate.
//
// Exit codes: 0 success, 1 configuration problem, 2 data problem,
// 3 numeric abort (non-finite loss), 10 anything unexpected.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "rsonet/config.hpp"
#include "rsonet/data.hpp"
#include "rsonet/metrics.hpp"
#include "rsonet/model.hpp"
#include "rsonet/train.hpp"

namespace {

using Real = float;

int run_train(const std::string& config_path, const std::string& resume,
              const std::string& data_dir, const std::string& eval_dir,
              const std::string& out_dir) {
    rsonet::RunConfig cfg = rsonet::load_run_config(config_path);
    const std::vector<rsonet::SamplePair> train_set =
        rsonet::load_dataset(data_dir, cfg.model.backbone.input_size);
    // Metric split: a separate directory when given, otherwise the training
    // set itself (desk-scale sets are too small to carve up by default).
    const std::vector<rsonet::SamplePair> eval_set =
        eval_dir.empty() ? train_set
                         : rsonet::load_dataset(eval_dir, cfg.model.backbone.input_size);
    const rsonet::FitResult res =
        rsonet::fit<Real>(cfg, train_set, eval_set, out_dir, resume);
    std::printf("done steps=%d best_mae=%.6f best_step=%d\n", res.steps_run, res.best_mae,
                res.best_step);
    std::printf("checkpoints: %s %s\n", res.best_path.c_str(), res.last_path.c_str());
    return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& csv) {
    const rsonet::MetricReport rep = rsonet::evaluate_dir(pred_dir, gt_dir);
    std::printf("%.3f %.3f %.3f %.3f\n", rep.mae, rep.f_beta, rep.s_measure, rep.e_measure);
    if (!csv.empty()) {
        std::ofstream f(csv);
        if (!f) throw rsonet::DataError("cannot write " + csv);
        f << "mae,f_beta,s_measure,e_measure,count\n";
        char row[160];
        std::snprintf(row, sizeof(row), "%.9g,%.9g,%.9g,%.9g,%d\n", rep.mae, rep.f_beta,
                      rep.s_measure, rep.e_measure, rep.count);
        f << row;
    }
    return 0;
}

int run_infer(const std::string& ckpt, const std::string& rgb_path,
              const std::string& thermal_path, const std::string& out_path,
              const std::string& dump_dir) {
    const rsonet::CheckpointMap stored = rsonet::read_checkpoint(ckpt);
    const rsonet::ModelConfig mc = rsonet::model_config_from_meta(stored);
    rsonet::Rng rng(0);  // values are replaced by the checkpoint
    rsonet::RsoNet<Real> model(mc, rng);
    rsonet::ParamMap<Real> params = model.parameters();
    rsonet::load_into(stored, "param/", params);

    rsonet::RgbImage rgb = rsonet::load_rgb(rgb_path);
    rsonet::GrayImage thermal = rsonet::load_gray(thermal_path);
    if (rgb.h != thermal.h || rgb.w != thermal.w)
        throw rsonet::DataError("rgb and thermal sizes disagree");
    const int orig_h = rgb.h, orig_w = rgb.w;
    const int s = mc.backbone.input_size;
    rgb = rsonet::resize_rgb(rgb, s, s);
    thermal = rsonet::resize_gray(thermal, s, s);

    rsonet::NoGrad guard;
    rsonet::Tensor<Real> rt = rsonet::Tensor<Real>::zeros({1, 3, s, s});
    rsonet::Tensor<Real> tt = rsonet::Tensor<Real>::zeros({1, 1, s, s});
    for (std::size_t i = 0; i < rgb.px.size(); ++i) rt.data()[i] = rgb.px[i];
    for (std::size_t i = 0; i < thermal.px.size(); ++i) tt.data()[i] = thermal.px[i];
    const rsonet::ModelOutput<Real> out = model.forward(rt, tt);

    rsonet::GrayImage fin{s, s, {}};
    fin.px.assign(out.saliency.final.data().begin(), out.saliency.final.data().end());
    rsonet::save_gray(out_path, rsonet::resize_gray(fin, orig_h, orig_w));

    if (!dump_dir.empty()) {
        if (!out.guidance)
            throw rsonet::ConfigError("checkpoint variant '" + ablation_name(mc.ablation) +
                                      "' has no region-guidance stage to dump");
        std::filesystem::create_directories(dump_dir);
        auto dump = [&](const char* name, const rsonet::Tensor<Real>& g) {
            rsonet::GrayImage img{g.dim(2), g.dim(3), {}};
            img.px.assign(g.data().begin(), g.data().end());
            rsonet::save_gray((std::filesystem::path(dump_dir) / name).string(), img);
        };
        dump("g_r.png", out.guidance->g_r);
        dump("g_t.png", out.guidance->g_t);
        dump("g_rt.png", out.guidance->g_rt);
        const rsonet::ModalitySelection& sel = out.selections.at(0);
        std::printf("selected=%s delta_r=%.6f delta_t=%.6f\n",
                    sel.choice == rsonet::Modality::RgbDominant ? "rgb" : "thermal", sel.delta_r,
                    sel.delta_t);
    }
    return 0;
}

int run_synth(const std::string& out_dir, int count, int size, std::uint64_t seed,
              double inconsistency, double noise) {
    rsonet::SynthSpec spec;
    spec.count = count;
    spec.size = size;
    spec.seed = seed;
    spec.inconsistency = inconsistency;
    spec.noise_level = noise;
    spec.validate();
    rsonet::write_dataset(out_dir, rsonet::synth_generate(spec));
    std::printf("wrote %d samples to %s\n", count, out_dir.c_str());
    return 0;
}

int run_ablate(const std::string& tag, const std::string& config_path,
               const std::string& data_dir, const std::string& out_dir) {
    rsonet::RunConfig cfg = rsonet::load_run_config(config_path);
    cfg.model.ablation = rsonet::parse_ablation(tag);
    const std::vector<rsonet::SamplePair> data =
        rsonet::load_dataset(data_dir, cfg.model.backbone.input_size);
    const rsonet::FitResult res = rsonet::fit<Real>(cfg, data, data, out_dir);

    // score the final parameters on the same set and emit the table row
    const rsonet::CheckpointMap stored = rsonet::read_checkpoint(res.last_path);
    rsonet::Rng rng(0);
    rsonet::RsoNet<Real> model(cfg.model, rng);
    rsonet::ParamMap<Real> params = model.parameters();
    rsonet::load_into(stored, "param/", params);
    const rsonet::MetricReport rep =
        rsonet::evaluate_model(model, data, cfg.train.batch_size);
    std::printf("%-12s %.3f %.3f %.3f %.3f\n", tag.c_str(), rep.mae, rep.f_beta, rep.s_measure,
                rep.e_measure);
    std::ofstream row(std::filesystem::path(out_dir) / "row.csv");
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", tag.c_str(), rep.mae, rep.f_beta,
                  rep.s_measure, rep.e_measure);
    row << "setting,mae,f_beta,s_measure,e_measure\n" << buf;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RGB-T salient object detection pipeline"};
    app.require_subcommand(1);

    std::string config_path, resume, data_dir, eval_dir, out_dir;
    CLI::App* train = app.add_subcommand("train", "optimize a model on a paired dataset");
    train->add_option("--config", config_path, "JSON run configuration")->required();
    train->add_option("--resume", resume, "checkpoint to continue from");
    train->add_option("--data", data_dir, "dataset root (RGB/ T/ GT/)")->required();
    train->add_option("--eval-data", eval_dir, "separate metric split (defaults to --data)");
    train->add_option("--out", out_dir, "output directory")->required();

    std::string pred_dir, gt_dir, csv_path;
    CLI::App* eval = app.add_subcommand("eval", "score saliency maps against ground truth");
    eval->add_option("--pred", pred_dir, "predicted map directory")->required();
    eval->add_option("--gt", gt_dir, "ground-truth directory")->required();
    eval->add_option("--csv", csv_path, "also write the row to this CSV");

    std::string ckpt, rgb_path, thermal_path, infer_out, dump_dir;
    CLI::App* infer = app.add_subcommand("infer", "run one RGB-T pair through a checkpoint");
    infer->add_option("--ckpt", ckpt, "model checkpoint")->required();
    infer->add_option("--rgb", rgb_path, "RGB image")->required();
    infer->add_option("--thermal", thermal_path, "thermal image")->required();
    infer->add_option("--out", infer_out, "output saliency map (8-bit png)")->required();
    infer->add_option("--dump-guidance", dump_dir,
                      "directory for guidance maps + selection printout");

    std::string synth_out;
    int count = 16, size = 64;
    std::uint64_t seed = 1;
    double inconsistency = 0.5, noise = 0.05;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic paired dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--count", count, "number of samples");
    synth->add_option("--size", size, "square image size");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_option("--inconsistency", inconsistency,
                      "probability a sample hides the object in one modality");
    synth->add_option("--noise", noise, "gaussian pixel noise level");

    std::string tag, ab_config, ab_data, ab_out;
    CLI::App* ablate = app.add_subcommand("ablate", "train + score one architecture variant");
    ablate->add_option("--setting", tag, "variant tag (see README for the list)")
        ->required();
    ablate->add_option("--config", ab_config, "JSON run configuration")->required();
    ablate->add_option("--data", ab_data, "dataset root")->required();
    ablate->add_option("--out", ab_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*train) return run_train(config_path, resume, data_dir, eval_dir, out_dir);
        if (*eval) return run_eval(pred_dir, gt_dir, csv_path);
        if (*infer) return run_infer(ckpt, rgb_path, thermal_path, infer_out, dump_dir);
        if (*synth) return run_synth(synth_out, count, size, seed, inconsistency, noise);
        if (*ablate) return run_ablate(tag, ab_config, ab_data, ab_out);
    } catch (const rsonet::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const rsonet::NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 3;
    } catch (const rsonet::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return 2;
    } catch (const rsonet::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 10;
    }
    return 0;
}
