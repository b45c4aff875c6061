#ifndef RSONET_DATA_HPP
#define RSONET_DATA_HPP

// Paired RGB-T dataset handling: directory ingestion in the common
// RGB/T/GT layout, a seeded synthetic scene generator covering the
// modality-inconsistency regimes, deterministic batch scheduling, and
// conversion of samples to batched tensors.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "rsonet/image_io.hpp"
#include "rsonet/tensor.hpp"

namespace rsonet {

struct SamplePair {
    RgbImage rgb;        // [0,1]
    GrayImage thermal;   // [0,1]
    GrayImage gt;        // values exactly 0 or 1
    std::string id;
};

// Loads one triple, thresholds the mask at 128/255, and resizes everything
// to target_size (masks re-binarized at 0.5 after resampling).
inline SamplePair load_pair(const std::string& rgb_path, const std::string& thermal_path,
                            const std::string& gt_path, int target_size) {
    if (target_size < 1) throw ConfigError("target_size must be positive");
    SamplePair s;
    s.rgb = load_rgb(rgb_path);
    s.thermal = load_gray(thermal_path);
    s.gt = load_gray(gt_path);
    if (s.thermal.h != s.rgb.h || s.thermal.w != s.rgb.w || s.gt.h != s.rgb.h ||
        s.gt.w != s.rgb.w)
        throw DataError("image sizes disagree for " + gt_path);
    constexpr float kMaskThreshold = 128.0f / 255.0f;
    for (float& v : s.gt.px) v = v >= kMaskThreshold ? 1.0f : 0.0f;
    s.rgb = resize_rgb(s.rgb, target_size, target_size);
    s.thermal = resize_gray(s.thermal, target_size, target_size);
    s.gt = resize_gray(s.gt, target_size, target_size);
    for (float& v : s.gt.px) v = v >= 0.5f ? 1.0f : 0.0f;
    s.id = std::filesystem::path(gt_path).stem().string();
    return s;
}

struct SynthSpec {
    int count = 16;
    int size = 64;
    std::uint64_t seed = 1;
    double inconsistency = 0.5;  // probability one modality hides the object
    double noise_level = 0.05;
    double min_area = 0.05, max_area = 0.30;

    void validate() const {
        if (count < 0) throw ConfigError("synth count must be >= 0");
        if (size < 8) throw ConfigError("synth size must be >= 8");
        if (inconsistency < 0 || inconsistency > 1)
            throw ConfigError("inconsistency must be in [0,1]");
        if (!(min_area > 0 && min_area < max_area && max_area < 0.5))
            throw ConfigError("need 0 < min_area < max_area < 0.5");
        if (noise_level < 0 || noise_level > 0.2)
            throw ConfigError("noise_level must be in [0,0.2]");
    }
};

struct SynthSample {
    SamplePair pair;
    std::uint64_t seed = 0;   // per-sample derived seed
    std::string regime;       // "none", "rgb-degraded", or "thermal-degraded"
};

namespace synth_detail {

// Union of 1-3 random ellipses/convex polygons; retried until the area
// fraction lands inside [min_area, max_area].
inline std::vector<float> draw_mask(int size, Rng& rng, double min_area, double max_area) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int attempt = 0; attempt < 64; ++attempt) {
        std::vector<float> mask(static_cast<std::size_t>(size) * size, 0.0f);
        const int nobj = 1 + static_cast<int>(unit(rng) * 3.0) % 3;
        const double target = min_area + unit(rng) * (max_area - min_area);
        for (int o = 0; o < nobj; ++o) {
            const double share = target / nobj;
            const double cx = (0.25 + 0.5 * unit(rng)) * size;
            const double cy = (0.25 + 0.5 * unit(rng)) * size;
            if (unit(rng) < 0.5) {
                // ellipse with area ~ share*size^2
                const double ratio = 0.5 + unit(rng);  // aspect
                const double a = std::sqrt(share * size * size / (3.14159265358979 * ratio));
                const double b = a * ratio;
                const double theta = unit(rng) * 3.14159265358979;
                const double ct = std::cos(theta), st = std::sin(theta);
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                        const double u = (dx * ct + dy * st) / a;
                        const double v = (-dx * st + dy * ct) / b;
                        if (u * u + v * v <= 1.0)
                            mask[static_cast<std::size_t>(y) * size + x] = 1.0f;
                    }
            } else {
                // convex polygon: radial vertices around the center
                const int nv = 3 + static_cast<int>(unit(rng) * 4.0) % 4;
                const double r0 = std::sqrt(share * size * size / 3.14159265358979);
                std::vector<double> px(static_cast<std::size_t>(nv)), py(static_cast<std::size_t>(nv));
                for (int k = 0; k < nv; ++k) {
                    const double ang = (k + unit(rng) * 0.6) * 2.0 * 3.14159265358979 / nv;
                    const double r = r0 * (0.75 + 0.5 * unit(rng));
                    px[static_cast<std::size_t>(k)] = cx + r * std::cos(ang);
                    py[static_cast<std::size_t>(k)] = cy + r * std::sin(ang);
                }
                for (int y = 0; y < size; ++y)
                    for (int x = 0; x < size; ++x) {
                        bool inside = true;
                        for (int k = 0; k < nv && inside; ++k) {
                            const int k2 = (k + 1) % nv;
                            const double ex = px[static_cast<std::size_t>(k2)] - px[static_cast<std::size_t>(k)];
                            const double ey = py[static_cast<std::size_t>(k2)] - py[static_cast<std::size_t>(k)];
                            const double qx = x + 0.5 - px[static_cast<std::size_t>(k)];
                            const double qy = y + 0.5 - py[static_cast<std::size_t>(k)];
                            if (ex * qy - ey * qx < 0) inside = false;
                        }
                        if (inside) mask[static_cast<std::size_t>(y) * size + x] = 1.0f;
                    }
            }
        }
        double area = 0;
        for (float v : mask) area += v;
        area /= static_cast<double>(size) * size;
        if (area >= min_area && area <= max_area) return mask;
    }
    throw ValueError("synthetic mask generation failed to hit the area window");
}

// Smooth low-frequency field in [-1,1] used for background texture.
inline std::vector<float> texture_field(int size, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double fx = 1.0 + unit(rng) * 3.0, fy = 1.0 + unit(rng) * 3.0;
    const double phx = unit(rng) * 6.28318530717959, phy = unit(rng) * 6.28318530717959;
    std::vector<float> field(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            field[static_cast<std::size_t>(y) * size + x] = static_cast<float>(
                0.5 * (std::sin(fx * 6.28318530717959 * x / size + phx) +
                       std::sin(fy * 6.28318530717959 * y / size + phy)));
    return field;
}

}  // namespace synth_detail

// Deterministic scene generator. RGB renders the objects with a random color
// contrast on a textured background; thermal renders them with a radiation
// offset; with probability `inconsistency` one modality's contrast collapses
// below the noise floor.
inline std::vector<SynthSample> synth_generate(const SynthSpec& spec) {
    spec.validate();
    std::vector<SynthSample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        Rng rng = seeded_rng({spec.seed, static_cast<std::uint64_t>(i) + 1});
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const int sz = spec.size;

        SynthSample s;
        s.seed = spec.seed;
        s.pair.id = [&] {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "synth_%05d", i);
            return std::string(buf);
        }();

        const std::vector<float> mask =
            synth_detail::draw_mask(sz, rng, spec.min_area, spec.max_area);
        const std::vector<float> tex_rgb = synth_detail::texture_field(sz, rng);
        const std::vector<float> tex_t = synth_detail::texture_field(sz, rng);

        // base appearance
        std::array<double, 3> bg_color, contrast_rgb;
        for (int c = 0; c < 3; ++c) bg_color[static_cast<std::size_t>(c)] = 0.25 + 0.5 * unit(rng);
        const double sign_rgb = unit(rng) < 0.5 ? -1.0 : 1.0;
        double mag_rgb = 0.25 + 0.35 * unit(rng);
        for (int c = 0; c < 3; ++c)
            contrast_rgb[static_cast<std::size_t>(c)] = sign_rgb * mag_rgb * (0.8 + 0.4 * unit(rng));
        const double bg_t = 0.25 + 0.5 * unit(rng);
        const double sign_t = unit(rng) < 0.5 ? -1.0 : 1.0;
        double mag_t = 0.25 + 0.35 * unit(rng);

        // modality-inconsistency regime
        s.regime = "none";
        if (unit(rng) < spec.inconsistency) {
            const bool hide_rgb = unit(rng) < 0.5;
            const double hidden = 0.4 * spec.noise_level * unit(rng);
            if (hide_rgb) {
                for (double& c : contrast_rgb) c = (c < 0 ? -1 : 1) * hidden;
                s.regime = "rgb-degraded";
            } else {
                mag_t = hidden;
                s.regime = "thermal-degraded";
            }
        }

        std::normal_distribution<double> noise(0.0, spec.noise_level);
        s.pair.rgb = RgbImage{sz, sz, std::vector<float>(3u * sz * sz)};
        s.pair.thermal = GrayImage{sz, sz, std::vector<float>(static_cast<std::size_t>(sz) * sz)};
        s.pair.gt = GrayImage{sz, sz, mask};
        const std::size_t plane = static_cast<std::size_t>(sz) * sz;
        for (std::size_t p = 0; p < plane; ++p) {
            const bool on = mask[p] > 0.5f;
            for (int c = 0; c < 3; ++c) {
                double v = bg_color[static_cast<std::size_t>(c)] + 0.08 * tex_rgb[p] +
                           (on ? contrast_rgb[static_cast<std::size_t>(c)] : 0.0) + noise(rng);
                s.pair.rgb.px[static_cast<std::size_t>(c) * plane + p] =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            double tv = bg_t + 0.08 * tex_t[p] + (on ? sign_t * mag_t : 0.0) + noise(rng);
            s.pair.thermal.px[p] = static_cast<float>(std::clamp(tv, 0.0, 1.0));
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Writes samples in the RGB/T/GT layout plus a manifest.json index.
inline void write_dataset(const std::string& dir, const std::vector<SynthSample>& samples) {
    namespace fs = std::filesystem;
    for (const char* sub : {"RGB", "T", "GT"}) fs::create_directories(fs::path(dir) / sub);
    nlohmann::json manifest = nlohmann::json::array();
    for (const SynthSample& s : samples) {
        save_rgb((fs::path(dir) / "RGB" / (s.pair.id + ".png")).string(), s.pair.rgb);
        save_gray((fs::path(dir) / "T" / (s.pair.id + ".png")).string(), s.pair.thermal);
        GrayImage gt8 = s.pair.gt;  // {0,1} -> {0,255} on save
        save_gray((fs::path(dir) / "GT" / (s.pair.id + ".png")).string(), gt8);
        manifest.push_back({{"id", s.pair.id}, {"seed", s.seed}, {"regime", s.regime}});
    }
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw DataError("cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

// Loads every pair listed by the GT directory (lexicographic id order).
inline std::vector<SamplePair> load_dataset(const std::string& dir, int target_size) {
    namespace fs = std::filesystem;
    for (const char* sub : {"RGB", "T", "GT"})
        if (!fs::is_directory(fs::path(dir) / sub))
            throw DataError("missing dataset directory: " + (fs::path(dir) / sub).string());
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / "GT"))
        if (e.is_regular_file() && e.path().extension() == ".png")
            ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw DataError("no samples found under " + dir);
    std::vector<SamplePair> out;
    out.reserve(ids.size());
    for (const std::string& id : ids)
        out.push_back(load_pair((fs::path(dir) / "RGB" / (id + ".png")).string(),
                                (fs::path(dir) / "T" / (id + ".png")).string(),
                                (fs::path(dir) / "GT" / (id + ".png")).string(), target_size));
    return out;
}

// Shuffled index batches for one epoch; a pure function of (seed, epoch), so
// a resumed run replays the exact schedule. The trailing partial batch stays.
inline std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed,
                                                   std::int64_t epoch) {
    if (n < 1) throw DataError("empty sample list");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng = seeded_rng({seed, static_cast<std::uint64_t>(epoch) + 0x9e3779b97f4a7c15ULL});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        batches.emplace_back(idx.begin() + start, idx.begin() + end);
    }
    return batches;
}

template <class T>
struct Batch {
    Tensor<T> rgb, thermal, gt;
};

// Stacks the chosen samples into [B,3,S,S] / [B,1,S,S] / [B,1,S,S] tensors.
template <class T>
Batch<T> to_tensors(const std::vector<SamplePair>& samples, const std::vector<int>& pick) {
    if (pick.empty()) throw DataError("empty batch");
    const SamplePair& first = samples[static_cast<std::size_t>(pick[0])];
    const int s = first.gt.h;
    const int b = static_cast<int>(pick.size());
    Batch<T> out;
    out.rgb = Tensor<T>::zeros({b, 3, s, s});
    out.thermal = Tensor<T>::zeros({b, 1, s, s});
    out.gt = Tensor<T>::zeros({b, 1, s, s});
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    for (int i = 0; i < b; ++i) {
        const SamplePair& sp = samples[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])];
        if (sp.gt.h != s || sp.gt.w != s || sp.rgb.h != s || sp.thermal.h != s)
            throw ShapeError("batch mixes sample sizes");
        for (std::size_t j = 0; j < 3 * plane; ++j)
            out.rgb.data()[static_cast<std::size_t>(i) * 3 * plane + j] =
                static_cast<T>(sp.rgb.px[j]);
        for (std::size_t j = 0; j < plane; ++j) {
            out.thermal.data()[static_cast<std::size_t>(i) * plane + j] =
                static_cast<T>(sp.thermal.px[j]);
            out.gt.data()[static_cast<std::size_t>(i) * plane + j] = static_cast<T>(sp.gt.px[j]);
        }
    }
    return out;
}

}  // namespace rsonet

#endif
