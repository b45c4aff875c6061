#ifndef RSONET_IMAGE_IO_HPP
#define RSONET_IMAGE_IO_HPP

// 8-bit PNG in/out and scalar bilinear resizing for image-sized planes.
// Pixel values live in [0,1] as float; RGB is stored planar (CHW).

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "rsonet/common.hpp"

namespace rsonet {

struct GrayImage {
    int h = 0, w = 0;
    std::vector<float> px;  // h*w, row-major
};

struct RgbImage {
    int h = 0, w = 0;
    std::vector<float> px;  // 3*h*w, planar R,G,B
};

// Half-pixel-centers bilinear resize of one plane (same convention as the
// tensor op; identity when sizes match).
inline void bilinear_resize_plane(const float* src, int h, int w, float* dst, int oh, int ow) {
    const double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const int y0 = std::min(static_cast<int>(fy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < ow; ++ox) {
            double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const int x0 = std::min(static_cast<int>(fx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            const double v =
                (1 - wy) * ((1 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1]) +
                wy * ((1 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1]);
            dst[oy * ow + ox] = static_cast<float>(v);
        }
    }
}

inline GrayImage resize_gray(const GrayImage& in, int oh, int ow) {
    if (in.h == oh && in.w == ow) return in;
    GrayImage out{oh, ow, std::vector<float>(static_cast<std::size_t>(oh) * ow)};
    bilinear_resize_plane(in.px.data(), in.h, in.w, out.px.data(), oh, ow);
    return out;
}

inline RgbImage resize_rgb(const RgbImage& in, int oh, int ow) {
    if (in.h == oh && in.w == ow) return in;
    RgbImage out{oh, ow, std::vector<float>(3u * oh * ow)};
    for (int c = 0; c < 3; ++c)
        bilinear_resize_plane(in.px.data() + static_cast<std::size_t>(c) * in.h * in.w, in.h, in.w,
                              out.px.data() + static_cast<std::size_t>(c) * oh * ow, oh, ow);
    return out;
}

// Single-channel load. 3/4-channel files are accepted only when all color
// channels agree (replicated-gray), otherwise the file is not a valid
// single-channel source.
inline GrayImage load_gray(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot read image: " + path);
    if (m.depth() != CV_8U) throw DataError("expected 8-bit image: " + path);
    cv::Mat gray;
    if (m.channels() == 1) {
        gray = m;
    } else if (m.channels() == 3 || m.channels() == 4) {
        std::vector<cv::Mat> ch;
        cv::split(m, ch);
        for (int c = 1; c < 3; ++c)
            if (cv::countNonZero(ch[static_cast<std::size_t>(c)] != ch[0]) != 0)
                throw DataError("expected single-channel (or replicated-gray) image: " + path);
        gray = ch[0];
    } else {
        throw DataError("unsupported channel count " + std::to_string(m.channels()) + ": " + path);
    }
    GrayImage out{gray.rows, gray.cols,
                  std::vector<float>(static_cast<std::size_t>(gray.rows) * gray.cols)};
    for (int y = 0; y < gray.rows; ++y)
        for (int x = 0; x < gray.cols; ++x)
            out.px[static_cast<std::size_t>(y) * gray.cols + x] =
                static_cast<float>(gray.at<unsigned char>(y, x)) / 255.0f;
    return out;
}

inline RgbImage load_rgb(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);  // BGR
    if (m.empty()) throw DataError("cannot read image: " + path);
    RgbImage out{m.rows, m.cols, std::vector<float>(3u * m.rows * m.cols)};
    const std::size_t plane = static_cast<std::size_t>(m.rows) * m.cols;
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const cv::Vec3b& bgr = m.at<cv::Vec3b>(y, x);
            const std::size_t i = static_cast<std::size_t>(y) * m.cols + x;
            out.px[i] = static_cast<float>(bgr[2]) / 255.0f;
            out.px[plane + i] = static_cast<float>(bgr[1]) / 255.0f;
            out.px[2 * plane + i] = static_cast<float>(bgr[0]) / 255.0f;
        }
    return out;
}

inline void save_gray(const std::string& path, const GrayImage& img) {
    cv::Mat m(img.h, img.w, CV_8UC1);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const float v = img.px[static_cast<std::size_t>(y) * img.w + x];
            m.at<unsigned char>(y, x) = static_cast<unsigned char>(
                std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    if (!cv::imwrite(path, m)) throw DataError("cannot write image: " + path);
}

inline void save_rgb(const std::string& path, const RgbImage& img) {
    cv::Mat m(img.h, img.w, CV_8UC3);
    const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * img.w + x;
            auto to8 = [&](float v) {
                return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            };
            m.at<cv::Vec3b>(y, x) =
                cv::Vec3b(to8(img.px[2 * plane + i]), to8(img.px[plane + i]), to8(img.px[i]));
        }
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    if (!cv::imwrite(path, m)) throw DataError("cannot write image: " + path);
}

}  // namespace rsonet

#endif
