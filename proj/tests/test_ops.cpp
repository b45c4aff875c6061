#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rsonet/ops.hpp"

using rsonet::Tensor;
using oracle::tensor_from;

namespace {

Tensor<double> rand_tensor(const std::vector<int>& shape, rsonet::Rng& rng, bool grad = false,
                           double lo = -1.0, double hi = 1.0) {
    return tensor_from<double>(shape, oracle::rand_vec(static_cast<std::size_t>(rsonet::numel_of(shape)),
                                                       rng, lo, hi),
                               grad);
}

}  // namespace

TEST_CASE("conv2d matches the nested-loop oracle over many instances") {
    rsonet::Rng rng(7);
    std::uniform_int_distribution<int> pick2(1, 2), pick3(1, 3);
    int instances = 0;
    while (instances < 120) {
        oracle::ConvShape s;
        s.b = pick2(rng);
        s.cin = pick3(rng);
        s.cout = pick3(rng);
        s.k = 2 * std::uniform_int_distribution<int>(0, 2)(rng) + 1;  // 1,3,5
        s.dil = pick3(rng);
        s.stride = pick2(rng);
        s.pad = std::uniform_int_distribution<int>(0, 3)(rng);
        s.h = std::uniform_int_distribution<int>(1, 8)(rng);
        s.w = std::uniform_int_distribution<int>(1, 8)(rng);
        const int span = s.dil * (s.k - 1) + 1;
        if (s.h + 2 * s.pad < span || s.w + 2 * s.pad < span) continue;
        ++instances;

        const std::vector<double> xv =
            oracle::rand_vec(static_cast<std::size_t>(s.b) * s.cin * s.h * s.w, rng);
        const std::vector<double> wv =
            oracle::rand_vec(static_cast<std::size_t>(s.cout) * s.cin * s.k * s.k, rng);
        const std::vector<double> bv = oracle::rand_vec(static_cast<std::size_t>(s.cout), rng);

        Tensor<double> y = rsonet::conv2d(tensor_from<double>({s.b, s.cin, s.h, s.w}, xv),
                                          tensor_from<double>({s.cout, s.cin, s.k, s.k}, wv),
                                          tensor_from<double>({s.cout}, bv), s.stride, s.dil, s.pad);
        const std::vector<double> want = oracle::conv2d(xv, wv, bv, s);
        REQUIRE(y.shape() == std::vector<int>({s.b, s.cout, s.oh(), s.ow()}));
        for (std::size_t i = 0; i < want.size(); ++i)
            REQUIRE_THAT(y.data()[i], Catch::Matchers::WithinAbs(want[i], 1e-6));
    }
}

TEST_CASE("conv2d fixed dilated case 1x2x5x5 k3 d3 p3") {
    rsonet::Rng rng(11);
    oracle::ConvShape s;
    s.b = 1;
    s.cin = 2;
    s.h = 5;
    s.w = 5;
    s.cout = 3;
    s.k = 3;
    s.dil = 3;
    s.stride = 1;
    s.pad = 3;
    const std::vector<double> xv = oracle::rand_vec(50, rng);
    const std::vector<double> wv = oracle::rand_vec(54, rng);
    const std::vector<double> bv = oracle::rand_vec(3, rng);
    Tensor<double> y =
        rsonet::conv2d(tensor_from<double>({1, 2, 5, 5}, xv), tensor_from<double>({3, 2, 3, 3}, wv),
                       tensor_from<double>({3}, bv), 1, 3, 3);
    REQUIRE(y.shape() == std::vector<int>({1, 3, 5, 5}));
    const std::vector<double> want = oracle::conv2d(xv, wv, bv, s);
    for (std::size_t i = 0; i < want.size(); ++i)
        REQUIRE_THAT(y.data()[i], Catch::Matchers::WithinAbs(want[i], 1e-6));
}

TEST_CASE("conv2d identity kernel and zero input") {
    rsonet::Rng rng(3);
    Tensor<double> x = rand_tensor({1, 1, 3, 3}, rng);
    std::vector<double> ident(9, 0.0);
    ident[4] = 1.0;  // center tap
    Tensor<double> y = rsonet::conv2d(x, tensor_from<double>({1, 1, 3, 3}, ident),
                                      tensor_from<double>({1}, {0.0}), 1, 1, 1);
    for (int i = 0; i < 9; ++i) REQUIRE(y.data()[i] == Catch::Approx(x.data()[i]));

    Tensor<double> z = rsonet::conv2d(Tensor<double>::zeros({2, 3, 4, 4}),
                                      rand_tensor({2, 3, 3, 3}, rng),
                                      tensor_from<double>({2}, {0.7, -0.2}), 1, 1, 1);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c)
            for (int p = 0; p < 16; ++p)
                REQUIRE(z.data()[(b * 2 + c) * 16 + p] == Catch::Approx(c == 0 ? 0.7 : -0.2));
}

TEST_CASE("conv2d is linear in its input") {
    rsonet::Rng rng(5);
    using rsonet::conv2d;
    Tensor<float> x = tensor_from<float>({1, 2, 6, 6}, oracle::rand_vec(72, rng));
    Tensor<float> y = tensor_from<float>({1, 2, 6, 6}, oracle::rand_vec(72, rng));
    Tensor<float> w = tensor_from<float>({3, 2, 3, 3}, oracle::rand_vec(54, rng));
    Tensor<float> none;
    const float a = 1.7f, b = -0.6f;
    Tensor<float> lhs =
        conv2d(rsonet::add(rsonet::affine(x, a, 0.f), rsonet::affine(y, b, 0.f)), w, none, 1, 1, 1);
    Tensor<float> rhs = rsonet::add(rsonet::affine(conv2d(x, w, none, 1, 1, 1), a, 0.f),
                                    rsonet::affine(conv2d(y, w, none, 1, 1, 1), b, 0.f));
    for (std::size_t i = 0; i < lhs.data().size(); ++i)
        REQUIRE_THAT(lhs.data()[i], Catch::Matchers::WithinAbs(rhs.data()[i], 1e-5));
}

TEST_CASE("padding rule p = d(k-1)/2 preserves spatial size") {
    rsonet::Rng rng(9);
    const int cases[8][2] = {{1, 1}, {3, 1}, {3, 2}, {3, 3}, {5, 1}, {5, 5}, {7, 1}, {7, 7}};
    for (const auto& kd : cases) {
        const int k = kd[0], d = kd[1], p = d * (k - 1) / 2;
        Tensor<double> x = rand_tensor({1, 1, 9, 11}, rng);
        Tensor<double> w = rand_tensor({1, 1, k, k}, rng);
        Tensor<double> y = rsonet::conv2d(x, w, Tensor<double>(), 1, d, p);
        REQUIRE(y.dim(2) == 9);
        REQUIRE(y.dim(3) == 11);
    }
}

TEST_CASE("conv2d errors name the offending axis") {
    Tensor<double> x = Tensor<double>::zeros({1, 2, 4, 4});
    Tensor<double> w = Tensor<double>::zeros({3, 5, 3, 3});
    try {
        rsonet::conv2d(x, w, Tensor<double>(), 1, 1, 1);
        FAIL("expected ShapeError");
    } catch (const rsonet::ShapeError& e) {
        REQUIRE(std::string(e.what()).find("Cin") != std::string::npos);
    }
    try {
        rsonet::conv2d(x, Tensor<double>::zeros({3, 2, 3, 3}), Tensor<double>::zeros({4}), 1, 1, 1);
        FAIL("expected ShapeError");
    } catch (const rsonet::ShapeError& e) {
        REQUIRE(std::string(e.what()).find("Cout") != std::string::npos);
    }
    REQUIRE_THROWS_AS(rsonet::conv2d(Tensor<double>::zeros({2, 4, 4}), w, Tensor<double>(), 1, 1, 1),
                      rsonet::ShapeError);
    REQUIRE_THROWS_AS(rsonet::conv2d(x, Tensor<double>::zeros({3, 2, 3, 3}), Tensor<double>(), 0, 1, 1),
                      rsonet::ValueError);
}

TEST_CASE("conv2d gradients agree with finite differences") {
    for (std::uint32_t seed = 1; seed <= 10; ++seed) {
        rsonet::Rng rng(seed);
        Tensor<double> x = rand_tensor({2, 2, 5, 5}, rng, true);
        Tensor<double> w = rand_tensor({3, 2, 3, 3}, rng, true);
        Tensor<double> b = rand_tensor({3}, rng, true);
        const int stride = seed % 2 ? 1 : 2, dil = seed % 3 ? 1 : 2;
        oracle::FdReport rep = oracle::fd_check(
            [&] {
                Tensor<double> y = rsonet::conv2d(x, w, b, stride, dil, dil);
                return rsonet::sum_all(rsonet::mul(y, y));
            },
            {x, w, b}, rng);
        REQUIRE(rep.max_err < 1e-4);
    }
}

TEST_CASE("linear matches a plain matmul and differentiates") {
    rsonet::Rng rng(21);
    const int B = 2, L = 5, CI = 4, CO = 3;
    Tensor<double> x = rand_tensor({B, L, CI}, rng, true);
    Tensor<double> w = rand_tensor({CI, CO}, rng, true);
    Tensor<double> b = rand_tensor({CO}, rng, true);
    Tensor<double> y = rsonet::linear(x, w, b);
    REQUIRE(y.shape() == std::vector<int>({B, L, CO}));
    for (int s = 0; s < B; ++s)
        for (int l = 0; l < L; ++l)
            for (int j = 0; j < CO; ++j) {
                double acc = b.data()[j];
                for (int i = 0; i < CI; ++i)
                    acc += x.data()[(s * L + l) * CI + i] * w.data()[i * CO + j];
                REQUIRE_THAT(y.data()[(s * L + l) * CO + j], Catch::Matchers::WithinAbs(acc, 1e-6));
            }

    oracle::FdReport rep = oracle::fd_check(
        [&] {
            Tensor<double> out = rsonet::linear(x, w, b);
            return rsonet::sum_all(rsonet::mul(out, out));
        },
        {x, w, b}, rng);
    REQUIRE(rep.max_err < 1e-4);

    REQUIRE_THROWS_AS(rsonet::linear(x, rand_tensor({CI + 1, CO}, rng), b), rsonet::ShapeError);
    REQUIRE_THROWS_AS(rsonet::linear(x, w, rand_tensor({CO + 2}, rng)), rsonet::ShapeError);
}

TEST_CASE("group_norm matches the per-sample oracle") {
    rsonet::Rng rng(31);
    const int B = 2, C = 3, H = 4, W = 5;
    const double eps = 1e-5;
    const std::vector<double> xv = oracle::rand_vec(B * C * H * W, rng, -2.0, 2.0);
    const std::vector<double> gv = oracle::rand_vec(C, rng, 0.5, 1.5);
    const std::vector<double> bv = oracle::rand_vec(C, rng, -0.5, 0.5);
    Tensor<double> y =
        rsonet::group_norm(tensor_from<double>({B, C, H, W}, xv), tensor_from<double>({C}, gv),
                           tensor_from<double>({C}, bv), eps);
    const std::vector<double> want = oracle::group_norm(xv, gv, bv, B, C, H, W, eps);
    for (std::size_t i = 0; i < want.size(); ++i)
        REQUIRE_THAT(y.data()[i], Catch::Matchers::WithinAbs(want[i], 1e-6));

    // constant input: normalized value is 0, so the output is beta everywhere
    Tensor<double> cy = rsonet::group_norm(Tensor<double>::full({1, C, 2, 2}, 0.37),
                                           tensor_from<double>({C}, gv),
                                           tensor_from<double>({C}, bv), eps);
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < 4; ++p)
            REQUIRE_THAT(cy.data()[c * 4 + p], Catch::Matchers::WithinAbs(bv[c], 1e-6));
}

TEST_CASE("group_norm gradients agree with finite differences") {
    for (std::uint32_t seed = 1; seed <= 10; ++seed) {
        rsonet::Rng rng(seed + 100);
        Tensor<double> x = rand_tensor({2, 3, 3, 3}, rng, true, -1.5, 1.5);
        Tensor<double> g = rand_tensor({3}, rng, true, 0.5, 1.5);
        Tensor<double> b = rand_tensor({3}, rng, true);
        oracle::FdReport rep = oracle::fd_check(
            [&] {
                Tensor<double> y = rsonet::group_norm(x, g, b, 1e-5);
                return rsonet::sum_all(rsonet::mul(y, y));
            },
            {x, g, b}, rng);
        REQUIRE(rep.max_err < 1e-4);
    }
}

TEST_CASE("upsample_bilinear fixture, identity, and constant") {
    Tensor<double> x = tensor_from<double>({1, 1, 2, 2}, {0, 1, 2, 3});
    Tensor<double> y = rsonet::upsample_bilinear(x, 4, 4);
    const std::vector<double> want = oracle::bilinear({0, 1, 2, 3}, 2, 2, 4, 4);
    REQUIRE(y.numel() == 16);
    for (int i = 0; i < 16; ++i)
        REQUIRE_THAT(y.data()[i], Catch::Matchers::WithinAbs(want[i], 1e-6));

    rsonet::Rng rng(41);
    Tensor<double> r = rand_tensor({2, 3, 5, 7}, rng);
    Tensor<double> same = rsonet::upsample_bilinear(r, 5, 7);
    REQUIRE(same.data() == r.data());  // bit-identical

    Tensor<double> c = Tensor<double>::full({1, 1, 3, 3}, 0.42);
    Tensor<double> cu = rsonet::upsample_bilinear(c, 8, 5);
    for (double v : cu.data()) REQUIRE(v == Catch::Approx(0.42));

    // random sizes vs the scalar oracle, including downscale
    for (int trial = 0; trial < 20; ++trial) {
        const int h = std::uniform_int_distribution<int>(1, 6)(rng);
        const int w = std::uniform_int_distribution<int>(1, 6)(rng);
        const int oh = std::uniform_int_distribution<int>(1, 9)(rng);
        const int ow = std::uniform_int_distribution<int>(1, 9)(rng);
        const std::vector<double> src = oracle::rand_vec(static_cast<std::size_t>(h) * w, rng);
        Tensor<double> up =
            rsonet::upsample_bilinear(tensor_from<double>({1, 1, h, w}, src), oh, ow);
        const std::vector<double> ref = oracle::bilinear(src, h, w, oh, ow);
        for (std::size_t i = 0; i < ref.size(); ++i)
            REQUIRE_THAT(up.data()[i], Catch::Matchers::WithinAbs(ref[i], 1e-6));
    }
}

TEST_CASE("upsample_bilinear gradients agree with finite differences") {
    for (std::uint32_t seed = 1; seed <= 10; ++seed) {
        rsonet::Rng rng(seed + 200);
        Tensor<double> x = rand_tensor({1, 2, 3, 4}, rng, true);
        oracle::FdReport rep = oracle::fd_check(
            [&] {
                Tensor<double> y = rsonet::upsample_bilinear(x, 7, 5);
                return rsonet::sum_all(rsonet::mul(y, y));
            },
            {x}, rng);
        REQUIRE(rep.max_err < 1e-4);
    }
}

TEST_CASE("reduce covers all four modes") {
    rsonet::Rng rng(51);
    const int B = 1, C = 3, H = 2, W = 2;
    // well-separated values so max has an unambiguous winner
    std::vector<double> xv(B * C * H * W);
    for (std::size_t i = 0; i < xv.size(); ++i)
        xv[i] = 0.05 * static_cast<double>((i * 7) % 12) + 0.001 * static_cast<double>(i);
    Tensor<double> x = tensor_from<double>({B, C, H, W}, xv);

    Tensor<double> gm = rsonet::reduce(x, rsonet::Reduce::GlobalMax);
    Tensor<double> ga = rsonet::reduce(x, rsonet::Reduce::AvgSpatial);
    Tensor<double> mc = rsonet::reduce(x, rsonet::Reduce::MaxOverChannels);
    Tensor<double> ac = rsonet::reduce(x, rsonet::Reduce::AvgOverChannels);
    REQUIRE(gm.shape() == std::vector<int>({B, C, 1, 1}));
    REQUIRE(ga.shape() == std::vector<int>({B, C, 1, 1}));
    REQUIRE(mc.shape() == std::vector<int>({B, 1, H, W}));
    REQUIRE(ac.shape() == std::vector<int>({B, 1, H, W}));
    for (int c = 0; c < C; ++c) {
        double mx = -1e9, av = 0;
        for (int p = 0; p < H * W; ++p) {
            mx = std::max(mx, xv[c * H * W + p]);
            av += xv[c * H * W + p];
        }
        REQUIRE(gm.data()[c] == Catch::Approx(mx));
        REQUIRE(ga.data()[c] == Catch::Approx(av / (H * W)));
    }
    for (int p = 0; p < H * W; ++p) {
        double mx = -1e9, av = 0;
        for (int c = 0; c < C; ++c) {
            mx = std::max(mx, xv[c * H * W + p]);
            av += xv[c * H * W + p];
        }
        REQUIRE(mc.data()[p] == Catch::Approx(mx));
        REQUIRE(ac.data()[p] == Catch::Approx(av / C));
    }

    // constant input: every mode returns the constant
    Tensor<double> cst = Tensor<double>::full({2, 3, 4, 4}, 0.77);
    for (auto mode : {rsonet::Reduce::GlobalMax, rsonet::Reduce::AvgSpatial,
                      rsonet::Reduce::MaxOverChannels, rsonet::Reduce::AvgOverChannels}) {
        Tensor<double> red = rsonet::reduce(cst, mode);
        for (double v : red.data()) REQUIRE(v == Catch::Approx(0.77));
    }

    // degenerate spatial: global max is the identity
    Tensor<double> tiny = rand_tensor({2, 4, 1, 1}, rng);
    REQUIRE(rsonet::reduce(tiny, rsonet::Reduce::GlobalMax).data() == tiny.data());

    REQUIRE_THROWS_AS(rsonet::reduce(Tensor<double>::zeros({2, 3, 4}), rsonet::Reduce::GlobalMax),
                      rsonet::ShapeError);
}

TEST_CASE("reduce gradients agree with finite differences") {
    for (std::uint32_t seed = 1; seed <= 10; ++seed) {
        rsonet::Rng rng(seed + 300);
        // spread values so no two compete for a max within the fd step
        std::vector<double> vals = oracle::rand_vec(2 * 3 * 2 * 2, rng);
        std::sort(vals.begin(), vals.end());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] += 0.01 * static_cast<double>(i);
        std::shuffle(vals.begin(), vals.end(), rng);
        Tensor<double> x = tensor_from<double>({2, 3, 2, 2}, vals, true);
        for (auto mode : {rsonet::Reduce::GlobalMax, rsonet::Reduce::AvgSpatial,
                          rsonet::Reduce::MaxOverChannels, rsonet::Reduce::AvgOverChannels}) {
            oracle::FdReport rep = oracle::fd_check(
                [&] {
                    Tensor<double> y = rsonet::reduce(x, mode);
                    return rsonet::sum_all(rsonet::mul(y, y));
                },
                {x}, rng);
            REQUIRE(rep.max_err < 1e-4);
        }
    }
}

TEST_CASE("bchw/blc layout round trip") {
    rsonet::Rng rng(61);
    Tensor<double> x = rand_tensor({2, 3, 2, 4}, rng, true);
    Tensor<double> seq = rsonet::bchw_to_blc(x);
    REQUIRE(seq.shape() == std::vector<int>({2, 8, 3}));
    // position (y,x) of channel c lands at seq[b, y*W+x, c]
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < 8; ++p)
                REQUIRE(seq.data()[(b * 8 + p) * 3 + c] ==
                        Catch::Approx(x.data()[(b * 3 + c) * 8 + p]));
    Tensor<double> back = rsonet::blc_to_bchw(seq, 2, 4);
    REQUIRE(back.data() == x.data());

    oracle::FdReport rep = oracle::fd_check(
        [&] {
            Tensor<double> y = rsonet::blc_to_bchw(rsonet::bchw_to_blc(x), 2, 4);
            return rsonet::sum_all(rsonet::mul(y, y));
        },
        {x}, rng);
    REQUIRE(rep.max_err < 1e-4);
}
