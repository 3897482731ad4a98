// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "flexprompt/kernels.hpp"
#include "flexprompt/rng.hpp"
#include "oracles.hpp"

using namespace flexprompt;
namespace K = flexprompt::kernels;

namespace {

std::vector<double> randn(Rng& rng, int64_t n, double scale = 1.0) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

TEST_CASE("matmul variants match the nested-loop reference") {
    Rng rng(101);
    for (auto [m, k, n] : {std::tuple<int64_t, int64_t, int64_t>{3, 4, 5}, {1, 7, 2}, {8, 8, 8}, {5, 1, 6}}) {
        auto a = randn(rng, m * k);
        auto bn = randn(rng, k * n);
        auto bt = randn(rng, n * k);
        auto at = randn(rng, k * m);
        std::vector<double> c(static_cast<size_t>(m * n)), ref;

        K::matmul_nn(a.data(), bn.data(), c.data(), m, k, n);
        fptest::matmul_nn_ref(a, bn, ref, m, k, n);
        CHECK(fptest::max_abs_diff(c, ref) < 1e-12);

        K::matmul_nt(a.data(), bt.data(), c.data(), m, k, n);
        fptest::matmul_nt_ref(a, bt, ref, m, k, n);
        CHECK(fptest::max_abs_diff(c, ref) < 1e-12);

        K::matmul_tn(at.data(), bn.data(), c.data(), m, k, n);
        fptest::matmul_tn_ref(at, bn, ref, m, k, n);
        CHECK(fptest::max_abs_diff(c, ref) < 1e-12);
    }
}

TEST_CASE("matmul acc=true accumulates into the output") {
    Rng rng(102);
    const int64_t m = 4, k = 3, n = 5;
    auto a = randn(rng, m * k);
    auto b = randn(rng, k * n);
    auto base = randn(rng, m * n);
    auto c = base;
    K::matmul_nn(a.data(), b.data(), c.data(), m, k, n, true);
    std::vector<double> ref;
    fptest::matmul_nn_ref(a, b, ref, m, k, n);
    for (size_t i = 0; i < ref.size(); ++i) ref[i] += base[i];
    CHECK(fptest::max_abs_diff(c, ref) < 1e-12);
}

TEST_CASE("add_bias and bias_grad") {
    Rng rng(103);
    const int64_t rows = 6, cols = 4;
    auto x = randn(rng, rows * cols);
    auto b = randn(rng, cols);
    std::vector<double> y(static_cast<size_t>(rows * cols));
    K::add_bias(x.data(), b.data(), y.data(), rows, cols);
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j)
            CHECK(y[static_cast<size_t>(i * cols + j)] ==
                  doctest::Approx(x[static_cast<size_t>(i * cols + j)] + b[static_cast<size_t>(j)]));

    auto dy = randn(rng, rows * cols);
    std::vector<double> db(static_cast<size_t>(cols), 0.5);
    K::bias_grad(dy.data(), db.data(), rows, cols);
    for (int64_t j = 0; j < cols; ++j) {
        double s = 0.5;
        for (int64_t i = 0; i < rows; ++i) s += dy[static_cast<size_t>(i * cols + j)];
        CHECK(db[static_cast<size_t>(j)] == doctest::Approx(s));
    }
}

TEST_CASE("gelu forward values and finite-difference gradient") {
    // 0.5*x*(1+erf(x/sqrt(2))) at a few hand-checked points
    std::vector<double> x = {0.0, 1.0, -1.0, 2.5, -0.3};
    std::vector<double> y(x.size());
    K::gelu_forward(x.data(), y.data(), static_cast<int64_t>(x.size()));
    CHECK(y[0] == doctest::Approx(0.0));
    CHECK(y[1] == doctest::Approx(0.8413447460685429));
    CHECK(y[2] == doctest::Approx(-0.15865525393145707));

    Rng rng(104);
    auto xs = randn(rng, 64);
    auto dy = randn(rng, 64);
    std::vector<double> dx(64, 0.0);
    K::gelu_backward(xs.data(), dy.data(), dx.data(), 64);
    for (size_t i = 0; i < 8; ++i) {
        auto loss = [&] {
            std::vector<double> yy(64);
            K::gelu_forward(xs.data(), yy.data(), 64);
            double s = 0.0;
            for (size_t j = 0; j < 64; ++j) s += yy[j] * dy[j];
            return s;
        };
        const double fd = fptest::fd_grad(xs, i, loss);
        CHECK(std::abs(dx[i] - fd) < 1e-7);
    }
}

TEST_CASE("layernorm forward matches reference, backward matches finite differences") {
    Rng rng(105);
    const int64_t rows = 5, cols = 7;
    const double eps = 1e-6;
    auto x = randn(rng, rows * cols);
    auto gamma = randn(rng, cols, 0.5);
    for (auto& g : gamma) g += 1.0;
    auto beta = randn(rng, cols, 0.2);
    std::vector<double> y(static_cast<size_t>(rows * cols)), mean(rows), rstd(rows), ref;
    K::layernorm_forward(x.data(), gamma.data(), beta.data(), y.data(), mean.data(), rstd.data(), rows, cols, eps);
    fptest::layernorm_ref(x, gamma, beta, ref, rows, cols, eps);
    CHECK(fptest::max_abs_diff(y, ref) < 1e-12);

    auto dy = randn(rng, rows * cols);
    std::vector<double> dx(static_cast<size_t>(rows * cols), 0.0), dgamma(cols, 0.0), dbeta(cols, 0.0);
    K::layernorm_backward(x.data(), gamma.data(), mean.data(), rstd.data(), dy.data(),
                          dx.data(), dgamma.data(), dbeta.data(), rows, cols);

    auto loss_with = [&](const std::vector<double>& xx, const std::vector<double>& gg, const std::vector<double>& bb) {
        std::vector<double> yy(static_cast<size_t>(rows * cols)), mm(rows), rr(rows);
        K::layernorm_forward(xx.data(), gg.data(), bb.data(), yy.data(), mm.data(), rr.data(), rows, cols, eps);
        double s = 0.0;
        for (size_t j = 0; j < yy.size(); ++j) s += yy[j] * dy[j];
        return s;
    };
    for (size_t i = 0; i < 10; ++i) {
        const double fd = fptest::fd_grad(x, i, [&] { return loss_with(x, gamma, beta); });
        CHECK(std::abs(dx[i] - fd) < 1e-6);
    }
    for (size_t j = 0; j < static_cast<size_t>(cols); ++j) {
        const double fdg = fptest::fd_grad(gamma, j, [&] { return loss_with(x, gamma, beta); });
        const double fdb = fptest::fd_grad(beta, j, [&] { return loss_with(x, gamma, beta); });
        CHECK(std::abs(dgamma[j] - fdg) < 1e-6);
        CHECK(std::abs(dbeta[j] - fdb) < 1e-6);
    }
}

TEST_CASE("attention forward matches reference") {
    Rng rng(106);
    const int64_t B = 2, T = 5, d = 8, heads = 2;
    auto qkv = randn(rng, B * T * 3 * d);
    std::vector<double> out(static_cast<size_t>(B * T * d)), probs(static_cast<size_t>(B * heads * T * T)), ref;
    K::attention_forward(qkv.data(), out.data(), probs.data(), B, T, d, heads);
    fptest::attention_ref(qkv, ref, B, T, d, heads);
    CHECK(fptest::max_abs_diff(out, ref) < 1e-12);

    // probs rows sum to 1
    for (int64_t r = 0; r < B * heads * T; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < T; ++j) s += probs[static_cast<size_t>(r * T + j)];
        CHECK(s == doctest::Approx(1.0));
    }
}

TEST_CASE("attention backward matches finite differences") {
    Rng rng(107);
    const int64_t B = 1, T = 4, d = 6, heads = 3;
    auto qkv = randn(rng, B * T * 3 * d, 0.7);
    auto dout = randn(rng, B * T * d);
    std::vector<double> out(static_cast<size_t>(B * T * d)), probs(static_cast<size_t>(B * heads * T * T));
    K::attention_forward(qkv.data(), out.data(), probs.data(), B, T, d, heads);
    std::vector<double> dqkv(qkv.size(), 0.0);
    K::attention_backward(qkv.data(), probs.data(), dout.data(), dqkv.data(), B, T, d, heads);

    auto loss = [&] {
        std::vector<double> oo(out.size()), pp(probs.size());
        K::attention_forward(qkv.data(), oo.data(), pp.data(), B, T, d, heads);
        double s = 0.0;
        for (size_t j = 0; j < oo.size(); ++j) s += oo[j] * dout[j];
        return s;
    };
    for (size_t i = 0; i < qkv.size(); i += 5) {
        const double fd = fptest::fd_grad(qkv, i, loss);
        CHECK(std::abs(dqkv[i] - fd) < 1e-6);
    }
}

TEST_CASE("cdc2d forward matches the nested-loop reference") {
    Rng rng(108);
    for (int inst = 0; inst < 10; ++inst) {
        const int64_t B = 1 + static_cast<int64_t>(rng.uniform_index(3));
        const int64_t g = 2 + static_cast<int64_t>(rng.uniform_index(4));
        const int64_t cin = 1 + static_cast<int64_t>(rng.uniform_index(4));
        const int64_t cout = 1 + static_cast<int64_t>(rng.uniform_index(4));
        const double theta = rng.uniform();
        auto x = randn(rng, B * g * g * cin);
        auto w = randn(rng, 9 * cin * cout);
        auto bias = randn(rng, cout);
        std::vector<double> y(static_cast<size_t>(B * g * g * cout)), ref;
        K::cdc2d_forward(x.data(), w.data(), bias.data(), y.data(), B, g, cin, cout, theta);
        fptest::cdc2d_ref(x, w, &bias, ref, B, g, cin, cout, theta);
        CHECK(fptest::max_abs_diff(y, ref) < 1e-10);
    }
}

TEST_CASE("cdc2d theta properties") {
    Rng rng(109);
    const int64_t B = 2, g = 4, cin = 3, cout = 5;
    auto x = randn(rng, B * g * g * cin);
    auto w = randn(rng, 9 * cin * cout);
    auto bias = randn(rng, cout);
    const size_t ysz = static_cast<size_t>(B * g * g * cout);
    std::vector<double> y0(ysz), y1(ysz), yt(ysz), ref;

    // theta = 0 reduces to a vanilla convolution
    K::cdc2d_forward(x.data(), w.data(), bias.data(), y0.data(), B, g, cin, cout, 0.0);
    fptest::cdc2d_ref(x, w, &bias, ref, B, g, cin, cout, 0.0);
    CHECK(fptest::max_abs_diff(y0, ref) < 1e-10);

    // affine in theta: y(t) = y(0) + t*(y(1) - y(0))
    K::cdc2d_forward(x.data(), w.data(), bias.data(), y1.data(), B, g, cin, cout, 1.0);
    const double t = 0.37;
    K::cdc2d_forward(x.data(), w.data(), bias.data(), yt.data(), B, g, cin, cout, t);
    for (size_t i = 0; i < ysz; ++i)
        CHECK(yt[i] == doctest::Approx(y0[i] + t * (y1[i] - y0[i])).epsilon(1e-10));
}

TEST_CASE("cdc2d backward matches finite differences") {
    Rng rng(110);
    const int64_t B = 2, g = 3, cin = 2, cout = 3;
    const double theta = 0.5;
    auto x = randn(rng, B * g * g * cin);
    auto w = randn(rng, 9 * cin * cout);
    auto bias = randn(rng, cout);
    auto dy = randn(rng, B * g * g * cout);

    std::vector<double> dx(x.size(), 0.0), dw(w.size(), 0.0), dbias(bias.size(), 0.0);
    K::cdc2d_backward(x.data(), w.data(), dy.data(), dx.data(), dw.data(), dbias.data(), B, g, cin, cout, theta);

    auto loss = [&] {
        std::vector<double> yy(static_cast<size_t>(B * g * g * cout));
        K::cdc2d_forward(x.data(), w.data(), bias.data(), yy.data(), B, g, cin, cout, theta);
        double s = 0.0;
        for (size_t j = 0; j < yy.size(); ++j) s += yy[j] * dy[j];
        return s;
    };
    for (size_t i = 0; i < x.size(); i += 3) CHECK(std::abs(dx[i] - fptest::fd_grad(x, i, loss)) < 1e-6);
    for (size_t i = 0; i < w.size(); i += 7) CHECK(std::abs(dw[i] - fptest::fd_grad(w, i, loss)) < 1e-6);
    for (size_t i = 0; i < bias.size(); ++i) CHECK(std::abs(dbias[i] - fptest::fd_grad(bias, i, loss)) < 1e-6);
}

TEST_CASE("gap forward and backward") {
    Rng rng(111);
    const int64_t B = 3, g = 4, c = 5;
    auto x = randn(rng, B * g * g * c);
    std::vector<double> y(static_cast<size_t>(B * c));
    K::gap_forward(x.data(), y.data(), B, g, c);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < c; ++j) {
            double s = 0.0;
            for (int64_t p = 0; p < g * g; ++p) s += x[static_cast<size_t>((b * g * g + p) * c + j)];
            CHECK(y[static_cast<size_t>(b * c + j)] == doctest::Approx(s / (g * g)));
        }

    auto dy = randn(rng, B * c);
    std::vector<double> dx(x.size(), 0.0);
    K::gap_backward(dy.data(), dx.data(), B, g, c);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < g * g; ++p)
            for (int64_t j = 0; j < c; ++j)
                CHECK(dx[static_cast<size_t>((b * g * g + p) * c + j)] ==
                      doctest::Approx(dy[static_cast<size_t>(b * c + j)] / (g * g)));
}

TEST_CASE("serial and openmp backends agree") {
    Rng rng(112);
    const int64_t B = 2, T = 6, d = 8, heads = 2;
    const int64_t g = 4, cin = 3, cout = 5;
    namespace S = K::serial;
    namespace P = K::openmp;

    {
        const int64_t m = 17, k = 9, n = 13;
        auto a = randn(rng, m * k);
        auto b = randn(rng, k * n);
        std::vector<double> cs(static_cast<size_t>(m * n)), cp(cs.size());
        S::matmul_nn(a.data(), b.data(), cs.data(), m, k, n, false);
        P::matmul_nn(a.data(), b.data(), cp.data(), m, k, n, false);
        CHECK(fptest::max_abs_diff(cs, cp) < 1e-13);
    }
    {
        auto qkv = randn(rng, B * T * 3 * d);
        std::vector<double> os(static_cast<size_t>(B * T * d)), op(os.size());
        std::vector<double> ps(static_cast<size_t>(B * heads * T * T)), pp(ps.size());
        S::attention_forward(qkv.data(), os.data(), ps.data(), B, T, d, heads);
        P::attention_forward(qkv.data(), op.data(), pp.data(), B, T, d, heads);
        CHECK(fptest::max_abs_diff(os, op) < 1e-13);

        auto dout = randn(rng, B * T * d);
        std::vector<double> dqs(qkv.size(), 0.0), dqp(qkv.size(), 0.0);
        S::attention_backward(qkv.data(), ps.data(), dout.data(), dqs.data(), B, T, d, heads);
        P::attention_backward(qkv.data(), pp.data(), dout.data(), dqp.data(), B, T, d, heads);
        CHECK(fptest::max_abs_diff(dqs, dqp) < 1e-13);
    }
    {
        auto x = randn(rng, B * g * g * cin);
        auto w = randn(rng, 9 * cin * cout);
        auto bias = randn(rng, cout);
        std::vector<double> ys(static_cast<size_t>(B * g * g * cout)), yp(ys.size());
        S::cdc2d_forward(x.data(), w.data(), bias.data(), ys.data(), B, g, cin, cout, 0.7);
        P::cdc2d_forward(x.data(), w.data(), bias.data(), yp.data(), B, g, cin, cout, 0.7);
        CHECK(fptest::max_abs_diff(ys, yp) < 1e-13);

        auto dy = randn(rng, B * g * g * cout);
        std::vector<double> dxs(x.size(), 0.0), dws(w.size(), 0.0), dbs(bias.size(), 0.0);
        std::vector<double> dxp(x.size(), 0.0), dwp(w.size(), 0.0), dbp(bias.size(), 0.0);
        S::cdc2d_backward(x.data(), w.data(), dy.data(), dxs.data(), dws.data(), dbs.data(), B, g, cin, cout, 0.7);
        P::cdc2d_backward(x.data(), w.data(), dy.data(), dxp.data(), dwp.data(), dbp.data(), B, g, cin, cout, 0.7);
        CHECK(fptest::max_abs_diff(dxs, dxp) < 1e-13);
        CHECK(fptest::max_abs_diff(dws, dwp) < 1e-13);
        CHECK(fptest::max_abs_diff(dbs, dbp) < 1e-13);
    }
    {
        const int64_t rows = 9, cols = 11;
        auto x = randn(rng, rows * cols);
        auto gamma = randn(rng, cols);
        auto beta = randn(rng, cols);
        std::vector<double> ys(static_cast<size_t>(rows * cols)), yp(ys.size());
        std::vector<double> ms(rows), rs(rows), mp(rows), rp(rows);
        S::layernorm_forward(x.data(), gamma.data(), beta.data(), ys.data(), ms.data(), rs.data(), rows, cols, 1e-6);
        P::layernorm_forward(x.data(), gamma.data(), beta.data(), yp.data(), mp.data(), rp.data(), rows, cols, 1e-6);
        CHECK(fptest::max_abs_diff(ys, yp) < 1e-13);

        auto dy = randn(rng, rows * cols);
        std::vector<double> dxs(x.size(), 0.0), dgs(cols, 0.0), dbs(cols, 0.0);
        std::vector<double> dxp(x.size(), 0.0), dgp(cols, 0.0), dbp(cols, 0.0);
        S::layernorm_backward(x.data(), gamma.data(), ms.data(), rs.data(), dy.data(), dxs.data(), dgs.data(), dbs.data(), rows, cols);
        P::layernorm_backward(x.data(), gamma.data(), mp.data(), rp.data(), dy.data(), dxp.data(), dgp.data(), dbp.data(), rows, cols);
        CHECK(fptest::max_abs_diff(dxs, dxp) < 1e-13);
        CHECK(fptest::max_abs_diff(dgs, dgp) < 1e-13);
        CHECK(fptest::max_abs_diff(dbs, dbp) < 1e-13);
    }
}

TEST_CASE("openmp backend is bitwise reproducible run to run") {
    Rng rng(113);
    const int64_t m = 23, k = 17, n = 19;
    auto a = randn(rng, m * k);
    auto b = randn(rng, k * n);
    std::vector<double> c1(static_cast<size_t>(m * n)), c2(c1.size());
    K::openmp::matmul_nn(a.data(), b.data(), c1.data(), m, k, n, false);
    K::openmp::matmul_nn(a.data(), b.data(), c2.data(), m, k, n, false);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0);

    const int64_t B = 2, T = 7, d = 8, heads = 4;
    auto qkv = randn(rng, B * T * 3 * d);
    std::vector<double> o1(static_cast<size_t>(B * T * d)), o2(o1.size());
    std::vector<double> p1(static_cast<size_t>(B * heads * T * T)), p2(p1.size());
    K::openmp::attention_forward(qkv.data(), o1.data(), p1.data(), B, T, d, heads);
    K::openmp::attention_forward(qkv.data(), o2.data(), p2.data(), B, T, d, heads);
    CHECK(std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(double)) == 0);
}
