// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0
//
// OpenMP kernels. Every output element is written by exactly one thread and
// its reduction runs in a fixed serial order, so results are bitwise
// reproducible for any thread count. Reductions that scatter in the serial
// backend (layernorm dgamma/dbeta, conv dx) are reorganized into owned
// passes instead of atomics.

#include "flexprompt/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flexprompt::kernels::openmp {

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        if (!acc) std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
        const double* arow = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            crow[j] = acc ? crow[j] + s : s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        if (!acc) std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
        for (int64_t kk = 0; kk < k; ++kk) {
            const double aki = a[kk * m + i];
            const double* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

void add_bias(const double* x, const double* b, double* y, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        double* yr = y + i * cols;
        for (int64_t j = 0; j < cols; ++j) yr[j] = xr[j] + b[j];
    }
}

void bias_grad(const double* dy, double* db, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (int64_t i = 0; i < rows; ++i) s += dy[i * cols + j];
        db[j] += s;
    }
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu_one(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
inline double gelu_grad_one(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}
}  // namespace

void gelu_forward(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

void gelu_backward(const double* x, const double* dy, double* dx, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad_one(x[i]);
}

void layernorm_forward(const double* x, const double* gamma, const double* beta, double* y,
                       double* mean, double* rstd, int64_t rows, int64_t cols, double eps) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        double m = 0.0;
        for (int64_t j = 0; j < cols; ++j) m += xr[j];
        m /= static_cast<double>(cols);
        double v = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double dxj = xr[j] - m;
            v += dxj * dxj;
        }
        v /= static_cast<double>(cols);
        const double rs = 1.0 / std::sqrt(v + eps);
        mean[i] = m;
        rstd[i] = rs;
        double* yr = y + i * cols;
        for (int64_t j = 0; j < cols; ++j) yr[j] = gamma[j] * (xr[j] - m) * rs + beta[j];
    }
}

void layernorm_backward(const double* x, const double* gamma, const double* mean, const double* rstd,
                        const double* dy, double* dx, double* dgamma, double* dbeta,
                        int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) {
        const double* xr = x + i * cols;
        const double* dyr = dy + i * cols;
        double* dxr = dx + i * cols;
        const double m = mean[i];
        const double rs = rstd[i];
        double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double xhat = (xr[j] - m) * rs;
            const double dyg = dyr[j] * gamma[j];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
        }
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (int64_t j = 0; j < cols; ++j) {
            const double xhat = (xr[j] - m) * rs;
            const double dyg = dyr[j] * gamma[j];
            dxr[j] += rs * (dyg - inv_n * sum_dyg - xhat * inv_n * sum_dyg_xhat);
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < cols; ++j) {
        double sg = 0.0, sb = 0.0;
        for (int64_t i = 0; i < rows; ++i) {
            const double xhat = (x[i * cols + j] - mean[i]) * rstd[i];
            sg += dy[i * cols + j] * xhat;
            sb += dy[i * cols + j];
        }
        dgamma[j] += sg;
        dbeta[j] += sb;
    }
}

void attention_forward(const double* qkv, double* out, double* probs,
                       int64_t B, int64_t T, int64_t d, int64_t heads) {
    const int64_t hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int64_t stride = 3 * d;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t off = h * hd;
            for (int64_t i = 0; i < T; ++i) {
                const double* qi = qkv + (b * T + i) * stride + off;
                double* prow = probs + ((b * heads + h) * T + i) * T;
                double maxv = -1e300;
                for (int64_t j = 0; j < T; ++j) {
                    const double* kj = qkv + (b * T + j) * stride + d + off;
                    double s = 0.0;
                    for (int64_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    s *= scale;
                    prow[j] = s;
                    if (s > maxv) maxv = s;
                }
                double sum = 0.0;
                for (int64_t j = 0; j < T; ++j) {
                    prow[j] = std::exp(prow[j] - maxv);
                    sum += prow[j];
                }
                const double inv = 1.0 / sum;
                for (int64_t j = 0; j < T; ++j) prow[j] *= inv;
                double* orow = out + (b * T + i) * d + off;
                for (int64_t c = 0; c < hd; ++c) orow[c] = 0.0;
                for (int64_t j = 0; j < T; ++j) {
                    const double p = prow[j];
                    const double* vj = qkv + (b * T + j) * stride + 2 * d + off;
                    for (int64_t c = 0; c < hd; ++c) orow[c] += p * vj[c];
                }
            }
        }
    }
}

void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, int64_t B, int64_t T, int64_t d, int64_t heads) {
    const int64_t hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int64_t stride = 3 * d;
    // (b, h) pairs own disjoint column slices of dqkv rows.
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            std::vector<double> dp(static_cast<size_t>(T));
            const int64_t off = h * hd;
            for (int64_t i = 0; i < T; ++i) {
                const double* doi = dout + (b * T + i) * d + off;
                const double* prow = probs + ((b * heads + h) * T + i) * T;
                double row_dot = 0.0;
                for (int64_t j = 0; j < T; ++j) {
                    const double* vj = qkv + (b * T + j) * stride + 2 * d + off;
                    double* dvj = dqkv + (b * T + j) * stride + 2 * d + off;
                    const double p = prow[j];
                    double s = 0.0;
                    for (int64_t c = 0; c < hd; ++c) {
                        s += doi[c] * vj[c];
                        dvj[c] += p * doi[c];
                    }
                    dp[static_cast<size_t>(j)] = s;
                    row_dot += p * s;
                }
                const double* qi = qkv + (b * T + i) * stride + off;
                double* dqi = dqkv + (b * T + i) * stride + off;
                for (int64_t j = 0; j < T; ++j) {
                    const double ds = prow[j] * (dp[static_cast<size_t>(j)] - row_dot) * scale;
                    const double* kj = qkv + (b * T + j) * stride + d + off;
                    double* dkj = dqkv + (b * T + j) * stride + d + off;
                    for (int64_t c = 0; c < hd; ++c) {
                        dqi[c] += ds * kj[c];
                        dkj[c] += ds * qi[c];
                    }
                }
            }
        }
    }
}

void cdc2d_forward(const double* x, const double* w, const double* bias, double* y,
                   int64_t B, int64_t g, int64_t cin, int64_t cout, double theta) {
    std::vector<double> wsum(static_cast<size_t>(cin * cout), 0.0);
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < cin; ++ci)
        for (int64_t k = 0; k < 9; ++k)
            for (int64_t co = 0; co < cout; ++co) wsum[static_cast<size_t>(ci * cout + co)] += w[(k * cin + ci) * cout + co];

    const int64_t rows = B * g * g;
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t b = r / (g * g);
        const int64_t oy = (r / g) % g;
        const int64_t ox = r % g;
        double* yr = y + r * cout;
        for (int64_t co = 0; co < cout; ++co) yr[co] = bias ? bias[co] : 0.0;
        for (int64_t ky = 0; ky < 3; ++ky) {
            const int64_t iy = oy + ky - 1;
            if (iy < 0 || iy >= g) continue;
            for (int64_t kx = 0; kx < 3; ++kx) {
                const int64_t ix = ox + kx - 1;
                if (ix < 0 || ix >= g) continue;
                const double* xr = x + ((b * g + iy) * g + ix) * cin;
                const double* wk = w + (ky * 3 + kx) * cin * cout;
                for (int64_t ci = 0; ci < cin; ++ci) {
                    const double xv = xr[ci];
                    const double* wr = wk + ci * cout;
                    for (int64_t co = 0; co < cout; ++co) yr[co] += xv * wr[co];
                }
            }
        }
        const double* xc = x + r * cin;
        for (int64_t ci = 0; ci < cin; ++ci) {
            const double txv = theta * xc[ci];
            const double* wsr = wsum.data() + ci * cout;
            for (int64_t co = 0; co < cout; ++co) yr[co] -= txv * wsr[co];
        }
    }
}

void cdc2d_backward(const double* x, const double* w, const double* dy,
                    double* dx, double* dw, double* dbias,
                    int64_t B, int64_t g, int64_t cin, int64_t cout, double theta) {
    std::vector<double> wsum(static_cast<size_t>(cin * cout), 0.0);
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < cin; ++ci)
        for (int64_t k = 0; k < 9; ++k)
            for (int64_t co = 0; co < cout; ++co) wsum[static_cast<size_t>(ci * cout + co)] += w[(k * cin + ci) * cout + co];

    const int64_t cells = g * g;
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < cout; ++co) {
        double s = 0.0;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t p = 0; p < cells; ++p) s += dy[(b * cells + p) * cout + co];
        dbias[co] += s;
    }
    // dx scatters across neighboring cells, so ownership is per sample.
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oy = 0; oy < g; ++oy) {
            for (int64_t ox = 0; ox < g; ++ox) {
                const double* dyr = dy + ((b * g + oy) * g + ox) * cout;
                for (int64_t ky = 0; ky < 3; ++ky) {
                    const int64_t iy = oy + ky - 1;
                    if (iy < 0 || iy >= g) continue;
                    for (int64_t kx = 0; kx < 3; ++kx) {
                        const int64_t ix = ox + kx - 1;
                        if (ix < 0 || ix >= g) continue;
                        double* dxr = dx + ((b * g + iy) * g + ix) * cin;
                        const double* wk = w + (ky * 3 + kx) * cin * cout;
                        for (int64_t ci = 0; ci < cin; ++ci) {
                            const double* wr = wk + ci * cout;
                            double s = 0.0;
                            for (int64_t co = 0; co < cout; ++co) s += wr[co] * dyr[co];
                            dxr[ci] += s;
                        }
                    }
                }
                double* dxc = dx + ((b * g + oy) * g + ox) * cin;
                for (int64_t ci = 0; ci < cin; ++ci) {
                    const double* wsr = wsum.data() + ci * cout;
                    double s = 0.0;
                    for (int64_t co = 0; co < cout; ++co) s += wsr[co] * dyr[co];
                    dxc[ci] -= theta * s;
                }
            }
        }
    }
    std::vector<double> center(static_cast<size_t>(cin * cout), 0.0);
#pragma omp parallel for schedule(static)
    for (int64_t ci = 0; ci < cin; ++ci) {
        double* cr = center.data() + ci * cout;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t p = 0; p < cells; ++p) {
                const double xv = x[(b * cells + p) * cin + ci];
                const double* dyr = dy + (b * cells + p) * cout;
                for (int64_t co = 0; co < cout; ++co) cr[co] += xv * dyr[co];
            }
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t ky = 0; ky < 3; ++ky) {
        for (int64_t kx = 0; kx < 3; ++kx) {
            double* dwk = dw + (ky * 3 + kx) * cin * cout;
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t oy = 0; oy < g; ++oy) {
                    const int64_t iy = oy + ky - 1;
                    if (iy < 0 || iy >= g) continue;
                    for (int64_t ox = 0; ox < g; ++ox) {
                        const int64_t ix = ox + kx - 1;
                        if (ix < 0 || ix >= g) continue;
                        const double* xr = x + ((b * g + iy) * g + ix) * cin;
                        const double* dyr = dy + ((b * g + oy) * g + ox) * cout;
                        for (int64_t ci = 0; ci < cin; ++ci) {
                            const double xv = xr[ci];
                            double* dwr = dwk + ci * cout;
                            for (int64_t co = 0; co < cout; ++co) dwr[co] += xv * dyr[co];
                        }
                    }
                }
            }
            for (int64_t ci = 0; ci < cin; ++ci) {
                const double* cr = center.data() + ci * cout;
                double* dwr = dwk + ci * cout;
                for (int64_t co = 0; co < cout; ++co) dwr[co] -= theta * cr[co];
            }
        }
    }
}

void gap_forward(const double* x, double* y, int64_t B, int64_t g, int64_t c) {
    const int64_t cells = g * g;
    const double inv = 1.0 / static_cast<double>(cells);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        double* yr = y + b * c;
        for (int64_t j = 0; j < c; ++j) yr[j] = 0.0;
        for (int64_t p = 0; p < cells; ++p) {
            const double* xr = x + (b * cells + p) * c;
            for (int64_t j = 0; j < c; ++j) yr[j] += xr[j];
        }
        for (int64_t j = 0; j < c; ++j) yr[j] *= inv;
    }
}

void gap_backward(const double* dy, double* dx, int64_t B, int64_t g, int64_t c) {
    const int64_t cells = g * g;
    const double inv = 1.0 / static_cast<double>(cells);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        const double* dyr = dy + b * c;
        for (int64_t p = 0; p < cells; ++p) {
            double* dxr = dx + (b * cells + p) * c;
            for (int64_t j = 0; j < c; ++j) dxr[j] += dyr[j] * inv;
        }
    }
}

}  // namespace flexprompt::kernels::openmp
