// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include "flexprompt/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flexprompt::kernels {

namespace {
Backend g_backend = Backend::openmp;
}

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

#define FP_DISPATCH(fn, ...)                           \
    do {                                               \
        if (g_backend == Backend::serial)              \
            serial::fn(__VA_ARGS__);                   \
        else                                           \
            openmp::fn(__VA_ARGS__);                   \
    } while (0)

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc) {
    FP_DISPATCH(matmul_nn, a, b, c, m, k, n, acc);
}
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc) {
    FP_DISPATCH(matmul_nt, a, b, c, m, k, n, acc);
}
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc) {
    FP_DISPATCH(matmul_tn, a, b, c, m, k, n, acc);
}
void add_bias(const double* x, const double* b, double* y, int64_t rows, int64_t cols) {
    FP_DISPATCH(add_bias, x, b, y, rows, cols);
}
void bias_grad(const double* dy, double* db, int64_t rows, int64_t cols) {
    FP_DISPATCH(bias_grad, dy, db, rows, cols);
}
void gelu_forward(const double* x, double* y, int64_t n) { FP_DISPATCH(gelu_forward, x, y, n); }
void gelu_backward(const double* x, const double* dy, double* dx, int64_t n) {
    FP_DISPATCH(gelu_backward, x, dy, dx, n);
}
void layernorm_forward(const double* x, const double* gamma, const double* beta, double* y,
                       double* mean, double* rstd, int64_t rows, int64_t cols, double eps) {
    FP_DISPATCH(layernorm_forward, x, gamma, beta, y, mean, rstd, rows, cols, eps);
}
void layernorm_backward(const double* x, const double* gamma, const double* mean, const double* rstd,
                        const double* dy, double* dx, double* dgamma, double* dbeta,
                        int64_t rows, int64_t cols) {
    FP_DISPATCH(layernorm_backward, x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, cols);
}
void attention_forward(const double* qkv, double* out, double* probs,
                       int64_t B, int64_t T, int64_t d, int64_t heads) {
    FP_DISPATCH(attention_forward, qkv, out, probs, B, T, d, heads);
}
void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, int64_t B, int64_t T, int64_t d, int64_t heads) {
    FP_DISPATCH(attention_backward, qkv, probs, dout, dqkv, B, T, d, heads);
}
void cdc2d_forward(const double* x, const double* w, const double* bias, double* y,
                   int64_t B, int64_t g, int64_t cin, int64_t cout, double theta) {
    FP_DISPATCH(cdc2d_forward, x, w, bias, y, B, g, cin, cout, theta);
}
void cdc2d_backward(const double* x, const double* w, const double* dy,
                    double* dx, double* dw, double* dbias,
                    int64_t B, int64_t g, int64_t cin, int64_t cout, double theta) {
    FP_DISPATCH(cdc2d_backward, x, w, dy, dx, dw, dbias, B, g, cin, cout, theta);
}
void gap_forward(const double* x, double* y, int64_t B, int64_t g, int64_t c) {
    FP_DISPATCH(gap_forward, x, y, B, g, c);
}
void gap_backward(const double* dy, double* dx, int64_t B, int64_t g, int64_t c) {
    FP_DISPATCH(gap_backward, dy, dx, B, g, c);
}

#undef FP_DISPATCH

}  // namespace flexprompt::kernels
