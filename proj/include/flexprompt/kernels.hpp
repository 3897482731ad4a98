// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace flexprompt::kernels {

/// Every kernel has a serial reference implementation and an OpenMP one.
/// The OpenMP variants assign each output element to exactly one thread and
/// keep the per-element reduction order identical to the serial code, so
/// results are schedule- and thread-count-independent.
enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);

/// Number of threads the openmp backend will use (1 when built without OpenMP).
int max_threads();

// ---- matmul family ----------------------------------------------------
// c[m,n] = a[m,k] @ b[k,n]          (nn)
// c[m,n] = a[m,k] @ b[n,k]^T        (nt)
// c[m,n] = a[k,m]^T @ b[k,n]        (tn)
// acc=true accumulates into c instead of overwriting.

namespace serial {
void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc);

void add_bias(const double* x, const double* b, double* y, int64_t rows, int64_t cols);
void bias_grad(const double* dy, double* db, int64_t rows, int64_t cols);

void gelu_forward(const double* x, double* y, int64_t n);
void gelu_backward(const double* x, const double* dy, double* dx, int64_t n);

// y = gamma * (x - mean)/sqrt(var + eps) + beta, per row; saves rstd/mean for backward.
void layernorm_forward(const double* x, const double* gamma, const double* beta, double* y,
                       double* mean, double* rstd, int64_t rows, int64_t cols, double eps);
void layernorm_backward(const double* x, const double* gamma, const double* mean, const double* rstd,
                        const double* dy, double* dx, double* dgamma, double* dbeta,
                        int64_t rows, int64_t cols);

// Multi-head self-attention over a packed qkv matrix [B*T, 3d];
// out [B*T, d]; probs scratch [B*H*T*T] is written by forward, read by backward.
void attention_forward(const double* qkv, double* out, double* probs,
                       int64_t B, int64_t T, int64_t d, int64_t heads);
void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, int64_t B, int64_t T, int64_t d, int64_t heads);

// Central difference convolution, 3x3, zero same-padding, NHWC layout.
// y(p0) = sum_k w(k) x(p0+k) - theta * x(p0) * sum_k w(k) + b
// The subtraction term always uses the full-kernel weight sum.
void cdc2d_forward(const double* x, const double* w, const double* bias, double* y,
                   int64_t B, int64_t g, int64_t cin, int64_t cout, double theta);
void cdc2d_backward(const double* x, const double* w, const double* dy,
                    double* dx, double* dw, double* dbias,
                    int64_t B, int64_t g, int64_t cin, int64_t cout, double theta);

// Global average pool NHWC [B,g,g,C] -> [B,C].
void gap_forward(const double* x, double* y, int64_t B, int64_t g, int64_t c);
void gap_backward(const double* dy, double* dx, int64_t B, int64_t g, int64_t c);
}  // namespace serial

namespace openmp {
void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc);

void add_bias(const double* x, const double* b, double* y, int64_t rows, int64_t cols);
void bias_grad(const double* dy, double* db, int64_t rows, int64_t cols);

void gelu_forward(const double* x, double* y, int64_t n);
void gelu_backward(const double* x, const double* dy, double* dx, int64_t n);

void layernorm_forward(const double* x, const double* gamma, const double* beta, double* y,
                       double* mean, double* rstd, int64_t rows, int64_t cols, double eps);
void layernorm_backward(const double* x, const double* gamma, const double* mean, const double* rstd,
                        const double* dy, double* dx, double* dgamma, double* dbeta,
                        int64_t rows, int64_t cols);

void attention_forward(const double* qkv, double* out, double* probs,
                       int64_t B, int64_t T, int64_t d, int64_t heads);
void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, int64_t B, int64_t T, int64_t d, int64_t heads);

void cdc2d_forward(const double* x, const double* w, const double* bias, double* y,
                   int64_t B, int64_t g, int64_t cin, int64_t cout, double theta);
void cdc2d_backward(const double* x, const double* w, const double* dy,
                    double* dx, double* dw, double* dbias,
                    int64_t B, int64_t g, int64_t cin, int64_t cout, double theta);

void gap_forward(const double* x, double* y, int64_t B, int64_t g, int64_t c);
void gap_backward(const double* dy, double* dx, int64_t B, int64_t g, int64_t c);
}  // namespace openmp

// ---- dispatching wrappers (respect backend()) --------------------------

void matmul_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc = false);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc = false);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool acc = false);
void add_bias(const double* x, const double* b, double* y, int64_t rows, int64_t cols);
void bias_grad(const double* dy, double* db, int64_t rows, int64_t cols);
void gelu_forward(const double* x, double* y, int64_t n);
void gelu_backward(const double* x, const double* dy, double* dx, int64_t n);
void layernorm_forward(const double* x, const double* gamma, const double* beta, double* y,
                       double* mean, double* rstd, int64_t rows, int64_t cols, double eps);
void layernorm_backward(const double* x, const double* gamma, const double* mean, const double* rstd,
                        const double* dy, double* dx, double* dgamma, double* dbeta,
                        int64_t rows, int64_t cols);
void attention_forward(const double* qkv, double* out, double* probs,
                       int64_t B, int64_t T, int64_t d, int64_t heads);
void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, int64_t B, int64_t T, int64_t d, int64_t heads);
void cdc2d_forward(const double* x, const double* w, const double* bias, double* y,
                   int64_t B, int64_t g, int64_t cin, int64_t cout, double theta);
void cdc2d_backward(const double* x, const double* w, const double* dy,
                    double* dx, double* dw, double* dbias,
                    int64_t B, int64_t g, int64_t cin, int64_t cout, double theta);
void gap_forward(const double* x, double* y, int64_t B, int64_t g, int64_t c);
void gap_backward(const double* dy, double* dx, int64_t B, int64_t g, int64_t c);

}  // namespace flexprompt::kernels
