#pragma once

#include <cstdint>

namespace bnn::kernels {

// Kernel dispatch mode. Parallel is the production path (OpenMP); Serial is
// the reference implementation kept for testing and benchmarking against.
enum class Mode { Serial, Parallel };

Mode mode();
void set_mode(Mode m);

struct ConvGeometry {
    int batch, c_in, h, w;
    int c_out, kh, kw;
    int stride, pad;

    int out_h() const { return (h + 2 * pad - kh) / stride + 1; }
    int out_w() const { return (w + 2 * pad - kw) / stride + 1; }
};

// y[B,Co,Ho,Wo] = cross-correlation of x[B,Ci,H,W] with wgt[Co,Ci,Kh,Kw],
// zero padding. Dispatching entry plus both variants for tests/bench.
template <typename T>
void conv2d_forward(const T* x, const T* wgt, T* y, const ConvGeometry& g);
template <typename T>
void conv2d_forward_serial(const T* x, const T* wgt, T* y, const ConvGeometry& g);
template <typename T>
void conv2d_forward_omp(const T* x, const T* wgt, T* y, const ConvGeometry& g);

// dx += grad wrt input, dw += grad wrt weights. Deterministic for any thread
// count: dx is per-image independent, dw uses per-image partials reduced in
// fixed batch order.
template <typename T>
void conv2d_backward(const T* x, const T* wgt, const T* dy, T* dx, T* dw,
                     const ConvGeometry& g);
template <typename T>
void conv2d_backward_serial(const T* x, const T* wgt, const T* dy, T* dx, T* dw,
                            const ConvGeometry& g);
template <typename T>
void conv2d_backward_omp(const T* x, const T* wgt, const T* dy, T* dx, T* dw,
                         const ConvGeometry& g);

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_acc(int m, int k, int n, const T* a, const T* b, T* c);

// C[M,N] += A[M,K] * B[N,K]^T   (rows of A dotted with rows of B)
template <typename T>
void gemm_abt_acc(int m, int n, int k, const T* a, const T* b, T* c);

}  // namespace bnn::kernels
