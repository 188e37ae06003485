#include "bnn/kernels.hpp"

#include <omp.h>

#include <vector>

namespace bnn::kernels {

namespace {
Mode g_mode = Mode::Parallel;
}

Mode mode() { return g_mode; }
void set_mode(Mode m) { g_mode = m; }

template <typename T>
void gemm_acc(int m, int k, int n, const T* a, const T* b, T* c) {
    // saxpy form: the inner loop over n vectorizes without reassociation,
    // so results do not depend on the compiler's reduction strategy.
    constexpr int NB = 512;
    for (int n0 = 0; n0 < n; n0 += NB) {
        const int n1 = n0 + NB < n ? n0 + NB : n;
        for (int i = 0; i < m; ++i) {
            T* crow = c + (int64_t)i * n;
            const T* arow = a + (int64_t)i * k;
            for (int p = 0; p < k; ++p) {
                const T av = arow[p];
                const T* brow = b + (int64_t)p * n;
                for (int j = n0; j < n1; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void gemm_abt_acc(int m, int n, int k, const T* a, const T* b, T* c) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + (int64_t)i * k;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + (int64_t)j * k;
            // fixed 4-lane accumulation: fast and bit-reproducible
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            int p = 0;
            for (; p + 4 <= k; p += 4) {
                s0 += arow[p] * brow[p];
                s1 += arow[p + 1] * brow[p + 1];
                s2 += arow[p + 2] * brow[p + 2];
                s3 += arow[p + 3] * brow[p + 3];
            }
            for (; p < k; ++p) s0 += arow[p] * brow[p];
            c[(int64_t)i * n + j] += (s0 + s1) + (s2 + s3);
        }
    }
}

namespace {

template <typename T>
void im2col(const T* x, T* col, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    const int p_total = oh * ow;
    int kidx = 0;
    for (int ci = 0; ci < g.c_in; ++ci) {
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx, ++kidx) {
                T* crow = col + (int64_t)kidx * p_total;
                const T* xplane = x + (int64_t)ci * g.h * g.w;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) {
                        for (int ox = 0; ox < ow; ++ox) crow[oy * ow + ox] = 0;
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        crow[oy * ow + ox] =
                            (ix >= 0 && ix < g.w) ? xplane[iy * g.w + ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* col, T* dx, const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    const int p_total = oh * ow;
    int kidx = 0;
    for (int ci = 0; ci < g.c_in; ++ci) {
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx, ++kidx) {
                const T* crow = col + (int64_t)kidx * p_total;
                T* xplane = dx + (int64_t)ci * g.h * g.w;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) xplane[iy * g.w + ix] += crow[oy * ow + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void forward_one_image(const T* x, const T* wgt, T* y, T* col, const ConvGeometry& g) {
    const int p_total = g.out_h() * g.out_w();
    const int k_total = g.c_in * g.kh * g.kw;
    im2col(x, col, g);
    for (int64_t i = 0; i < (int64_t)g.c_out * p_total; ++i) y[i] = 0;
    gemm_acc(g.c_out, k_total, p_total, wgt, col, y);
}

// dx for one image plus this image's dw contribution into dw_part.
// Either output may be null when that gradient is not needed.
template <typename T>
void backward_one_image(const T* x, const T* wt_t, const T* dy, T* dx, T* dw_part,
                        T* col, T* dcol, const ConvGeometry& g) {
    const int p_total = g.out_h() * g.out_w();
    const int k_total = g.c_in * g.kh * g.kw;

    if (dw_part) {
        im2col(x, col, g);
        gemm_abt_acc(g.c_out, k_total, p_total, dy, col, dw_part);
    }
    if (dx) {
        for (int64_t i = 0; i < (int64_t)k_total * p_total; ++i) dcol[i] = 0;
        gemm_acc(k_total, g.c_out, p_total, wt_t, dy, dcol);
        col2im_acc(dcol, dx, g);
    }
}

}  // namespace

template <typename T>
void conv2d_forward_serial(const T* x, const T* wgt, T* y, const ConvGeometry& g) {
    // direct loops, the reference the parallel path is tested against
    const int oh = g.out_h(), ow = g.out_w();
    for (int b = 0; b < g.batch; ++b) {
        for (int co = 0; co < g.c_out; ++co) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    T acc = 0;
                    for (int ci = 0; ci < g.c_in; ++ci) {
                        for (int ky = 0; ky < g.kh; ++ky) {
                            const int iy = oy * g.stride - g.pad + ky;
                            if (iy < 0 || iy >= g.h) continue;
                            for (int kx = 0; kx < g.kw; ++kx) {
                                const int ix = ox * g.stride - g.pad + kx;
                                if (ix < 0 || ix >= g.w) continue;
                                acc += x[(((int64_t)b * g.c_in + ci) * g.h + iy) * g.w + ix] *
                                       wgt[(((int64_t)co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                            }
                        }
                    }
                    y[(((int64_t)b * g.c_out + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_forward_omp(const T* x, const T* wgt, T* y, const ConvGeometry& g) {
    const int64_t x_stride = (int64_t)g.c_in * g.h * g.w;
    const int64_t y_stride = (int64_t)g.c_out * g.out_h() * g.out_w();
    const int64_t col_size = (int64_t)g.c_in * g.kh * g.kw * g.out_h() * g.out_w();
#pragma omp parallel
    {
        std::vector<T> col(col_size);
#pragma omp for schedule(static)
        for (int b = 0; b < g.batch; ++b) {
            forward_one_image(x + b * x_stride, wgt, y + b * y_stride, col.data(), g);
        }
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* wgt, T* y, const ConvGeometry& g) {
    if (g_mode == Mode::Serial)
        conv2d_forward_serial(x, wgt, y, g);
    else
        conv2d_forward_omp(x, wgt, y, g);
}

template <typename T>
void conv2d_backward_serial(const T* x, const T* wgt, const T* dy, T* dx, T* dw,
                            const ConvGeometry& g) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int b = 0; b < g.batch; ++b) {
        for (int co = 0; co < g.c_out; ++co) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const T gy = dy[(((int64_t)b * g.c_out + co) * oh + oy) * ow + ox];
                    for (int ci = 0; ci < g.c_in; ++ci) {
                        for (int ky = 0; ky < g.kh; ++ky) {
                            const int iy = oy * g.stride - g.pad + ky;
                            if (iy < 0 || iy >= g.h) continue;
                            for (int kx = 0; kx < g.kw; ++kx) {
                                const int ix = ox * g.stride - g.pad + kx;
                                if (ix < 0 || ix >= g.w) continue;
                                const int64_t xi =
                                    (((int64_t)b * g.c_in + ci) * g.h + iy) * g.w + ix;
                                const int64_t wi =
                                    (((int64_t)co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                                if (dx) dx[xi] += gy * wgt[wi];
                                if (dw) dw[wi] += gy * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_omp(const T* x, const T* wgt, const T* dy, T* dx, T* dw,
                         const ConvGeometry& g) {
    const int p_total = g.out_h() * g.out_w();
    const int k_total = g.c_in * g.kh * g.kw;
    const int64_t x_stride = (int64_t)g.c_in * g.h * g.w;
    const int64_t y_stride = (int64_t)g.c_out * p_total;
    const int64_t w_size = (int64_t)g.c_out * k_total;

    // W^T once, used by every image's dcol gemm
    std::vector<T> wt_t;
    if (dx) {
        wt_t.resize((size_t)w_size);
        for (int co = 0; co < g.c_out; ++co)
            for (int p = 0; p < k_total; ++p)
                wt_t[(int64_t)p * g.c_out + co] = wgt[(int64_t)co * k_total + p];
    }

    std::vector<T> dw_parts;
    if (dw) dw_parts.assign((size_t)g.batch * w_size, T(0));

#pragma omp parallel
    {
        std::vector<T> col((size_t)k_total * p_total);
        std::vector<T> dcol(dx ? (size_t)k_total * p_total : 0);
#pragma omp for schedule(static)
        for (int b = 0; b < g.batch; ++b) {
            backward_one_image(x + b * x_stride, wt_t.data(), dy + b * y_stride,
                               dx ? dx + b * x_stride : nullptr,
                               dw ? dw_parts.data() + b * w_size : nullptr, col.data(),
                               dcol.data(), g);
        }
    }

    // fixed-order reduction over images keeps dw thread-count independent
    if (dw) {
        for (int b = 0; b < g.batch; ++b) {
            const T* part = dw_parts.data() + (int64_t)b * w_size;
            for (int64_t i = 0; i < w_size; ++i) dw[i] += part[i];
        }
    }
}

template <typename T>
void conv2d_backward(const T* x, const T* wgt, const T* dy, T* dx, T* dw,
                     const ConvGeometry& g) {
    if (g_mode == Mode::Serial)
        conv2d_backward_serial(x, wgt, dy, dx, dw, g);
    else
        conv2d_backward_omp(x, wgt, dy, dx, dw, g);
}

#define BNN_INSTANTIATE_KERNELS(T)                                                          \
    template void gemm_acc<T>(int, int, int, const T*, const T*, T*);                      \
    template void gemm_abt_acc<T>(int, int, int, const T*, const T*, T*);                  \
    template void conv2d_forward<T>(const T*, const T*, T*, const ConvGeometry&);          \
    template void conv2d_forward_serial<T>(const T*, const T*, T*, const ConvGeometry&);   \
    template void conv2d_forward_omp<T>(const T*, const T*, T*, const ConvGeometry&);      \
    template void conv2d_backward<T>(const T*, const T*, const T*, T*, T*,                 \
                                     const ConvGeometry&);                                  \
    template void conv2d_backward_serial<T>(const T*, const T*, const T*, T*, T*,          \
                                            const ConvGeometry&);                          \
    template void conv2d_backward_omp<T>(const T*, const T*, const T*, T*, T*,             \
                                         const ConvGeometry&);

BNN_INSTANTIATE_KERNELS(float)
BNN_INSTANTIATE_KERNELS(double)

}  // namespace bnn::kernels
