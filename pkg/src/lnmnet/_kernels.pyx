"""Compiled numeric kernels.

Twin of ``lnmnet._kernels_py``: identical loop structure and evaluation
order, compiled with -ffp-contract=off so results are bit-identical to the
pure-Python fallback.  See that module for the per-function contracts.
"""

BACKEND_NAME = "cython"


# ---------------------------------------------------------------------------
# matmul family
# ---------------------------------------------------------------------------

def matmul(double[::1] a, double[::1] b, double[::1] out,
           Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i * k + l] * b[l * n + j]
            out[i * n + j] = acc


def matmul_ta(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[l * m + i] * b[l * n + j]
            out[i * n + j] = acc


def matmul_tb(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i * k + l] * b[j * k + l]
            out[i * n + j] = acc


# ---------------------------------------------------------------------------
# conv2d family
# ---------------------------------------------------------------------------

def conv2d_forward(double[::1] inp, double[::1] ker, double[::1] out,
                   Py_ssize_t bsz, Py_ssize_t cin, Py_ssize_t h, Py_ssize_t w,
                   Py_ssize_t cout, Py_ssize_t kh, Py_ssize_t kw,
                   Py_ssize_t stride, Py_ssize_t pad,
                   Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b, f, y, x, c, dy, dx, iy, ix
    cdef double acc
    for b in range(bsz):
        for f in range(cout):
            for y in range(oh):
                for x in range(ow):
                    acc = 0.0
                    for c in range(cin):
                        for dy in range(kh):
                            iy = y * stride - pad + dy
                            if iy < 0 or iy >= h:
                                continue
                            for dx in range(kw):
                                ix = x * stride - pad + dx
                                if ix < 0 or ix >= w:
                                    continue
                                acc += (
                                    inp[((b * cin + c) * h + iy) * w + ix]
                                    * ker[((f * cin + c) * kh + dy) * kw + dx]
                                )
                    out[((b * cout + f) * oh + y) * ow + x] = acc


def conv2d_grad_input(double[::1] gout, double[::1] ker, double[::1] ginp,
                      Py_ssize_t bsz, Py_ssize_t cin, Py_ssize_t h, Py_ssize_t w,
                      Py_ssize_t cout, Py_ssize_t kh, Py_ssize_t kw,
                      Py_ssize_t stride, Py_ssize_t pad,
                      Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b, c, iy, ix, f, dy, dx, ny, nx, y, x
    cdef double acc
    for b in range(bsz):
        for c in range(cin):
            for iy in range(h):
                for ix in range(w):
                    acc = 0.0
                    for f in range(cout):
                        for dy in range(kh):
                            ny = iy + pad - dy
                            if ny < 0:
                                continue
                            if ny % stride:
                                continue
                            y = ny // stride
                            if y >= oh:
                                continue
                            for dx in range(kw):
                                nx = ix + pad - dx
                                if nx < 0:
                                    continue
                                if nx % stride:
                                    continue
                                x = nx // stride
                                if x >= ow:
                                    continue
                                acc += (
                                    gout[((b * cout + f) * oh + y) * ow + x]
                                    * ker[((f * cin + c) * kh + dy) * kw + dx]
                                )
                    ginp[((b * cin + c) * h + iy) * w + ix] = acc


def conv2d_grad_kernel(double[::1] gout, double[::1] inp, double[::1] gker,
                       Py_ssize_t bsz, Py_ssize_t cin, Py_ssize_t h, Py_ssize_t w,
                       Py_ssize_t cout, Py_ssize_t kh, Py_ssize_t kw,
                       Py_ssize_t stride, Py_ssize_t pad,
                       Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t f, c, dy, dx, b, y, x, iy, ix
    cdef double acc
    for f in range(cout):
        for c in range(cin):
            for dy in range(kh):
                for dx in range(kw):
                    acc = 0.0
                    for b in range(bsz):
                        for y in range(oh):
                            iy = y * stride - pad + dy
                            if iy < 0 or iy >= h:
                                continue
                            for x in range(ow):
                                ix = x * stride - pad + dx
                                if ix < 0 or ix >= w:
                                    continue
                                acc += (
                                    gout[((b * cout + f) * oh + y) * ow + x]
                                    * inp[((b * cin + c) * h + iy) * w + ix]
                                )
                    gker[((f * cin + c) * kh + dy) * kw + dx] = acc


# ---------------------------------------------------------------------------
# average pooling
# ---------------------------------------------------------------------------

def avgpool2d_forward(double[::1] inp, double[::1] out,
                      Py_ssize_t bsz, Py_ssize_t ch, Py_ssize_t h, Py_ssize_t w,
                      Py_ssize_t size, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b, c, y, x, dy, dx
    cdef double acc
    cdef double inv = 1.0 / (size * size)
    for b in range(bsz):
        for c in range(ch):
            for y in range(oh):
                for x in range(ow):
                    acc = 0.0
                    for dy in range(size):
                        for dx in range(size):
                            acc += inp[((b * ch + c) * h + y * size + dy) * w + x * size + dx]
                    out[((b * ch + c) * oh + y) * ow + x] = acc * inv


def avgpool2d_backward(double[::1] gout, double[::1] ginp,
                       Py_ssize_t bsz, Py_ssize_t ch, Py_ssize_t h, Py_ssize_t w,
                       Py_ssize_t size, Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t b, c, y, x, dy, dx
    cdef double g
    cdef double inv = 1.0 / (size * size)
    for b in range(bsz):
        for c in range(ch):
            for y in range(oh):
                for x in range(ow):
                    g = gout[((b * ch + c) * oh + y) * ow + x] * inv
                    for dy in range(size):
                        for dx in range(size):
                            ginp[((b * ch + c) * h + y * size + dy) * w + x * size + dx] = g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def ew_add(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_scale(double[::1] a, double s, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] * s


def ew_add_scalar(double[::1] a, double s, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = a[i] + s


def ew_axpy(double[::1] y, double[::1] x, double alpha, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        y[i] = y[i] + alpha * x[i]


def ew_clip(double[::1] a, double lo, double hi, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = a[i]
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        out[i] = v


def ew_heaviside(double[::1] a, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = 1.0 if a[i] >= 0.0 else 0.0


def ew_add_rowvec(double[::1] a, double[::1] v, double[::1] out,
                  Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t i, j
    for i in range(rows):
        for j in range(cols):
            out[i * cols + j] = a[i * cols + j] + v[j]


def col_sum(double[::1] a, double[::1] out, Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t i, j
    cdef double acc
    for j in range(cols):
        acc = 0.0
        for i in range(rows):
            acc += a[i * cols + j]
        out[j] = acc


def ew_add_chanvec(double[::1] a, double[::1] v, double[::1] out,
                   Py_ssize_t bsz, Py_ssize_t ch, Py_ssize_t plane):
    cdef Py_ssize_t b, c, p, base
    cdef double vc
    for b in range(bsz):
        for c in range(ch):
            base = (b * ch + c) * plane
            vc = v[c]
            for p in range(plane):
                out[base + p] = a[base + p] + vc


def chan_sum(double[::1] a, double[::1] out,
             Py_ssize_t bsz, Py_ssize_t ch, Py_ssize_t plane):
    cdef Py_ssize_t b, c, p, base
    cdef double acc
    for c in range(ch):
        acc = 0.0
        for b in range(bsz):
            base = (b * ch + c) * plane
            for p in range(plane):
                acc += a[base + p]
        out[c] = acc


def reduce_sum(double[::1] a, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(n):
        acc += a[i]
    return acc


def dot(double[::1] a, double[::1] b, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(n):
        acc += a[i] * b[i]
    return acc


def absmax(double[::1] a, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    cdef double acc = 0.0
    for i in range(n):
        v = a[i]
        if v != v:
            return float("inf")
        if v < 0.0:
            v = -v
        if v > acc:
            acc = v
    return acc


# ---------------------------------------------------------------------------
# membrane polynomial
# ---------------------------------------------------------------------------

def horner_clip_eval(double[::1] coeffs, double[::1] u, double[::1] out,
                     Py_ssize_t n, Py_ssize_t ncoef):
    cdef Py_ssize_t i, j
    cdef double c, acc
    for i in range(n):
        c = u[i]
        if c < -1.0:
            c = -1.0
        elif c > 1.0:
            c = 1.0
        acc = coeffs[ncoef - 1]
        for j in range(ncoef - 2, -1, -1):
            acc = acc * c + coeffs[j]
        out[i] = acc


def horner_clip_derivative(double[::1] coeffs, double[::1] u, double[::1] out,
                           Py_ssize_t n, Py_ssize_t ncoef):
    cdef Py_ssize_t i, j
    cdef double c, acc, mask
    for i in range(n):
        c = u[i]
        mask = 1.0
        if c < -1.0:
            c = -1.0
            mask = 0.0
        elif c > 1.0:
            c = 1.0
            mask = 0.0
        if ncoef < 2:
            out[i] = 0.0
            continue
        acc = (ncoef - 1) * coeffs[ncoef - 1]
        for j in range(ncoef - 2, 0, -1):
            acc = acc * c + j * coeffs[j]
        out[i] = acc * mask


def lnm_theta_grads(double[::1] a, double[::1] u_prev, double[::1] o_prev,
                    double[::1] out_coeffs, Py_ssize_t n, Py_ssize_t ncoef):
    cdef Py_ssize_t i, k
    cdef double base, c, p
    for i in range(n):
        base = a[i] * (1.0 - o_prev[i])
        c = u_prev[i]
        if c < -1.0:
            c = -1.0
        elif c > 1.0:
            c = 1.0
        p = c
        for k in range(1, ncoef):
            out_coeffs[k] = out_coeffs[k] + base * p
            p = p * c


# ---------------------------------------------------------------------------
# surrogate gradients
# ---------------------------------------------------------------------------

def ew_rect_grad(double[::1] u, double th, double alpha, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double d
    cdef double inv = 1.0 / alpha
    cdef double half = alpha / 2.0
    for i in range(n):
        d = u[i] - th
        if d < 0.0:
            d = -d
        out[i] = inv if d < half else 0.0


def ew_tri_grad(double[::1] u, double th, double alpha, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double d, v
    cdef double inv = 1.0 / alpha
    for i in range(n):
        d = u[i] - th
        if d < 0.0:
            d = -d
        v = 1.0 - d * inv
        out[i] = v * inv if v > 0.0 else 0.0


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def sgd_update(double[::1] param, double[::1] grad, double[::1] vel,
               double lr, double momentum, double wd, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = momentum * vel[i] + grad[i] + wd * param[i]
        vel[i] = v
        param[i] = param[i] - lr * v
