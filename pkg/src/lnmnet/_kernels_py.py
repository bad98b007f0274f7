"""Pure-Python numeric kernels.

Fallback twin of the compiled ``lnmnet._kernels`` extension.  Every function
here must keep the exact loop structure and evaluation order of the Cython
version: the two backends are required to produce bit-identical IEEE-754
results, which is what makes run results reproducible across installs with
and without a compiler.

All buffers are flat row-major float64 sequences (``array.array('d')``);
shapes are passed as explicit integers.  No bounds checking beyond what the
caller guarantees.
"""

BACKEND_NAME = "python"


# ---------------------------------------------------------------------------
# matmul family
# ---------------------------------------------------------------------------

def matmul(a, b, out, m, k, n):
    """out[m,n] = a[m,k] @ b[k,n]; inner sum runs over k in index order."""
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i * k + l] * b[l * n + j]
            out[i * n + j] = acc


def matmul_ta(a, b, out, m, k, n):
    """out[m,n] = a[k,m].T @ b[k,n]."""
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[l * m + i] * b[l * n + j]
            out[i * n + j] = acc


def matmul_tb(a, b, out, m, k, n):
    """out[m,n] = a[m,k] @ b[n,k].T."""
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i * k + l] * b[j * k + l]
            out[i * n + j] = acc


# ---------------------------------------------------------------------------
# conv2d family (zero padding, square stride)
# ---------------------------------------------------------------------------

def conv2d_forward(inp, ker, out, bsz, cin, h, w, cout, kh, kw, stride, pad, oh, ow):
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


def conv2d_grad_input(gout, ker, ginp, bsz, cin, h, w, cout, kh, kw, stride, pad, oh, ow):
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


def conv2d_grad_kernel(gout, inp, gker, bsz, cin, h, w, cout, kh, kw, stride, pad, oh, ow):
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
# average pooling (kernel = stride = size, no padding)
# ---------------------------------------------------------------------------

def avgpool2d_forward(inp, out, bsz, ch, h, w, size, oh, ow):
    inv = 1.0 / (size * size)
    for b in range(bsz):
        for c in range(ch):
            for y in range(oh):
                for x in range(ow):
                    acc = 0.0
                    for dy in range(size):
                        for dx in range(size):
                            acc += inp[((b * ch + c) * h + y * size + dy) * w + x * size + dx]
                    out[((b * ch + c) * oh + y) * ow + x] = acc * inv


def avgpool2d_backward(gout, ginp, bsz, ch, h, w, size, oh, ow):
    inv = 1.0 / (size * size)
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

def ew_add(a, b, out, n):
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(a, b, out, n):
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(a, b, out, n):
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_scale(a, s, out, n):
    for i in range(n):
        out[i] = a[i] * s


def ew_add_scalar(a, s, out, n):
    for i in range(n):
        out[i] = a[i] + s


def ew_axpy(y, x, alpha, n):
    """y += alpha * x, in place."""
    for i in range(n):
        y[i] = y[i] + alpha * x[i]


def ew_clip(a, lo, hi, out, n):
    for i in range(n):
        v = a[i]
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        out[i] = v


def ew_heaviside(a, out, n):
    """Step with the convention heaviside(0) = 1."""
    for i in range(n):
        out[i] = 1.0 if a[i] >= 0.0 else 0.0


def ew_add_rowvec(a, v, out, rows, cols):
    """out[i,j] = a[i,j] + v[j]."""
    for i in range(rows):
        for j in range(cols):
            out[i * cols + j] = a[i * cols + j] + v[j]


def col_sum(a, out, rows, cols):
    """out[j] = sum_i a[i,j]; accumulation runs over rows in order."""
    for j in range(cols):
        acc = 0.0
        for i in range(rows):
            acc += a[i * cols + j]
        out[j] = acc


def ew_add_chanvec(a, v, out, bsz, ch, plane):
    """out[b,c,p] = a[b,c,p] + v[c] for plane-sized channel blocks."""
    for b in range(bsz):
        for c in range(ch):
            base = (b * ch + c) * plane
            vc = v[c]
            for p in range(plane):
                out[base + p] = a[base + p] + vc


def chan_sum(a, out, bsz, ch, plane):
    """out[c] = sum_b sum_p a[b,c,p]."""
    for c in range(ch):
        acc = 0.0
        for b in range(bsz):
            base = (b * ch + c) * plane
            for p in range(plane):
                acc += a[base + p]
        out[c] = acc


def reduce_sum(a, n):
    """Left-to-right sum; the fixed order is part of the contract."""
    acc = 0.0
    for i in range(n):
        acc += a[i]
    return acc


def dot(a, b, n):
    """Left-to-right inner product."""
    acc = 0.0
    for i in range(n):
        acc += a[i] * b[i]
    return acc


def absmax(a, n):
    """Max of |a[i]|; returns inf as soon as any element is NaN or inf."""
    acc = 0.0
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
# membrane polynomial (Horner on clipped input)
# ---------------------------------------------------------------------------

def horner_clip_eval(coeffs, u, out, n, ncoef):
    """out[i] = poly(clip(u[i], -1, 1)), coeffs ascending, Horner order.

    Exactly ncoef - 1 multiply-adds per element.
    """
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


def horner_clip_derivative(coeffs, u, out, n, ncoef):
    """out[i] = poly'(clip(u[i])) * 1[|u[i]| <= 1].

    The mask is the subgradient of the clip; the boundary points count as
    inside.
    """
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


def lnm_theta_grads(a, u_prev, o_prev, out_coeffs, n, ncoef):
    """Accumulate d(loss)/d(theta_k) += sum_i a[i]*(1-o_prev[i])*clip(u_prev[i])^k.

    out_coeffs[0] is left untouched: the constant coefficient is pinned to 0
    by the f(0) = 0 constraint and its gradient is defined as 0.
    """
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

def ew_rect_grad(u, th, alpha, out, n):
    """Rectangle window: (1/alpha) * 1[|u - th| < alpha/2], strict inequality."""
    inv = 1.0 / alpha
    half = alpha / 2.0
    for i in range(n):
        d = u[i] - th
        if d < 0.0:
            d = -d
        out[i] = inv if d < half else 0.0


def ew_tri_grad(u, th, alpha, out, n):
    """Triangle: (1/alpha) * max(0, 1 - |u - th| / alpha)."""
    inv = 1.0 / alpha
    for i in range(n):
        d = u[i] - th
        if d < 0.0:
            d = -d
        v = 1.0 - d * inv
        out[i] = v * inv if v > 0.0 else 0.0


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def sgd_update(param, grad, vel, lr, momentum, wd, n):
    """Classic momentum SGD with coupled weight decay, in place.

    v = momentum*v + g + wd*p;  p -= lr*v.  Evaluation order is part of the
    bit-reproducibility contract.
    """
    for i in range(n):
        v = momentum * vel[i] + grad[i] + wd * param[i]
        vel[i] = v
        param[i] = param[i] - lr * v
