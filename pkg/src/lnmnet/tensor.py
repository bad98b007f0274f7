"""Dense float64 tensors, deterministic RNG, and the core array ops.

Tensors are contiguous row-major ``array.array('d')`` buffers with a shape
tuple.  All arithmetic runs through the kernel backend (compiled or pure
Python, bit-identical either way) with a fixed summation order, so results
reproduce exactly across runs, backends, and platforms.
"""

from __future__ import annotations

import math
from array import array
from typing import Sequence

from lnmnet.backend import kernels
from lnmnet.errors import ShapeError

__all__ = [
    "Tensor",
    "Rng",
    "derive_seed",
    "matmul",
    "matmul_ta",
    "matmul_tb",
    "conv2d",
    "conv2d_grad_input",
    "conv2d_grad_kernel",
    "avgpool2d",
    "avgpool2d_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "clip",
    "heaviside",
    "add_rowvec",
    "add_chanvec",
    "column_sum",
    "channel_sum",
    "axpy_",
    "tensor_sum",
    "tensor_dot",
    "tensor_absmax",
    "tensor_mean",
    "argmax_rows",
    "all_finite",
]


def _check_shape(shape):
    if not shape:
        raise ShapeError("tensor shape must have at least one dimension")
    for d in shape:
        if not isinstance(d, int) or d <= 0:
            raise ShapeError(f"zero or negative dimension in shape {tuple(shape)}")


class Tensor:
    """Contiguous row-major float64 array with value semantics.

    Operations return new tensors; the only sanctioned in-place mutations are
    the optimizer update and gradient accumulation, both explicit.
    """

    __slots__ = ("data", "shape")

    def __init__(self, shape, data=None):
        shape = tuple(shape)
        _check_shape(shape)
        size = 1
        for d in shape:
            size *= d
        if data is None:
            data = array("d", bytes(8 * size))
        elif len(data) != size:
            raise ShapeError(f"buffer of length {len(data)} does not fill shape {shape}")
        self.shape = shape
        self.data = data

    # -- constructors ------------------------------------------------------

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(shape)

    @classmethod
    def filled(cls, shape, value: float) -> "Tensor":
        t = cls(shape)
        v = float(value)
        for i in range(len(t.data)):
            t.data[i] = v
        return t

    @classmethod
    def from_flat(cls, values: Sequence[float], shape) -> "Tensor":
        return cls(shape, array("d", values))

    @classmethod
    def from_nested(cls, nested) -> "Tensor":
        """Build from nested lists, inferring the shape."""
        shape = []
        probe = nested
        while isinstance(probe, (list, tuple)):
            shape.append(len(probe))
            probe = probe[0] if probe else None
        flat = array("d")

        def walk(node, depth):
            if depth == len(shape) - 1:
                if len(node) != shape[depth]:
                    raise ShapeError("ragged nested list")
                flat.extend(float(v) for v in node)
                return
            if len(node) != shape[depth]:
                raise ShapeError("ragged nested list")
            for child in node:
                walk(child, depth + 1)

        walk(nested, 0)
        return cls(shape, flat)

    # -- basics ------------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self.data)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def copy(self) -> "Tensor":
        return Tensor(self.shape, array("d", self.data))

    def reshape(self, shape) -> "Tensor":
        shape = tuple(shape)
        _check_shape(shape)
        size = 1
        for d in shape:
            size *= d
        if size != self.size:
            raise ShapeError(f"cannot reshape {self.shape} to {shape}")
        return Tensor(shape, array("d", self.data))

    def at(self, *indices) -> float:
        """Element access by multi-index (bounds-checked)."""
        if len(indices) != len(self.shape):
            raise ShapeError(f"index {indices} does not match shape {self.shape}")
        flat = 0
        for idx, dim in zip(indices, self.shape):
            if not 0 <= idx < dim:
                raise ShapeError(f"index {indices} out of bounds for shape {self.shape}")
            flat = flat * dim + idx
        return self.data[flat]

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return self.data[0]

    def tolist(self):
        """Nested-list view of the tensor."""

        def build(offset, shape):
            if len(shape) == 1:
                return list(self.data[offset : offset + shape[0]])
            stride = 1
            for d in shape[1:]:
                stride *= d
            return [build(offset + i * stride, shape[1:]) for i in range(shape[0])]

        return build(0, self.shape)

    def exact_eq(self, other: "Tensor") -> bool:
        """Float equality (==) of shape and every element."""
        if self.shape != other.shape:
            return False
        a, b = self.data, other.data
        return all(a[i] == b[i] for i in range(len(a)))

    def allclose(self, other: "Tensor", tol: float = 1e-12) -> bool:
        if self.shape != other.shape:
            return False
        a, b = self.data, other.data
        return all(abs(a[i] - b[i]) <= tol for i in range(len(a)))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


# ---------------------------------------------------------------------------
# RNG: SplitMix64 with Box-Muller normals
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, tag: int) -> int:
    """Deterministic child seed for an independent stream."""
    return _mix64((seed + tag * _GOLDEN) & _MASK64)


class Rng:
    """SplitMix64 generator.

    State is a single u64 that advances by the golden-ratio increment; the
    output scramble is the standard SplitMix64 finalizer.  Identical seeds
    give identical streams on every platform (all integer arithmetic).
    Normal variates are Box-Muller on the uniform stream with no cached
    spare, so the state stays a single word and serializes losslessly.
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    @property
    def state(self) -> int:
        return self._state

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix64(self._state)

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes two uniforms."""
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # (0, 1]
        u2 = (self.next_u64() >> 11) * 2.0**-53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)

    def randint_below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randint_below needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint_below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def fork(self, tag: int = 0) -> "Rng":
        """Independent child stream; advances this generator by one draw."""
        return Rng(self.next_u64() ^ ((tag * _GOLDEN) & _MASK64))

    def normal_tensor(self, shape, std: float = 1.0) -> Tensor:
        t = Tensor(shape)
        for i in range(t.size):
            t.data[i] = self.normal() * std
        return t

    def uniform_tensor(self, shape, lo: float = 0.0, hi: float = 1.0) -> Tensor:
        t = Tensor(shape)
        span = hi - lo
        for i in range(t.size):
            t.data[i] = lo + self.uniform() * span
        return t


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors: (M,K) @ (K,N) -> (M,N)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    out = Tensor((m, n))
    kernels.matmul(a.data, b.data, out.data, m, k, n)
    return out


def matmul_ta(a: Tensor, b: Tensor) -> Tensor:
    """a.T @ b for 2-D tensors: (K,M),(K,N) -> (M,N); backward helper."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul_ta: incompatible shapes {a.shape} x {b.shape}")
    k, m = a.shape
    n = b.shape[1]
    out = Tensor((m, n))
    kernels.matmul_ta(a.data, b.data, out.data, m, k, n)
    return out


def matmul_tb(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T for 2-D tensors: (M,K),(N,K) -> (M,N); backward helper."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"matmul_tb: incompatible shapes {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[0]
    out = Tensor((m, n))
    kernels.matmul_tb(a.data, b.data, out.data, m, k, n)
    return out


def _conv_out_dim(size, ksize, stride, pad, label):
    num = size + 2 * pad - ksize
    if num < 0 or num % stride != 0:
        raise ShapeError(
            f"conv2d: {label}={size} with kernel {ksize}, stride {stride}, "
            f"padding {pad} does not tile to an integer output size"
        )
    out = num // stride + 1
    if out < 1:
        raise ShapeError(f"conv2d: non-positive output {label}")
    return out


def conv2d(inp: Tensor, ker: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) with zero padding.

    inp: (B, C, H, W); ker: (F, C, KH, KW) -> (B, F, H', W').
    """
    if inp.ndim != 4 or ker.ndim != 4 or inp.shape[1] != ker.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {inp.shape} x {ker.shape}")
    bsz, cin, h, w = inp.shape
    cout, _, kh, kw = ker.shape
    oh = _conv_out_dim(h, kh, stride, padding, "height")
    ow = _conv_out_dim(w, kw, stride, padding, "width")
    out = Tensor((bsz, cout, oh, ow))
    kernels.conv2d_forward(
        inp.data, ker.data, out.data, bsz, cin, h, w, cout, kh, kw, stride, padding, oh, ow
    )
    return out


def conv2d_grad_input(gout: Tensor, ker: Tensor, input_shape, stride: int, padding: int) -> Tensor:
    bsz, cin, h, w = input_shape
    cout, _, kh, kw = ker.shape
    _, _, oh, ow = gout.shape
    ginp = Tensor((bsz, cin, h, w))
    kernels.conv2d_grad_input(
        gout.data, ker.data, ginp.data, bsz, cin, h, w, cout, kh, kw, stride, padding, oh, ow
    )
    return ginp


def conv2d_grad_kernel(gout: Tensor, inp: Tensor, kernel_shape, stride: int, padding: int) -> Tensor:
    bsz, cin, h, w = inp.shape
    cout, _, kh, kw = kernel_shape
    _, _, oh, ow = gout.shape
    gker = Tensor(kernel_shape)
    kernels.conv2d_grad_kernel(
        gout.data, inp.data, gker.data, bsz, cin, h, w, cout, kh, kw, stride, padding, oh, ow
    )
    return gker


def avgpool2d(inp: Tensor, size: int) -> Tensor:
    """Non-overlapping average pooling; H and W must divide by size."""
    if inp.ndim != 4:
        raise ShapeError(f"avgpool2d: need a 4-D tensor, got {inp.shape}")
    bsz, ch, h, w = inp.shape
    if size < 1 or h % size or w % size:
        raise ShapeError(f"avgpool2d: size {size} does not tile {inp.shape}")
    oh, ow = h // size, w // size
    out = Tensor((bsz, ch, oh, ow))
    kernels.avgpool2d_forward(inp.data, out.data, bsz, ch, h, w, size, oh, ow)
    return out


def avgpool2d_grad(gout: Tensor, input_shape, size: int) -> Tensor:
    bsz, ch, h, w = input_shape
    oh, ow = h // size, w // size
    ginp = Tensor((bsz, ch, h, w))
    kernels.avgpool2d_backward(gout.data, ginp.data, bsz, ch, h, w, size, oh, ow)
    return ginp


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _binary(a: Tensor, b, op, op_scalar):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"elementwise op: shape mismatch {a.shape} vs {b.shape}")
        out = Tensor(a.shape)
        op(a.data, b.data, out.data, a.size)
        return out
    out = Tensor(a.shape)
    op_scalar(a.data, float(b), out.data, a.size)
    return out


def add(a: Tensor, b) -> Tensor:
    """a + b; b is a same-shape tensor or a scalar."""
    return _binary(a, b, kernels.ew_add, kernels.ew_add_scalar)


def sub(a: Tensor, b) -> Tensor:
    """a - b; b is a same-shape tensor or a scalar."""
    if isinstance(b, Tensor):
        return _binary(a, b, kernels.ew_sub, None)
    return _binary(a, -float(b), None, kernels.ew_add_scalar)


def mul(a: Tensor, b) -> Tensor:
    """Hadamard product, or scalar scale when b is a number."""
    return _binary(a, b, kernels.ew_mul, kernels.ew_scale)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.shape)
    kernels.ew_scale(a.data, float(s), out.data, a.size)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    if not lo <= hi:
        raise ShapeError(f"clip: lo {lo} exceeds hi {hi}")
    out = Tensor(a.shape)
    kernels.ew_clip(a.data, float(lo), float(hi), out.data, a.size)
    return out


def heaviside(a: Tensor) -> Tensor:
    """Unit step with heaviside(0) = 1."""
    out = Tensor(a.shape)
    kernels.ew_heaviside(a.data, out.data, a.size)
    return out


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """(R,C) + (C,) broadcast over rows."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: incompatible shapes {a.shape} + {v.shape}")
    out = Tensor(a.shape)
    kernels.ew_add_rowvec(a.data, v.data, out.data, a.shape[0], a.shape[1])
    return out


def add_chanvec(a: Tensor, v: Tensor) -> Tensor:
    """(B,C,H,W) + (C,) broadcast over channels."""
    if a.ndim != 4 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"add_chanvec: incompatible shapes {a.shape} + {v.shape}")
    bsz, ch, h, w = a.shape
    out = Tensor(a.shape)
    kernels.ew_add_chanvec(a.data, v.data, out.data, bsz, ch, h * w)
    return out


def column_sum(a: Tensor) -> Tensor:
    """Sum a 2-D tensor over rows -> (C,)."""
    if a.ndim != 2:
        raise ShapeError(f"column_sum: need 2-D, got {a.shape}")
    out = Tensor((a.shape[1],))
    kernels.col_sum(a.data, out.data, a.shape[0], a.shape[1])
    return out


def channel_sum(a: Tensor) -> Tensor:
    """Sum a 4-D tensor over batch and spatial dims -> (C,)."""
    if a.ndim != 4:
        raise ShapeError(f"channel_sum: need 4-D, got {a.shape}")
    bsz, ch, h, w = a.shape
    out = Tensor((ch,))
    kernels.chan_sum(a.data, out.data, bsz, ch, h * w)
    return out


def axpy_(y: Tensor, x: Tensor, alpha: float = 1.0) -> None:
    """In-place y += alpha * x (gradient accumulation)."""
    if y.shape != x.shape:
        raise ShapeError(f"axpy_: shape mismatch {y.shape} vs {x.shape}")
    kernels.ew_axpy(y.data, x.data, float(alpha), y.size)


def tensor_sum(a: Tensor) -> float:
    """Sum of all elements in fixed left-to-right order."""
    return kernels.reduce_sum(a.data, a.size)


def tensor_dot(a: Tensor, b: Tensor) -> float:
    """Inner product over the flattened buffers in fixed order."""
    if a.shape != b.shape:
        raise ShapeError(f"tensor_dot: shape mismatch {a.shape} vs {b.shape}")
    return kernels.dot(a.data, b.data, a.size)


def tensor_absmax(a: Tensor) -> float:
    """Max |element|; inf when any element is non-finite."""
    return kernels.absmax(a.data, a.size)


def tensor_mean(a: Tensor) -> float:
    return kernels.reduce_sum(a.data, a.size) / a.size


def argmax_rows(a: Tensor) -> list:
    """Row-wise argmax of a 2-D tensor; first maximum wins ties."""
    if a.ndim != 2:
        raise ShapeError(f"argmax_rows: need 2-D, got {a.shape}")
    rows, cols = a.shape
    out = []
    for i in range(rows):
        best, best_j = a.data[i * cols], 0
        for j in range(1, cols):
            v = a.data[i * cols + j]
            if v > best:
                best, best_j = v, j
        out.append(best_j)
    return out


def all_finite(a: Tensor) -> bool:
    return all(math.isfinite(v) for v in a.data)
