"""Spiking neuron dynamics with learnable polynomial membrane updates.

A layer's membrane update function is a degree-N polynomial

    f(u) = theta_1 * c + theta_2 * c^2 + ... + theta_N * c^N,
    c = clip(u, -1, 1),

with the constant coefficient pinned to zero so a silent neuron stays at
rest (f(0) = 0).  One discrete timestep advances the state as

    u(t+1) = (u(t) + f(u(t))) * (1 - o(t)) + I(t)
    o(t+1) = step(u(t+1) - u_th),       step(0) = 1

i.e. hard reset to zero after a spike, then integrate the new input.  With
theta = (0, -0.5, 0, ...) this reduces exactly to a leaky integrate-and-fire
neuron with decay 0.5, which is also the initialization.

The spike nonlinearity is non-differentiable; training uses a surrogate
derivative (rectangle or triangle window around the threshold).  For
gradient checking the module also provides a relaxed spike output equal to
the surrogate's antiderivative, so finite differences of the relaxed model
equal the analytic backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

from lnmnet.backend import kernels
from lnmnet.errors import ConfigError, NumericalError
from lnmnet.tensor import Tensor, add, clip, heaviside, mul, scale, tensor_absmax

__all__ = [
    "LnmParams",
    "lif_init",
    "SurrogateConfig",
    "LayerNeuronConfig",
    "NeuronState",
    "StepRecord",
    "eval_poly_horner",
    "eval_poly_horner_counted",
    "eval_poly_derivative",
    "surrogate_grad",
    "relaxed_spike",
    "step",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e6

SURROGATE_KINDS = ("rectangle", "triangle")


class LnmParams:
    """Polynomial membrane-update coefficients, ascending order.

    ``coeffs`` has degree + 1 entries; coeffs[0] is forced to 0 at
    construction (the f(0) = 0 constraint is enforced, never assumed).
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        values = [float(v) for v in coeffs]
        if len(values) < 2:
            raise ConfigError("membrane polynomial needs degree >= 1")
        values[0] = 0.0
        self.coeffs = Tensor.from_flat(values, (len(values),))

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def tolist(self) -> list:
        return list(self.coeffs.data)

    def copy(self) -> "LnmParams":
        return LnmParams(self.coeffs.data)

    def __repr__(self):
        return f"LnmParams(degree={self.degree}, coeffs={self.tolist()})"


def lif_init(degree: int, decay: float = -0.5) -> LnmParams:
    """Leaky integrate-and-fire initialization: theta_1 = decay, rest zero."""
    if degree < 1:
        raise ConfigError(f"degree must be >= 1, got {degree}")
    coeffs = [0.0] * (degree + 1)
    coeffs[1] = float(decay)
    return LnmParams(coeffs)


@dataclass(frozen=True)
class SurrogateConfig:
    """Surrogate derivative for the spike step.

    rectangle: (1/width) * 1[|u - u_th| < width/2]
    triangle:  (1/width) * max(0, 1 - |u - u_th| / width)
    """

    kind: str = "rectangle"
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ConfigError(f"unknown surrogate kind {self.kind!r}; choose from {SURROGATE_KINDS}")
        if not self.width > 0:
            raise ConfigError(f"surrogate width must be positive, got {self.width}")


@dataclass
class LayerNeuronConfig:
    """Everything one spiking layer needs to advance its state."""

    params: LnmParams
    threshold: float = 0.5
    surrogate: SurrogateConfig = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.surrogate is None:
            self.surrogate = SurrogateConfig()


@dataclass
class NeuronState:
    """Per-layer state between timesteps.

    ``spikes`` is what propagates to the next layer; ``hard_spikes`` is the
    binary spike train that drives the reset.  They are the same tensor in
    normal operation and differ only in the relaxed (grad-check) mode.
    """

    membrane: Tensor
    spikes: Tensor
    hard_spikes: Tensor

    @classmethod
    def resting(cls, shape) -> "NeuronState":
        z = Tensor.zeros(shape)
        return cls(membrane=z, spikes=z, hard_spikes=z)


@dataclass
class StepRecord:
    """Activations one backward step needs: u(t), u(t+1), o(t)."""

    u_prev: Tensor
    u_next: Tensor
    o_prev: Tensor


def eval_poly_horner(params: LnmParams, u: Tensor) -> Tensor:
    """f(clip(u)) by Horner's scheme: exactly degree multiply-adds/element."""
    out = Tensor(u.shape)
    kernels.horner_clip_eval(params.coeffs.data, u.data, out.data, u.size, params.coeffs.size)
    return out


def eval_poly_horner_counted(params: LnmParams, u: Tensor):
    """Instrumented reference evaluation: returns (result, multiply_add_count).

    Pure-Python mirror of the kernel used to audit the operation count; the
    count is incremented once per fused multiply-add actually executed.
    """
    coeffs = params.coeffs.data
    ncoef = len(coeffs)
    out = Tensor(u.shape)
    madds = 0
    for i in range(u.size):
        c = u.data[i]
        if c < -1.0:
            c = -1.0
        elif c > 1.0:
            c = 1.0
        acc = coeffs[ncoef - 1]
        for j in range(ncoef - 2, -1, -1):
            acc = acc * c + coeffs[j]
            madds += 1
        out.data[i] = acc
    return out, madds


def eval_poly_derivative(params: LnmParams, u: Tensor) -> Tensor:
    """d f(clip(u)) / du: polynomial derivative at clip(u) times the clip
    subgradient (1 where |u| <= 1, else 0; boundary counts as inside)."""
    out = Tensor(u.shape)
    kernels.horner_clip_derivative(params.coeffs.data, u.data, out.data, u.size, params.coeffs.size)
    return out


def surrogate_grad(u: Tensor, threshold: float, cfg: SurrogateConfig) -> Tensor:
    """Surrogate derivative of the spike step evaluated at membrane u."""
    out = Tensor(u.shape)
    if cfg.kind == "rectangle":
        kernels.ew_rect_grad(u.data, float(threshold), float(cfg.width), out.data, u.size)
    else:
        kernels.ew_tri_grad(u.data, float(threshold), float(cfg.width), out.data, u.size)
    return out


def relaxed_spike(u: Tensor, threshold: float, cfg: SurrogateConfig) -> Tensor:
    """Smoothed spike: the antiderivative of the surrogate window.

    Its exact derivative is ``surrogate_grad``, which is what makes finite
    differences of the relaxed forward comparable to the analytic backward.
    Used for gradient checking only, so the triangle branch may run in
    Python.
    """
    if cfg.kind == "rectangle":
        # ramp: clip((u - th)/width + 1/2, 0, 1)
        z = add(scale(add(u, -float(threshold)), 1.0 / cfg.width), 0.5)
        return clip(z, 0.0, 1.0)
    out = Tensor(u.shape)
    inv = 1.0 / cfg.width
    for i in range(u.size):
        z = (u.data[i] - threshold) * inv
        if z <= -1.0:
            v = 0.0
        elif z <= 0.0:
            v = 0.5 * (1.0 + z) * (1.0 + z)
        elif z <= 1.0:
            v = 1.0 - 0.5 * (1.0 - z) * (1.0 - z)
        else:
            v = 1.0
        out.data[i] = v
    return out


def step(
    state: NeuronState,
    input_current: Tensor,
    cfg: LayerNeuronConfig,
    relaxed: bool = False,
    max_abs: float = DIVERGENCE_LIMIT,
    layer=None,
    timestep=None,
):
    """Advance one timestep; returns (new_state, StepRecord).

    The reset factor always uses the hard (binary) spike from the previous
    step, including in relaxed mode: the gradient path through the reset is
    detached by convention, and keeping the reset hard makes the relaxed
    model's exact derivative match that convention.
    """
    u_prev = state.membrane
    o_prev = state.hard_spikes
    if input_current.shape != u_prev.shape:
        raise ConfigError(
            f"input current shape {input_current.shape} does not match state {u_prev.shape}"
        )
    f_val = eval_poly_horner(cfg.params, u_prev)
    keep = add(scale(o_prev, -1.0), 1.0)  # 1 - o(t)
    u_next = add(mul(add(u_prev, f_val), keep), input_current)
    peak = tensor_absmax(u_next)
    if not peak <= max_abs:
        raise NumericalError(
            f"membrane potential diverged (|u| reached {peak!r}, limit {max_abs})",
            layer=layer,
            timestep=timestep,
        )
    o_hard = heaviside(add(u_next, -float(cfg.threshold)))
    o_out = relaxed_spike(u_next, cfg.threshold, cfg.surrogate) if relaxed else o_hard
    new_state = NeuronState(membrane=u_next, spikes=o_out, hard_spikes=o_hard)
    record = StepRecord(u_prev=u_prev, u_next=u_next, o_prev=o_prev)
    return new_state, record
