"""Backpropagation through the unrolled spiking network.

The backward pass walks the forward tape in reverse time and reverse layer
order.  For a spiking layer the total membrane gradient at step t is

    A(t+1) = dL/do(t+1) * surr'(u(t+1)) + A(t+2) * (1 + f'(u(t+1))) * (1 - o(t+1))

where the first term is the spatial path through the surrogate spike
derivative and the second is the temporal carry; the reset factor (1 - o)
multiplies the carry but no gradient flows through the spike inside it
(detached, by convention).  Coefficient gradients accumulate

    dL/dtheta_k += sum A(t+1) * (1 - o(t)) * clip(u(t))^k,   k >= 1

with theta_0's gradient pinned to zero by the f(0) = 0 constraint.  Weight
gradients use A(t+1) as the gradient of the injected current.

Gradient checking runs the same machinery on the surrogate-relaxed forward
pass, whose exact derivative is this backward pass, and compares against
central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from lnmnet.backend import kernels
from lnmnet.errors import NumericalError
from lnmnet.neuron import eval_poly_derivative, surrogate_grad
from lnmnet.tensor import (
    Tensor,
    add,
    avgpool2d_grad,
    axpy_,
    channel_sum,
    column_sum,
    conv2d_grad_input,
    conv2d_grad_kernel,
    matmul,
    matmul_ta,
    mul,
    scale,
    tensor_absmax,
)

__all__ = [
    "Tape",
    "GradientSet",
    "backward",
    "grad_check",
    "finite_difference_gradients",
    "compare_gradients",
    "CheckReport",
    "GroupReport",
    "kink_margin",
    "verify_replay",
]


class Tape:
    """Recorded forward activations, one slot per layer.

    Weight layers (dense/conv2d/decoder) store their per-timestep inputs;
    spiking layers store StepRecords; avgpool/flatten store the input shape.
    """

    def __init__(self, network, timesteps: int, batch: int, relaxed: bool, input_sequence):
        self.network = network
        self.timesteps = timesteps
        self.batch = batch
        self.relaxed = relaxed
        self.input_sequence = input_sequence
        self.records = []
        for layer in network.layers:
            if layer.kind in ("dense", "conv2d", "spiking", "decoder"):
                self.records.append([])
            else:
                self.records.append(None)

    def validate(self) -> None:
        """Records must cover exactly T timesteps for every recorded layer."""
        for i, layer in enumerate(self.network.layers):
            if layer.kind in ("dense", "conv2d", "spiking", "decoder"):
                got = len(self.records[i])
                if got != self.timesteps:
                    raise NumericalError(
                        f"tape layer {i} has {got} records, expected {self.timesteps}"
                    )


@dataclass
class GradientSet:
    """Gradients keyed by parameter name (matching named_parameters)."""

    grads: dict = field(default_factory=dict)

    def names(self):
        return list(self.grads)

    def get(self, name: str) -> Tensor:
        return self.grads[name]


def backward(tape: Tape, loss_grad: Tensor) -> GradientSet:
    """Accumulate dL/d(param) for every parameter from a recorded forward.

    loss_grad is dL/dlogits, shape (B, classes).  Raises a numerical error
    naming the parameter if any gradient comes out non-finite.
    """
    net = tape.network
    T = tape.timesteps
    grads = GradientSet({name: Tensor.zeros(t.shape) for name, t in net.named_parameters()})

    decoder_idx = len(net.layers) - 1
    decoder = net.layers[decoder_idx]
    dec_w_name = f"layers.{decoder_idx}.weight"
    # dL/do(t) through the rate decoder is the same tensor at every t
    g_dec = scale(matmul(loss_grad, decoder.weight), 1.0 / T)
    inv_t = 1.0 / T

    carries = {i: None for i in net.spiking_indices()}

    for t in range(T - 1, -1, -1):
        axpy_(grads.grads[dec_w_name], matmul_ta(loss_grad, tape.records[decoder_idx][t]), inv_t)
        g = g_dec
        for i in range(decoder_idx - 1, -1, -1):
            layer = net.layers[i]
            kind = layer.kind
            if kind == "spiking":
                rec = tape.records[i][t]
                cfg = layer.cfg
                surr = surrogate_grad(rec.u_next, cfg.threshold, cfg.surrogate)
                a_total = mul(g, surr)
                carry = carries[i]
                if carry is not None:
                    a_total = add(a_total, carry)
                theta_grad = grads.grads[f"layers.{i}.theta"]
                kernels.lnm_theta_grads(
                    a_total.data,
                    rec.u_prev.data,
                    rec.o_prev.data,
                    theta_grad.data,
                    a_total.size,
                    theta_grad.size,
                )
                if t > 0:
                    keep = add(scale(rec.o_prev, -1.0), 1.0)
                    carries[i] = mul(
                        mul(a_total, add(eval_poly_derivative(cfg.params, rec.u_prev), 1.0)),
                        keep,
                    )
                g = a_total
            elif kind == "dense":
                x_t = tape.records[i][t]
                axpy_(grads.grads[f"layers.{i}.weight"], matmul_ta(g, x_t))
                if layer.bias is not None:
                    axpy_(grads.grads[f"layers.{i}.bias"], column_sum(g))
                g = matmul(g, layer.weight)
            elif kind == "conv2d":
                x_t = tape.records[i][t]
                axpy_(
                    grads.grads[f"layers.{i}.weight"],
                    conv2d_grad_kernel(g, x_t, layer.weight.shape, layer.stride, layer.padding),
                )
                if layer.bias is not None:
                    axpy_(grads.grads[f"layers.{i}.bias"], channel_sum(g))
                g = conv2d_grad_input(g, layer.weight, x_t.shape, layer.stride, layer.padding)
            elif kind == "avgpool":
                g = avgpool2d_grad(g, tape.records[i], layer.size)
            elif kind == "flatten":
                g = g.reshape(tape.records[i])

    for name, tensor in grads.grads.items():
        if math.isinf(tensor_absmax(tensor)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
    return grads


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GroupReport:
    name: str
    max_rel_err: float
    worst_index: int
    passed: bool


@dataclass
class CheckReport:
    groups: list
    tol: float
    h: float
    margin: float = math.inf  # distance of operating points to derivative kinks

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    def worst(self) -> GroupReport:
        return max(self.groups, key=lambda g: g.max_rel_err)


def _relaxed_loss(net, inputs, labels, loss_fn):
    logits, _, _ = net.forward(inputs, relaxed=True, record=False)
    loss, _ = loss_fn(logits, labels)
    return loss


def finite_difference_gradients(net, inputs, labels, h: float, loss_fn) -> GradientSet:
    """Central differences of the relaxed forward + loss, per parameter entry.

    The constant membrane coefficient (theta index 0) is pinned by the
    f(0) = 0 constraint; its slot is reported as 0 to match the analytic
    convention rather than differentiated.
    """
    out = GradientSet()
    for name, param in net.named_parameters():
        fd = Tensor.zeros(param.shape)
        is_theta = name.endswith(".theta")
        for idx in range(param.size):
            if is_theta and idx == 0:
                continue
            orig = param.data[idx]
            param.data[idx] = orig + h
            up = _relaxed_loss(net, inputs, labels, loss_fn)
            param.data[idx] = orig - h
            down = _relaxed_loss(net, inputs, labels, loss_fn)
            param.data[idx] = orig
            fd.data[idx] = (up - down) / (2.0 * h)
        out.grads[name] = fd
    return out


def compare_gradients(analytic: GradientSet, numeric: GradientSet, tol: float, h: float = 0.0) -> CheckReport:
    """Max relative error per parameter group: |a - n| / max(|a|, |n|, 1e-6)."""
    groups = []
    for name in analytic.names():
        a = analytic.get(name)
        n = numeric.get(name)
        worst, worst_idx = 0.0, 0
        for i in range(a.size):
            av, nv = a.data[i], n.data[i]
            err = abs(av - nv) / max(abs(av), abs(nv), 1e-6)
            if err > worst:
                worst, worst_idx = err, i
        groups.append(GroupReport(name, worst, worst_idx, worst <= tol))
    return CheckReport(groups=groups, tol=tol, h=h)


def grad_check(net, inputs, labels, h: float = 1e-5, tol: float = 1e-4, loss_fn=None) -> CheckReport:
    """Analytic backward vs central differences on the relaxed forward.

    Runs the relaxed forward, backpropagates through the tape, and compares
    every weight and theta entry against finite differences of the same
    relaxed model.  Callers wanting clean comparisons should verify the
    operating points sit away from surrogate/clip kinks (``kink_margin``).
    """
    if loss_fn is None:
        from lnmnet.training import cross_entropy_smoothed

        def loss_fn(logits, lbls):
            return cross_entropy_smoothed(logits, lbls, smoothing=0.0)

    logits, tape, _ = net.forward(inputs, relaxed=True, record=True)
    _, loss_grad = loss_fn(logits, labels)
    analytic = backward(tape, loss_grad)
    for name, g in analytic.grads.items():
        if name.endswith(".theta") and g.data[0] != 0.0:
            raise NumericalError(f"constant-term gradient leaked for {name}")
    numeric = finite_difference_gradients(net, inputs, labels, h, loss_fn)
    report = compare_gradients(analytic, numeric, tol, h)
    report.margin = kink_margin(tape)
    return report


def kink_margin(tape: Tape) -> float:
    """Distance from any recorded membrane value to the nearest derivative kink.

    Kinks: the hard threshold (reset flip), the surrogate window edges, and
    the clip boundary |u| = 1 on the polynomial input.  Finite differences
    are only trustworthy when this margin comfortably exceeds the step h.
    """
    worst = math.inf
    net = tape.network
    for i in net.spiking_indices():
        cfg = net.layers[i].cfg
        edge = cfg.surrogate.width / 2.0 if cfg.surrogate.kind == "rectangle" else cfg.surrogate.width
        for rec in tape.records[i]:
            for v in rec.u_next.data:
                d = abs(v - cfg.threshold)
                worst = min(worst, d, abs(d - edge))
            for v in rec.u_prev.data:
                worst = min(worst, abs(abs(v) - 1.0))
    return worst


def verify_replay(tape: Tape) -> bool:
    """Re-run the recorded forward and compare activations bit-exactly."""
    net = tape.network
    _, fresh, _ = net.forward(tape.input_sequence, relaxed=tape.relaxed, record=True)
    for i, layer in enumerate(net.layers):
        if layer.kind == "spiking":
            for a, b in zip(tape.records[i], fresh.records[i]):
                if not (
                    a.u_prev.exact_eq(b.u_prev)
                    and a.u_next.exact_eq(b.u_next)
                    and a.o_prev.exact_eq(b.o_prev)
                ):
                    return False
        elif layer.kind in ("dense", "conv2d", "decoder"):
            for a, b in zip(tape.records[i], fresh.records[i]):
                if not a.exact_eq(b):
                    return False
    return True
