"""Energy estimation, learned-dynamics dumps, and degree reduction.

Energy accounting follows the usual 45nm convention: a multiply-accumulate
costs 4.6 pJ and an accumulate 0.9 pJ.  The first weight layer sees real
valued currents and pays full-rate MACs; every weight layer downstream of a
spiking layer pays ACs gated by that layer's measured firing rate (pooling
and flatten are transparent to the gating).  Neuron updates cost one MAC per
neuron per timestep for the plain leaky baseline and degree-many MACs for a
learned polynomial, since Horner evaluation of a degree-N polynomial with
zero constant term is exactly N multiply-accumulates.  Bias adds, pooling,
thresholding, and resets are excluded from both columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from lnmnet import network
from lnmnet.errors import ConfigError, NumericalError
from lnmnet.neuron import LnmParams, eval_poly_horner
from lnmnet.tensor import Rng, Tensor, sub, tensor_absmax

__all__ = [
    "EnergyModel",
    "LayerOps",
    "EnergyReport",
    "count_ops",
    "energy_report",
    "dump_models",
    "solve_linear",
    "reduce_degree",
    "reduce_network",
    "logit_shift",
]


@dataclass(frozen=True)
class EnergyModel:
    e_mac_pj: float = 4.6
    e_ac_pj: float = 0.9


@dataclass
class LayerOps:
    """Per-timestep, per-sample operation counts for one layer."""

    name: str
    kind: str
    macs: float = 0.0
    acs: float = 0.0

    def energy_pj(self, timesteps: int, model: EnergyModel) -> float:
        return timesteps * (self.macs * model.e_mac_pj + self.acs * model.e_ac_pj)


def _prod(shape) -> int:
    out = 1
    for dim in shape:
        out *= dim
    return out


def _synaptic_ops(layer, in_shape, out_shape) -> float:
    if layer.kind == "dense":
        return in_shape[0] * out_shape[0]
    if layer.kind == "conv2d":
        c_in = in_shape[0]
        c_out, h_out, w_out = out_shape
        ksize = layer.weight.shape[2]
        return c_out * h_out * w_out * c_in * ksize * ksize
    if layer.kind == "decoder":
        return in_shape[0] * layer.weight.shape[0]
    raise ConfigError(f"not a weight layer: {type(layer).__name__}")


def count_ops(net: network.Network, stats: network.SpikeStats,
              lif_decay_free: bool = False):
    """Operation counts under the leaky baseline vs the configured dynamics.

    Synaptic columns are identical in both (same spike traffic, measured via
    stats); only the neuron-update cost differs.  Returns
    (lif_ops, lnm_ops) lists aligned with net.layers.
    """
    shapes = net.spec.validate()
    rates = dict(stats.rates)
    lif_ops: list = []
    lnm_ops: list = []
    in_shape = tuple(net.spec.input_shape)
    source_rate = None  # None: real-valued input; else presynaptic firing rate
    for i, layer in enumerate(net.layers):
        out_shape = shapes[i]
        name = f"layers.{i}"
        kind = layer.kind
        lif = LayerOps(name, kind)
        lnm = LayerOps(name, kind)
        if kind in ("dense", "conv2d", "decoder"):
            ops = _synaptic_ops(layer, in_shape, out_shape)
            if source_rate is None:
                lif.macs = lnm.macs = float(ops)
            else:
                lif.acs = lnm.acs = ops * source_rate
            source_rate = None
        elif kind == "spiking":
            neurons = _prod(out_shape)
            if not lif_decay_free:
                lif.macs = float(neurons)
            lnm.macs = float(neurons * layer.params.degree)
            source_rate = rates[i]
        # pooling and flatten: no counted ops, gating passes through
        lif_ops.append(lif)
        lnm_ops.append(lnm)
        in_shape = out_shape
    return lif_ops, lnm_ops


@dataclass
class EnergyReport:
    timesteps: int
    model: EnergyModel
    lif_layers: list = field(default_factory=list)
    lnm_layers: list = field(default_factory=list)

    @property
    def lif_total_pj(self) -> float:
        return sum(o.energy_pj(self.timesteps, self.model) for o in self.lif_layers)

    @property
    def lnm_total_pj(self) -> float:
        return sum(o.energy_pj(self.timesteps, self.model) for o in self.lnm_layers)

    @property
    def overhead(self) -> float:
        """Fractional extra energy of learned dynamics over the baseline."""
        return (self.lnm_total_pj - self.lif_total_pj) / self.lif_total_pj

    def rows(self):
        """CSV header + per-layer rows + totals row."""
        header = [
            "layer", "kind",
            "lif_macs_per_step", "lif_acs_per_step",
            "lnm_macs_per_step", "lnm_acs_per_step",
            "lif_pj", "lnm_pj",
        ]
        rows = [header]
        for lif, lnm in zip(self.lif_layers, self.lnm_layers):
            rows.append([
                lif.name, lif.kind,
                repr(lif.macs), repr(lif.acs),
                repr(lnm.macs), repr(lnm.acs),
                repr(lif.energy_pj(self.timesteps, self.model)),
                repr(lnm.energy_pj(self.timesteps, self.model)),
            ])
        rows.append([
            "total", "",
            "", "", "", "",
            repr(self.lif_total_pj), repr(self.lnm_total_pj),
        ])
        return rows


def energy_report(net: network.Network, stats: network.SpikeStats,
                  model: EnergyModel = EnergyModel(),
                  lif_decay_free: bool = False) -> EnergyReport:
    lif_ops, lnm_ops = count_ops(net, stats, lif_decay_free)
    return EnergyReport(
        timesteps=net.timesteps,
        model=model,
        lif_layers=lif_ops,
        lnm_layers=lnm_ops,
    )


def dump_models(net: network.Network, samples: int = 101):
    """Tabulate each spiking layer's learned drift f(u) on a uniform grid.

    The sample count must be odd so u = 0 (the pinned resting point) lands
    exactly on the grid.  Returns CSV header + rows.
    """
    if samples < 3 or samples % 2 == 0:
        raise ConfigError(f"samples must be odd and >= 3, got {samples}")
    rows = [["layer", "u", "f_u"]]
    step = 2.0 / (samples - 1)
    for idx in net.spiking_indices():
        params = net.layers[idx].cfg.params
        for j in range(samples):
            u = -1.0 + j * step
            grid = Tensor.from_flat([u], (1,))
            value = eval_poly_horner(params, grid).data[0]
            rows.append([str(idx), repr(u), repr(value)])
    return rows


def solve_linear(matrix, rhs):
    """Gaussian elimination with partial pivoting on plain Python floats."""
    n = len(rhs)
    a = [list(row) for row in matrix]
    b = list(rhs)
    for col in range(n):
        pivot = col
        for r in range(col + 1, n):
            if abs(a[r][col]) > abs(a[pivot][col]):
                pivot = r
        if abs(a[pivot][col]) < 1e-300:
            raise NumericalError("singular system in least-squares solve")
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]
            b[col], b[pivot] = b[pivot], b[col]
        inv = 1.0 / a[col][col]
        for r in range(col + 1, n):
            factor = a[r][col] * inv
            if factor != 0.0:
                for c in range(col, n):
                    a[r][c] -= factor * a[col][c]
                b[r] -= factor * b[col]
    x = [0.0] * n
    for row in range(n - 1, -1, -1):
        acc = b[row]
        for c in range(row + 1, n):
            acc -= a[row][c] * x[c]
        x[row] = acc / a[row][row]
    return x


def reduce_degree(params: LnmParams, target_degree: int, grid_points: int = 1024):
    """Least-squares projection of the drift onto a lower degree.

    Fits coefficients for u^1..u^target on a uniform grid over [-1, 1]
    (constant term stays pinned to zero) and reports the maximum absolute
    deviation on that grid.  Returns (reduced LnmParams, max_error).
    """
    if target_degree < 1:
        raise ConfigError(f"target degree must be >= 1, got {target_degree}")
    if grid_points < target_degree + 1:
        raise ConfigError(
            f"grid_points ({grid_points}) must exceed target degree ({target_degree})"
        )
    source = params.tolist()
    if target_degree >= params.degree:
        padded = source + [0.0] * (target_degree + 1 - len(source))
        return LnmParams(padded), 0.0

    step = 2.0 / (grid_points - 1)
    us = [-1.0 + i * step for i in range(grid_points)]
    fs = []
    for u in us:
        acc = 0.0
        for coeff in reversed(source):
            acc = acc * u + coeff
        fs.append(acc)

    d = target_degree
    gram = [[0.0] * d for _ in range(d)]
    rhs = [0.0] * d
    for i, u in enumerate(us):
        powers = [1.0]
        for _ in range(2 * d):
            powers.append(powers[-1] * u)
        for j in range(d):
            rhs[j] += powers[j + 1] * fs[i]
            for k in range(d):
                gram[j][k] += powers[j + 1 + k + 1]
    solution = solve_linear(gram, rhs)

    reduced = LnmParams([0.0] + solution)
    max_err = 0.0
    for i, u in enumerate(us):
        acc = 0.0
        for coeff in reversed(reduced.tolist()):
            acc = acc * u + coeff
        err = abs(acc - fs[i])
        if err > max_err:
            max_err = err
    return reduced, max_err


def reduce_network(net: network.Network, target_degree: int, grid_points: int = 1024):
    """Copy of net with every spiking layer's dynamics reduced in degree.

    Returns (new network, {layer_idx: max_error}).
    """
    new_layers = []
    for spec in net.spec.layers:
        if isinstance(spec, network.SpikingSpec):
            new_layers.append(replace(spec, degree=target_degree))
        else:
            new_layers.append(spec)
    new_spec = replace(net.spec, layers=new_layers)
    reduced_net = network.build(new_spec, Rng(0))
    errors = {}
    for name, param in net.named_parameters():
        target = reduced_net.parameter(name)
        if name.endswith(".theta"):
            idx = int(name.split(".")[1])
            old = net.layers[idx].cfg.params
            reduced, err = reduce_degree(old, target_degree, grid_points)
            target.data[:] = reduced.coeffs.data
            errors[idx] = err
        else:
            target.data[:] = param.data
    return reduced_net, errors


def logit_shift(net_a: network.Network, net_b: network.Network, inputs: Tensor) -> float:
    """Max absolute logit difference between two networks on a probe batch."""
    logits_a, _, _ = net_a.forward(inputs, record=False)
    logits_b, _, _ = net_b.forward(inputs, record=False)
    return tensor_absmax(sub(logits_a, logits_b))
