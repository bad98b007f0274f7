"""Network assembly: layer specs, shape validation, build, temporal forward.

A network is a strict sequence of layers ending in a single rate decoder.
Weight layers (dense, conv2d) inject input current; spiking layers carry
state across timesteps; avgpool/flatten reshape between them.  The forward
pass unrolls over T timesteps and averages the decoder output:

    logits = (1/T) * sum_t W_dec @ spikes(t)

Spike trains feeding weight layers after the first are binary, which is what
the energy model's accumulate-only counting relies on.
"""

from __future__ import annotations

from array import array
from dataclasses import dataclass, field

from lnmnet import autodiff, neuron
from lnmnet.errors import ConfigError
from lnmnet.tensor import (
    Rng,
    Tensor,
    add_chanvec,
    add_rowvec,
    axpy_,
    conv2d,
    avgpool2d,
    matmul_tb,
    scale,
    tensor_sum,
)

__all__ = [
    "DenseSpec",
    "Conv2dSpec",
    "SpikingSpec",
    "AvgPoolSpec",
    "FlattenSpec",
    "DecoderSpec",
    "NetworkSpec",
    "Network",
    "SpikeStats",
    "build",
    "encode_static",
]


# ---------------------------------------------------------------------------
# layer specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DenseSpec:
    out_features: int
    bias: bool = True
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class Conv2dSpec:
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    bias: bool = True
    kind: str = field(default="conv2d", init=False)


@dataclass(frozen=True)
class SpikingSpec:
    degree: int = 3
    threshold: float = 0.5
    surrogate: str = "rectangle"
    surrogate_width: float = 1.0
    init_decay: float = -0.5
    kind: str = field(default="spiking", init=False)


@dataclass(frozen=True)
class AvgPoolSpec:
    size: int
    kind: str = field(default="avgpool", init=False)


@dataclass(frozen=True)
class FlattenSpec:
    kind: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class DecoderSpec:
    num_classes: int
    kind: str = field(default="decoder", init=False)


def _conv_shape(shape, spec):
    if len(shape) != 3:
        raise ConfigError(f"conv2d needs a (C,H,W) input, got {shape}")
    c, h, w = shape
    out = []
    for size, label in ((h, "height"), (w, "width")):
        num = size + 2 * spec.padding - spec.kernel_size
        if num < 0 or num % spec.stride != 0:
            raise ConfigError(
                f"conv2d {label} {size} with kernel {spec.kernel_size}, stride "
                f"{spec.stride}, padding {spec.padding} does not tile"
            )
        out.append(num // spec.stride + 1)
    return (spec.out_channels, out[0], out[1])


@dataclass
class NetworkSpec:
    """Layer sequence plus the temporal and input geometry."""

    input_shape: tuple
    timesteps: int
    layers: list

    def validate(self) -> list:
        """Check the layer chain and return the per-layer output shapes."""
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        decoder_seen = False
        spiking_seen = False
        shape = tuple(self.input_shape)
        if not shape or any(d < 1 for d in shape):
            raise ConfigError(f"bad input shape {shape}")
        shapes = []
        last_was_spiking_output = False
        for i, spec in enumerate(self.layers):
            if decoder_seen:
                raise ConfigError("decoder must be the last layer")
            kind = spec.kind
            if kind == "dense":
                if len(shape) != 1:
                    raise ConfigError(f"dense layer {i} needs a flat input, got {shape}")
                if spec.out_features < 1:
                    raise ConfigError(f"dense layer {i}: out_features must be >= 1")
                shape = (spec.out_features,)
                last_was_spiking_output = False
            elif kind == "conv2d":
                shape = _conv_shape(shape, spec)
                last_was_spiking_output = False
            elif kind == "spiking":
                if spec.degree < 1:
                    raise ConfigError(f"spiking layer {i}: degree must be >= 1")
                spiking_seen = True
                last_was_spiking_output = True
            elif kind == "avgpool":
                if len(shape) != 3:
                    raise ConfigError(f"avgpool layer {i} needs (C,H,W), got {shape}")
                c, h, w = shape
                if spec.size < 1 or h % spec.size or w % spec.size:
                    raise ConfigError(f"avgpool layer {i}: size {spec.size} does not tile {shape}")
                shape = (c, h // spec.size, w // spec.size)
                last_was_spiking_output = False
            elif kind == "flatten":
                n = 1
                for d in shape:
                    n *= d
                shape = (n,)
                # flatten passes spike trains through unchanged
            elif kind == "decoder":
                if len(shape) != 1:
                    raise ConfigError(f"decoder needs a flat input, got {shape}")
                if spec.num_classes < 2:
                    raise ConfigError("decoder needs at least 2 classes")
                if not last_was_spiking_output:
                    raise ConfigError(
                        "decoder must read spikes: its input must come from a "
                        "spiking layer (flatten in between is fine)"
                    )
                shape = (spec.num_classes,)
                decoder_seen = True
            else:
                raise ConfigError(f"unknown layer kind {kind!r}")
            shapes.append(shape)
        if not decoder_seen:
            raise ConfigError("network must end with a decoder layer")
        if not spiking_seen:
            raise ConfigError("network needs at least one spiking layer")
        return shapes

    @property
    def num_classes(self) -> int:
        return self.layers[-1].num_classes


# ---------------------------------------------------------------------------
# materialized layers
# ---------------------------------------------------------------------------

class DenseLayer:
    kind = "dense"

    def __init__(self, weight: Tensor, bias):
        self.weight = weight  # (out, in)
        self.bias = bias

    def forward(self, x: Tensor) -> Tensor:
        out = matmul_tb(x, self.weight)
        if self.bias is not None:
            out = add_rowvec(out, self.bias)
        return out


class Conv2dLayer:
    kind = "conv2d"

    def __init__(self, weight: Tensor, bias, stride: int, padding: int):
        self.weight = weight  # (F, C, KH, KW)
        self.bias = bias
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, self.stride, self.padding)
        if self.bias is not None:
            out = add_chanvec(out, self.bias)
        return out


class SpikingLayer:
    kind = "spiking"

    def __init__(self, cfg: neuron.LayerNeuronConfig):
        self.cfg = cfg

    @property
    def params(self) -> neuron.LnmParams:
        return self.cfg.params


class AvgPoolLayer:
    kind = "avgpool"

    def __init__(self, size: int):
        self.size = size

    def forward(self, x: Tensor) -> Tensor:
        return avgpool2d(x, self.size)


class FlattenLayer:
    kind = "flatten"

    def forward(self, x: Tensor) -> Tensor:
        n = 1
        for d in x.shape[1:]:
            n *= d
        return x.reshape((x.shape[0], n))


class DecoderLayer:
    kind = "decoder"

    def __init__(self, weight: Tensor):
        self.weight = weight  # (classes, in)

    def forward(self, x: Tensor) -> Tensor:
        return matmul_tb(x, self.weight)


@dataclass
class SpikeStats:
    """Firing rates measured during a forward pass.

    rates[i] is the mean of the binary spike train of spiking layer i over
    all timesteps, batch entries, and neurons (in [0, 1]).
    """

    rates: dict
    neuron_counts: dict
    timesteps: int
    batch: int


class Network:
    """Materialized layer stack; see ``build``."""

    def __init__(self, spec: NetworkSpec, layers: list):
        self.spec = spec
        self.layers = layers
        self.timesteps = spec.timesteps

    # -- parameters ----------------------------------------------------

    def named_parameters(self) -> list:
        """(name, tensor) pairs in fixed traversal order."""
        out = []
        for i, layer in enumerate(self.layers):
            if layer.kind in ("dense", "conv2d"):
                out.append((f"layers.{i}.weight", layer.weight))
                if layer.bias is not None:
                    out.append((f"layers.{i}.bias", layer.bias))
            elif layer.kind == "spiking":
                out.append((f"layers.{i}.theta", layer.params.coeffs))
            elif layer.kind == "decoder":
                out.append((f"layers.{i}.weight", layer.weight))
        return out

    def parameter(self, name: str) -> Tensor:
        for n, t in self.named_parameters():
            if n == name:
                return t
        raise KeyError(name)

    def spiking_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if l.kind == "spiking"]

    # -- forward ---------------------------------------------------------

    def forward(self, input_sequence: Tensor, relaxed: bool = False, record: bool = True):
        """Unroll over time; returns (logits, tape, stats).

        input_sequence is (T, B, *input_shape).  With record=False the tape
        is None (evaluation mode).  relaxed=True substitutes the smoothed
        spike for what propagates forward (gradient checking).
        """
        spec_shape = tuple(self.spec.input_shape)
        if (
            input_sequence.ndim != 2 + len(spec_shape)
            or input_sequence.shape[0] != self.timesteps
            or input_sequence.shape[2:] != spec_shape
        ):
            raise ConfigError(
                f"input sequence shape {input_sequence.shape} does not match "
                f"(T={self.timesteps}, B, {spec_shape})"
            )
        T = self.timesteps
        batch = input_sequence.shape[1]
        frame_size = input_sequence.size // T
        decoder = self.layers[-1]
        num_classes = decoder.weight.shape[0]

        tape = autodiff.Tape(self, T, batch, relaxed, input_sequence) if record else None
        states = {}
        spike_sums = {i: 0.0 for i in self.spiking_indices()}
        neuron_counts = {}
        logits_acc = Tensor.zeros((batch, num_classes))

        for t in range(T):
            x = Tensor(
                (batch,) + spec_shape,
                array("d", input_sequence.data[t * frame_size : (t + 1) * frame_size]),
            )
            for i, layer in enumerate(self.layers):
                kind = layer.kind
                if kind == "spiking":
                    state = states.get(i)
                    if state is None:
                        state = neuron.NeuronState.resting(x.shape)
                        neuron_counts[i] = x.size // batch
                    state, rec = neuron.step(
                        state, x, layer.cfg, relaxed=relaxed, layer=i, timestep=t
                    )
                    states[i] = state
                    spike_sums[i] += tensor_sum(state.hard_spikes)
                    if record:
                        tape.records[i].append(rec)
                    x = state.spikes
                elif kind == "decoder":
                    if record:
                        tape.records[i].append(x)
                    axpy_(logits_acc, layer.forward(x))
                else:
                    if record:
                        if kind in ("dense", "conv2d"):
                            tape.records[i].append(x)
                        else:
                            tape.records[i] = x.shape
                    x = layer.forward(x)

        logits = scale(logits_acc, 1.0 / T)
        rates = {
            i: spike_sums[i] / (T * batch * neuron_counts[i]) for i in spike_sums
        }
        stats = SpikeStats(
            rates=rates, neuron_counts=neuron_counts, timesteps=T, batch=batch
        )
        return logits, tape, stats


# ---------------------------------------------------------------------------
# build and encoding
# ---------------------------------------------------------------------------

def build(spec: NetworkSpec, rng: Rng) -> Network:
    """Materialize a spec: Kaiming fan-in weights, zero biases, LIF dynamics.

    The draw order (layer order, row-major elements) is fixed, so a given
    (spec, seed) pair always yields bit-identical weights.
    """
    shapes = spec.validate()
    in_shape = tuple(spec.input_shape)
    layers = []
    for i, lspec in enumerate(spec.layers):
        kind = lspec.kind
        if kind == "dense":
            fan_in = in_shape[0]
            std = (2.0 / fan_in) ** 0.5
            weight = rng.normal_tensor((lspec.out_features, fan_in), std)
            bias = Tensor.zeros((lspec.out_features,)) if lspec.bias else None
            layers.append(DenseLayer(weight, bias))
        elif kind == "conv2d":
            cin = in_shape[0]
            fan_in = cin * lspec.kernel_size * lspec.kernel_size
            std = (2.0 / fan_in) ** 0.5
            weight = rng.normal_tensor(
                (lspec.out_channels, cin, lspec.kernel_size, lspec.kernel_size), std
            )
            bias = Tensor.zeros((lspec.out_channels,)) if lspec.bias else None
            layers.append(Conv2dLayer(weight, bias, lspec.stride, lspec.padding))
        elif kind == "spiking":
            cfg = neuron.LayerNeuronConfig(
                params=neuron.lif_init(lspec.degree, lspec.init_decay),
                threshold=lspec.threshold,
                surrogate=neuron.SurrogateConfig(lspec.surrogate, lspec.surrogate_width),
            )
            layers.append(SpikingLayer(cfg))
        elif kind == "avgpool":
            layers.append(AvgPoolLayer(lspec.size))
        elif kind == "flatten":
            layers.append(FlattenLayer())
        elif kind == "decoder":
            fan_in = in_shape[0]
            std = (2.0 / fan_in) ** 0.5
            layers.append(DecoderLayer(rng.normal_tensor((lspec.num_classes, fan_in), std)))
        in_shape = shapes[i]
    return Network(spec, layers)


def encode_static(images: Tensor, timesteps: int) -> Tensor:
    """Constant-current encoding: replicate a (B, ...) batch at every step."""
    if timesteps < 1:
        raise ConfigError(f"timesteps must be >= 1, got {timesteps}")
    data = array("d")
    for _ in range(timesteps):
        data.extend(images.data)
    return Tensor((timesteps,) + images.shape, data)
