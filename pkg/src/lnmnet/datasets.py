"""Datasets: IDX image files, pre-framed event tensors, and a synthetic
temporal task.

The synthetic task is built so that class identity lives only in the
conjunction of events across timesteps: each sample draws a hidden base
channel a and phase rho, fires channel a at t = rho and channel
(a + class) mod channels at t = rho + 1.  Any single timestep's marginal
distribution is identical for every class (the base channel is uniform), so
a per-timestep linear probe sits at chance; decoding requires integrating
across steps, which is exactly what the spiking layers' membrane state is
for.
"""

from __future__ import annotations

import struct
from array import array
from dataclasses import dataclass

from lnmnet.errors import ConfigError, DataError
from lnmnet.tensor import Rng, Tensor

__all__ = [
    "Dataset",
    "make_synthetic_temporal",
    "load_idx_images",
    "load_idx_labels",
    "load_idx_dataset",
    "load_framed_events",
    "gather_static",
    "gather_temporal",
]


@dataclass
class Dataset:
    """Train/val splits with either static or temporal inputs.

    Temporal inputs are (N, T, *frame); static inputs are (N, *frame) and
    get constant-current encoded to the network's T at batch time.
    """

    train_inputs: Tensor
    train_labels: list
    val_inputs: Tensor
    val_labels: list
    temporal: bool
    input_shape: tuple
    num_classes: int
    timesteps: int = 0  # temporal datasets only

    def check_compatible(self, net) -> None:
        if tuple(net.spec.input_shape) != tuple(self.input_shape):
            raise ConfigError(
                f"dataset frame shape {self.input_shape} does not match "
                f"network input {tuple(net.spec.input_shape)}"
            )
        if self.temporal and self.timesteps != net.timesteps:
            raise ConfigError(
                f"dataset has {self.timesteps} timesteps, network expects {net.timesteps}"
            )
        classes = net.spec.num_classes
        if self.num_classes > classes:
            raise ConfigError(
                f"dataset has {self.num_classes} classes, decoder only {classes}"
            )


# ---------------------------------------------------------------------------
# synthetic temporal task
# ---------------------------------------------------------------------------

def make_synthetic_temporal(
    classes: int,
    timesteps: int,
    train_samples: int,
    val_samples: int,
    channels: int = 0,
    noise: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Two-pulse difference-coded spike sequences; see the module docstring.

    noise is an independent per-cell bit-flip probability applied after the
    pulses are placed.  Identical arguments give bit-identical datasets.
    """
    channels = channels or classes
    if classes < 2:
        raise ConfigError("synthetic task needs at least 2 classes")
    if channels < classes:
        raise ConfigError(f"channels ({channels}) must be >= classes ({classes})")
    if timesteps < 2:
        raise ConfigError("synthetic task needs at least 2 timesteps")
    if not 0.0 <= noise < 1.0:
        raise ConfigError(f"noise must be in [0, 1), got {noise}")
    if train_samples < 1:
        raise ConfigError("synthetic task needs at least 1 training sample")
    rng = Rng(seed)

    def make_split(n):
        if n == 0:  # placeholder frame, no labels (same convention as loaders)
            return Tensor.zeros((1, timesteps, channels)), []
        labels = [i % classes for i in range(n)]
        data = array("d", bytes(8 * n * timesteps * channels))
        frame = timesteps * channels
        for i in range(n):
            base = rng.randint_below(channels)
            phase = rng.randint_below(timesteps - 1)
            partner = (base + labels[i]) % channels
            off = i * frame
            data[off + phase * channels + base] = 1.0
            data[off + (phase + 1) * channels + partner] = 1.0
            if noise > 0.0:
                for j in range(frame):
                    if rng.uniform() < noise:
                        data[off + j] = 1.0 - data[off + j]
        return Tensor((n, timesteps, channels), data), labels

    train_x, train_y = make_split(train_samples)
    val_x, val_y = make_split(val_samples)
    return Dataset(
        train_inputs=train_x,
        train_labels=train_y,
        val_inputs=val_x,
        val_labels=val_y,
        temporal=True,
        input_shape=(channels,),
        num_classes=classes,
        timesteps=timesteps,
    )


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def _read_exact(fh, count, offset, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise DataError(f"truncated IDX file while reading {what}", offset=offset)
    return buf


def _read_idx_header(fh, expected_ndim, path):
    magic_bytes = _read_exact(fh, 4, 0, "magic")
    (magic,) = struct.unpack(">I", magic_bytes)
    if magic >> 16 != 0:
        raise DataError(f"{path}: bad IDX magic 0x{magic:08x}", offset=0)
    dtype = (magic >> 8) & 0xFF
    ndim = magic & 0xFF
    if dtype != 0x08:
        raise DataError(f"{path}: unsupported IDX element type 0x{dtype:02x}", offset=2)
    if ndim != expected_ndim:
        raise DataError(f"{path}: expected {expected_ndim}-d IDX data, got {ndim}-d", offset=3)
    dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, 4, "dimensions"))
    return dims, 4 + 4 * ndim


def load_idx_images(path) -> Tensor:
    """ubyte IDX image stack -> (N, 1, H, W) float64 in [0, 1]."""
    with open(path, "rb") as fh:
        (n, h, w), offset = _read_idx_header(fh, 3, path)
        raw = _read_exact(fh, n * h * w, offset, "pixel data")
        extra = fh.read(1)
    if extra:
        raise DataError(f"{path}: trailing bytes after pixel data", offset=offset + n * h * w)
    data = array("d", bytes(0))
    inv = 1.0 / 255.0
    data.extend(b * inv for b in raw)
    return Tensor((n, 1, h, w), data)


def load_idx_labels(path) -> list:
    """ubyte IDX label vector -> list of ints."""
    with open(path, "rb") as fh:
        (n,), offset = _read_idx_header(fh, 1, path)
        raw = _read_exact(fh, n, offset, "label data")
        extra = fh.read(1)
    if extra:
        raise DataError(f"{path}: trailing bytes after label data", offset=offset + n)
    return list(raw)


def load_idx_dataset(images_path, labels_path, val_fraction: float = 0.1) -> Dataset:
    """Image/label IDX pair split deterministically (tail becomes val)."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != len(labels):
        raise DataError(
            f"image count {images.shape[0]} does not match label count {len(labels)}"
        )
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n = images.shape[0]
    n_val = int(n * val_fraction)
    n_train = n - n_val
    if n_train < 1:
        raise ConfigError("empty training split")
    frame = images.size // n
    shape = images.shape[1:]
    train_x = Tensor((n_train,) + shape, images.data[: n_train * frame])
    val_x = (
        Tensor((n_val,) + shape, images.data[n_train * frame :])
        if n_val
        else Tensor.zeros((1,) + shape)
    )
    classes = max(labels) + 1
    return Dataset(
        train_inputs=train_x,
        train_labels=labels[:n_train],
        val_inputs=val_x,
        val_labels=labels[n_train:],
        temporal=False,
        input_shape=shape,
        num_classes=classes,
    )


# ---------------------------------------------------------------------------
# pre-framed event tensors (shared array-container format)
# ---------------------------------------------------------------------------

def load_framed_events(path, val_fraction: float = 0.1) -> Dataset:
    """Container file with 'frames' (N,T,...) and integer 'labels' (N,)."""
    from lnmnet.checkpoint import read_container

    arrays, _meta = read_container(path)
    if "frames" not in arrays or "labels" not in arrays:
        raise DataError(f"{path}: container must hold 'frames' and 'labels'")
    frames = arrays["frames"]
    raw_labels = arrays["labels"]
    if frames.ndim < 3:
        raise DataError(f"{path}: frames must be (N, T, ...), got {frames.shape}")
    labels = []
    for v in raw_labels.data:
        if v != int(v) or v < 0:
            raise DataError(f"{path}: labels must be non-negative integers")
        labels.append(int(v))
    n, t = frames.shape[0], frames.shape[1]
    if len(labels) != n:
        raise DataError(f"{path}: {n} frames vs {len(labels)} labels")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n_val = int(n * val_fraction)
    n_train = n - n_val
    if n_train < 1:
        raise ConfigError("empty training split")
    frame = frames.size // n
    shape = frames.shape[2:]
    train_x = Tensor((n_train, t) + shape, frames.data[: n_train * frame])
    val_x = (
        Tensor((n_val, t) + shape, frames.data[n_train * frame :])
        if n_val
        else Tensor.zeros((1, t) + shape)
    )
    return Dataset(
        train_inputs=train_x,
        train_labels=labels[:n_train],
        val_inputs=val_x,
        val_labels=labels[n_train:],
        temporal=True,
        input_shape=shape,
        num_classes=max(labels) + 1,
        timesteps=t,
    )


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------

def gather_static(inputs: Tensor, indices) -> Tensor:
    """Select rows of an (N, *frame) tensor -> (B, *frame)."""
    n = inputs.shape[0]
    frame = inputs.size // n
    data = array("d")
    for i in indices:
        data.extend(inputs.data[i * frame : (i + 1) * frame])
    return Tensor((len(indices),) + inputs.shape[1:], data)


def gather_temporal(inputs: Tensor, indices) -> Tensor:
    """Select rows of an (N, T, *frame) tensor -> time-major (T, B, *frame)."""
    n, t = inputs.shape[0], inputs.shape[1]
    frame = inputs.size // (n * t)
    data = array("d")
    for step in range(t):
        for i in indices:
            off = (i * t + step) * frame
            data.extend(inputs.data[off : off + frame])
    return Tensor((t, len(indices)) + inputs.shape[2:], data)
