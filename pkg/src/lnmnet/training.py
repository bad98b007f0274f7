"""Training: label-smoothed cross-entropy, SGD with momentum, cosine
schedule with linear warmup, and the epoch loop.

Membrane-dynamics coefficients get their own learning rate and are never
weight-decayed; their constant term is re-zeroed after every optimizer step
so the dynamics always map a resting membrane to zero drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from lnmnet import autodiff, datasets, network
from lnmnet.backend import kernels
from lnmnet.errors import ConfigError, NumericalError
from lnmnet.tensor import Rng, Tensor, argmax_rows, tensor_dot

__all__ = [
    "TrainConfig",
    "Metrics",
    "cross_entropy_smoothed",
    "cosine_lr",
    "SgdMomentum",
    "clip_gradients_",
    "assemble_batch",
    "evaluate",
    "train",
]


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    lr_weights: float
    lr_lnm: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    warmup_epochs: int = 0
    grad_clip_norm: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_weights < 0 or self.lr_lnm < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(
                f"label_smoothing must be in [0, 1), got {self.label_smoothing}"
            )
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs}"
            )
        if self.grad_clip_norm < 0:
            raise ConfigError(f"grad_clip_norm must be >= 0, got {self.grad_clip_norm}")


def cross_entropy_smoothed(logits: Tensor, labels, smoothing: float):
    """Mean label-smoothed cross-entropy and its gradient w.r.t. logits.

    Target distribution per row: (1 - s) on the true class plus s/m spread
    over all m classes.  Returns (loss, dloss/dlogits); the gradient already
    carries the 1/batch factor.
    """
    if logits.ndim != 2:
        raise ConfigError(f"logits must be 2-d, got {logits.shape}")
    batch, m = logits.shape
    if len(labels) != batch:
        raise ConfigError(f"{batch} logit rows vs {len(labels)} labels")
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f"smoothing must be in [0, 1), got {smoothing}")
    grad = Tensor.zeros((batch, m))
    loss = 0.0
    inv_b = 1.0 / batch
    uniform = smoothing / m
    for b in range(batch):
        label = labels[b]
        if not 0 <= label < m:
            raise ConfigError(f"label {label} out of range for {m} classes")
        row = logits.data[b * m : (b + 1) * m]
        peak = max(row)
        if not peak == peak or peak == math.inf:
            raise NumericalError("non-finite logits in loss")
        exps = [math.exp(v - peak) for v in row]
        total = 0.0
        for e in exps:
            total += e
        log_total = math.log(total)
        row_loss = 0.0
        for c in range(m):
            log_p = (row[c] - peak) - log_total
            q = uniform + (1.0 - smoothing if c == label else 0.0)
            row_loss -= q * log_p
            grad.data[b * m + c] = (exps[c] / total - q) * inv_b
        loss += row_loss
    return loss * inv_b, grad


def cosine_lr(epoch: int, total_epochs: int, base_lr: float, warmup_epochs: int = 0) -> float:
    """Linear warmup to base_lr, then cosine decay reaching 0 at total_epochs."""
    if total_epochs < 1:
        raise ConfigError(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= warmup_epochs < total_epochs:
        raise ConfigError(f"warmup_epochs must be in [0, total_epochs), got {warmup_epochs}")
    if epoch < warmup_epochs:
        return base_lr * (epoch + 1) / (warmup_epochs + 1)
    span = total_epochs - warmup_epochs
    progress = (epoch - warmup_epochs) / span
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


class SgdMomentum:
    """SGD with momentum: v = m*v + g + wd*p; p -= lr*v.

    Weight decay applies to weights and biases only; membrane coefficients
    use lr_lnm and are decay-free with the constant term pinned to zero.
    """

    def __init__(self, net: network.Network, momentum: float, weight_decay: float):
        self.net = net
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = {
            name: Tensor.zeros(p.shape) for name, p in net.named_parameters()
        }

    def step(self, grads: autodiff.GradientSet, lr_weights: float, lr_lnm: float) -> None:
        for name, param in self.net.named_parameters():
            grad = grads.grads[name]
            vel = self.velocities[name]
            is_theta = name.endswith(".theta")
            lr = lr_lnm if is_theta else lr_weights
            wd = 0.0 if is_theta else self.weight_decay
            kernels.sgd_update(
                param.data, grad.data, vel.data, lr, self.momentum, wd, param.size
            )
            if is_theta:
                param.data[0] = 0.0


def clip_gradients_(grads: autodiff.GradientSet, max_norm: float) -> float:
    """Scale all gradients in place if their global L2 norm exceeds max_norm."""
    total = 0.0
    for name in sorted(grads.grads):
        g = grads.grads[name]
        total += tensor_dot(g, g)
    norm = math.sqrt(total)
    if max_norm > 0.0 and norm > max_norm:
        factor = max_norm / norm
        for name in sorted(grads.grads):
            g = grads.grads[name]
            kernels.ew_scale(g.data, factor, g.data, g.size)
    return norm


@dataclass
class Metrics:
    """Per-epoch training history plus the best-validation bookkeeping."""

    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr_weights: list = field(default_factory=list)
    lr_lnm: list = field(default_factory=list)
    firing_rates: list = field(default_factory=list)  # per epoch: {layer_idx: rate}
    theta_history: list = field(default_factory=list)  # per epoch: {layer_idx: [coeffs]}
    best_epoch: int = -1
    best_val_acc: float = -1.0

    def epoch_rows(self):
        """CSV header + rows; one row per epoch, floats via repr."""
        spiking = sorted(self.firing_rates[0]) if self.firing_rates else []
        header = ["epoch", "train_loss", "train_acc", "val_acc", "lr_weights", "lr_lnm"]
        header += [f"firing_rate_layer{i}" for i in spiking]
        rows = [header]
        for e in range(len(self.train_loss)):
            row = [
                str(e),
                repr(self.train_loss[e]),
                repr(self.train_acc[e]),
                repr(self.val_acc[e]),
                repr(self.lr_weights[e]),
                repr(self.lr_lnm[e]),
            ]
            row += [repr(self.firing_rates[e][i]) for i in spiking]
            rows.append(row)
        return rows

    def theta_rows(self):
        """CSV header + rows of membrane coefficients per epoch and layer."""
        if not self.theta_history:
            return [["epoch", "layer"]]
        max_len = max(
            len(coeffs) for snap in self.theta_history for coeffs in snap.values()
        )
        header = ["epoch", "layer"] + [f"theta_{k}" for k in range(max_len)]
        rows = [header]
        for e, snap in enumerate(self.theta_history):
            for layer_idx in sorted(snap):
                coeffs = snap[layer_idx]
                row = [str(e), str(layer_idx)] + [repr(c) for c in coeffs]
                row += [""] * (max_len - len(coeffs))
                rows.append(row)
        return rows


def _batches(indices, batch_size):
    for start in range(0, len(indices), batch_size):
        yield indices[start : start + batch_size]


def assemble_batch(data: datasets.Dataset, indices, split: str, timesteps: int) -> Tensor:
    """Gather samples into the time-major (T, B, *frame) layout forward wants."""
    inputs = data.train_inputs if split == "train" else data.val_inputs
    if data.temporal:
        return datasets.gather_temporal(inputs, indices)
    return network.encode_static(datasets.gather_static(inputs, indices), timesteps)


def evaluate(net: network.Network, data: datasets.Dataset, split: str = "val",
             batch_size: int = 256):
    """Top-1 accuracy of net on one split; returns (accuracy, sample_count)."""
    labels = data.train_labels if split == "train" else data.val_labels
    n = len(labels)
    correct = 0
    for batch in _batches(list(range(n)), batch_size):
        x = assemble_batch(data, batch, split, net.timesteps)
        logits, _, _ = net.forward(x, record=False)
        preds = argmax_rows(logits)
        for j, i in enumerate(batch):
            if preds[j] == labels[i]:
                correct += 1
    return correct / n, n


def train(net: network.Network, data: datasets.Dataset, cfg: TrainConfig,
          rng: Rng, step_callback=None):
    """Run the full loop and return (net, metrics) with the best-validation
    parameters restored into net.

    Shuffling consumes only the supplied rng, so identical (net, data, cfg,
    seed) quadruples reproduce training bit for bit.  step_callback, when
    given, is invoked as step_callback(net, epoch, step) after every
    optimizer step.
    """
    data.check_compatible(net)
    if len(data.val_labels) < 1:
        raise ConfigError("training requires a non-empty validation split")
    optimizer = SgdMomentum(net, cfg.momentum, cfg.weight_decay)
    metrics = Metrics()
    n_train = len(data.train_labels)
    indices = list(range(n_train))
    best_params = None

    for epoch in range(cfg.epochs):
        lr_w = cosine_lr(epoch, cfg.epochs, cfg.lr_weights, cfg.warmup_epochs)
        lr_t = cosine_lr(epoch, cfg.epochs, cfg.lr_lnm, cfg.warmup_epochs)
        rng.shuffle(indices)
        loss_sum = 0.0
        correct = 0
        rate_sums: dict = {}
        rate_weight = 0
        for step, batch in enumerate(_batches(indices, cfg.batch_size)):
            x = assemble_batch(data, batch, "train", net.timesteps)
            labels = [data.train_labels[i] for i in batch]
            try:
                logits, tape, stats = net.forward(x, record=True)
                loss, dlogits = cross_entropy_smoothed(
                    logits, labels, cfg.label_smoothing
                )
                grads = autodiff.backward(tape, dlogits)
            except NumericalError as err:
                raise NumericalError(
                    f"training diverged at epoch {epoch}: {err}"
                ) from err
            if cfg.grad_clip_norm > 0.0:
                clip_gradients_(grads, cfg.grad_clip_norm)
            optimizer.step(grads, lr_w, lr_t)
            if step_callback is not None:
                step_callback(net, epoch, step)
            loss_sum += loss * len(batch)
            preds = argmax_rows(logits)
            for j in range(len(batch)):
                if preds[j] == labels[j]:
                    correct += 1
            for idx, rate in stats.rates.items():
                rate_sums[idx] = rate_sums.get(idx, 0.0) + rate * len(batch)
            rate_weight += len(batch)

        val_acc, _ = evaluate(net, data, "val", max(cfg.batch_size, 256))
        metrics.train_loss.append(loss_sum / n_train)
        metrics.train_acc.append(correct / n_train)
        metrics.val_acc.append(val_acc)
        metrics.lr_weights.append(lr_w)
        metrics.lr_lnm.append(lr_t)
        metrics.firing_rates.append(
            {idx: rate_sums[idx] / rate_weight for idx in rate_sums}
        )
        metrics.theta_history.append(
            {
                idx: net.layers[idx].cfg.params.tolist()
                for idx in net.spiking_indices()
            }
        )
        if val_acc > metrics.best_val_acc:
            metrics.best_val_acc = val_acc
            metrics.best_epoch = epoch
            best_params = {
                name: p.copy() for name, p in net.named_parameters()
            }

    if best_params is not None:
        for name, param in net.named_parameters():
            param.data[:] = best_params[name].data
    return net, metrics
