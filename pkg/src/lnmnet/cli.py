"""Command line entry point.

Subcommands: train, eval, grad-check, energy, dump-models, reduce.  All
outputs are deterministic for a given config and seed: no timestamps, floats
serialized via repr, JSON with sorted keys, CSV written with explicit "\n"
line endings.  Exit codes: 0 success, 1 failed gradient check, 2 config or
data errors, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from lnmnet import analysis, autodiff, checkpoint, config, network, training
from lnmnet.backend import backend_name
from lnmnet.errors import ConfigError, DataError, NumericalError
from lnmnet.tensor import Rng, derive_seed

EXIT_OK = 0
EXIT_GRAD_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _write_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_cfg(args, apply_degree: bool = True) -> dict:
    raw = config.load_config(args.config)
    raw = config.apply_overrides(
        raw,
        seed=getattr(args, "seed", None),
        timesteps=getattr(args, "timesteps", None),
        degree=getattr(args, "degree", None) if apply_degree else None,
    )
    config.validate_config(raw, args.config)
    return raw


def _probe_batch(ctx, limit: int = 64):
    n = min(limit, len(ctx.dataset.val_labels))
    indices = list(range(n))
    x = training.assemble_batch(ctx.dataset, indices, "val", ctx.net.timesteps)
    labels = [ctx.dataset.val_labels[i] for i in indices]
    return x, labels


def cmd_train(args) -> int:
    raw = _load_cfg(args)
    ctx = config.build_run(raw)
    train_cfg = config.make_train_config(raw)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(config.effective_config(raw))
    shuffle_rng = Rng(derive_seed(ctx.seed, config.TAG_SHUFFLE))
    net, metrics = training.train(ctx.net, ctx.dataset, train_cfg, shuffle_rng)
    _write_csv(os.path.join(args.out, "metrics.csv"), metrics.epoch_rows())
    _write_csv(os.path.join(args.out, "theta.csv"), metrics.theta_rows())
    checkpoint.save_checkpoint(
        os.path.join(args.out, "checkpoint.lnm"),
        net,
        epoch=metrics.best_epoch,
        rng_state=shuffle_rng.state,
    )
    _write_json(
        os.path.join(args.out, "summary.json"),
        {
            "best_epoch": metrics.best_epoch,
            "best_val_acc": metrics.best_val_acc,
            "final_train_loss": metrics.train_loss[-1],
            "epochs": train_cfg.epochs,
            "backend": backend_name(),
        },
    )
    print(f"best_val_acc {metrics.best_val_acc!r} at epoch {metrics.best_epoch}")
    return EXIT_OK


def cmd_eval(args) -> int:
    raw = _load_cfg(args)
    ctx = config.build_run(raw)
    checkpoint.load_checkpoint(args.checkpoint, ctx.net)
    acc, n = training.evaluate(ctx.net, ctx.dataset, "val")
    print(f"val_accuracy {acc!r} over {n} samples")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(
            os.path.join(args.out, "eval.json"),
            {"val_accuracy": acc, "samples": n},
        )
    return EXIT_OK


def cmd_grad_check(args) -> int:
    raw = _load_cfg(args)
    ctx = config.build_run(raw, need_dataset=False)
    rng = Rng(derive_seed(ctx.seed, config.TAG_PROBE))
    report = None
    for attempt in range(50):
        net = network.build(ctx.spec, rng.fork(attempt))
        x = rng.normal_tensor((ctx.spec.timesteps, args.batch) + tuple(ctx.spec.input_shape))
        labels = [rng.randint_below(ctx.spec.num_classes) for _ in range(args.batch)]
        report = autodiff.grad_check(net, x, labels, h=args.h, tol=args.tol)
        if report.margin >= args.min_margin:
            break
    else:
        print("could not find a kink-free operating point in 50 attempts")
        return EXIT_GRAD_CHECK_FAILED
    for group in report.groups:
        print(f"{group.name} max_rel_err {group.max_rel_err!r}")
    status = "PASS" if report.passed else "FAIL"
    print(f"grad-check {status} (tol {args.tol!r}, h {args.h!r}, margin {report.margin!r})")
    return EXIT_OK if report.passed else EXIT_GRAD_CHECK_FAILED


def cmd_energy(args) -> int:
    raw = _load_cfg(args)
    ctx = config.build_run(raw)
    if args.checkpoint:
        checkpoint.load_checkpoint(args.checkpoint, ctx.net)
    x, _ = _probe_batch(ctx, limit=args.batch)
    _, _, stats = ctx.net.forward(x, record=False)
    model, lif_decay_free = config.make_energy_model(raw)
    report = analysis.energy_report(ctx.net, stats, model, lif_decay_free)
    print(f"baseline_pj {report.lif_total_pj!r}")
    print(f"learned_pj {report.lnm_total_pj!r}")
    print(f"overhead_fraction {report.overhead!r}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "energy.csv"), report.rows())
        _write_json(
            os.path.join(args.out, "energy.json"),
            {
                "baseline_pj": report.lif_total_pj,
                "learned_pj": report.lnm_total_pj,
                "overhead_fraction": report.overhead,
                "firing_rates": {str(k): v for k, v in stats.rates.items()},
            },
        )
    return EXIT_OK


def cmd_dump_models(args) -> int:
    raw = _load_cfg(args)
    ctx = config.build_run(raw, need_dataset=False)
    if args.checkpoint:
        checkpoint.load_checkpoint(args.checkpoint, ctx.net)
    rows = analysis.dump_models(ctx.net, samples=args.samples)
    _write_csv(args.out, rows)
    print(f"wrote {len(rows) - 1} samples to {args.out}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    # here --degree is the reduction target, not a config override
    raw = _load_cfg(args, apply_degree=False)
    ctx = config.build_run(raw)
    checkpoint.load_checkpoint(args.checkpoint, ctx.net)
    reduced_net, errors = analysis.reduce_network(ctx.net, args.degree)
    x, _ = _probe_batch(ctx, limit=args.batch)
    shift = analysis.logit_shift(ctx.net, reduced_net, x)
    os.makedirs(args.out, exist_ok=True)
    checkpoint.save_checkpoint(
        os.path.join(args.out, "reduced.lnm"), reduced_net, epoch=-1, rng_state=0
    )
    _write_json(
        os.path.join(args.out, "report.json"),
        {
            "target_degree": args.degree,
            "fit_errors": {f"layers.{i}": err for i, err in errors.items()},
            "max_logit_shift": shift,
        },
    )
    print(f"max_fit_error {max(errors.values())!r}")
    print(f"max_logit_shift {shift!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lnm",
        description="Spiking networks with learnable neuron dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=False, out_dir=True):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--timesteps", type=int, default=None, help="override timestep count")
        p.add_argument("--degree", type=int, default=None,
                       help="override every spiking layer's polynomial degree")
        if out_dir:
            p.add_argument("--out", required=out_required, default=None,
                           help="output directory")

    p_train = sub.add_parser("train", help="train a network and save the best checkpoint")
    add_common(p_train, out_required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_gc = sub.add_parser("grad-check", help="compare backward pass to finite differences")
    add_common(p_gc, out_dir=False)
    p_gc.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p_gc.add_argument("--tol", type=float, default=1e-4, help="max relative error")
    p_gc.add_argument("--batch", type=int, default=3)
    p_gc.add_argument("--min-margin", type=float, default=1e-3,
                      help="required distance from derivative kinks")
    p_gc.set_defaults(func=cmd_grad_check)

    p_energy = sub.add_parser("energy", help="estimate inference energy vs leaky baseline")
    add_common(p_energy)
    p_energy.add_argument("--checkpoint", default=None)
    p_energy.add_argument("--batch", type=int, default=64)
    p_energy.set_defaults(func=cmd_energy)

    p_dump = sub.add_parser("dump-models", help="tabulate learned membrane dynamics")
    add_common(p_dump, out_dir=False)
    p_dump.add_argument("--checkpoint", default=None)
    p_dump.add_argument("--samples", type=int, default=101, help="odd grid size")
    p_dump.add_argument("--out", required=True, help="output CSV file")
    p_dump.set_defaults(func=cmd_dump_models)

    p_reduce = sub.add_parser("reduce", help="project dynamics onto a lower degree")
    add_common(p_reduce, out_required=True)
    p_reduce.add_argument("--checkpoint", required=True)
    p_reduce.add_argument("--batch", type=int, default=64)
    p_reduce.set_defaults(func=cmd_reduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "reduce" and args.degree is None:
        parser.error("reduce requires --degree")
    try:
        return args.func(args)
    except (ConfigError, DataError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
