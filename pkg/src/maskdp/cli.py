"""Command-line entry point: ``maskdp {account,calibrate,gen-data,train,sweep}``.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are flag
names (``"batch-size"`` or ``"batch_size"``). Flags given on the command line
win. The effective configuration, defaults included, is echoed on stderr (or
embedded in the ``--json`` document).

Exit codes: 0 success, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

from . import accountant
from .data import DatasetFormatError, GeneratorConfig, generate_split, read_dataset, write_dataset
from .model import save_checkpoint
from .trainer import TrainConfig, _jsonable, parse_cell, sweep, train, write_table

EXIT_USAGE = 2
EXIT_RUNTIME = 3

_DEFAULT_GEN = GeneratorConfig()
_DEFAULT_TRAIN = TrainConfig()


class RuntimeFailure(Exception):
    pass


def _add_common(p):
    p.add_argument("--config", help="JSON file whose keys mirror the flags")
    p.add_argument("--json", action="store_true", help="emit one JSON document on stdout")


def _add_training_flags(p):
    d = _DEFAULT_TRAIN
    p.add_argument("--train-data", help="training dataset file")
    p.add_argument("--test-data", help="test dataset file")
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="expected batch size B")
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--clip", type=float, default=d.clip, help="clip threshold C ('inf' only with z=0)")
    p.add_argument("--delta", type=float, default=d.delta)
    p.add_argument("--d-h", type=int, default=d.d_h, help="hidden width")
    p.add_argument("--schedule", choices=("constant", "warmup_cosine"), default=d.schedule)
    p.add_argument("--warmup-epochs", type=int, default=d.warmup_epochs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskdp", description="Masked differential privacy toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("account", help="privacy cost of a subsampled Gaussian run")
    p.add_argument("--q", type=float, help="sampling rate B/N")
    p.add_argument("--z", type=float, help="noise multiplier sigma/C")
    p.add_argument("--steps", type=int, help="number of steps")
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha-max", type=int, default=256)
    _add_common(p)

    p = sub.add_parser("calibrate", help="noise multiplier for a target (epsilon, delta)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--q", type=float, help="sampling rate B/N")
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha-max", type=int, default=256)
    _add_common(p)

    p = sub.add_parser("gen-data", help="write a synthetic train/test pair")
    g = _DEFAULT_GEN
    p.add_argument("--train-out")
    p.add_argument("--test-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=g.n)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--k", type=int, default=g.k, help="tokens per sample")
    p.add_argument("--d-in", type=int, default=g.d_in)
    p.add_argument("--k-classes", type=int, default=g.k_classes)
    p.add_argument("--private-fraction", type=float, default=g.private_fraction)
    p.add_argument("--public-signal", type=float, default=g.public_signal)
    p.add_argument("--private-signal", type=float, default=g.private_signal)
    p.add_argument("--nuisance", type=float, default=g.nuisance)
    p.add_argument("--class-seed", type=int, default=g.class_seed)
    _add_common(p)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--mode", choices=("maskdp", "dp", "sgd"), default="maskdp")
    _add_training_flags(p)
    p.add_argument("--noise-multiplier", type=float)
    p.add_argument("--epsilon", type=float, help="target epsilon (calibrates the noise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write the JSON train report here")
    p.add_argument("--checkpoint", help="write the parameter checkpoint here")
    _add_common(p)

    p = sub.add_parser("sweep", help="accuracy over a (mode, epsilon) grid")
    _add_training_flags(p)
    p.add_argument("--cell", action="append", help="grid cell like maskdp:0.5, dp:inf or sgd (repeatable)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", help="sweep table path")
    p.add_argument("--delimiter", default=",")
    _add_common(p)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"--config: cannot read {args.config}: {exc}")
        if not isinstance(raw, dict):
            parser.error("--config: file must hold a JSON object")
        sub = _subparser(parser, args.command)
        known = {a.dest for a in sub._actions}
        values = {}
        for key, value in raw.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                parser.error(f"--config: unknown key {key!r} for {args.command}")
            values[dest] = value
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return parser, args


def _require(parser, args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        parser.error("the following arguments are required: " + ", ".join("--" + n for n in missing))


def _check(parser, ok, flag, msg):
    if not ok:
        parser.error(f"argument --{flag}: {msg}")


def _alphas(parser, alpha_max):
    _check(parser, alpha_max >= 2, "alpha-max", "must be >= 2")
    return tuple(range(2, alpha_max + 1))


def _emit(args, doc, lines):
    doc = _jsonable(doc)
    if args.json:
        json.dump(doc, sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    else:
        print("effective config: " + json.dumps(doc["config"], sort_keys=True), file=sys.stderr)
        for line in lines:
            print(line)


def cmd_account(parser, args):
    _require(parser, args, "q", "z", "steps", "delta")
    _check(parser, 0.0 <= args.q <= 1.0, "q", "must lie in [0, 1]")
    _check(parser, args.z > 0, "z", "must be > 0")
    _check(parser, args.steps >= 1, "steps", "must be >= 1")
    _check(parser, 0.0 < args.delta < 1.0, "delta", "must lie in (0, 1)")
    alphas = _alphas(parser, args.alpha_max)
    report = accountant.total_epsilon(
        accountant.SubsampledGaussianParams(args.q, args.z, args.steps), args.delta, alphas)
    config = {"q": args.q, "z": args.z, "steps": args.steps, "delta": args.delta, "alpha_max": args.alpha_max}
    _emit(args, {**report.to_dict(), "config": config}, [
        f"epsilon       {report.epsilon:.10g}",
        f"delta         {report.delta:g}",
        f"best alpha    {report.best_alpha}",
        f"per-step RDP  {report.per_step_rdp:.10g}",
        f"composed RDP  {report.composed_rdp:.10g}",
    ])


def cmd_calibrate(parser, args):
    _require(parser, args, "epsilon", "delta", "q", "steps")
    _check(parser, args.epsilon > 0, "epsilon", "must be > 0")
    _check(parser, 0.0 < args.delta < 1.0, "delta", "must lie in (0, 1)")
    _check(parser, 0.0 < args.q <= 1.0, "q", "must lie in (0, 1]")
    _check(parser, args.steps >= 1, "steps", "must be >= 1")
    alphas = _alphas(parser, args.alpha_max)
    budget = accountant.PrivacyBudget(args.epsilon, args.delta)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", accountant.CalibrationFloorWarning)
        try:
            z = accountant.calibrate_noise(budget, args.q, args.steps, alphas)
        except accountant.CalibrationInfeasible as exc:
            raise RuntimeFailure(f"calibration infeasible: {exc}") from None
    at_floor = any(issubclass(w.category, accountant.CalibrationFloorWarning) for w in caught)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    report = accountant.total_epsilon(accountant.SubsampledGaussianParams(args.q, z, args.steps), args.delta, alphas)
    config = {"epsilon": args.epsilon, "delta": args.delta, "q": args.q, "steps": args.steps,
              "alpha_max": args.alpha_max}
    _emit(args, {"noise_multiplier": z, "at_floor": at_floor, "epsilon": report.epsilon,
                 "best_alpha": report.best_alpha, "config": config}, [
        f"noise multiplier  {z!r}",
        f"realized epsilon  {report.epsilon:.10g}",
        f"best alpha        {report.best_alpha}",
    ])


def cmd_gen_data(parser, args):
    _require(parser, args, "train-out", "test-out")
    try:
        gen = GeneratorConfig(n=args.n, k=args.k, d_in=args.d_in, k_classes=args.k_classes,
                              private_fraction=args.private_fraction, public_signal=args.public_signal,
                              private_signal=args.private_signal, nuisance=args.nuisance,
                              class_seed=args.class_seed)
    except ValueError as exc:
        parser.error(str(exc))
    _check(parser, args.n_test >= 1, "n-test", "must be >= 1")
    train_set, test_set = generate_split(gen, args.seed, args.n_test)
    try:
        write_dataset(train_set, args.train_out)
        write_dataset(test_set, args.test_out)
    except OSError as exc:
        raise RuntimeFailure(str(exc)) from None
    config = {**asdict(gen), "seed": args.seed, "n_test": args.n_test,
              "train_out": args.train_out, "test_out": args.test_out}
    _emit(args, {"train": args.train_out, "test": args.test_out, "n_train": len(train_set),
                 "n_test": len(test_set), "config": config}, [
        f"wrote {len(train_set)} training samples to {args.train_out}",
        f"wrote {len(test_set)} test samples to {args.test_out}",
    ])


def _load(path):
    try:
        return read_dataset(path)
    except (OSError, DatasetFormatError) as exc:
        raise RuntimeFailure(str(exc)) from None


def _base_config(args, mode, seed, noise, epsilon) -> TrainConfig:
    return TrainConfig(mode=mode, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                       clip=args.clip, noise_multiplier=noise, target_epsilon=epsilon,
                       delta=args.delta, seed=seed, d_h=args.d_h, schedule=args.schedule,
                       warmup_epochs=args.warmup_epochs)


def cmd_train(parser, args):
    _require(parser, args, "train-data")
    noise, eps = args.noise_multiplier, args.epsilon
    if args.mode == "sgd":
        noise = eps = None
    elif (noise is None) == (eps is None):
        parser.error("argument --noise-multiplier/--epsilon: private modes need exactly one of them")
    train_set = _load(args.train_data)
    test_set = _load(args.test_data) if args.test_data else None
    config = _base_config(args, args.mode, args.seed, noise, eps)
    try:
        config.validate(len(train_set))
    except ValueError as exc:
        parser.error(str(exc))
    try:
        report = train(config, train_set, test_set)
        if args.report or args.checkpoint:
            ckpt = args.checkpoint or str(Path(args.report).with_suffix(".ckpt"))
            if args.report:
                report.save(args.report, ckpt)
            else:
                save_checkpoint(report.params, ckpt)
    except accountant.CalibrationInfeasible as exc:
        raise RuntimeFailure(f"calibration infeasible: {exc}") from None
    except OSError as exc:
        raise RuntimeFailure(str(exc)) from None

    doc = report.to_dict()
    lines = [f"mode              {args.mode}",
             f"steps             {report.steps_executed} executed, {report.steps_skipped} skipped"]
    if report.noise_multiplier is not None:
        lines.append(f"noise multiplier  {report.noise_multiplier!r}")
    if report.accounting is not None:
        lines.append(f"epsilon           {report.accounting.epsilon:.6g} (delta={config.delta:g})")
    if report.test_accuracy is not None:
        lines.append(f"test accuracy     {report.test_accuracy:.4f}")
    _emit(args, doc, lines)


def cmd_sweep(parser, args):
    _require(parser, args, "train-data", "test-data", "out", "cell")
    try:
        grid = [parse_cell(c) for c in args.cell]
    except ValueError as exc:
        parser.error(f"argument --cell: {exc}")
    train_set, test_set = _load(args.train_data), _load(args.test_data)
    base = _base_config(args, "maskdp", 0, None, None)
    try:
        rows = sweep(grid, base, train_set, test_set, args.seeds,
                     progress=lambda msg: print(msg, file=sys.stderr))
        write_table(rows, args.out, delimiter=args.delimiter)
    except accountant.CalibrationInfeasible as exc:
        raise RuntimeFailure(f"calibration infeasible: {exc}") from None
    except OSError as exc:
        raise RuntimeFailure(str(exc)) from None
    except ValueError as exc:
        parser.error(str(exc))
    config = {**asdict(base), "cells": args.cell, "seeds": args.seeds, "out": args.out,
              "train_data": args.train_data, "test_data": args.test_data}
    del config["mode"], config["seed"], config["noise_multiplier"], config["target_epsilon"]
    lines = [f"wrote {len(rows)} rows to {args.out}"]
    for r in rows:
        eps = "" if r["epsilon_target"] is None else f"{r['epsilon_target']:g}"
        lines.append(f"  {r['mode']:<7} eps={eps:<5} acc_median={r['acc_median']:.4f}")
    _emit(args, {"rows": rows, "config": config}, lines)


COMMANDS = {
    "account": cmd_account,
    "calibrate": cmd_calibrate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser, args = _parse(argv)
    try:
        COMMANDS[args.command](parser, args)
    except RuntimeFailure as exc:
        print(f"maskdp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
