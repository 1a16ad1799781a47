"""``refed`` command-line entry point.

Failures print a single JSON object on stderr, e.g.
``{"error": "file_not_found", "exit_code": 3, "message": "..."}``.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import MODES, ConfigError, RunConfig
from .data import DatasetFormatError, load_dataset
from .metrics import evaluate
from .preprocessing import DEFAULT_RATIOS, PARTITIONS, ScalingParams, apply_scaling, fit_scaling, polygon_split
from .preprocessing import SplitAssignment

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_PARSE = 4
EXIT_CONFIG = 5
EXIT_CHECK_FAILED = 6
EXIT_RUNTIME = 1

log = logging.getLogger("refed")


class CliError(Exception):
    def __init__(self, kind, code, message):
        super().__init__(message)
        self.kind, self.code, self.message = kind, code, message

    def line(self):
        return json.dumps({"error": self.kind, "exit_code": self.code, "message": self.message})


def _not_found(path):
    return CliError("file_not_found", EXIT_NOT_FOUND, f"no such file: {path}")


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (FileNotFoundError, IsADirectoryError):
        raise _not_found(path) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliError("parse_error", EXIT_PARSE, f"{what} {path}: {exc}") from None


def _load_data(path):
    try:
        return load_dataset(path)
    except (FileNotFoundError, IsADirectoryError):
        raise _not_found(path) from None
    except DatasetFormatError as exc:
        raise CliError("parse_error", EXIT_PARSE, f"dataset {path}: {exc}") from None


def _load_split(path):
    d = _read_json(path, "split")
    try:
        return SplitAssignment.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError("parse_error", EXIT_PARSE, f"split {path}: {exc!r}") from None


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (FileNotFoundError, IsADirectoryError):
        raise _not_found(path) from None
    except CheckpointError as exc:
        raise CliError("parse_error", EXIT_PARSE, f"checkpoint {path}: {exc}") from None


def _run_config(path, **overrides):
    try:
        cfg = RunConfig.from_dict(_read_json(path, "config")) if path else RunConfig()
        return cfg.replace(**overrides) if overrides else cfg
    except (ConfigError, TypeError) as exc:
        raise CliError("config_error", EXIT_CONFIG, str(exc)) from None


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _scaling_from_meta(header):
    """Stored per-domain bounds; evaluation data is scaled with the target bounds when present."""
    scaling = header.get("meta", {}).get("scaling") or {}
    entry = scaling.get("target") or scaling.get("source")
    if entry is None:
        return None
    return ScalingParams(entry["p2"], entry["p98"])


def _prepare(ds, header):
    params = _scaling_from_meta(header)
    return ds if params is None else apply_scaling(ds, params)


def _select(ds, split_path, partition):
    if split_path is None:
        return ds
    split = _load_split(split_path)
    try:
        parts = split.partition(ds)
    except ValueError as exc:
        raise CliError("parse_error", EXIT_PARSE, f"split does not match dataset: {exc}") from None
    return parts[PARTITIONS.index(partition)]


def cmd_synth(args):
    from .synth import GeneratorConfig, write_synthetic

    raw = _read_json(args.config, "generator config") if args.config else {}
    try:
        cfg = GeneratorConfig.from_dict(raw)
        paths = write_synthetic(cfg, args.out)
    except (ConfigError, TypeError) as exc:
        raise CliError("config_error", EXIT_CONFIG, str(exc)) from None
    print(json.dumps(paths, sort_keys=True))


def _parse_ratios(text):
    try:
        ratios = tuple(float(r) for r in text.split(","))
    except ValueError:
        raise CliError("config_error", EXIT_CONFIG, f"ratios must be three comma-separated numbers: {text!r}") from None
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise CliError("config_error", EXIT_CONFIG, f"ratios must be three non-negative numbers summing to 1: {text!r}")
    return ratios


def cmd_split(args):
    ds = _load_data(args.data)
    split = polygon_split(ds, _parse_ratios(args.ratios), args.seed)
    split.save(args.out)
    for w in split.warnings:
        log.warning(w)
    print(json.dumps({"out": args.out, "achieved": split.achieved}, sort_keys=True))


def cmd_train(args):
    from .baselines import train_strategy
    from .refed import fit

    overrides = {"mode": args.mode} if args.mode else {}
    cfg = _run_config(args.config, **overrides)
    needs_source = cfg.mode != "only_target"
    needs_target = cfg.mode != "only_source"
    for flag, needed, value in (("--source", needs_source, args.source), ("--target", needs_target, args.target),
                                ("--split", needs_target, args.split)):
        if needed and value is None:
            raise CliError("config_error", EXIT_CONFIG, f"mode {cfg.mode} requires {flag}")

    scaling = {}
    source = t_train = t_val = None
    if needs_source:
        source = _load_data(args.source)
        scaling["source"] = fit_scaling(source)
        source = apply_scaling(source, scaling["source"])
    if needs_target:
        target = _load_data(args.target)
        scaling["target"] = fit_scaling(target)
        target = apply_scaling(target, scaling["target"])
        t_train = _select(target, args.split, "train")
        t_val = _select(target, args.split, "val")
        if source is not None:
            try:
                source.check_compatible(target)
            except ValueError as exc:
                raise CliError("config_error", EXIT_CONFIG, f"source and target disagree: {exc}") from None

    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        def emit(rec):
            if log_fh is not None:
                log_fh.write(json.dumps({"mode": cfg.mode, **rec}, sort_keys=True) + "\n")
                log_fh.flush()

        if cfg.mode == "refed":
            model, records = fit(source, t_train, t_val, cfg, callback=emit)
        else:
            model, records = train_strategy(source, t_train, t_val, cfg)
            for rec in records:
                emit(rec)
    finally:
        if log_fh is not None:
            log_fh.close()

    meta = {"mode": cfg.mode, "scaling": {k: v.to_dict() for k, v in scaling.items()}}
    save_checkpoint(args.out, model, cfg, meta=meta)
    print(json.dumps({"out": args.out, "best_epoch": int(model.best_epoch), "epochs": len(records)}))


def cmd_eval(args):
    model, header, _ = _load_ckpt(args.ckpt)
    ds = _select(_prepare(_load_data(args.data), header), args.split, args.partition)
    _check_dims(ds, header)
    if len(ds) == 0:
        raise CliError("config_error", EXIT_CONFIG, "no samples to evaluate")
    pred = model.predict_proba(ds.features).argmax(axis=1)
    report = evaluate(ds.labels, pred, ds.n_classes)
    out = {
        "accuracy": report["accuracy"],
        "weighted_f1": report["weighted_f1"],
        "per_class_f1": [float(v) for v in report["per_class_f1"]],
        "confusion": np.asarray(report["confusion"]).tolist(),
        "n_samples": len(ds),
        "class_names": list(ds.class_names),
        "partition": args.partition if args.split else "all",
        "model_kind": header["kind"],
        "config": header["config"],
        "config_digest": header["config_digest"],
    }
    _write_json(args.out, out)
    print(json.dumps({"weighted_f1": out["weighted_f1"], "accuracy": out["accuracy"]}))


def _check_dims(ds, header):
    dims = header["dims"]
    if len(ds) and (ds.t_len, ds.n_bands) != (dims["t_len"], dims["n_bands"]):
        raise CliError("config_error", EXIT_CONFIG,
                       f"data is {ds.t_len}x{ds.n_bands}, model expects {dims['t_len']}x{dims['n_bands']}")


def cmd_predict(args):
    model, header, _ = _load_ckpt(args.ckpt)
    ds = _prepare(_load_data(args.data), header)
    _check_dims(ds, header)
    k = header["dims"]["n_classes"]
    proba = model.predict_proba(ds.features) if len(ds) else np.zeros((0, k))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["id", "predicted_label"] + [f"p_{j}" for j in range(k)]) + "\n")
        for i, row in enumerate(proba):
            fh.write(f"{i},{int(row.argmax())}," + ",".join(format(float(p), ".9g") for p in row) + "\n")
    print(json.dumps({"out": args.out, "rows": len(proba)}))


def _experiment_inputs(exp_cfg, base_dir):
    from .synth import GeneratorConfig, generate

    if "synthetic" in exp_cfg:
        try:
            return generate(GeneratorConfig.from_dict(exp_cfg["synthetic"] or {}))
        except (ConfigError, TypeError) as exc:
            raise CliError("config_error", EXIT_CONFIG, f"synthetic: {exc}") from None
    data = exp_cfg.get("data")
    if not data or "source" not in data or "target" not in data:
        raise CliError("config_error", EXIT_CONFIG, "experiment config needs 'synthetic' or data.source/data.target")
    return tuple(_load_data(os.path.join(base_dir, data[k])) for k in ("source", "target"))


def cmd_experiment(args):
    from .experiment import ALL_METHODS, run_experiment

    exp_cfg = _read_json(args.config, "experiment config")
    known = {"synthetic", "data", "methods", "n_repeats", "base_seed", "run", "scale", "ratios"}
    unknown = set(exp_cfg) - known
    if unknown:
        raise CliError("config_error", EXIT_CONFIG, f"unknown experiment keys: {sorted(unknown)}")
    source, target = _experiment_inputs(exp_cfg, os.path.dirname(os.path.abspath(args.config)))
    try:
        base = RunConfig.from_dict(exp_cfg.get("run", {}))
    except (ConfigError, TypeError) as exc:
        raise CliError("config_error", EXIT_CONFIG, str(exc)) from None
    methods = tuple(exp_cfg.get("methods", ALL_METHODS))
    bad = [m for m in methods if m not in ALL_METHODS]
    if bad:
        raise CliError("config_error", EXIT_CONFIG, f"unknown methods {bad}")
    report = run_experiment(
        source, target, methods, n_repeats=int(exp_cfg.get("n_repeats", 5)), base_seed=int(exp_cfg.get("base_seed", 0)),
        base_cfg=base, scale=bool(exp_cfg.get("scale", True)), ratios=tuple(exp_cfg.get("ratios", DEFAULT_RATIOS)),
    )
    out_dir = args.out or os.path.dirname(os.path.abspath(args.config))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    table = report.render_table()
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)


def cmd_gradcheck(args):
    from .gradsuite import run_suite

    def show(name, err):
        print(f"{name:28s} max_rel_err={err:.3e} {'PASS' if err <= args.tol else 'FAIL'}", flush=True)

    worst, elapsed = run_suite(n_seeds=args.seeds, tol=args.tol, full_loss=not args.skip_full_loss, progress=show)
    overall = max(worst.values())
    print(f"{'overall':28s} max_rel_err={overall:.3e} seeds={args.seeds} elapsed={elapsed:.1f}s")
    if overall > args.tol:
        failing = sorted(k for k, v in worst.items() if v > args.tol)
        raise CliError("check_failed", EXIT_CHECK_FAILED, f"gradient check failed for {failing}")


def cmd_export_embeddings(args):
    from .refed import export_embeddings

    model, header, _ = _load_ckpt(args.ckpt)
    if header["kind"] != "refed":
        raise CliError("config_error", EXIT_CONFIG, "export-embeddings needs a refed checkpoint")
    ds = _prepare(_load_data(args.data), header)
    _check_dims(ds, header)
    shape = export_embeddings(ds, model, args.level, args.out)
    print(json.dumps({"out": args.out, "rows": shape[0], "dim": shape[1]}))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage_error", EXIT_USAGE, f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="refed", description="Two-branch feature disentanglement for pixel time series.")
    p.add_argument("--version", action="version", version=f"refed {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic source/target pair")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="polygon-level stratified split")
    s.add_argument("--data", required=True)
    s.add_argument("--ratios", default=",".join(str(r) for r in DEFAULT_RATIOS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--source")
    s.add_argument("--target")
    s.add_argument("--split")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metrics of a checkpoint on a dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split")
    s.add_argument("--partition", choices=PARTITIONS, default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="per-sample predictions as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("experiment", help="repeated-split comparison of all methods")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--skip-full-loss", action="store_true")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("export-embeddings", help="invariant features at one depth as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--level", type=int, choices=(0, 1, 2), required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        args.func(args)
    except CliError as exc:
        print(exc.line(), file=sys.stderr)
        return exc.code
    except OSError as exc:
        err = CliError("io_error", EXIT_RUNTIME, f"{exc.strerror or exc}: {exc.filename}")
        print(err.line(), file=sys.stderr)
        return err.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
