"""Command-line interface.

Exit codes: 0 success, 1 runtime or input error, 2 no significant change
at the requested level, 64 usage error.

Every command writes its primary artifact plus ``<output>.manifest.json``
listing the files produced and the resolved run configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .abcd import GraphConfig, ScanResult, abcd_detect
from .blocking import default_plan, format_block_spec, make_plan, parse_block_spec
from .core import SeriesTensor, ValidationError, load_series, save_series
from .edgecount import default_window
from .multicp import SegmentConfig, segment
from .pipeline import (
    default_ranges,
    fit_pixel_logistic,
    load_labels,
    load_stack,
    log_heatmap,
    mean_band_image,
    robust_standardize,
    save_heatmaps,
    save_stack,
)
from .simlab import ChangeSpec, NoiseSpec, generate_trial, load_design, power_study, write_power_csv

EXIT_OK, EXIT_ERROR, EXIT_NOT_SIGNIFICANT, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("abcdcp")

GRAMMAR = """\
block specs: 1-D "--blocks 1,4,10,20" (blocks per structure);
             2-D "--blocks 1x1,2x3,4x6" (row blocks x column blocks)
shapes:      "--shape 500" or "--shape 112x211"
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n{GRAMMAR}")
        raise SystemExit(EXIT_USAGE)


@dataclass
class RunConfig:
    subcommand: str
    inputs: dict
    options: dict
    seed: int | None = None
    outputs: list = field(default_factory=list)
    version: str = __version__


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write_manifest(primary: Path, rc: RunConfig, files: list[Path]) -> Path:
    rc.outputs = [str(f) for f in files]
    path = primary.with_name(primary.name + ".manifest.json")
    path.write_text(_dump({"schema": "abcdcp.run_manifest/1", "run_config": asdict(rc)}))
    return path


def _parse_shape(text: str | None):
    if text is None:
        return None
    try:
        return tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad shape {text!r}") from None


def _load_input(path: str, fmt: str | None, shape) -> SeriesTensor:
    series = load_series(path, fmt)
    if shape is not None and tuple(shape) != series.shape:
        if int(np.prod(shape)) != series.d:
            raise ValidationError(f"--shape {shape} does not match {series.d} components")
        series = SeriesTensor(series.values, tuple(shape), series.timestamps)
    return series


def _specs(text: str | None):
    if text is None:
        return None
    try:
        return parse_block_spec(text)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None


def _plan(specs, shape):
    return default_plan(shape) if specs is None else make_plan(shape, specs)


def _window(n: int, trim: float):
    return default_window(n, trim)


# ---------------------------------------------------------------- commands

def cmd_detect(args) -> int:
    specs, shape = _specs(args.blocks), _parse_shape(args.shape)
    series = _load_input(args.input, args.format, shape)
    plan = _plan(specs, series.shape)
    rc = RunConfig("detect", {"input": args.input}, {
        "format": args.format, "shape": list(series.shape), "blocks": format_block_spec(plan.specs),
        "k": args.k, "metric": args.metric, "graph": args.graph, "trim": args.trim,
        "alpha": args.alpha, "permutations": args.permutations, "threads": args.threads,
        "retain_blocks": not args.no_blocks,
    }, seed=args.seed)
    res = abcd_detect(series, plan, GraphConfig(args.k, args.metric, args.graph),
                      window=_window(series.n, args.trim), U=args.permutations, seed=args.seed,
                      retain_blocks=not args.no_blocks, workers=args.threads)
    out = res.to_dict()
    out["run_config"] = asdict(rc)
    significant = res.p_value is None or res.p_value <= args.alpha
    out["significant"] = bool(significant) if res.p_value is not None else None
    primary = Path(args.output)
    primary.write_text(_dump(out))
    _write_manifest(primary, rc, [primary])
    p = "n/a" if res.p_value is None else f"{res.p_value:.4g}"
    print(f"T={res.T:.4f} tau_hat={res.tau_hat} p={p} block={res.best_block.to_dict()['extent']}")
    return EXIT_OK if significant else EXIT_NOT_SIGNIFICANT


def cmd_segment(args) -> int:
    specs, shape = _specs(args.blocks), _parse_shape(args.shape)
    series = _load_input(args.input, args.format, shape)
    plan = _plan(specs, series.shape)
    cfg = SegmentConfig(alpha=args.alpha, U=args.permutations, min_len=args.min_len,
                        decay=args.decay, k_fraction=args.k_fraction, k=args.k,
                        metric=args.metric, window_frac=args.trim, seed=args.seed,
                        workers=args.threads)
    rc = RunConfig("segment", {"input": args.input}, {
        "format": args.format, "shape": list(series.shape), "blocks": format_block_spec(plan.specs),
        "alpha": args.alpha, "permutations": args.permutations, "min_len": args.min_len,
        "decay": args.decay, "k": args.k, "k_fraction": args.k_fraction, "metric": args.metric,
        "trim": args.trim, "threads": args.threads,
    }, seed=args.seed)
    rep = segment(series, plan, cfg)
    out = rep.to_dict()
    out["run_config"] = asdict(rc)
    primary = Path(args.output)
    primary.write_text(_dump(out))
    _write_manifest(primary, rc, [primary])
    print("change points:", " ".join(str(t) for t in rep.taus) or "none")
    return EXIT_OK if rep.change_points else EXIT_NOT_SIGNIFICANT


def cmd_simulate(args) -> int:
    design = load_design(args.design)
    trials = args.trials if args.trials is not None else design["trials"]
    seed = args.seed if args.seed is not None else design["seed"]
    alphas = args.alpha if args.alpha else design["alphas"]
    U = args.permutations if args.permutations is not None else design["U"]
    rc = RunConfig(args.command, {"design": args.design}, {
        "trials": trials, "alphas": alphas, "permutations": U, "radius": design["radius"],
        "threshold": design["threshold"], "null_sims": design["null_sims"],
    }, seed=seed)

    def progress(cell, det, tr):
        log.info("%s %s trial %d/%d", cell.name, det.name, tr + 1, trials)

    study = power_study(design["cells"], design["detectors"], trials, alphas, design["radius"],
                        U=U, seed=seed, threshold=design["threshold"],
                        null_sims=design["null_sims"], progress=progress)
    primary = Path(args.output)
    write_power_csv(study, primary)
    trials_path = primary.with_suffix(".trials.json")
    trials_path.write_text(_dump({"schema": "abcdcp.power_trials/1", "config": study.config,
                                  "run_config": asdict(rc), "trials": study.trials}))
    _write_manifest(primary, rc, [primary, trials_path])
    sys.stdout.write(primary.read_text())
    return EXIT_OK


def cmd_generate(args) -> int:
    shape = _parse_shape(args.shape)
    change = ChangeSpec(tau=args.tau if args.tau is not None else args.n // 2,
                        D=args.D if args.D is not None else int(np.prod(shape)),
                        p_c=args.p_c, kind=args.kind, mean_norm=args.mean_norm,
                        delta=args.delta)
    noise = NoiseSpec(args.noise, args.rho, args.df)
    series, hd = generate_trial(args.n, shape, change, noise, args.seed)
    rc = RunConfig("generate", {}, {"n": args.n, "shape": list(shape), "change": asdict(change),
                                     "noise": asdict(noise)}, seed=args.seed)
    primary = Path(args.output)
    fmt = "csv" if primary.suffix == ".csv" else "binary"
    files = [primary]
    if fmt == "csv":
        save_series(series, primary, "csv")
        side = primary.with_suffix(".truth.json")
        side.write_text(_dump({"run_config": asdict(rc), "changed_components": [int(i) + 1 for i in hd]}))
        files.append(side)
    else:
        save_series(series, primary, "binary", extra={"run_config": asdict(rc),
                                                      "changed_components": [int(i) + 1 for i in hd]})
        files.append(primary.with_suffix(".bin"))
    _write_manifest(primary, rc, files)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    stack = load_stack(args.stack)
    rc = RunConfig("preprocess", {"stack": args.stack}, {"dtype": args.dtype})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = robust_standardize(stack)
    notes = [str(w.message) for w in caught]
    for n in notes:
        log.warning(n)
    primary = Path(args.output)
    save_stack(out, primary, args.dtype, {"run_config": asdict(rc), "notes": notes,
                                         "source_stack": args.stack})
    _write_manifest(primary, rc, [primary, primary.with_suffix(".bin")])
    return EXIT_OK


def cmd_fuse(args) -> int:
    stack = load_stack(args.stack)
    labels = load_labels(args.labels)
    rc = RunConfig("fuse", {"stack": args.stack, "labels": args.labels},
                   {"ridge": args.ridge, "max_iter": args.max_iter, "tol": args.tol,
                    "dtype": args.dtype})
    fused = fit_pixel_logistic(stack, labels, args.ridge, args.max_iter, args.tol)
    primary = Path(args.output)
    flagged = {
        flag: [[int(r) + 1, int(c) + 1] for r, c in zip(*np.nonzero(fused.flags == flag))]
        for flag in ("degenerate-labels", "not-converged")
    }
    save_series(fused.to_series(), primary, "binary", args.dtype, extra={
        "run_config": asdict(rc), "source_stack": args.stack, "notes": fused.notes,
    })
    diag = primary.with_name(primary.stem + ".fit.json")
    diag.write_text(_dump({
        "schema": "abcdcp.logistic_fit/1", "run_config": asdict(rc),
        "beta": fused.beta.tolist(), "iterations": fused.iterations.tolist(),
        "flagged_pixels": flagged,
    }))
    _write_manifest(primary, rc, [primary, primary.with_suffix(".bin"), diag])
    for n in fused.notes:
        log.warning(n)
    return EXIT_OK


def _resolve_relative(path_text: str, anchor: Path) -> Path:
    p = Path(path_text)
    if p.exists() or p.is_absolute():
        return p
    return anchor.parent / p


def _stack_from_result(result_path: Path, data: dict) -> Path:
    src = data.get("run_config", {}).get("inputs", {}).get("input")
    if src is None:
        raise ValidationError(f"{result_path}: no input recorded; pass --stack")
    series_path = _resolve_relative(src, result_path)
    manifest = series_path if series_path.suffix == ".json" else series_path.with_suffix(".json")
    meta = json.loads(manifest.read_text())
    stack = meta.get("source_stack")
    if stack is None:
        raise ValidationError(f"{manifest}: no source stack recorded; pass --stack")
    return _resolve_relative(stack, manifest)


def cmd_heatmap(args) -> int:
    result_path = Path(args.result)
    data = json.loads(result_path.read_text())
    if "change_points" in data:
        cps = data["change_points"]
        if not cps:
            raise ValidationError(f"{result_path}: segmentation found no change points")
        if not 1 <= args.change <= len(cps):
            raise UsageError(f"--change must lie in 1..{len(cps)}")
        cp = cps[args.change - 1]
        tau, extent = cp["tau_hat"], cp["best_block"]["extent"]
    else:
        res = ScanResult.from_dict(data)
        tau, extent = res.tau_hat, res.best_block.to_dict()["extent"]
    if len(extent) != 2:
        raise ValidationError("heatmaps need an image-shaped (2-D) result")
    stack_path = Path(args.stack) if args.stack else _stack_from_result(result_path, data)
    W = mean_band_image(load_stack(stack_path))
    before, after = default_ranges(tau, W.shape[2], args.window)
    pair = log_heatmap(W, extent, before, after, args.floor)
    rc = RunConfig("heatmap", {"result": args.result, "stack": str(stack_path)},
                   {"window": args.window, "floor": args.floor, "change": args.change})
    out_dir = Path(args.out_dir)
    side = save_heatmaps(pair, out_dir, args.prefix, {"tau_hat": tau, "run_config": asdict(rc)})
    primary = out_dir / f"{args.prefix}.json"
    files = [primary] + [out_dir / v["file"] for v in side["images"].values()]
    _write_manifest(primary, rc, files)
    print(f"tau_hat={tau} before={list(before)} after={list(after)} block={extent}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _common_detect(p):
    p.add_argument("--input", required=True, help="series file (.csv, manifest .json or payload .bin)")
    p.add_argument("--format", choices=["csv", "binary"], help="override format detection")
    p.add_argument("--shape", help="reinterpret components as d1xd2 image")
    p.add_argument("--blocks", help="block spec, e.g. 1,4,10,20 or 1x1,4x6")
    p.add_argument("--metric", default="L2", choices=["L2", "L1"])
    p.add_argument("--trim", type=float, default=0.05, help="boundary trimming fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", "--workers", dest="threads", type=int,
                   default=os.cpu_count() or 1, help="worker threads; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="abcd", description="Adaptive block-based change-point detection.",
                 epilog=GRAMMAR + "exit codes: 0 ok, 1 error, 2 not significant, 64 usage",
                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("detect", help="single change-point scan with permutation test")
    _common_detect(p)
    p.add_argument("--k", type=int, default=40, help="graph order (default 40)")
    p.add_argument("--graph", default="kmst", choices=["kmst", "knn"])
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-blocks", action="store_true", help="drop per-block curves from output")
    p.add_argument("--output", "-o", default="scan_result.json")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("segment", help="multiple change points by seeded binary segmentation")
    _common_detect(p)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--min-len", type=int, default=30)
    p.add_argument("--decay", type=float, default=2 ** -0.5)
    p.add_argument("--k", type=int, default=None, help="fixed graph order (default floor(0.2 n_s))")
    p.add_argument("--k-fraction", type=float, default=0.2)
    p.add_argument("--output", "-o", default="segmentation.json")
    p.set_defaults(func=cmd_segment)

    for name in ("simulate", "power"):
        p = sub.add_parser(name, help="power study from a TOML design file")
        p.add_argument("--design", required=True)
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--alpha", type=float, action="append")
        p.add_argument("--permutations", type=int)
        p.add_argument("--output", "-o", default="power.csv")
        p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="write one simulated series")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--tau", type=int)
    p.add_argument("--D", type=int, help="size of the changed region (default all)")
    p.add_argument("--p-c", dest="p_c", type=float, default=1.0)
    p.add_argument("--kind", default="mean", choices=["mean", "variance", "mean_variance"])
    p.add_argument("--mean-norm", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--noise", default="gaussian",
                   choices=["gaussian", "ar1_gaussian", "student_t", "log_normal"])
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--df", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True, help=".csv or manifest .json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="robust per-band standardization of a band stack")
    p.add_argument("--stack", required=True)
    p.add_argument("--dtype", default="f32", choices=["f32", "f64"])
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("fuse", help="per-pixel logistic fusion into a probability series")
    p.add_argument("--stack", required=True, help="standardized band stack")
    p.add_argument("--labels", required=True)
    p.add_argument("--ridge", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--dtype", default="f64", choices=["f32", "f64"])
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("heatmap", help="before/after log heatmaps around a detected change")
    p.add_argument("--result", required=True, help="detect or segment JSON")
    p.add_argument("--stack", help="standardized stack (default: recorded with the fused series)")
    p.add_argument("--window", type=int, default=10, help="images on each side")
    p.add_argument("--floor", type=float, default=1e-3)
    p.add_argument("--change", type=int, default=1, help="which segmentation change point")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--prefix", default="heatmap")
    p.set_defaults(func=cmd_heatmap)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        sys.stderr.write("--threads must be >= 1\n")
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"abcd {args.command}: usage error: {exc}\n{GRAMMAR}")
        return EXIT_USAGE
    except (ValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(f"abcd {args.command}: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
