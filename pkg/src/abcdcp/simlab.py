"""Simulation designs and power studies.

A design draws ``n`` observations; rows ``1..tau`` come from the null
distribution and rows ``tau+1..n`` are shifted and/or rescaled on a
random subset ``H_D`` of a contiguous change region ``C`` that starts at
the first component (vectors) or the top-left pixel (images).
"""

from __future__ import annotations

import csv
import functools
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .abcd import GraphConfig, abcd_detect
from .blocking import parse_block_spec
from .core import SeriesTensor, ValidationError, counter_rng, grid_to_flat

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ChangeSpec",
    "NoiseSpec",
    "DesignCell",
    "DetectorSpec",
    "PowerStudy",
    "change_region",
    "draw_change_set",
    "generate",
    "generate_trial",
    "is_accurate",
    "power_study",
    "load_design",
    "write_power_csv",
]


@dataclass(frozen=True)
class ChangeSpec:
    """Distributional change after ``tau``.

    ``mean_norm`` is the total L2 size of the mean shift, spread evenly
    over the ``D`` changed components (``mean_norm / sqrt(D)`` each).
    ``delta`` multiplies the variance of changed components; ``global_sd``
    rescales every component after ``tau``.
    """

    tau: int
    D: int
    p_c: float = 1.0
    kind: str = "mean"  # mean | variance | mean_variance
    mean_norm: float = 0.0
    delta: float = 1.0
    global_sd: float = 1.0
    freeze_hd: bool = False

    def __post_init__(self):
        if self.kind not in ("mean", "variance", "mean_variance"):
            raise ValidationError(f"unknown change kind {self.kind!r}")
        if self.D < 1:
            raise ValidationError("D must be >= 1")
        if not 0 < self.p_c <= 1:
            raise ValidationError(f"p_c must lie in (0, 1], got {self.p_c}")
        if self.delta <= 0 or self.global_sd <= 0:
            raise ValidationError("variance multipliers must be positive")

    @property
    def region_size(self) -> int:
        size = self.D / self.p_c
        if abs(size - round(size)) > 1e-9:
            raise ValidationError(f"D / p_c = {size} is not an integer")
        return int(round(size))

    @property
    def per_component_shift(self) -> float:
        return self.mean_norm / math.sqrt(self.D)


@dataclass(frozen=True)
class NoiseSpec:
    """Null noise family.

    ``ar1_gaussian`` uses covariance ``rho**dist`` where ``dist`` is the
    index distance (vectors) or Euclidean pixel distance (images).
    ``student_t`` is multivariate t with ``df`` degrees of freedom and
    ``log_normal`` is ``exp`` of a standard Gaussian vector.
    """

    family: str = "gaussian"
    rho: float = 0.0
    df: float = 3.0

    def __post_init__(self):
        if self.family not in ("gaussian", "ar1_gaussian", "student_t", "log_normal"):
            raise ValidationError(f"unknown noise family {self.family!r}")
        if self.family == "ar1_gaussian" and not -1 < self.rho < 1:
            raise ValidationError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.family == "student_t" and self.df <= 2:
            raise ValidationError(f"df must exceed 2, got {self.df}")


def change_region(shape: Sequence[int], size: int) -> np.ndarray:
    """Flat indices of the change region: first ``size`` components, or a
    top-left ``s x s`` square with ``s * s == size`` for images."""
    shape = tuple(shape)
    if len(shape) == 1:
        if size > shape[0]:
            raise ValidationError(f"change region of {size} exceeds d={shape[0]}")
        return np.arange(size)
    side = math.isqrt(size)
    if side * side != size:
        raise ValidationError(f"image change region size {size} is not a perfect square")
    if side > min(shape):
        raise ValidationError(f"change region side {side} exceeds image {shape}")
    rr, cc = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    return np.sort(grid_to_flat(rr, cc, shape[1]).ravel())


def draw_change_set(change: ChangeSpec, shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    region = change_region(shape, change.region_size)
    if change.D > region.size:
        raise ValidationError("D exceeds region size")
    if change.freeze_hd or change.D == region.size:
        return region[: change.D]
    return np.sort(rng.choice(region, size=change.D, replace=False))


@functools.lru_cache(maxsize=16)
def _cholesky(shape: tuple[int, ...], rho: float) -> np.ndarray:
    if len(shape) == 1:
        idx = np.arange(shape[0], dtype=np.float64)
        dist = np.abs(idx[:, None] - idx[None, :])
    else:
        rr, cc = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
        pts = np.column_stack((rr.ravel(), cc.ravel())).astype(np.float64)
        dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    cov = rho ** dist
    L = np.linalg.cholesky(cov)
    L.setflags(write=False)
    return L


def _noise(noise: NoiseSpec, n: int, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    d = math.prod(shape)
    z = rng.standard_normal((n, d))
    if noise.family == "gaussian":
        return z
    if noise.family == "ar1_gaussian":
        return z @ _cholesky(shape, float(noise.rho)).T
    if noise.family == "student_t":
        w = rng.chisquare(noise.df, size=(n, 1))
        return z / np.sqrt(w / noise.df)
    return np.exp(z)


def generate_trial(n: int, shape: Sequence[int], change: ChangeSpec, noise: NoiseSpec,
                   seed: int, stream: tuple = ()) -> tuple[SeriesTensor, np.ndarray]:
    """Draw one series; returns it with the changed component set ``H_D``."""
    shape = tuple(int(s) for s in shape)
    if not 1 <= change.tau <= n:
        raise ValidationError(f"tau must lie in [1, {n}]")
    rng = counter_rng(seed, *stream)
    hd = draw_change_set(change, shape, rng)
    x = _noise(noise, n, shape, rng)
    tau = change.tau
    if tau < n:
        post = x[tau:]
        if change.kind in ("variance", "mean_variance") and change.delta != 1:
            post[:, hd] *= math.sqrt(change.delta)
        if change.global_sd != 1:
            post *= change.global_sd
        if change.kind in ("mean", "mean_variance"):
            post[:, hd] += change.per_component_shift
    return SeriesTensor(x, shape), hd


def generate(n: int, shape: Sequence[int], change: ChangeSpec, noise: NoiseSpec, seed: int) -> SeriesTensor:
    return generate_trial(n, shape, change, noise, seed)[0]


def is_accurate(tau_hat: int, tau: int, radius: int = 10) -> bool:
    """Whether an estimate lies within ``radius`` time points of the change.

    The change sits between times ``tau`` and ``tau + 1``; an estimate is
    accurate when it is within ``radius`` of either side, i.e.
    ``tau - radius <= tau_hat <= tau + 1 + radius``.
    """
    return tau - radius <= tau_hat <= tau + 1 + radius


# ---------------------------------------------------------------- studies

@dataclass(frozen=True)
class DesignCell:
    name: str
    n: int
    shape: tuple[int, ...]
    change: ChangeSpec
    noise: NoiseSpec
    params: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class DetectorSpec:
    name: str
    blocks: tuple[tuple[int, ...], ...]
    k: int = 40
    metric: str = "L2"


@dataclass
class PowerStudy:
    """Per-cell counts plus the per-trial log they were computed from."""

    rows: list[dict]
    trials: list[dict]
    config: dict

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "rows": self.rows, "trials": self.trials},
                          indent=1, sort_keys=True) + "\n"


def _mc_thresholds(cell, cell_idx, det, alphas, null_sims, seed, k):
    null_change = replace(cell.change, tau=cell.n)
    stats = []
    for i in range(null_sims):
        x, _ = generate_trial(cell.n, cell.shape, null_change, cell.noise, seed, (cell_idx, 1 << 32 | i))
        stats.append(abcd_detect(x, det.blocks, GraphConfig(k, det.metric), U=0).T)
    stats = np.asarray(stats)
    return {a: float(np.quantile(stats, 1 - a)) for a in alphas}


def power_study(
    cells: Sequence[DesignCell],
    detectors: Sequence[DetectorSpec],
    trials: int,
    alphas: Sequence[float] = (0.05,),
    radius: int = 10,
    U: int = 200,
    seed: int = 0,
    threshold: str = "permutation",
    null_sims: int = 1000,
    progress=None,
) -> PowerStudy:
    """Count significant and significant-and-accurate detections per cell.

    With ``threshold="permutation"`` a trial is significant at level
    ``alpha`` when its permutation p-value is at most ``alpha``. With
    ``"monte_carlo"`` (Gaussian designs, data law known) ``T`` is compared
    with the ``1 - alpha`` quantile of ``null_sims`` simulated null
    statistics. Trial failures are logged and counted as non-detections.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    if threshold not in ("permutation", "monte_carlo"):
        raise ValidationError(f"unknown threshold mode {threshold!r}")
    alphas = sorted(float(a) for a in alphas)
    trial_log, rows = [], []
    for ci, cell in enumerate(cells):
        for det in detectors:
            k = det.k
            thr = None
            if threshold == "monte_carlo":
                thr = _mc_thresholds(cell, ci, det, alphas, null_sims, seed, k)
            sig = {a: 0 for a in alphas}
            acc = {a: 0 for a in alphas}
            failures = 0
            for tr in range(trials):
                rec = {"cell": cell.name, "detector": det.name, "trial": tr,
                       "seed": seed, "stream": [ci, tr]}
                try:
                    x, _ = generate_trial(cell.n, cell.shape, cell.change, cell.noise, seed, (ci, tr))
                    res = abcd_detect(x, det.blocks, GraphConfig(k, det.metric),
                                      U=0 if thr else U, seed=seed, rng_stream=(ci, tr),
                                      retain_blocks=False)
                except ValidationError as exc:
                    failures += 1
                    rec["error"] = str(exc)
                    trial_log.append(rec)
                    continue
                good = is_accurate(res.tau_hat, cell.change.tau, radius)
                rec.update(T=res.T, tau_hat=res.tau_hat, p_value=res.p_value, accurate=good)
                for a in alphas:
                    s = res.T > thr[a] if thr else res.p_value <= a
                    sig[a] += bool(s)
                    acc[a] += bool(s and good)
                trial_log.append(rec)
                if progress:
                    progress(cell, det, tr)
            for a in alphas:
                rows.append({
                    "cell": cell.name, "detector": det.name, "alpha": a, "trials": trials,
                    "significant": sig[a], "significant_accurate": acc[a],
                    "power": sig[a] / trials, "accuracy_rate": acc[a] / trials,
                    "failures": failures, "seed": seed, "threshold": threshold,
                    **{f"param_{k_}": v for k_, v in cell.params.items()},
                })
    config = {
        "trials": trials, "alphas": alphas, "radius": radius, "U": U, "seed": seed,
        "threshold": threshold, "null_sims": null_sims if threshold == "monte_carlo" else None,
        "cells": [{"name": c.name, "n": c.n, "shape": list(c.shape),
                   "change": asdict(c.change), "noise": asdict(c.noise)} for c in cells],
        "detectors": [{"name": d.name, "blocks": [list(b) for b in d.blocks], "k": d.k,
                       "metric": d.metric} for d in detectors],
    }
    if threshold == "monte_carlo":
        config["note"] = "thresholds from simulated null statistics, not permutations"
    return PowerStudy(rows, trial_log, config)


def write_power_csv(study: PowerStudy, path=None) -> str:
    keys = []
    for row in study.rows:
        keys.extend(k for k in row if k not in keys)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in study.rows:
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------- design files

_CHANGE_KEYS = {"tau", "D", "p_c", "kind", "mean_norm", "delta", "global_sd", "freeze_hd"}
_NOISE_KEYS = {"family", "rho", "df"}


def load_design(path) -> dict:
    """Read a TOML design file into cells, detectors and study settings.

    Layout::

        [experiment]          # n, shape, trials, seed, alphas, radius,
                              # permutations, threshold, null_sims
        [change]              # ChangeSpec fields (tau defaults to n/2)
        [noise]               # NoiseSpec fields
        [grid]                # lists of change/noise values, crossed
        [[detector]]          # name, blocks ("1,4,10" or "1x1,2x2"), k, metric
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    exp = dict(raw.get("experiment", {}))
    if "n" not in exp or "shape" not in exp:
        raise ValidationError(f"{path}: [experiment] needs 'n' and 'shape'")
    n = int(exp["n"])
    shape = tuple(int(s) for s in exp["shape"])
    base_change = {"tau": n // 2, **raw.get("change", {})}
    base_noise = dict(raw.get("noise", {}))
    unknown = (set(base_change) - _CHANGE_KEYS) | (set(base_noise) - _NOISE_KEYS)
    grid = raw.get("grid", {})
    unknown |= set(grid) - _CHANGE_KEYS - _NOISE_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown design keys {sorted(unknown)}")
    names = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in names)) if names else [()]:
        params = dict(zip(names, combo))
        ch = {**base_change, **{k: v for k, v in params.items() if k in _CHANGE_KEYS}}
        no = {**base_noise, **{k: v for k, v in params.items() if k in _NOISE_KEYS}}
        label = ",".join(f"{k}={v}" for k, v in params.items()) or "base"
        cells.append(DesignCell(label, n, shape, ChangeSpec(**ch), NoiseSpec(**no), params))
    dets = []
    for i, d in enumerate(raw.get("detector", [])):
        blocks = parse_block_spec(str(d.get("blocks", "1")))
        dets.append(DetectorSpec(d.get("name", f"detector{i + 1}"), tuple(blocks),
                                 int(d.get("k", 40)), d.get("metric", "L2")))
    if not dets:
        raise ValidationError(f"{path}: at least one [[detector]] table is required")
    return {
        "cells": cells,
        "detectors": dets,
        "trials": int(exp.get("trials", 100)),
        "seed": int(exp.get("seed", 0)),
        "alphas": [float(a) for a in exp.get("alphas", [0.05])],
        "radius": int(exp.get("radius", 10)),
        "U": int(exp.get("permutations", 200)),
        "threshold": exp.get("threshold", "permutation"),
        "null_sims": int(exp.get("null_sims", 1000)),
        "name": exp.get("name", Path(path).stem),
    }
