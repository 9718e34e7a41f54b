"""Multiple change points by seeded binary segmentation.

A deterministic multiscale family of intervals is tested with a
single-change detector. Greedy selection then repeatedly takes the
significant interval with the largest statistic, records its change
estimate and drops every interval that contains it.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .abcd import GraphConfig, ScanResult, abcd_detect
from .blocking import BlockingPlan, default_plan, make_plan
from .core import SeriesTensor, ValidationError

__all__ = [
    "SeededInterval",
    "SegmentConfig",
    "SegmentationReport",
    "seeded_intervals",
    "segment",
    "SCHEMA",
]

SCHEMA = "abcdcp.segmentation/1"
log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class SeededInterval:
    """Inclusive 1-based time range ``[l, r]``."""

    l: int
    r: int
    layer: int = field(default=1, compare=False)

    @property
    def length(self) -> int:
        return self.r - self.l + 1

    def contains(self, tau: int) -> bool:
        # A split at tau separates rows <= tau from rows > tau.
        return self.l <= tau < self.r


def seeded_intervals(n: int, decay: float = 1 / math.sqrt(2), min_len: int = 30) -> list[SeededInterval]:
    """Deterministic seeded intervals.

    Layer ``k`` holds ``2 * ceil((1/decay)**(k-1)) - 1`` intervals of length
    ``ceil(n * decay**(k-1))`` with evenly spaced starts, the first at 1 and
    the last ending at ``n``. Layers stop once the length drops below
    ``min_len``. Sorted by length (descending) then start.
    """
    if not 0.5 <= decay < 1:
        raise ValidationError(f"decay must lie in [1/2, 1), got {decay}")
    if min_len < 4:
        raise ValidationError(f"min_len must be >= 4, got {min_len}")
    if n < min_len:
        raise ValidationError(f"n={n} is shorter than min_len={min_len}")
    seen = {}
    k = 1
    while True:
        length = math.ceil(n * decay ** (k - 1) - 1e-9)
        if length < min_len:
            break
        count = 2 * math.ceil((1 / decay) ** (k - 1) - 1e-9) - 1
        shift = (n - length) / (count - 1) if count > 1 else 0.0
        for i in range(count):
            start = math.floor(i * shift + 1e-9)
            iv = (start + 1, start + length)
            if iv not in seen:
                seen[iv] = SeededInterval(iv[0], iv[1], k)
        k += 1
    return sorted(seen.values(), key=lambda iv: (-iv.length, iv.l))


@dataclass(frozen=True)
class SegmentConfig:
    alpha: float = 0.01
    U: int = 1000
    min_len: int = 30
    decay: float = 1 / math.sqrt(2)
    k_fraction: float = 0.2
    k: int | None = None  # fixed k overrides k_fraction
    metric: str = "L2"
    window_frac: float = 0.05
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.U < 1:
            raise ValidationError("segmentation needs U >= 1 permutations")
        if 1 / (self.U + 1) > self.alpha:
            warnings.warn(
                f"U={self.U} permutations cannot reach p <= alpha={self.alpha}; "
                f"need U >= {math.ceil(1 / self.alpha) - 1}",
                UserWarning,
                stacklevel=3,
            )

    def k_for(self, n_s: int) -> int:
        if self.k is not None:
            return min(self.k, n_s // 2)
        return max(1, min(int(math.floor(self.k_fraction * n_s)), n_s // 2))


@dataclass
class SegmentationReport:
    change_points: list[dict]
    tests: list[dict]
    config: dict

    @property
    def taus(self) -> list[int]:
        return [c["tau_hat"] for c in self.change_points]

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "change_points": self.change_points,
                "tests": self.tests, "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _window(n_s: int, frac: float) -> tuple[int, int]:
    n0 = int(math.floor(frac * n_s))
    return max(n0, 2), min(n_s - n0, n_s - 2)


def segment(
    series: SeriesTensor,
    plan: BlockingPlan | list | None = None,
    cfg: SegmentConfig | None = None,
    detector: Callable | None = None,
) -> SegmentationReport:
    """Seeded binary segmentation with greedy selection.

    Each interval is tested on its own rows only; boundary trimming and
    permutations are local to the interval. ``detector`` defaults to
    :func:`abcd_detect` and is called as
    ``detector(sub_series, plan, graph_cfg, window, U, seed, rng_stream)``.
    """
    cfg = cfg or SegmentConfig()
    if plan is None:
        plan = default_plan(series.shape)
    elif not isinstance(plan, BlockingPlan):
        plan = make_plan(series.shape, plan)
    detector = detector or _abcd
    intervals = seeded_intervals(series.n, cfg.decay, cfg.min_len)

    def run(iv: SeededInterval):
        sub = series.rows(iv.l - 1, iv.r)
        k = cfg.k_for(iv.length)
        window = _window(iv.length, cfg.window_frac)
        try:
            res = detector(sub, plan, GraphConfig(k, cfg.metric), window, cfg.U, cfg.seed, (iv.l, iv.r))
        except ValidationError as exc:
            log.warning("interval [%d, %d] skipped: %s", iv.l, iv.r, exc)
            return {"l": iv.l, "r": iv.r, "layer": iv.layer, "k": k, "error": str(exc)}
        return {
            "l": iv.l, "r": iv.r, "layer": iv.layer, "k": k,
            "window": [iv.l - 1 + window[0], iv.l - 1 + window[1]],
            "T": res.T, "p_value": res.p_value,
            "tau_hat": iv.l - 1 + res.tau_hat,
            "best_block": res.best_block.to_dict(),
        }

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            tests = list(pool.map(run, intervals))
    else:
        tests = [run(iv) for iv in intervals]

    alive = [t for t in tests if "error" not in t and t["p_value"] <= cfg.alpha]
    found = []
    while alive:
        # Largest T wins; earlier start breaks ties.
        best = min(alive, key=lambda t: (-t["T"], t["l"]))
        tau = best["tau_hat"]
        found.append(dict(best))
        alive = [t for t in alive if not (t["l"] <= tau < t["r"])]
    found.sort(key=lambda t: t["tau_hat"])

    config = {
        "alpha": cfg.alpha, "U": cfg.U, "min_len": cfg.min_len, "decay": cfg.decay,
        "k_rule": f"floor({cfg.k_fraction} * n_s)" if cfg.k is None else f"fixed {cfg.k}",
        "metric": cfg.metric, "window_frac": cfg.window_frac, "seed": cfg.seed,
        "plan": [list(s) for s in plan.specs], "shape": list(series.shape), "n": series.n,
        "trimming": "per interval",
        "permutations": "rows of the tested interval only",
        "multiplicity": "none across intervals",
        "intervals": len(intervals),
    }
    return SegmentationReport(found, tests, config)


def _abcd(sub, plan, graph_cfg, window, U, seed, stream) -> ScanResult:
    return abcd_detect(sub, plan, graph_cfg, window=window, U=U, seed=seed,
                       rng_stream=stream, retain_blocks=False)
