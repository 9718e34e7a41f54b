"""Remote-sensing preprocessing: robust standardization, per-pixel
logistic fusion of bands into a probability series, and log heatmaps.

Stacks are held in memory as ``bands x d1 x d2 x n`` arrays. On disk they
use the series manifest format with a ``"bands"`` list; the payload is
time-major (for each time, each band, a row-major image).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import (
    FormatError,
    SeriesTensor,
    ValidationError,
    read_array_payload,
    read_manifest,
    write_array_payload,
)

__all__ = [
    "BandStack",
    "LabelArray",
    "FusedSeries",
    "HeatmapPair",
    "robust_standardize",
    "fit_pixel_logistic",
    "logistic_irls",
    "mean_band_image",
    "log_heatmap",
    "labels_from_references",
    "load_stack",
    "save_stack",
    "load_labels",
    "save_labels",
    "write_pgm",
]


@dataclass(frozen=True, eq=False)
class BandStack:
    data: np.ndarray  # bands x d1 x d2 x n
    band_names: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 4:
            raise ValidationError(f"band stack must be 4-D (bands x d1 x d2 x n), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("band stack has non-finite values")
        names = tuple(self.band_names) or tuple(f"band{i + 1}" for i in range(a.shape[0]))
        if len(names) != a.shape[0]:
            raise ValidationError(f"{len(names)} band names for {a.shape[0]} bands")
        object.__setattr__(self, "data", a)
        object.__setattr__(self, "band_names", names)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    @property
    def n(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True, eq=False)
class LabelArray:
    data: np.ndarray  # d1 x d2 x n, values in {0, 1}

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3:
            raise ValidationError(f"label array must be 3-D (d1 x d2 x n), got {a.shape}")
        if not np.all((a == 0) | (a == 1)):
            raise ValidationError("labels must be 0 or 1")
        object.__setattr__(self, "data", a.astype(np.uint8))


@dataclass(eq=False)
class FusedSeries:
    """Fitted probabilities ``d1 x d2 x n`` with per-pixel fit diagnostics.

    ``flags`` is ``""`` for a regular fit, ``"degenerate-labels"`` when a
    pixel's labels are constant (probabilities set to that constant) and
    ``"not-converged"`` when the iteration cap was hit.
    """

    probs: np.ndarray
    beta: np.ndarray  # d1 x d2 x (bands + 1)
    converged: np.ndarray
    iterations: np.ndarray
    flags: np.ndarray
    ridge: float = 1e-4
    notes: list[str] = field(default_factory=list)

    def to_series(self) -> SeriesTensor:
        d1, d2, n = self.probs.shape
        return SeriesTensor(self.probs.reshape(d1 * d2, n).T, (d1, d2))


@dataclass
class HeatmapPair:
    before: np.ndarray
    after: np.ndarray
    meta: dict

    @property
    def difference(self) -> np.ndarray:
        return self.after - self.before


_EPS = np.finfo(np.float64).eps


# ---------------------------------------------------------------- standardization

def robust_standardize(stack: BandStack) -> BandStack:
    """Center each (band, time) image by its median and divide by the
    spread between its 95% and 5% quantiles (linear interpolation between
    order statistics). Images with zero spread become all zeros."""
    a = stack.data
    flat = a.reshape(a.shape[0], -1, a.shape[3])
    med = np.median(flat, axis=1)
    q05, q95 = np.quantile(flat, [0.05, 0.95], axis=1, method="linear")
    spread = q95 - q05
    bad = spread <= 0
    if np.any(bad):
        b, t = np.nonzero(bad)
        warnings.warn(
            f"{bad.sum()} image(s) with zero quantile spread standardized to zeros "
            f"(first: band {b[0] + 1}, t={t[0] + 1})",
            RuntimeWarning,
            stacklevel=2,
        )
    safe = np.where(bad, 1.0, spread)
    out = (a - med[:, None, None, :]) / safe[:, None, None, :]
    out[np.broadcast_to(bad[:, None, None, :], out.shape)] = 0.0
    return BandStack(out, stack.band_names)


# ---------------------------------------------------------------- logistic fusion

def _penalized_loglik(X, y, beta, pen):
    eta = np.einsum("pnk,pk->pn", X, beta)
    ll = np.sum(y * eta - np.logaddexp(0.0, eta), axis=1)
    return ll - 0.5 * np.sum(pen * beta * beta, axis=1)


def logistic_irls(X: np.ndarray, y: np.ndarray, ridge: float = 1e-4, max_iter: int = 100,
                  tol: float = 1e-8):
    """Batched ridge-penalized logistic regression by IRLS (Newton).

    ``X`` is ``P x n x K`` with the intercept in column 0 (not penalized),
    ``y`` is ``P x n``. Returns ``(beta, converged, iterations)``. Steps are
    halved while they fail to increase the penalized likelihood.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    P, n, K = X.shape
    pen = np.full(K, float(ridge))
    pen[0] = 0.0
    beta = np.zeros((P, K))
    converged = np.zeros(P, dtype=bool)
    iters = np.zeros(P, dtype=np.int64)
    obj = _penalized_loglik(X, y, beta, pen)
    active = np.arange(P)
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        Xa, ya, ba = X[active], y[active], beta[active]
        mu = expit(np.einsum("pnk,pk->pn", Xa, ba))
        w = mu * (1.0 - mu)
        grad = np.einsum("pnk,pn->pk", Xa, ya - mu) - pen * ba
        H = np.einsum("pnk,pn,pnl->pkl", Xa, w, Xa) + np.diag(pen)
        # Tiny jitter keeps H invertible for an all-zero covariate column.
        H += 1e-12 * np.eye(K)
        step = np.linalg.solve(H, grad[..., None])[..., 0]
        scale = np.ones(active.size)
        old = obj[active]
        new_beta = ba + step
        new = _penalized_loglik(Xa, ya, new_beta, pen)
        for _ in range(40):
            worse = new < old - 1e-12 * np.abs(old)
            if not worse.any():
                break
            scale[worse] *= 0.5
            new_beta[worse] = ba[worse] + scale[worse, None] * step[worse]
            new[worse] = _penalized_loglik(Xa[worse], ya[worse], new_beta[worse], pen)
        change = np.max(np.abs(new_beta - ba), axis=1)
        beta[active] = new_beta
        obj[active] = new
        iters[active] = it
        done = change < tol
        converged[active[done]] = True
        active = active[~done]
    return beta, converged, iters


def fit_pixel_logistic(stack: BandStack, labels: LabelArray, ridge: float = 1e-4,
                       max_iter: int = 100, tol: float = 1e-8, chunk: int = 2048) -> FusedSeries:
    """Per-pixel logistic regression of labels on ``(1, band values)``."""
    B, d1, d2, n = stack.data.shape
    if labels.data.shape != (d1, d2, n):
        raise ValidationError(f"labels shape {labels.data.shape} does not match stack {(d1, d2, n)}")
    P = d1 * d2
    cov = stack.data.reshape(B, P, n).transpose(1, 2, 0)  # P x n x B
    y = labels.data.reshape(P, n).astype(np.float64)
    probs = np.empty((P, n))
    beta = np.zeros((P, B + 1))
    conv = np.ones(P, dtype=bool)
    iters = np.zeros(P, dtype=np.int64)
    flags = np.full(P, "", dtype=object)
    mean = y.mean(axis=1)
    const = (mean == 0) | (mean == 1)
    probs[const] = mean[const, None]
    flags[const] = "degenerate-labels"
    todo = np.flatnonzero(~const)
    for start in range(0, todo.size, chunk):
        idx = todo[start:start + chunk]
        X = np.concatenate((np.ones((idx.size, n, 1)), cov[idx]), axis=2)
        b, c, it = logistic_irls(X, y[idx], ridge, max_iter, tol)
        beta[idx], conv[idx], iters[idx] = b, c, it
        # Near-separable pixels can round to exactly 0 or 1 in double precision.
        probs[idx] = np.clip(expit(np.einsum("pnk,pk->pn", X, b)), _EPS, 1.0 - _EPS)
    flags[~conv] = "not-converged"
    notes = []
    if const.any():
        notes.append(f"{int(const.sum())} pixel(s) with constant labels")
    if (~conv).any():
        notes.append(f"{int((~conv).sum())} pixel(s) did not converge in {max_iter} iterations")
    return FusedSeries(
        probs.reshape(d1, d2, n), beta.reshape(d1, d2, B + 1), conv.reshape(d1, d2),
        iters.reshape(d1, d2), flags.reshape(d1, d2), ridge, notes,
    )


def labels_from_references(masks: Sequence[np.ndarray], ref_times: Sequence[int], n: int) -> LabelArray:
    """Label array from reference construction masks.

    A pixel at time ``t`` carries the mask of the latest reference image
    taken at or before ``t`` (1-based); before the first reference it is 0.
    """
    order = np.argsort(ref_times, kind="stable")
    d1, d2 = np.shape(masks[0])
    out = np.zeros((d1, d2, n), dtype=np.uint8)
    for i in order:
        t0 = int(ref_times[i])
        if not 1 <= t0 <= n:
            raise ValidationError(f"reference time {t0} outside 1..{n}")
        out[:, :, t0 - 1:] = np.asarray(masks[i], dtype=np.uint8)[:, :, None]
    return LabelArray(out)


# ---------------------------------------------------------------- heatmaps

def mean_band_image(stack: BandStack) -> np.ndarray:
    """Pixel-wise mean over bands, ``d1 x d2 x n``."""
    return stack.data.mean(axis=0)


def log_heatmap(
    W: np.ndarray,
    block: Sequence[Sequence[int]],
    t_range_before: tuple[int, int],
    t_range_after: tuple[int, int],
    floor: float = 1e-3,
) -> HeatmapPair:
    """Average of ``log(max(W, floor))`` images over each time range,
    cropped to ``block``.

    ``block`` is ``((r0, r1), (c0, c1))`` and time ranges ``(t0, t1)``,
    all inclusive and 1-based.
    """
    W = np.asarray(W, dtype=np.float64)
    d1, d2, n = W.shape
    (r0, r1), (c0, c1) = block
    if not (1 <= r0 <= r1 <= d1 and 1 <= c0 <= c1 <= d2):
        raise ValidationError(f"block {block} outside image {d1} x {d2}")
    if floor <= 0:
        raise ValidationError("floor must be positive")
    imgs = []
    for name, (t0, t1) in (("before", t_range_before), ("after", t_range_after)):
        if not 1 <= t0 <= t1 <= n:
            raise ValidationError(f"{name} range ({t0}, {t1}) outside 1..{n}")
        crop = W[r0 - 1:r1, c0 - 1:c1, t0 - 1:t1]
        imgs.append(np.log(np.maximum(crop, floor)).mean(axis=2))
    meta = {
        "block": [[r0, r1], [c0, c1]],
        "before": list(t_range_before),
        "after": list(t_range_after),
        "floor": floor,
        "transform": "mean over range of log(max(W, floor))",
    }
    return HeatmapPair(imgs[0], imgs[1], meta)


def default_ranges(tau_hat: int, n: int, width: int = 10) -> tuple[tuple[int, int], tuple[int, int]]:
    """``width`` images up to and including ``tau_hat`` and ``width`` after it."""
    before = (max(1, tau_hat - width + 1), tau_hat)
    after = (tau_hat + 1, min(n, tau_hat + width))
    return before, after


def write_pgm(path, image: np.ndarray, lo: float | None = None, hi: float | None = None) -> dict:
    """Write an 8-bit binary PGM, scaling ``[lo, hi]`` to ``[0, 255]``."""
    img = np.asarray(image, dtype=np.float64)
    lo = float(img.min()) if lo is None else lo
    hi = float(img.max()) if hi is None else hi
    span = hi - lo
    scaled = np.zeros(img.shape) if span <= 0 else (img - lo) / span
    pix = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    return {"file": str(Path(path).name), "scale_min": lo, "scale_max": hi}


# ---------------------------------------------------------------- file formats

def load_stack(path) -> BandStack:
    path = Path(path)
    meta = read_manifest(path)
    names = meta.get("bands")
    if not isinstance(names, list) or not names:
        raise FormatError(f"{path}: band stack manifest needs a non-empty 'bands' list")
    if len(meta["shape"]) != 2:
        raise FormatError(f"{path}: band stack shape must be [d1, d2]")
    d1, d2 = meta["shape"]
    raw = read_array_payload(path, meta, len(names) * d1 * d2)
    data = raw.reshape(meta["n"], len(names), d1, d2).transpose(1, 2, 3, 0).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return BandStack(data, tuple(str(b) for b in names))


def save_stack(stack: BandStack, path, dtype: str = "f32", extra: dict | None = None) -> None:
    B, d1, d2, n = stack.data.shape
    arr = stack.data.transpose(3, 0, 1, 2).reshape(n, -1)
    meta = {"shape": [d1, d2], "bands": list(stack.band_names)}
    meta.update(extra or {})
    write_array_payload(path, arr, dtype, meta)


def load_labels(path) -> LabelArray:
    path = Path(path)
    meta = read_manifest(path)
    if len(meta["shape"]) != 2:
        raise FormatError(f"{path}: label shape must be [d1, d2]")
    d1, d2 = meta["shape"]
    raw = read_array_payload(path, meta, d1 * d2)
    return LabelArray(raw.reshape(meta["n"], d1, d2).transpose(1, 2, 0))


def save_labels(labels: LabelArray, path) -> None:
    d1, d2, n = labels.data.shape
    write_array_payload(path, labels.data.transpose(2, 0, 1).reshape(n, -1), "u8",
                        {"shape": [d1, d2], "kind": "labels"})


def save_heatmaps(pair: HeatmapPair, out_dir, prefix: str = "heatmap", extra: dict | None = None) -> dict:
    """Write before/after/difference PGMs and a JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lo = float(min(pair.before.min(), pair.after.min()))
    hi = float(max(pair.before.max(), pair.after.max()))
    files = {
        "before": write_pgm(out_dir / f"{prefix}_before.pgm", pair.before, lo, hi),
        "after": write_pgm(out_dir / f"{prefix}_after.pgm", pair.after, lo, hi),
        "difference": write_pgm(out_dir / f"{prefix}_difference.pgm", pair.difference),
    }
    side = {**pair.meta, **(extra or {}), "images": files,
            "before_values": pair.before.tolist(), "after_values": pair.after.tolist()}
    (out_dir / f"{prefix}.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
    return side
