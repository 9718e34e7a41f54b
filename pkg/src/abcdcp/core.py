"""Data model for ordered sequences of vector or image observations.

A :class:`SeriesTensor` holds ``n`` observations, each flattened to ``d``
components. Image observations (``q = 2``) are flattened row-major, so the
pixel at (row ``i``, column ``j``) sits at flat index ``i * d2 + j``
(0-based). Every module that maps flat indices to grid coordinates goes
through :func:`flat_to_grid` / :func:`grid_to_flat`.

Component and node indices are 0-based in the Python API. Time is reported
as a split point ``t`` in ``1..n-1`` meaning "first sample is rows 1..t".
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

__all__ = [
    "ValidationError",
    "FormatError",
    "SeriesTensor",
    "ComponentSelector",
    "flat_to_grid",
    "grid_to_flat",
    "slice_components",
    "load_series",
    "save_series",
    "read_manifest",
    "write_array_payload",
    "read_array_payload",
    "counter_rng",
]

_DTYPES = {"f32": "<f4", "f64": "<f8", "u8": "u1"}


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class FormatError(ValidationError):
    """Raised when a file does not match its declared on-disk format."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SeriesTensor:
    """``n x d`` observation matrix with its spatial decomposition.

    ``values`` is converted to a read-only float64 array. ``shape`` is
    ``(d,)`` for vector data or ``(d1, d2)`` for images.
    """

    values: np.ndarray
    shape: tuple[int, ...] = ()
    timestamps: tuple | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ValidationError(f"values must be 2-D (n x d), got ndim={values.ndim}")
        n, d = values.shape
        if n < 2:
            raise ValidationError(f"need at least 2 observations, got n={n}")
        if d < 1:
            raise ValidationError("need at least one component")
        shape = tuple(int(s) for s in self.shape) if self.shape else (d,)
        if len(shape) not in (1, 2):
            raise ValidationError(f"only q in {{1, 2}} supported, got shape {shape}")
        if any(s < 1 for s in shape) or math.prod(shape) != d:
            raise ValidationError(f"shape {shape} does not multiply to d={d}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(f"non-finite value at row {bad[0]}, component {bad[1]}")
        ts = self.timestamps
        if ts is not None:
            ts = tuple(ts)
            if len(ts) != n:
                raise ValidationError(f"{len(ts)} timestamps for {n} observations")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "timestamps", ts)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def q(self) -> int:
        return len(self.shape)

    def rows(self, start: int, stop: int) -> "SeriesTensor":
        """Sub-series of rows ``start:stop`` (0-based, half-open)."""
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return SeriesTensor(self.values[start:stop], self.shape, ts)

    def __eq__(self, other):
        if not isinstance(other, SeriesTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.timestamps == other.timestamps
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ComponentSelector:
    """Sorted, unique, nonempty set of 0-based component indices."""

    indices: np.ndarray
    d: int | None = field(default=None, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise ValidationError("component selector is empty")
        uniq = np.unique(idx)
        if uniq.size != idx.size:
            raise ValidationError("component selector has duplicate indices")
        if uniq[0] < 0 or (self.d is not None and uniq[-1] >= self.d):
            raise ValidationError(
                f"component index out of range [0, {self.d}): {uniq[0] if uniq[0] < 0 else uniq[-1]}"
            )
        object.__setattr__(self, "indices", _freeze(uniq))

    def __len__(self):
        return int(self.indices.size)

    def __eq__(self, other):
        if not isinstance(other, ComponentSelector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices)

    __hash__ = None


def grid_to_flat(row, col, d2: int):
    """Row-major flat index of pixel (row, col), 0-based."""
    return np.asarray(row) * d2 + np.asarray(col)


def flat_to_grid(index, d2: int):
    """Inverse of :func:`grid_to_flat`; returns ``(row, col)``."""
    return np.divmod(np.asarray(index), d2)


def slice_components(series: SeriesTensor, sel: ComponentSelector) -> SeriesTensor:
    """Project ``series`` onto the selected components (time order kept)."""
    idx = sel.indices
    if idx[-1] >= series.d or idx[0] < 0:
        raise ValidationError(
            f"selector index {int(idx[-1])} out of range for d={series.d}"
        )
    if idx.size == series.d:
        return series
    return SeriesTensor(series.values[:, idx], (int(idx.size),), series.timestamps)


# ---------------------------------------------------------------- file I/O

def read_manifest(path) -> dict:
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed manifest JSON ({exc})") from None
    if not isinstance(meta, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    for key in ("n", "shape", "dtype", "payload"):
        if key not in meta:
            raise FormatError(f"{path}: manifest missing '{key}'")
    if meta["dtype"] not in _DTYPES:
        raise FormatError(f"{path}: dtype must be one of {sorted(_DTYPES)}, got {meta['dtype']!r}")
    if not isinstance(meta["n"], int) or meta["n"] < 1:
        raise FormatError(f"{path}: 'n' must be a positive integer")
    shape = meta["shape"]
    if not isinstance(shape, list) or not shape or not all(isinstance(s, int) and s > 0 for s in shape):
        raise FormatError(f"{path}: 'shape' must be a list of positive integers")
    return meta


def read_array_payload(manifest_path, meta: dict, per_row: int) -> np.ndarray:
    """Read the little-endian payload referenced by ``meta`` as ``n x per_row``."""
    manifest_path = Path(manifest_path)
    payload = manifest_path.parent / meta["payload"]
    if not payload.exists():
        raise FormatError(f"{manifest_path}: payload file {payload} not found")
    dtype = np.dtype(_DTYPES[meta["dtype"]])
    expected = meta["n"] * per_row
    raw = payload.read_bytes()
    if len(raw) % dtype.itemsize:
        raise FormatError(f"{payload}: size {len(raw)} is not a multiple of {dtype.itemsize}")
    count = len(raw) // dtype.itemsize
    if count < expected:
        raise FormatError(f"{payload}: truncated payload, {count} values for n*d={expected}")
    if count > expected:
        raise FormatError(f"{payload}: {count - expected} trailing values beyond n*d={expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(meta["n"], per_row)


def write_array_payload(path, array: np.ndarray, dtype: str, extra: dict | None = None) -> dict:
    """Write ``array`` (time-major) plus a JSON manifest at ``path``."""
    path = Path(path)
    if dtype not in _DTYPES:
        raise ValidationError(f"dtype must be one of {sorted(_DTYPES)}")
    payload = path.with_suffix(".bin") if path.suffix != ".bin" else path.with_suffix(".payload")
    arr = np.ascontiguousarray(array, dtype=np.dtype(_DTYPES[dtype]))
    payload.write_bytes(arr.tobytes())
    meta = {"n": int(arr.shape[0]), "dtype": dtype, "payload": payload.name}
    meta.update(extra or {})
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def load_series(path, format: str | None = None) -> SeriesTensor:
    """Load a series from a JSON manifest + binary payload, or from CSV.

    ``format`` is ``"binary"`` or ``"csv"``; inferred from the suffix when
    omitted (``.csv`` means CSV, anything else a manifest).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "csv":
        return _load_csv(path)
    if format != "binary":
        raise ValidationError(f"unknown series format {format!r}")
    path = _resolve_manifest(path)
    meta = read_manifest(path)
    d = math.prod(meta["shape"])
    values = read_array_payload(path, meta, d)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return SeriesTensor(values, tuple(meta["shape"]), meta.get("timestamps"))


def _resolve_manifest(path: Path) -> Path:
    # Accept the payload path too when a sibling manifest points at it.
    sibling = path.with_suffix(".json")
    if path.suffix != ".json" and sibling.exists():
        try:
            meta = json.loads(sibling.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return path
        if isinstance(meta, dict) and meta.get("payload") == path.name:
            return sibling
    return path


def save_series(series: SeriesTensor, path, format: str | None = None, dtype: str = "f64",
                extra: dict | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "csv":
        if series.q != 1:
            raise ValidationError("CSV format only holds q=1 series")
        _save_csv(series, path)
        return
    meta = {"shape": list(series.shape)}
    if series.timestamps is not None:
        meta["timestamps"] = list(series.timestamps)
    meta.update(extra or {})
    write_array_payload(path, series.values, dtype, meta)


def _load_csv(path: Path) -> SeriesTensor:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    if len(header) < 2 or header[0].strip() != "t":
        raise FormatError(f"{path}: header must be 't,c1,...,cd'")
    d = len(header) - 1
    ts, vals = [], []
    for lineno, row in enumerate(body, start=2):
        if not row:
            continue
        if len(row) != d + 1:
            raise FormatError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
        ts.append(row[0])
        try:
            vals.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    values = np.asarray(vals, dtype=np.float64).reshape(len(vals), d)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values")
    return SeriesTensor(values, (d,), tuple(ts))


def _save_csv(series: SeriesTensor, path: Path) -> None:
    ts = series.timestamps or tuple(str(i + 1) for i in range(series.n))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"c{j + 1}" for j in range(series.d)])
        for t, row in zip(ts, series.values):
            w.writerow([t] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------- RNG

def counter_rng(seed: int, *stream: int, tag: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``(seed, tag)`` and positioned by ``stream``.

    Each stream tuple (up to three integers) gives an independent,
    reproducible generator, so parallel replicates do not depend on worker
    count or scheduling. ``tag`` separates purposes (data vs permutations)
    that share a user seed.
    """
    if len(stream) > 3:
        raise ValidationError("at most three stream coordinates")
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(tag)]).generate_state(2, np.uint64)
    ctr = np.zeros(4, dtype=np.uint64)
    # Philox advances counter word 0; streams occupy the high words.
    for i, s in enumerate(stream):
        ctr[3 - i] = np.uint64(int(s) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key, counter=ctr))
