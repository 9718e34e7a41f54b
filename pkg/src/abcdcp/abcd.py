"""Adaptive block-based change-point test for a single change.

Each blocking structure splits the components into blocks; every block is
scanned with the max-type edge-count statistic on its own similarity
graph. Per time point the block scans are reduced by a maximum within each
structure and an equal-weight average across structures. The largest
value of that average is the test statistic and its location the change
estimate. Significance comes from permuting time labels: block graphs
depend only on the unordered set of observations, so they are built once
and reused by every permutation replicate.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .blocking import BlockingPlan, BlockingStructure, make_plan
from .core import SeriesTensor, ValidationError, counter_rng
from .edgecount import ScanStandardizer, default_window, edge_counts_batch
from .simgraph import (
    GraphWarning,
    SimilarityGraph,
    condensed_distances,
    k_mst_condensed,
    knn_graph,
    DistanceMatrix,
)

__all__ = [
    "GraphConfig",
    "ScanResult",
    "BlockRank",
    "BlockScanError",
    "DegenerateBlockWarning",
    "block_scans",
    "structure_max",
    "abcd_detect",
    "localize",
    "SCHEMA",
]

SCHEMA = "abcdcp.scan_result/1"
_PERM_CHUNK = 256
PERM_TAG = 0x5045524D


class BlockScanError(ValidationError):
    def __init__(self, structure, block, cause):
        super().__init__(f"structure {structure} block {block + 1}: {cause}")
        self.structure = structure
        self.block = block
        self.cause = cause


class DegenerateBlockWarning(UserWarning):
    """A block is constant over time; its scan is set to zero."""


@dataclass(frozen=True)
class GraphConfig:
    k: int = 40
    metric: str = "L2"
    kind: str = "kmst"  # "kmst" or "knn"

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.kind not in ("kmst", "knn"):
            raise ValidationError(f"unknown graph kind {self.kind!r}")


@dataclass
class _Block:
    graph: SimilarityGraph | None
    std: ScanStandardizer | None


def _build_block(values: np.ndarray, cfg: GraphConfig, window) -> _Block:
    n = values.shape[0]
    cond = condensed_distances(values, cfg.metric)
    if not np.any(cond):
        return _Block(None, None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GraphWarning)
        if cfg.kind == "kmst":
            graph = k_mst_condensed(cond, n, cfg.k)
        else:
            from scipy.spatial.distance import squareform

            graph = knn_graph(DistanceMatrix(squareform(cond), cfg.metric), cfg.k)
    return _Block(graph, ScanStandardizer(graph, window))


def _identity_m(block: _Block, n: int, window) -> np.ndarray:
    lo, hi = window
    if block.graph is None:
        return np.zeros(hi - lo + 1)
    r1, r2 = edge_counts_batch(block.graph, np.arange(n)[None, :], window)
    return block.std(r1, r2)[2][0]


def _perm_m(block: _Block, labels: np.ndarray, window) -> np.ndarray:
    lo, hi = window
    if block.graph is None:
        return np.zeros((labels.shape[0], hi - lo + 1))
    r1, r2 = edge_counts_batch(block.graph, labels, window)
    return block.std(r1, r2)[2]


def _prepare(series: SeriesTensor, structure: BlockingStructure, cfg: GraphConfig, window,
             pool: ThreadPoolExecutor | None, notes: list[str]) -> list[_Block]:
    if tuple(series.shape) != tuple(structure.shape):
        raise ValidationError(
            f"structure built for shape {structure.shape}, series has shape {series.shape}"
        )
    x = series.values

    def build(j):
        try:
            return _build_block(x[:, structure.blocks[j].indices], cfg, window)
        except ValidationError as exc:
            raise BlockScanError(structure.spec, j, exc) from exc

    js = range(len(structure.blocks))
    blocks = list(pool.map(build, js)) if pool is not None else [build(j) for j in js]
    for j, b in enumerate(blocks):
        if b.graph is None:
            msg = f"structure {structure.label} block {j + 1} is constant over time; scan set to 0"
            warnings.warn(msg, DegenerateBlockWarning, stacklevel=3)
            notes.append(msg)
        elif b.graph.notes:
            notes.extend(f"structure {structure.label} block {j + 1}: {s}" for s in b.graph.notes)
    return blocks


def _resolve_window(n: int, window) -> tuple[int, int]:
    if window is None:
        return default_window(n)
    lo, hi = int(window[0]), int(window[1])
    if not 1 <= lo <= hi <= n - 1:
        raise ValidationError(f"window ({lo}, {hi}) outside [1, {n - 1}]")
    return lo, hi


def block_scans(series: SeriesTensor, structure: BlockingStructure,
                graph_cfg: GraphConfig | None = None, window=None) -> list[np.ndarray]:
    """Max-type scan curve ``M_j(t)`` of every block, over ``window``."""
    cfg = graph_cfg or GraphConfig()
    window = _resolve_window(series.n, window)
    blocks = _prepare(series, structure, cfg, window, None, [])
    return [_identity_m(b, series.n, window) for b in blocks]


def structure_max(block_curves: Sequence[np.ndarray]) -> np.ndarray:
    """Pointwise maximum over block curves."""
    if len(block_curves) == 0:
        raise ValidationError("need at least one block curve")
    lengths = {np.shape(c) for c in block_curves}
    if len(lengths) != 1:
        raise ValidationError(f"block curves cover different windows: {sorted(lengths)}")
    return np.max(np.stack([np.asarray(c, dtype=np.float64) for c in block_curves]), axis=0)


@dataclass(frozen=True)
class BlockRank:
    structure_id: int
    spec: tuple[int, ...]
    block: int  # 0-based within the structure
    extent: tuple[tuple[int, int], ...]  # inclusive 0-based ranges per axis
    value: float

    def to_dict(self) -> dict:
        return {
            "structure_id": self.structure_id,
            "spec": list(self.spec),
            "block": self.block + 1,
            "extent": [[a + 1, b + 1] for a, b in self.extent],
            "value": self.value,
        }


@dataclass(eq=False)
class ScanResult:
    """Output of :func:`abcd_detect`.

    Curves are indexed by ``times`` (split points ``window[0]..window[1]``).
    ``per_block[s]`` is a ``P_s x W`` array of block scans when retained.
    """

    window: tuple[int, int]
    v_s: np.ndarray  # S x W
    v_avg: np.ndarray
    T: float
    tau_hat: int
    p_value: float | None
    exceedances: int | None
    best_block: BlockRank
    specs: list[tuple[int, ...]]
    extents: list[tuple]
    per_block: list[np.ndarray] | None
    config: dict
    notes: list[str] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.window[0], self.window[1] + 1)

    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA,
            "window": list(self.window),
            "T": float(self.T),
            "tau_hat": int(self.tau_hat),
            "p_value": None if self.p_value is None else float(self.p_value),
            "exceedances": self.exceedances,
            "best_block": self.best_block.to_dict(),
            "structures": [list(s) for s in self.specs],
            "v_s": [[float(v) for v in row] for row in self.v_s],
            "v_avg": [float(v) for v in self.v_avg],
            "config": self.config,
            "notes": list(self.notes),
        }
        if self.per_block is not None:
            out["per_block"] = [[[float(v) for v in row] for row in arr] for arr in self.per_block]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ScanResult":
        if data.get("schema") != SCHEMA:
            raise ValidationError(f"not a scan result (schema {data.get('schema')!r})")
        bb = data["best_block"]
        best = BlockRank(bb["structure_id"], tuple(bb["spec"]), bb["block"] - 1,
                         tuple((a - 1, b - 1) for a, b in bb["extent"]), bb["value"])
        per_block = data.get("per_block")
        specs = [tuple(s) for s in data["structures"]]
        extents = None
        shape = data["config"].get("shape")
        if shape is not None:
            plan = make_plan(shape, specs)
            extents = [st.extents for st in plan]
        return cls(
            window=tuple(data["window"]),
            v_s=np.asarray(data["v_s"], dtype=np.float64),
            v_avg=np.asarray(data["v_avg"], dtype=np.float64),
            T=data["T"],
            tau_hat=data["tau_hat"],
            p_value=data["p_value"],
            exceedances=data.get("exceedances"),
            best_block=best,
            specs=specs,
            extents=extents,
            per_block=None if per_block is None else [np.asarray(a) for a in per_block],
            config=data["config"],
            notes=list(data.get("notes", [])),
        )


def _permutation_labels(n: int, start: int, stop: int, seed: int, stream: tuple) -> np.ndarray:
    out = np.empty((stop - start, n), dtype=np.int64)
    for i, u in enumerate(range(start, stop)):
        out[i] = counter_rng(seed, *stream, u, tag=PERM_TAG).permutation(n)
    return out


def _ranked_blocks(per_block, specs, extents, idx) -> list[BlockRank]:
    ranks = []
    for sid, arr in enumerate(per_block):
        for j in range(arr.shape[0]):
            ranks.append(BlockRank(sid, specs[sid], j, extents[sid][j], float(arr[j, idx])))
    # Stable sort keeps (structure, block) order among ties.
    ranks.sort(key=lambda r: -r.value)
    return ranks


def abcd_detect(
    series: SeriesTensor,
    plan: BlockingPlan | Sequence | None = None,
    graph_cfg: GraphConfig | None = None,
    window=None,
    U: int = 0,
    seed: int = 0,
    retain_blocks: bool = True,
    workers: int = 1,
    rng_stream: tuple = (),
) -> ScanResult:
    """Run the block-ensemble scan and, if ``U > 0``, its permutation test.

    ``plan`` is a :class:`BlockingPlan` or a list of block-count specs.
    The p-value is ``(1 + #{T* >= T}) / (U + 1)``; it is ``None`` when
    ``U == 0``. Results are identical for any ``workers`` value.
    """
    from .blocking import default_plan

    if plan is None:
        plan = default_plan(series.shape)
    elif not isinstance(plan, BlockingPlan):
        plan = make_plan(series.shape, plan)
    cfg = graph_cfg or GraphConfig()
    if U < 0:
        raise ValidationError(f"U must be >= 0, got {U}")
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    n = series.n
    window = _resolve_window(n, window)
    if cfg.kind == "kmst" and cfg.k > n // 2:
        raise ValidationError(f"k={cfg.k} infeasible for n={n}; maximum feasible k is {n // 2}")
    lo, hi = window

    notes: list[str] = []
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        prepared = [_prepare(series, st, cfg, window, pool, notes) for st in plan]
        per_block = [np.stack([_identity_m(b, n, window) for b in blocks]) for blocks in prepared]
        v_s = np.stack([arr.max(axis=0) for arr in per_block])
        v_avg = v_s.mean(axis=0)
        idx = int(np.argmax(v_avg))  # first maximum: earliest t wins ties
        T = float(v_avg[idx])
        tau_hat = lo + idx
        specs = [st.spec for st in plan]
        extents = [st.extents for st in plan]
        best = _ranked_blocks(per_block, specs, extents, idx)[0]

        p_value = exceed = None
        if U > 0:
            exceed = 0
            for start in range(0, U, _PERM_CHUNK):
                stop = min(U, start + _PERM_CHUNK)
                labels = _permutation_labels(n, start, stop, seed, rng_stream)
                acc = np.zeros((stop - start, hi - lo + 1))
                for blocks in prepared:
                    fn = lambda b: _perm_m(b, labels, window)  # noqa: E731
                    ms = pool.map(fn, blocks) if pool is not None else map(fn, blocks)
                    vs = None
                    for m in ms:
                        vs = m if vs is None else np.maximum(vs, m)
                    acc += vs
                t_star = (acc / len(prepared)).max(axis=1)
                exceed += int(np.count_nonzero(t_star >= T))
            p_value = (1 + exceed) / (U + 1)
    finally:
        if pool is not None:
            pool.shutdown()

    config = {
        "k": cfg.k,
        "metric": cfg.metric,
        "graph": cfg.kind,
        "plan": [list(s) for s in specs],
        "shape": list(series.shape),
        "n": n,
        "window": [lo, hi],
        "U": U,
        "seed": seed,
        "rng_stream": list(rng_stream),
        "p_value_rule": "(1 + #{T* >= T}) / (U + 1)",
    }
    return ScanResult(
        window=window,
        v_s=v_s,
        v_avg=v_avg,
        T=T,
        tau_hat=tau_hat,
        p_value=p_value,
        exceedances=exceed,
        best_block=best,
        specs=specs,
        extents=extents,
        per_block=per_block if retain_blocks else None,
        config=config,
        notes=notes,
    )


def localize(result: ScanResult, top_m: int | None = None) -> list[BlockRank]:
    """Blocks ranked by their scan value at the estimated change.

    Ties keep (structure, block) order. ``top_m`` larger than the number of
    blocks returns the full ranking.
    """
    if result.per_block is None:
        raise ValidationError(
            "per-block statistics were not retained; re-run abcd_detect with retain_blocks=True"
        )
    idx = result.tau_hat - result.window[0]
    extents = result.extents
    if extents is None:
        extents = [tuple(((j, j),) for j in range(arr.shape[0])) for arr in result.per_block]
    ranks = _ranked_blocks(result.per_block, result.specs, extents, idx)
    return ranks if top_m is None else ranks[: max(0, top_m)]
