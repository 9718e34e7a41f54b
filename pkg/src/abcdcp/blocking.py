"""Contiguous blocking structures over vector components or image pixels.

Every block but the last along an axis has ``floor(d / P)`` components;
the last one absorbs the remainder, even when that makes it nearly twice
as large.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ComponentSelector, ValidationError, grid_to_flat

__all__ = [
    "BlockingStructure",
    "BlockingPlan",
    "axis_bounds",
    "make_blocks_1d",
    "make_blocks_2d",
    "make_plan",
    "default_plan",
    "parse_block_spec",
    "format_block_spec",
]

DEFAULT_1D = (1, 4, 10, 20, 40)
# Rows x columns of blocks, coarse to fine.
DEFAULT_2D = ((1, 1), (4, 6), (8, 12), (16, 24))


@dataclass(frozen=True, eq=False)
class BlockingStructure:
    """One partition of the components into contiguous blocks.

    ``spec`` is ``(P,)`` for vector data or ``(P1, P2)`` for images.
    ``extents`` holds, per block, the inclusive 0-based ranges along each
    axis, e.g. ``((r0, r1), (c0, c1))`` for an image block.
    """

    spec: tuple[int, ...]
    shape: tuple[int, ...]
    blocks: tuple[ComponentSelector, ...]
    extents: tuple[tuple[tuple[int, int], ...], ...]
    structure_id: int = 0

    def __len__(self):
        return len(self.blocks)

    @property
    def label(self) -> str:
        return format_block_spec([self.spec])

    def with_id(self, sid: int) -> "BlockingStructure":
        return BlockingStructure(self.spec, self.shape, self.blocks, self.extents, sid)


@dataclass(frozen=True)
class BlockingPlan:
    structures: tuple[BlockingStructure, ...]

    def __post_init__(self):
        if not self.structures:
            raise ValidationError("a blocking plan needs at least one structure")
        specs = [s.spec for s in self.structures]
        if len(set(specs)) != len(specs):
            dup = next(s for s in specs if specs.count(s) > 1)
            raise ValidationError(f"duplicate blocking structure {dup} in plan")
        shapes = {s.shape for s in self.structures}
        if len(shapes) != 1:
            raise ValidationError("all structures in a plan must share one data shape")

    def __len__(self):
        return len(self.structures)

    def __iter__(self):
        return iter(self.structures)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.structures[0].shape

    @property
    def specs(self) -> list[tuple[int, ...]]:
        return [s.spec for s in self.structures]

    @property
    def total_blocks(self) -> int:
        return sum(len(s) for s in self.structures)


def axis_bounds(length: int, parts: int) -> list[tuple[int, int]]:
    """Inclusive 0-based ``(start, stop)`` ranges splitting ``length`` into ``parts``."""
    if not 1 <= parts <= length:
        raise ValidationError(f"number of blocks must be in [1, {length}], got {parts}")
    size = length // parts
    bounds = [(j * size, (j + 1) * size - 1) for j in range(parts - 1)]
    bounds.append(((parts - 1) * size, length - 1))
    return bounds


def make_blocks_1d(d: int, P: int) -> BlockingStructure:
    bounds = axis_bounds(d, P)
    blocks = tuple(ComponentSelector(np.arange(a, b + 1), d) for a, b in bounds)
    return BlockingStructure((P,), (d,), blocks, tuple(((a, b),) for a, b in bounds))


def make_blocks_2d(d1: int, d2: int, P1: int, P2: int) -> BlockingStructure:
    rows = axis_bounds(d1, P1)
    cols = axis_bounds(d2, P2)
    blocks, extents = [], []
    for r0, r1 in rows:
        for c0, c1 in cols:
            rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
            blocks.append(ComponentSelector(grid_to_flat(rr, cc, d2).ravel(), d1 * d2))
            extents.append(((r0, r1), (c0, c1)))
    return BlockingStructure((P1, P2), (d1, d2), tuple(blocks), tuple(extents))


def make_plan(shape: Sequence[int], specs: Sequence) -> BlockingPlan:
    """Build a plan for data ``shape`` from block-count specs.

    Duplicate specs are rejected since structures are weighted equally.
    """
    shape = tuple(int(s) for s in shape)
    structures = []
    for sid, spec in enumerate(specs):
        spec = (int(spec),) if np.isscalar(spec) else tuple(int(v) for v in spec)
        if len(spec) != len(shape):
            raise ValidationError(f"block spec {spec} does not match data shape {shape}")
        if len(shape) == 1:
            st = make_blocks_1d(shape[0], spec[0])
        else:
            st = make_blocks_2d(shape[0], shape[1], spec[0], spec[1])
        structures.append(st.with_id(sid))
    return BlockingPlan(tuple(structures))


def default_plan(shape: Sequence[int]) -> BlockingPlan:
    """Coarse-to-fine default plan.

    Vectors: ``P = (1, 4, 10, 20, 40)`` restricted to ``P <= d``. Images:
    the rows x columns grid ``(1,1), (4,6), (8,12), (16,24)``, with each
    count capped so blocks keep at least 2 pixels per side where the image
    allows; structures that collapse onto an earlier one are dropped.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 1:
        specs = [P for P in DEFAULT_1D if P <= shape[0]]
    elif len(shape) == 2:
        d1, d2 = shape
        specs = []
        for p1, p2 in DEFAULT_2D:
            spec = (min(p1, max(1, d1 // 2)), min(p2, max(1, d2 // 2)))
            if spec not in specs:
                specs.append(spec)
    else:
        raise ValidationError(f"unsupported shape {shape}")
    return make_plan(shape, specs)


_SPEC_RE = re.compile(r"^\d+(x\d+)?$")


def parse_block_spec(text: str) -> list[tuple[int, ...]]:
    """Parse ``"1,4,10"`` or ``"1x1,2x3,4x6"`` into a list of spec tuples."""
    specs = []
    for tok in text.replace(" ", "").split(","):
        if not tok:
            continue
        if not _SPEC_RE.match(tok):
            raise ValidationError(
                f"bad block spec {tok!r}; expected e.g. '1,4,10,20' or '1x1,2x3,4x6'"
            )
        specs.append(tuple(int(v) for v in tok.split("x")))
    if not specs:
        raise ValidationError("empty block spec")
    if len({len(s) for s in specs}) != 1:
        raise ValidationError("cannot mix 1-D and 2-D block specs")
    return specs


def format_block_spec(specs) -> str:
    return ",".join("x".join(str(v) for v in s) for s in specs)
