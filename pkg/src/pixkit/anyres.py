"""Any-resolution support: token-grid candidates, bucketing and 2D rotary embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .numcore import RngState, as_tensor

RESOLUTION_CENTERS = (512**2, 768**2, 1024**2)
DEFAULT_ASPECT_RATIOS = (1 / 4, 1 / 3, 1 / 2, 3 / 4, 1.0, 4 / 3, 3 / 2, 2.0, 4.0)
PATCH_PX = 16
AREA_TOL = 0.15


@dataclass(frozen=True, order=True)
class PartitionCandidate:
    tokens_w: int
    tokens_h: int
    patch_px: int = PATCH_PX

    def __post_init__(self) -> None:
        if self.tokens_w < 1 or self.tokens_h < 1:
            raise ValueError("token counts must be positive")

    @property
    def tokens(self) -> int:
        return self.tokens_w * self.tokens_h

    @property
    def pixel_w(self) -> int:
        return self.tokens_w * self.patch_px

    @property
    def pixel_h(self) -> int:
        return self.tokens_h * self.patch_px

    @property
    def area(self) -> int:
        return self.tokens * self.patch_px**2


def candidate_set(
    centers: Sequence[int] = RESOLUTION_CENTERS,
    patch_px: int = PATCH_PX,
    aspect_ratios: Sequence[float] = DEFAULT_ASPECT_RATIOS,
) -> list[PartitionCandidate]:
    """Token grids near each center area for each width/height ratio."""
    if not centers:
        raise ValueError("no resolution centers given")
    if any(r <= 0 for r in aspect_ratios):
        raise ValueError("aspect ratios must be positive")
    out: list[PartitionCandidate] = []
    for area in centers:
        for r in aspect_ratios:
            th = max(1, round(math.sqrt(area / r) / patch_px))
            tw0 = max(1, round(r * th))
            # nudge the width until the pixel area is within tolerance
            for tw in sorted({tw0, tw0 - 1, tw0 + 1}, key=lambda v: abs(v - tw0)):
                if tw < 1:
                    continue
                if abs(tw * th * patch_px**2 - area) / area <= AREA_TOL:
                    cand = PartitionCandidate(tw, th, patch_px)
                    if cand not in out:
                        out.append(cand)
                    break
    if not out:
        raise ValueError("no candidate satisfies the area tolerance")
    return out


def _selection_key(w: int, h: int, c: PartitionCandidate) -> tuple[float, int, int]:
    return (
        abs(math.log((w / h) / (c.tokens_w / c.tokens_h))),
        abs(c.area - w * h),
        c.tokens,
    )


def select_partition(w: int, h: int, candidates: Sequence[PartitionCandidate]) -> PartitionCandidate:
    """Candidate whose aspect ratio best matches the image (ties: closest area, fewer tokens)."""
    if not candidates:
        raise ValueError("empty candidate list")
    return min(candidates, key=lambda c: _selection_key(w, h, c))


@dataclass(frozen=True)
class GridFit:
    width: int
    height: int
    offset_x: int
    offset_y: int
    pad_mask: np.ndarray = field(repr=False)

    @property
    def padded_tokens(self) -> int:
        return int(self.pad_mask.sum())

    @property
    def pad_fraction(self) -> float:
        return self.padded_tokens / self.pad_mask.size


def pad_and_grid(w: int, h: int, cand: PartitionCandidate) -> GridFit:
    """Fit the image into the candidate box preserving aspect ratio, centered.

    A token is padding iff its pixel cell holds no image pixel.
    """
    box_w, box_h = cand.pixel_w, cand.pixel_h
    s = min(box_w / w, box_h / h)
    sw = min(box_w, max(1, math.floor(w * s + 0.5)))
    sh = min(box_h, max(1, math.floor(h * s + 0.5)))
    ox, oy = (box_w - sw) // 2, (box_h - sh) // 2
    p = cand.patch_px
    cols = np.arange(cand.tokens_w) * p
    rows = np.arange(cand.tokens_h) * p
    col_hit = (cols + p > ox) & (cols < ox + sw)
    row_hit = (rows + p > oy) & (rows < oy + sh)
    pad = ~(row_hit[:, None] & col_hit[None, :])
    return GridFit(sw, sh, ox, oy, pad)


@dataclass
class BucketPlan:
    buckets: list[tuple[PartitionCandidate, list]]
    batches: list[list]
    batch_size: int
    padding_waste: float

    def to_json(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "padding_waste": self.padding_waste,
            "buckets": [
                {"tokens_w": c.tokens_w, "tokens_h": c.tokens_h, "patch_px": c.patch_px, "items": ids}
                for c, ids in self.buckets
            ],
            "batches": self.batches,
        }


def padding_waste(batches: Iterable[Sequence[tuple]], candidates: Sequence[PartitionCandidate]) -> float:
    """Fraction of padded token slots when each batch is padded to its longest sequence.

    Each item ``(id, w, h)`` occupies its own best-fitting grid; tokens outside
    the image inside that grid and slots beyond its length both count as waste.
    """
    slots = real = 0
    for batch in batches:
        if not batch:
            continue
        lengths, content = [], 0
        for _, w, h in batch:
            c = select_partition(w, h, candidates)
            lengths.append(c.tokens)
            content += c.tokens - pad_and_grid(w, h, c).padded_tokens
        slots += max(lengths) * len(batch)
        real += content
    return 0.0 if slots == 0 else 1.0 - real / slots


def bucket_batches(
    items: Sequence[tuple], candidates: Sequence[PartitionCandidate], batch_size: int, rng: RngState
) -> BucketPlan:
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    groups: dict[PartitionCandidate, list] = {}
    for item in items:
        _, w, h = item
        groups.setdefault(select_partition(w, h, candidates), []).append(item)
    g = rng.generator()
    buckets, batches = [], []
    for cand in sorted(groups):
        members = groups[cand]
        order = g.permutation(len(members))
        members = [members[i] for i in order]
        buckets.append((cand, [m[0] for m in members]))
        for i in range(0, len(members), batch_size):
            batches.append(members[i : i + batch_size])
    waste = padding_waste(batches, candidates)
    return BucketPlan(buckets, [[m[0] for m in b] for b in batches], batch_size, waste)


def random_batches(items: Sequence[tuple], batch_size: int, rng: RngState) -> list[list]:
    """Baseline: shuffle everything, then cut into fixed-size batches."""
    order = rng.generator().permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


# -- rotary embeddings --------------------------------------------------------

@dataclass(frozen=True)
class RopeFreqs:
    head_dim: int
    base: float
    scale: float
    freqs: np.ndarray = field(repr=False)


def ntk_rope_freqs(head_dim: int, base: float = 10000.0, scale: float = 1.0) -> RopeFreqs:
    """Rotary frequencies with the NTK-aware base ``base * scale**(d / (d - 2))``."""
    if head_dim % 2 or head_dim < 4:
        raise ValueError(f"head_dim must be even and at least 4, got {head_dim}")
    if base <= 1 or scale < 1:
        raise ValueError("need base > 1 and scale >= 1")
    ntk_base = base * scale ** (head_dim / (head_dim - 2))
    j = np.arange(head_dim // 2)
    return RopeFreqs(head_dim, base, scale, ntk_base ** (-2.0 * j / head_dim))


def apply_rope_2d(x, positions, freqs: RopeFreqs) -> np.ndarray:
    """Rotate adjacent channel pairs of ``x`` (tokens x head_dim) by 2D positions.

    The first half of the pairs rotates with the row index, the second half
    with the column index; each half uses ``freqs`` built for ``head_dim // 2``.
    """
    x = as_tensor(x)
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n, d = x.shape
    if d % 4:
        raise ValueError(f"head_dim {d} must be divisible by 4")
    if pos.shape[0] != n:
        raise ValueError(f"{pos.shape[0]} positions for {n} tokens")
    if freqs.freqs.shape[0] != d // 4:
        raise ValueError(f"expected per-axis freqs for head_dim {d // 2}, got {freqs.head_dim}")
    angles = np.concatenate(
        [pos[:, :1] * freqs.freqs[None, :], pos[:, 1:] * freqs.freqs[None, :]], axis=1
    )
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def grid_positions(rows: int, cols: int) -> np.ndarray:
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.stack([r, c], axis=1).astype(np.float64)
