"""Pixel-space codecs that turn dense-prediction and grounding targets into RGB.

Array conventions (no wrapper classes):

* RGB image: ``uint8`` array of shape (H, W, 3)
* depth map: float64 (H, W), meters
* label map: integer (H, W) class ids
* normal map: float64 (H, W, 3), unit vectors
* binary mask: bool (H, W)
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .numcore import RngState

BLACK = (0, 0, 0)
WHITE = (255, 255, 255)


def _round_u8(v) -> np.ndarray:
    # round half up; numpy's rint rounds half to even
    return np.clip(np.floor(np.asarray(v, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def _check_rgb(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def _rgb_triple(color) -> tuple[int, int, int]:
    c = tuple(int(v) for v in color)
    if len(c) != 3 or not all(0 <= v <= 255 for v in c):
        raise ValueError(f"invalid rgb color {color!r}")
    return c


# -- depth ------------------------------------------------------------------

@dataclass(frozen=True)
class DepthCodecParams:
    d_min: float = 0.0
    d_max: float = 10.0

    def __post_init__(self) -> None:
        if not self.d_min < self.d_max:
            raise ValueError("d_min must be below d_max")

    @property
    def half_step(self) -> float:
        """Worst-case roundtrip error of the 8-bit quantizer."""
        return (self.d_max - self.d_min) / 510.0


def encode_depth(depth, p: DepthCodecParams) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    bad = ~((d >= p.d_min) & (d <= p.d_max))
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(
            f"depth {d[y, x]!r} at pixel (x={x}, y={y}) outside [{p.d_min}, {p.d_max}]"
            f" ({int(bad.sum())} offending pixels)"
        )
    v = _round_u8(255.0 * (d - p.d_min) / (p.d_max - p.d_min))
    return np.repeat(v[..., None], 3, axis=2)


def decode_depth(img, p: DepthCodecParams) -> np.ndarray:
    img = _check_rgb(img)
    level = img.astype(np.float64).mean(axis=2)
    d = p.d_min + level / 255.0 * (p.d_max - p.d_min)
    return np.clip(d, p.d_min, p.d_max)


# -- semantic labels --------------------------------------------------------

@dataclass(frozen=True)
class Palette:
    """Class-id to color table; class 0 is the black background."""

    entries: tuple[tuple[int, tuple[int, int, int]], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("palette is empty")
        ids = [i for i, _ in self.entries]
        colors = [_rgb_triple(c) for _, c in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate class id in palette")
        if len(set(colors)) != len(colors):
            raise ValueError("palette colors must be pairwise distinct")
        if 0 in ids and colors[ids.index(0)] != BLACK:
            raise ValueError("class 0 is reserved for black background")
        # canonical order: ascending class id, which the tie rule relies on
        object.__setattr__(
            self, "entries", tuple(sorted(zip(ids, colors), key=lambda e: e[0]))
        )

    @property
    def ids(self) -> np.ndarray:
        return np.array([i for i, _ in self.entries], dtype=np.int64)

    @property
    def colors(self) -> np.ndarray:
        return np.array([c for _, c in self.entries], dtype=np.float64)

    @classmethod
    def from_json(cls, obj) -> Palette:
        return cls(tuple((int(e["id"]), tuple(e["rgb"])) for e in obj))

    def to_json(self) -> list[dict]:
        return [{"id": i, "rgb": list(c)} for i, c in self.entries]

    @classmethod
    def random(cls, rng: RngState, num_classes: int) -> Palette:
        """Background plus ``num_classes - 1`` distinct random colors."""
        g = rng.generator()
        colors = {BLACK}
        entries = [(0, BLACK)]
        while len(entries) < num_classes:
            c = tuple(int(v) for v in g.integers(0, 256, size=3))
            if c not in colors:
                colors.add(c)
                entries.append((len(entries), c))
        return cls(tuple(entries))


def encode_labels(labels, pal: Palette) -> np.ndarray:
    labels = np.asarray(labels)
    lut = {i: c for i, c in pal.entries}
    unknown = np.setdiff1d(np.unique(labels), pal.ids)
    if unknown.size:
        raise ValueError(f"labels not in palette: {unknown.tolist()}")
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    for i, c in lut.items():
        out[labels == i] = c
    return out


def decode_labels(img, pal: Palette) -> np.ndarray:
    img = _check_rgb(img).astype(np.float64)
    d2 = ((img[:, :, None, :] - pal.colors[None, None, :, :]) ** 2).sum(axis=-1)
    # argmin returns the first minimum; entries are sorted by class id
    return pal.ids[np.argmin(d2, axis=-1)]


# -- surface normals --------------------------------------------------------

def encode_normals(normals, tol: float = 1e-6) -> np.ndarray:
    n = np.asarray(normals, dtype=np.float64)
    norm = np.linalg.norm(n, axis=-1)
    bad = np.abs(norm - 1.0) > tol
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(f"non-unit normal at pixel (x={x}, y={y}): norm {norm[y, x]}")
    return _round_u8(255.0 * (n + 1.0) / 2.0)


def decode_normals(img, eps: float = 1e-8) -> np.ndarray:
    img = _check_rgb(img)
    n = 2.0 * img.astype(np.float64) / 255.0 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    # mid-gray decodes to ~0.004 per component; treat anything that short as degenerate
    degenerate = norm[..., 0] < max(eps, 2.0 * np.sqrt(3.0) / 255.0)
    out = n / np.where(norm > 0, norm, 1.0)
    out[degenerate] = (0.0, 0.0, 1.0)
    return out


# -- grounding: masks and boxes ---------------------------------------------

def mask_to_rgb(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    return np.repeat((m * 255).astype(np.uint8)[..., None], 3, axis=2)


def rgb_to_mask(img, threshold: float = 128) -> np.ndarray:
    return _check_rgb(img).astype(np.float64).mean(axis=2) >= threshold


def overlay_mask(img, mask, color, alpha: float = 0.5) -> np.ndarray:
    img = _check_rgb(img)
    m = np.asarray(mask, dtype=bool)
    if m.shape != img.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {img.shape[:2]}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    c = np.array(_rgb_triple(color), dtype=np.float64)
    out = img.copy()
    out[m] = _round_u8((1.0 - alpha) * img[m].astype(np.float64) + alpha * c)
    return out


def rgb_to_hsv(img) -> np.ndarray:
    """Vectorized RGB to HSV; hue in degrees [0, 360), s and v in [0, 1]."""
    x = _check_rgb(img).astype(np.float64) / 255.0
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    mx, mn = x.max(axis=-1), x.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(
        mx == r,
        ((g - b) / safe) % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta > 0, 60.0 * h, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def extract_mask_hsv(rendered, color, hue_tol: float = 18.0, sat_min: float = 0.3) -> np.ndarray:
    c = _rgb_triple(color)
    if max(c) == min(c):
        raise ValueError(f"target color {c} is gray and has no hue")
    target_h = colorsys.rgb_to_hsv(*(v / 255.0 for v in c))[0] * 360.0
    hsv = rgb_to_hsv(rendered)
    dh = np.abs(hsv[..., 0] - target_h) % 360.0
    dh = np.minimum(dh, 360.0 - dh)
    return (dh <= hue_tol) & (hsv[..., 1] >= sat_min)


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel box."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def validate(self, height: int, width: int) -> None:
        if not (0 <= self.x0 <= self.x1 < width and 0 <= self.y0 <= self.y1 < height):
            raise ValueError(f"{self} is not inside a {width}x{height} image")


def draw_bbox(img, b: BBox, color, thickness: int = 2) -> np.ndarray:
    img = _check_rgb(img)
    b.validate(*img.shape[:2])
    if thickness < 1:
        raise ValueError("thickness must be at least 1")
    if 2 * thickness >= min(b.width, b.height):
        raise ValueError(
            f"thickness {thickness} leaves no interior in a {b.width}x{b.height} box"
        )
    c = _rgb_triple(color)
    out = img.copy()
    t = thickness
    out[b.y0 : b.y0 + t, b.x0 : b.x1 + 1] = c
    out[b.y1 - t + 1 : b.y1 + 1, b.x0 : b.x1 + 1] = c
    out[b.y0 : b.y1 + 1, b.x0 : b.x0 + t] = c
    out[b.y0 : b.y1 + 1, b.x1 - t + 1 : b.x1 + 1] = c
    return out


def extract_bbox(rendered, color, tol: int = 0) -> BBox:
    img = _check_rgb(rendered).astype(np.int64)
    c = np.array(_rgb_triple(color), dtype=np.int64)
    hit = np.all(np.abs(img - c) <= tol, axis=-1)
    if not hit.any():
        raise ValueError("no box found")
    ys, xs = np.nonzero(hit)
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


# -- inpainting / outpainting masks ------------------------------------------

SHAPE_KINDS = ("circle", "rectangle", "freeform")


@dataclass(frozen=True)
class InpaintMaskSpec:
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    count: tuple[int, int] = (1, 4)
    area: tuple[float, float] = (0.4, 0.5)
    fill: str = "black"

    def __post_init__(self) -> None:
        if not self.shape_kinds or not set(self.shape_kinds) <= set(SHAPE_KINDS):
            raise ValueError(f"shape_kinds must be a non-empty subset of {SHAPE_KINDS}")
        lo, hi = self.area
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError("area fraction range must lie inside (0, 1)")
        if not 1 <= self.count[0] <= self.count[1]:
            raise ValueError("invalid count range")
        if self.fill not in ("black", "white"):
            raise ValueError("fill must be 'black' or 'white'")


def _disk(h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _dilate(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:] |= m[:-1]
    out[:-1] |= m[1:]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    return out


def _place_solid(g, kind: str, h: int, w: int, budget: int, blocked: np.ndarray):
    """A rectangle or disk of about ``budget`` pixels that does not touch ``blocked``."""
    for _ in range(50):
        if kind == "rectangle":
            aspect = np.exp(g.uniform(np.log(0.5), np.log(2.0)))
            rw = int(np.clip(round(np.sqrt(budget * aspect)), 1, w))
            rh = int(np.clip(round(budget / rw), 1, h))
            y0 = int(g.integers(0, h - rh + 1))
            x0 = int(g.integers(0, w - rw + 1))
            shape = np.zeros((h, w), dtype=bool)
            shape[y0 : y0 + rh, x0 : x0 + rw] = True
        else:
            r = np.sqrt(budget / np.pi)
            if 2 * r > min(h, w):
                r = min(h, w) / 2.0
            cy = g.uniform(r - 0.5, h - r - 0.5) if h > 2 * r else (h - 1) / 2.0
            cx = g.uniform(r - 0.5, w - r - 0.5) if w > 2 * r else (w - 1) / 2.0
            shape = _disk(h, w, cy, cx, r)
        if not (shape & blocked).any():
            return shape
    return None


def _brush_stroke(g, h: int, w: int, budget: int, current: np.ndarray) -> np.ndarray:
    """Random-walk stroke of round brush stamps, grown until ``budget`` new pixels."""
    radius = g.uniform(0.03, 0.08) * min(h, w) + 1.0
    y, x = g.uniform(0, h), g.uniform(0, w)
    angle = g.uniform(0, 2 * np.pi)
    stroke = np.zeros((h, w), dtype=bool)
    for _ in range(10_000):
        stroke |= _disk(h, w, y, x, radius)
        if int((stroke & ~current).sum()) >= budget:
            break
        angle += g.normal(0.0, 0.6)
        step = radius * 0.7
        y = float(np.clip(y + step * np.sin(angle), 0, h - 1))
        x = float(np.clip(x + step * np.cos(angle), 0, w - 1))
    return stroke


def gen_inpaint_mask(rng: RngState, h: int, w: int, spec: InpaintMaskSpec = InpaintMaskSpec()) -> np.ndarray:
    """Random inpainting mask made of circles, rectangles and brush strokes.

    Solid shapes never touch each other, so a rectangle-only mask decomposes
    into axis-aligned rectangles. Raises after 100 rejected attempts.
    """
    g = rng.generator()
    total = h * w
    lo, hi = spec.area
    for _ in range(100):
        target = g.uniform(lo, hi) * total
        n = int(g.integers(spec.count[0], spec.count[1] + 1))
        kinds = [spec.shape_kinds[int(g.integers(len(spec.shape_kinds)))] for _ in range(n)]
        mask = np.zeros((h, w), dtype=bool)
        ok = True
        for i, kind in enumerate(kinds):
            budget = int(round((target - mask.sum()) / (n - i)))
            if budget < 1:
                break
            if kind == "freeform":
                mask |= _brush_stroke(g, h, w, budget, mask)
            else:
                shape = _place_solid(g, kind, h, w, budget, _dilate(mask))
                if shape is None:
                    ok = False
                    break
                mask |= shape
        frac = mask.sum() / total
        if ok and lo <= frac <= hi:
            return mask
    raise ValueError(f"could not satisfy {spec} on a {w}x{h} canvas after 100 attempts")


def gen_outpaint_mask(rng: RngState, h: int, w: int, keep_frac_range=(0.25, 0.6)) -> tuple[np.ndarray, BBox]:
    """Mask everything outside a centered rectangle of random aspect ratio.

    Returns ``(mask, kept)`` where mask is True on pixels to be generated.
    """
    lo, hi = keep_frac_range
    if not 0.0 < lo <= hi <= 1.0:
        raise ValueError("keep fraction range must lie inside (0, 1]")
    g = rng.generator()
    keep = g.uniform(lo, hi)
    # kept width must be at least keep * w for the height to fit
    kw = int(g.integers(max(1, int(np.ceil(keep * w))), w + 1))
    kh = int(np.clip(round(keep * h * w / kw), 1, h))
    y0, x0 = (h - kh) // 2, (w - kw) // 2
    kept = BBox(x0, y0, x0 + kw - 1, y0 + kh - 1)
    mask = np.ones((h, w), dtype=bool)
    mask[kept.y0 : kept.y1 + 1, kept.x0 : kept.x1 + 1] = False
    return mask, kept


def extend_right_mask(h: int, w: int, frac: float) -> np.ndarray:
    if not 0.0 <= frac < 1.0:
        raise ValueError("frac must lie in [0, 1)")
    k = int(np.floor(frac * w + 0.5))
    mask = np.zeros((h, w), dtype=bool)
    if k:
        mask[:, w - k :] = True
    return mask


def apply_mask_fill(img, mask, fill: str = "black") -> np.ndarray:
    """Blank out masked pixels, producing the model input for inpainting."""
    img = _check_rgb(img)
    out = img.copy()
    out[np.asarray(mask, dtype=bool)] = WHITE if fill == "white" else BLACK
    return out


def blank_canvas(h: int, w: int, fill: str = "white") -> np.ndarray:
    if fill not in ("white", "black"):
        raise ValueError("fill must be 'white' or 'black'")
    return np.full((h, w, 3), 255 if fill == "white" else 0, dtype=np.uint8)
