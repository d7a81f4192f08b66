"""Desk-scale conditional flow-matching model on 2D point data.

The velocity network has one modulated hidden layer::

    a     = W_in [x, c_img, c_txt] + b_in
    e     = temb(t) + W_task c_txt
    m     = a * (1 + W_sc e + b_sc) + (W_sh e + b_sh)
    v     = W_out silu(m) + b_out

Condition columns of ``W_in`` and the modulation weights start at zero, so a
freshly built model ignores both conditions until training moves them.
Gradients are written out by hand and checked against finite differences in
the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .flow import CfgWeights, Schedule, dropout_keep_masks, integrate
from .numcore import RngState, as_tensor, read_tsr, write_tsr

PARAM_NAMES = ("w_in", "b_in", "w_task", "w_sc", "b_sc", "w_sh", "b_sh", "w_out", "b_out")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def time_embedding(t, dim: int = 16, max_freq: float = 100.0) -> np.ndarray:
    """Sinusoidal features of t in [0, 1] at geometrically spaced frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = max_freq ** (np.arange(half) / max(half - 1, 1))
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass
class VelocityMlp:
    w_in: np.ndarray    # (H, x_dim + img_dim + txt_dim)
    b_in: np.ndarray    # (H,)
    w_task: np.ndarray  # (E, txt_dim)
    w_sc: np.ndarray    # (H, E)
    b_sc: np.ndarray    # (H,)
    w_sh: np.ndarray    # (H, E)
    b_sh: np.ndarray    # (H,)
    w_out: np.ndarray   # (x_dim, H)
    b_out: np.ndarray   # (x_dim,)
    x_dim: int = 2
    img_dim: int = 2
    txt_dim: int = 4

    @classmethod
    def init(
        cls, rng: RngState, x_dim: int = 2, img_dim: int = 2, txt_dim: int = 4,
        hidden: int = 64, emb_dim: int = 16,
    ) -> VelocityMlp:
        g = rng.generator()
        w_in = np.zeros((hidden, x_dim + img_dim + txt_dim))
        w_in[:, :x_dim] = g.normal(0.0, 1.0 / math.sqrt(x_dim), (hidden, x_dim))
        return cls(
            w_in=w_in,
            b_in=g.normal(0.0, 1.0, hidden),
            w_task=g.normal(0.0, 1.0 / math.sqrt(txt_dim), (emb_dim, txt_dim)),
            w_sc=np.zeros((hidden, emb_dim)),
            b_sc=np.zeros(hidden),
            w_sh=np.zeros((hidden, emb_dim)),
            b_sh=np.zeros(hidden),
            w_out=g.normal(0.0, 0.1 / math.sqrt(hidden), (x_dim, hidden)),
            b_out=np.zeros(x_dim),
            x_dim=x_dim, img_dim=img_dim, txt_dim=txt_dim,
        )

    @property
    def hidden(self) -> int:
        return self.w_in.shape[0]

    @property
    def emb_dim(self) -> int:
        return self.w_task.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> VelocityMlp:
        return replace(self, **{n: p.copy() for n, p in self.params().items()})


def _cond(c, batch: int, dim: int) -> np.ndarray:
    if c is None:
        return np.zeros((batch, dim))
    c = np.atleast_2d(as_tensor(c))
    if c.shape[1] != dim:
        raise ValueError(f"condition has {c.shape[1]} channels, model expects {dim}")
    return np.broadcast_to(c, (batch, dim))


def _forward(m: VelocityMlp, x, t, cond_image, cond_text):
    x = np.atleast_2d(as_tensor(x))
    b = x.shape[0]
    if x.shape[1] != m.x_dim:
        raise ValueError(f"x has {x.shape[1]} channels, model expects {m.x_dim}")
    ci = _cond(cond_image, b, m.img_dim)
    ct = _cond(cond_text, b, m.txt_dim)
    inp = np.concatenate([x, ci, ct], axis=1)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    e = time_embedding(t, m.emb_dim) + ct @ m.w_task.T
    a = inp @ m.w_in.T + m.b_in
    scale = 1.0 + e @ m.w_sc.T + m.b_sc
    shift = e @ m.w_sh.T + m.b_sh
    pre = a * scale + shift
    s = sigmoid(pre)
    h = pre * s
    out = h @ m.w_out.T + m.b_out
    return out, (inp, ct, e, a, scale, pre, s, h)


def forward(m: VelocityMlp, x, t, cond_image=None, cond_text=None) -> np.ndarray:
    """Velocity for a point (x_dim,) or batch (B, x_dim); ``None`` conditions are null."""
    out, _ = _forward(m, x, t, cond_image, cond_text)
    return out if np.ndim(x) == 2 else out[0]


@dataclass
class Batch:
    x_t: np.ndarray
    t: np.ndarray
    u: np.ndarray
    cond_image: np.ndarray
    cond_text: np.ndarray


def loss_and_grads(m: VelocityMlp, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared CFM loss and its exact gradient for every parameter."""
    out, (inp, ct, e, a, scale, pre, s, h) = _forward(
        m, batch.x_t, batch.t, batch.cond_image, batch.cond_text
    )
    diff = out - batch.u
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    g_out = 2.0 * diff / diff.size
    g_h = g_out @ m.w_out
    g_pre = g_h * (s * (1.0 + pre * (1.0 - s)))
    g_scale = g_pre * a
    g_e = g_scale @ m.w_sc + g_pre @ m.w_sh
    g_a = g_pre * scale
    grads = {
        "w_out": g_out.T @ h,
        "b_out": g_out.sum(0),
        "w_sc": g_scale.T @ e,
        "b_sc": g_scale.sum(0),
        "w_sh": g_pre.T @ e,
        "b_sh": g_pre.sum(0),
        "w_in": g_a.T @ inp,
        "b_in": g_a.sum(0),
        "w_task": g_e.T @ ct,
    }
    return loss, grads


def backward(m: VelocityMlp, batch: Batch) -> dict[str, np.ndarray]:
    return loss_and_grads(m, batch)[1]


def zero_init_extend(m: VelocityMlp, extra_input_dim: int) -> VelocityMlp:
    """Append ``extra_input_dim`` zero-weight image-condition channels."""
    if extra_input_dim < 0:
        raise ValueError("extra_input_dim must be non-negative")
    out = m.copy()
    if extra_input_dim == 0:
        return out
    cut = m.x_dim + m.img_dim
    zeros = np.zeros((m.hidden, extra_input_dim))
    out.w_in = np.concatenate([m.w_in[:, :cut], zeros, m.w_in[:, cut:]], axis=1)
    out.img_dim = m.img_dim + extra_input_dim
    return out


# -- data ---------------------------------------------------------------------

@dataclass(frozen=True)
class ToyDataset:
    means: tuple[tuple[float, float], ...]
    stds: tuple[float, ...]
    hint_std: float = 1.0

    def __post_init__(self) -> None:
        if len(self.means) != len(self.stds) or not self.means:
            raise ValueError("need one std per component")
        if any(s <= 0 for s in self.stds):
            raise ValueError("stds must be positive")

    @classmethod
    def two_gaussians(cls) -> ToyDataset:
        return cls(((-2.0, 0.0), (2.0, 0.0)), (0.3, 0.3))

    @property
    def num_classes(self) -> int:
        return len(self.means)

    def sample(self, g: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        labels = g.integers(0, self.num_classes, n)
        mu = np.asarray(self.means)[labels]
        sd = np.asarray(self.stds)[labels][:, None]
        return mu + sd * g.standard_normal((n, 2)), labels


def text_embedding(labels, txt_dim: int = 4) -> np.ndarray:
    """Fixed one-hot class embeddings standing in for pooled instruction features."""
    labels = np.atleast_1d(labels)
    if labels.max(initial=0) >= txt_dim:
        raise ValueError(f"class id {labels.max()} needs txt_dim > {txt_dim}")
    return np.eye(txt_dim)[labels]


def make_batch(g: np.random.Generator, data: ToyDataset, m: VelocityMlp, size: int, rng: RngState,
               drop_rates=(0.05, 0.05, 0.05)) -> Batch:
    x1, labels = data.sample(g, size)
    x0 = g.standard_normal((size, m.x_dim))
    t = g.random(size)
    x_t = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    hint = x1 + data.hint_std * g.standard_normal((size, 2))
    ci = np.zeros((size, m.img_dim))
    ci[:, :2] = hint
    ct = text_embedding(labels, m.txt_dim)
    keep_img, keep_txt = dropout_keep_masks(rng, size, drop_rates)
    return Batch(x_t, t, x1 - x0, ci * keep_img[:, None], ct * keep_txt[:, None])


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch_size: int = 128
    lr: float = 0.05
    drop_rates: tuple[float, float, float] = (0.05, 0.05, 0.05)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("steps, batch_size and lr must be positive")


def train(m: VelocityMlp, data: ToyDataset, cfg: TrainConfig) -> tuple[VelocityMlp, np.ndarray]:
    """Plain SGD on the CFM loss; returns the trained copy and the per-step loss."""
    m = m.copy()
    rng = RngState(cfg.seed, 1)
    g = RngState(cfg.seed, 0).generator()
    trace = np.empty(cfg.steps)
    for step in range(cfg.steps):
        batch = make_batch(g, data, m, cfg.batch_size, rng, cfg.drop_rates)
        rng = rng.next()
        try:
            loss, grads = loss_and_grads(m, batch)
        except FloatingPointError:
            raise FloatingPointError(f"training diverged at step {step}") from None
        trace[step] = loss
        for name, gr in grads.items():
            setattr(m, name, getattr(m, name) - cfg.lr * gr)
    return m, trace


def loss_reduction(trace: np.ndarray, window: float = 0.1) -> float:
    """Mean loss over the final window divided by the first step's loss."""
    k = max(1, int(len(trace) * window))
    return float(trace[-k:].mean() / trace[0])


def sample(
    m: VelocityMlp,
    n: int,
    label: Optional[int],
    cfg_w: Optional[CfgWeights],
    solver: str = "heun",
    schedule: Schedule = Schedule(30),
    rng: RngState = RngState(0),
    cond_image=None,
):
    """Draw ``n`` points by integrating guided velocities from Gaussian noise.

    Returns the integration result; ``.x`` holds the (n, 2) samples.
    """
    x0 = rng.generator().standard_normal((n, m.x_dim))
    ct = None if label is None else text_embedding(np.full(n, label), m.txt_dim)
    ci = None if cond_image is None else _cond(cond_image, n, m.img_dim)

    def field(x, t, c_img, c_txt):
        return forward(m, x, t, c_img, c_txt)

    return integrate(field, x0, schedule, solver, ci, ct, cfg_w)


def nearest_component(points, data: ToyDataset) -> np.ndarray:
    mu = np.asarray(data.means)
    return np.argmin(((points[:, None, :] - mu[None]) ** 2).sum(-1), axis=1)


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(m: VelocityMlp, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "pixkit.velocity_mlp",
        "x_dim": m.x_dim, "img_dim": m.img_dim, "txt_dim": m.txt_dim,
        "params": {n: f"{n}.tsr" for n in PARAM_NAMES},
    }
    for n, p in m.params().items():
        write_tsr(d / f"{n}.tsr", p)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory) -> VelocityMlp:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    arrays = {n: read_tsr(d / f) for n, f in manifest["params"].items()}
    return VelocityMlp(
        **arrays, x_dim=manifest["x_dim"], img_dim=manifest["img_dim"], txt_dim=manifest["txt_dim"]
    )
