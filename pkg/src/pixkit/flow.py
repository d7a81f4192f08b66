"""Conditional flow matching: linear paths, CFM loss, time grids, ODE solvers and
two-weight classifier-free guidance.

Time runs from noise at t=0 to data at t=1, so the path target is
``u = x1 - x0`` and sampling integrates forward from t=0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numcore import RngState, as_tensor

# f(x, t, cond_image, cond_text) -> velocity with the shape of x
VelocityField = Callable[[np.ndarray, float, Optional[np.ndarray], Optional[np.ndarray]], np.ndarray]

DROP_IMAGE, DROP_TEXT, DROP_BOTH = 0.05, 0.05, 0.05


@dataclass(frozen=True)
class PathSample:
    x0: np.ndarray
    x1: np.ndarray
    t: float
    x_t: np.ndarray
    u: np.ndarray


def make_path_sample(x0, x1, t) -> PathSample:
    x0, x1 = as_tensor(x0), as_tensor(x1)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ValueError("t must lie in [0, 1]")
    # per-sample t broadcasts over trailing axes
    tb = t_arr.reshape(t_arr.shape + (1,) * (x0.ndim - t_arr.ndim))
    return PathSample(x0, x1, t, (1.0 - tb) * x0 + tb * x1, x1 - x0)


def cfm_loss(v_pred, u) -> float:
    v_pred, u = as_tensor(v_pred), as_tensor(u)
    if v_pred.shape != u.shape:
        raise ValueError(f"shape mismatch: {v_pred.shape} vs {u.shape}")
    return float(np.mean((v_pred - u) ** 2))


def cfm_loss_grad(v_pred, u) -> np.ndarray:
    v_pred, u = as_tensor(v_pred), as_tensor(u)
    return 2.0 * (v_pred - u) / v_pred.size


@dataclass(frozen=True)
class Schedule:
    n_steps: int
    kind: str = "uniform"
    shift: float = 3.0

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.kind not in ("uniform", "shifted"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.shift <= 0:
            raise ValueError("shift must be positive")


def time_grid(s: Schedule) -> np.ndarray:
    u = np.arange(s.n_steps + 1) / s.n_steps
    if s.kind == "uniform":
        return u
    return (s.shift * u) / (1.0 + (s.shift - 1.0) * u)


@dataclass(frozen=True)
class CfgWeights:
    w_image: float = 1.5
    w_text: float = 7.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.w_image) and np.isfinite(self.w_text)):
            raise ValueError("guidance weights must be finite")


def cfg_velocity(e_uncond, e_img_only, e_full, w: CfgWeights) -> np.ndarray:
    e_uncond, e_img_only, e_full = (as_tensor(e) for e in (e_uncond, e_img_only, e_full))
    if not e_uncond.shape == e_img_only.shape == e_full.shape:
        raise ValueError("guidance branches must share a shape")
    # same combination as uncond + w_I (img - uncond) + w_T (full - img), written
    # as a weighted sum; zero weights are skipped so w=(1,1) returns e_full and
    # w=(1,0) returns e_img_only bit for bit
    terms = [(1.0 - w.w_image, e_uncond), (w.w_image - w.w_text, e_img_only), (w.w_text, e_full)]
    out = None
    for c, e in terms:
        if c == 0.0:
            continue
        term = e if c == 1.0 else c * e
        out = term if out is None else out + term
    return out


class CountingField:
    """Wraps a velocity field, counts raw evaluations and optionally applies guidance."""

    def __init__(self, field: VelocityField, cond_image=None, cond_text=None, cfg: CfgWeights | None = None):
        self.field = field
        self.cond_image = cond_image
        self.cond_text = cond_text
        self.cfg = cfg
        self.calls = 0

    def _eval(self, x, t, ci, ct) -> np.ndarray:
        self.calls += 1
        v = as_tensor(self.field(x, t, ci, ct))
        if v.shape != x.shape:
            raise ValueError(f"field returned shape {v.shape} for input {x.shape}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite velocity at t={t}")
        return v

    def __call__(self, x, t) -> np.ndarray:
        if self.cfg is None:
            return self._eval(x, t, self.cond_image, self.cond_text)
        return cfg_velocity(
            self._eval(x, t, None, None),
            self._eval(x, t, self.cond_image, None),
            self._eval(x, t, self.cond_image, self.cond_text),
            self.cfg,
        )


def step_euler(f, x, t, dt):
    return x + dt * f(x, t)


def step_heun(f, x, t, dt):
    k1 = f(x, t)
    k2 = f(x + dt * k1, t + dt)
    return x + dt / 2.0 * (k1 + k2)


def step_midpoint(f, x, t, dt):
    k1 = f(x, t)
    return x + dt * f(x + dt / 2.0 * k1, t + dt / 2.0)


SOLVERS = {"euler": step_euler, "heun": step_heun, "midpoint": step_midpoint}


@dataclass(frozen=True)
class IntegrationResult:
    x: np.ndarray
    nfe: int
    field_calls: int


def integrate(
    field: VelocityField,
    x0,
    schedule: Schedule,
    solver: str = "heun",
    cond_image=None,
    cond_text=None,
    cfg: CfgWeights | None = None,
) -> IntegrationResult:
    """Integrate dx/dt = field from t=0 to t=1 over the schedule's grid.

    ``nfe`` counts guided velocity evaluations; ``field_calls`` counts raw
    calls, three per evaluation when guidance is on.
    """
    try:
        step = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    counter = CountingField(field, cond_image, cond_text, cfg)
    evals = 0

    def f(x, t):
        nonlocal evals
        evals += 1
        return counter(x, t)

    ts = time_grid(schedule)
    x = as_tensor(x0)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        if not t1 > t0:
            raise ValueError("time grid must be strictly increasing")
        x = step(f, x, float(t0), float(t1 - t0))
    return IntegrationResult(x, evals, counter.calls)


def dropout_conditions(rng: RngState, cond_image, cond_text):
    """Null one or both conditions: 5% image only, 5% text only, 5% both."""
    u = float(rng.generator().random())
    if u < DROP_IMAGE:
        return None, cond_text
    if u < DROP_IMAGE + DROP_TEXT:
        return cond_image, None
    if u < DROP_IMAGE + DROP_TEXT + DROP_BOTH:
        return None, None
    return cond_image, cond_text


def dropout_keep_masks(rng: RngState, n: int, rates=(DROP_IMAGE, DROP_TEXT, DROP_BOTH)):
    """Vectorized form for a batch: boolean (keep_image, keep_text) arrays."""
    p_img, p_txt, p_both = rates
    u = rng.generator().random(n)
    drop_img_only = u < p_img
    drop_txt_only = (u >= p_img) & (u < p_img + p_txt)
    drop_both = (u >= p_img + p_txt) & (u < p_img + p_txt + p_both)
    return ~(drop_img_only | drop_both), ~(drop_txt_only | drop_both)
