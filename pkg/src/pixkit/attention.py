"""Conditioning math of the generalist block: zero-gated three-source attention
and the task-aware dynamic token sampler with multi-hot Gumbel top-K selection.

All attention here is single-head; :func:`multi_head` loops over head slices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .anyres import RopeFreqs, apply_rope_2d
from .numcore import RngState, as_tensor, sample_gumbel, softmax


@dataclass
class GateParams:
    alpha_text: float = 0.0
    alpha_cimg: float = 0.0


@dataclass
class AttnInputs:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    k_text: np.ndarray
    v_text: np.ndarray
    k_cimg: np.ndarray
    v_cimg: np.ndarray
    positions: np.ndarray

    def __post_init__(self) -> None:
        for name in ("q", "k", "v", "k_text", "v_text", "k_cimg", "v_cimg"):
            setattr(self, name, as_tensor(getattr(self, name)))
        d = self.q.shape[1]
        n = self.q.shape[0]
        if self.k.shape != (n, d) or self.v.shape != (n, d):
            raise ValueError("self-branch Q, K, V must all be (N_i, d)")
        for k, v, tag in ((self.k_text, self.v_text, "text"), (self.k_cimg, self.v_cimg, "image")):
            if k.ndim != 2 or k.shape != v.shape or k.shape[1] != d or k.shape[0] < 1:
                raise ValueError(f"{tag} keys/values must be (N, {d}) with N >= 1")
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 2)


def attend(q, k, v) -> np.ndarray:
    """softmax(q k^T / sqrt(d)) v, row-wise."""
    d = q.shape[1]
    return softmax(q @ k.T / np.sqrt(d), axis=-1) @ v


def _branches(inp: AttnInputs, freqs: RopeFreqs):
    q = apply_rope_2d(inp.q, inp.positions, freqs)
    k = apply_rope_2d(inp.k, inp.positions, freqs)
    return attend(q, k, inp.v), attend(q, inp.k_text, inp.v_text), attend(q, inp.k_cimg, inp.v_cimg)


def self_attention(inp: AttnInputs, freqs: RopeFreqs) -> np.ndarray:
    q = apply_rope_2d(inp.q, inp.positions, freqs)
    k = apply_rope_2d(inp.k, inp.positions, freqs)
    return attend(q, k, inp.v)


def gated_fusion(inp: AttnInputs, g: GateParams, freqs: RopeFreqs) -> np.ndarray:
    """Self-attention plus tanh-gated text and condition-image cross-attention.

    RoPE rotates the image queries and keys only; cross-branch keys are used
    as given.
    """
    own, text, cimg = _branches(inp, freqs)
    out = own
    # skip exact zeros so the zero-init output is bit-identical to self-attention
    if g.alpha_text != 0.0:
        out = out + np.tanh(g.alpha_text) * text
    if g.alpha_cimg != 0.0:
        out = out + np.tanh(g.alpha_cimg) * cimg
    return out


def gated_fusion_grad_alpha(inp: AttnInputs, g: GateParams, freqs: RopeFreqs):
    """(dA/d alpha_text, dA/d alpha_cimg), each of shape (N_i, d)."""
    _, text, cimg = _branches(inp, freqs)
    sech2 = lambda a: 1.0 - np.tanh(a) ** 2  # noqa: E731
    return sech2(g.alpha_text) * text, sech2(g.alpha_cimg) * cimg


def multi_head(fn, inp: AttnInputs, heads: int, *args) -> np.ndarray:
    """Apply a single-head function independently to each ``d / heads`` slice."""
    d = inp.q.shape[1]
    if d % heads:
        raise ValueError(f"{heads} heads do not divide d={d}")
    hd = d // heads
    outs = []
    for h in range(heads):
        s = slice(h * hd, (h + 1) * hd)
        sub = AttnInputs(
            inp.q[:, s], inp.k[:, s], inp.v[:, s],
            inp.k_text[:, s], inp.v_text[:, s],
            inp.k_cimg[:, s], inp.v_cimg[:, s],
            inp.positions,
        )
        outs.append(fn(sub, *args))
    return np.concatenate(outs, axis=1)


# -- task-aware dynamic sampler ---------------------------------------------

def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


@dataclass
class Mlp:
    """Two affine layers with a GELU in between."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2

    @classmethod
    def init(cls, rng: RngState, d_in: int, d_hidden: int, d_out: int) -> Mlp:
        g = rng.generator()
        return cls(
            g.normal(0, 1 / np.sqrt(d_in), (d_in, d_hidden)),
            np.zeros(d_hidden),
            g.normal(0, 1 / np.sqrt(d_hidden), (d_hidden, d_out)),
            np.zeros(d_out),
        )


@dataclass
class SamplerParams:
    mlp1: Mlp  # C -> C
    mlp2: Mlp  # C -> 1
    k: int
    temperature: float = 1.0

    @property
    def channels(self) -> int:
        return self.mlp1.w1.shape[0]

    @classmethod
    def init(cls, rng: RngState, channels: int, k: int, temperature: float = 1.0) -> SamplerParams:
        if channels % 2:
            raise ValueError("channel count must be even")
        r1, r2 = rng.split(2)
        return cls(
            Mlp.init(r1, channels, channels, channels),
            Mlp.init(r2, channels, channels // 2, 1),
            k,
            temperature,
        )


def score_tokens(x, task, p: SamplerParams) -> np.ndarray:
    """Per-token importance (N, 1) from local features plus a pooled global half."""
    x = as_tensor(x)
    n, c = x.shape
    if c % 2:
        raise ValueError(f"channel count {c} must be even")
    task = as_tensor(task).reshape(-1)
    if task.shape[0] != c:
        raise ValueError(f"task embedding has {task.shape[0]} channels, tokens have {c}")
    z = p.mlp1(x + task[None, :])
    z_local = z[:, : c // 2]
    z_global = z[:, c // 2 :].mean(axis=0, keepdims=True)
    z_cat = np.concatenate([z_local, np.repeat(z_global, n, axis=0)], axis=1)
    return p.mlp2(z_cat)


def _relaxed_topk(logits: np.ndarray, k: int) -> np.ndarray:
    """K rounds of softmax, each damping what earlier rounds already picked."""
    logits = logits.copy()
    weights = np.zeros_like(logits)
    for _ in range(k):
        # a token with p == 1 is suppressed to -inf; a clipped log would leave it
        # dominant whenever the logit spread exceeds ~690 (tiny temperatures)
        e = np.exp(logits - logits.max())
        p = e / e.sum()
        weights += p
        with np.errstate(divide="ignore"):
            logits = logits + np.log1p(-p)
    return weights


@dataclass(frozen=True)
class TokenSelection:
    hard: np.ndarray
    relaxed: np.ndarray

    @property
    def straight_through(self) -> np.ndarray:
        """Forward value of the straight-through estimator (hard values)."""
        return self.hard


def mhgs(scores, k: int, temperature: float, rng: RngState) -> TokenSelection:
    """Multi-hot Gumbel-softmax top-K.

    The logits are ``scores / temperature + gumbel``: a Gumbel top-K draw from
    ``softmax(scores / temperature)``. As the temperature falls the draw
    concentrates on the deterministic top-K of ``scores``.
    """
    m = as_tensor(scores).reshape(-1)
    n = m.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"K={k} outside [1, {n}]")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = m / temperature + sample_gumbel(rng, n)
    hard = np.zeros(n)
    # stable sort so equal logits keep the lower index
    hard[np.argsort(-logits, kind="stable")[:k]] = 1.0
    return TokenSelection(hard, _relaxed_topk(logits, k))


def mhgs_mask(scores, k: int, temperature: float, rng: RngState, mode: str = "hard") -> np.ndarray:
    sel = mhgs(scores, k, temperature, rng)
    if mode == "hard":
        return sel.hard
    if mode == "relaxed":
        return sel.relaxed
    raise ValueError(f"mode must be 'hard' or 'relaxed', got {mode!r}")


def apply_token_mask(x, mask) -> np.ndarray:
    x = as_tensor(x)
    mask = as_tensor(mask).reshape(-1)
    if mask.shape[0] != x.shape[0]:
        raise ValueError(f"mask length {mask.shape[0]} does not match {x.shape[0]} tokens")
    return x * mask[:, None]


def sample_condition_tokens(
    x, task, p: SamplerParams, rng: RngState, mode: str = "hard"
) -> tuple[np.ndarray, np.ndarray]:
    """Score, select and mask condition tokens; returns (masked tokens, mask)."""
    mask = mhgs_mask(score_tokens(x, task, p), p.k, p.temperature, rng, mode)
    return apply_token_mask(x, mask), mask


def attend_kept(q, k, v, keep: Optional[np.ndarray] = None) -> np.ndarray:
    """Cross-attention over only the kept key/value rows (physical removal)."""
    if keep is not None:
        keep = np.asarray(keep).reshape(-1) > 0
        k, v = k[keep], v[keep]
    return attend(q, k, v)
