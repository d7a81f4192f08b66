"""Deterministic numeric substrate shared by every other module.

Tensors are plain ``numpy.ndarray`` objects in float64. Randomness comes from
:class:`RngState`, an immutable (seed, stream) pair that keys a Philox4x64
counter-based generator, so a given state always reproduces the same draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

GUMBEL_CLAMP = 1e-12
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngState:
    """Immutable PRNG key.

    Every sampling call is a pure function of the state; callers move on with
    :meth:`next` (or :meth:`split`) instead of mutating anything.
    """

    seed: int = 0
    stream: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream <= _MASK64):
            raise ValueError("seed and stream must fit in 64 unsigned bits")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def next(self) -> RngState:
        return RngState(self.seed, (self.stream + 1) & _MASK64)

    def split(self, n: int) -> list[RngState]:
        """``n`` independent child states, none equal to ``self``."""
        base = self.generator().integers(0, 2**63, size=n, dtype=np.int64)
        return [RngState(self.seed ^ int(b), i) for i, b in enumerate(base)]


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def softmax(v, axis: int = -1) -> np.ndarray:
    v = as_tensor(v)
    if v.size == 0:
        raise ValueError("softmax of an empty tensor")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite")
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sample_gaussian(rng: RngState, shape) -> np.ndarray:
    return rng.generator().standard_normal(shape)


def sample_uniform(rng: RngState, shape) -> np.ndarray:
    return rng.generator().random(shape)


def sample_gumbel(rng: RngState, shape) -> np.ndarray:
    u = np.clip(rng.generator().random(shape), GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
    return -np.log(-np.log(u))


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x).copy()
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


# .tsr files: one JSON header line, then the little-endian float64 payload.

def write_tsr(path, x) -> None:
    x = as_tensor(x)
    header = json.dumps({"shape": list(x.shape), "dtype": "f64"}).encode() + b"\n"
    Path(path).write_bytes(header + x.astype("<f8").tobytes())


def read_tsr(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("dtype") != "f64":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    shape = tuple(int(s) for s in header["shape"])
    data = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError("payload size does not match header shape")
    return data.reshape(shape).astype(np.float64)
