"""Dynamic stochastic quantizer with a polynomially decaying lattice stepsize.

An input ``y`` is written as ``y = n*d + z`` with ``z`` in ``(0, d]`` and mapped to
``n*d`` with probability ``1 - z/d`` or to ``(n+1)*d`` with probability ``z/d``.
The output is unbiased and its variance is ``z*(d - z) <= d**2/4``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels


@dataclass(frozen=True)
class QuantSchedule:
    d0: float
    varsigma: float

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")
        if not 0.5 < self.varsigma < 1.0:
            raise ValueError(f"varsigma must lie in (1/2, 1), got {self.varsigma}")


@dataclass(frozen=True)
class QuantOutcome:
    support: tuple[float, float]
    probabilities: tuple[float, float]
    level: int  # lower lattice index n

    @property
    def mean(self) -> float:
        return sum(x * p for x, p in zip(self.support, self.probabilities))

    @property
    def variance(self) -> float:
        mu = self.mean
        return sum(p * (x - mu) ** 2 for x, p in zip(self.support, self.probabilities))


def _check(y: float, d: float) -> None:
    if not math.isfinite(y):
        raise ValueError(f"input must be finite, got {y}")
    if not (math.isfinite(d) and d > 0):
        raise ValueError(f"stepsize must be positive and finite, got {d}")


def decompose(y: float, d: float) -> tuple[int, float]:
    """Return ``(n, z)`` with ``y = n*d + z`` and ``0 < z <= d``."""
    _check(y, d)
    n = math.ceil(y / d) - 1
    z = y - n * d
    if z <= 0.0:
        n -= 1
        z += d
    elif z > d:
        n += 1
        z -= d
    return n, z


def stepsize(t: int, s: QuantSchedule) -> float:
    if t < 0:
        raise ValueError("round index must be nonnegative")
    return s.d0 / (t + 1) ** s.varsigma


def outcome_distribution(y: float, d: float) -> QuantOutcome:
    n, z = decompose(y, d)
    p_up = z / d
    return QuantOutcome(support=(n * d, (n + 1) * d), probabilities=(1.0 - p_up, p_up), level=n)


def quantize(y: float, d: float, stream: np.random.Generator) -> float:
    """Quantize one scalar, drawing exactly one uniform variate from ``stream``."""
    n, z = decompose(y, d)
    return (n + 1) * d if stream.random() < z / d else n * d


def quantize_vector(y, d: float, stream: np.random.Generator) -> np.ndarray:
    """Coordinate-wise quantization with ``len(y)`` independent variates, in order."""
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if not np.all(np.isfinite(y)):
        raise ValueError("input must be finite")
    _check(0.0, d)
    out = np.empty_like(y)
    if y.size:
        kernels.quantize_into(y, float(d), stream.random(y.size), out)
    return out


def lemma6_gap(y: float, y_prime: float, d: float) -> float:
    """Largest event-probability gap between the output laws of ``y`` and ``y_prime``.

    Exhaustive over every subset of the union support (at most four lattice points).
    Requires ``|y - y_prime| < d``; the result is then at most ``|y - y_prime| / d``.
    """
    if not abs(y - y_prime) < d:
        raise ValueError(f"|y - y'| = {abs(y - y_prime)} must be below the stepsize {d}")
    pmfs = []
    for x in (y, y_prime):
        out = outcome_distribution(x, d)
        pmfs.append({out.level: out.probabilities[0], out.level + 1: out.probabilities[1]})
    points = sorted(set(pmfs[0]) | set(pmfs[1]))
    gap = 0.0
    for r in range(len(points) + 1):
        for subset in itertools.combinations(points, r):
            p = sum(pmfs[0].get(k, 0.0) for k in subset)
            q = sum(pmfs[1].get(k, 0.0) for k in subset)
            gap = max(gap, abs(p - q))
    return gap
