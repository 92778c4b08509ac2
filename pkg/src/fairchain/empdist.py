"""Empirical distribution functions and the randomized probability integral transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePairError

_TWO_53 = float(2**53)


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Step-function CDF of a sample.

    ``cdf_steps[i]`` is the fraction of the sample that is ``<= sorted_support[i]``.
    The last step is exactly 1 because it is computed as ``n / n``.
    """

    sorted_support: np.ndarray
    cdf_steps: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.sorted_support, dtype=np.float64)
        steps = np.asarray(self.cdf_steps, dtype=np.float64)
        if support.ndim != 1 or support.shape != steps.shape or support.size == 0:
            raise ValueError("support and steps must be equal-length non-empty vectors")
        if np.any(np.diff(support) <= 0) or np.any(np.diff(steps) <= 0):
            raise ValueError("support and steps must be strictly increasing")
        if steps[0] <= 0 or steps[-1] != 1.0:
            raise ValueError("cdf steps must lie in (0, 1] and end at 1")
        for name, a in (("sorted_support", support), ("cdf_steps", steps)):
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def cdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        idx = np.searchsorted(self.sorted_support, v, side="right")
        out = np.where(idx > 0, self.cdf_steps[np.maximum(idx - 1, 0)], 0.0)
        return out if out.ndim else float(out)

    def quantile(self, u):
        return quantile(self, u)

    def to_dict(self) -> dict:
        return {"support": self.sorted_support.tolist(), "steps": self.cdf_steps.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalDistribution":
        return cls(np.array(d["support"], dtype=np.float64), np.array(d["steps"], dtype=np.float64))


def ecdf(values) -> EmpiricalDistribution:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("ecdf of an empty sample")
    if not np.all(np.isfinite(values)):
        raise ValueError("ecdf requires finite values")
    support, counts = np.unique(values, return_counts=True)
    return EmpiricalDistribution(support, np.cumsum(counts) / values.size)


def quantile(dist: EmpiricalDistribution, u):
    """Left-continuous generalized inverse ``inf{v : F(v) >= u}``; ``u = 0`` gives the minimum."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(~((u >= 0) & (u <= 1))):
        raise ValueError("quantile levels must lie in [0, 1]")
    idx = np.searchsorted(dist.cdf_steps, u, side="left")
    out = dist.sorted_support[idx]
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DiscreteCdfPair:
    lower: float
    upper: float


def open_uniform(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1) with 53-bit resolution."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) / _TWO_53


def randomized_pit(pair: DiscreteCdfPair, rng: np.random.Generator) -> float:
    if not 0.0 <= pair.lower <= pair.upper <= 1.0:
        raise ValueError(f"invalid cdf pair {pair}")
    if pair.lower == pair.upper:
        raise DegeneratePairError(
            f"observed value has zero probability (F(x-) = F(x) = {pair.lower})"
        )
    width = pair.upper - pair.lower
    return float(pair.lower + width * open_uniform(rng))


def randomized_pit_many(lower, upper, rng: np.random.Generator) -> np.ndarray:
    """Vectorised draw of ``Uniform(lower_i, upper_i)``, one uniform per row in row order.

    Pairs that collapsed in floating point (a positive but sub-ulp mass near
    1) return their common endpoint instead of raising.
    """
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if np.any(upper < lower) or np.any(lower < 0) or np.any(upper > 1):
        raise ValueError("invalid cdf pairs")
    u = lower + (upper - lower) * open_uniform(rng, size=lower.shape)
    # the product can round onto the upper endpoint; stay inside the interval
    return np.minimum(u, upper)
