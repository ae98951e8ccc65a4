"""Weighted empirical measures evaluated online against registered functions.

The estimator is nu_n(f) = (1/H_n) sum_k eta_k f(X_{k-1}) with H_n = sum eta_k;
points are charged before each step moves away from them.  Accumulators use
Neumaier compensated summation so millions of adds with decreasing weights do
not drift, and block updates add one compensated term per block (the inner dot
product is already accurate).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "TestFunction",
    "EmpiricalMeasure",
    "NormalizedError",
    "PoisonedAccumulatorError",
]


class PoisonedAccumulatorError(RuntimeError):
    """A registered test function produced a non-finite value."""


class _CompensatedSum:
    """Neumaier running sum: exact to one rounding of the final total."""

    __slots__ = ("_s", "_c")

    def __init__(self, value: float = 0.0, comp: float = 0.0):
        self._s = float(value)
        self._c = float(comp)

    def add(self, v: float) -> None:
        t = self._s + v
        if abs(self._s) >= abs(v):
            self._c += (self._s - t) + v
        else:
            self._c += (v - t) + self._s
        self._s = t

    @property
    def value(self) -> float:
        return self._s + self._c

    def copy(self) -> "_CompensatedSum":
        return _CompensatedSum(self._s, self._c)


@dataclass(frozen=True)
class TestFunction:
    """A test function f with an optional vectorized form and generator image.

    fn         : f on a single point, shape (d,) -> float
    vectorized : f on a block of points, shape (m, d) -> (m,); derived from
                 fn row by row when omitted
    generator_image : closed-form x -> Af(x) when known (drives the CLT
                 diagnostics; None otherwise)
    """

    __test__ = False  # "Test" prefix is domain vocabulary, not a pytest class

    fid: str
    fn: Callable[[np.ndarray], float]
    vectorized: Callable[[np.ndarray], np.ndarray] | None = None
    generator_image: Callable[[np.ndarray], float] | None = None

    def evaluate_block(self, xs: np.ndarray) -> np.ndarray:
        if self.vectorized is not None:
            return np.asarray(self.vectorized(xs), dtype=float)
        return np.array([float(self.fn(x)) for x in xs], dtype=float)


class EmpiricalMeasure:
    """Online weighted empirical measure over a registry of test functions.

    Optionally keeps a uniform reservoir sample of the visited points (for
    diagnostic histograms); the reservoir consumes only the RNG passed to the
    update calls, never the chain's path streams.
    """

    def __init__(
        self,
        functions: list[TestFunction] | tuple[TestFunction, ...] = (),
        reservoir_capacity: int = 0,
    ):
        self._functions: dict[str, TestFunction] = {}
        self._acc: dict[str, _CompensatedSum] = {}
        for f in functions:
            self.register(f)
        self._weight = _CompensatedSum()
        self._count = 0
        self._capacity = int(reservoir_capacity)
        self._reservoir: list[np.ndarray] = []

    def register(self, f: TestFunction) -> None:
        if f.fid in self._functions:
            raise ValueError(f"test function {f.fid!r} is already registered")
        self._functions[f.fid] = f
        self._acc[f.fid] = _CompensatedSum()

    @property
    def function_ids(self) -> tuple[str, ...]:
        return tuple(self._functions)

    def function(self, fid: str) -> TestFunction:
        if fid not in self._functions:
            raise KeyError(f"unknown test function {fid!r}")
        return self._functions[fid]

    @property
    def weight_mass(self) -> float:
        """H_n, the total weight charged so far."""
        return self._weight.value

    @property
    def point_count(self) -> int:
        return self._count

    def update(self, x: np.ndarray, weight: float) -> "EmpiricalMeasure":
        """Charge one point with the given positive weight."""
        if weight <= 0:
            raise ValueError("weight must be positive")
        for fid, f in self._functions.items():
            v = float(f.fn(x))
            if not np.isfinite(v):
                raise PoisonedAccumulatorError(
                    f"test function {fid!r} returned {v!r} at |x| = {float(np.linalg.norm(x)):.6g}"
                )
            self._acc[fid].add(weight * v)
        self._weight.add(float(weight))
        self._count += 1
        return self

    def update_block(
        self,
        xs: np.ndarray,
        weights: np.ndarray,
        reservoir_rng: np.random.Generator | None = None,
    ) -> "EmpiricalMeasure":
        """Charge a block of points; one compensated add per function.

        ``xs`` has shape (m, d) and ``weights`` shape (m,).  The block's inner
        sum is a dot product; only the block total enters the compensated
        accumulator, which keeps merge results and sequential passes within
        1e-12 of each other without a per-point Python loop.
        """
        xs = np.asarray(xs, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if xs.shape[0] != weights.shape[0]:
            raise ValueError("points and weights must have matching lengths")
        if xs.shape[0] == 0:
            return self
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        for fid, f in self._functions.items():
            vals = f.evaluate_block(xs)
            if not np.all(np.isfinite(vals)):
                i = int(np.argmin(np.isfinite(vals)))
                raise PoisonedAccumulatorError(
                    f"test function {fid!r} returned {vals[i]!r} "
                    f"at |x| = {float(np.linalg.norm(xs[i])):.6g}"
                )
            self._acc[fid].add(float(np.dot(weights, vals)))
        self._weight.add(float(weights.sum()))
        self._count += xs.shape[0]
        if self._capacity > 0 and reservoir_rng is not None:
            self._feed_reservoir(xs, reservoir_rng)
        return self

    def _feed_reservoir(self, xs: np.ndarray, rng: np.random.Generator) -> None:
        # classic algorithm-R, vectorized over the block: element with global
        # 1-based index m replaces a uniformly chosen slot with prob cap/m
        start = self._count - xs.shape[0]
        i = 0
        while len(self._reservoir) < self._capacity and i < xs.shape[0]:
            self._reservoir.append(xs[i].copy())
            i += 1
        if i >= xs.shape[0]:
            return
        idx = np.arange(start + i + 1, start + xs.shape[0] + 1)
        slots = (rng.random(idx.shape[0]) * idx).astype(np.int64)
        hit = slots < self._capacity
        for j, s in zip(np.nonzero(hit)[0], slots[hit]):
            self._reservoir[int(s)] = xs[i + j].copy()

    @property
    def reservoir(self) -> np.ndarray:
        """Snapshot of the retained diagnostic sample, shape (k, d)."""
        if not self._reservoir:
            return np.zeros((0, 0))
        return np.array(self._reservoir)

    def integrate(self, fid: str) -> float:
        """nu_n(f) = accumulator / H_n."""
        if fid not in self._acc:
            raise KeyError(f"unknown test function {fid!r}")
        h = self.weight_mass
        if h <= 0:
            raise ValueError("empirical measure is empty (H_n = 0)")
        return self._acc[fid].value / h

    def normalized_error(self, fid: str, target: float, big_gamma_n: float) -> "NormalizedError":
        """Raw and sqrt(Gamma_n)-scaled deviation from a known target."""
        raw = self.integrate(fid) - float(target)
        return NormalizedError(raw, np.sqrt(big_gamma_n) * raw)

    def merge(self, other: "EmpiricalMeasure") -> "EmpiricalMeasure":
        """Combine two measures over the same registry; self is unchanged."""
        if self.function_ids != other.function_ids:
            raise ValueError("cannot merge measures with different registries")
        out = EmpiricalMeasure(
            tuple(self._functions.values()), reservoir_capacity=self._capacity
        )
        for fid in self._acc:
            out._acc[fid] = self._acc[fid].copy()
            out._acc[fid].add(other._acc[fid].value)
        out._weight = self._weight.copy()
        out._weight.add(other._weight.value)
        out._count = self._count + other._count
        pooled = self._reservoir + other._reservoir
        out._reservoir = [p.copy() for p in pooled[: self._capacity]]
        return out


@dataclass(frozen=True)
class NormalizedError:
    raw_err: float
    sqrt_gamma_scaled: float
