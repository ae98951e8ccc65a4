"""Driving-noise increments for the three Euler schemes.

Each chain owns four independent RNG streams derived from (master seed,
replica index, role): one for the Brownian innovations, one for the jump
part (Poisson counts and jump uniforms), one for the small-jump Gaussian
substitute, and one reserved for diagnostic reservoir sampling.  Splitting
by role is what makes the schemes couple exactly: schemes sharing a master
seed consume the gaussian and jump streams identically, and the wiener
correction reads only its own stream, so path differences reduce to the
correction term alone.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .levy import FiniteActivityMeasure, LevyMeasure

__all__ = [
    "StreamRole",
    "derive_stream",
    "InnovationLaw",
    "IncrementSample",
    "ComplexityGuardError",
    "UnsupportedSchemeError",
    "sample_truncated_increment",
    "sample_exact_increment",
    "sample_wiener_correction",
    "POISSON_MEAN_CAP",
]

# Hard cap on the expected jump count of a single step.  A schedule that asks
# for more is misconfigured (complexity is meant to stay linear in n).
POISSON_MEAN_CAP = 1e9


class ComplexityGuardError(ValueError):
    """A step would require an unreasonable expected number of jumps."""


class UnsupportedSchemeError(ValueError):
    """The requested scheme cannot be driven by the given measure."""


class StreamRole(enum.IntEnum):
    """Sub-stream identities within one replica.

    Jump counts and jump sizes use separate streams so that drawing a block
    of counts followed by a block of sizes consumes each stream exactly as a
    step-by-step simulation would.
    """

    GAUSS = 0
    JUMP_COUNT = 1
    JUMP_SIZE = 2
    WIENER = 3
    RESERVOIR = 4


def derive_stream(master_seed: int, replica: int, role: StreamRole) -> np.random.Generator:
    """Counter-based stream for (master seed, replica, role).

    The Philox key is the pair (master_seed mod 2^64, replica * 8 + role):
    distinct keys give statistically independent streams, and the derivation
    is a documented pure function of its inputs, so any replica can be
    reproduced in isolation.
    """
    if replica < 0:
        raise ValueError("replica index must be nonnegative")
    key = [int(master_seed) % (2 ** 64), int(replica) * 8 + int(role)]
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class InnovationLaw:
    """Innovation distribution: mean zero, identity covariance, zero third moments.

    kinds:
      gaussian            - standard normal coordinates
      rademacher-product  - independent +-1 coordinates (product measure);
                            cheaper, satisfies the same moment constraints
    """

    kind: str = "gaussian"
    dim: int = 2

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher-product"):
            raise ValueError(f"unknown innovation law kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw innovations, shape (dim,) or (size, dim).

        Consumption contract: one normal (or one uniform) per coordinate,
        row-major, so block draws and repeated single draws read the stream
        identically.
        """
        shape = (self.dim,) if size is None else (int(size), self.dim)
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        return np.where(rng.random(shape) < 0.5, -1.0, 1.0)


@dataclass
class IncrementSample:
    """Noise bundle for one Euler step.

    gaussian_part     : sqrt(gamma) * U, the Brownian innovation (before the
                        diffusion coefficient is applied)
    jump_part         : compensated jump-component increment over the step
    wiener_correction : sqrt(gamma) * Q @ Lambda; zero vector for schemes E/P
    jump_count        : number of jumps drawn this step
    """

    gaussian_part: np.ndarray
    jump_part: np.ndarray
    wiener_correction: np.ndarray
    jump_count: int


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if gamma < 0 or not math.isfinite(gamma):
        raise ValueError("step length gamma must be finite and nonnegative")
    return gamma


def check_jump_budget(mean: float) -> float:
    """Refuse Poisson means beyond the hard complexity cap."""
    if mean > POISSON_MEAN_CAP:
        raise ComplexityGuardError(
            "complexity guard violated: expected jump count per step "
            f"{mean:.4g} exceeds the cap {POISSON_MEAN_CAP:.0e}"
        )
    return mean


def sample_truncated_increment(
    measure: LevyMeasure,
    gamma: float,
    u: float,
    rng: np.random.Generator,
    size_rng: np.random.Generator | None = None,
) -> IncrementSample:
    """Compensated compound-Poisson increment keeping jumps with |y| > u.

    Draws N ~ Poisson(tail_mass(u) * gamma), sums N jumps from the
    normalized restriction of the measure to {|y| > u}, and recentres by
    gamma * compensator_drift(u) so the increment has mean zero.

    ``size_rng`` holds the jump-size stream when counts and sizes are kept on
    separate streams (as the chain driver does); by default both come from
    ``rng``.
    """
    gamma = _check_gamma(gamma)
    lam = float(measure.tail_mass(u))
    mean = check_jump_budget(lam * gamma)
    n = int(rng.poisson(mean))
    if n:
        sizes = rng if size_rng is None else size_rng
        jump_sum = measure.sample_jump_above(u, sizes, size=n).sum(axis=0)
    else:
        jump_sum = np.zeros(measure.dim)
    jump = jump_sum - gamma * measure.compensator_drift(u)
    zero = np.zeros(measure.dim)
    return IncrementSample(zero, jump, zero.copy(), n)


def sample_exact_increment(
    measure: LevyMeasure,
    gamma: float,
    rng: np.random.Generator,
    size_rng: np.random.Generator | None = None,
) -> IncrementSample:
    """Exact jump-component increment over a step of length gamma.

    Finite-activity measures with mass bounded away from the origin reuse the
    truncated sampler with the threshold parked below the support, which
    discards nothing; measures carrying a plug-in exact sampler delegate to
    it.  Anything else cannot be simulated exactly.
    """
    gamma = _check_gamma(gamma)
    u_eff = exact_threshold(measure)
    if u_eff is not None:
        return sample_truncated_increment(measure, gamma, u_eff, rng, size_rng)
    if measure.exact_increment_sampler is not None:
        inc = np.asarray(measure.exact_increment_sampler(gamma, rng), dtype=float)
        zero = np.zeros(measure.dim)
        return IncrementSample(zero, inc, zero.copy(), 0)
    raise UnsupportedSchemeError(
        "exact increments are unavailable for an infinite-activity measure "
        "without a plug-in sampler; use scheme P (jump truncation) or "
        "scheme W (truncation with Gaussian small-jump substitution)"
    )


def exact_threshold(measure: LevyMeasure) -> float | None:
    """Threshold below the support for built-in exact simulation, or None."""
    if isinstance(measure, FiniteActivityMeasure) and measure.support_inner_radius > 0:
        return measure.support_inner_radius / 2.0
    return None


def sample_wiener_correction(
    q_factor: np.ndarray, gamma: float, law: InnovationLaw, rng: np.random.Generator
) -> np.ndarray:
    """sqrt(gamma) * Q @ Lambda, the Gaussian substitute for removed small jumps."""
    gamma = _check_gamma(gamma)
    q_factor = np.asarray(q_factor, dtype=float)
    if q_factor.ndim != 2 or q_factor.shape[0] != q_factor.shape[1]:
        raise ValueError("Q must be a square matrix")
    if q_factor.shape[0] != law.dim:
        raise ValueError(
            f"dimension mismatch: Q is {q_factor.shape[0]}x{q_factor.shape[1]} "
            f"but the innovation law has dim {law.dim}"
        )
    return math.sqrt(gamma) * (q_factor @ law.sample(rng))
