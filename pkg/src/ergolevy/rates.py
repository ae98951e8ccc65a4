"""Rate exponents, regime classification, and schedule planning.

Everything here is deterministic arithmetic on schedule and measure
parameters: the convergence-rate exponent h(zeta) for polynomial steps, the
optimal exponent a scheme can reach for a stable-like jump measure, a planner
that picks (zeta, r, s, gamma1) for a requested scheme, and the bookkeeping
helpers (beta-ratio trajectories, deterministic exponent fits) that let tests
verify the arithmetic without Monte Carlo.

Conventions.  Steps are g_k = gamma1 k^(-zeta) with zeta in (0, 1].  The
error of the empirical measure behaves like n^(-h); h(zeta) peaks at
h(1/3) = 1/3 and zeta = 1 degrades to a sqrt(gamma1 log n) rate.  Scheme P
pays a truncation bias of moment order s = 2; scheme W is charged at s = 3,
or s = 4 when the measure is quasi-symmetric near the origin (its odd third
moments vanish, so the next even order governs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .levy import LevyMeasure
from .scheme import Schedule, complexity_guard, default_s_order

__all__ = [
    "StepRate",
    "h_of_zeta",
    "classify_regime",
    "optimal_exponent",
    "RatePlan",
    "InfeasibleScheduleError",
    "recommended_schedule",
    "min_zeta_for_low_moment_clt",
    "beta_ratio_diagnostics",
    "fit_deterministic_exponent",
]

#: horizon at which planner feasibility and acceptance checks are evaluated
PLAN_HORIZON = 10 ** 6

#: the planner keeps sup_k lambda_k gamma_k within this factor of step 1
PLAN_BUDGET_FACTOR = 1.05


class InfeasibleScheduleError(ValueError):
    """No (zeta, r) satisfies the requested rate and complexity jointly."""


class StepRate(NamedTuple):
    """Rate exponent for a polynomial step schedule, with the zeta = 1 flag."""

    exponent: float
    note: str | None = None


def h_of_zeta(zeta: float) -> StepRate:
    """Error exponent for steps g_k = gamma1 k^(-zeta).

    Increases as zeta up to 1/3, decreases as (1 - zeta)/2 beyond, and
    collapses at zeta = 1 where only a sqrt(gamma1 log n) rate survives
    (exponent 0 with an explanatory note).
    """
    zeta = float(zeta)
    if not 0.0 < zeta <= 1.0:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    if zeta == 1.0:
        return StepRate(0.0, "rate sqrt(gamma1 log n)")
    if zeta < 1.0 / 3.0:
        return StepRate(zeta)
    return StepRate((1.0 - zeta) / 2.0)


def classify_regime(zeta: float, gamma1: float = 1.0) -> tuple[str, float]:
    """Regime of sqrt(Gamma_n)-scaled errors, from lim Gamma2_n / sqrt(Gamma_n).

    For polynomial steps the limit is 0 when zeta > 1/3 (clean CLT), the
    finite constant sqrt(6 gamma1^3) at zeta = 1/3 (CLT around a bias), and
    infinite below 1/3 (only a probability limit).  Returns (label, limit).
    """
    zeta = float(zeta)
    if not 0.0 < zeta <= 1.0:
        raise ValueError(f"zeta must lie in (0, 1], got {zeta}")
    if zeta > 1.0 / 3.0:
        return "clt", 0.0
    if zeta == 1.0 / 3.0:
        return "biased-clt", math.sqrt(6.0 * float(gamma1) ** 3)
    return "probability-limit", math.inf


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    return alpha


def optimal_exponent(scheme_kind: str, alpha: float, quasi_symmetric: bool = False) -> float:
    """Best reachable error exponent for a stable-like measure of index alpha.

    P truncates and loses mass of order u^(2-alpha): best n^(-(2-alpha)/(4-alpha))
    once alpha > 1.  W replaces small jumps instead and is charged at moment
    order s (3, or 4 under quasi-symmetry): best n^(-(s-alpha)/(2s-alpha)).
    Both are capped by the scheme-free ceiling 1/3.
    """
    alpha = _check_alpha(alpha)
    if scheme_kind == "P":
        s = 2
    elif scheme_kind == "W":
        s = 4 if quasi_symmetric else 3
    else:
        raise ValueError(f"optimal_exponent applies to schemes P and W, got {scheme_kind!r}")
    return min(1.0 / 3.0, (s - alpha) / (2.0 * s - alpha))


@dataclass(frozen=True)
class RatePlan:
    """Resolved schedule recipe for one scheme.

    exponent is the predicted rate h (error ~ n^(-h)); regime labels the
    sqrt(Gamma_n)-scaled limit law; complexity_ok certifies the jump budget
    sup_k lambda_k gamma_k stayed within the planner's corridor at the plan
    horizon.  gamma1 is part of the plan because the budget corridor, not
    the rate, dictates it.
    """

    scheme_kind: str
    s: int
    zeta: float
    r_threshold: float
    exponent: float
    regime: str
    complexity_ok: bool
    gamma1: float = 1.0

    def schedule(self, u_cap: float | None = 1.0) -> Schedule:
        return Schedule(self.gamma1, self.zeta, self.r_threshold, u_cap)


def _budget_gamma1(
    measure: LevyMeasure, zeta: float, r: float, u_cap: float | None, horizon: int
) -> tuple[float, bool]:
    """Largest gamma1 in {2^-j} keeping the exact jump budget in corridor.

    The corridor demands sup_{k <= horizon} lambda_k gamma_k at most
    PLAN_BUDGET_FACTOR times its k = 1 value.  Even with r alpha = 1 the
    product creeps upward by a constant factor as thresholds leave the outer
    tail band, so gamma1 = 1 generally fails; shrinking gamma1 shrinks u_1
    and with it the creep, and a halving search finds the first power of two
    that fits.
    """
    for j in range(0, 60):
        g1 = 0.5 ** j
        sched = Schedule(g1, zeta, r, u_cap)
        k = np.arange(1, horizon + 1, dtype=float)
        lam_gamma = np.asarray(measure.tail_mass(sched.threshold(k))) * sched.gamma(k)
        if float(lam_gamma.max()) <= PLAN_BUDGET_FACTOR * float(lam_gamma[0]):
            return g1, True
    return 0.5 ** 59, False


def recommended_schedule(
    scheme_kind: str,
    measure: LevyMeasure | None = None,
    *,
    alpha: float | None = None,
    q: float | None = None,
    quasi_symmetric: bool | None = None,
    gamma1: float | None = None,
    u_cap: float | None = 1.0,
    horizon: int = PLAN_HORIZON,
) -> RatePlan:
    """Pick (s, zeta, r, gamma1) for a scheme from the measure's local traits.

    Stable-like measures (activity index alpha known) get
    zeta = max(1/3, alpha/(2s - alpha)) and r = 1/alpha: the feasible band
    for r is [1/(s - alpha), 1/alpha], and when it is empty (P with
    alpha > 1, W with s = 3 and alpha > 3/2) the complexity endpoint 1/alpha
    is kept at the cost of the degraded exponent.  Measures that are merely
    q-integrable near 0 run at zeta = 1/3 with r = 1/q (r = 1/s for finite
    activity, q = 0); P cannot reach the 1/3 regime once q > 1, which is
    reported as infeasible rather than silently degraded.

    When the measure instance is available, gamma1 is fixed by the exact
    jump-budget search (see _budget_gamma1) unless passed explicitly.
    """
    if scheme_kind not in ("P", "W"):
        raise ValueError(f"recommended_schedule plans schemes P and W, got {scheme_kind!r}")
    if measure is not None:
        if alpha is None:
            alpha = measure.activity_index
        if q is None and alpha is None:
            q = measure.variation_order
        if quasi_symmetric is None:
            quasi_symmetric = measure.is_quasi_symmetric_near_zero
    quasi_symmetric = bool(quasi_symmetric)

    if scheme_kind == "P":
        s = 2
    else:
        s = 4 if quasi_symmetric else 3

    if alpha is not None:
        alpha = _check_alpha(alpha)
        zeta = max(1.0 / 3.0, alpha / (2.0 * s - alpha))
        r = 1.0 / alpha
        exponent = optimal_exponent(scheme_kind, alpha, quasi_symmetric)
    elif q is not None:
        q = float(q)
        if q < 0 or q > 2:
            raise ValueError(f"integrability order q must lie in [0, 2], got {q}")
        if 2.0 * q > s:
            raise InfeasibleScheduleError(
                f"scheme {scheme_kind} with s = {s} cannot hold the 1/3 rate for "
                f"q = {q}: the feasible band [1/(s-q), 1/q] = "
                f"[{1.0 / (s - q):.4g}, {1.0 / q:.4g}] is empty"
            )
        zeta = 1.0 / 3.0
        r = (1.0 / q) if q > 0 else (1.0 / s)
        exponent = 1.0 / 3.0
    else:
        raise ValueError("planning requires alpha, q, or a measure carrying those traits")

    regime, _ = classify_regime(zeta)

    complexity_ok = True
    if gamma1 is None:
        if measure is not None:
            gamma1, complexity_ok = _budget_gamma1(measure, zeta, r, u_cap, horizon)
        else:
            gamma1 = 1.0
            index = alpha if alpha is not None else q
            complexity_ok = r * float(index) <= 1.0 + 1e-12
    elif measure is not None:
        guard = complexity_guard(Schedule(gamma1, zeta, r, u_cap), measure, horizon)
        complexity_ok = not guard.violated

    return RatePlan(
        scheme_kind=scheme_kind,
        s=s,
        zeta=zeta,
        r_threshold=r,
        exponent=exponent,
        regime=regime,
        complexity_ok=complexity_ok,
        gamma1=float(gamma1),
    )


def min_zeta_for_low_moment_clt(a: float, r: float, p: float) -> float:
    """Smallest step exponent keeping the CLT under weak reversion.

    ``a`` is the mean-reversion exponent, ``r`` the coefficient growth
    exponent, ``p`` the available moment order (in (1, 2]).  Strong reversion
    (a = 1) allows the optimal zeta = 1/3; below it the admissible band
    shrinks to zeta > (p + 2 eta)/(3p + 2 eta) with eta = max(a, 2r).
    """
    a = float(a)
    r = float(r)
    p = float(p)
    if not 0.0 < a <= 1.0:
        raise ValueError(f"reversion exponent a must lie in (0, 1], got {a}")
    if r < 0:
        raise ValueError(f"growth exponent r must be nonnegative, got {r}")
    if not 1.0 < p <= 2.0:
        raise ValueError(f"moment order p must lie in (1, 2], got {p}")
    if a == 1.0:
        return 1.0 / 3.0
    eta = max(a, 2.0 * r)
    return (p + 2.0 * eta) / (3.0 * p + 2.0 * eta)


@dataclass(frozen=True)
class BetaRatioTrajectory:
    """beta_n^(s) measured against the two CLT normalizers."""

    ns: np.ndarray
    beta_over_gamma2: np.ndarray
    beta_over_sqrt_gamma: np.ndarray


def beta_ratio_diagnostics(
    schedule: Schedule,
    measure: LevyMeasure,
    s: int,
    horizon: int,
    checkpoints: np.ndarray | None = None,
) -> BetaRatioTrajectory:
    """Trajectories of beta_n^(s)/Gamma2_n and beta_n^(s)/sqrt(Gamma_n).

    Their limits (zero, finite, infinite) sort a schedule into the regimes
    where the truncation bias is negligible, merely bounded, or dominant.
    """
    horizon = int(horizon)
    tab = schedule.tables(horizon, measure, "P", s_order=int(s))
    if checkpoints is None:
        checkpoints = np.unique(
            np.geomspace(1, horizon, num=200).astype(np.int64)
        )
    sel = np.asarray(checkpoints, dtype=np.int64) - 1
    return BetaRatioTrajectory(
        ns=sel + 1,
        beta_over_gamma2=tab.beta_s[sel] / tab.big_gamma2[sel],
        beta_over_sqrt_gamma=tab.beta_s[sel] / np.sqrt(tab.big_gamma[sel]),
    )


def fit_deterministic_exponent(
    schedule: Schedule,
    measure: LevyMeasure,
    scheme_kind: str,
    n_lo: int = 10 ** 4,
    n_hi: int = PLAN_HORIZON,
    num: int = 60,
    s_order: int | None = None,
) -> float:
    """OLS exponent of Gamma_n / max(sqrt(Gamma_n), Gamma2_n, beta_n^(s)).

    This ratio is the deterministic part of the error normalization: its
    growth exponent over [n_lo, n_hi] is the rate the schedule can deliver,
    and for planner output it must reproduce optimal_exponent.
    """
    if n_hi <= n_lo:
        raise ValueError("fit window must satisfy n_lo < n_hi")
    tab = schedule.tables(int(n_hi), measure, scheme_kind, s_order)
    ns = np.unique(np.geomspace(n_lo, n_hi, num=num).astype(np.int64))
    sel = ns - 1
    denom = np.maximum(
        np.sqrt(tab.big_gamma[sel]),
        np.maximum(tab.big_gamma2[sel], tab.beta_s[sel]),
    )
    ratio = tab.big_gamma[sel] / denom
    slope = np.polyfit(np.log(ns.astype(float)), np.log(ratio), 1)[0]
    return float(slope)
