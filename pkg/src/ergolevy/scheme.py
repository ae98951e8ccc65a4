"""Decreasing-step Euler recursions driven by exact or approximated jumps.

One step of the chain moves

    X_{n+1} = X_n + g_{n+1} b(X_n) + sqrt(g_{n+1}) sigma(X_n) U_{n+1}
                  + kappa(X_n) Zbar_{n+1}

where Zbar is the jump-component increment of the chosen scheme kind:

    E : exact increment of the driving process,
    P : compensated compound Poisson keeping jumps with |y| > u_{n+1},
    W : the P increment plus sqrt(g_{n+1}) Q_{n+1} Lambda_{n+1}, a Gaussian
        substitute restoring the discarded small-jump covariance.

The weighted empirical measure charges the PRE-step point X_n with weight
eta_{n+1} = g_{n+1}, so after n steps it integrates test functions against
(1/Gamma_n) sum_k g_k delta(X_{k-1}).

``step`` advances one step at a time and is the readable reference;
``run_chain`` simulates in vectorized blocks.  Both consume the per-role RNG
streams identically (see module increments), so they produce bit-identical
paths and either can check the other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .empirical import EmpiricalMeasure, TestFunction
from .increments import (
    InnovationLaw,
    StreamRole,
    check_jump_budget,
    derive_stream,
    exact_threshold,
    sample_exact_increment,
    sample_truncated_increment,
    sample_wiener_correction,
    UnsupportedSchemeError,
)
from .levy import LevyMeasure, small_jump_cov_factor

__all__ = [
    "SCHEME_KINDS",
    "SdeModel",
    "Schedule",
    "ScheduleTables",
    "ChainState",
    "RunRecord",
    "GuardReport",
    "DivergenceError",
    "step",
    "run_chain",
    "complexity_guard",
]

SCHEME_KINDS = ("E", "P", "W")

#: chain norm beyond which the run is declared divergent
DIVERGENCE_RADIUS = 1e12

#: relative threshold change that triggers refactorizing Q
Q_REFRESH_RTOL = 1e-3


class DivergenceError(RuntimeError):
    """The chain left the admissible region; carries step index and norm."""

    def __init__(self, n: int, norm: float):
        self.n = int(n)
        self.norm = float(norm)
        super().__init__(f"chain diverged at step n = {n}: |x| = {norm:.6g}")


def _check_scheme_kind(kind: str) -> str:
    if kind not in SCHEME_KINDS:
        raise ValueError(f"scheme kind must be one of {SCHEME_KINDS}, got {kind!r}")
    return kind


@dataclass
class SdeModel:
    """Coefficients and stability metadata of the target SDE.

    drift_b, diffusion_sigma, jump_coeff_kappa act on a single state point.
    ``diffusion_sigma = None`` means no Brownian part (no Gaussian innovations
    are drawn); ``jump_coeff_kappa = None`` with ``jump_coeff_scale = None``
    means the identity coefficient, and ``jump_coeff_scale`` covers the
    scalar-matrix case kappa(x) = c(x) I without a matrix product per step.

    The remaining fields record the mean-reversion/growth/moment exponents
    the stability theory is parameterized by, plus optional closed forms: a
    Lyapunov function and generator images Af for registered test-function
    ids.  They drive planners and diagnostics, not the recursion itself.
    """

    dim_d: int
    dim_l: int
    drift_b: Callable[[np.ndarray], np.ndarray]
    diffusion_sigma: Callable[[np.ndarray], np.ndarray] | None = None
    jump_coeff_kappa: Callable[[np.ndarray], np.ndarray] | None = None
    jump_coeff_scale: Callable[[np.ndarray], float] | None = None
    lyapunov_V: Callable[[np.ndarray], float] | None = None
    reversion_a: float = 1.0
    growth_r: float = 0.0
    moment_p: float = 2.0
    generator_Af: dict[str, Callable[[np.ndarray], float]] = field(default_factory=dict)
    model_id: str = ""

    def __post_init__(self):
        if self.dim_d < 1 or self.dim_l < 1:
            raise ValueError("state and noise dimensions must be positive")
        if self.jump_coeff_kappa is not None and self.jump_coeff_scale is not None:
            raise ValueError("give jump_coeff_kappa or jump_coeff_scale, not both")
        if (
            self.jump_coeff_kappa is None
            and self.jump_coeff_scale is None
            and self.dim_d != self.dim_l
        ):
            raise ValueError("identity jump coefficient requires dim_d == dim_l")

    def apply_kappa(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """kappa(x) @ z under whichever coefficient form is configured."""
        if self.jump_coeff_kappa is not None:
            return self.jump_coeff_kappa(x) @ z
        if self.jump_coeff_scale is not None:
            return self.jump_coeff_scale(x) * z
        return z


@dataclass(frozen=True)
class Schedule:
    """Polynomial step/threshold schedule g_k = gamma1 k^(-zeta), u_k = g_k^r.

    ``u_cap`` clips thresholds from above (the shipped power-law measure
    changes branch at |y| = 1, and thresholds above the inner branch only mix
    regimes).  All running sums are produced as arrays by ``tables``.
    """

    gamma1: float
    zeta: float
    r_threshold: float
    u_cap: float | None = 1.0

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise ValueError("gamma1 must be positive")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError("zeta must lie in (0, 1]")
        if not self.r_threshold > 0:
            raise ValueError("r_threshold must be positive")
        if self.u_cap is not None and not self.u_cap > 0:
            raise ValueError("u_cap must be positive when given")

    def gamma(self, k):
        """Step length at 1-based index k; vectorized."""
        return self.gamma1 * np.asarray(k, dtype=float) ** (-self.zeta)

    def threshold(self, k):
        """Truncation threshold at 1-based index k; vectorized."""
        u = self.gamma(k) ** self.r_threshold
        if self.u_cap is not None:
            u = np.minimum(u, self.u_cap)
        return u

    def tables(
        self,
        n_steps: int,
        measure: LevyMeasure | None = None,
        scheme_kind: str = "P",
        s_order: int | None = None,
    ) -> "ScheduleTables":
        return ScheduleTables.build(self, n_steps, measure, scheme_kind, s_order)


def default_s_order(scheme_kind: str, measure: LevyMeasure | None) -> int | None:
    """Moment order governing the truncation bias of the scheme kind."""
    if scheme_kind == "P":
        return 2
    if scheme_kind == "W":
        if measure is not None and measure.is_quasi_symmetric_near_zero:
            return 4
        return 3
    return None


@dataclass
class ScheduleTables:
    """Per-step arrays for k = 1..n, shared by every replica of a run.

    beta_s is the running sum of g_k * (truncated |y|^s moment at u_k) for
    the scheme's bias order s, identically zero for scheme E.  q_epoch maps
    each step to a factorization epoch: Q is refreshed only when u has moved
    by more than Q_REFRESH_RTOL relative since it was last computed.
    """

    n_steps: int
    scheme_kind: str
    s_order: int | None
    gamma: np.ndarray
    sqrt_gamma: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    lam_gamma: np.ndarray
    sup_lam_gamma: np.ndarray
    big_gamma: np.ndarray
    big_gamma2: np.ndarray
    beta_s: np.ndarray
    drift: np.ndarray | None
    q_epoch: np.ndarray | None
    epoch_u: np.ndarray | None
    _q_cache: dict[int, np.ndarray] = field(default_factory=dict)
    _measure: LevyMeasure | None = None

    @classmethod
    def build(
        cls,
        schedule: Schedule,
        n_steps: int,
        measure: LevyMeasure | None,
        scheme_kind: str,
        s_order: int | None = None,
    ) -> "ScheduleTables":
        _check_scheme_kind(scheme_kind)
        n_steps = int(n_steps)
        if n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if scheme_kind == "W" and measure is None:
            raise ValueError("scheme W tables require the measure")
        k = np.arange(1, n_steps + 1, dtype=float)
        gamma = schedule.gamma(k)
        if s_order is None:
            s_order = default_s_order(scheme_kind, measure)

        if scheme_kind == "E":
            if measure is None:
                raise ValueError("scheme E tables require the measure")
            u_eff = exact_threshold(measure)
            if u_eff is None and measure.exact_increment_sampler is None:
                raise UnsupportedSchemeError(
                    "exact increments are unavailable for an infinite-activity "
                    "measure without a plug-in sampler; use scheme P (jump "
                    "truncation) or scheme W (truncation with Gaussian "
                    "small-jump substitution)"
                )
            u = np.full(n_steps, u_eff if u_eff is not None else np.nan)
        else:
            u = schedule.threshold(k)

        if measure is not None and not (scheme_kind == "E" and exact_threshold(measure) is None):
            lam = np.asarray(measure.tail_mass(u), dtype=float)
        else:
            lam = np.zeros(n_steps)
        lam_gamma = lam * gamma
        if lam_gamma.size and lam_gamma[0] > 0:
            check_jump_budget(float(lam_gamma.max()))

        if scheme_kind != "E" and measure is not None and s_order is not None:
            beta_s = np.cumsum(gamma * np.asarray(measure.truncated_abs_moment(s_order, u)))
        else:
            beta_s = np.zeros(n_steps)

        drift = None
        if measure is not None and not measure.is_symmetric:
            if scheme_kind == "E" and exact_threshold(measure) is None:
                drift = None  # plug-in samplers compensate internally
            else:
                drift = compensator_drift_table(measure, u)
                if not np.any(drift):
                    drift = None

        q_epoch = None
        epoch_u = None
        if scheme_kind == "W":
            q_epoch, epoch_u = _threshold_epochs(u)

        return cls(
            n_steps=n_steps,
            scheme_kind=scheme_kind,
            s_order=s_order,
            gamma=gamma,
            sqrt_gamma=np.sqrt(gamma),
            u=u,
            lam=lam,
            lam_gamma=lam_gamma,
            sup_lam_gamma=np.maximum.accumulate(lam_gamma),
            big_gamma=np.cumsum(gamma),
            big_gamma2=np.cumsum(gamma * gamma),
            beta_s=beta_s,
            drift=drift,
            q_epoch=q_epoch,
            epoch_u=epoch_u,
            _measure=measure,
        )

    def q_factor(self, step_index: int) -> np.ndarray:
        """Q for 1-based step index, factored once per threshold epoch."""
        if self.q_epoch is None:
            raise ValueError("Q factors exist only for scheme W tables")
        e = int(self.q_epoch[step_index - 1])
        q = self._q_cache.get(e)
        if q is None:
            q = small_jump_cov_factor(self._measure.small_jump_cov(float(self.epoch_u[e])))
            self._q_cache[e] = q
        return q


def compensator_drift_table(measure: LevyMeasure, u: np.ndarray) -> np.ndarray:
    """compensator_drift evaluated per step, shape (n, dim).

    Thresholds decrease, so consecutive equal values are computed once.
    """
    out = np.empty((u.shape[0], measure.dim))
    last_u = None
    last_val = None
    for i, ui in enumerate(u):
        if ui != last_u:
            last_val = measure.compensator_drift(float(ui))
            last_u = ui
        out[i] = last_val
    return out


def _threshold_epochs(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Segment a nonincreasing threshold array into refresh epochs."""
    n = u.shape[0]
    q_epoch = np.empty(n, dtype=np.int64)
    epoch_u = []
    start = 0
    neg_u = -u  # ascending, so searchsorted applies
    while start < n:
        ref = u[start]
        epoch_u.append(ref)
        cut = ref * (1.0 - Q_REFRESH_RTOL)
        nxt = int(np.searchsorted(neg_u, -cut, side="right"))
        nxt = max(nxt, start + 1)
        q_epoch[start:nxt] = len(epoch_u) - 1
        start = nxt
    return q_epoch, np.asarray(epoch_u)


@dataclass
class Streams:
    """The per-replica RNG streams, one per role."""

    gauss: np.random.Generator
    jump_count: np.random.Generator
    jump_size: np.random.Generator
    wiener: np.random.Generator
    reservoir: np.random.Generator

    @classmethod
    def derive(cls, master_seed: int, replica: int) -> "Streams":
        return cls(
            gauss=derive_stream(master_seed, replica, StreamRole.GAUSS),
            jump_count=derive_stream(master_seed, replica, StreamRole.JUMP_COUNT),
            jump_size=derive_stream(master_seed, replica, StreamRole.JUMP_SIZE),
            wiener=derive_stream(master_seed, replica, StreamRole.WIENER),
            reservoir=derive_stream(master_seed, replica, StreamRole.RESERVOIR),
        )


@dataclass
class ChainState:
    """Mutable state of one chain: iterate, step count, streams, sums."""

    x: np.ndarray
    n: int
    scheme_kind: str
    streams: Streams
    schedule: Schedule
    tables: ScheduleTables
    empirical: EmpiricalMeasure
    cum_jumps: int = 0
    gauss_law: InnovationLaw | None = None
    wiener_law: InnovationLaw | None = None


def init_chain(
    model: SdeModel,
    measure: LevyMeasure,
    schedule: Schedule,
    scheme_kind: str,
    n_steps: int,
    test_functions: Sequence[TestFunction] = (),
    master_seed: int = 0,
    replica: int = 0,
    x0: np.ndarray | None = None,
    innovation_law: str = "gaussian",
    s_order: int | None = None,
    reservoir_capacity: int = 0,
    tables: ScheduleTables | None = None,
) -> ChainState:
    """Assemble a ready-to-step ChainState with derived streams."""
    _check_scheme_kind(scheme_kind)
    if measure.dim != model.dim_l:
        raise ValueError(
            f"measure dimension {measure.dim} does not match noise dimension {model.dim_l}"
        )
    if tables is None:
        tables = schedule.tables(n_steps, measure, scheme_kind, s_order)
    elif tables.scheme_kind != scheme_kind or tables.n_steps < n_steps:
        raise ValueError("supplied tables do not cover this scheme kind and horizon")
    x = np.zeros(model.dim_d) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (model.dim_d,):
        raise ValueError(f"x0 must have shape ({model.dim_d},)")
    law = InnovationLaw(innovation_law, model.dim_l)
    return ChainState(
        x=x,
        n=0,
        scheme_kind=scheme_kind,
        streams=Streams.derive(master_seed, replica),
        schedule=schedule,
        tables=tables,
        empirical=EmpiricalMeasure(tuple(test_functions), reservoir_capacity),
        gauss_law=law if model.diffusion_sigma is not None else None,
        wiener_law=law if scheme_kind == "W" else None,
    )


def step(chain: ChainState, model: SdeModel, measure: LevyMeasure) -> ChainState:
    """Advance the chain one step (reference implementation).

    Charges the pre-step point, draws the innovations role by role, applies
    the Euler update, and enforces the divergence guard.
    """
    tab = chain.tables
    k = chain.n + 1
    if k > tab.n_steps:
        raise ValueError(
            f"schedule tables cover {tab.n_steps} steps; rebuild with a larger horizon"
        )
    i = k - 1
    gamma = float(tab.gamma[i])
    sqrt_gamma = float(tab.sqrt_gamma[i])
    x = chain.x

    chain.empirical.update(x, gamma)

    new_x = x + gamma * model.drift_b(x)
    if model.diffusion_sigma is not None:
        gauss = sqrt_gamma * chain.gauss_law.sample(chain.streams.gauss)
        new_x = new_x + model.diffusion_sigma(x) @ gauss

    if chain.scheme_kind == "E":
        inc = sample_exact_increment(
            measure, gamma, chain.streams.jump_count, chain.streams.jump_size
        )
    else:
        inc = sample_truncated_increment(
            measure, gamma, float(tab.u[i]), chain.streams.jump_count, chain.streams.jump_size
        )
    z = inc.jump_part
    if chain.scheme_kind == "W":
        z = z + sample_wiener_correction(
            tab.q_factor(k), gamma, chain.wiener_law, chain.streams.wiener
        )
    new_x = new_x + model.apply_kappa(x, z)

    norm = float(np.linalg.norm(new_x))
    if not math.isfinite(norm) or norm > DIVERGENCE_RADIUS:
        raise DivergenceError(k, norm)

    chain.x = new_x
    chain.n = k
    chain.cum_jumps += inc.jump_count
    return chain


@dataclass
class RunRecord:
    """Checkpoint telemetry of one replica's run."""

    scheme_kind: str
    replica: int
    s_order: int | None
    ns: np.ndarray
    gamma_n: np.ndarray
    big_gamma: np.ndarray
    big_gamma2: np.ndarray
    beta_s: np.ndarray
    nu_hat: dict[str, np.ndarray]
    jumps_per_step: np.ndarray
    sup_lam_gamma: np.ndarray
    final_x: np.ndarray
    empirical: EmpiricalMeasure


def run_chain(
    model: SdeModel,
    measure: LevyMeasure,
    schedule: Schedule,
    scheme_kind: str,
    n_steps: int,
    checkpoints: Sequence[int] | None = None,
    test_functions: Sequence[TestFunction] = (),
    master_seed: int = 0,
    replica: int = 0,
    x0: np.ndarray | None = None,
    innovation_law: str = "gaussian",
    s_order: int | None = None,
    block_size: int = 1024,
    reservoir_capacity: int = 0,
    tables: ScheduleTables | None = None,
) -> RunRecord:
    """Simulate one chain for n_steps, snapshotting at the checkpoints.

    Blocks of steps are generated with vectorized draws; block boundaries are
    aligned to checkpoints so every snapshot sees an exact step count.  The
    RNG consumption matches ``step`` exactly.
    """
    _check_scheme_kind(scheme_kind)
    n_steps = int(n_steps)
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if checkpoints is None:
        checkpoints = [n_steps]
    cps = sorted(set(int(c) for c in checkpoints))
    if not cps or cps[0] < 1 or cps[-1] > n_steps:
        raise ValueError("checkpoints must lie within [1, n_steps]")
    if block_size < 1:
        raise ValueError("block_size must be positive")

    chain = init_chain(
        model, measure, schedule, scheme_kind, n_steps, test_functions,
        master_seed, replica, x0, innovation_law, s_order,
        reservoir_capacity, tables,
    )
    tab = chain.tables
    dim_d, dim_l = model.dim_d, model.dim_l
    plugin_exact = scheme_kind == "E" and exact_threshold(measure) is None
    has_sigma = model.diffusion_sigma is not None
    kappa_mat = model.jump_coeff_kappa
    kappa_scale = model.jump_coeff_scale
    ppj = measure.uniforms_per_jump()

    snap_ns: list[int] = []
    snap_nu: dict[str, list[float]] = {f.fid: [] for f in test_functions}
    snap_jps: list[float] = []
    prev_cp_n = 0
    prev_cp_jumps = 0

    xs_buf = np.empty((block_size, dim_d))

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for cp in cps:
            while chain.n < cp:
                i0 = chain.n                      # 0-based slice start
                i1 = min(cp, i0 + block_size)
                b = i1 - i0
                g = tab.gamma[i0:i1]
                x = chain.x

                # innovations for the whole block, role by role
                if has_sigma:
                    gauss = tab.sqrt_gamma[i0:i1, None] * chain.gauss_law.sample(
                        chain.streams.gauss, size=b
                    )
                if plugin_exact:
                    jsum = np.empty((b, dim_l))
                    for j in range(b):
                        jsum[j] = measure.exact_increment_sampler(
                            float(g[j]), chain.streams.jump_count
                        )
                    n_jumps = 0
                else:
                    counts = chain.streams.jump_count.poisson(tab.lam_gamma[i0:i1])
                    n_jumps = int(counts.sum())
                    jsum = np.zeros((b, dim_l))
                    if n_jumps:
                        uniforms = chain.streams.jump_size.random((n_jumps, ppj))
                        u_per_jump = np.repeat(tab.u[i0:i1], counts)
                        jumps = measure.jump_transform(u_per_jump, uniforms)
                        step_of = np.repeat(np.arange(b), counts)
                        for c in range(dim_l):
                            jsum[:, c] = np.bincount(
                                step_of, weights=jumps[:, c], minlength=b
                            )
                    if tab.drift is not None:
                        jsum -= g[:, None] * tab.drift[i0:i1]
                if scheme_kind == "W":
                    lam_block = chain.wiener_law.sample(chain.streams.wiener, size=b)
                    wc = tab.sqrt_gamma[i0:i1, None] * lam_block
                    eb = tab.q_epoch[i0:i1]
                    for e in np.unique(eb):
                        seg = eb == e
                        q = tab.q_factor(i0 + int(np.argmax(seg)) + 1)
                        wc[seg] = wc[seg] @ q.T
                    jsum += wc

                # sequential state recursion over the block
                xs = xs_buf[:b]
                drift_b = model.drift_b
                if kappa_mat is None and kappa_scale is None and not has_sigma:
                    for j in range(b):
                        xs[j] = x
                        x = x + g[j] * drift_b(x) + jsum[j]
                else:
                    for j in range(b):
                        xs[j] = x
                        x = x + g[j] * drift_b(x)
                        if has_sigma:
                            x = x + model.diffusion_sigma(xs[j]) @ gauss[j]
                        if kappa_scale is not None:
                            x = x + kappa_scale(xs[j]) * jsum[j]
                        elif kappa_mat is not None:
                            x = x + kappa_mat(xs[j]) @ jsum[j]
                        else:
                            x = x + jsum[j]

                norms = np.linalg.norm(np.vstack((xs, x[None, :])), axis=1)
                bad = ~np.isfinite(norms) | (norms > DIVERGENCE_RADIUS)
                if bad.any():
                    # xs[j] is the state before step i0+j+1, so offending
                    # index j corresponds to step n = i0 + j
                    j = int(np.argmax(bad))
                    raise DivergenceError(i0 + j, float(norms[j]))

                chain.empirical.update_block(xs, g, chain.streams.reservoir)
                chain.x = x
                chain.n = i1
                chain.cum_jumps += n_jumps

            snap_ns.append(cp)
            for fid in snap_nu:
                snap_nu[fid].append(chain.empirical.integrate(fid))
            window = cp - prev_cp_n
            snap_jps.append((chain.cum_jumps - prev_cp_jumps) / window)
            prev_cp_n = cp
            prev_cp_jumps = chain.cum_jumps

    ns = np.asarray(snap_ns, dtype=np.int64)
    sel = ns - 1
    return RunRecord(
        scheme_kind=scheme_kind,
        replica=replica,
        s_order=tab.s_order,
        ns=ns,
        gamma_n=tab.gamma[sel],
        big_gamma=tab.big_gamma[sel],
        big_gamma2=tab.big_gamma2[sel],
        beta_s=tab.beta_s[sel],
        nu_hat={fid: np.asarray(v) for fid, v in snap_nu.items()},
        jumps_per_step=np.asarray(snap_jps),
        sup_lam_gamma=tab.sup_lam_gamma[sel],
        final_x=chain.x.copy(),
        empirical=chain.empirical,
    )


@dataclass(frozen=True)
class GuardReport:
    """Outcome of the jump-budget scan over a horizon."""

    sup_lam_gamma: float
    argmax_k: int
    lam1_gamma1: float
    bound: float
    violated: bool


def complexity_guard(
    schedule: Schedule,
    measure: LevyMeasure,
    horizon: int,
    bound_factor: float = 10.0,
) -> GuardReport:
    """Scan lambda_k * gamma_k for k <= horizon against a budget bound.

    The default bound is 10x the step-1 value: schedules whose expected jump
    count per step grows past that have superlinear mean complexity.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    k = np.arange(1, horizon + 1, dtype=float)
    lam_gamma = np.asarray(measure.tail_mass(schedule.threshold(k))) * schedule.gamma(k)
    arg = int(np.argmax(lam_gamma))
    first = float(lam_gamma[0])
    bound = bound_factor * first
    sup = float(lam_gamma[arg])
    return GuardReport(
        sup_lam_gamma=sup,
        argmax_k=arg + 1,
        lam1_gamma1=first,
        bound=bound,
        violated=bool(sup > bound),
    )
