"""Replicated experiment orchestration.

An experiment is R independent chains of the same configuration, one derived
stream family per replica index, reduced to per-checkpoint aggregates:

* mean and standard error of nu_n(f) per test function,
* signed mean error and mean absolute error against optional targets,
* the sample variance of sqrt(Gamma_n)-scaled errors (CLT diagnostics),
* log-log slope fits of mean absolute error versus n.

Configurations live in flat INI files (sections [model], [measure],
[schedule], [run], [targets], [output]); every raw key is echoed into the
CSV header as a comment line together with the resolved schedule, so an
artifact identifies the run that produced it.  Identical config and seed
give byte-identical CSV output, and aggregates do not depend on replica
execution order.
"""
from __future__ import annotations

import concurrent.futures
import configparser
import dataclasses
import json
import math
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .increments import ComplexityGuardError
from .levy import (
    AtomicMeasure,
    IsotropicPowerLawMeasure,
    LevyMeasure,
    PowerTailMeasure,
)
from .models import (
    MODEL_IDS,
    build_model,
    build_test_functions,
    clt_reference_variance,
    invariant_target,
)
from .rates import recommended_schedule
from .scheme import (
    SCHEME_KINDS,
    DivergenceError,
    Schedule,
    complexity_guard,
    run_chain,
)

__all__ = [
    "ConfigError",
    "ExperimentFailedError",
    "ExperimentConfig",
    "FailureRecord",
    "ReplicaOutcome",
    "AggregateRecord",
    "SlopeFit",
    "CltDiagnostic",
    "MEASURE_KINDS",
    "build_measure",
    "default_checkpoints",
    "run_experiment",
    "fit_rate_slope",
    "clt_diagnostic",
    "emit_csv",
    "emit_svg_plot",
    "CSV_COLUMNS",
]

MEASURE_KINDS = ("isotropic-power-law", "power-tail", "finite-activity-atoms")

CSV_COLUMNS = (
    "replica",
    "n",
    "gamma_n",
    "Gamma_n",
    "Gamma2_n",
    "beta_s_n",
    "f_id",
    "nu_hat",
    "err",
    "scaled_err",
    "jumps_per_step",
)

#: fraction of failed replicas above which the whole experiment fails
FAILURE_FRACTION = 0.2


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class ExperimentFailedError(RuntimeError):
    """More than the tolerated fraction of replicas diverged."""

    def __init__(self, message: str, failures: tuple["FailureRecord", ...]):
        super().__init__(message)
        self.failures = failures


class FailureRecord(NamedTuple):
    replica: int
    step: int
    norm: float


def build_measure(kind: str, params: dict) -> LevyMeasure:
    """Construct a jump measure from its registry kind and parameters."""
    if kind == "isotropic-power-law":
        if "alpha" not in params:
            raise ConfigError("measure kind isotropic-power-law requires alpha")
        return IsotropicPowerLawMeasure(alpha=float(params["alpha"]))
    if kind == "power-tail":
        return PowerTailMeasure(
            decay=float(params.get("decay", 8.0)),
            radius=float(params.get("radius", 1.0)),
        )
    if kind == "finite-activity-atoms":
        atoms = params.get("atoms")
        if not atoms:
            raise ConfigError("measure kind finite-activity-atoms requires atoms")
        return AtomicMeasure([(float(m), tuple(map(float, y))) for m, y in atoms])
    raise ConfigError(f"unknown measure kind {kind!r}; known: {MEASURE_KINDS}")


def default_checkpoints(n_steps: int, per_decade: int = 25, first: int = 10) -> tuple[int, ...]:
    """Geometric checkpoint grid from ``first`` to ``n_steps``, ending at n_steps."""
    n_steps = int(n_steps)
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if n_steps <= first:
        return (n_steps,)
    k_lo = math.ceil(per_decade * math.log10(first))
    k_hi = math.floor(per_decade * math.log10(n_steps))
    grid = {int(round(10.0 ** (k / per_decade))) for k in range(k_lo, k_hi + 1)}
    grid.add(n_steps)
    return tuple(sorted(c for c in grid if first <= c <= n_steps))


_REQUIRED = object()


def _ini_get(cp: configparser.ConfigParser, section: str, key: str, conv: Callable, default=_REQUIRED):
    if not cp.has_option(section, key):
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key [{section}] {key}")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc


def _conv_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise ValueError("expected on/off")


def _conv_float_or_none(raw: str) -> float | None:
    return None if raw.lower() == "none" else float(raw)


def _conv_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.split(",") if tok.strip())


def _conv_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def _conv_name_list(raw: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


@dataclasses.dataclass
class ExperimentConfig:
    """Fully described experiment; ``resolve`` fills every derived field.

    The instance is plain data (picklable) so replica execution can fan out
    to worker processes, which rebuild model and measure from it.
    """

    model_id: str
    measure_kind: str
    measure_params: dict
    scheme_kind: str
    n_steps: int
    replicas: int = 1
    seed: int = 0
    schedule_mode: str = "auto"
    gamma1: float | None = None
    zeta: float | None = None
    r_threshold: float | None = None
    u_cap: float | None = 1.0
    s_order: int | None = None
    guard: bool = True
    checkpoints: tuple[int, ...] | None = None
    function_ids: tuple[str, ...] = ("phi",)
    targets: dict = dataclasses.field(default_factory=dict)
    block_size: int = 8192
    threads: int = 1
    x0: tuple[float, ...] | None = None
    innovation: str = "gaussian"
    csv_path: str | None = None
    svg_path: str | None = None
    raw_items: tuple[tuple[str, str], ...] = ()
    resolved: bool = False
    plan_exponent: float | None = None
    plan_regime: str | None = None

    def __post_init__(self):
        if self.scheme_kind not in SCHEME_KINDS:
            raise ConfigError(f"scheme must be one of {SCHEME_KINDS}, got {self.scheme_kind!r}")
        if self.schedule_mode not in ("auto", "explicit"):
            raise ConfigError(f"schedule mode must be auto or explicit, got {self.schedule_mode!r}")
        if int(self.n_steps) < 1:
            raise ConfigError("n_steps must be at least 1")
        if int(self.replicas) < 1:
            raise ConfigError("replicas must be at least 1")
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")
        if int(self.block_size) < 1:
            raise ConfigError("block_size must be at least 1")
        self.n_steps = int(self.n_steps)
        self.replicas = int(self.replicas)
        self.seed = int(self.seed)
        self.threads = int(self.threads)
        self.block_size = int(self.block_size)

    @classmethod
    def from_ini_text(cls, text: str) -> "ExperimentConfig":
        """Parse a config from INI text; see README for the key reference."""
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        for section in ("model", "measure", "run"):
            if not cp.has_section(section):
                raise ConfigError(f"missing required config section [{section}]")

        measure_kind = _ini_get(cp, "measure", "kind", str)
        measure_params: dict = {}
        if cp.has_option("measure", "alpha"):
            measure_params["alpha"] = _ini_get(cp, "measure", "alpha", float)
        if cp.has_option("measure", "decay"):
            measure_params["decay"] = _ini_get(cp, "measure", "decay", float)
        if cp.has_option("measure", "radius"):
            measure_params["radius"] = _ini_get(cp, "measure", "radius", float)
        if cp.has_option("measure", "atoms"):
            measure_params["atoms"] = _ini_get(cp, "measure", "atoms", json.loads)

        has_schedule = cp.has_section("schedule")
        targets: dict = {}
        if cp.has_section("targets"):
            for key in cp.options("targets"):
                raw = cp.get("targets", key).strip()
                targets[key] = "auto" if raw.lower() == "auto" else float(raw)

        raw_items = tuple(
            (f"{section}.{key}", " ".join(cp.get(section, key).split()))
            for section in cp.sections()
            for key in cp.options(section)
        )

        return cls(
            model_id=_ini_get(cp, "model", "id", str),
            measure_kind=measure_kind,
            measure_params=measure_params,
            scheme_kind=_ini_get(cp, "run", "scheme", str),
            n_steps=_ini_get(cp, "run", "n_steps", int),
            replicas=_ini_get(cp, "run", "replicas", int, 1),
            seed=_ini_get(cp, "run", "seed", int, 0),
            schedule_mode=_ini_get(cp, "schedule", "mode", str, "auto") if has_schedule else "auto",
            gamma1=_ini_get(cp, "schedule", "gamma1", float, None) if has_schedule else None,
            zeta=_ini_get(cp, "schedule", "zeta", float, None) if has_schedule else None,
            r_threshold=_ini_get(cp, "schedule", "r_threshold", float, None) if has_schedule else None,
            u_cap=_ini_get(cp, "schedule", "u_cap", _conv_float_or_none, 1.0) if has_schedule else 1.0,
            s_order=_ini_get(cp, "schedule", "s_order", int, None) if has_schedule else None,
            guard=_ini_get(cp, "schedule", "guard", _conv_bool, True) if has_schedule else True,
            checkpoints=_ini_get(cp, "run", "checkpoints", _conv_int_list, None),
            function_ids=_ini_get(cp, "run", "functions", _conv_name_list, ("phi",)),
            targets=targets,
            block_size=_ini_get(cp, "run", "block_size", int, 8192),
            threads=_ini_get(cp, "run", "threads", int, 1),
            x0=_ini_get(cp, "run", "x0", _conv_float_list, None),
            innovation=_ini_get(cp, "run", "innovation", str, "gaussian"),
            csv_path=_ini_get(cp, "output", "csv", str, None) if cp.has_section("output") else None,
            svg_path=_ini_get(cp, "output", "svg", str, None) if cp.has_section("output") else None,
            raw_items=raw_items,
        )

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_ini_text(text)

    def build_measure(self) -> LevyMeasure:
        return build_measure(self.measure_kind, self.measure_params)

    def build_schedule(self) -> Schedule:
        if self.gamma1 is None or self.zeta is None or self.r_threshold is None:
            raise ConfigError("schedule is unresolved; call resolve() first")
        return Schedule(self.gamma1, self.zeta, self.r_threshold, self.u_cap)

    def resolve(self) -> "ExperimentConfig":
        """Validate everything and fill in derived fields; returns a new config."""
        if self.resolved:
            return self
        if self.model_id not in MODEL_IDS:
            raise ConfigError(f"unknown model id {self.model_id!r}; registered: {MODEL_IDS}")
        try:
            measure = self.build_measure()
            build_test_functions(self.model_id, measure, self.function_ids)
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

        gamma1, zeta, r_threshold = self.gamma1, self.zeta, self.r_threshold
        s_order, plan_exponent, plan_regime = self.s_order, None, None
        if self.schedule_mode == "auto":
            if self.scheme_kind == "E":
                raise ConfigError(
                    "auto scheduling covers schemes P and W; "
                    "give explicit gamma1/zeta/r_threshold for scheme E"
                )
            plan = recommended_schedule(
                self.scheme_kind, measure, gamma1=gamma1, u_cap=self.u_cap
            )
            gamma1, zeta, r_threshold = plan.gamma1, plan.zeta, plan.r_threshold
            if s_order is None:
                s_order = plan.s
            plan_exponent, plan_regime = plan.exponent, plan.regime
        else:
            if gamma1 is None or zeta is None:
                raise ConfigError("explicit schedule mode requires gamma1 and zeta")
            if r_threshold is None:
                r_threshold = 1.0
        Schedule(gamma1, zeta, r_threshold, self.u_cap)

        checkpoints = self.checkpoints
        if checkpoints is None:
            checkpoints = default_checkpoints(self.n_steps)
        checkpoints = tuple(sorted(set(int(c) for c in checkpoints)))
        if not checkpoints:
            raise ConfigError("checkpoint grid is empty")
        if checkpoints[0] < 1 or checkpoints[-1] > self.n_steps:
            raise ConfigError(
                f"checkpoints must lie in [1, {self.n_steps}], got "
                f"[{checkpoints[0]}, {checkpoints[-1]}]"
            )

        targets: dict = {}
        for fid, value in self.targets.items():
            if fid not in self.function_ids:
                raise ConfigError(f"target given for unregistered function {fid!r}")
            if isinstance(value, str):
                auto = invariant_target(self.model_id, measure, fid)
                if auto is None:
                    raise ConfigError(
                        f"no closed-form target for {self.model_id!r}/{fid!r}; give a number"
                    )
                targets[fid] = float(auto)
            else:
                targets[fid] = float(value)

        if self.x0 is not None and len(self.x0) != 2:
            raise ConfigError(f"x0 must have 2 coordinates, got {len(self.x0)}")
        if self.innovation not in ("gaussian", "rademacher-product"):
            raise ConfigError(f"unknown innovation law {self.innovation!r}")

        return dataclasses.replace(
            self,
            gamma1=gamma1,
            zeta=zeta,
            r_threshold=r_threshold,
            s_order=s_order,
            checkpoints=checkpoints,
            targets=targets,
            plan_exponent=plan_exponent,
            plan_regime=plan_regime,
            resolved=True,
        )

    def echo_items(self) -> list[tuple[str, str]]:
        """Raw config keys plus the resolved schedule, for artifact headers."""
        items = list(self.raw_items)
        if not items:
            items = [
                ("model.id", self.model_id),
                ("measure.kind", self.measure_kind),
                *((f"measure.{k}", json.dumps(v) if isinstance(v, list) else repr(v))
                  for k, v in sorted(self.measure_params.items())),
                ("run.scheme", self.scheme_kind),
                ("run.n_steps", str(self.n_steps)),
                ("run.replicas", str(self.replicas)),
                ("run.seed", str(self.seed)),
            ]
        items.append(("resolved.schedule_mode", self.schedule_mode))
        items.append(("resolved.gamma1", repr(self.gamma1)))
        items.append(("resolved.zeta", repr(self.zeta)))
        items.append(("resolved.r_threshold", repr(self.r_threshold)))
        items.append(("resolved.u_cap", "none" if self.u_cap is None else repr(self.u_cap)))
        items.append(("resolved.s_order", "auto" if self.s_order is None else str(self.s_order)))
        if self.plan_exponent is not None:
            items.append(("resolved.plan_exponent", repr(self.plan_exponent)))
            items.append(("resolved.plan_regime", str(self.plan_regime)))
        if self.checkpoints:
            items.append(
                (
                    "resolved.checkpoints",
                    f"{self.checkpoints[0]}..{self.checkpoints[-1]} "
                    f"({len(self.checkpoints)} points)",
                )
            )
        for fid in sorted(self.targets):
            value = self.targets[fid]
            items.append((f"resolved.target.{fid}", value if isinstance(value, str) else repr(value)))
        return items


@dataclasses.dataclass
class ReplicaOutcome:
    """Picklable result of one replica: telemetry on success, a failure mark otherwise."""

    replica: int
    ok: bool
    nu_hat: dict = dataclasses.field(default_factory=dict)
    jumps_per_step: np.ndarray | None = None
    final_x: np.ndarray | None = None
    fail_step: int = 0
    fail_norm: float = 0.0


def _run_replica(config: ExperimentConfig, replica: int, tables=None) -> ReplicaOutcome:
    measure = config.build_measure()
    model = build_model(config.model_id, measure)
    functions = build_test_functions(config.model_id, measure, config.function_ids)
    schedule = config.build_schedule()
    x0 = None if config.x0 is None else np.asarray(config.x0, dtype=float)
    try:
        record = run_chain(
            model,
            measure,
            schedule,
            config.scheme_kind,
            config.n_steps,
            checkpoints=config.checkpoints,
            test_functions=functions,
            master_seed=config.seed,
            replica=replica,
            x0=x0,
            innovation_law=config.innovation,
            s_order=config.s_order,
            block_size=config.block_size,
            tables=tables,
        )
    except DivergenceError as exc:
        return ReplicaOutcome(replica=replica, ok=False, fail_step=exc.n, fail_norm=exc.norm)
    return ReplicaOutcome(
        replica=replica,
        ok=True,
        nu_hat=dict(record.nu_hat),
        jumps_per_step=record.jumps_per_step,
        final_x=record.final_x,
    )


@dataclasses.dataclass
class AggregateRecord:
    """Per-checkpoint reduction over the successful replicas of one experiment.

    Schedule arrays (gamma_n, Gamma_n, ...) are shared by all replicas; the
    replica axis only appears in nu_hat, jumps_per_step, and final_x.  Every
    statistic recomputes exactly from the stored per-replica rows.
    """

    config: ExperimentConfig
    ns: np.ndarray
    gamma_n: np.ndarray
    big_gamma: np.ndarray
    big_gamma2: np.ndarray
    beta_s: np.ndarray
    fids: tuple[str, ...]
    replicas: tuple[int, ...]
    nu_hat: dict
    jumps_per_step: np.ndarray
    final_x: np.ndarray
    failures: tuple[FailureRecord, ...] = ()

    @classmethod
    def from_outcomes(
        cls,
        config: ExperimentConfig,
        ns: np.ndarray,
        gamma_n: np.ndarray,
        big_gamma: np.ndarray,
        big_gamma2: np.ndarray,
        beta_s: np.ndarray,
        outcomes: Sequence[ReplicaOutcome],
    ) -> "AggregateRecord":
        """Reduce outcomes in replica-index order (execution order is irrelevant)."""
        ordered = sorted(outcomes, key=lambda o: o.replica)
        good = [o for o in ordered if o.ok]
        failures = tuple(
            FailureRecord(o.replica, o.fail_step, o.fail_norm) for o in ordered if not o.ok
        )
        fids = config.function_ids
        n_cp = len(ns)
        nu_hat = {
            fid: (
                np.vstack([o.nu_hat[fid] for o in good])
                if good
                else np.empty((0, n_cp))
            )
            for fid in fids
        }
        jumps = (
            np.vstack([o.jumps_per_step for o in good]) if good else np.empty((0, n_cp))
        )
        final_x = np.vstack([o.final_x for o in good]) if good else np.empty((0, 2))
        return cls(
            config=config,
            ns=np.asarray(ns, dtype=int),
            gamma_n=np.asarray(gamma_n, dtype=float),
            big_gamma=np.asarray(big_gamma, dtype=float),
            big_gamma2=np.asarray(big_gamma2, dtype=float),
            beta_s=np.asarray(beta_s, dtype=float),
            fids=tuple(fids),
            replicas=tuple(o.replica for o in good),
            nu_hat=nu_hat,
            jumps_per_step=jumps,
            final_x=final_x,
            failures=failures,
        )

    @property
    def targets(self) -> dict:
        return self.config.targets

    def _values(self, fid: str) -> np.ndarray:
        if fid not in self.nu_hat:
            raise KeyError(f"unknown test function {fid!r}; have {self.fids}")
        return self.nu_hat[fid]

    def mean_nu(self, fid: str) -> np.ndarray:
        return self._values(fid).mean(axis=0)

    def se_nu(self, fid: str) -> np.ndarray:
        values = self._values(fid)
        if values.shape[0] < 2:
            return np.full(values.shape[1], np.nan)
        return values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])

    def err(self, fid: str) -> np.ndarray:
        """Signed per-replica errors against the configured target."""
        if fid not in self.targets:
            raise KeyError(f"no target configured for {fid!r}")
        return self._values(fid) - self.targets[fid]

    def mean_err(self, fid: str) -> np.ndarray:
        return self.err(fid).mean(axis=0)

    def mean_abs_err(self, fid: str) -> np.ndarray:
        return np.abs(self.err(fid)).mean(axis=0)

    def scaled_err(self, fid: str) -> np.ndarray:
        return np.sqrt(self.big_gamma)[None, :] * self.err(fid)

    def scaled_err_variance(self, fid: str) -> np.ndarray:
        scaled = self.scaled_err(fid)
        if scaled.shape[0] < 2:
            return np.full(scaled.shape[1], np.nan)
        return scaled.var(axis=0, ddof=1)

    def mean_jumps_per_step(self) -> np.ndarray:
        if self.jumps_per_step.shape[0] == 0:
            return np.full(len(self.ns), np.nan)
        return self.jumps_per_step.mean(axis=0)


def run_experiment(config: ExperimentConfig) -> AggregateRecord:
    """Run R replicas of the configured experiment and aggregate them.

    The resolved schedule must pass the complexity guard unless the config
    turns it off.  Diverged replicas are dropped and recorded; more than
    FAILURE_FRACTION of them failing fails the whole experiment.
    """
    config = config.resolve()
    measure = config.build_measure()
    schedule = config.build_schedule()
    if config.guard:
        report = complexity_guard(schedule, measure, horizon=config.n_steps)
        if report.violated:
            raise ComplexityGuardError(
                "complexity guard violated: expected jump count per step reaches "
                f"{report.sup_lam_gamma:.6g} at k = {report.argmax_k}, above "
                f"{report.bound:.6g} = 10 x the step-1 value; "
                "set [schedule] guard = off to override"
            )

    tables = schedule.tables(
        config.n_steps, measure, config.scheme_kind, s_order=config.s_order
    )
    if config.threads == 1:
        outcomes = [_run_replica(config, rep, tables) for rep in range(config.replicas)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [
                pool.submit(_run_replica, config, rep) for rep in range(config.replicas)
            ]
            outcomes = [f.result() for f in futures]

    failures = [o for o in outcomes if not o.ok]
    if len(failures) > FAILURE_FRACTION * config.replicas:
        detail = "; ".join(
            f"replica {o.replica} diverged at step {o.fail_step} (|x| = {o.fail_norm:.3g})"
            for o in failures[:5]
        )
        raise ExperimentFailedError(
            f"{len(failures)} of {config.replicas} replicas diverged "
            f"(tolerated fraction {FAILURE_FRACTION}): {detail}",
            tuple(FailureRecord(o.replica, o.fail_step, o.fail_norm) for o in failures),
        )

    idx = np.asarray(config.checkpoints, dtype=int) - 1
    return AggregateRecord.from_outcomes(
        config,
        ns=np.asarray(config.checkpoints, dtype=int),
        gamma_n=tables.gamma[idx],
        big_gamma=tables.big_gamma[idx],
        big_gamma2=tables.big_gamma2[idx],
        beta_s=tables.beta_s[idx],
        outcomes=outcomes,
    )


class SlopeFit(NamedTuple):
    slope: float
    stderr: float
    n_points: int
    window: tuple[float, float]


def fit_rate_slope(
    aggregate,
    window: tuple[float, float] | None = None,
    fid: str = "phi",
) -> SlopeFit:
    """OLS slope of log mean|err| versus log n over a checkpoint window.

    ``aggregate`` is an AggregateRecord (with a target for ``fid``) or a
    bare (ns, errs) pair.  The window is inclusive; at least 4 checkpoints
    with strictly positive errors are required.
    """
    if isinstance(aggregate, AggregateRecord):
        ns = aggregate.ns.astype(float)
        errs = aggregate.mean_abs_err(fid)
    else:
        ns_raw, errs_raw = aggregate
        ns = np.asarray(ns_raw, dtype=float)
        errs = np.asarray(errs_raw, dtype=float)
    if window is not None:
        lo, hi = window
        keep = (ns >= lo) & (ns <= hi)
        ns, errs = ns[keep], errs[keep]
    if len(ns) < 4:
        raise ValueError(
            f"degenerate fit window: {len(ns)} checkpoints selected, need at least 4"
        )
    if np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("mean absolute errors must be positive and finite for a log-log fit")
    x = np.log(ns)
    y = np.log(errs)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("degenerate fit window: all checkpoints coincide")
    slope = float(xc @ y) / sxx
    resid = y - (y.mean() + slope * xc)
    dof = len(x) - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return SlopeFit(slope, stderr, len(x), (float(ns[0]), float(ns[-1])))


class CltDiagnostic(NamedTuple):
    replica_mean: float
    sample_variance: float
    reference_variance: float
    scaled_values: np.ndarray
    n: int


def clt_diagnostic(config: ExperimentConfig) -> CltDiagnostic:
    """Replica law of sqrt(Gamma_n) nu_n(A phi) against the closed-form variance.

    Valid in the bias-free regime zeta in (1/3, 1); the model registry must
    supply the generator image in closed form (ou2d does).
    """
    config = config.resolve()
    measure = config.build_measure()
    model = build_model(config.model_id, measure)
    if "phi" not in model.generator_Af:
        raise ConfigError(
            f"clt diagnostic unsupported: model {config.model_id!r} has no "
            "closed-form generator image"
        )
    if not 1.0 / 3.0 < config.zeta < 1.0:
        raise ConfigError(
            "clt diagnostic requires the bias-free regime zeta in (1/3, 1), "
            f"got zeta = {config.zeta}"
        )
    if "generator_phi" not in config.function_ids:
        config = dataclasses.replace(
            config,
            function_ids=config.function_ids + ("generator_phi",),
            resolved=False,
        ).resolve()
    aggregate = run_experiment(config)
    scaled = math.sqrt(aggregate.big_gamma[-1]) * aggregate.nu_hat["generator_phi"][:, -1]
    if len(scaled) < 2:
        raise ValueError("clt diagnostic needs at least 2 successful replicas")
    return CltDiagnostic(
        replica_mean=float(scaled.mean()),
        sample_variance=float(scaled.var(ddof=1)),
        reference_variance=clt_reference_variance(config.model_id, measure),
        scaled_values=scaled,
        n=int(aggregate.ns[-1]),
    )


def _fmt(value: float) -> str:
    return repr(float(value))


def emit_csv(aggregate: AggregateRecord, path) -> None:
    """Write the per-replica checkpoint table; bytes are deterministic.

    Rows are ordered (replica, n, f_id); the err and scaled_err fields are
    empty when the function has no configured target.
    """
    lines = [f"# {key} = {value}" for key, value in aggregate.config.echo_items()]
    lines.append(",".join(CSV_COLUMNS))
    targets = aggregate.targets
    sqrt_gamma = np.sqrt(aggregate.big_gamma)
    for row, replica in enumerate(aggregate.replicas):
        for col, n in enumerate(aggregate.ns):
            for fid in aggregate.fids:
                value = aggregate.nu_hat[fid][row, col]
                if fid in targets:
                    err = value - targets[fid]
                    err_s, scaled_s = _fmt(err), _fmt(sqrt_gamma[col] * err)
                else:
                    err_s = scaled_s = ""
                lines.append(
                    ",".join(
                        (
                            str(replica),
                            str(int(n)),
                            _fmt(aggregate.gamma_n[col]),
                            _fmt(aggregate.big_gamma[col]),
                            _fmt(aggregate.big_gamma2[col]),
                            _fmt(aggregate.beta_s[col]),
                            fid,
                            _fmt(value),
                            err_s,
                            scaled_s,
                            _fmt(aggregate.jumps_per_step[row, col]),
                        )
                    )
                )
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


_SVG_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def emit_svg_plot(
    aggregates,
    path,
    fid: str = "phi",
    target: float | None = None,
    width: int = 640,
    height: int = 400,
) -> None:
    """Plot mean nu_n(fid) versus n (log-x), one polyline per aggregate.

    The only polyline elements are the data series and the only line element
    is the horizontal target rule, so the structure is checkable.  The
    target defaults to the first aggregate that configures one for fid.
    """
    if isinstance(aggregates, AggregateRecord):
        aggregates = [aggregates]
    if not aggregates:
        raise ValueError("at least one aggregate is required")
    series = []
    for agg in aggregates:
        if fid not in agg.nu_hat:
            raise KeyError(f"aggregate for scheme {agg.config.scheme_kind} lacks {fid!r}")
        series.append((agg.config.scheme_kind, agg.ns.astype(float), agg.mean_nu(fid)))
        if target is None and fid in agg.targets:
            target = agg.targets[fid]

    margin_l, margin_r, margin_t, margin_b = 60, 20, 30, 45
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    log_n = [np.log10(ns) for _, ns, _ in series]
    x_lo = min(float(v.min()) for v in log_n)
    x_hi = max(float(v.max()) for v in log_n)
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    y_all = np.concatenate([vals for _, _, vals in series])
    if target is not None:
        y_all = np.append(y_all, target)
    y_lo, y_hi = float(y_all.min()), float(y_all.max())
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.06 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(logn: float) -> float:
        return margin_l + (logn - x_lo) / (x_hi - x_lo) * plot_w

    def sy(value: float) -> float:
        return margin_t + (y_hi - value) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<path d="M {margin_l} {margin_t} V {margin_t + plot_h} H {margin_l + plot_w}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    for decade in range(math.ceil(x_lo - 1e-9), math.floor(x_hi + 1e-9) + 1):
        x = sx(decade)
        parts.append(
            f'<path d="M {x:.2f} {margin_t + plot_h} v 4" stroke="#333" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{margin_t + plot_h + 16}" text-anchor="middle">'
            f"1e{decade}</text>"
        )
    for frac in (0.0, 0.5, 1.0):
        value = y_lo + frac * (y_hi - y_lo)
        y = sy(value)
        parts.append(f'<path d="M {margin_l} {y:.2f} h -4" stroke="#333" stroke-width="1"/>')
        parts.append(
            f'<text x="{margin_l - 8}" y="{y + 4:.2f}" text-anchor="end">{value:.4g}</text>'
        )
    parts.append(
        f'<text x="{margin_l + plot_w / 2:.0f}" y="{height - 8}" text-anchor="middle">n</text>'
    )
    if target is not None:
        y = sy(target)
        parts.append(
            f'<line class="target-rule" x1="{margin_l}" y1="{y:.2f}" '
            f'x2="{margin_l + plot_w}" y2="{y:.2f}" stroke="#777" '
            'stroke-width="1" stroke-dasharray="5,4"/>'
        )
    for i, (label, ns, vals) in enumerate(series):
        color = _SVG_PALETTE[i % len(_SVG_PALETTE)]
        points = " ".join(
            f"{sx(float(np.log10(n))):.2f},{sy(float(v)):.2f}" for n, v in zip(ns, vals)
        )
        parts.append(
            f'<polyline class="series" fill="none" stroke="{color}" '
            f'stroke-width="1.5" points="{points}"/>'
        )
        parts.append(
            f'<text x="{margin_l + plot_w - 6}" y="{margin_t + 14 + 14 * i}" '
            f'text-anchor="end" fill="{color}">scheme {label}</text>'
        )
    parts.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(parts) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write SVG to {path}: {exc}") from exc
