"""Registry of benchmark SDE models and their test functions.

Two models ship:

* ``ou2d``: dX = -X dt + dZ on R^2, no Brownian part, identity jump
  coefficient.  Strong mean reversion (a = 1).  Its invariant law has a
  computable second moment: with phi(x) = |x|^2,

      nu(phi) = m2 / 2,      A phi(x) = -2 |x|^2 + m2,

  where m2 is the full second absolute moment of the jump measure.  This is
  the model every quantitative target in the harness uses.

* ``soft-reverting``: dX = -X / sqrt(1 + |X|) dt + (1 + |X|)^(1/4) dZ, a
  weakly mean-reverting system (a = 3/4, coefficient growth r = 1/4) whose
  invariant values are unknown; it exercises the low-moment stability
  analysis, with usable moment orders p in (2, 3).
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .empirical import TestFunction
from .levy import LevyMeasure
from .scheme import SdeModel

__all__ = [
    "MODEL_IDS",
    "build_model",
    "build_test_functions",
    "invariant_target",
    "clt_reference_variance",
]

MODEL_IDS = ("ou2d", "soft-reverting")

#: moment exponent for the stability probe (1 + |x|^2)^(p/2 + a - 1)
STABILITY_PROBE_EXPONENT = {"ou2d": 1.25, "soft-reverting": 1.0}


def _phi(x: np.ndarray) -> float:
    return float(x @ x)


def _phi_vec(xs: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", xs, xs)


def build_model(model_id: str, measure: LevyMeasure) -> SdeModel:
    """Construct a registered model wired to the given jump measure."""
    if model_id == "ou2d":
        m2 = measure.abs_moment(2)
        return SdeModel(
            dim_d=2,
            dim_l=2,
            drift_b=lambda x: -x,
            diffusion_sigma=None,
            jump_coeff_kappa=None,
            lyapunov_V=lambda x: 1.0 + float(x @ x),
            reversion_a=1.0,
            growth_r=0.0,
            moment_p=2.5,
            generator_Af={"phi": lambda x, _m2=m2: -2.0 * float(x @ x) + _m2},
            model_id="ou2d",
        )
    if model_id == "soft-reverting":
        return SdeModel(
            dim_d=2,
            dim_l=2,
            drift_b=lambda x: -x / math.sqrt(1.0 + math.hypot(x[0], x[1])),
            diffusion_sigma=None,
            jump_coeff_kappa=None,
            jump_coeff_scale=lambda x: (1.0 + math.hypot(x[0], x[1])) ** 0.25,
            lyapunov_V=lambda x: 1.0 + float(x @ x),
            reversion_a=0.75,
            growth_r=0.25,
            moment_p=2.5,
            generator_Af={},
            model_id="soft-reverting",
        )
    raise KeyError(f"unknown model id {model_id!r}; registered: {MODEL_IDS}")


def build_test_functions(model_id: str, measure: LevyMeasure, fids: tuple[str, ...]) -> list[TestFunction]:
    """Resolve test-function ids against the model registry.

    ``phi`` is |x|^2 with its generator image when the model provides one;
    ``stability_probe`` is (1 + |x|^2)^e with the model's moment exponent e,
    the quantity whose boundedness the tightness analysis predicts.
    """
    model = build_model(model_id, measure)
    out: list[TestFunction] = []
    for fid in fids:
        if fid == "phi":
            out.append(
                TestFunction(
                    fid="phi",
                    fn=_phi,
                    vectorized=_phi_vec,
                    generator_image=model.generator_Af.get("phi"),
                )
            )
        elif fid == "stability_probe":
            e = STABILITY_PROBE_EXPONENT[model_id]
            out.append(
                TestFunction(
                    fid="stability_probe",
                    fn=lambda x, _e=e: (1.0 + float(x @ x)) ** _e,
                    vectorized=lambda xs, _e=e: (1.0 + _phi_vec(xs)) ** _e,
                )
            )
        elif fid == "generator_phi":
            af = model.generator_Af.get("phi")
            if af is None:
                raise KeyError(f"model {model_id!r} has no closed-form generator image for phi")
            m2 = measure.abs_moment(2)
            out.append(
                TestFunction(
                    fid="generator_phi",
                    fn=af,
                    vectorized=lambda xs, _m2=m2: -2.0 * _phi_vec(xs) + _m2,
                )
            )
        else:
            raise KeyError(
                f"unknown test function id {fid!r}; "
                "registered: phi, stability_probe, generator_phi"
            )
    return out


def invariant_target(model_id: str, measure: LevyMeasure, fid: str) -> float | None:
    """Closed-form nu(f) when the registry knows it, else None."""
    if model_id == "ou2d" and fid == "phi":
        return measure.abs_moment(2) / 2.0
    if model_id == "ou2d" and fid == "generator_phi":
        return 0.0
    return None


def clt_reference_variance(model_id: str, measure: LevyMeasure, fid: str = "generator_phi") -> float:
    """Asymptotic variance of sqrt(Gamma_n) nu_n(A phi) for the OU model.

    With no Brownian part and identity jump coefficient the variance is
    integral over nu and pi of (phi(x + y) - phi(x))^2, which isotropy
    collapses to m2^2 + m4.
    """
    if model_id != "ou2d" or fid != "generator_phi":
        raise KeyError("the closed-form CLT variance is available for ou2d / generator_phi only")
    if not measure.is_symmetric:
        raise ValueError("the closed form assumes a symmetric isotropic measure")
    m2 = measure.abs_moment(2)
    m4 = measure.abs_moment(4)
    return m2 * m2 + m4
