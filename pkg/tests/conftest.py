"""Shared fixtures: quadrature oracle measures for the closed-form families."""
import pytest

from ergolevy import RadialDensityMeasure

# moment orders are >= 2, so alpha <= 1.8 keeps every compared integral a
# safe 0.2 above the activity index (see RadialDensityMeasure quadrature)
ALPHA_GRID = (0.5, 0.9, 1.3, 1.6, 1.8)
U_GRID = (0.05, 0.3, 1.0, 2.0)


def make_power_law_oracle(alpha: float) -> RadialDensityMeasure:
    """Quadrature twin of IsotropicPowerLawMeasure(alpha)."""

    def psi(r: float) -> float:
        return r ** (-(alpha + 2.0)) if r <= 1.0 else r ** (-8.0)

    return RadialDensityMeasure(psi, quad_points=(1.0,), activity_index=alpha)


@pytest.fixture(scope="session")
def power_law_oracle():
    """Factory returning (and caching) the quadrature oracle for alpha."""
    cache = {}

    def get(alpha: float) -> RadialDensityMeasure:
        if alpha not in cache:
            cache[alpha] = make_power_law_oracle(alpha)
        return cache[alpha]

    return get


@pytest.fixture(scope="session")
def tail_oracle() -> RadialDensityMeasure:
    """Quadrature twin of PowerTailMeasure(decay=8, radius=1)."""

    def psi(r: float) -> float:
        return 0.0 if r <= 1.0 else r ** (-8.0)

    return RadialDensityMeasure(psi, quad_points=(1.0,))
