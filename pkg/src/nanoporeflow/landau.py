"""Critical velocity with finite-range interactions and the condensate
momentum criterion, plus the bridge from sampling tables to criterion inputs.

Unit conventions: rho is a number density [1/m^3] and the interaction
strength g carries [J m^3] (the GPE coupling convention), which makes
rho * zeta / m a squared velocity.  The momentum-space interaction kernel is
given in closed form (gaussian or top-hat transform), normalized so
zeta(0) = g for both families.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .quantum import HBAR
from .trace import estimate_critical_velocity, SampleTable


class InteractionForm(str, Enum):
    GAUSSIAN = "gaussian"
    TOP_HAT = "top_hat"


@dataclass(frozen=True)
class InteractionModel:
    """Finite-range two-body kernel in momentum space: strength g, range b."""

    form: InteractionForm
    g: float      # [J m^3]
    b: float      # [m]

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("interaction strength g must be >= 0")
        if self.b <= 0:
            raise ValueError("interaction range b must be > 0")


@dataclass(frozen=True)
class LandauParams:
    m: float      # particle mass [kg]
    rho: float    # number density [1/m^3]
    p_c: float    # critical momentum [kg m/s]
    tau: int = 1

    def __post_init__(self):
        if self.m <= 0 or self.rho <= 0:
            raise ValueError("mass and density must be positive")
        if self.p_c < 0:
            raise ValueError("critical momentum must be >= 0")
        if self.tau < 1:
            raise ValueError("tau must be a positive integer")


@dataclass(frozen=True)
class CriterionResult:
    q: float          # condensate momentum [kg m/s]
    threshold: float  # p_c^2/4 + m rho zeta_1  [kg^2 m^2/s^2]
    satisfied: bool   # strictly q^2 > threshold
    margin: float     # q^2 - threshold
    p_c: float = 0.0
    degenerate: bool = False


def zeta_momentum(model: InteractionModel, p) -> float | np.ndarray:
    """Momentum-space interaction kernel, normalized to g at p = 0.

    gaussian: g exp(-(p b / hbar)^2); top_hat: the 3D radial transform shape
    g * 3 (sin s - s cos s) / s^3 with s = p b / hbar, smooth at s = 0.
    """
    s = np.asarray(p, dtype=float) * model.b / HBAR
    if model.form is InteractionForm.GAUSSIAN:
        out = model.g * np.exp(-(s ** 2))
    else:
        # sin(s) - s cos(s) ~ s^3/3 cancels catastrophically for small s
        # (relative error ~ 3 eps / s^2), so switch to the Taylor series
        # below |s| = 0.1 where its s^8 truncation error is < 1e-14 relative.
        small = np.abs(s) < 0.1
        s_safe = np.where(small, 1.0, s)
        shape = 3.0 * (np.sin(s_safe) - s_safe * np.cos(s_safe)) / s_safe ** 3
        s2 = s ** 2
        series = 1.0 - s2 / 10.0 + s2 ** 2 / 280.0 - s2 ** 3 / 15120.0
        out = model.g * np.where(small, series, shape)
    if np.isscalar(p) or np.ndim(p) == 0:
        return float(out)
    return out


def critical_velocity_eq1(params: LandauParams, model: InteractionModel) -> float:
    """v_c = sqrt((p_c / 2m)^2 + rho zeta(tau p_c) / m)."""
    zeta_tau = zeta_momentum(model, params.tau * params.p_c)
    return float(np.sqrt((params.p_c / (2.0 * params.m)) ** 2
                         + params.rho * zeta_tau / params.m))


def condensate_criterion_eq2(q: float, params: LandauParams,
                             model: InteractionModel) -> CriterionResult:
    """Strict inequality q^2 > p_c^2/4 + m rho zeta_1 (zeta at tau = 1)."""
    if q < 0:
        raise ValueError("condensate momentum must be >= 0")
    zeta_1 = zeta_momentum(model, params.p_c)
    threshold = params.p_c ** 2 / 4.0 + params.m * params.rho * zeta_1
    margin = q * q - threshold
    return CriterionResult(q=q, threshold=threshold, satisfied=margin > 0,
                           margin=margin, p_c=params.p_c)


def sweep_critical_velocity(params: LandauParams, model: InteractionModel,
                            g_values) -> list[tuple[float, float]]:
    """v_c per g over an ascending sweep; non-decreasing since zeta >= 0."""
    g_values = list(g_values)
    if any(g < 0 for g in g_values):
        raise ValueError("all sweep strengths must be >= 0")
    if g_values != sorted(g_values):
        raise ValueError("g_values must be sorted ascending")
    curve = []
    for g in g_values:
        m = InteractionModel(form=model.form, g=g, b=model.b)
        curve.append((g, critical_velocity_eq1(params, m)))
    return curve


CENTRAL_LINES = ("b", "c", "d")


def criterion_from_simulation(tables, m: float, rho: float,
                              model: InteractionModel, v_ref: float,
                              tau: int = 1) -> CriterionResult:
    """Bridge sampling tables to the condensate criterion.

    Condensate speed = mean probe speed over the central (non-boundary)
    lines, q = m * that; p_c = m * pooled histogram-mode speed.  This is a
    bridging convention: the slow central component is read as the
    condensate, the histogram mode as the critical velocity.
    """
    tables = list(tables)
    estimate = estimate_critical_velocity(tables)
    p_c = m * estimate.speed

    central_speeds = [
        pt.speed
        for t in tables for ln in t.lines for pt in ln.points
        if ln.label in CENTRAL_LINES and not pt.in_solid
    ]
    if not central_speeds:
        raise ValueError("no central-line probes available")
    v_bar = float(np.mean(central_speeds))
    q = m * v_bar

    params = LandauParams(m=m, rho=rho, p_c=p_c, tau=tau)
    result = condensate_criterion_eq2(q, params, model)
    return CriterionResult(q=result.q, threshold=result.threshold,
                           satisfied=result.satisfied, margin=result.margin,
                           p_c=p_c, degenerate=estimate.degenerate)
