"""Exact formulas, coordinate compactification, and compactified PDE coefficients.

This is the ground-truth layer: everything here is analytic, and the solver,
simulator, and verifier all test against it.  The model is a system of n
Brownian coordinates, each with intrinsic drift ``b``, sharing a total extra
drift budget ``a`` that a controller may split across coordinates at every
instant.  A coordinate is ruined (absorbed) when it hits zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class DriftBudget:
    """Model parameters: per-coordinate drift ``b`` and total allocation budget.

    The budget must be positive.  Negative drifts are legal here (the
    simulator probes them); the grid solver layers its own nonnegative-drift
    restriction on top via ``GridSpec``.
    """

    b: float
    budget: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.b):
            raise ConfigError(f"drift b must be finite, got {self.b}")
        if not (self.budget > 0) or not np.isfinite(self.budget):
            raise ConfigError(f"budget must be a positive real, got {self.budget}")


def survival_h(z):
    """H(z) = 1 - exp(-2 z): survival probability of a unit-drift Brownian
    motion started at z >= 0 and absorbed at 0.

    Accepts scalars or arrays; z = inf maps to exactly 1.0.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("survival_h requires z >= 0")
    out = -np.expm1(-2.0 * z)
    return float(out) if out.ndim == 0 else out


def value_1d(z, p: DriftBudget):
    """One-coordinate value: both the all-survive and the survivor-count
    problems collapse to H(((b + a)^+) z) when n = 1 (full budget to the only
    coordinate)."""
    rate = max(p.b + p.budget, 0.0)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("value_1d requires z >= 0")
    out = -np.expm1(-2.0 * rate * z)
    if rate == 0.0:
        # 0 * inf would poison the limit at z = inf; the value is 0 everywhere.
        out = np.zeros_like(z)
    return float(out) if out.ndim == 0 else out


def mckean_shepp_v2(x1, x2):
    """Closed-form two-coordinate all-survive value for b = 0, a = 1
    (McKean-Shepp formula): 1 - e^{-2 min} - 2 min e^{-(x1+x2)}."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.any(x1 < 0) or np.any(x2 < 0):
        raise ValueError("mckean_shepp_v2 requires x >= 0")
    mn = np.minimum(x1, x2)
    with np.errstate(invalid="ignore"):
        cross = np.where(np.isinf(x1 + x2), 0.0, 2.0 * mn * np.exp(-(x1 + x2)))
    out = -np.expm1(-2.0 * mn) - cross
    return float(out) if out.ndim == 0 else out


def compactify(x):
    """Componentwise map x -> x/(1+x) from the closed orthant (with +inf
    allowed) onto the closed unit cube; inf maps to exactly 1.0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("compactify requires x >= 0")
    with np.errstate(invalid="ignore"):
        y = np.where(np.isinf(x), 1.0, x / (1.0 + x))
    return float(y) if y.ndim == 0 else y


def decompactify(y):
    """Componentwise inverse map y -> y/(1-y); y = 1 maps to +inf."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("decompactify requires y in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(y == 1.0, np.inf, y / (1.0 - y))
    return float(x) if x.ndim == 0 else x


def compact_coefficients(y, p: DriftBudget):
    """Coefficient vectors (a_i, beta_i, gamma_i) of the compactified operator
    at cube point(s) y.

    In compactified coordinates the generator reads
        sum_i [ a_i(y)/2 * u_{y_i y_i} + beta_i(y) * u_{y_i} ]
          + budget * max(0, max_i gamma_i(y) * u_{y_i}),
    with a_i = (1-y_i)^4, beta_i = (1-y_i)^2 (b - (1-y_i)), gamma_i = (1-y_i)^2.
    gamma_i * d/dy_i is exactly the original-coordinate partial d/dx_i, which
    is why the compactified argmax matches the orthant-coordinate argmax.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("compact_coefficients requires y in [0, 1]")
    one = 1.0 - y
    gamma = one * one
    a_diag = gamma * gamma
    beta = gamma * (p.b - one)
    return a_diag, beta, gamma
