"""Recursive boundary data on the compactified cube.

Cube faces encode the two kinds of boundary behaviour of the orthant problem:
a coordinate at 0 is ruined, a coordinate at 1 (i.e. at infinity) is safe
forever.  The Dirichlet data is therefore assembled from lower-dimensional
value functions:

* all-survive kind V:  G(y) = 0 if any coordinate is 0, else the
  (n-m)-dimensional V at the coordinates not equal to 1 (V of dimension 0 is 1);
* survivor-count kind U:  each coordinate at 1 contributes +1, coordinates at 0
  are dropped, and the rest feed the lower-dimensional U (U of dimension 0 is 0).
"""

from __future__ import annotations

import itertools

import numpy as np

from .closedform import DriftBudget, decompactify, value_1d
from .errors import DependencyError, ProvenanceError
from .grids import KIND_U, KIND_V, GridSpec, ValueGrid


def closed_form_dim1(kind: str, params: DriftBudget, m: int,
                     tolerance: float = 1e-8) -> ValueGrid:
    """The one-dimensional value sampled on the compactified axis.

    Used as the base case of the recursion; no PDE solve is involved, so the
    recorded residual and iteration count are zero.
    """
    spec = GridSpec(n=1, m=m, kind=kind, params=params)
    values = value_1d(spec.axis_x(), params)
    return ValueGrid(spec=spec, values=values, residual=0.0, iterations=0,
                     tolerance=tolerance)


class BoundaryOracle:
    """Ordered collection of converged grids for dimensions 1..n-1 at one
    (kind, b, budget, m), with multilinear evaluation."""

    def __init__(self, grids):
        grids = list(grids)
        if not grids:
            raise DependencyError("boundary oracle needs at least one grid")
        ref = grids[0].spec
        self.kind = ref.kind
        self.params = ref.params
        self.m = ref.m
        self._grids = {}
        self._interps = {}
        for g in grids:
            if g.spec.kind != self.kind:
                raise ProvenanceError(
                    f"oracle grids mix kinds {self.kind} and {g.spec.kind}")
            if g.spec.params != self.params or g.spec.m != self.m:
                raise ProvenanceError(
                    "oracle grids disagree on (b, budget, m): "
                    f"{g.spec.params}, m={g.spec.m} vs {self.params}, m={self.m}")
            if not (g.residual <= g.tolerance):
                raise DependencyError(
                    f"oracle grid of dimension {g.spec.n} is not converged "
                    f"(residual {g.residual:.3e} > tolerance {g.tolerance:.3e})")
            self._grids[g.spec.n] = g

    @property
    def dims(self):
        return sorted(self._grids)

    def grid(self, dim: int) -> ValueGrid:
        try:
            return self._grids[dim]
        except KeyError:
            raise DependencyError(
                f"boundary oracle is missing the dimension-{dim} grid "
                f"(available: {self.dims})")

    def evaluate(self, dim: int, y_points) -> np.ndarray:
        """Multilinear interpolation of the dimension-``dim`` grid at
        compactified points (…, dim)."""
        if dim not in self._interps:
            from scipy.interpolate import RegularGridInterpolator

            g = self.grid(dim)
            self._interps[dim] = RegularGridInterpolator(
                [g.spec.axis()] * dim, g.values, method="linear",
                bounds_error=False, fill_value=None)
        return np.asarray(self._interps[dim](np.asarray(y_points, dtype=float)))


def _split_boundary_point(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("expected a single cube point")
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("cube point has coordinates outside [0, 1]")
    at0 = y == 0.0
    at1 = y == 1.0
    if not (at0.any() or at1.any()):
        raise ValueError("point is not on the cube boundary")
    rest = y[~at0 & ~at1]
    return at0, at1, rest


def boundary_g_v(y, oracle: BoundaryOracle | None) -> float:
    """All-survive Dirichlet data at a cube-boundary point.

    Zero as soon as one coordinate is ruined; otherwise the coordinates
    already at infinity are stripped and the remaining ones feed the
    lower-dimensional all-survive value.
    """
    at0, at1, rest = _split_boundary_point(y)
    if at0.any():
        return 0.0
    r = rest.size
    if r == 0:
        return 1.0
    if r == 1 and oracle is None:
        raise DependencyError("no oracle supplied for the 1-D face data")
    if oracle is not None and oracle.kind != KIND_V:
        raise ProvenanceError("boundary_g_v needs a kind-V oracle")
    return float(oracle.evaluate(r, rest).reshape(-1)[0])


def boundary_g_u(y, oracle: BoundaryOracle | None) -> float:
    """Survivor-count Dirichlet data at a cube-boundary point: +1 per
    coordinate at infinity, ruined coordinates dropped, remainder evaluated
    through the lower-dimensional count value."""
    at0, at1, rest = _split_boundary_point(y)
    base = float(at1.sum())
    r = rest.size
    if r == 0:
        return base
    if oracle is None:
        raise DependencyError("no oracle supplied for the lower-dimensional face data")
    if oracle.kind != KIND_U:
        raise ProvenanceError("boundary_g_u needs a kind-U oracle")
    return base + float(oracle.evaluate(r, rest).reshape(-1)[0])


def assemble_boundary(spec: GridSpec, oracle: BoundaryOracle | None) -> np.ndarray:
    """Full-shape array with every cube-boundary node filled with its
    Dirichlet value and interior nodes set to NaN.

    All-survive faces are copied wholesale from the dimension-(n-1) grid,
    which by recursion already carries the correct values on its own
    boundary.  Survivor-count nodes are instead assembled per boundary
    class as (count at infinity) + (value of the remaining in-range
    coordinates): the unit credits enter through one exact integer add, so
    a node never rounds above the additive envelope bound the checks
    compare against.
    """
    n, m = spec.n, spec.m
    out = np.full(spec.shape, np.nan)
    if n == 1:
        out[0] = 0.0
        out[-1] = 1.0
        return out

    if oracle is None:
        raise DependencyError(f"an oracle with the dimension-{n - 1} grid is required")
    if oracle.kind != spec.kind or oracle.params != spec.params or oracle.m != m:
        raise ProvenanceError("oracle does not match the grid being assembled")

    if spec.kind == KIND_V:
        lower = oracle.grid(n - 1).values
        for k in range(n):
            hi = tuple(-1 if ax == k else slice(None) for ax in range(n))
            out[hi] = lower
        for k in range(n):
            lo = tuple(0 if ax == k else slice(None) for ax in range(n))
            out[lo] = 0.0
        return out

    inner = slice(1, m - 1)
    for pattern in itertools.product((inner, 0, m - 1), repeat=n):
        if all(p is inner for p in pattern):
            continue  # interior node, not boundary
        credit = float(sum(p == m - 1 for p in pattern))
        free = sum(p is inner for p in pattern)
        if free == 0:
            out[pattern] = credit
        else:
            out[pattern] = credit + oracle.grid(free).values[(inner,) * free]
    return out
