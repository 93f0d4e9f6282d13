"""Monotone upwind finite-difference solver for the compactified HJB equation.

The equation on the open unit cube is

    sum_i [ a_i(y)/2 * u_{y_i y_i} + beta_i(y) * u_{y_i} ]
        + budget * max(0, max_i gamma_i(y) * u_{y_i}) = 0,

with Dirichlet data on every face supplied by ``assemble_boundary``.  Second
derivatives use the centred 3-point stencil; first derivatives are upwinded
against the sign of the total per-coordinate drift
``d_i = beta_i + budget * gamma_i * 1{i = control}``, i.e. a positive drift
couples the node to its +y neighbour and a negative one to its -y neighbour.
Every off-diagonal stencil weight is then nonnegative and the diagonal is
strictly negative on the interior, so the scheme is monotone and the frozen
linear problems are M-matrices.

The nonlinearity is handled by Howard iteration: freeze the per-node argmax
control, solve the frozen linear problem exactly, re-derive the argmax, and
stop once the control field stabilizes (or the value update falls under the
tolerance).  Inner linear problems are solved by sparse LU for n <= 2 and by
an algebraic-multigrid-preconditioned Krylov iteration for n = 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import BoundaryOracle, assemble_boundary, closed_form_dim1
from .closedform import value_1d
from .errors import ConvergenceError
from .grids import KIND_V, GradientField, GridSpec, PolicyField, ValueGrid

NO_CONTROL = -1


def _axis_coefficients(spec: GridSpec):
    """Per-axis interior coefficient vectors (a, beta, gamma), each length m-2."""
    y = spec.axis()[1:-1]
    one = 1.0 - y
    gamma = one * one
    return gamma * gamma, gamma * (spec.params.b - one), gamma


def _bshape(n, axis, arr):
    """Reshape a 1-D per-axis array so it broadcasts along ``axis`` of an
    n-dimensional interior array."""
    shape = [1] * n
    shape[axis] = arr.size
    return arr.reshape(shape)


@dataclass(frozen=True)
class DiscreteSystem:
    """The frozen-control linear problem at one Howard step.

    ``w_lo[i]`` / ``w_hi[i]`` are the (nonnegative) stencil weights coupling
    each interior node to its -y / +y neighbour along axis i, in units of the
    equation multiplied by h^2.  The operator-form diagonal is
    ``-(sum_i w_lo[i] + w_hi[i])``, strictly negative on the interior.  ``rhs``
    already carries the Dirichlet contributions of boundary neighbours.
    """

    spec: GridSpec
    w_lo: tuple
    w_hi: tuple
    rhs: np.ndarray

    @property
    def diagonal(self) -> np.ndarray:
        """Operator-form diagonal (negative)."""
        total = np.zeros((self.spec.m - 2,) * self.spec.n)
        for lo, hi in zip(self.w_lo, self.w_hi):
            total += lo + hi
        return -total

    def matrix(self) -> sp.csr_matrix:
        """Sign-flipped (positive-diagonal M-matrix) CSR form, row-major over
        the interior lattice."""
        n, m = self.spec.n, self.spec.m
        mi = m - 2
        N = mi ** n
        idx = np.arange(N, dtype=np.int64).reshape((mi,) * n)
        rows = [np.arange(N, dtype=np.int64)]
        cols = [np.arange(N, dtype=np.int64)]
        vals = [(-self.diagonal).ravel()]
        for ax in range(n):
            head = tuple(slice(0, -1) if k == ax else slice(None) for k in range(n))
            tail = tuple(slice(1, None) if k == ax else slice(None) for k in range(n))
            rows.append(idx[head].ravel())
            cols.append(idx[tail].ravel())
            vals.append(-self.w_hi[ax][head].ravel())
            rows.append(idx[tail].ravel())
            cols.append(idx[head].ravel())
            vals.append(-self.w_lo[ax][tail].ravel())
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N, N),
        )
        return A.tocsr()


def discretize(spec: GridSpec, control_index: np.ndarray,
               values: np.ndarray) -> DiscreteSystem:
    """Build the frozen-control linear system.

    ``control_index`` holds, per interior node, the 0-based coordinate that
    receives the full budget, or -1 for no allocation.  ``values`` is a
    full-shape array whose boundary entries provide the Dirichlet data.
    """
    n, m, h = spec.n, spec.m, spec.h
    budget = spec.params.budget
    mi = m - 2
    control_index = np.asarray(control_index)
    if control_index.shape != (mi,) * n:
        raise ValueError("control_index must cover the interior lattice")

    w_lo, w_hi = [], []
    rhs = np.zeros((mi,) * n)
    for ax in range(n):
        a1, beta1, gamma1 = _axis_coefficients(spec)
        a1, beta1, gamma1 = (_bshape(n, ax, v) for v in (a1, beta1, gamma1))
        d = beta1 + budget * gamma1 * (control_index == ax)
        hi = 0.5 * a1 + h * np.maximum(d, 0.0)
        lo = 0.5 * a1 + h * np.maximum(-d, 0.0)
        hi = np.broadcast_to(hi, (mi,) * n).copy()
        lo = np.broadcast_to(lo, (mi,) * n).copy()
        w_hi.append(hi)
        w_lo.append(lo)

        first = tuple(0 if k == ax else slice(None) for k in range(n))
        last = tuple(-1 if k == ax else slice(None) for k in range(n))
        face_lo = tuple(0 if k == ax else slice(1, -1) for k in range(n))
        face_hi = tuple(-1 if k == ax else slice(1, -1) for k in range(n))
        rhs[first] += lo[first] * values[face_lo]
        rhs[last] += hi[last] * values[face_hi]

    return DiscreteSystem(spec=spec, w_lo=tuple(w_lo), w_hi=tuple(w_hi), rhs=rhs)


def _linear_solve(system: DiscreteSystem, bound: np.ndarray,
                  prev: np.ndarray) -> np.ndarray:
    """Solve the frozen linear problem essentially to machine precision.

    The unknown is the deficit g = bound - u below the closed-form upper
    bound.  The bound is a discrete supersolution for every control field
    (its residual slack is one-signed; verified empirically down to rounding
    noise), so g >= 0 in exact arithmetic and sub-roundoff negative entries
    can be clamped; reconstructing u = bound - g then keeps u inside
    [0, bound] exactly in floating point, because rounding a subtraction is
    monotone.  A genuinely negative deficit (beyond rounding noise) would
    mean the supersolution property failed, so in that case the raw values
    are returned untouched and downstream bound checks report it honestly.

    Rows are scaled to unit diagonal first; the badly scaled rows near the
    degenerate y -> 1 faces otherwise inflate the condition number purely as
    a scaling artifact.
    """
    A = system.matrix()
    d = A.diagonal()
    slack = (A @ bound.ravel() - system.rhs.ravel()) / d
    A_s = sp.diags(1.0 / d) @ A
    g0 = (bound - prev).ravel()
    if system.spec.n <= 2:
        lu = spla.splu(A_s.tocsc())
        g = lu.solve(slack)
    else:
        g = _amg_solve(A_s.tocsr(), slack, g0)
    g = g.reshape(bound.shape)
    if g.min() >= -1e-9:
        g = np.clip(g, 0.0, bound)
    return bound - g


def _amg_solve(A: sp.csr_matrix, b: np.ndarray, x0: np.ndarray,
               target: float = 1e-12) -> np.ndarray:
    import pyamg

    ml = pyamg.ruge_stuben_solver(A, max_coarse=500)
    M = ml.aspreconditioner(cycle="V")
    x = x0
    scale = max(np.max(np.abs(b)), 1.0)
    for _ in range(4):
        x, _info = spla.bicgstab(A, b, x0=x, M=M, rtol=1e-13, atol=0.0,
                                 maxiter=400)
        resid = np.max(np.abs(b - A @ x)) / scale
        if resid <= target:
            return x
    raise ConvergenceError(
        f"inner multigrid solve stalled (scaled residual {resid:.3e})",
        residual=float(resid),
    )


def _interior_diffs(spec: GridSpec, values: np.ndarray, ax: int):
    """Forward and backward one-sided differences along ``ax`` at interior nodes."""
    n, h = spec.n, spec.h
    int_sl = (slice(1, -1),) * n
    up = tuple(slice(2, None) if k == ax else slice(1, -1) for k in range(n))
    dn = tuple(slice(0, -2) if k == ax else slice(1, -1) for k in range(n))
    ctr = values[int_sl]
    return (values[up] - ctr) / h, (ctr - values[dn]) / h


def _control_gains(spec: GridSpec, values: np.ndarray) -> np.ndarray:
    """Stacked (n, interior) array of the discrete-operator improvement from
    allocating the budget to each coordinate (monotone upwind evaluation)."""
    n = spec.n
    budget = spec.params.budget
    gains = np.empty((n,) + (spec.m - 2,) * n)
    for ax in range(n):
        fwd, bwd = _interior_diffs(spec, values, ax)
        _, beta1, gamma1 = _axis_coefficients(spec)
        beta1 = _bshape(n, ax, beta1)
        gamma1 = _bshape(n, ax, gamma1)
        d0 = np.broadcast_to(beta1, fwd.shape)
        d1 = d0 + budget * np.broadcast_to(gamma1, fwd.shape)
        f0 = np.maximum(d0, 0.0) * fwd - np.maximum(-d0, 0.0) * bwd
        f1 = np.maximum(d1, 0.0) * fwd - np.maximum(-d1, 0.0) * bwd
        gains[ax] = f1 - f0
    return gains


def _policy_update(spec: GridSpec, values: np.ndarray,
                   incumbent: np.ndarray | None) -> np.ndarray:
    """Per-node argmax control (-1 = allocate nothing).  With an incumbent
    field, switch only on a strict improvement so exact ties cannot cycle."""
    gains = _control_gains(spec, values)
    best = np.argmax(gains, axis=0)
    best_gain = np.max(gains, axis=0)
    candidate = np.where(best_gain > 0.0, best, NO_CONTROL)
    cand_gain = np.maximum(best_gain, 0.0)
    if incumbent is None:
        return candidate.astype(np.int8)
    inc_gain = np.zeros_like(cand_gain)
    for ax in range(spec.n):
        mask = incumbent == ax
        inc_gain[mask] = gains[ax][mask]
    out = np.where(cand_gain > inc_gain, candidate, incumbent)
    return out.astype(np.int8)


def _scaled_residual(spec: GridSpec, values: np.ndarray) -> float:
    """Sup-norm of the nonlinear discrete equation over the interior, with each
    control's row divided by its diagonal weight."""
    n = spec.n
    int_sl = (slice(1, -1),) * n
    best = None
    for control in range(-1, n):
        num = np.zeros((spec.m - 2,) * n)
        den = np.zeros_like(num)
        for ax in range(n):
            a1, beta1, gamma1 = _axis_coefficients(spec)
            a1, beta1, gamma1 = (_bshape(n, ax, v) for v in (a1, beta1, gamma1))
            d = beta1 + spec.params.budget * gamma1 * (1.0 if ax == control else 0.0)
            hi = 0.5 * a1 + spec.h * np.maximum(d, 0.0)
            lo = 0.5 * a1 + spec.h * np.maximum(-d, 0.0)
            up = tuple(slice(2, None) if k == ax else slice(1, -1) for k in range(n))
            dn = tuple(slice(0, -2) if k == ax else slice(1, -1) for k in range(n))
            ctr = values[int_sl]
            num += hi * (values[up] - ctr) + lo * (values[dn] - ctr)
            den += hi + lo
        scaled = num / den
        best = scaled if best is None else np.maximum(best, scaled)
    return float(np.max(np.abs(best)))


def _initial_interior(spec: GridSpec) -> np.ndarray:
    """Closed-form upper bound used as the starting guess: the product (kind V)
    or sum (kind U) of fully assisted one-coordinate values."""
    x1 = spec.axis_x()[1:-1]
    h1 = value_1d(x1, spec.params)
    n = spec.n
    if spec.kind == KIND_V:
        out = np.ones((spec.m - 2,) * n)
        for ax in range(n):
            out = out * _bshape(n, ax, h1)
    else:
        out = np.zeros((spec.m - 2,) * n)
        for ax in range(n):
            out = out + _bshape(n, ax, h1)
    return out


def laggard_control(spec: GridSpec) -> np.ndarray:
    """Frozen control field pushing the smallest coordinate (smallest index on
    ties), used to evaluate the push-the-laggard policy as a linear problem."""
    n = spec.n
    y = spec.axis()[1:-1]
    coords = np.empty((n,) + (spec.m - 2,) * n)
    for ax in range(n):
        coords[ax] = np.broadcast_to(_bshape(n, ax, y), coords[ax].shape)
    return np.argmin(coords, axis=0).astype(np.int8)


def solve(spec: GridSpec, oracle: BoundaryOracle | None = None,
          tol: float = 1e-8, max_outer: int = 100,
          frozen_policy: np.ndarray | str | None = None):
    """Solve one n-dimensional problem; returns ``(ValueGrid, PolicyField)``.

    With ``frozen_policy`` (either a 0-based per-interior-node control array or
    the string ``"laggard"``) the control is not optimized: a single linear
    solve evaluates that fixed feedback instead.  The recorded residual is then
    the linear one.
    """
    values = assemble_boundary(spec, oracle)
    int_sl = (slice(1, -1),) * spec.n
    bound = _initial_interior(spec)
    values[int_sl] = bound

    if frozen_policy is not None:
        pol = laggard_control(spec) if isinstance(frozen_policy, str) else \
            np.asarray(frozen_policy, dtype=np.int8)
        system = discretize(spec, pol, values)
        values[int_sl] = _linear_solve(system, bound, values[int_sl])
        A = system.matrix()
        d = A.diagonal()
        resid = float(np.max(np.abs(system.rhs.ravel() - A @ values[int_sl].ravel()) / d))
        grid = ValueGrid(spec=spec, values=values, residual=resid, iterations=1,
                         tolerance=tol)
        return grid, extract_policy(grid)

    pol = _policy_update(spec, values, None)
    iterations = 0
    delta = np.inf
    for iterations in range(1, max_outer + 1):
        system = discretize(spec, pol, values)
        new_int = _linear_solve(system, bound, values[int_sl])
        delta = float(np.max(np.abs(new_int - values[int_sl])))
        values[int_sl] = new_int
        new_pol = _policy_update(spec, values, pol)
        stable = bool(np.array_equal(new_pol, pol))
        pol = new_pol
        if stable or delta < tol:
            break
    else:
        raise ConvergenceError(
            f"policy iteration did not settle in {max_outer} sweeps "
            f"(last sup-norm change {delta:.3e})",
            residual=_scaled_residual(spec, values), iterations=max_outer)

    resid = _scaled_residual(spec, values)
    grid = ValueGrid(spec=spec, values=values, residual=resid,
                     iterations=iterations, tolerance=tol)
    return grid, extract_policy(grid)


def solve_recursive(n: int, kind: str, params, m: int, tol: float = 1e-8,
                    max_outer: int = 100):
    """Solve dimensions 1..n in order, each feeding the next one's boundary.

    Returns ``(grids, policies)`` as dimension-keyed dicts; dimension 1 is the
    sampled closed form (zero PDE iterations), so its policy entry is None.
    """
    grids = {1: closed_form_dim1(kind, params, m, tolerance=tol)}
    policies = {1: None}
    for dim in range(2, n + 1):
        oracle = BoundaryOracle([grids[d] for d in range(1, dim)])
        spec = GridSpec(n=dim, m=m, kind=kind, params=params)
        grids[dim], policies[dim] = solve(spec, oracle, tol=tol,
                                          max_outer=max_outer)
    return grids, policies


def gradient(grid: ValueGrid) -> GradientField:
    """Orthant-coordinate partials at interior nodes: gamma_i(y) times the
    centred second-order y-difference (face neighbours supply the boundary
    values, so the stencil is valid at every interior node)."""
    spec = grid.spec
    n, m, h = spec.n, spec.m, spec.h
    v = grid.values
    partials = np.empty((m - 2,) * n + (n,))
    _, _, gamma1 = _axis_coefficients(spec)
    for ax in range(n):
        up = tuple(slice(2, None) if k == ax else slice(1, -1) for k in range(n))
        dn = tuple(slice(0, -2) if k == ax else slice(1, -1) for k in range(n))
        dy = (v[up] - v[dn]) / (2.0 * h)
        partials[..., ax] = _bshape(n, ax, gamma1) * dy
    return GradientField(spec=spec, partials=partials)


def extract_policy(grid: ValueGrid) -> PolicyField:
    """Argmax coordinate of the orthant-coordinate partials per interior node,
    1-based, smallest index on exact ties."""
    g = gradient(grid)
    idx = np.argmax(g.partials, axis=-1).astype(np.int8) + 1
    return PolicyField(spec=grid.spec, index=idx)
