"""Euler-Maruyama simulation of the budget-assisted Brownian system.

Each of the n coordinates follows dX_i = (b + phi_i) dt + dW_i and is
permanently absorbed when it reaches 0; a policy splits the total budget
across the alive coordinates each step.  Two estimators are provided:

* ``HorizonTruncation`` - run to the horizon T and score the terminal state
  (all-alive indicator, or the number of alive coordinates).
* ``DualBarrier`` - stop early with payoff 1 once every coordinate sits at or
  above a success level R, with payoff 0 at the first absorption; paths that
  reach the horizon undecided score the all-alive indicator and are counted
  as truncated.

Absorption inside the estimators is detected with the exact conditional
Brownian-bridge crossing probability exp(-2 x x' / dt) between step
endpoints, which removes the O(sqrt(dt)) one-sided bias of the plain
end-of-step check (for drifted Brownian motion the bridge law between fixed
endpoints does not depend on the drift, so the correction is exact per
step).  The standalone :func:`step` keeps the plain end-of-step rule unless
bridge uniforms are supplied, so single-step behaviour stays easy to reason
about.

Determinism contract: path ``p`` of a run with seed ``s`` consumes the
Philox stream keyed by ``(s, p)`` in fixed-size blocks (``CHUNK_STEPS``
steps of normals, then the matching uniforms), independent of thread count,
batch layout, and of how early the path terminates.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .closedform import DriftBudget, compactify
from .errors import ConfigError
from .grids import PolicyField, ValueGrid

CHUNK_STEPS = 1024
_BATCH_PATHS = 1024

PAYOFF_ALL_SURVIVE = "AllSurvive"
PAYOFF_SURVIVOR_COUNT = "SurvivorCount"
EST_HORIZON = "HorizonTruncation"
EST_DUAL_BARRIER = "DualBarrier"

_POL_LAGGARD = 0
_POL_UNIFORM = 1
_POL_FIXED = 2
_POL_CONSTANT = 3
_POL_GRID = 4

_MODE_ALL = 0          # HorizonTruncation + AllSurvive: stop at first absorption
_MODE_COUNT = 1        # HorizonTruncation + SurvivorCount: stop when all absorbed
_MODE_BARRIER = 2      # DualBarrier: stop at first absorption or min >= R


# ---------------------------------------------------------------------------
# policies

class Policy:
    """Immutable allocation rule; subclasses fill in :meth:`allocation`."""

    def allocation(self, x: np.ndarray, alive: np.ndarray,
                   params: DriftBudget) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"policy": type(self).__name__}

    def _kernel_args(self, n: int, params: DriftBudget):
        """(code, fixed_index, weights, grid_flat, grid_m) for the step kernel."""
        raise NotImplementedError


def _laggard_among(x: np.ndarray, alive: np.ndarray) -> int:
    """Index of the smallest alive coordinate (smallest index on ties), -1 if none."""
    if not alive.any():
        return -1
    return int(np.argmin(np.where(alive, x, np.inf)))


class Laggard(Policy):
    """Full budget to the smallest alive coordinate, smallest index on ties."""

    def allocation(self, x, alive, params):
        phi = np.zeros_like(x, dtype=float)
        sel = _laggard_among(x, alive)
        if sel >= 0:
            phi[sel] = params.budget
        return phi

    def _kernel_args(self, n, params):
        return _POL_LAGGARD, 0, np.zeros(n), _NO_GRID, 0


class Uniform(Policy):
    """Budget split equally among the alive coordinates."""

    def allocation(self, x, alive, params):
        phi = np.zeros_like(x, dtype=float)
        k = int(alive.sum())
        if k:
            phi[alive] = params.budget / k
        return phi

    def _kernel_args(self, n, params):
        return _POL_UNIFORM, 0, np.zeros(n), _NO_GRID, 0


class Fixed(Policy):
    """Full budget to one coordinate (1-based) while it is alive."""

    def __init__(self, index: int):
        if int(index) != index or index < 1:
            raise ConfigError(f"Fixed policy index must be a positive integer, got {index!r}")
        self.index = int(index)

    def allocation(self, x, alive, params):
        if self.index > x.size:
            raise ConfigError(f"Fixed({self.index}) needs at least {self.index} coordinates")
        phi = np.zeros_like(x, dtype=float)
        if alive[self.index - 1]:
            phi[self.index - 1] = params.budget
        return phi

    def descriptor(self):
        return {"policy": "Fixed", "index": self.index}

    def _kernel_args(self, n, params):
        if self.index > n:
            raise ConfigError(f"Fixed({self.index}) needs at least {self.index} coordinates")
        return _POL_FIXED, self.index - 1, np.zeros(n), _NO_GRID, 0


class ConstantSplit(Policy):
    """Fixed nonnegative per-coordinate rates; an absorbed coordinate's share
    is simply dropped, never reallocated."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ConfigError("ConstantSplit needs a 1-D list of weights")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ConfigError("ConstantSplit weights must be finite and nonnegative")
        self.weights = w

    def allocation(self, x, alive, params):
        if self.weights.size != x.size:
            raise ConfigError("ConstantSplit weight count must match the dimension")
        if self.weights.sum() > params.budget + 1e-12:
            raise ConfigError("ConstantSplit weights exceed the budget")
        return np.where(alive, self.weights, 0.0)

    def descriptor(self):
        return {"policy": "ConstantSplit", "weights": [float(w) for w in self.weights]}

    def _kernel_args(self, n, params):
        if self.weights.size != n:
            raise ConfigError("ConstantSplit weight count must match the dimension")
        if self.weights.sum() > params.budget + 1e-12:
            raise ConfigError("ConstantSplit weights exceed the budget")
        return _POL_CONSTANT, 0, self.weights.copy(), _NO_GRID, 0


class GridFeedback(Policy):
    """Full budget to the coordinate a solved policy field selects at the
    nearest grid node (compactified coordinates; no interpolation of the
    discrete index).  The field only ranks coordinates that are still in
    play, so if the selected coordinate is already absorbed the budget goes
    to the smallest alive coordinate instead — the allocation the
    lower-dimensional problem starts from."""

    def __init__(self, policy_field: PolicyField, grid: ValueGrid | None = None):
        self.field = policy_field
        self.grid = grid
        if grid is not None and grid.spec != policy_field.spec:
            raise ConfigError("GridFeedback value grid and policy field disagree on the grid spec")

    def _check(self, n, params):
        spec = self.field.spec
        if spec.n != n:
            raise ConfigError(f"GridFeedback field is {spec.n}-dimensional, run is {n}-dimensional")
        if spec.params != params:
            raise ConfigError("GridFeedback field was solved for different (b, budget) parameters")

    def select(self, x: np.ndarray) -> int:
        """0-based coordinate chosen at the node nearest to x."""
        spec = self.field.spec
        m = spec.m
        flat = 0
        for i in range(spec.n):
            j = int(round(compactify(float(x[i])) * (m - 1)))
            j = min(max(j, 1), m - 2)
            flat = flat * (m - 2) + (j - 1)
        return int(self.field.index.ravel()[flat]) - 1

    def allocation(self, x, alive, params):
        self._check(x.size, params)
        phi = np.zeros_like(x, dtype=float)
        sel = self.select(x)
        if not alive[sel]:
            sel = _laggard_among(x, alive)
        if sel >= 0:
            phi[sel] = params.budget
        return phi

    def descriptor(self):
        spec = self.field.spec
        return {"policy": "GridFeedback", "kind": spec.kind, "n": spec.n, "m": spec.m}

    def _kernel_args(self, n, params):
        self._check(n, params)
        return (_POL_GRID, 0, np.zeros(n),
                np.ascontiguousarray(self.field.index.ravel(), dtype=np.int8),
                self.field.spec.m)


_NO_GRID = np.zeros(1, dtype=np.int8)


# ---------------------------------------------------------------------------
# configuration and results

@dataclass(frozen=True)
class SimConfig:
    x0: tuple
    params: DriftBudget
    dt: float
    horizon: float
    paths: int
    seed: int
    barrier: float | None = None
    payoff: str = PAYOFF_ALL_SURVIVE
    estimator: str = EST_HORIZON

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.ndim != 1 or x0.size == 0:
            raise ConfigError("x0 must be a 1-D point")
        if not np.isfinite(x0).all() or (x0 < 0).any():
            raise ConfigError("x0 coordinates must be finite and nonnegative")
        object.__setattr__(self, "x0", tuple(float(v) for v in x0))
        if not (self.dt > 0):
            raise ConfigError("dt must be positive")
        if not (self.horizon > 0) or self.dt > self.horizon:
            raise ConfigError("horizon must satisfy 0 < dt <= horizon")
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.payoff not in (PAYOFF_ALL_SURVIVE, PAYOFF_SURVIVOR_COUNT):
            raise ConfigError(f"unknown payoff {self.payoff!r}")
        if self.estimator not in (EST_HORIZON, EST_DUAL_BARRIER):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.barrier is not None and not (self.barrier > 0):
            raise ConfigError("barrier must be positive when set")
        if self.estimator == EST_DUAL_BARRIER:
            if self.barrier is None:
                raise ConfigError("DualBarrier requires a success barrier")
            if self.payoff != PAYOFF_ALL_SURVIVE:
                raise ConfigError("DualBarrier scores the all-survive payoff only")

    @property
    def n(self) -> int:
        return len(self.x0)

    @property
    def mode(self) -> int:
        if self.estimator == EST_DUAL_BARRIER:
            return _MODE_BARRIER
        return _MODE_ALL if self.payoff == PAYOFF_ALL_SURVIVE else _MODE_COUNT

    @property
    def total_steps(self) -> int:
        return max(int(round(self.horizon / self.dt)), 1)

    def echo(self) -> dict:
        return {
            "x0": list(self.x0), "b": self.params.b, "budget": self.params.budget,
            "dt": self.dt, "horizon": self.horizon, "paths": self.paths,
            "seed": int(self.seed), "barrier": self.barrier,
            "payoff": self.payoff, "estimator": self.estimator,
        }


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    stderr: float
    ci95: tuple
    paths: int
    truncated_fraction: float
    mode: str

    def as_dict(self) -> dict:
        return {
            "mean": self.mean, "stderr": self.stderr,
            "ci95": [self.ci95[0], self.ci95[1]], "paths": self.paths,
            "truncated_fraction": self.truncated_fraction, "mode": self.mode,
        }


# ---------------------------------------------------------------------------
# single step (reference implementation)

def step(state, policy: Policy, params: DriftBudget, dt: float,
         noise, bridge_uniforms=None):
    """One Euler-Maruyama step; returns the next ``(values, alive)`` state.

    Alive coordinates move by ``(b + phi_i) dt + sqrt(dt) xi_i`` and are
    absorbed (clamped to 0) when the endpoint is <= 0.  With
    ``bridge_uniforms`` supplied, a coordinate whose endpoints are both
    positive is additionally absorbed when its uniform falls below the
    bridge crossing probability ``exp(-2 x x' / dt)``.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    x, alive = state
    x = np.asarray(x, dtype=float).copy()
    alive = np.asarray(alive, dtype=bool).copy()
    noise = np.asarray(noise, dtype=float)
    phi = policy.allocation(x, alive, params)
    assert (phi >= 0).all() and phi.sum() <= params.budget + 1e-12
    assert not phi[~alive].any()
    sq = math.sqrt(dt)
    for i in range(x.size):
        if not alive[i]:
            continue
        x_new = x[i] + (params.b + phi[i]) * dt + sq * noise[i]
        dead = x_new <= 0.0
        if not dead and bridge_uniforms is not None:
            dead = bridge_uniforms[i] < math.exp(-2.0 * x[i] * x_new / dt)
        if dead:
            x[i] = 0.0
            alive[i] = False
        else:
            x[i] = x_new
    return x, alive


# ---------------------------------------------------------------------------
# batched kernel

@njit(cache=True, nogil=True)
def _chunk_kernel(x, alive, status, normals, uniforms, active_idx,
                  absorb_step, success_step, step0, k_steps,
                  b, budget, dt, sqdt, barrier, mode,
                  pol_code, pol_fixed, pol_weights, pol_grid, pol_m):
    A, n = x.shape
    phi = np.empty(n)
    for a in range(A):
        if status[a] != 0:
            continue
        rec = active_idx[a]
        for k in range(k_steps):
            # allocation from the current state
            for i in range(n):
                phi[i] = 0.0
            if pol_code == 0:
                best = -1
                for i in range(n):
                    if alive[a, i] and (best < 0 or x[a, i] < x[a, best]):
                        best = i
                if best >= 0:
                    phi[best] = budget
            elif pol_code == 1:
                cnt = 0
                for i in range(n):
                    if alive[a, i]:
                        cnt += 1
                if cnt > 0:
                    share = budget / cnt
                    for i in range(n):
                        if alive[a, i]:
                            phi[i] = share
            elif pol_code == 2:
                if alive[a, pol_fixed]:
                    phi[pol_fixed] = budget
            elif pol_code == 3:
                for i in range(n):
                    if alive[a, i]:
                        phi[i] = pol_weights[i]
            else:
                flat = 0
                for i in range(n):
                    yi = x[a, i] / (1.0 + x[a, i])
                    j = int(round(yi * (pol_m - 1)))
                    if j < 1:
                        j = 1
                    elif j > pol_m - 2:
                        j = pol_m - 2
                    flat = flat * (pol_m - 2) + (j - 1)
                sel = pol_grid[flat] - 1
                if not alive[a, sel]:
                    sel = -1
                    for i in range(n):
                        if alive[a, i] and (sel < 0 or x[a, i] < x[a, sel]):
                            sel = i
                if sel >= 0:
                    phi[sel] = budget

            # move alive coordinates; bridge-corrected absorption
            newly_dead = False
            for i in range(n):
                if not alive[a, i]:
                    continue
                x_old = x[a, i]
                x_new = x_old + (b + phi[i]) * dt + sqdt * normals[a, k, i]
                dead = x_new <= 0.0
                if not dead:
                    if uniforms[a, k, i] < np.exp(-2.0 * x_old * x_new / dt):
                        dead = True
                if dead:
                    x[a, i] = 0.0
                    alive[a, i] = False
                    absorb_step[rec, i] = step0 + k + 1
                    newly_dead = True
                else:
                    x[a, i] = x_new

            if mode == 0 or mode == 2:
                if newly_dead:
                    status[a] = 2
                    break
                if mode == 2:
                    lo = x[a, 0]
                    for i in range(1, n):
                        if x[a, i] < lo:
                            lo = x[a, i]
                    if lo >= barrier:
                        status[a] = 1
                        success_step[rec] = step0 + k + 1
                        break
            else:
                all_dead = True
                for i in range(n):
                    if alive[a, i]:
                        all_dead = False
                        break
                if all_dead:
                    status[a] = 2
                    break


# ---------------------------------------------------------------------------
# drivers

def _path_generator(seed: int, path_index: int) -> np.random.Generator:
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_paths(config: SimConfig, policy: Policy, lo: int, hi: int,
               absorb_step: np.ndarray, success_step: np.ndarray,
               rec_offset: int = 0) -> None:
    """Simulate paths [lo, hi); path p writes record row ``p - rec_offset``."""
    n = config.n
    params = config.params
    pol_code, pol_fixed, pol_weights, pol_grid, pol_m = policy._kernel_args(n, params)
    x0 = np.asarray(config.x0)
    alive0 = x0 > 0.0
    total = config.total_steps
    mode = config.mode
    barrier = -1.0 if config.barrier is None else float(config.barrier)
    sqdt = math.sqrt(config.dt)

    if mode in (_MODE_ALL, _MODE_BARRIER) and not alive0.all():
        return  # payoff settled at time zero
    if mode == _MODE_COUNT and not alive0.any():
        return
    if mode == _MODE_BARRIER and x0.min() >= barrier:
        success_step[lo - rec_offset:hi - rec_offset] = 0
        return

    for batch_lo in range(lo, hi, _BATCH_PATHS):
        batch_hi = min(batch_lo + _BATCH_PATHS, hi)
        count = batch_hi - batch_lo
        gens = [_path_generator(config.seed, p) for p in range(batch_lo, batch_hi)]
        x = np.tile(x0, (count, 1))
        alive = np.tile(alive0, (count, 1))
        status = np.zeros(count, dtype=np.int8)
        active_idx = np.arange(batch_lo - rec_offset, batch_hi - rec_offset,
                               dtype=np.int64)

        step0 = 0
        while step0 < total and len(gens) > 0:
            k_steps = min(CHUNK_STEPS, total - step0)
            A = len(gens)
            normals = np.empty((A, k_steps, n))
            uniforms = np.empty((A, k_steps, n))
            for a in range(A):
                gens[a].standard_normal(out=normals[a])
            for a in range(A):
                gens[a].random(out=uniforms[a])
            _chunk_kernel(x, alive, status, normals, uniforms, active_idx,
                          absorb_step, success_step, step0, k_steps,
                          params.b, params.budget, config.dt, sqdt, barrier,
                          mode, pol_code, pol_fixed, pol_weights, pol_grid, pol_m)
            step0 += k_steps
            keep = status == 0
            if not keep.all():
                x = x[keep]
                alive = alive[keep]
                status = status[keep]
                active_idx = active_idx[keep]
                gens = [g for g, kp in zip(gens, keep) if kp]


def _simulate_records(config: SimConfig, policy: Policy, threads: int = 1):
    """Full-run absorption/success step records for every path.

    ``absorb_step[p, i]`` is the step at which coordinate i of path p was
    absorbed (0 = absorbed at time zero, -1 = still alive when the path
    ended); ``success_step[p]`` is the step at which the barrier rule fired.
    """
    M = config.paths
    x0 = np.asarray(config.x0)
    absorb_step = np.where(x0 > 0.0, np.int64(-1), np.int64(0))
    absorb_step = np.tile(absorb_step, (M, 1))
    success_step = np.full(M, -1, dtype=np.int64)

    threads = max(int(threads), 1)
    if threads == 1 or M < 2 * threads:
        _run_paths(config, policy, 0, M, absorb_step, success_step)
    else:
        bounds = np.linspace(0, M, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_paths, config, policy, int(a), int(b),
                            absorb_step, success_step)
                for a, b in zip(bounds[:-1], bounds[1:]) if b > a
            ]
            for f in futures:
                f.result()
    return absorb_step, success_step


def _payoffs_at(config: SimConfig, absorb_step, success_step, steps_cap: int):
    """Per-path payoffs and truncation flags for a horizon of ``steps_cap``."""
    absorbed = (absorb_step >= 0) & (absorb_step <= steps_cap)
    mode = config.mode
    if mode == _MODE_COUNT:
        payoff = (config.n - absorbed.sum(axis=1)).astype(float)
        truncated = absorbed.sum(axis=1) < config.n
    else:
        hit = absorbed.any(axis=1)
        payoff = 1.0 - hit.astype(float)
        if mode == _MODE_BARRIER:
            succeeded = (success_step >= 0) & (success_step <= steps_cap)
            truncated = ~hit & ~succeeded
        else:
            truncated = ~hit
    return payoff, truncated


def _aggregate(config: SimConfig, payoff: np.ndarray,
               truncated: np.ndarray) -> SimEstimate:
    M = payoff.size
    mean = float(payoff.mean())
    stderr = float(payoff.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return SimEstimate(
        mean=mean, stderr=stderr,
        ci95=(mean - 1.96 * stderr, mean + 1.96 * stderr),
        paths=M, truncated_fraction=float(truncated.mean()),
        mode=config.estimator,
    )


def run_path(config: SimConfig, policy: Policy, path_index: int) -> float:
    """Payoff of one path, identical to its value inside :func:`estimate`."""
    if path_index < 0:
        raise ConfigError("path_index must be nonnegative")
    x0 = np.asarray(config.x0)
    absorb_step = np.tile(np.where(x0 > 0.0, np.int64(-1), np.int64(0)), (1, 1))
    success_step = np.full(1, -1, dtype=np.int64)
    _run_paths(config, policy, path_index, path_index + 1,
               absorb_step, success_step, rec_offset=path_index)
    payoff, _ = _payoffs_at(config, absorb_step, success_step, config.total_steps)
    return float(payoff[0])


def estimate(config: SimConfig, policy: Policy, threads: int = 1) -> SimEstimate:
    """Monte Carlo estimate over ``config.paths`` independent paths."""
    if config.paths < 2:
        raise ConfigError("estimate needs at least 2 paths for a standard error")
    absorb_step, success_step = _simulate_records(config, policy, threads)
    payoff, truncated = _payoffs_at(config, absorb_step, success_step,
                                    config.total_steps)
    return _aggregate(config, payoff, truncated)


def horizon_schedule(config: SimConfig, policy: Policy, horizons,
                     threads: int = 1) -> list:
    """Estimates at several horizons from one pass with common random numbers.

    The paths are simulated once to the largest horizon; each smaller horizon
    reads the same absorption/success records, so per-path payoffs are
    exactly nonincreasing along the schedule.
    """
    horizons = [float(T) for T in horizons]
    if len(horizons) == 0:
        raise ConfigError("horizon schedule must be nonempty")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigError("horizons must be strictly increasing")
    if config.paths < 2:
        raise ConfigError("estimate needs at least 2 paths for a standard error")
    caps = [max(int(round(T / config.dt)), 1) for T in horizons]
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ConfigError("horizons collapse onto equal step counts at this dt")
    full = SimConfig(x0=config.x0, params=config.params, dt=config.dt,
                     horizon=horizons[-1], paths=config.paths, seed=config.seed,
                     barrier=config.barrier, payoff=config.payoff,
                     estimator=config.estimator)
    absorb_step, success_step = _simulate_records(full, policy, threads)
    out = []
    for cap in caps:
        payoff, truncated = _payoffs_at(full, absorb_step, success_step, cap)
        out.append(_aggregate(full, payoff, truncated))
    return out
