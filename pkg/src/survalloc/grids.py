"""Grid containers and their on-disk format.

A solved value function lives on the uniform lattice of the compactified unit
cube.  On disk a grid is the pair ``<name>.meta.json`` + ``<name>.f64le``: the
metadata records the problem (kind, n, m, b, budget, tolerances) plus a SHA-256
of the payload, and the payload is exactly m**n little-endian float64 values in
row-major order over the compactified indices.  Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .closedform import DriftBudget, compactify, decompactify
from .errors import GridFormatError, KindMismatchError, RegimeError

FORMAT_VERSION = 1
_SUFFIX_META = ".meta.json"
_SUFFIX_PAYLOAD = ".f64le"

KIND_V = "V"
KIND_U = "U"


@dataclass(frozen=True)
class GridSpec:
    """Discretization of one solve: dimension, nodes per axis, problem kind."""

    n: int
    m: int
    kind: str
    params: DriftBudget

    def __post_init__(self):
        if self.kind not in (KIND_V, KIND_U):
            raise ValueError(f"kind must be 'V' or 'U', got {self.kind!r}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.m < 17 or self.m % 2 == 0:
            raise ValueError(f"m must be odd and >= 17, got {self.m}")
        if self.params.b < 0:
            raise RegimeError(
                f"grid solves require drift b >= 0 (no boundary data at infinity "
                f"is available below zero drift); got b = {self.params.b}"
            )

    @property
    def h(self) -> float:
        return 1.0 / (self.m - 1)

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    def axis(self) -> np.ndarray:
        """Compactified node coordinates along one axis."""
        return np.linspace(0.0, 1.0, self.m)

    def axis_x(self) -> np.ndarray:
        """Decompactified (orthant) node coordinates along one axis."""
        return decompactify(self.axis())


@dataclass(frozen=True)
class ValueGrid:
    """A converged value function plus its solve diagnostics."""

    spec: GridSpec
    values: np.ndarray
    residual: float
    iterations: int
    tolerance: float = 1e-8

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.spec.shape:
            raise ValueError(f"values shape {v.shape} != {self.spec.shape}")
        object.__setattr__(self, "values", v)

    def payload_sha256(self) -> str:
        return hashlib.sha256(self.values.astype("<f8").tobytes()).hexdigest()

    def interpolator(self):
        """Callable evaluating the grid at orthant coordinates (multilinear on
        the underlying uniform compactified lattice, so arbitrarily large
        coordinates are handled without special cases)."""
        from scipy.interpolate import RegularGridInterpolator

        axes = [self.spec.axis()] * self.spec.n
        rgi = RegularGridInterpolator(axes, self.values, method="linear",
                                      bounds_error=False, fill_value=None)

        def evaluate(points):
            return rgi(compactify(np.asarray(points, dtype=float)))

        return evaluate


@dataclass(frozen=True)
class PolicyField:
    """Per-interior-node allocation choice: the 1-based coordinate index that
    receives the full budget (argmax of the orthant-coordinate partials,
    smallest index on ties)."""

    spec: GridSpec
    index: np.ndarray  # shape (m-2,)*n, values in 1..n

    def __post_init__(self):
        idx = np.asarray(self.index)
        if idx.shape != (self.spec.m - 2,) * self.spec.n:
            raise ValueError("policy index shape does not match interior lattice")
        object.__setattr__(self, "index", idx)


@dataclass(frozen=True)
class GradientField:
    """Per-interior-node orthant-coordinate partials d/dx_i, recovered from the
    compactified grid as gamma_i(y) times a second-order difference in y."""

    spec: GridSpec
    partials: np.ndarray  # shape (m-2,)*n + (n,)

    def __post_init__(self):
        g = np.asarray(self.partials, dtype=float)
        want = (self.spec.m - 2,) * self.spec.n + (self.spec.n,)
        if g.shape != want:
            raise ValueError(f"partials shape {g.shape} != {want}")
        object.__setattr__(self, "partials", g)


def _paths(path):
    p = str(path)
    for suf in (_SUFFIX_META, _SUFFIX_PAYLOAD):
        if p.endswith(suf):
            p = p[: -len(suf)]
            break
    return p + _SUFFIX_META, p + _SUFFIX_PAYLOAD


def save_grid(grid: ValueGrid, path) -> None:
    """Write ``<path>.meta.json`` and ``<path>.f64le`` (suffixes added or
    normalized automatically)."""
    meta_path, payload_path = _paths(path)
    payload = grid.values.astype("<f8").tobytes()
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": grid.spec.kind,
        "n": grid.spec.n,
        "m": grid.spec.m,
        "b": grid.spec.params.b,
        "budget": grid.spec.params.budget,
        "tolerance": grid.tolerance,
        "residual": grid.residual,
        "iterations": grid.iterations,
        "index_order": "row-major",
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(payload_path, "wb") as f:
        f.write(payload)
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_grid(path) -> ValueGrid:
    """Read a grid pair back; validates version, shape, and checksum."""
    meta_path, payload_path = _paths(path)
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise GridFormatError(f"missing grid metadata: {meta_path}")
    except json.JSONDecodeError as e:
        raise GridFormatError(f"unreadable grid metadata {meta_path}: {e}")

    if meta.get("format_version") != FORMAT_VERSION:
        raise GridFormatError(
            f"{meta_path}: format_version {meta.get('format_version')!r} "
            f"not supported (expected {FORMAT_VERSION})"
        )
    if meta.get("index_order") != "row-major":
        raise GridFormatError(f"{meta_path}: unsupported index_order")

    try:
        n, m = int(meta["n"]), int(meta["m"])
        spec = GridSpec(n=n, m=m, kind=meta["kind"],
                        params=DriftBudget(b=float(meta["b"]),
                                           budget=float(meta["budget"])))
    except (KeyError, ValueError, TypeError) as e:
        raise GridFormatError(f"{meta_path}: bad metadata ({e})")

    try:
        with open(payload_path, "rb") as f:
            payload = f.read()
    except FileNotFoundError:
        raise GridFormatError(f"missing grid payload: {payload_path}")

    expected = m ** n * 8
    if len(payload) != expected:
        raise GridFormatError(
            f"{payload_path}: payload is {len(payload)} bytes, expected "
            f"{expected} for an m={m}, n={n} grid"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != meta.get("payload_sha256"):
        raise GridFormatError(f"{payload_path}: payload checksum mismatch")

    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape(spec.shape)
    return ValueGrid(spec=spec, values=values,
                     residual=float(meta["residual"]),
                     iterations=int(meta["iterations"]),
                     tolerance=float(meta["tolerance"]))


def require_kind(grid: ValueGrid, kind: str, context: str = "") -> None:
    if grid.spec.kind != kind:
        where = f" for {context}" if context else ""
        raise KindMismatchError(
            f"expected a kind-{kind} grid{where}, got kind {grid.spec.kind}"
        )
