"""Grids, the clock V, scalar fields with interpolation, and the problem data model.

All types are immutable after construction and safe to share across workers.
State space is R^d with d configurable; spatial evaluation off the grid clamps
to the nearest boundary node.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class ClockV:
    """Non-decreasing continuous clock V with V(0) = 0.

    ``identity`` is V(t) = t.  ``tabulated`` interpolates piecewise-linearly
    between (time, value) samples; the sample range is the clock's domain.
    """

    kind: str = "identity"
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("identity", "tabulated"):
            raise ConfigurationError(f"unknown clock kind {self.kind!r}")
        if self.kind == "tabulated":
            t = np.asarray(self.times, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 2:
                raise ConfigurationError("tabulated clock needs matching 1-d time/value samples")
            if np.any(np.diff(t) <= 0):
                raise ConfigurationError("clock sample times must be strictly increasing")
            if np.any(np.diff(v) < 0):
                raise ConfigurationError("clock must be non-decreasing")
            if t[0] > 0:
                raise ConfigurationError("clock samples must start at or before t=0")
            if abs(self.value(0.0)) > 1e-12:
                raise ConfigurationError("clock must satisfy V(0) = 0")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", v)

    def covers(self, t_min: float, t_max: float) -> bool:
        if self.kind == "identity":
            return True
        return self.times[0] <= t_min and self.times[-1] >= t_max

    def value(self, t):
        """V(t), vectorized over t."""
        if self.kind == "identity":
            return np.asarray(t, dtype=float)
        return np.interp(t, self.times, self.values)


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform container for the discretization of [t0, T] x product of intervals."""

    times: np.ndarray
    space_min: np.ndarray
    space_max: np.ndarray
    space_nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        lo = np.atleast_1d(np.asarray(self.space_min, dtype=float))
        hi = np.atleast_1d(np.asarray(self.space_max, dtype=float))
        n = np.atleast_1d(np.asarray(self.space_nodes, dtype=int))
        if t.ndim != 1 or t.size < 2:
            raise ConfigurationError("grid needs at least 2 time points")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("grid times must be strictly increasing")
        if not (lo.shape == hi.shape == n.shape):
            raise ConfigurationError("space_min/space_max/space_nodes shapes disagree")
        if np.any(lo >= hi):
            raise ConfigurationError("space_min must be < space_max componentwise")
        if np.any(n < 2):
            raise ConfigurationError("need at least 2 space nodes per dimension")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "space_min", lo)
        object.__setattr__(self, "space_max", hi)
        object.__setattr__(self, "space_nodes", n)

    @property
    def dimension(self) -> int:
        return self.space_min.size

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(self.space_min[k], self.space_max[k], self.space_nodes[k])
            for k in range(self.dimension)
        ]

    def nodes(self) -> np.ndarray:
        """All spatial nodes as an (n_nodes, d) array, C-order over the axes."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def space_shape(self) -> tuple[int, ...]:
        return tuple(int(k) for k in self.space_nodes)

    @classmethod
    def regular(cls, horizon, time_steps, space_min, space_max, space_nodes, t0=0.0):
        return cls(
            times=np.linspace(t0, horizon, time_steps + 1),
            space_min=np.atleast_1d(space_min),
            space_max=np.atleast_1d(space_max),
            space_nodes=np.atleast_1d(space_nodes),
        )


def v_increments(grid: SpaceTimeGrid, clock: ClockV) -> np.ndarray:
    """Quadrature weights dV_i = V(t_{i+1}) - V(t_i) over the grid times."""
    if not clock.covers(grid.times[0], grid.times[-1]):
        raise ConfigurationError(
            f"clock domain does not cover grid times [{grid.times[0]}, {grid.times[-1]}]"
        )
    vals = clock.value(grid.times)
    inc = np.diff(vals)
    # interpolation of a non-decreasing table cannot produce negative steps,
    # but guard against float dust
    inc[np.abs(inc) < 1e-15] = np.abs(inc[np.abs(inc) < 1e-15])
    return inc


@dataclass(frozen=True)
class ScalarField:
    """Field values on grid times x grid nodes, multilinear in space.

    ``values`` has shape (n_times, *space_shape).  Evaluation between nodes is
    multilinear per axis; points outside the bounds are clamped to the nearest
    boundary node.  There is no temporal interpolation: evaluation is always
    at a grid time index.
    """

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        want = (self.grid.n_times,) + self.grid.space_shape
        if v.shape != want:
            raise InputError(f"field values shape {v.shape} != grid shape {want}")
        if not np.all(np.isfinite(v)):
            raise InputError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, c: float) -> "ScalarField":
        return cls(grid, np.full((grid.n_times,) + grid.space_shape, float(c)))

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn: Callable) -> "ScalarField":
        """Tabulate fn(t, points) with points of shape (n_nodes, d)."""
        pts = grid.nodes()
        rows = [np.asarray(fn(t, pts), dtype=float).reshape(grid.space_shape) for t in grid.times]
        return cls(grid, np.stack(rows, axis=0))

    def at(self, time_index: int, x) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return float(self.at_points(time_index, x)[0])

    def at_points(self, time_index: int, points: np.ndarray) -> np.ndarray:
        """Vectorized multilinear interpolation at points (n, d), clamped to bounds."""
        if not 0 <= time_index < self.grid.n_times:
            raise InputError(f"time index {time_index} out of range")
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if not np.all(np.isfinite(points)):
            raise InputError("interpolation points must be finite")
        return _multilinear(self.grid.axes, self.values[time_index], points)


def _multilinear(axes: list[np.ndarray], table: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of table (shape per axes) at points (n, d)."""
    d = len(axes)
    if d == 1:
        return np.interp(points[:, 0], axes[0], table)
    idx = []
    frac = []
    for k, ax in enumerate(axes):
        x = np.clip(points[:, k], ax[0], ax[-1])
        i = np.searchsorted(ax, x, side="right") - 1
        i = np.clip(i, 0, ax.size - 2)
        idx.append(i)
        frac.append((x - ax[i]) / (ax[i + 1] - ax[i]))
    out = np.zeros(points.shape[0])
    for corner in range(1 << d):
        w = np.ones(points.shape[0])
        loc = []
        for k in range(d):
            if corner >> k & 1:
                w = w * frac[k]
                loc.append(idx[k] + 1)
            else:
                w = w * (1.0 - frac[k])
                loc.append(idx[k])
        out += w * table[tuple(loc)]
    return out


def interpolate(fld: ScalarField, time_index: int, x) -> float:
    """Field value at a grid time and an arbitrary spatial point."""
    return fld.at(time_index, x)


def field_distance(a: ScalarField, b: ScalarField) -> float:
    """Sup norm over grid nodes of |a - b|; the fixed-point stopping metric."""
    if a.grid is not b.grid and (
        a.grid.space_shape != b.grid.space_shape
        or a.grid.n_times != b.grid.n_times
        or not np.array_equal(a.grid.times, b.grid.times)
    ):
        raise InputError("field grids differ")
    return float(np.max(np.abs(a.values - b.values)))


@dataclass
class LipschitzDriver:
    """Driver f(t, x, y, z) with declared Lipschitz constants in y and z.

    ``fn`` is vectorized: x is (n, d), y and z are (n,), t is a scalar.
    Constants are user-declared; ``check_lipschitz`` spot-checks them with
    sampled difference quotients and warns (never errors) on violation.
    """

    fn: Callable
    K_Y: float = 0.0
    K_Z: float = 0.0
    C_prime: float = 0.0
    lipschitz_verified: bool = False

    def __post_init__(self):
        if self.K_Y < 0 or self.K_Z < 0 or self.C_prime < 0:
            raise ConfigurationError("K_Y, K_Z, C_prime must be nonnegative")

    def __call__(self, t, x, y, z):
        return np.asarray(self.fn(t, x, y, z), dtype=float)

    def check_lipschitz(self, t_range, space_box, n_samples=512, seed=0, slack=0.01):
        """Sample finite-difference quotients in y and z against K_Y, K_Z.

        Sets ``lipschitz_verified`` on success; warns and leaves it False when
        a sampled quotient exceeds the declared constant by more than `slack`.
        """
        rng = np.random.default_rng(seed)
        lo, hi = np.atleast_1d(space_box[0]), np.atleast_1d(space_box[1])
        d = lo.size
        ok = True
        for _ in range(8):
            t = rng.uniform(t_range[0], t_range[1])
            x = rng.uniform(lo, hi, size=(n_samples, d))
            y = rng.uniform(-5, 5, n_samples)
            z = rng.uniform(0, 5, n_samples)
            h = 10.0 ** rng.uniform(-4, -1)
            qy = np.abs(self(t, x, y + h, z) - self(t, x, y, z)) / h
            qz = np.abs(self(t, x, y, z + h) - self(t, x, y, z)) / h
            if np.any(qy > self.K_Y * (1 + slack) + 1e-12):
                warnings.warn(
                    f"sampled y-quotient {qy.max():.4g} exceeds declared K_Y={self.K_Y}"
                )
                ok = False
            if np.any(qz > self.K_Z * (1 + slack) + 1e-12):
                warnings.warn(
                    f"sampled z-quotient {qz.max():.4g} exceeds declared K_Z={self.K_Z}"
                )
                ok = False
        self.lipschitz_verified = ok
        return ok


@dataclass
class ProblemSpec:
    """One full problem instance: generator + driver + terminal condition + clock.

    ``terminal_g`` is vectorized over points (n, d) -> (n,).  ``growth_zeta``
    and ``growth_eta`` are the declared polynomial growth exponents of g and
    f(.,.,0,0), used for moment sanity warnings only.
    """

    generator: object
    driver: LipschitzDriver
    terminal_g: Callable
    horizon_T: float
    clock: ClockV = field(default_factory=ClockV)
    growth_zeta: float = 0.0
    growth_eta: float = 0.0

    def __post_init__(self):
        if self.horizon_T <= 0:
            raise ConfigurationError("horizon_T must be positive")
        if not self.clock.covers(0.0, self.horizon_T):
            raise ConfigurationError("clock domain does not cover [0, horizon_T]")

    def g(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        return np.asarray(self.terminal_g(points), dtype=float)
