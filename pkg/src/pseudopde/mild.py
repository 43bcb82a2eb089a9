"""Picard iteration on the coupled semigroup integral system for (u, v).

The unknown pair solves, for every grid cell (s, x),

    u(s,x)   = E[g(X_T)]   + E[ sum_j f(t_j, X_j, u, v) dV_j ]
    u^2(s,x) = E[g(X_T)^2] - E[ sum_j (v^2 - 2 u f)(t_j, X_j) dV_j ]

with all expectations read from one frozen ensemble cache (common random
numbers), so the iteration map is deterministic and its geometric contraction
is directly observable in the delta history.

Two v-identification schemes are provided: ``volterra`` solves the second
line backward in time for w = v^2 (left-endpoint quadrature makes the r = s
term explicit); ``variance`` estimates w as the conditional variance rate of
one-step increments of u along the cached paths.  The volterra route divides
by dV per row, which amplifies Monte-Carlo noise by 1/dV; ``variance`` is the
default for that reason.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ProblemSpec, ScalarField, field_distance
from .errors import ConfigurationError, NumericalError
from .semigroup import EnsembleCache

_CARRY = np.nan  # sentinel for rows awaiting neighbor carry


@dataclass
class PicardConfig:
    max_iterations: int = 20
    tolerance: float = 1e-4
    v_scheme: str = "variance"
    damping: float = 1.0

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError("damping factor must lie in (0, 1]")
        if self.v_scheme not in ("volterra", "variance"):
            raise ConfigurationError(f"unknown v scheme {self.v_scheme!r}")


@dataclass
class ClampTelemetry:
    """Negative-variance clamping record: v >= 0 is definitional, so negative
    w = v^2 values (Monte-Carlo noise, quadrature bias) clamp to zero and are
    accounted for here."""

    count: int = 0
    total_mass: float = 0.0
    max_magnitude: float = 0.0


@dataclass
class ResidualReport:
    residual_1: float
    residual_2: float
    stderr_floor_1: float
    stderr_floor_2: float


@dataclass
class MildSolution:
    u: ScalarField
    v: ScalarField
    u_stderr: np.ndarray
    v_stderr: np.ndarray
    iterations: int
    deltas: list
    converged: bool
    residuals: ResidualReport
    clamp: ClampTelemetry
    out_of_bounds_fraction: float = 0.0


def _flat(fieldobj: ScalarField) -> np.ndarray:
    return fieldobj.values.reshape(fieldobj.grid.n_times, -1)


def _unflat(grid, arr: np.ndarray) -> ScalarField:
    return ScalarField(grid, arr.reshape((grid.n_times,) + grid.space_shape))


def _interp_row(grid, row_values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of one time row (flat node values) at points."""
    from .core import _multilinear

    return _multilinear(grid.axes, row_values.reshape(grid.space_shape), points)


def _driver_along_paths(problem, cache, u_rows, v_rows, s_index, node_index):
    """Per-path sums  sum_j f(t_j, X_j, u(t_j,X_j), v(t_j,X_j)) dV_j  over [s, T).

    ``v_rows = None`` declares the driver z-independent (K_Z = 0) and skips
    the v interpolation entirely.
    """
    grid = cache.grid
    paths = cache.cell(s_index, node_index)
    acc = np.zeros(paths.shape[0])
    for j_local in range(paths.shape[1] - 1):
        j = s_index + j_local
        if cache.dvs[j] == 0.0:
            continue
        xs = paths[:, j_local, :]
        uu = _interp_row(grid, u_rows[j], xs)
        vv = _interp_row(grid, v_rows[j], xs) if v_rows is not None else np.zeros(1)
        acc += problem.driver(grid.times[j], xs, uu, vv) * cache.dvs[j]
    return acc


def update_u(u_k: ScalarField, v_k: ScalarField, problem: ProblemSpec, cache: EnsembleCache):
    """One sweep of the first line: terminal expectation plus running driver term.

    Returns the updated field and its per-cell stderr (pathwise combined).
    """
    grid = cache.grid
    n_t, n_nodes = grid.n_times, cache.n_nodes
    u_rows = _flat(u_k)
    v_rows = _flat(v_k) if problem.driver.K_Z > 0 else None
    out = np.empty((n_t, n_nodes))
    se = np.zeros((n_t, n_nodes))
    for i in range(n_t):
        for nd in range(n_nodes):
            paths = cache.cell(i, nd)
            vals = problem.g(paths[:, -1, :])
            if i < n_t - 1:
                vals = vals + _driver_along_paths(problem, cache, u_rows, v_rows, i, nd)
            out[i, nd] = np.mean(vals)
            if vals.size > 1:
                se[i, nd] = np.std(vals, ddof=1) / np.sqrt(vals.size)
    # terminal row is exact: the running integral vanishes at s = T
    out[-1] = problem.g(cache.nodes)
    se[-1] = 0.0
    if not np.all(np.isfinite(out)):
        raise NumericalError("u update produced non-finite values")
    return _unflat(grid, out), se


def _clamp_w(w: np.ndarray, telemetry: ClampTelemetry) -> np.ndarray:
    neg = w < 0
    if np.any(neg):
        telemetry.count += int(np.sum(neg))
        telemetry.total_mass += float(np.sum(-w[neg]))
        telemetry.max_magnitude = max(telemetry.max_magnitude, float(np.max(-w[neg])))
    return np.clip(w, 0.0, None)


def _fill_carries(w: np.ndarray, se_w: np.ndarray, computed: np.ndarray):
    """Rows without an identified value inherit the next (later) row; the
    terminal row inherits its left neighbor.  On V-flat stretches the density
    v^2 is not identified and continuity is one admissible representative."""
    n_t = w.shape[0]
    if not np.any(computed):
        warnings.warn("clock is flat on the whole grid: v is not identified, set to 0")
        w[:] = 0.0
        se_w[:] = 0.0
        return
    for i in range(n_t - 2, -1, -1):
        if not computed[i]:
            w[i] = w[i + 1]
            se_w[i] = se_w[i + 1]
            computed[i] = True
    last = np.where(computed)[0].max()
    for i in range(last + 1, n_t):
        w[i] = w[last]
        se_w[i] = se_w[last]


def update_v_variance(
    u_next: ScalarField, v_prev: ScalarField, problem: ProblemSpec, cache: EnsembleCache
):
    """v^2 as the conditional variance rate of one-step increments of u.

    Per cell, w = E[(u(t_{i+1}, X_{t_{i+1}}) - u(t_i, x) + f dV_i)^2] / dV_i:
    the squared increment of the compensated part of u along the cached paths.
    """
    grid = cache.grid
    n_t, n_nodes = grid.n_times, cache.n_nodes
    u_rows, v_rows = _flat(u_next), _flat(v_prev)
    w = np.full((n_t, n_nodes), _CARRY)
    se_w = np.zeros((n_t, n_nodes))
    computed = np.zeros(n_t, dtype=bool)
    telemetry = ClampTelemetry()
    for i in range(n_t - 1):
        dv = cache.dvs[i]
        if dv <= 0.0:
            warnings.warn(f"dV = 0 on step {i}: carrying the neighboring v value")
            continue
        t_i = grid.times[i]
        f_row = problem.driver(t_i, cache.nodes, u_rows[i], v_rows[i])
        for nd in range(n_nodes):
            paths = cache.cell(i, nd)
            u_then = _interp_row(grid, u_rows[i + 1], paths[:, 1, :])
            incr = u_then - u_rows[i, nd] + f_row[nd] * dv
            sq = incr * incr
            w[i, nd] = np.mean(sq) / dv
            if sq.size > 1:
                se_w[i, nd] = np.std(sq, ddof=1) / np.sqrt(sq.size) / dv
        computed[i] = True
    _fill_carries(w, se_w, computed)
    w = _clamp_w(w, telemetry)
    v = np.sqrt(w)
    se_v = np.where(v > 1e-8, se_w / (2.0 * np.maximum(v, 1e-8)), np.sqrt(se_w))
    return _unflat(grid, v), se_v, telemetry


def update_v_volterra(
    u_next: ScalarField, v_prev: ScalarField, problem: ProblemSpec, cache: EnsembleCache
):
    """Backward time-stepping solve of the second line for w = v^2.

    With left-endpoint quadrature the r = t_i term of the running integral is
    (w - 2 u f)(t_i, x) dV_i exactly (the kernel at zero lag is the identity),
    so each row solves

      w(t_i,x) dV_i = E[g^2(X_T)] - u^2(t_i,x) + 2 u f(t_i,x) dV_i
                      - E[ sum_{j>i} (w - 2 u f)(t_j, X_j) dV_j ].

    The division by dV_i amplifies Monte-Carlo noise; the reported stderr
    combines the cell's path noise with the interpolated noise of later rows.
    """
    grid = cache.grid
    n_t, n_nodes = grid.n_times, cache.n_nodes
    u_rows, v_rows = _flat(u_next), _flat(v_prev)
    w = np.full((n_t, n_nodes), _CARRY)
    se_w = np.zeros((n_t, n_nodes))
    computed = np.zeros(n_t, dtype=bool)
    telemetry = ClampTelemetry()
    row_mean_se = np.zeros(n_t)

    for i in range(n_t - 2, -1, -1):
        dv = cache.dvs[i]
        if dv <= 0.0:
            warnings.warn(f"dV = 0 on step {i}: carrying the neighboring v value")
            continue
        t_i = grid.times[i]
        f_here = problem.driver(t_i, cache.nodes, u_rows[i], v_rows[i])
        sys_var = float(np.sum((cache.dvs[i + 1 : n_t - 1] * row_mean_se[i + 1 : n_t - 1]) ** 2))
        for nd in range(n_nodes):
            paths = cache.cell(i, nd)
            vals = problem.g(paths[:, -1, :]) ** 2
            for j_local in range(1, paths.shape[1] - 1):
                j = i + j_local
                if cache.dvs[j] == 0.0:
                    continue
                xs = paths[:, j_local, :]
                uu = _interp_row(grid, u_rows[j], xs)
                vv = _interp_row(grid, v_rows[j], xs)
                ww = _interp_row(grid, w[j], xs)
                ff = problem.driver(grid.times[j], xs, uu, vv)
                vals = vals - (ww - 2.0 * uu * ff) * cache.dvs[j]
            est = float(np.mean(vals))
            se_path = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            w[i, nd] = (est - u_rows[i, nd] ** 2) / dv + 2.0 * u_rows[i, nd] * f_here[nd]
            se_w[i, nd] = np.sqrt(se_path**2 + sys_var) / dv
        # clamp this row before later (earlier-time) rows consume it
        w[i] = _clamp_w(w[i], telemetry)
        row_mean_se[i] = float(np.mean(se_w[i]))
        computed[i] = True

    _fill_carries(w, se_w, computed)
    w = _clamp_w(w, telemetry)
    v = np.sqrt(w)
    se_v = np.where(v > 1e-8, se_w / (2.0 * np.maximum(v, 1e-8)), np.sqrt(se_w))
    return _unflat(grid, v), se_v, telemetry


def mild_residuals(u: ScalarField, v: ScalarField, problem: ProblemSpec, cache: EnsembleCache):
    """Plug-in residuals of both lines, sup over grid cells, with stderr floors."""
    grid = cache.grid
    n_t, n_nodes = grid.n_times, cache.n_nodes
    u_rows, v_rows = _flat(u), _flat(v)
    res1 = np.zeros((n_t, n_nodes))
    res2 = np.zeros((n_t, n_nodes))
    floor1 = np.zeros((n_t, n_nodes))
    floor2 = np.zeros((n_t, n_nodes))
    for i in range(n_t):
        for nd in range(n_nodes):
            paths = cache.cell(i, nd)
            g_vals = problem.g(paths[:, -1, :])
            vals1 = g_vals.copy()
            vals2 = g_vals**2
            for j_local in range(paths.shape[1] - 1):
                j = i + j_local
                xs = paths[:, j_local, :]
                uu = _interp_row(grid, u_rows[j], xs)
                vv = _interp_row(grid, v_rows[j], xs)
                ff = problem.driver(grid.times[j], xs, uu, vv)
                vals1 += ff * cache.dvs[j]
                vals2 -= (vv**2 - 2.0 * uu * ff) * cache.dvs[j]
            m = vals1.size
            res1[i, nd] = abs(u_rows[i, nd] - np.mean(vals1))
            res2[i, nd] = abs(u_rows[i, nd] ** 2 - np.mean(vals2))
            if m > 1:
                floor1[i, nd] = np.std(vals1, ddof=1) / np.sqrt(m)
                floor2[i, nd] = np.std(vals2, ddof=1) / np.sqrt(m)
    return ResidualReport(
        residual_1=float(res1.max()),
        residual_2=float(res2.max()),
        stderr_floor_1=float(floor1.max()),
        stderr_floor_2=float(floor2.max()),
    )


def _out_of_bounds_fraction(cache: EnsembleCache) -> float:
    grid = cache.grid
    lo, hi = grid.space_min, grid.space_max
    outside = 0
    total = 0
    for i, block in cache.blocks.items():
        pts = block.reshape(-1, grid.dimension)
        outside += int(np.sum(np.any((pts < lo) | (pts > hi), axis=1)))
        total += pts.shape[0]
    return outside / total if total else 0.0


def picard_solve(
    problem: ProblemSpec, cache: EnsembleCache, cfg: PicardConfig
) -> MildSolution:
    """Iterate the coupled system from u0 = v0 = 0 until the sup-norm u-delta
    falls below tolerance or the iteration budget runs out.

    Non-convergence is flagged on the result, not raised.  With a z-decoupled
    driver (K_Z = 0 declares f constant in z) the v update is deferred to the
    end: it cannot influence the u iterates and costs a full sweep each pass.
    """
    grid = cache.grid
    if problem.generator.fingerprint() != cache.generator_fingerprint:
        raise ConfigurationError("cache was built for a different generator")
    u = ScalarField.constant(grid, 0.0)
    v = ScalarField.constant(grid, 0.0)
    u_se = np.zeros((grid.n_times, cache.n_nodes))
    v_se = np.zeros((grid.n_times, cache.n_nodes))
    telemetry = ClampTelemetry()
    z_coupled = problem.driver.K_Z > 0
    update_v = update_v_volterra if cfg.v_scheme == "volterra" else update_v_variance

    deltas = []
    converged = False
    iterations = 0
    for k in range(cfg.max_iterations):
        iterations = k + 1
        u_next, u_se = update_u(u, v, problem, cache)
        if cfg.damping < 1.0:
            blended = (1.0 - cfg.damping) * _flat(u) + cfg.damping * _flat(u_next)
            blended[-1] = problem.g(cache.nodes)
            u_next = _unflat(grid, blended)
        if not np.all(np.isfinite(u_next.values)):
            raise NumericalError(f"NaN in u at iteration {iterations}")
        delta = field_distance(u_next, u)
        deltas.append(delta)
        u = u_next
        if z_coupled:
            v, v_se, telemetry = update_v(u, v, problem, cache)
        if delta < cfg.tolerance:
            converged = True
            break
    if not z_coupled:
        v, v_se, telemetry = update_v(u, v, problem, cache)
    if not converged:
        warnings.warn(
            f"fixed-point iteration did not reach tolerance {cfg.tolerance} "
            f"in {cfg.max_iterations} iterations (last delta {deltas[-1]:.3g})"
        )

    residuals = mild_residuals(u, v, problem, cache)
    return MildSolution(
        u=u,
        v=v,
        u_stderr=u_se,
        v_stderr=v_se,
        iterations=iterations,
        deltas=deltas,
        converged=converged,
        residuals=residuals,
        clamp=telemetry,
        out_of_bounds_fraction=_out_of_bounds_fraction(cache),
    )
