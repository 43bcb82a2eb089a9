"""Monte-Carlo estimators for the two semigroup functionals of the solver.

``terminal_expectation`` estimates E^{s,x}[phi(X_T)] and
``running_expectation`` estimates E^{s,x}[ integral_s^T psi(r, X_r) dV_r ]
by a left-endpoint Riemann-Stieltjes sum per path.  Both read from a frozen
``EnsembleCache`` holding one path ensemble per (grid time, grid node), so
every fixed-point sweep sees identical noise (common random numbers) and the
iteration is a deterministic map between fields.
"""

from __future__ import annotations

import hashlib
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ClockV, SpaceTimeGrid, v_increments
from .errors import ConfigurationError, InputError, ResourceError
from .processes import PathEnsemble, evolve_paths, simulate, _rng


def derive_cell_seed(master_seed: int, s_index: int, node_index: int) -> int:
    """Deterministic 128-bit Philox key for one cache cell."""
    digest = hashlib.sha256(f"{master_seed}:{s_index}:{node_index}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


@dataclass
class EnsembleCache:
    """Frozen path ensembles for every (grid time, grid node) cell.

    ``blocks[i]`` has shape (n_nodes, M, n_times - i, d): the ensembles of all
    spatial nodes started at grid time index i, sharing the grid times i..N.
    Read-only after construction.
    """

    grid: SpaceTimeGrid
    clock: ClockV
    generator_fingerprint: str
    master_seed: int
    M: int
    blocks: dict = field(repr=False)
    dvs: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    memory_bytes: int = 0

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def cell(self, s_index: int, node_index: int) -> np.ndarray:
        """Paths (M, n_times - s_index, d) for one cell; zero-copy view."""
        if s_index not in self.blocks:
            raise InputError(f"cache has no block for time index {s_index}")
        if not 0 <= node_index < self.n_nodes:
            raise InputError(f"node index {node_index} out of range")
        return self.blocks[s_index][node_index]

    def ensemble(self, s_index: int, node_index: int) -> PathEnsemble:
        return PathEnsemble(
            origin_time=float(self.grid.times[s_index]),
            origin_x=self.nodes[node_index],
            times=self.grid.times[s_index:],
            paths=self.cell(s_index, node_index),
            seed=derive_cell_seed(self.master_seed, s_index, node_index),
            generator_fingerprint=self.generator_fingerprint,
        )


def cache_memory_estimate(grid: SpaceTimeGrid, M: int) -> int:
    """Bytes needed for the full per-cell path storage."""
    n_nodes = int(np.prod(grid.space_nodes))
    n_t = grid.n_times
    d = grid.dimension
    per_time = sum(n_t - i for i in range(n_t))
    return per_time * n_nodes * M * d * 8


def build_cache(
    gen,
    grid: SpaceTimeGrid,
    M: int,
    master_seed: int,
    clock: Optional[ClockV] = None,
    memory_budget_mb: float = 4096.0,
    threads: int = 1,
) -> EnsembleCache:
    """One ensemble per (grid time, grid node), seeds derived per cell.

    Cell contents are independent of the thread count: each cell's Philox key
    depends only on (master seed, time index, node index) and results are
    written into preallocated blocks by index.
    """
    if M < 1:
        raise ConfigurationError("cache path count M must be >= 1")
    clock = clock if clock is not None else ClockV()
    need = cache_memory_estimate(grid, M)
    if need > memory_budget_mb * 2**20:
        raise ResourceError(
            f"path cache needs {need / 2**20:.0f} MiB > budget {memory_budget_mb:.0f} MiB; "
            "reduce cache paths or grid resolution, or stream per time index"
        )
    nodes = grid.nodes()
    n_t = grid.n_times
    d = grid.dimension
    dvs = v_increments(grid, clock)
    blocks = {i: np.empty((nodes.shape[0], M, n_t - i, d)) for i in range(n_t)}

    def fill(cell):
        i, j = cell
        ens = simulate(
            gen, grid.times[i], nodes[j], grid, M,
            derive_cell_seed(master_seed, i, j), clock,
        )
        blocks[i][j] = ens.paths

    cells = [(i, j) for i in range(n_t) for j in range(nodes.shape[0])]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, cells))
    else:
        for cell in cells:
            fill(cell)

    return EnsembleCache(
        grid=grid,
        clock=clock,
        generator_fingerprint=gen.fingerprint(),
        master_seed=int(master_seed),
        M=int(M),
        blocks=blocks,
        dvs=dvs,
        nodes=nodes,
        memory_bytes=need,
    )


def _call_phi(phi, xs, what, cell_id):
    try:
        return np.asarray(phi(xs), dtype=float)
    except Exception:
        # probe path-by-path so the error names the offending path
        for m in range(xs.shape[0]):
            try:
                phi(xs[m : m + 1])
            except Exception as inner:
                raise type(inner)(
                    f"{what} evaluation failed at cell {cell_id}, path {m}: {inner}"
                ) from inner
        raise


def terminal_expectation(cache: EnsembleCache, s_index: int, node_index: int, phi: Callable):
    """Sample mean and stderr of phi(X_T) over one cell's ensemble."""
    paths = cache.cell(s_index, node_index)
    vals = _call_phi(phi, paths[:, -1, :], "terminal function", (s_index, node_index))
    m = paths.shape[0]
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return est, se


def running_path_sums(cache: EnsembleCache, s_index: int, node_index: int, psi: Callable):
    """Per-path left-endpoint sums  sum_j psi(t_j, X_{t_j}) dV_j  over [s, T)."""
    paths = cache.cell(s_index, node_index)
    m, n_t = paths.shape[0], paths.shape[1]
    acc = np.zeros(m)
    for j in range(n_t - 1):
        vals = _call_phi(
            lambda xs: psi(s_index + j, xs), paths[:, j, :],
            "running integrand", (s_index, node_index),
        )
        acc += vals * cache.dvs[s_index + j]
    return acc


def running_expectation(cache: EnsembleCache, s_index: int, node_index: int, psi: Callable):
    """Estimate of E[ integral_s^T psi(r, X_r) dV_r ] with its stderr.

    ``psi(time_index, points)`` receives the global grid time index and the
    (M, d) positions at that time.
    """
    acc = running_path_sums(cache, s_index, node_index, psi)
    m = acc.size
    est = float(np.mean(acc))
    se = float(np.std(acc, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return est, se


def terminal_plus_running(
    cache: EnsembleCache,
    s_index: int,
    node_index: int,
    phi: Callable,
    psi: Optional[Callable],
    running_sign: float = 1.0,
):
    """Pathwise-combined estimate of E[phi(X_T)] + sign * E[int psi dV].

    Combining per path keeps the stderr honest about the correlation between
    the two terms (both are read off the same trajectories).
    """
    paths = cache.cell(s_index, node_index)
    vals = _call_phi(phi, paths[:, -1, :], "terminal function", (s_index, node_index))
    if psi is not None:
        vals = vals + running_sign * running_path_sums(cache, s_index, node_index, psi)
    m = vals.size
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return est, se


def chapman_kolmogorov_test(
    gen,
    s: float,
    t: float,
    u: float,
    x,
    phi: Callable,
    M: int,
    seed: int,
    grid: SpaceTimeGrid,
    clock: Optional[ClockV] = None,
    inner_gen=None,
) -> float:
    """z-statistic comparing E^{s,x}[phi(X_u)] direct vs composed through time t.

    The composed estimate restarts one fresh path at time t from every
    realized X_t (independent seeds), i.e. it samples the two-stage kernel
    composition.  ``inner_gen`` substitutes a different generator for the
    restarted stage; tests use it as a deliberately broken negative control.
    """
    if not (s < t < u):
        raise ConfigurationError("need s < t < u")
    clock = clock if clock is not None else ClockV()
    for point in (s, t, u):
        if not np.any(np.isclose(grid.times, point, rtol=0, atol=1e-12)):
            raise ConfigurationError(f"{point} is not a grid time")
    inner_gen = inner_gen if inner_gen is not None else gen
    iu = int(np.argmin(np.abs(grid.times - u)))
    it = int(np.argmin(np.abs(grid.times - t)))

    direct = simulate(gen, s, x, grid, M, seed, clock)
    iu_local = iu - int(np.argmin(np.abs(grid.times - s)))
    vals_d = np.asarray(phi(direct.paths[:, iu_local, :]), dtype=float)

    outer = simulate(gen, s, x, grid, M, seed + 1, clock)
    it_local = it - int(np.argmin(np.abs(grid.times - s)))
    starts = outer.paths[:, it_local, :]
    inner_paths = evolve_paths(
        inner_gen, grid.times[it : iu + 1], v_increments(grid, clock)[it:iu],
        starts, _rng(seed + 2),
    )
    vals_2 = np.asarray(phi(inner_paths[:, -1, :]), dtype=float)

    est_d, est_2 = float(np.mean(vals_d)), float(np.mean(vals_2))
    se_d = float(np.std(vals_d, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    se_2 = float(np.std(vals_2, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    denom = np.hypot(se_d, se_2)
    if denom == 0.0:
        return 0.0 if est_d == est_2 else float("inf")
    return float((est_d - est_2) / denom)
