"""Time-homogeneous Markov path simulators paired with their generator data.

Four generator families are supported:

* ``Diffusion``        dX = mu dt + sigma dW            (Euler-Maruyama)
* ``JumpDiffusion``    diffusion + compound-Poisson jumps, finite activity,
                       jump count per step ~ Poisson(rate * dV)
* ``Stable``           symmetric alpha-stable, symbol c*|xi|^alpha, exact
                       increments via the Chambers-Mallows-Stuck transform
* ``DistributionalDrift``  1-d SDE whose drift is the distributional
                       derivative of a continuous b; simulated through the
                       harmonic transform h (h' = exp(-Sigma)) as the
                       driftless SDE dY = sigma0(Y) dW, mapped back via h^-1
                       at every grid time.

Path generation is deterministic given (seed, path index): each ensemble
draws from one counter-based Philox stream with a fixed (path, step) layout,
so results are independent of scheduling and of the worker count.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import roots_hermite, roots_laguerre

from .core import ClockV, SpaceTimeGrid, v_increments
from .errors import ConfigurationError, InputError, InternalError

_QUAD_NODES = 96


@dataclass(frozen=True)
class JumpLaw:
    """Jump-size law; a named 1-parameter family or explicit point masses."""

    kind: str
    param: float = 0.0
    atoms: tuple = ()

    def __post_init__(self):
        if self.kind in ("two_point", "gaussian", "laplace"):
            if self.param <= 0:
                raise ConfigurationError(f"{self.kind} jump law needs a positive parameter")
        elif self.kind == "atoms":
            if not self.atoms:
                raise ConfigurationError("atoms jump law needs at least one (value, weight) pair")
            w = sum(p for _, p in self.atoms)
            if abs(w - 1.0) > 1e-12 or any(p < 0 for _, p in self.atoms):
                raise ConfigurationError("atom weights must be nonnegative and sum to 1")
        else:
            raise ConfigurationError(f"unknown jump law {self.kind!r}")

    def quadrature(self):
        """Nodes and weights with sum(w) = 1 integrating the law exactly
        (discrete laws) or to Gauss quadrature accuracy (continuous laws)."""
        if self.kind == "two_point":
            a = self.param
            return np.array([a, -a]), np.array([0.5, 0.5])
        if self.kind == "atoms":
            ys = np.array([y for y, _ in self.atoms])
            ps = np.array([p for _, p in self.atoms])
            return ys, ps
        if self.kind == "gaussian":
            t, w = roots_hermite(_QUAD_NODES)
            return np.sqrt(2.0) * self.param * t, w / np.sqrt(np.pi)
        if self.kind == "laplace":
            t, w = roots_laguerre(_QUAD_NODES)
            ys = self.param * t
            return np.concatenate([ys, -ys]), np.concatenate([w, w]) * 0.5
        raise ConfigurationError(self.kind)  # pragma: no cover

    def expect(self, fn: Callable) -> float:
        """E[fn(Y)] for vectorized fn, exact for discrete laws, quadrature else."""
        ys, ws = self.quadrature()
        return float(np.sum(ws * np.asarray(fn(ys), dtype=float)))

    def sample_sums(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        """Sum of `count` iid jumps per entry, drawn with a fixed layout.

        Closed-form sums keep the draw count per (path, step) constant:
        gaussian sums are N(0, k sigma^2), two-point sums are lattice walks
        via a binomial, laplace sums are gamma differences, atom sums come
        from a multinomial split.
        """
        if self.kind == "gaussian":
            z = rng.standard_normal(counts.shape)
            return self.param * np.sqrt(counts) * z
        if self.kind == "two_point":
            heads = rng.binomial(counts, 0.5)
            return self.param * (2.0 * heads - counts)
        if self.kind == "laplace":
            g1 = rng.gamma(counts, self.param)
            g2 = rng.gamma(counts, self.param)
            return g1 - g2
        if self.kind == "atoms":
            ys = np.array([y for y, _ in self.atoms])
            ps = np.array([p for _, p in self.atoms])
            split = rng.multinomial(counts, ps)
            return split @ ys
        raise ConfigurationError(self.kind)  # pragma: no cover


@dataclass(frozen=True)
class LevyKernel:
    """Finite-activity jump kernel: jumps at rate per unit V with law ``law``."""

    rate: float
    law: JumpLaw

    def __post_init__(self):
        if self.rate < 0:
            raise ConfigurationError("jump rate must be nonnegative")

    def integral(self, fn: Callable) -> float:
        """integral fn(y) K(dy) = rate * E_law[fn(Y)]."""
        return self.rate * self.law.expect(fn)


def _as_points(x, dimension):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dimension:
        raise InputError(f"points have dimension {x.shape[1]}, expected {dimension}")
    return x


def _drift_array(mu, t, x, dimension):
    out = np.asarray(mu(t, x), dtype=float)
    n = x.shape[0]
    if out.ndim <= 1:
        out = np.broadcast_to(out.reshape(-1) if out.ndim else out, (n,))
        return np.repeat(out[:, None], dimension, axis=1) if dimension > 1 else out[:, None]
    return np.broadcast_to(out, (n, dimension))


def _vol_matrix(sigma, t, x, dimension):
    out = np.asarray(sigma(t, x), dtype=float)
    n = x.shape[0]
    if out.ndim == 3:
        return np.broadcast_to(out, (n, dimension, dimension))
    # scalar or per-point scalar: isotropic volatility
    flat = np.broadcast_to(out.reshape(-1) if out.ndim else out, (n,))
    eye = np.eye(dimension)
    return flat[:, None, None] * eye[None, :, :]


def _fn_token(fn) -> str:
    """Stable label for a coefficient function; expression-built functions
    carry their source text so fingerprints are identical across runs."""
    return getattr(fn, "fingerprint_token", getattr(fn, "__name__", "fn"))


@dataclass(frozen=True)
class Diffusion:
    """dX = mu(t,X) dt + sigma(t,X) dW on R^d."""

    mu: Callable
    sigma: Callable
    dimension: int = 1

    def fingerprint(self) -> str:
        return _fingerprint("diffusion", self.dimension, _fn_token(self.mu), _fn_token(self.sigma))


@dataclass(frozen=True)
class JumpDiffusion:
    """Diffusion plus state-independent compound-Poisson jumps."""

    mu: Callable
    sigma: Callable
    levy: LevyKernel
    dimension: int = 1

    def __post_init__(self):
        if self.dimension != 1:
            raise ConfigurationError("jump diffusion simulation is 1-d in this version")

    def fingerprint(self) -> str:
        return _fingerprint(
            "jump_diffusion", self.dimension, _fn_token(self.mu), _fn_token(self.sigma),
            self.levy.rate, self.levy.law.kind, self.levy.law.param, self.levy.law.atoms,
        )


@dataclass(frozen=True)
class Stable:
    """Symmetric alpha-stable process with symbol c*|xi|^alpha (d = 1)."""

    alpha: float
    scale: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ConfigurationError("alpha must lie in (0, 2]")
        if self.scale <= 0:
            raise ConfigurationError("scale must be positive")

    def fingerprint(self) -> str:
        return _fingerprint("stable", self.alpha, self.scale)


@dataclass(frozen=True)
class HTransform:
    """Tables for Sigma, the harmonic map h (h' = exp(-Sigma)) and sigma0."""

    x_table: np.ndarray
    sigma_table: np.ndarray
    Sigma_table: np.ndarray
    h_table: np.ndarray
    sigma0_table: np.ndarray

    def Sigma(self, x):
        return np.interp(x, self.x_table, self.Sigma_table)

    def h(self, x):
        return np.interp(x, self.x_table, self.h_table)

    def h_inv(self, y):
        return np.interp(y, self.h_table, self.x_table)

    def sigma0(self, y):
        return np.interp(y, self.h_table, self.sigma0_table)

    @property
    def image_interval(self):
        return float(self.h_table[0]), float(self.h_table[-1])


def build_h_transform(b_x, b_values, sigma_fn: Callable, ta_ratio_warn: float = 1e4) -> HTransform:
    """Build (Sigma, h, h^-1, sigma0) from a sampled continuous b and sigma > 0.

    Sigma(x) = 2 * integral_0^x sigma^-2(y) db(y) as a Riemann-Stieltjes sum
    over the table (db as table differences, sigma^-2 at midpoints), h by the
    trapezoid rule on exp(-Sigma), h^-1 by monotone inversion.
    """
    x = np.asarray(b_x, dtype=float)
    b = np.asarray(b_values, dtype=float)
    if x.ndim != 1 or x.shape != b.shape or x.size < 3:
        raise InputError("b table needs matching 1-d arrays with at least 3 nodes")
    if np.any(np.diff(x) <= 0):
        raise InputError("b table abscissae must be strictly increasing")
    if not (x[0] <= 0.0 <= x[-1]):
        raise InputError("b table must bracket 0 (h is normalized at 0)")
    sig = np.asarray(sigma_fn(x), dtype=float)
    if np.any(sig <= 0):
        raise InputError("sigma must be positive everywhere on the table")

    mid = 0.5 * (x[:-1] + x[1:])
    sig_mid = np.asarray(sigma_fn(mid), dtype=float)
    dS = 2.0 * np.diff(b) / sig_mid**2
    S = np.concatenate([[0.0], np.cumsum(dS)])
    S = S - np.interp(0.0, x, S)

    ratio = np.exp(S) / sig
    spread = ratio.max() / ratio.min()
    if spread > ta_ratio_warn:
        warnings.warn(
            f"exp(Sigma)/sigma varies by a factor {spread:.3g} over the table; "
            "the two-sided boundedness assumption is numerically strained"
        )

    hp = np.exp(-S)
    H = np.concatenate([[0.0], np.cumsum(0.5 * (hp[:-1] + hp[1:]) * np.diff(x))])
    H = H - np.interp(0.0, x, H)
    if np.any(np.diff(H) <= 0):
        raise InternalError("computed h is not strictly increasing")

    return HTransform(
        x_table=x, sigma_table=sig, Sigma_table=S, h_table=H, sigma0_table=sig * hp
    )


@dataclass(frozen=True)
class DistributionalDrift:
    """1-d SDE dX = b'(X) dt + sigma(X) dW with b' a distribution.

    ``b`` enters as a dense sample table (its derivative is never needed);
    the transform is built eagerly so any table defect fails fast.
    """

    b_x: np.ndarray
    b_values: np.ndarray
    sigma_fn: Callable
    transform: HTransform = field(init=False, compare=False, repr=False)
    dimension: int = 1

    def __post_init__(self):
        object.__setattr__(
            self, "transform", build_h_transform(self.b_x, self.b_values, self.sigma_fn)
        )

    def fingerprint(self) -> str:
        t = self.transform
        return _fingerprint(
            "distributional_drift",
            hashlib.sha1(np.ascontiguousarray(t.h_table).tobytes()).hexdigest(),
            hashlib.sha1(np.ascontiguousarray(t.sigma0_table).tobytes()).hexdigest(),
        )


def _fingerprint(*parts) -> str:
    return hashlib.sha1(repr(parts).encode()).hexdigest()[:16]


GeneratorSpec = (Diffusion, JumpDiffusion, Stable, DistributionalDrift)


@dataclass(frozen=True)
class PathEnsemble:
    """M simulated trajectories from (s, x) over a sub-grid of [s, T]."""

    origin_time: float
    origin_x: np.ndarray
    times: np.ndarray
    paths: np.ndarray  # (M, n_times, d)
    seed: int
    generator_fingerprint: str

    def __post_init__(self):
        if self.paths.ndim != 3 or self.paths.shape[0] < 1:
            raise ConfigurationError("paths must be (M >= 1, n_times, d)")
        if not np.allclose(self.paths[:, 0, :], self.origin_x[None, :]):
            raise InternalError("paths do not start at the origin")

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def n_times(self) -> int:
        return self.paths.shape[1]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & ((1 << 128) - 1)))


def _cms_standard(alpha: float, u: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Standard symmetric alpha-stable variates (cf exp(-|xi|^alpha))."""
    if alpha == 1.0:
        return np.tan(u)
    return (
        np.sin(alpha * u)
        / np.cos(u) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha)
    )


def evolve_paths(gen, times, dvs, starts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Evolve one path per row of ``starts`` (n, d) over ``times``; returns (n, n_times, d).

    ``dvs`` are the clock increments over the steps of ``times`` (used by the
    jump intensity). The random draw layout per (path, step) is fixed, so the
    output is a deterministic function of (rng state, row index).
    """
    times = np.asarray(times, dtype=float)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n, d = starts.shape
    n_steps = times.size - 1
    dts = np.diff(times)
    paths = np.empty((n, times.size, d))
    paths[:, 0, :] = starts

    if isinstance(gen, Stable):
        u = rng.uniform(-np.pi / 2, np.pi / 2, (n, n_steps))
        e = rng.exponential(1.0, (n, n_steps))
        if n_steps:
            incr = (gen.scale * dts) ** (1.0 / gen.alpha) * _cms_standard(gen.alpha, u, e)
            paths[:, 1:, 0] = starts[:, 0:1] + np.cumsum(incr, axis=1)
    elif isinstance(gen, DistributionalDrift):
        tr = gen.transform
        z = rng.standard_normal((n, n_steps))
        y = np.asarray(tr.h(starts[:, 0]), dtype=float)
        for k in range(n_steps):
            y = y + tr.sigma0(y) * np.sqrt(dts[k]) * z[:, k]
            paths[:, k + 1, 0] = tr.h_inv(y)
    else:
        z = rng.standard_normal((n, n_steps, d))
        jumps = None
        if isinstance(gen, JumpDiffusion) and gen.levy.rate > 0:
            counts = rng.poisson(gen.levy.rate * dvs[None, :], (n, n_steps))
            jumps = gen.levy.law.sample_sums(rng, counts)
        cur = starts.copy()
        for k in range(n_steps):
            t_k = times[k]
            drift = _drift_array(gen.mu, t_k, cur, d)
            vol = _vol_matrix(gen.sigma, t_k, cur, d)
            step = drift * dts[k] + np.sqrt(dts[k]) * np.einsum("nij,nj->ni", vol, z[:, k, :])
            cur = cur + step
            if jumps is not None:
                cur = cur + jumps[:, k, None]
            paths[:, k + 1, :] = cur

    if not np.all(np.isfinite(paths)):
        raise InternalError("simulation produced non-finite path values")
    return paths


def simulate(
    gen,
    s: float,
    x,
    grid: SpaceTimeGrid,
    M: int,
    seed: int,
    clock: Optional[ClockV] = None,
) -> PathEnsemble:
    """Simulate M paths of the generator's process from (s, x) on grid times >= s."""
    if M < 1:
        raise ConfigurationError("path count M must be >= 1")
    clock = clock if clock is not None else ClockV()
    d = grid.dimension
    if isinstance(gen, (Stable, DistributionalDrift)) and d != 1:
        raise ConfigurationError(f"{type(gen).__name__} requires dimension 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,) or not np.all(np.isfinite(x)):
        raise InputError(f"origin point must be finite with shape ({d},)")
    i0 = int(np.argmin(np.abs(grid.times - s)))
    if not np.isclose(grid.times[i0], s, rtol=0, atol=1e-9 * max(1.0, grid.horizon)):
        raise ConfigurationError(f"start time {s} is not a grid time")

    times = grid.times[i0:]
    dvs = v_increments(grid, clock)[i0:]
    starts = np.repeat(x[None, :], M, axis=0)
    paths = evolve_paths(gen, times, dvs, starts, _rng(seed))
    return PathEnsemble(
        origin_time=float(s),
        origin_x=x,
        times=times,
        paths=paths,
        seed=int(seed),
        generator_fingerprint=gen.fingerprint(),
    )
