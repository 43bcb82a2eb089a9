import numpy as np
import pytest

from pseudopde.core import ClockV, SpaceTimeGrid
from pseudopde.errors import ConfigurationError, InputError
from pseudopde.processes import (
    Diffusion,
    DistributionalDrift,
    JumpDiffusion,
    JumpLaw,
    LevyKernel,
    Stable,
    build_h_transform,
    simulate,
)


@pytest.fixture(scope="module")
def grid():
    return SpaceTimeGrid.regular(1.0, 50, -4.0, 4.0, 41)


def brownian():
    return Diffusion(mu=lambda t, x: 0.0, sigma=lambda t, x: 1.0)


def test_jump_law_validation():
    with pytest.raises(ConfigurationError):
        JumpLaw(kind="two_point", param=0.0)
    with pytest.raises(ConfigurationError):
        JumpLaw(kind="atoms", atoms=((1.0, 0.4), (2.0, 0.4)))
    with pytest.raises(ConfigurationError):
        JumpLaw(kind="cauchy", param=1.0)
    with pytest.raises(ConfigurationError):
        LevyKernel(rate=-1.0, law=JumpLaw(kind="gaussian", param=1.0))


def test_jump_law_expectations():
    assert JumpLaw(kind="two_point", param=0.7).expect(lambda y: y**2) == pytest.approx(0.49)
    assert JumpLaw(kind="gaussian", param=0.5).expect(lambda y: y**2) == pytest.approx(0.25)
    # laplace(b) has variance 2 b^2
    assert JumpLaw(kind="laplace", param=0.3).expect(lambda y: y**2) == pytest.approx(0.18)
    law = JumpLaw(kind="atoms", atoms=((1.0, 0.25), (-0.5, 0.75)))
    assert law.expect(lambda y: y) == pytest.approx(0.25 - 0.375)
    ys, ws = law.quadrature()
    assert ws.sum() == pytest.approx(1.0)


def test_jump_law_sampled_sums_match_moments():
    rng = np.random.Generator(np.random.Philox(key=5))
    counts = rng.poisson(2.0, 200000)
    for law, var1 in [
        (JumpLaw(kind="two_point", param=0.7), 0.49),
        (JumpLaw(kind="gaussian", param=0.5), 0.25),
        (JumpLaw(kind="laplace", param=0.3), 0.18),
        (JumpLaw(kind="atoms", atoms=((1.0, 0.5), (-1.0, 0.5))), 1.0),
    ]:
        sums = law.sample_sums(np.random.Generator(np.random.Philox(key=7)), counts)
        mean_jump = law.expect(lambda y: y)
        # compound sums: E = E[N] m, Var = E[N] E[Y^2] for centered-ish laws
        ey2 = law.expect(lambda y: y**2)
        expected_mean = counts.mean() * mean_jump
        expected_var = counts.mean() * (ey2 - mean_jump**2) + counts.var() * mean_jump**2
        assert sums.mean() == pytest.approx(expected_mean, abs=4 * np.sqrt(expected_var / counts.size) + 1e-12)
        assert sums.var() == pytest.approx(expected_var, rel=0.05)


def test_degenerate_dynamics_paths_constant(grid):
    gen = Diffusion(mu=lambda t, x: 0.0, sigma=lambda t, x: 0.0)
    ens = simulate(gen, 0.0, [0.7], grid, 50, 1)
    assert np.all(ens.paths == 0.7)


def test_brownian_terminal_moments(grid):
    ens = simulate(brownian(), 0.0, [0.0], grid, 100000, 42)
    xt = ens.paths[:, -1, 0]
    stderr = xt.std(ddof=1) / np.sqrt(xt.size)
    assert abs(xt.mean()) < 3 * stderr
    assert xt.var() == pytest.approx(1.0, rel=0.05)


def test_stable_alpha2_characteristic_function(grid):
    # symbol |xi|^alpha at alpha = 2 means variance 2t
    ens = simulate(Stable(alpha=2.0, scale=1.0), 0.0, [0.0], grid, 100000, 7)
    xt = ens.paths[:, -1, 0]
    vals = np.cos(1.0 * xt)
    stderr = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(vals.mean() - np.exp(-1.0)) < 3 * stderr


def test_simulate_reproducible_bitwise(grid):
    a = simulate(brownian(), 0.0, [0.0], grid, 500, 99)
    b = simulate(brownian(), 0.0, [0.0], grid, 500, 99)
    assert np.array_equal(a.paths, b.paths)


def test_simulate_prefix_stable_under_path_count(grid):
    # path j depends only on (seed, j): growing M keeps earlier paths intact
    small = simulate(brownian(), 0.0, [0.0], grid, 100, 99)
    big = simulate(brownian(), 0.0, [0.0], grid, 200, 99)
    assert np.array_equal(small.paths, big.paths[:100])


def test_simulate_preconditions(grid):
    with pytest.raises(ConfigurationError):
        simulate(brownian(), 0.0, [0.0], grid, 0, 1)
    with pytest.raises(ConfigurationError):
        simulate(brownian(), 0.123, [0.0], grid, 10, 1)
    with pytest.raises(InputError):
        simulate(brownian(), 0.0, [np.inf], grid, 10, 1)
    grid2 = SpaceTimeGrid.regular(1.0, 4, [-1.0, -1.0], [1.0, 1.0], [3, 3])
    with pytest.raises(ConfigurationError):
        simulate(Stable(alpha=1.0), 0.0, [0.0, 0.0], grid2, 10, 1)


def test_two_dimensional_diffusion_moments():
    # anisotropic volatility: coordinate variances (sigma sigma^T)_kk T
    def vol(t, x):
        n = np.atleast_2d(x).shape[0]
        mat = np.array([[1.0, 0.0], [0.5, 0.5]])
        return np.broadcast_to(mat, (n, 2, 2))

    gen = Diffusion(mu=lambda t, x: 0.0, sigma=vol, dimension=2)
    grid2 = SpaceTimeGrid.regular(1.0, 20, [-6.0, -6.0], [6.0, 6.0], [3, 3])
    ens = simulate(gen, 0.0, [0.0, 0.0], grid2, 60000, 21)
    xt = ens.paths[:, -1, :]
    assert xt[:, 0].var() == pytest.approx(1.0, rel=0.05)
    assert xt[:, 1].var() == pytest.approx(0.5, rel=0.05)
    assert np.cov(xt.T)[0, 1] == pytest.approx(0.5, rel=0.1)


def test_jump_diffusion_moments(grid):
    lam, size, sig = 2.0, 0.5, 0.3
    gen = JumpDiffusion(
        mu=lambda t, x: 0.0,
        sigma=lambda t, x: sig,
        levy=LevyKernel(rate=lam, law=JumpLaw(kind="two_point", param=size)),
    )
    ens = simulate(gen, 0.0, [0.0], grid, 100000, 11)
    xt = ens.paths[:, -1, 0]
    want_var = sig**2 + lam * size**2  # T = 1
    assert abs(xt.mean()) < 4 * xt.std(ddof=1) / np.sqrt(xt.size)
    assert xt.var() == pytest.approx(want_var, rel=0.05)


def test_jump_intensity_follows_clock(grid):
    # pure-jump process with deterministic unit jumps counts Poisson(rate * V(T))
    ts = np.linspace(0.0, 1.0, 101)
    clock = ClockV(kind="tabulated", times=ts, values=2.0 * ts)
    gen = JumpDiffusion(
        mu=lambda t, x: 0.0,
        sigma=lambda t, x: 0.0,
        levy=LevyKernel(rate=1.5, law=JumpLaw(kind="atoms", atoms=((1.0, 1.0),))),
    )
    ens = simulate(gen, 0.0, [0.0], grid, 60000, 3, clock)
    counts = ens.paths[:, -1, 0]
    assert counts.mean() == pytest.approx(3.0, rel=0.03)  # rate * V(1) = 1.5 * 2
    assert counts.var() == pytest.approx(3.0, rel=0.05)


def test_h_transform_zero_drift_is_identity():
    xs = np.linspace(-1.0, 1.0, 2001)
    tr = build_h_transform(xs, np.zeros_like(xs), lambda v: 2.0 + 0.1 * v)
    np.testing.assert_allclose(tr.Sigma_table, 0.0, atol=1e-14)
    np.testing.assert_allclose(tr.h_table, xs, atol=1e-12)
    np.testing.assert_allclose(tr.sigma0(tr.h(xs)), 2.0 + 0.1 * xs, atol=1e-9)


def test_h_transform_linear_b_closed_form():
    # b(x) = x, sigma = 1: Sigma = 2x, h = (1 - e^{-2x})/2, sigma0(y) = 1 - 2y
    xs = np.linspace(-1.0, 1.0, 10001)
    tr = build_h_transform(xs, xs, lambda v: np.ones_like(v))
    assert np.max(np.abs(tr.Sigma_table - 2 * xs)) < 1e-4
    assert np.max(np.abs(tr.h_table - (1 - np.exp(-2 * xs)) / 2)) < 1e-4
    assert np.max(np.abs(tr.sigma0_table - (1 - 2 * tr.h_table))) < 1e-4
    # defining identities at table nodes
    assert np.max(np.abs(tr.h_inv(tr.h_table) - xs)) < 1e-8
    hp = np.exp(-tr.Sigma_table)
    np.testing.assert_allclose(tr.sigma0_table, 1.0 * hp, rtol=1e-8)


def test_h_transform_bounded_variation_b():
    xs = np.linspace(-1.0, 1.0, 10001)
    tr = build_h_transform(xs, np.minimum(xs, 0.0), lambda v: np.ones_like(v))
    assert np.max(np.abs(tr.Sigma_table - 2 * np.minimum(xs, 0.0))) < 1e-4


def test_h_transform_input_errors():
    xs = np.linspace(-1.0, 1.0, 101)
    with pytest.raises(InputError):
        build_h_transform(xs, xs, lambda v: np.zeros_like(v))
    with pytest.raises(InputError):
        build_h_transform(xs + 5.0, xs, lambda v: np.ones_like(v))  # 0 not bracketed


def test_h_transform_two_sided_bound_warning():
    xs = np.linspace(-5.0, 5.0, 4001)
    with pytest.warns(UserWarning):
        build_h_transform(xs, xs, lambda v: np.ones_like(v))  # exp(Sigma) spans e^20


def test_distributional_smooth_case_matches_direct_euler():
    # b = -x^2/4 has b' = -x/2: ordinary mean-reverting diffusion
    xs = np.linspace(-3.5, 3.5, 8001)
    dd = DistributionalDrift(b_x=xs, b_values=-(xs**2) / 4.0, sigma_fn=lambda v: np.ones_like(v))
    fine = SpaceTimeGrid.regular(1.0, 200, -3.5, 3.5, 29)
    ou = Diffusion(mu=lambda t, x: -0.5 * np.atleast_2d(x), sigma=lambda t, x: 1.0)
    a = np.tanh(simulate(dd, 0.0, [0.4], fine, 20000, 901).paths[:, -1, 0])
    b = np.tanh(simulate(ou, 0.0, [0.4], fine, 20000, 902).paths[:, -1, 0])
    z = (a.mean() - b.mean()) / np.hypot(
        a.std(ddof=1) / np.sqrt(a.size), b.std(ddof=1) / np.sqrt(b.size)
    )
    assert abs(z) < 3.0


def test_distributional_moment_sanity():
    # finite moments, stable under doubling the path count
    xs = np.linspace(-3.5, 3.5, 8001)
    dd = DistributionalDrift(b_x=xs, b_values=-(xs**2) / 4.0, sigma_fn=lambda v: np.ones_like(v))
    grid = SpaceTimeGrid.regular(1.0, 50, -3.5, 3.5, 15)
    m1 = simulate(dd, 0.0, [0.2], grid, 20000, 31).paths[:, -1, 0]
    m2 = simulate(dd, 0.0, [0.2], grid, 40000, 31).paths[:, -1, 0]
    for p in (1, 2, 4):
        a, b = np.mean(np.abs(m1) ** p), np.mean(np.abs(m2) ** p)
        assert np.isfinite(a) and np.isfinite(b)
        assert a == pytest.approx(b, rel=0.1)
