import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hls.errors import DegenerateInputError, DomainError, ExponentError, UsageError
from hls.extremal import (
    SolverConfig,
    alternating_maximize,
    dual_element,
    el_residual,
    euclidean_baseline,
    quotient,
    scaling_family,
)
from hls.geometry import ManifoldSpec, QuadratureGrid, build_grid
from hls.riesz import (
    KernelMatrix,
    RieszKernel,
    apply_ialpha,
    assemble_kernel,
    bilinear_form,
    lp_norm,
)


def toy_grid(weights):
    w = np.asarray(weights, dtype=float)
    nodes = np.arange(w.size, dtype=float)[:, None] / (w.size + 1)
    return QuadratureGrid(ManifoldSpec.torus((1.0,)), nodes, w)


def test_dual_element_examples():
    g = toy_grid([1, 1])
    np.testing.assert_allclose(dual_element(g, [1.0, 0.0], 2), [1.0, 0.0])
    f = dual_element(g, [3.0, 4.0], 2)
    np.testing.assert_allclose(f, [0.6, 0.8])
    assert np.dot(f, [3.0, 4.0]) == pytest.approx(5.0)
    with pytest.raises(DegenerateInputError):
        dual_element(g, [0.0, 0.0], 2)
    with pytest.raises(ExponentError):
        dual_element(g, [1.0, 0.0], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(1.1, 6.0), st.integers(0, 2**31))
def test_dual_element_is_sharp(m, p, seed):
    rng = np.random.default_rng(seed)
    grid = toy_grid(rng.uniform(0.1, 2.0, m))
    h = rng.uniform(0, 1, m)
    f = dual_element(grid, h, p)
    assert lp_norm(grid, f, p) == pytest.approx(1.0, rel=1e-12)
    best = float(np.dot(grid.weights * f, h))
    assert best == pytest.approx(lp_norm(grid, h, p / (p - 1)), rel=1e-12)
    cand = rng.normal(size=(1000, m))
    cand /= np.array([lp_norm(grid, c, p) for c in cand])[:, None]
    assert np.all(cand @ (grid.weights * h) <= best + 1e-12)
    assert np.all(f >= 0)


def test_single_node_toy():
    grid = QuadratureGrid(ManifoldSpec.ball(2, 1 / math.sqrt(math.pi)), np.zeros((1, 2)), np.ones(1), h=1.0)
    K = KernelMatrix.from_dense([[4.2]])
    res = alternating_maximize(K, grid, SolverConfig(1.5, 1.2))
    assert res.value == pytest.approx(4.2, rel=1e-14)
    np.testing.assert_allclose(res.f.values, [1.0])
    np.testing.assert_allclose(res.g.values, [1.0])
    assert el_residual(K, grid, res.f, res.g, res.value, 1.5, 1.2) == (0.0, 0.0)


def largest_eig_2x2(a, b, d):
    return 0.5 * (a + d) + math.sqrt(0.25 * (a - d) ** 2 + b * b)


@pytest.mark.parametrize("a,b,d", [(2.0, 1.0, 3.0), (1.0, 0.5, 1.0), (5.0, 0.01, 0.2)])
def test_eigen_oracle_2x2(a, b, d):
    grid = toy_grid([1, 1])
    K = KernelMatrix.from_dense([[a, b], [b, d]])
    res = alternating_maximize(K, grid, SolverConfig(2.0, 2.0))
    assert res.converged
    assert res.value == pytest.approx(largest_eig_2x2(a, b, d), rel=1e-10)


def test_weighted_eigen_oracle():
    rng = np.random.default_rng(3)
    A = rng.uniform(0.1, 1, (4, 4))
    A = A + A.T
    w = rng.uniform(0.5, 2, 4)
    grid = toy_grid(w)
    res = alternating_maximize(KernelMatrix.from_dense(A), grid, SolverConfig(2.0, 2.0))
    s = np.sqrt(w)
    assert res.value == pytest.approx(np.linalg.eigvalsh(s[:, None] * A * s[None, :])[-1], rel=1e-10)


@pytest.fixture(scope="module")
def sphere500():
    spec = ManifoldSpec.sphere()
    grid = build_grid(spec, 500)
    return grid, assemble_kernel(RieszKernel(1.0, spec), grid)


def test_result_invariants(sphere500):
    grid, K = sphere500
    res = alternating_maximize(K, grid, SolverConfig.from_exponents(2, 1.0, 1.5, seed=4))
    assert res.converged and res.monotone
    assert lp_norm(grid, res.f, 1.5) == pytest.approx(1.0, abs=1e-12)
    assert lp_norm(grid, res.g, 1.2) == pytest.approx(1.0, abs=1e-12)
    assert res.value == pytest.approx(bilinear_form(K, grid, res.f, res.g), rel=1e-12)
    assert np.all(np.diff(res.half_steps) >= -1e-12 * res.value)
    assert max(res.residuals) < 1e-8
    assert np.all(res.f.values >= 0) and np.all(res.g.values >= 0)
    assert res.value == pytest.approx(quotient(K, grid, res.f, res.g, 1.5, 1.2), rel=1e-12)


def test_residual_linear_in_perturbation(sphere500):
    grid, K = sphere500
    res = alternating_maximize(K, grid, SolverConfig.from_exponents(2, 1.0, 1.5))
    bump = np.random.default_rng(0).uniform(0, 1, grid.size)
    r = []
    for eps in (0.01, 0.02, 0.04):
        f = res.f.values * (1 + eps * bump)
        f /= lp_norm(grid, f, 1.5)
        r.append(el_residual(K, grid, f, res.g, res.value, 1.5, 1.2)[0])
    assert r[1] / r[0] == pytest.approx(2.0, rel=0.15)
    assert r[2] / r[1] == pytest.approx(2.0, rel=0.15)


def test_unconverged_is_flagged(sphere500):
    grid, K = sphere500
    res = alternating_maximize(K, grid, SolverConfig(1.5, 1.2, max_iter=3, seed=1))
    assert not res.converged
    assert res.iterations == 3 and len(res.history) == 3


def test_bad_initial_field(sphere500):
    grid, K = sphere500
    with pytest.raises(DegenerateInputError):
        alternating_maximize(K, grid, SolverConfig(1.5, 1.2), g0=np.zeros(grid.size))
    with pytest.raises(UsageError):
        alternating_maximize(K, grid, SolverConfig(1.5, 1.2), g0=np.ones(3))


def test_symmetric_case_on_circulant_grid():
    # p = t = 2n/(n+alpha); uniform torus grids make I(1) exactly constant.
    spec = ManifoldSpec.torus((1.0, 1.0))
    grid = build_grid(spec, 20)
    K = assemble_kernel(RieszKernel(1.0, spec), grid)
    p = 4 / 3
    cfg = SolverConfig(p, p, max_iter=5)
    res = alternating_maximize(K, grid, cfg)
    np.testing.assert_allclose(res.f.values, res.g.values, rtol=1e-12)


def test_symmetric_case_on_sphere_converges_together():
    spec = ManifoldSpec.sphere()
    grid = build_grid(spec, 800)
    K = assemble_kernel(RieszKernel(1.0, spec), grid)
    p = 4 / 3
    res = alternating_maximize(K, grid, SolverConfig(p, p))
    assert res.converged
    assert lp_norm(grid, res.f.values - res.g.values, p) < 1e-6


def test_constant_pair_residual_is_spread_of_constant_image():
    # f = g = const: the residual is the relative L^p' deviation of I(1) from its mean
    spec = ManifoldSpec.sphere()
    p = 4 / 3
    residuals = []
    for N in (500, 1000, 2000):
        grid = build_grid(spec, N)
        K = assemble_kernel(RieszKernel(1.0, spec), grid)
        c = np.ones(grid.size) / lp_norm(grid, np.ones(grid.size), p)
        val = bilinear_form(K, grid, c, c)
        r = el_residual(K, grid, c, c, val, p, p)
        image = apply_ialpha(K, grid, np.ones(grid.size))
        mean = np.dot(grid.weights, image) / grid.total_weight
        spread = lp_norm(grid, image - mean, 4.0) / lp_norm(grid, image, 4.0)
        assert r[0] == pytest.approx(spread, rel=1e-8)
        assert r[1] == pytest.approx(spread, rel=1e-8)
        residuals.append(r[0])
    assert all(a > b for a, b in zip(residuals, residuals[1:]))


def test_baseline_domain_monotone_and_stable():
    a = euclidean_baseline(1, 0.5, 1.5, 1.0, 100)
    b = euclidean_baseline(1, 0.5, 1.5, 2.0, 100)
    assert b.value >= a.value * (1 - 1e-10)
    vals = [euclidean_baseline(1, 0.5, 1.5, 1.0, r).value for r in (200, 400, 800)]
    assert (max(vals) - min(vals)) / max(vals) < 0.01
    assert all(x <= y for x, y in zip(vals, vals[1:]))


def test_scaling_family(baseline2):
    f, g = baseline2.f, baseline2.g
    assert scaling_family(f, 1.0) is f
    for lam in (0.5, 0.25):
        fl = scaling_family(f, lam)
        gl = scaling_family(g, lam, scaled_grid=fl.grid)
        assert fl.norm() == pytest.approx(1.0, rel=1e-12)
        assert gl.norm() == pytest.approx(1.0, rel=1e-12)
        K = assemble_kernel(RieszKernel(1.0, fl.grid.spec), fl.grid)
        assert quotient(K, fl.grid, fl, gl, 1.5, 1.2) == pytest.approx(baseline2.value, rel=1e-10)
    with pytest.raises(DomainError):
        scaling_family(f, 2.0, container_radius=1.0)
    with pytest.raises(DomainError):
        scaling_family(f, -1.0)
    with pytest.raises(UsageError):
        scaling_family(f, 0.5, scaled_grid=build_grid(ManifoldSpec.ball(2), 10))


def test_solver_config_validation():
    with pytest.raises(ExponentError):
        SolverConfig(1.0, 2.0)
    with pytest.raises(UsageError):
        SolverConfig(2.0, 2.0, tol=0.0)
    assert SolverConfig.from_exponents(2, 1.0, 1.5).q == pytest.approx(6.0)


def test_history_csv(tmp_path, sphere500):
    grid, K = sphere500
    res = alternating_maximize(K, grid, SolverConfig(1.5, 1.2, max_iter=5, seed=2))
    res.history_to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,value,residual_f,residual_g"
    assert len(lines) == 6
