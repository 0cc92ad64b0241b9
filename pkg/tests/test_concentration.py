import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hls.concentration import (
    AtomReport,
    CutoffFamily,
    brezis_lieb_defect,
    build_measures,
    check_atom_inequality,
    commutator_norm,
    compactness_split_check,
    contradiction_chain,
    detect_atoms,
    local_mass,
    loglog_slope,
    split_exponent,
)
from hls.errors import ExponentError, UsageError
from hls.geometry import ManifoldSpec, build_grid, normal_chart, pairwise_distance
from hls.riesz import DensityField, RieszKernel, apply_ialpha, assemble_kernel, lp_norm
from hls.transplant import bubble_patch, scaled_pair, transplant_many, truncate

P, Q = 1.5, 6.0
NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = -NORTH


@pytest.fixture(scope="module")
def sphere():
    spec = ManifoldSpec.sphere()
    grid = build_grid(spec, 1000)
    return grid, assemble_kernel(RieszKernel(1.0, spec), grid)


def bubble_sequence(baseline, centers, lambdas, resolution=1000, delta=0.2):
    spec = ManifoldSpec.sphere()
    background = build_grid(spec, resolution)
    charts = [normal_chart(spec, c, delta) for c in centers]
    coef = (1 / len(charts)) ** (1 / P)
    out = []
    for lam in lambdas:
        tr = transplant_many([bubble_patch(ch, baseline, lam, coef) for ch in charts], background)
        K = assemble_kernel(RieszKernel(1.0, spec), tr.grid)
        u = tr.u.values / lp_norm(tr.grid, tr.u.values, P)
        out.append((tr.grid, K, u))
    return out


@pytest.fixture(scope="module")
def one_bubble(baseline2):
    return bubble_sequence(baseline2, [NORTH], [2.0**-m for m in range(1, 7)])


def test_measures_basic(sphere):
    grid, K = sphere
    zero = build_measures(grid, K, np.zeros(grid.size), P, Q)
    assert zero.mu_total == 0 and zero.nu_total == 0
    f = np.random.default_rng(1).uniform(0, 1, grid.size)
    f /= lp_norm(grid, f, P)
    m = build_measures(grid, K, f, P, Q)
    assert m.mu_total == pytest.approx(1.0, abs=1e-12)
    assert m.mu_total == pytest.approx(lp_norm(grid, f, P) ** P, rel=1e-14)
    assert m.nu_total == pytest.approx(lp_norm(grid, apply_ialpha(K, grid, f), Q) ** Q, rel=1e-12)
    assert np.all(m.mu >= 0) and np.all(m.nu >= 0)
    spike = np.zeros(grid.size)
    spike[5] = 1.0
    ms = build_measures(grid, K, spike, P, Q)
    assert np.count_nonzero(ms.mu) == 1 and ms.mu[5] > 0


def test_local_mass(sphere):
    grid, K = sphere
    f = np.ones(grid.size) / lp_norm(grid, np.ones(grid.size), P)
    m = build_measures(grid, K, f, P, Q)
    assert local_mass(grid, m.mu, NORTH, 4.0) == pytest.approx(m.mu_total)
    node = grid.nodes[10]
    assert local_mass(grid, m.mu, node, 1e-6) == m.mu[10]
    masses = [local_mass(grid, m.mu, NORTH, r) for r in (0.1, 0.3, 0.6, 1.2, 2.5)]
    assert all(a <= b for a, b in zip(masses, masses[1:]))
    for r in (0.3, 0.6, 1.2):
        cap = 2 * math.pi * (1 - math.cos(r)) / (4 * math.pi)
        assert local_mass(grid, m.mu, NORTH, r) == pytest.approx(cap, rel=0.05)
    with pytest.raises(UsageError):
        local_mass(grid, m.mu, NORTH, 0.0)


def test_local_mass_concentrates(one_bubble):
    masses = [local_mass(g, g.weights * u**P, NORTH, 0.1) for g, _, u in one_bubble]
    assert all(a <= b + 1e-12 for a, b in zip(masses, masses[1:]))
    assert masses[-1] == pytest.approx(1.0, abs=1e-9)


def test_no_atoms_for_uniform(sphere):
    grid, K = sphere
    f = np.ones(grid.size) / lp_norm(grid, np.ones(grid.size), P)
    m = build_measures(grid, K, f, P, Q)
    assert detect_atoms([m, m, m], [0.2, 0.1, 0.05], 0.1) == []


def test_detect_single_atom(one_bubble, baseline2):
    measures = [build_measures(g, K, u, P, Q) for g, K, u in one_bubble]
    atoms = detect_atoms(measures, [0.2, 0.1, 0.05], 0.1)
    assert len(atoms) == 1
    a = atoms[0]
    assert a.mu >= 0.9
    assert np.arccos(np.clip(np.dot(a.point, NORTH), -1, 1)) < 0.05
    assert abs(check_atom_inequality(a, baseline2.value, relative=True)) < 0.05
    assert len(a.mu_history) == len(measures)
    assert "slack" in a.summary(baseline2.value)


def test_detect_two_atoms(baseline2):
    seq = bubble_sequence(baseline2, [NORTH, SOUTH], [2.0**-m for m in range(3, 7)], resolution=600)
    measures = [build_measures(g, K, u, P, Q) for g, K, u in seq]
    atoms = detect_atoms(measures, [0.2, 0.1, 0.05], 0.1)
    assert len(atoms) == 2
    assert atoms[0].node != atoms[1].node
    for a in atoms:
        assert a.mu == pytest.approx(0.5, abs=0.05)


def test_conflicting_grids_rejected(sphere):
    grid, K = sphere
    m = build_measures(grid, K, np.ones(grid.size), P, Q)
    torus = ManifoldSpec.torus((1.0, 1.0))
    tg = build_grid(torus, 10)
    mt = build_measures(tg, assemble_kernel(RieszKernel(1.0, torus), tg), np.ones(tg.size), P, Q)
    with pytest.raises(UsageError):
        detect_atoms([m, mt], [0.1], 0.1)
    with pytest.raises(UsageError):
        detect_atoms([m], [0.1], 1.5)


def test_atom_inequality_slack_signs(baseline2):
    empty = AtomReport(0, (0.0, 0.0, 1.0), 0.0, 0.0, P, Q, 0.1)
    assert check_atom_inequality(empty, 3.6) == 0.0
    # a non-extremal profile concentrated at a point has strictly positive slack
    spec = ManifoldSpec.sphere()
    chart = normal_chart(spec, NORTH, 0.2)
    f_lam, _ = scaled_pair(baseline2, 0.05)
    rough = np.random.default_rng(0).uniform(0, 1, f_lam.grid.size)
    f = truncate(DensityField(rough, P, f_lam.grid), 0.2)
    g = truncate(DensityField(rough, 1.2, f_lam.grid), 0.2)
    tr = transplant_many([(chart, f, g, 1.0)], build_grid(spec, 600))
    K = assemble_kernel(RieszKernel(1.0, spec), tr.grid)
    u = tr.u.values / tr.u.norm()
    atoms = detect_atoms([build_measures(tr.grid, K, u, P, Q)], [0.1], 0.1)
    assert len(atoms) == 1
    assert check_atom_inequality(atoms[0], baseline2.value, relative=True) > 0.05
    with pytest.raises(UsageError):
        check_atom_inequality(atoms[0], 0.0)


def test_brezis_lieb(sphere, baseline2):
    grid, K = sphere
    f = np.random.default_rng(3).uniform(0, 1, grid.size)
    assert brezis_lieb_defect(K, grid, f, f, Q) == 0.0
    assert brezis_lieb_defect(K, grid, f, np.zeros(grid.size), Q) == 0.0
    seq = bubble_sequence(baseline2, [NORTH], [2.0**-m for m in range(1, 7)], resolution=800)
    defects, masses = [], []
    for g, Km, b in seq:
        base = np.ones(g.size) / lp_norm(g, np.ones(g.size), P)
        defects.append(brezis_lieb_defect(Km, g, base + b, base, Q))
        masses.append(lp_norm(g, apply_ialpha(Km, g, b), Q) ** Q)
    assert all(a > b for a, b in zip(defects, defects[1:]))
    lams = [2.0**-m for m in range(1, 7)]
    assert loglog_slope(lams, np.array(defects) / np.array(masses)) > 0.25
    assert min(masses) > 0.5 * max(masses)


def test_commutator_constant_cutoff_vanishes(sphere):
    grid, K = sphere
    f = np.random.default_rng(4).uniform(0, 1, grid.size)
    assert commutator_norm(K, grid, np.ones(grid.size), f, Q) == 0.0


def test_cutoff_family(sphere):
    grid, _ = sphere
    phi = CutoffFamily(ManifoldSpec.sphere(), tuple(NORTH), 0.5)
    v = phi.values(grid)
    assert np.all((v >= 0) & (v <= 1))
    d = np.arccos(np.clip(grid.nodes @ NORTH, -1, 1))
    assert np.all(v[d >= 0.5] == 0)
    assert CutoffFamily(ManifoldSpec.sphere(), tuple(NORTH), 0.5).values(
        type(grid)(grid.spec, NORTH[None, :], [1.0], h=1.0))[0] == 1.0
    with pytest.raises(UsageError):
        CutoffFamily(ManifoldSpec.sphere(), tuple(NORTH), 0.0)


def test_commutator_pointwise_lipschitz_bound(sphere):
    grid, K = sphere
    lam = 0.8
    phi = CutoffFamily(ManifoldSpec.sphere(), tuple(NORTH), lam).values(grid)
    d_center = np.arccos(np.clip(grid.nodes @ NORTH, -1, 1))
    f = np.where(d_center < 0.3, 1.0, 0.0)
    wf = grid.weights * f
    comm = phi * (K.offdiag @ wf) - K.offdiag @ (phi * wf)
    lip = 8 / (3 * math.sqrt(3) * lam)
    D = pairwise_distance(grid.spec, grid.nodes)
    bound = lip * (D * K.offdiag) @ wf
    inside = d_center < 0.3
    assert np.all(np.abs(comm[inside]) <= bound[inside] * (1 + 1e-12))
    assert np.max(np.abs(comm[inside])) < 0.5 * np.max(np.abs(K.offdiag @ wf))


def test_commutator_decays_for_concentrating_bubbles(baseline2):
    seq = bubble_sequence(baseline2, [NORTH], [2.0**-m for m in range(1, 7)], resolution=800)
    spec = ManifoldSpec.sphere()
    vals = [commutator_norm(K, g, CutoffFamily(spec, tuple(NORTH), 0.5), u, Q) for g, K, u in seq]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.2 * vals[0]


def test_commutator_decays_for_oscillations():
    spec = ManifoldSpec.torus((1.0,))
    grid = build_grid(spec, 2000)
    K = assemble_kernel(RieszKernel(0.5, spec), grid)
    q = 1 / (1 / 1.5 - 0.5)
    phi = CutoffFamily(spec, (0.5,), 0.3)
    vals = [commutator_norm(K, grid, phi, np.cos(2 * np.pi * k * grid.nodes[:, 0]), q) for k in (2, 4, 8, 16, 32)]
    for a, b in zip(vals, vals[1:]):
        assert b < a / 2


def test_split_exponent():
    assert split_exponent(1.5, 2.0) == pytest.approx(1.2)
    assert split_exponent(2.0, 2.0) == pytest.approx(1.0)


def test_split_check_identical_sequence(sphere):
    grid, K = sphere
    f = np.ones(grid.size)
    table = compactness_split_check(K, grid, [f, f], f, [0.4, 0.2], 2.0, P)
    assert all(row["far_diff"] == 0.0 for row in table.rows)
    assert table.s == pytest.approx(1.2)
    assert table.expected_slope == pytest.approx(2 / 3)
    with pytest.raises(ExponentError):
        compactness_split_check(K, grid, [f], f, [0.4], 7.0, P)


def test_split_check_near_bound_holds(sphere):
    grid, K = sphere
    f = np.ones(grid.size)
    phase = np.arctan2(grid.nodes[:, 1], grid.nodes[:, 0])
    seq = [f * (1 + 0.5 * np.cos(k * phase)) for k in (2, 8)]
    table = compactness_split_check(K, grid, seq, f, [0.4, 0.2, 0.1], 2.0, P)
    for row in table.rows:
        assert row["near_diff"] <= row["near_bound"] * (1 + 1e-12)


def test_split_check_far_part_decays_with_frequency(tmp_path):
    spec = ManifoldSpec.torus((1.0, 1.0))
    grid = build_grid(spec, 64)
    K = assemble_kernel(RieszKernel(1.0, spec), grid)
    f = np.ones(grid.size)
    seq = [f * (1 + np.cos(2 * np.pi * k * grid.nodes[:, 0])) for k in (1, 2, 4, 8)]
    table = compactness_split_check(K, grid, seq, f, [0.2, 0.1], 2.0, P)
    for rho in (0.2, 0.1):
        # the truncated kernel's multiplier oscillates, so compare envelopes
        far = table.far(rho)
        assert far[-1] < 0.1 * max(far[:2])
    table.to_csv(tmp_path / "split.csv")
    lines = (tmp_path / "split.csv").read_text().splitlines()
    assert lines[0] == "rho,m,far_diff,near_diff,near_bound,tail"
    assert len(lines) == 1 + 8


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0001, 2.0), st.floats(0.5, 5.0), st.floats(1.1, 4.0), st.floats(0.0, 0.99),
       st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5))
def test_contradiction_chain_strict(ratio, n_proxy, p, f_mass, raw):
    q = p * 3.0
    mu = np.asarray(raw) / np.sum(raw) * (1 - f_mass)
    assume(np.all(mu > 1e-6))
    chain, bound = contradiction_chain(ratio * n_proxy, n_proxy, f_mass, mu, p, q)
    assert chain < bound


def test_contradiction_chain_value():
    chain, bound = contradiction_chain(2.0, 1.0, 0.5, [0.5], 1.0 + 1e-9, 2.0)
    assert bound == pytest.approx(4.0)
    assert chain == pytest.approx(4 * 0.25 + 0.25, rel=1e-6)
