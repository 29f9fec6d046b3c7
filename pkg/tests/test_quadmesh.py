import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marfm import quadmesh as qm


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 16, 33, 64])
def test_rule_matches_leggauss(n):
    rule = qm.gauss_legendre(n)
    x, w = np.polynomial.legendre.leggauss(n)
    assert np.max(np.abs(rule.nodes - x)) < 1e-14
    assert np.max(np.abs(rule.weights - w)) < 1e-14


@pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 10])
def test_exact_for_degree_2n_minus_1(n):
    rule = qm.gauss_legendre(n)
    for p in range(2 * n):
        exact = (1 - (-1) ** (p + 1)) / (p + 1)
        assert abs(np.sum(rule.weights * rule.nodes**p) - exact) <= 1e-11


@pytest.mark.parametrize("n", [100, 128])
def test_large_rule_against_mpmath(n):
    # leggauss itself drifts to ~1e-14 here, so the reference is extended precision
    mpmath.mp.dps = 40
    rule = qm.gauss_legendre(n)
    half = rule.nodes[n // 2:]
    for t, w in zip(half, rule.weights[n // 2:]):
        root = mpmath.findroot(lambda z: mpmath.legendre(n, z), mpmath.mpf(t), tol=1e-24, verify=False)
        dp = mpmath.diff(lambda z: mpmath.legendre(n, z), root)
        assert abs(t - float(root)) <= 1e-15
        assert abs(w - float(2 / ((1 - root**2) * dp**2))) <= 1e-15


def test_rule_rejects_bad_size():
    with pytest.raises(ValueError):
        qm.gauss_legendre(0)
    with pytest.raises(ValueError):
        qm.gauss_legendre(129)


def test_tensor_exactness_2d():
    mesh = qm.build_uniform_mesh(((0, 0), (1, 2)), 3, qm.gauss_legendre(3))
    f = lambda y: y[:, 0] ** 5 * y[:, 1] ** 4
    assert qm.integrate(mesh, f) == pytest.approx((1 / 6) * (2**5 / 5), rel=1e-12)


def test_uniform_mesh_counts_and_order():
    mesh = qm.build_uniform_mesh(((0, 0), (1, 1)), 4, qm.gauss_legendre(3))
    assert len(mesh.leaves) == 16
    assert mesh.n_points == 144
    assert mesh.weights.sum() == pytest.approx(1.0, abs=1e-14)
    keys = [(c.level, c.lo) for c in mesh.leaves]
    assert keys == sorted(keys)


def test_degenerate_box():
    with pytest.raises(ValueError):
        qm.build_uniform_mesh(((0, 0), (0, 1)), 2, qm.gauss_legendre(2))


def test_refine_errors():
    mesh = qm.build_uniform_mesh(((0, 0), (1, 1)), 1, qm.gauss_legendre(2), max_level=1)
    with pytest.raises(KeyError):
        qm.refine(mesh, ["nope"])
    fine = qm.refine(mesh, [mesh.leaves[0].id])
    with pytest.raises(ValueError):
        qm.refine(fine, [fine.leaves[0].id])


def test_3d_children():
    mesh = qm.build_uniform_mesh(((0, 0, 0), (1, 1, 1)), 1, qm.gauss_legendre(2))
    fine = qm.refine(mesh, mesh.leaf_ids())
    assert len(fine.leaves) == 8
    assert fine.weights.sum() == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=6), st.integers(1, 4))
def test_refinement_conserves_volume(picks, n):
    mesh = qm.build_uniform_mesh(((-1, 0), (2, 1)), 2, qm.gauss_legendre(n))
    for p in picks:
        leaf = mesh.leaves[p % len(mesh.leaves)]
        mesh = qm.refine(mesh, [leaf.id])
    assert mesh.weights.sum() == pytest.approx(3.0, rel=1e-13)
    vol = sum(c.volume for c in mesh.leaves)
    assert vol == pytest.approx(3.0, rel=1e-13)


def test_refinement_converges_at_gauss_rate():
    f = lambda y: np.exp(3 * y[:, 0]) * np.cos(2 * y[:, 1])
    exact = (np.exp(3) - 1) / 3 * np.sin(2) / 2
    errs = []
    mesh = qm.build_uniform_mesh(((0, 0), (1, 1)), 1, qm.gauss_legendre(3))
    for _ in range(4):
        errs.append(abs(qm.integrate(mesh, f) - exact))
        mesh = qm.refine(mesh, mesh.leaf_ids())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 4.0)


def test_mesh_csv(tmp_path):
    mesh = qm.build_uniform_mesh(((0, 0), (1, 1)), 2, qm.gauss_legendre(2))
    mesh = qm.refine(mesh, [mesh.leaves[0].id])
    path = tmp_path / "mesh.csv"
    mesh.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "id,level,lo0,lo1,hi0,hi1"
    assert len(lines) == 1 + len(mesh.leaves)
