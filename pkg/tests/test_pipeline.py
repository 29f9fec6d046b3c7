import math
from collections import deque

import numpy as np
import pytest

from marfm import assembly, basis as b, harness as h, pipeline as p, quadmesh as qm, solver

UNIT = ((0.0, 0.0), (1.0, 1.0))


class Field:
    """Model stand-in built from plain callables."""

    def __init__(self, f, grad=None):
        self.f = f
        self.g = grad

    def evaluate(self, x):
        return self.f(x)

    def gradient(self, x):
        if self.g is None:
            return np.zeros_like(x)
        return self.g(x)


class GridField(Field):
    """Piecewise-constant field read off a cell-centred array over the unit square."""

    def __init__(self, arr):
        n = arr.shape[0]
        super().__init__(lambda x: arr[np.minimum((x[:, 0] * n).astype(int), n - 1),
                                       np.minimum((x[:, 1] * n).astype(int), n - 1)])


def _gauss(c=(0.5, 0.5), v=125.0, amp=1.0):
    c = np.asarray(c)
    f = lambda x: amp * np.exp(-v * np.sum((x - c) ** 2, axis=1))
    g = lambda x: -2 * v * (x - c) * f(x)[:, None]
    return Field(f, g)


def _disc_field(c=(0.5, 0.5), r=0.2, k=200.0):
    fam = b.SigmoidCircle(np.array([c]), np.array([r]), np.array([k]))
    return p.SourceModel(b.BasisSet([fam]), np.array([1.0]))


@pytest.fixture(scope="module")
def small_problem():
    src = h.make_source("gaussian", center=(0.5, 0.5), decay=40.0)
    layout = h.rectangle_layout(((-0.5, -0.5), (1.5, 1.5)), 6)
    ks = h.arithmetic_wavenumbers(1.0, 21.0, 4.0)
    D, N = h.forward_data(src, layout, ks, domain=UNIT, n_per_axis=160)
    pts = layout.points()
    return src, p.Problem(UNIT, ks, pts, assembly.data_from_arrays(D, N, pts))


# --- indicators ---------------------------------------------------------------

def test_zero_source_marks_nothing():
    mesh = qm.build_uniform_mesh(UNIT, 4, qm.gauss_legendre(3))
    ind = p.compute_indicators(mesh, Field(lambda x: np.zeros(len(x))))
    assert not np.any(ind.ind_total) and ind.marked == []


def test_uniform_integrand_marks_nothing():
    mesh = qm.build_uniform_mesh(UNIT, 4, qm.gauss_legendre(3))
    ind = p.compute_indicators(mesh, Field(lambda x: np.full(len(x), 2.5)))
    assert np.allclose(ind.ind_total, ind.ind_total[0]) and ind.marked == []


def test_indicator_totals_and_threshold():
    mesh = qm.build_uniform_mesh(UNIT, 4, qm.gauss_legendre(3))
    ind = p.compute_indicators(mesh, _gauss(), gammas=(0.3, 2.0), c=1.5)
    assert np.allclose(ind.ind_total, 0.3 * ind.ind_abs + 2.0 * ind.ind_grad, rtol=1e-15)
    assert ind.delta_k == pytest.approx(1.5 * ind.ind_total.mean(), rel=1e-15)
    marked = {cid for cid, v in zip(ind.leaf_ids, ind.ind_total) if v > ind.delta_k}
    assert set(ind.marked) == marked


def test_disc_boundary_cells_rank_high():
    n = 8
    mesh = qm.build_uniform_mesh(UNIT, n, qm.gauss_legendre(4))
    model = _disc_field(k=80.0)
    ind = p.compute_indicators(mesh, model)
    # oracle: midpoint sums of |grad S| on a 40x40 subgrid per cell, by finite differences
    sub = 40
    oracle = []
    eps = 1e-6
    for cell in mesh.leaves:
        lo, hi = np.array(cell.lo), np.array(cell.hi)
        t = (np.arange(sub) + 0.5) / sub
        X, Y = np.meshgrid(lo[0] + t * (hi[0] - lo[0]), lo[1] + t * (hi[1] - lo[1]), indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        gx = (model.evaluate(pts + [eps, 0]) - model.evaluate(pts - [eps, 0])) / (2 * eps)
        gy = (model.evaluate(pts + [0, eps]) - model.evaluate(pts - [0, eps])) / (2 * eps)
        oracle.append(np.mean(np.hypot(gx, gy)) * cell.volume)
    oracle = np.array(oracle)
    boundary = []
    for cell in mesh.leaves:
        corners = np.array([[x, y] for x in (cell.lo[0], cell.hi[0]) for y in (cell.lo[1], cell.hi[1])])
        r = np.linalg.norm(corners - 0.5, axis=1)
        boundary.append(r.min() < 0.2 < r.max())
    boundary = np.array(boundary)
    q = np.quantile(ind.ind_grad, 0.75)
    assert np.all(ind.ind_grad[boundary] >= q - 1e-12)
    assert np.all(oracle[boundary] >= np.quantile(oracle, 0.75) - 1e-12)
    # both rankings agree on the top set
    assert set(np.argsort(ind.ind_grad)[-boundary.sum():]) == set(np.argsort(oracle)[-boundary.sum():])


@pytest.mark.parametrize("alpha", [0.01, 3.0, 1e4])
def test_indicator_scale_equivariance(alpha):
    mesh = qm.build_uniform_mesh(UNIT, 5, qm.gauss_legendre(3))
    g = _gauss((0.3, 0.6), 60.0)
    g2 = _gauss((0.3, 0.6), 60.0, amp=alpha)
    a, c = p.compute_indicators(mesh, g), p.compute_indicators(mesh, g2)
    assert np.allclose(c.ind_abs, alpha * a.ind_abs, rtol=1e-12)
    assert np.allclose(c.ind_grad, alpha * a.ind_grad, rtol=1e-12)
    assert c.delta_k == pytest.approx(alpha * a.delta_k, rel=1e-12)
    assert c.marked == a.marked


# --- error metric ------------------------------------------------------------------

def test_l2_error_trivial_cases():
    ref = h.make_source("gaussian", center=(0.4, 0.5), decay=30.0)
    assert p.l2_relative_error(Field(ref), ref, domain=UNIT) == 0.0
    twice = Field(lambda x: 2 * ref(x))
    assert p.l2_relative_error(twice, ref, domain=UNIT) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ValueError):
        p.l2_relative_error(twice, lambda x: np.zeros(len(x)), domain=UNIT)


def test_l2_error_matches_compensated_sum():
    ref = h.make_source("gaussian", center=(0.4, 0.5), decay=30.0)
    model = _gauss((0.41, 0.5), 31.0)
    grid, _, _ = p.eval_grid(UNIT, 200)
    e = p.l2_relative_error(model, ref, grid=grid)
    d = model.evaluate(grid) - ref(grid)
    s = ref(grid)
    oracle = math.sqrt(math.fsum(d * d)) / math.sqrt(math.fsum(s * s))
    assert abs(e - oracle) <= 1e-12 * oracle


def test_eval_grid_is_cell_centred():
    pts, axes, shape = p.eval_grid(UNIT, 4)
    assert shape == (4, 4) and len(pts) == 16
    assert np.allclose(axes[0], [0.125, 0.375, 0.625, 0.875])
    _, _, shape3 = p.eval_grid(((0, 0, 0), (1, 1, 1)), 3)
    assert shape3 == (3, 3, 3)


def test_model_gradient_matches_finite_differences():
    bs = b.build_random_set(40, 8, "tanh", 2)
    bs = bs.append(b.sample_morphology("gaussian_bump",
                                       type("D", (), {"center": np.array([0.5, 0.5]),
                                                      "decay_window": (5.0, 30.0)})(), 10, 3))
    model = p.SourceModel(bs, np.random.default_rng(0).normal(size=bs.size))
    x = np.random.default_rng(1).uniform(0, 1, (100, 2))
    eps = 1e-6
    fd = np.column_stack([(model.evaluate(x + eps * e) - model.evaluate(x - eps * e)) / (2 * eps)
                          for e in np.eye(2)])
    g = model.gradient(x)
    assert np.max(np.abs(g - fd)) <= 1e-5 * np.max(np.abs(g))


# --- region detection ----------------------------------------------------------------

def _flood_fill_count(mask):
    n, m = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for i in range(n):
        for j in range(m):
            if mask[i, j] and not seen[i, j]:
                count += 1
                queue = deque([(i, j)])
                seen[i, j] = True
                while queue:
                    a, c = queue.popleft()
                    for da, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        u, v = a + da, c + dc
                        if 0 <= u < n and 0 <= v < m and mask[u, v] and not seen[u, v]:
                            seen[u, v] = True
                            queue.append((u, v))
    return count


def test_component_count_matches_flood_fill():
    rng = np.random.default_rng(5)
    for trial in range(50):
        arr = (rng.uniform(size=(20, 20)) < rng.uniform(0.2, 0.6)).astype(float)
        arr[0, 0] = 1.0  # keep the maximum at 1
        mask = p.detect_regions(GridField(arr), UNIT, t_abs=0.5, resolution=20, min_points=1)
        assert mask.n_regions == _flood_fill_count(arr > 0.5), trial


def test_single_bump_one_component():
    mask = p.detect_regions(_gauss((0.3, 0.7), 80.0), UNIT, t_abs=0.5, resolution=100)
    assert mask.n_regions == 1


def test_two_discs_split_by_gradient_threshold():
    fam = b.SigmoidCircle(np.array([[0.3, 0.5], [0.72, 0.5]]), np.array([0.12, 0.12]),
                          np.array([2000.0, 2000.0]))
    model = p.SourceModel(b.BasisSet([fam]), np.ones(2))
    mask = p.detect_regions(model, UNIT, t_grad=1 / 2.8, mode="grad", resolution=200)
    assert mask.n_regions == 2


def test_speckle_filter_and_modes():
    arr = np.zeros((20, 20))
    arr[5:10, 5:10] = 1.0
    arr[15, 15] = 1.0  # isolated single point
    assert p.detect_regions(GridField(arr), UNIT, resolution=20, min_points=4).n_regions == 1
    assert p.detect_regions(GridField(arr), UNIT, resolution=20, min_points=1).n_regions == 2
    with pytest.raises(ValueError):
        p.detect_regions(GridField(arr), UNIT, resolution=20, mode="either")


def test_empty_mask_rejected():
    with pytest.raises(ValueError, match="lower"):
        p.detect_regions(Field(lambda x: np.zeros(len(x))), UNIT, resolution=20)


def test_both_mode_is_intersection():
    mask = p.detect_regions(_gauss(), UNIT, t_abs=0.3, t_grad=0.3, mode="both", resolution=80)
    assert np.array_equal(mask.q, mask.q_abs & mask.q_grad)


# --- shape estimates ---------------------------------------------------------------

def test_disc_shape_estimate():
    c, r = np.array([0.5, 0.497]), 0.2209
    f = lambda x: (np.linalg.norm(x - c, axis=1) <= r).astype(float)
    mask = p.detect_regions(Field(f), UNIT, resolution=200)
    est = p.estimate_shape(mask, 1, "sigmoid_circle")
    step = 1 / 200
    assert np.all(np.abs(est.center - c) <= step)
    assert abs(est.radius - r) <= step
    assert est.center == pytest.approx(0.5 * (est.lower + est.upper))


def test_symmetric_gaussian_has_equal_fwhm():
    mask = p.detect_regions(_gauss(), UNIT, t_abs=0.1, resolution=200)
    ps = p.peak_stats(mask, 1)
    assert abs(ps.fwhm[0] - ps.fwhm[1]) <= 1 / 200


def test_fwhm_of_gaussian_matches_analytic_width():
    v = 125.0
    mask = p.detect_regions(_gauss(v=v), UNIT, t_abs=0.05, resolution=200)
    ps = p.peak_stats(mask, 1, rule="gaussian")
    exact = 2.0 * math.sqrt(math.log(2.0) / v)
    assert np.allclose(ps.fwhm, exact, atol=1 / 200)
    est = p.estimate_shape(mask, 1, "gaussian_bump", fwhm_rule="gaussian")
    lo, hi = est.decay_window
    assert lo <= v <= hi


def test_linear_fwhm_rule_formula():
    mask = p.detect_regions(_gauss(v=125.0), UNIT, t_abs=0.05, resolution=200)
    ps = p.peak_stats(mask, 1)
    assert ps.v_min == pytest.approx(2.355**2 / (2 * ps.fwhm.max()), rel=1e-15)
    assert ps.v_max == pytest.approx(2.355**2 / (2 * ps.fwhm.min()), rel=1e-15)
    with pytest.raises(ValueError):
        p.peak_stats(mask, 1, rule="median")


def test_contour_kind_needs_a_real_region():
    arr = np.zeros((20, 20))
    arr[4:6, 4] = 1.0
    mask = p.detect_regions(GridField(arr), UNIT, resolution=20, min_points=1)
    with pytest.raises(ValueError):
        p.estimate_shape(mask, 1, "contour_sigmoid")


def test_contour_extraction_on_ellipse():
    f = lambda x: (((x[:, 0] - 0.5) / 0.3) ** 2 + ((x[:, 1] - 0.5) / 0.2) ** 2 <= 1).astype(float)
    mask = p.detect_regions(Field(f), UNIT, resolution=200)
    est = p.estimate_shape(mask, 1, "contour_sigmoid")
    assert not est.contour_open
    t = np.linspace(0, 2 * np.pi, 2000)
    ellipse = np.c_[0.5 + 0.3 * np.cos(t), 0.5 + 0.2 * np.sin(t)]
    d, _ = b.polygon_distance(ellipse, est.contour)
    assert d.max() <= 3 / 200


def test_contour_touching_boundary_is_flagged():
    f = lambda x: (x[:, 0] <= 0.3).astype(float)
    mask = p.detect_regions(Field(f), UNIT, resolution=100)
    assert p.estimate_shape(mask, 1, "contour_sigmoid").contour_open


# --- the two phases --------------------------------------------------------------------

def test_ia_rfm_infinite_eps_stops_after_one_round(small_problem):
    _, prob = small_problem
    bs = b.build_random_set(60, 10, "tanh", 0)
    res = p.run_ia_rfm(prob, bs, p.IAConfig(cells_per_axis=3, n_gauss=3, eps=math.inf,
                                            lambda_sq=1e-8))
    assert [r["iteration"] for r in res.history] == [0, 1]
    assert res.history[1]["n_cells"] > res.history[0]["n_cells"]


@pytest.mark.parametrize("max_iter", [0, 2])
def test_ia_rfm_respects_max_iter(small_problem, max_iter):
    _, prob = small_problem
    bs = b.build_random_set(60, 10, "tanh", 0)
    res = p.run_ia_rfm(prob, bs, p.IAConfig(cells_per_axis=3, n_gauss=3, eps=0.0,
                                            max_iter=max_iter, lambda_sq=1e-8))
    assert len(res.history) <= max_iter + 1
    model, mesh, history = res
    assert model.provenance == f"ia_rfm_iter_{len(history) - 1}"


@pytest.mark.parametrize("cells,lam", [(3, 1e-10), (3, 1e-8), (4, 1e-10), (4, 1e-8)])
def test_ia_rfm_error_decreases_noise_free(small_problem, cells, lam):
    # start meshes of 81 / 144 points; a 16-point start is too coarse for 120 bases
    src, prob = small_problem
    bs = b.build_random_set(120, 10, "tanh", 1)
    res = p.run_ia_rfm(prob, bs, p.IAConfig(cells_per_axis=cells, n_gauss=3, eps=0.0, max_iter=4,
                                            lambda_sq=lam), reference=src)
    errs = [r["E_l2"] for r in res.history]
    assert all(b_ <= 1.1 * a_ for a_, b_ in zip(errs, errs[1:])), errs
    assert errs[-1] < errs[0]


def test_ia_rfm_lcurve_on_first_iteration(small_problem):
    _, prob = small_problem
    bs = b.build_random_set(60, 10, "tanh", 0)
    res = p.run_ia_rfm(prob, bs, p.IAConfig(cells_per_axis=3, n_gauss=3, max_iter=1,
                                            lambda_grid=tuple(np.logspace(-2, -14, 25))))
    assert res.lcurve is not None
    assert len({r["lambda_sq"] for r in res.history}) == 1


def test_ia_rfm_history_log(small_problem, tmp_path):
    import json

    _, prob = small_problem
    path = tmp_path / "hist.jsonl"
    with open(path, "w") as fh:
        res = p.run_ia_rfm(prob, b.build_random_set(30, 10, "tanh", 0),
                           p.IAConfig(cells_per_axis=2, n_gauss=3, max_iter=1, lambda_sq=1e-6), log=fh)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == len(res.history)
    assert {"phase", "n_integral", "lambda_sq", "loss", "seconds"} <= set(rows[0])


def _ma_setup(small_problem, **ma):
    src, prob = small_problem
    bs = b.build_random_set(60, 10, "tanh", 0)
    ia = p.IAConfig(cells_per_axis=3, n_gauss=3, max_iter=1, lambda_sq=1e-8)
    first = p.run_ia_rfm(prob, bs, ia, reference=src)
    cfg = p.MAConfig(region_kinds=["gaussian_bump"], counts={"gaussian_bump": 30}, t_abs=0.5,
                     resolution=60, **ma)
    return src, prob, bs, ia, first, cfg


def test_ma_rfm_residual_gate_returns_phase_one(small_problem):
    src, prob, bs, ia, first, cfg = _ma_setup(small_problem, eps_res=math.inf)
    out = p.run_ma_rfm(prob, bs, ia, cfg, reference=src, phase_one=first)
    assert out.rounds == 0
    assert out.model is first.model
    assert out.history == first.history


def test_ma_rfm_append_never_raises_residual(small_problem):
    src, prob, bs, ia, first, cfg = _ma_setup(small_problem, max_rounds=2)
    out = p.run_ma_rfm(prob, bs, ia, cfg, reference=src, phase_one=first)
    assert 1 <= out.rounds <= 2
    losses = [first.loss] + [r["loss"] for r in out.history if r["phase"] == "ma_rfm"]
    assert all(b_ <= a_ * (1 + 1e-9) + 1e-14 for a_, b_ in zip(losses, losses[1:]))
    assert out.model.basis.size == bs.size + 30 * out.rounds
    assert out.model.provenance == f"ma_rfm_iter_{out.rounds}"


def test_ma_rfm_append_matches_fresh_assembly(small_problem):
    src, prob, bs, ia, first, cfg = _ma_setup(small_problem, max_rounds=1)
    out = p.run_ma_rfm(prob, bs, ia, cfg, phase_one=first)
    fresh = assembly.assemble_operator(first.mesh, out.model.basis, prob.ks, prob.points)
    assert np.allclose(out.system.A, fresh.A, rtol=0, atol=1e-12 * np.abs(fresh.A).max())
    sol = solver.solve_tikhonov(fresh.A, prob.rhs(), out.lambda_sq)
    assert np.allclose(sol.s, out.model.s, atol=1e-8 * np.abs(sol.s).max())


def test_per_region_kind_lists():
    cfg = p.MAConfig(region_kinds=[["sigmoid_rectangle"], ["sigmoid_circle"]])
    assert p._kinds_for(cfg, 0) == ["sigmoid_rectangle"]
    assert p._kinds_for(cfg, 1) == ["sigmoid_circle"]
    assert p._kinds_for(p.MAConfig(), 5) == ["sigmoid_circle"]
