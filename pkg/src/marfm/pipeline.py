"""Two-phase reconstruction: adaptive quadrature (IA-RFM) then morphology enhancement (MA-RFM).

Phase one alternates least-squares solves with refinement of the quadrature
cells whose indicator ``g_abs * int|S| + g_grad * int|grad S|`` exceeds
``c`` times the mean.  Phase two looks at the phase-one source on a test grid,
finds the regions where |S| or |grad S| is large, estimates simple shape
statistics per region, and appends morphology bases sampled around them.
"""
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import assembly, quadmesh, solver
from .basis import BasisSet, MorphologyWindows, sample_morphology, smooth_contour

GAUSS_FWHM = 2.355


# --- problem & model ----------------------------------------------------------

@dataclass
class Problem:
    """Everything the solver sees: source box, wavenumbers, sensors and packed data."""

    domain: tuple
    ks: assembly.WavenumberSet
    points: list
    data: dict
    block_weights: tuple = (1.0, 1.0)

    @property
    def dim(self):
        return len(self.domain[0])

    def rhs(self):
        rows = assembly.build_row_map(self.ks.values, self.points)
        rw = np.where(np.isin(rows["kind"], ("ReD", "ImD")), *self.block_weights)
        return assembly.assemble_rhs(self.data, rows, rw)


@dataclass
class SourceModel:
    basis: BasisSet
    s: np.ndarray
    provenance: str = "initial"

    def evaluate(self, x):
        return self.basis.evaluate(x, self.s)

    def gradient(self, x):
        return self.basis.grad_dot(x, self.s)


def eval_grid(domain, resolution):
    """Cell-centred regular grid over the box; returns (points, axes, shape)."""
    lo = np.asarray(domain[0], dtype=float)
    hi = np.asarray(domain[1], dtype=float)
    d = len(lo)
    n = np.broadcast_to(np.asarray(resolution, dtype=int), (d,))
    axes = [lo[a] + (hi[a] - lo[a]) * (np.arange(n[a]) + 0.5) / n[a] for a in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts, axes, tuple(int(v) for v in n)


def default_resolution(dim):
    return 200 if dim == 2 else 60


def l2_relative_error(model, reference, grid=None, resolution=None, domain=None):
    """sqrt(sum (S - S_ex)^2) / sqrt(sum S_ex^2) on a uniform grid."""
    if grid is None:
        if domain is None:
            raise ValueError("need a grid or a domain")
        grid, _, _ = eval_grid(domain, resolution or default_resolution(len(domain[0])))
    approx = model.evaluate(grid) if hasattr(model, "evaluate") else np.asarray(model(grid))
    exact = np.asarray(reference(grid), dtype=float)
    denom = np.sqrt(np.sum(exact * exact))
    if denom == 0:
        raise ValueError("reference source vanishes on the evaluation grid")
    diff = approx - exact
    return float(np.sqrt(np.sum(diff * diff)) / denom)


# --- phase one ------------------------------------------------------------------

@dataclass
class RefinementIndicator:
    leaf_ids: list
    ind_abs: np.ndarray
    ind_grad: np.ndarray
    ind_total: np.ndarray
    gamma_abs: float
    gamma_grad: float
    c: float
    delta_k: float
    marked: list


def compute_indicators(mesh, model, gammas=(1.0, 1.0), c=1.0):
    """Per-cell quadrature sums of |S| and |grad S| and the refinement set."""
    y = mesh.points
    w = mesh.weights
    cells = mesh.cell_index
    s_abs = np.abs(model.evaluate(y))
    g_abs = np.linalg.norm(model.gradient(y), axis=1)
    n = len(mesh.leaves)
    ind_abs = np.bincount(cells, weights=s_abs * w, minlength=n)
    ind_grad = np.bincount(cells, weights=g_abs * w, minlength=n)
    total = gammas[0] * ind_abs + gammas[1] * ind_grad
    delta = c * float(np.mean(total))
    marked = [cell.id for cell, v in zip(mesh.leaves, total)
              if v > delta and cell.level < mesh.max_level]
    return RefinementIndicator(mesh.leaf_ids(), ind_abs, ind_grad, total, gammas[0], gammas[1],
                               c, delta, marked)


@dataclass
class IAConfig:
    cells_per_axis: int = 5
    n_gauss: int = 5
    gammas: tuple = (1.0, 1.0)
    c: float = 1.0
    eps: float = 1e-2
    max_iter: int = 10
    lambda_sq: float = None
    lambda_grid: tuple = None
    change_resolution: int = None
    max_level: int = quadmesh.MAX_LEVEL
    chunk: int = 2048
    reselect_lambda: bool = False  # L-curve on every mesh instead of the first only
    max_points: int = None  # refinement stops before exceeding this many quadrature points


@dataclass
class PhaseResult:
    model: SourceModel
    mesh: quadmesh.AdaptiveMesh
    history: list
    system: assembly.SystemMatrix = None
    cache: assembly.KernelCache = None
    lambda_sq: float = None
    lcurve: solver.LCurve = None
    loss: float = None

    def __iter__(self):
        return iter((self.model, self.mesh, self.history))


def _record(phase, iteration, mesh, lam, loss, t0, reference, model, domain, **extra):
    rec = {"phase": phase, "iteration": iteration, "n_integral": int(mesh.n_points),
           "n_cells": len(mesh.leaves), "lambda_sq": float(lam), "loss": float(loss),
           "seconds": round(time.perf_counter() - t0, 4), "n_basis": int(model.basis.size)}
    if reference is not None:
        rec["E_l2"] = l2_relative_error(model, reference, domain=domain)
    rec.update(extra)
    return rec


def _solve(system, lam, grid):
    F = solver.svd_factors(system.A, system.b)
    curve = None
    if lam is None:
        lam, curve = solver.lcurve_select(system.A, system.b, grid, F)
    sol = solver.solve_tikhonov(system.A, system.b, lam, F)
    if not np.all(np.isfinite(sol.s)):
        raise FloatingPointError(f"non-finite coefficients at lambda_sq={lam:g}")
    return sol, lam, curve


def run_ia_rfm(problem, basis, config=None, reference=None, mesh=None, log=None):
    """Adaptive quadrature loop; returns a PhaseResult (iterable as model, mesh, history)."""
    cfg = config or IAConfig()
    dim = problem.dim
    if mesh is None:
        mesh = quadmesh.build_uniform_mesh(problem.domain, cfg.cells_per_axis,
                                           quadmesh.gauss_legendre(cfg.n_gauss), cfg.max_level)
    b = problem.rhs()
    check, _, _ = eval_grid(problem.domain, cfg.change_resolution or (100 if dim == 2 else 30))
    lam = cfg.lambda_sq
    curve = None
    history = []
    prev = None
    t0 = time.perf_counter()
    for it in range(cfg.max_iter + 1):
        cache = assembly.KernelCache(mesh, problem.ks, problem.points, dim)
        system = assembly.assemble_operator(mesh, basis, problem.ks, problem.points, dim,
                                            problem.block_weights, cfg.chunk, cache).with_rhs(b)
        sol, lam, c_it = _solve(system, cfg.lambda_sq if cfg.reselect_lambda else lam, cfg.lambda_grid)
        curve = c_it or curve
        model = SourceModel(basis, sol.s, f"ia_rfm_iter_{it}")
        loss = sol.residual_norm**2
        vals = model.evaluate(check)
        change = None
        if prev is not None:
            change = float(np.linalg.norm(vals - prev) / max(np.linalg.norm(prev), 1e-300))
        rec = _record("ia_rfm", it, mesh, lam, loss, t0, reference, model, problem.domain,
                      change=change)
        history.append(rec)
        if log is not None:
            log.write(json.dumps(rec) + "\n")
        result = PhaseResult(model, mesh, history, system, cache, lam, curve, loss)
        if change is not None and change < cfg.eps:
            break
        if it == cfg.max_iter:
            break
        ind = compute_indicators(mesh, model, cfg.gammas, cfg.c)
        if not ind.marked:
            break
        grown = mesh.n_points + len(ind.marked) * (2**dim - 1) * mesh.points_per_cell
        if cfg.max_points is not None and grown > cfg.max_points:
            rec["stop"] = "max_points"
            break
        mesh = quadmesh.refine(mesh, ind.marked)
        prev = vals
    return result


# --- phase two ------------------------------------------------------------------

@dataclass
class PosteriorMask:
    points: np.ndarray
    axes: list
    shape: tuple
    values: np.ndarray
    grad_norm: np.ndarray
    q_abs: np.ndarray
    q_grad: np.ndarray
    q: np.ndarray
    labels: np.ndarray
    n_regions: int
    t_abs: float
    t_grad: float
    mode: str

    def region(self, label):
        return self.labels == label

    def to_csv(self, path):
        idx = np.flatnonzero(self.labels.ravel() > 0)
        d = self.points.shape[1]
        header = ",".join([f"x{a}" for a in range(d)] + ["label"])
        rows = np.column_stack([self.points[idx], self.labels.ravel()[idx]])
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.10g")


def detect_regions(model, domain, t_abs=0.5, t_grad=0.5, mode="abs", resolution=None,
                   min_points=4):
    """Threshold |S| and |grad S| on a test grid and split the mask into face-connected regions.

    Components with fewer than ``min_points`` grid points are discarded as speckle.
    """
    if mode not in ("abs", "grad", "both"):
        raise ValueError("mode must be 'abs', 'grad' or 'both'")
    dim = len(domain[0])
    pts, axes, shape = eval_grid(domain, resolution or default_resolution(dim))
    vals = model.evaluate(pts).reshape(shape)
    gn = np.linalg.norm(model.gradient(pts), axis=1).reshape(shape)
    q_abs = np.abs(vals) / max(np.max(np.abs(vals)), 1e-300) >= t_abs
    q_grad = gn / max(np.max(gn), 1e-300) >= t_grad
    q = {"abs": q_abs, "grad": q_grad, "both": q_abs & q_grad}[mode]
    labels, n = ndimage.label(q)
    if n:
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        small = np.flatnonzero(sizes < min_points)
        small = small[small > 0]
        if len(small):
            labels[np.isin(labels, small)] = 0
            labels, n = ndimage.label(labels > 0)
    if n == 0:
        raise ValueError("no region passed the thresholds; lower t_abs/t_grad")
    return PosteriorMask(pts, axes, shape, vals, gn, q_abs, q_grad, q, labels, int(n),
                         t_abs, t_grad, mode)


@dataclass
class PeakStats:
    peak: np.ndarray
    half_level: float
    fwhm: np.ndarray
    v_min: float
    v_max: float


@dataclass
class ShapeEstimate:
    label: int
    n_points: int
    lower: np.ndarray
    upper: np.ndarray
    center: np.ndarray
    radius: float
    width: float
    height: float
    major: float = None
    peak_stats: PeakStats = None
    decay_window: tuple = None
    contour: np.ndarray = None
    contour_open: bool = False

    def summary(self):
        out = {k: v for k, v in asdict(self).items() if k not in ("contour", "peak_stats")}
        for k, v in list(out.items()):
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
        if self.peak_stats is not None:
            out["fwhm"] = self.peak_stats.fwhm.tolist()
        return out


def _fwhm_line(t, g, i_peak, half):
    """Width of the run around ``i_peak`` where g >= half, with linear end interpolation."""
    above = g >= half
    lo = i_peak
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = i_peak
    while hi < len(g) - 1 and above[hi + 1]:
        hi += 1
    left = t[lo]
    if lo > 0 and g[lo] != g[lo - 1]:
        left = t[lo - 1] + (half - g[lo - 1]) * (t[lo] - t[lo - 1]) / (g[lo] - g[lo - 1])
    right = t[hi]
    if hi < len(g) - 1 and g[hi] != g[hi + 1]:
        right = t[hi] + (half - g[hi]) * (t[hi + 1] - t[hi]) / (g[hi + 1] - g[hi])
    return max(right - left, t[1] - t[0])


def peak_stats(mask, label, rule="linear"):
    """FWHM of axis slices through the region's peak of |S|.

    ``rule='linear'`` uses v = 2.355^2 / (2 FWHM); ``rule='gaussian'`` uses
    v = 2.355^2 / (2 FWHM^2), which is exact for exp(-v |x|^2).
    """
    if rule not in ("linear", "gaussian"):
        raise ValueError("rule must be 'linear' or 'gaussian'")
    region = mask.region(label)
    absval = np.where(region, np.abs(mask.values), -np.inf)
    idx = np.unravel_index(int(np.argmax(absval)), mask.shape)
    peak = np.array([mask.axes[a][idx[a]] for a in range(len(idx))])
    top = float(np.abs(mask.values[idx]))
    half = 0.5 * top
    fwhm = []
    for a in range(len(idx)):
        sl = list(idx)
        sl[a] = slice(None)
        g = np.abs(mask.values[tuple(sl)])
        fwhm.append(_fwhm_line(mask.axes[a], g, idx[a], half))
    fwhm = np.array(fwhm)
    power = 1 if rule == "linear" else 2
    v_min = GAUSS_FWHM**2 / (2.0 * fwhm.max() ** power)
    v_max = GAUSS_FWHM**2 / (2.0 * fwhm.min() ** power)
    return PeakStats(peak, half, fwhm, float(v_min), float(v_max))


def _extract_contour(mask, label):
    from skimage import measure

    region = mask.region(label)
    field_ = np.where(region, np.abs(mask.values), 0.0)
    level = 0.5 * field_.max()
    padded = np.pad(field_, 1)
    contours = measure.find_contours(padded, level)
    if not contours:
        return None, True
    c = max(contours, key=len) - 1.0
    h = [ax[1] - ax[0] for ax in mask.axes]
    xy = np.column_stack([mask.axes[0][0] + c[:, 0] * h[0], mask.axes[1][0] + c[:, 1] * h[1]])
    closed = np.linalg.norm(c[0] - c[-1]) < 1e-9
    touches = (np.any(c[:, 0] <= 0) or np.any(c[:, 1] <= 0)
               or np.any(c[:, 0] >= mask.shape[0] - 1) or np.any(c[:, 1] >= mask.shape[1] - 1))
    return xy, (not closed) or touches


def estimate_shape(mask, label, kind=None, fwhm_rule="linear", smooth=True):
    """Bounding-box statistics of one region plus kind-specific extras."""
    region = mask.region(label)
    n = int(region.sum())
    if n == 0:
        raise ValueError(f"region {label} is empty")
    pts = mask.points[region.ravel()]
    lower = pts.min(axis=0)
    upper = pts.max(axis=0)
    center = 0.5 * (lower + upper)
    half = 0.5 * (upper - lower)
    est = ShapeEstimate(label, n, lower, upper, center, float(half[:2].max()),
                        float(upper[0] - lower[0]), float(upper[1] - lower[1]))
    if len(half) == 3:
        est.radius = float(half.max())
        if kind == "torus_sigmoid":
            est.radius = float(half[2])
            est.major = float(max(half[0], half[1]) - half[2])
    if kind in (None, "gaussian_bump", "truncated_gaussian_circle", "relu_cone"):
        ps = peak_stats(mask, label, fwhm_rule)
        est.peak_stats = ps
        est.decay_window = (0.5 * ps.v_min, 2.0 * ps.v_max)
        if kind in ("gaussian_bump", "relu_cone"):
            est.center = ps.peak
    if kind == "contour_sigmoid":
        if n < 4 or len(half) != 2:
            raise ValueError("contour extraction needs a 2D region with at least 4 points")
        xy, is_open = _extract_contour(mask, label)
        est.contour_open = bool(is_open)
        if xy is not None and len(xy) >= 4:
            h = mask.axes[0][1] - mask.axes[0][0]
            est.contour = smooth_contour(xy, h) if smooth else xy
    return est


@dataclass
class MAConfig:
    """Phase-two settings.

    ``region_kinds`` is either one list of kinds applied to every region or a
    list of lists indexed by region (regions are numbered in raster order of
    the test grid).  ``counts`` maps kind -> number of bases per region.
    """

    region_kinds: list = field(default_factory=lambda: ["sigmoid_circle"])
    counts: dict = field(default_factory=lambda: {"sigmoid_circle": 400})
    t_abs: float = 0.5
    t_grad: float = 0.5
    mode: str = "abs"
    windows: object = None
    eps_res: float = 0.0
    max_rounds: int = 1
    resolution: int = None
    reselect_lambda: bool = False
    fwhm_rule: str = "linear"
    min_points: int = 4
    seed: int = 1


def _kinds_for(cfg, region_index):
    kinds = cfg.region_kinds
    if kinds and isinstance(kinds[0], (list, tuple)):
        if region_index >= len(kinds):
            return list(kinds[-1])
        return list(kinds[region_index])
    return list(kinds)


def _windows_for(cfg, kind):
    w = cfg.windows
    if isinstance(w, dict):
        return w.get(kind, MorphologyWindows())
    return w or MorphologyWindows()


def enhance(model, domain, cfg, round_index):
    """Detect regions on ``model`` and sample the configured morphology bases around them."""
    mask = detect_regions(model, domain, cfg.t_abs, cfg.t_grad, cfg.mode, cfg.resolution,
                          cfg.min_points)
    families, shapes = [], []
    for r in range(mask.n_regions):
        for j, kind in enumerate(_kinds_for(cfg, r)):
            est = estimate_shape(mask, r + 1, kind, cfg.fwhm_rule)
            shapes.append((kind, est))
            count = int(cfg.counts.get(kind, 0))
            if count <= 0:
                continue
            seed = cfg.seed + 1000 * round_index + 37 * r + j
            families.append(sample_morphology(kind, est, count, seed, _windows_for(cfg, kind)))
    return mask, shapes, families


def run_ma_rfm(problem, basis, ia_config=None, ma_config=None, reference=None, log=None,
               phase_one=None):
    """Phase one followed by residual-gated morphology enhancement rounds."""
    cfg = ma_config or MAConfig()
    first = phase_one or run_ia_rfm(problem, basis, ia_config, reference, log=log)
    history = list(first.history)
    system, cache, lam = first.system, first.cache, first.lambda_sq
    model = first.model
    loss = first.loss
    current = basis
    shapes_all, mask = [], None
    t0 = time.perf_counter()
    i = 0
    while loss >= cfg.eps_res and i < cfg.max_rounds:
        i += 1
        mask, shapes, fams = enhance(model, problem.domain, cfg, i)
        shapes_all.append(shapes)
        if not fams:
            break
        extra = BasisSet(fams)
        system = assembly.append_columns(system, cache, extra, weights=problem.block_weights)
        current = current.append(*fams)
        sol, lam, _ = _solve(system, None if cfg.reselect_lambda else lam,
                             ia_config.lambda_grid if ia_config else None)
        model = SourceModel(current, sol.s, f"ma_rfm_iter_{i}")
        loss = sol.residual_norm**2
        rec = _record("ma_rfm", i, first.mesh, lam, loss, t0, reference, model, problem.domain,
                      n_regions=mask.n_regions,
                      shapes=[{"kind": k, **e.summary()} for k, e in shapes])
        history.append(rec)
        if log is not None:
            log.write(json.dumps(rec) + "\n")
    out = PhaseResult(model, first.mesh, history, system, cache, lam, first.lcurve, loss)
    out.phase_one = first
    out.rounds = i
    out.shapes = shapes_all
    out.mask = mask
    return out
