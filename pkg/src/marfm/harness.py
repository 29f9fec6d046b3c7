"""Synthetic data: reference sources, sensor layouts, forward integrals, noise,
circular-harmonic data extension and the consistent-data construction with a
controlled model inconsistency.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import quadmesh, specfun
from .assembly import KINDS, MeasurementPoint, WavenumberSet, data_from_arrays
from .solver import svd_factors


# --- reference sources ----------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSource:
    kind: str
    params: dict
    evaluator: object = field(repr=False, compare=False)
    support: tuple = None  # bounding box of the support, used to trim oracle quadrature
    rule: object = field(default=None, repr=False, compare=False)

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))


def _disc_rule(center, r, n_r=200, n_theta=800):
    """Polar rule on a disc: Gauss-Legendre in r, trapezoid in theta."""
    g = quadmesh.gauss_legendre(min(n_r, 64))
    m = max(1, n_r // 64)
    edges = np.linspace(0.0, r, m + 1)
    rr, wr = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        rr.append(0.5 * (b - a) * (g.nodes + 1) + a)
        wr.append(0.5 * (b - a) * g.weights)
    rr = np.concatenate(rr)
    wr = np.concatenate(wr)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R, T = np.meshgrid(rr, th, indexing="ij")
    W = (wr * rr)[:, None] * np.full(n_theta, 2 * np.pi / n_theta)[None]
    pts = np.column_stack([center[0] + (R * np.cos(T)).ravel(), center[1] + (R * np.sin(T)).ravel()])
    return pts, W.ravel()


def mountain(x):
    x1, x2 = x[:, 0], x[:, 1]
    return (1.1 * np.exp(-200.0 * ((x1 - 0.01) ** 2 + (x2 - 0.12) ** 2))
            - 100.0 * (x2**2 - x1**2) * np.exp(-90.0 * (x1**2 + x2**2)))


def make_source(kind, **params):
    """Reference source by name; parameters default to the worked examples."""
    if kind == "mountain":
        return ReferenceSource(kind, {}, mountain, ((-0.3, -0.3), (0.3, 0.3)))
    if kind in ("disc", "disc_indicator"):
        c = np.asarray(params.get("center", (0.5, 0.5)), dtype=float)
        r = float(params.get("radius", 0.2))
        amp = float(params.get("amplitude", 1.0))

        def f(x):
            return amp * (np.sum((x - c) ** 2, axis=1) <= r * r).astype(float)

        def rule(n):
            return _disc_rule(c, r, n_r=n // 2, n_theta=2 * n)

        return ReferenceSource("disc_indicator", {"center": c.tolist(), "radius": r},
                               f, (tuple(c - r), tuple(c + r)), rule)
    if kind == "two_gaussian_discs":
        x_hat = float(params.get("x_hat", -0.06))
        x_bar = float(params.get("x_bar", 0.08))
        r = float(params.get("radius", 0.06))

        def f(x):
            r1 = (x[:, 0] - x_hat) ** 2 + x[:, 1] ** 2
            r2 = (x[:, 0] - x_bar) ** 2 + x[:, 1] ** 2
            return (np.where(r1 <= r * r, 0.5 * np.exp(-550.0 * r1), 0.0)
                    + np.where(r2 <= r * r, 0.5 * np.exp(-550.0 * r2), 0.0))

        return ReferenceSource(kind, {"x_hat": x_hat, "x_bar": x_bar, "radius": r}, f,
                               ((x_hat - r, -r), (x_bar + r, r)))
    if kind in ("rect_minus_circle", "rect_plus_circle"):
        c = np.asarray(params.get("center", (0.5, 0.5)), dtype=float)
        r = float(params.get("radius", 0.2))
        rect = np.asarray(params.get("rect", ((0.29, 0.3), (0.49, 0.7))), dtype=float)
        sign = -1.0 if kind == "rect_minus_circle" else 1.0

        def f(x):
            disc = (np.sum((x - c) ** 2, axis=1) <= r * r).astype(float)
            box = np.all((x >= rect[0]) & (x <= rect[1]), axis=1).astype(float)
            return disc + sign * box

        lo = np.minimum(c - r, rect[0])
        hi = np.maximum(c + r, rect[1])
        return ReferenceSource(kind, {"center": c.tolist(), "radius": r, "rect": rect.tolist()},
                               f, (tuple(lo), tuple(hi)))
    if kind == "kidney_plus_gauss":
        x0 = float(params.get("x0", 0.6))
        y0 = float(params.get("y0", 0.25))
        a = float(params.get("a", 0.05))

        def f(x):
            dx, dy = x[:, 0] - x0, x[:, 1] - y0
            psi = (dx**2 + dy**2 - 4 * a * a) ** 3 - 108 * a**4 * dy**2
            return ((psi <= 0).astype(float)
                    + 1.2 * np.exp(-125.0 * ((x[:, 0] - 0.3) ** 2 + (x[:, 1] - 0.6) ** 2)))

        return ReferenceSource(kind, {"x0": x0, "y0": y0, "a": a}, f, ((0.0, 0.0), (1.0, 1.0)))
    if kind == "cone_pair_3d":
        pa = np.asarray(params.get("a", (0.3, 0.5, 0.3)), dtype=float)
        pb = np.asarray(params.get("b", (0.5, 0.5, 0.8)), dtype=float)

        def f(x):
            ra = np.linalg.norm(x - pa, axis=1)
            rb = np.linalg.norm(x - pb, axis=1)
            return np.maximum(0.2 - ra, 0.0) - np.maximum(0.2 - rb, 0.0)

        return ReferenceSource(kind, {"a": pa.tolist(), "b": pb.tolist()}, f,
                               (tuple(np.minimum(pa, pb) - 0.2), tuple(np.maximum(pa, pb) + 0.2)))
    if kind == "torus_3d":
        R1 = float(params.get("major", 0.25))
        R2 = float(params.get("minor", 0.15))

        def f(x):
            rho = np.sqrt(x[:, 0] ** 2 + x[:, 1] ** 2)
            return ((rho - R1) ** 2 + x[:, 2] ** 2 <= R2 * R2).astype(float)

        e = R1 + R2
        return ReferenceSource(kind, {"major": R1, "minor": R2}, f, ((-e, -e, -R2), (e, e, R2)))
    if kind == "four_gaussians":
        c = float(params.get("offset", 0.15))
        v = float(params.get("decay", 300.0))
        centers = np.array([[c, c], [-c, c], [-c, -c], [c, -c]])

        def f(x):
            return sum(np.exp(-v * np.sum((x - p) ** 2, axis=1)) for p in centers)

        return ReferenceSource(kind, {"offset": c, "decay": v}, f, ((-0.3, -0.3), (0.3, 0.3)))
    if kind == "gaussian":
        c = np.asarray(params.get("center", (0.0, 0.0)), dtype=float)
        v = float(params.get("decay", 100.0))
        amp = float(params.get("amplitude", 1.0))

        def f(x):
            return amp * np.exp(-v * np.sum((x - c) ** 2, axis=1))

        return ReferenceSource(kind, {"center": c.tolist(), "decay": v, "amplitude": amp}, f)
    raise ValueError(f"unknown source kind {kind!r}")


SOURCE_KINDS = ("mountain", "disc_indicator", "two_gaussian_discs", "rect_minus_circle",
                "rect_plus_circle", "kidney_plus_gauss", "cone_pair_3d", "torus_3d",
                "four_gaussians", "gaussian")


# --- layouts ---------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementLayout:
    geometry: str
    x: np.ndarray
    normals: np.ndarray
    n_s: int
    theta_max: float = None
    theta: np.ndarray = None

    def points(self, kinds=KINDS):
        return [MeasurementPoint(tuple(p), tuple(n), tuple(kinds)) for p, n in zip(self.x, self.normals)]


def rectangle_layout(box, n_s):
    """N_s points per side of a rectangle, corners counted once (4 N_s - 4 points).

    Corner normals are the normalised diagonal.
    """
    if n_s < 2:
        raise ValueError("need at least two points per side")
    (a, c), (b, d) = box
    xs = np.linspace(a, b, n_s)
    ys = np.linspace(c, d, n_s)
    pts, nrm = [], []
    for x in xs:  # bottom edge, left to right
        pts.append((x, c))
        nrm.append((0.0, -1.0))
    for y in ys[1:]:  # right edge
        pts.append((b, y))
        nrm.append((1.0, 0.0))
    for x in xs[-2::-1]:  # top edge, right to left
        pts.append((x, d))
        nrm.append((0.0, 1.0))
    for y in ys[-2:0:-1]:  # left edge, top to bottom
        pts.append((a, y))
        nrm.append((-1.0, 0.0))
    pts = np.array(pts)
    nrm = np.array(nrm)
    s2 = 1.0 / math.sqrt(2.0)
    corners = {(a, c): (-s2, -s2), (b, c): (s2, -s2), (b, d): (s2, s2), (a, d): (-s2, s2)}
    for i, p in enumerate(pts):
        key = (float(p[0]), float(p[1]))
        if key in corners:
            nrm[i] = corners[key]
    return MeasurementLayout("rectangle_boundary", pts, nrm, n_s)


def box_layout_3d(box, n_s):
    """N_s x N_s points on every face of a 3D box (edges shared faces deduplicated)."""
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    axes = [np.linspace(lo[a], hi[a], n_s) for a in range(3)]
    pts = {}
    for a in range(3):
        others = [o for o in range(3) if o != a]
        for side, val in ((-1, lo[a]), (1, hi[a])):
            for u in axes[others[0]]:
                for v in axes[others[1]]:
                    p = [0.0] * 3
                    p[a], p[others[0]], p[others[1]] = val, u, v
                    key = tuple(round(t, 12) for t in p)
                    n = np.zeros(3)
                    n[a] = side
                    pts[key] = pts.get(key, np.zeros(3)) + n
    x = np.array(list(pts.keys()))
    nrm = np.array([v / np.linalg.norm(v) for v in pts.values()])
    return MeasurementLayout("box_boundary", x, nrm, n_s)


def arc_layout(radius, n_s, theta_max=2 * np.pi, center=(0.0, 0.0)):
    """N_s points per quarter arc on [0, theta_max] of a circle.

    The full circle holds 4 N_s points (no duplicate at 2 pi); a partial arc
    holds round(N_s * theta_max / (pi/2)) points including both ends.
    """
    if not 0 < theta_max <= 2 * np.pi + 1e-12:
        raise ValueError("theta_max must lie in (0, 2 pi]")
    full = abs(theta_max - 2 * np.pi) < 1e-12
    n = int(round(n_s * theta_max / (np.pi / 2)))
    n = max(n, 2)
    theta = np.linspace(0.0, theta_max, n, endpoint=not full)
    nrm = np.column_stack([np.cos(theta), np.sin(theta)])
    x = np.asarray(center, dtype=float)[None] + radius * nrm
    return MeasurementLayout("circle_arc", x, nrm, n_s, float(theta_max), theta)


# --- wavenumbers -----------------------------------------------------------------

def arithmetic_wavenumbers(k_min=1.0, k_max=89.0, k_delta=4.0):
    return WavenumberSet.arithmetic(k_min, k_max, k_delta)


def fourier_wavenumbers(N, half_width, k_star=1.0):
    """{pi |l| / a : l in Z^2, 1 <= |l|_inf <= N} together with a small k_star."""
    vals = set()
    for l1 in range(-N, N + 1):
        for l2 in range(-N, N + 1):
            if 1 <= max(abs(l1), abs(l2)) <= N:
                vals.add(round(np.pi * math.hypot(l1, l2) / half_width, 12))
    if k_star is not None:
        vals.add(float(k_star))
    return WavenumberSet(tuple(sorted(vals)))


def fourier_truncation(delta):
    """2 [delta^(-1/3)] with [X] the largest integer smaller than X + 1."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = int(math.floor(delta ** (-1.0 / 3.0)))
    # the cube root of an exact cube can land just below the integer
    while (n + 1) ** 3 * delta <= 1.0:
        n += 1
    while n > 0 and n**3 * delta > 1.0:
        n -= 1
    return 2 * n


# --- forward data -------------------------------------------------------------------

def oracle_rule(source, domain, n_per_axis=400, n_gauss=4):
    """Dense quadrature of the source region, trimmed to points where S is nonzero."""
    if source.rule is not None:
        pts, w = source.rule(n_per_axis)
    else:
        box = source.support or domain
        lo = np.maximum(np.asarray(box[0]), np.asarray(domain[0]))
        hi = np.minimum(np.asarray(box[1]), np.asarray(domain[1]))
        frac = np.prod((hi - lo) / (np.asarray(domain[1]) - np.asarray(domain[0])))
        per_axis = max(n_gauss, int(round(n_per_axis * frac ** (1.0 / len(lo)))))
        pts, w = quadmesh.tensor_rule((lo, hi), per_axis, n_gauss)
    vals = source(pts)
    keep = np.abs(vals) > 1e-14 * max(np.max(np.abs(vals)), 1e-300)
    return pts[keep], w[keep] * vals[keep]


def forward_data(source, layout, ks, dim=None, domain=None, n_per_axis=None, rule=None,
                 kinds=KINDS, chunk=8192, check=False):
    """Dirichlet and Neumann values, arrays of shape (n_k, n_points), by dense quadrature.

    ``rule`` may be given as (points, weights * S(points)); otherwise the
    oracle rule of the source over ``domain`` is used.
    """
    x = layout.x
    nu = layout.normals
    dim = dim or x.shape[1]
    if n_per_axis is None:
        n_per_axis = 400 if dim == 2 else 120
    if rule is None:
        rule = oracle_rule(source, domain, n_per_axis)
    y, ws = rule
    ks = list(ks)
    D = np.zeros((len(ks), len(x)), dtype=complex)
    N = np.zeros((len(ks), len(x)), dtype=complex)
    if any(k <= 0 for k in ks):
        raise ValueError("wavenumbers must be positive")
    for start in range(0, len(y), chunk):
        yc = y[start:start + chunk]
        wc = ws[start:start + chunk]
        # geometry once per chunk, reused across wavenumbers
        diff, r = specfun._distance(x[:, None, :], yc[None], specfun.R_MIN)
        proj = np.einsum("pqd,pd->pq", diff, nu) / r if "neumann" in kinds else None
        for ik, k in enumerate(ks):
            if "dirichlet" in kinds:
                D[ik] += specfun.phi_of_r(k, r, dim) @ wc
            if "neumann" in kinds:
                N[ik] += specfun.dphi_of_r(k, r, proj, dim) @ wc
    if check:
        coarse = forward_data(source, layout, ks, dim, domain, n_per_axis // 2, None, kinds, chunk)
        rel = np.linalg.norm(coarse[0] - D) / max(np.linalg.norm(D), 1e-300)
        if rel > 1e-6:
            warnings.warn(f"oracle data changed by {rel:.2e} relative when halving its density")
    return D, N


def assert_disjoint(training_points, oracle_points, tol=1e-12):
    """Inverse-crime guard: no training quadrature point coincides with an oracle point."""
    tree = cKDTree(oracle_points)
    d, _ = tree.query(training_points, k=1)
    if np.any(d <= tol):
        raise AssertionError(f"{int(np.sum(d <= tol))} training points coincide with oracle points")


# --- noise -------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    delta: float = 0.0
    seed: int = 0


def add_noise(u, spec):
    """u + delta * e1 * |u| * exp(i pi e2) with e1, e2 ~ U(-1, 1) drawn per datum.

    ``u`` is a complex array or a tuple of arrays (each perturbed in order
    from one generator).
    """
    if spec.delta < 0:
        raise ValueError("noise level must be nonnegative")
    rng = np.random.default_rng(spec.seed)

    def one(a):
        a = np.asarray(a, dtype=complex)
        e1 = rng.uniform(-1.0, 1.0, size=a.shape)
        e2 = rng.uniform(-1.0, 1.0, size=a.shape)
        return a + spec.delta * e1 * np.abs(a) * np.exp(1j * np.pi * e2)

    if isinstance(u, tuple):
        return tuple(None if a is None else one(a) for a in u)
    return one(u)


def add_real_noise(u, delta, seed=0):
    """(1 + delta * e) u with e ~ U(-1, 1) per entry, for real stacked vectors."""
    rng = np.random.default_rng(seed)
    u = np.asarray(u, dtype=float)
    return u * (1.0 + delta * rng.uniform(-1.0, 1.0, size=u.shape))


# --- circular extension --------------------------------------------------------------

@dataclass
class Extension:
    theta: np.ndarray
    values: np.ndarray
    normal_derivatives: np.ndarray
    modes: np.ndarray
    dropped: list


def _hankel_int(n, z):
    """H_n^(1)(z) for any integer n using H_{-n} = (-1)^n H_n."""
    h = specfun.hankel1(abs(n), z)
    return h * (-1) ** abs(n) if n < 0 else h


def _hankel_int_derivative(n, z):
    d = specfun.hankel1_derivative(abs(n), z)
    return d * (-1) ** abs(n) if n < 0 else d


def circular_extension(u_R, k, R, rho, max_mode=None, n_out=None):
    """Extend Dirichlet samples on the circle of radius R to Cauchy data on radius rho.

    ``u_R`` holds samples at theta_j = 2 pi j / len(u_R).  Modes |n| <=
    ``max_mode`` (default: all resolvable, floor((len - 1) / 2)) are kept.
    Terms whose H_n(kR) is not finite are dropped and reported.
    """
    u_R = np.asarray(u_R, dtype=complex)
    m = len(u_R)
    top = (m - 1) // 2
    if max_mode is None:
        max_mode = top
    if max_mode > m // 2:
        raise ValueError("truncation exceeds half the number of samples")
    max_mode = min(max_mode, top)
    coef = np.fft.fft(u_R) / m
    n_out = n_out or m
    theta = 2 * np.pi * np.arange(n_out) / n_out
    vals = np.zeros(n_out, dtype=complex)
    dvals = np.zeros(n_out, dtype=complex)
    modes, dropped = [], []
    for n in range(-max_mode, max_mode + 1):
        c = coef[n % m]
        h_R = _hankel_int(n, k * R)
        if not np.isfinite(h_R) or abs(h_R) == 0:
            dropped.append(n)
            continue
        ratio = _hankel_int(n, k * rho) / h_R
        dratio = k * _hankel_int_derivative(n, k * rho) / h_R
        if not (np.isfinite(ratio) and np.isfinite(dratio)):
            dropped.append(n)
            continue
        e = np.exp(1j * n * theta)
        vals += ratio * c * e
        dvals += dratio * c * e
        modes.append(n)
    return Extension(theta, vals, dvals, np.array(modes), dropped)


def extended_layout(rho, theta):
    nrm = np.column_stack([np.cos(theta), np.sin(theta)])
    return MeasurementLayout("circle_arc", rho * nrm, nrm, len(theta) // 4, 2 * np.pi, theta)


# --- consistent data with controlled inconsistency -------------------------------------

@dataclass
class SynthSpec:
    w: np.ndarray
    nu: float
    eta_M: float
    s_star: np.ndarray
    U_true: np.ndarray
    eta_vec: np.ndarray
    rank: int


def synthesize_consistent_data(A, nu=1.0, eta_M=0.0, seed=0, w=None, factors=None,
                               clean_norm=None):
    """s* = (A^T A)^nu w and U_true = A s* + eta_vec with eta_vec in the left null space of A.

    The left null space is the orthogonal complement of the numerical column
    space (singular values above n * eps * sigma_1).  With ``clean_norm`` the
    vector w is rescaled so that ||A s*|| equals it.
    """
    A = np.asarray(A, dtype=float)
    n, M = A.shape
    rng = np.random.default_rng(seed)
    F = factors or svd_factors(A)
    if w is None:
        w = rng.standard_normal(M)
    w = np.asarray(w, dtype=float)
    sig = F.sigma
    r = int(np.count_nonzero(sig > F.rank_tol))
    s_star = F.V @ (sig ** (2.0 * nu) * (F.V.T @ w))
    U_true = A @ s_star
    if clean_norm is not None:
        c = clean_norm / np.linalg.norm(U_true)
        w, s_star, U_true = w * c, s_star * c, U_true * c
    eta = np.zeros(n)
    if eta_M > 0:
        if r >= n:
            raise ValueError("A has full row rank, so its left null space is empty")
        g = rng.standard_normal(n)
        Ur = F.U[:, :r]
        eta = g - Ur @ (Ur.T @ g)
        # a second pass removes the rounding left by the first projection
        eta = eta - Ur @ (Ur.T @ eta)
        eta *= eta_M / np.linalg.norm(eta)
    return SynthSpec(w, float(nu), float(eta_M), s_star, U_true + eta, eta, r)


def pack_arrays(D, N, points):
    return data_from_arrays(D, N, points)
