"""Feature families used to represent the source.

Every family is an immutable set of ``size`` functions on R^d with

* ``values(x)``    -> (N, size)
* ``gradients(x)`` -> (N, size, d)
* ``grad_dot(x, s)`` -> (N, d), the gradient of ``values(x) @ s`` without
  materialising the full gradient tensor.

A :class:`BasisSet` concatenates families in order; its columns are the
columns of the assembled system matrix.
"""
import json
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import interpolate
from scipy.special import expit

ACTIVATIONS = ("sin", "tanh", "relu", "sigmoid")


def _act(name, z):
    if name == "sin":
        return np.sin(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return expit(z)
    raise ValueError(f"unknown activation {name!r}")


def _dact(name, z):
    if name == "sin":
        return np.cos(z)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        return (z > 0).astype(float)
    if name == "sigmoid":
        s = expit(z)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


def _dsigmoid(z):
    s = expit(z)
    return s, s * (1.0 - s)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


class Family:
    """Common machinery; subclasses are frozen dataclasses of parameter arrays."""

    kind = "abstract"

    @property
    def size(self):
        raise NotImplementedError

    def values(self, x):
        raise NotImplementedError

    def gradients(self, x):
        raise NotImplementedError

    def grad_dot(self, x, s):
        return np.einsum("nmd,m->nd", self.gradients(x), np.asarray(s, dtype=float))

    def params(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, list):
                v = [a.tolist() if isinstance(a, np.ndarray) else a for a in v]
            out[f.name] = v
        return out


class _Radial(Family):
    """Families whose gradients are a(x) * (x - c_m)."""

    def _coeff(self, x):
        raise NotImplementedError

    def gradients(self, x):
        x = _as_points(x)
        a = self._coeff(x)
        return a[:, :, None] * (x[:, None, :] - self.centers[None, :, :])

    def grad_dot(self, x, s):
        x = _as_points(x)
        a = self._coeff(x) * np.asarray(s, dtype=float)[None, :]
        return x * a.sum(axis=1)[:, None] - a @ self.centers


@dataclass(frozen=True, eq=False)
class RandomFeatures(Family):
    """sigma(k_m . t + b_m) with t = (x - center) / radius; parameters frozen at construction.

    Without a center and radius the features act on raw coordinates.
    """

    directions: np.ndarray
    biases: np.ndarray
    activation: str = "sin"
    seed: int = None
    scale: float = None
    center: np.ndarray = None
    radius: np.ndarray = None
    kind = "random"

    @property
    def size(self):
        return len(self.biases)

    def _t(self, x):
        x = _as_points(x)
        if self.center is None:
            return x
        return (x - self.center[None, :]) / self.radius[None, :]

    def _dirs(self):
        # chain rule through the standardisation
        return self.directions if self.center is None else self.directions / self.radius[None, :]

    def _z(self, x):
        return self._t(x) @ self.directions.T + self.biases[None, :]

    def values(self, x):
        return _act(self.activation, self._z(x))

    def gradients(self, x):
        return _dact(self.activation, self._z(x))[:, :, None] * self._dirs()[None, :, :]

    def grad_dot(self, x, s):
        return (_dact(self.activation, self._z(x)) * np.asarray(s)[None, :]) @ self._dirs()


def build_random_set(M, R_m, activation="sin", seed=0, dim=2, domain=None):
    """M random features with k_m ~ U(-R_m, R_m)^d and b_m ~ U(-R_m, R_m).

    With ``domain=(lo, hi)`` the features see coordinates mapped onto [-1, 1]^d.
    """
    if M < 1:
        raise ValueError("need at least one feature")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    center = radius = None
    if domain is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in domain)
        if lo.shape != (dim,) or np.any(hi <= lo):
            raise ValueError("domain must be a nonempty box of matching dimension")
        center, radius = (lo + hi) / 2, (hi - lo) / 2
    rng = np.random.default_rng(seed)
    directions = rng.uniform(-R_m, R_m, size=(M, dim))
    biases = rng.uniform(-R_m, R_m, size=M)
    return BasisSet([RandomFeatures(directions, biases, activation, seed, float(R_m), center, radius)])


# --- partition of unity ------------------------------------------------------

def pou_a(t):
    t = np.asarray(t, dtype=float)
    return ((t >= -1.0) & (t <= 1.0)).astype(float)


def pou_a_derivative(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def pou_b(t):
    """C^1 bump: 1 on [-3/4, 3/4], sine ramps on [-5/4, -3/4] and [3/4, 5/4]."""
    t = np.asarray(t, dtype=float)
    left = (t >= -1.25) & (t < -0.75)
    mid = (t >= -0.75) & (t <= 0.75)
    right = (t > 0.75) & (t <= 1.25)
    s = np.sin(2.0 * np.pi * t)
    return np.where(left, 0.5 * (1.0 + s), 0.0) + mid + np.where(right, 0.5 * (1.0 - s), 0.0)


def pou_b_derivative(t):
    t = np.asarray(t, dtype=float)
    left = (t >= -1.25) & (t < -0.75)
    right = (t > 0.75) & (t <= 1.25)
    c = np.pi * np.cos(2.0 * np.pi * t)
    return np.where(left, c, 0.0) - np.where(right, c, 0.0)


@dataclass(frozen=True, eq=False)
class PoUPartition:
    """Tensor-product PoU windows psi_n(x) = prod_i psi((x_i - x_n,i) / r_n,i)."""

    centers: np.ndarray
    radii: np.ndarray
    kind: str = "b"

    def _parts(self, x):
        x = _as_points(x)
        t = (x[:, None, :] - self.centers[None]) / self.radii[None]
        f, df = (pou_a, pou_a_derivative) if self.kind == "a" else (pou_b, pou_b_derivative)
        return t, f(t), df(t)

    def weights(self, x):
        _, v, _ = self._parts(x)
        return np.prod(v, axis=-1)

    def weight_gradients(self, x):
        _, v, dv = self._parts(x)
        d = v.shape[-1]
        out = np.empty(v.shape)
        for a in range(d):
            others = np.prod(np.delete(v, a, axis=-1), axis=-1)
            out[..., a] = dv[..., a] / self.radii[None, :, a] * others
        return out


def uniform_partition(domain, parts_per_axis, kind="b"):
    lo = np.asarray(domain[0], dtype=float)
    hi = np.asarray(domain[1], dtype=float)
    d = len(lo)
    counts = np.broadcast_to(np.asarray(parts_per_axis), (d,))
    h = (hi - lo) / counts
    axes = [lo[a] + h[a] * (np.arange(counts[a]) + 0.5) for a in range(d)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    return PoUPartition(grid, np.tile(h / 2.0, (len(grid), 1)), kind)


@dataclass(frozen=True, eq=False)
class PoUFeatures(Family):
    """Locally normalised random features blended by a partition of unity.

    Feature j of subdomain n is psi_n(x) * sigma(k_j . (x - x_n) / r_n + b_j);
    the columns are ordered subdomain-major.
    """

    partition: PoUPartition
    directions: np.ndarray  # (Np, J, d)
    biases: np.ndarray  # (Np, J)
    activation: str = "tanh"
    seed: int = None
    kind = "pou_random"

    @property
    def size(self):
        return self.biases.size

    def _z(self, x):
        x = _as_points(x)
        p = self.partition
        t = (x[:, None, :] - p.centers[None]) / p.radii[None]
        return np.einsum("npd,pjd->npj", t, self.directions) + self.biases[None]

    def values(self, x):
        w = self.partition.weights(x)
        return (w[:, :, None] * _act(self.activation, self._z(x))).reshape(len(w), -1)

    def gradients(self, x):
        x = _as_points(x)
        p = self.partition
        z = self._z(x)
        w = p.weights(x)
        dw = p.weight_gradients(x)
        inner = _dact(self.activation, z)[..., None] * (self.directions / p.radii[:, None, :])[None]
        g = dw[:, :, None, :] * _act(self.activation, z)[..., None] + w[:, :, None, None] * inner
        return g.reshape(len(x), -1, x.shape[1])


def build_pou_set(domain, parts_per_axis, J, R_m, activation="tanh", seed=0, kind="b"):
    part = uniform_partition(domain, parts_per_axis, kind)
    rng = np.random.default_rng(seed)
    d = part.centers.shape[1]
    n = len(part.centers)
    dirs = rng.uniform(-R_m, R_m, size=(n, J, d))
    biases = rng.uniform(-R_m, R_m, size=(n, J))
    return BasisSet([PoUFeatures(part, dirs, biases, activation, seed)])


# --- morphology bases --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SigmoidCircle(_Radial):
    """sigmoid(K (r^2 - |x - c|^2)): a soft ball indicator."""

    centers: np.ndarray
    radii: np.ndarray
    sharpness: np.ndarray
    kind = "sigmoid_circle"

    @property
    def size(self):
        return len(self.radii)

    def _arg(self, x):
        x = _as_points(x)
        d2 = np.sum((x[:, None, :] - self.centers[None]) ** 2, axis=-1)
        return self.sharpness[None] * (self.radii[None] ** 2 - d2)

    def values(self, x):
        return expit(self._arg(x))

    def _coeff(self, x):
        _, ds = _dsigmoid(self._arg(x))
        return -2.0 * self.sharpness[None] * ds


@dataclass(frozen=True, eq=False)
class GaussianBump(_Radial):
    """exp(-v |x - c|^2)."""

    centers: np.ndarray
    decay: np.ndarray
    kind = "gaussian_bump"

    @property
    def size(self):
        return len(self.decay)

    def values(self, x):
        x = _as_points(x)
        d2 = np.sum((x[:, None, :] - self.centers[None]) ** 2, axis=-1)
        return np.exp(-self.decay[None] * d2)

    def _coeff(self, x):
        return -2.0 * self.decay[None] * self.values(x)


@dataclass(frozen=True, eq=False)
class TruncatedGaussianCircle(_Radial):
    """sigmoid(K (r^2 - |x - c|^2)) * exp(-v |x - c|^2)."""

    centers: np.ndarray
    radii: np.ndarray
    sharpness: np.ndarray
    decay: np.ndarray
    kind = "truncated_gaussian_circle"

    @property
    def size(self):
        return len(self.radii)

    def _parts(self, x):
        x = _as_points(x)
        d2 = np.sum((x[:, None, :] - self.centers[None]) ** 2, axis=-1)
        s, ds = _dsigmoid(self.sharpness[None] * (self.radii[None] ** 2 - d2))
        g = np.exp(-self.decay[None] * d2)
        return s, ds, g

    def values(self, x):
        s, _, g = self._parts(x)
        return s * g

    def _coeff(self, x):
        s, ds, g = self._parts(x)
        return -2.0 * g * (self.sharpness[None] * ds + self.decay[None] * s)


@dataclass(frozen=True, eq=False)
class ReluCone(_Radial):
    """relu(r - |x - c|); the zero subgradient is used at the apex and rim."""

    centers: np.ndarray
    radii: np.ndarray
    kind = "relu_cone"

    @property
    def size(self):
        return len(self.radii)

    def _dist(self, x):
        x = _as_points(x)
        return np.sqrt(np.sum((x[:, None, :] - self.centers[None]) ** 2, axis=-1))

    def values(self, x):
        return np.maximum(self.radii[None] - self._dist(x), 0.0)

    def _coeff(self, x):
        dist = self._dist(x)
        inside = (dist < self.radii[None]) & (dist > 0)
        return np.where(inside, -1.0 / np.where(dist > 0, dist, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class SigmoidRectangle(Family):
    """sigmoid(-K * max(|x1 - c1| - w/2, |x2 - c2| - h/2)): a soft axis-aligned box."""

    centers: np.ndarray
    widths: np.ndarray
    heights: np.ndarray
    sharpness: np.ndarray
    kind = "sigmoid_rectangle"

    @property
    def size(self):
        return len(self.widths)

    def _sdf(self, x):
        x = _as_points(x)
        dx = x[:, None, 0] - self.centers[None, :, 0]
        dy = x[:, None, 1] - self.centers[None, :, 1]
        ax = np.abs(dx) - 0.5 * self.widths[None]
        ay = np.abs(dy) - 0.5 * self.heights[None]
        return dx, dy, ax, ay

    def values(self, x):
        _, _, ax, ay = self._sdf(x)
        return expit(-self.sharpness[None] * np.maximum(ax, ay))

    def gradients(self, x):
        dx, dy, ax, ay = self._sdf(x)
        _, ds = _dsigmoid(-self.sharpness[None] * np.maximum(ax, ay))
        xsel = ax >= ay
        g = np.zeros(dx.shape + (2,))
        g[..., 0] = np.where(xsel, np.sign(dx), 0.0)
        g[..., 1] = np.where(xsel, 0.0, np.sign(dy))
        return (-self.sharpness[None] * ds)[..., None] * g


@dataclass(frozen=True, eq=False)
class TorusSigmoid(Family):
    """sigmoid(K (r^2 - ((rho_xy - R1)^2 + (x3 - c3)^2))) around the x3 axis through c."""

    centers: np.ndarray
    major: np.ndarray
    minor: np.ndarray
    sharpness: np.ndarray
    kind = "torus_sigmoid"

    @property
    def size(self):
        return len(self.major)

    def _parts(self, x):
        x = _as_points(x)
        d = x[:, None, :] - self.centers[None]
        rho = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)
        q = (rho - self.major[None]) ** 2 + d[..., 2] ** 2
        return d, rho, q

    def values(self, x):
        _, _, q = self._parts(x)
        return expit(self.sharpness[None] * (self.minor[None] ** 2 - q))

    def gradients(self, x):
        d, rho, q = self._parts(x)
        _, ds = _dsigmoid(self.sharpness[None] * (self.minor[None] ** 2 - q))
        safe = np.where(rho > 0, rho, 1.0)
        radial = np.where(rho > 0, (rho - self.major[None]) / safe, 0.0)
        dq = np.stack([2 * radial * d[..., 0], 2 * radial * d[..., 1], 2 * d[..., 2]], axis=-1)
        return (-self.sharpness[None] * ds)[..., None] * dq


# --- contours ----------------------------------------------------------------

def polygon_contains(poly, x):
    """Even-odd point-in-polygon test; ``poly`` is a closed (P, 2) vertex list."""
    x = _as_points(x)
    a = poly[:-1]
    b = poly[1:]
    inside = np.zeros(len(x), dtype=bool)
    px = x[:, 0][:, None]
    py = x[:, 1][:, None]
    ay, by = a[None, :, 1], b[None, :, 1]
    ax, bx = a[None, :, 0], b[None, :, 0]
    crosses = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = ax + (py - ay) * (bx - ax) / (by - ay)
    hit = crosses & (px < xint)
    inside = (np.count_nonzero(hit, axis=1) % 2).astype(bool)
    return inside


def polygon_distance(poly, x):
    """Unsigned distance to the polygon boundary and the gradient of that distance."""
    x = _as_points(x)
    a = poly[:-1]
    e = poly[1:] - a
    ee = np.maximum(np.sum(e * e, axis=1), 1e-300)
    rel = x[:, None, :] - a[None]
    t = np.clip(np.sum(rel * e[None], axis=-1) / ee[None], 0.0, 1.0)
    diff = rel - t[..., None] * e[None]
    dist2 = np.sum(diff * diff, axis=-1)
    j = np.argmin(dist2, axis=1)
    rows = np.arange(len(x))
    dist = np.sqrt(dist2[rows, j])
    g = diff[rows, j] / np.where(dist > 0, dist, 1.0)[:, None]
    return dist, g


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1])


def close_contour(points):
    pts = np.asarray(points, dtype=float)
    if np.linalg.norm(pts[0] - pts[-1]) > 1e-9:
        pts = np.vstack([pts, pts[:1]])
    else:
        pts = pts.copy()
        pts[-1] = pts[0]
    if _signed_area(pts) < 0:
        pts = pts[::-1].copy()
    return pts


def vertex_normals(poly):
    """Outward unit normals of a closed counter-clockwise polygon, one per vertex."""
    p = poly[:-1]
    tangent = np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)
    n = np.stack([tangent[:, 1], -tangent[:, 0]], axis=-1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return np.vstack([n, n[:1]])


def smooth_contour(points, max_deviation, n_out=None):
    """Periodic cubic smoothing spline through a closed contour.

    The smoothing factor is the largest (found by bisection in log scale) that
    keeps every raw point within ``max_deviation`` of the smoothed curve.
    """
    pts = close_contour(points)
    raw = pts[:-1]
    n_out = n_out or max(len(raw), 64)
    u_out = np.linspace(0.0, 1.0, n_out + 1)

    def fit(s):
        tck, _ = interpolate.splprep([raw[:, 0], raw[:, 1]], s=s, per=1, quiet=2)
        curve = np.stack(interpolate.splev(u_out, tck), axis=-1)
        curve[-1] = curve[0]
        dev, _ = polygon_distance(curve, raw)
        return curve, dev.max()

    lo, hi = 0.0, len(raw) * max_deviation**2
    best, _ = fit(lo)
    for _ in range(30):
        mid = 0.5 * (lo + hi) if lo > 0 else hi * 1e-3 if hi > 1e-12 else 0.0
        curve, dev = fit(mid)
        if dev <= max_deviation:
            best, lo = curve, mid
        else:
            hi = mid
        if hi - lo < 1e-6 * max(hi, 1e-12):
            break
    return close_contour(best)


def _segments_intersect(poly):
    a = poly[:-1]
    b = poly[1:]
    n = len(a)

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                       - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    A, B = a[:, None], b[:, None]
    C, D = a[None], b[None]
    o1 = orient(A, B, C)
    o2 = orient(A, B, D)
    o3 = orient(C, D, A)
    o4 = orient(C, D, B)
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    adjacent = (np.abs(i - j) <= 1) | (np.abs(i - j) == n - 1)
    return bool(np.any(hit & ~adjacent))


@dataclass(frozen=True, eq=False)
class ContourFamily:
    """A closed base contour with outward normals, from which offset contours are drawn."""

    points: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        pts = close_contour(self.points)
        object.__setattr__(self, "points", pts)
        if self.normals is None:
            object.__setattr__(self, "normals", vertex_normals(pts))

    def offset(self, rho, literal=False):
        """Offset polygon x + rho n (or x + rho (n . x) n with ``literal``)."""
        if literal:
            scale = np.sum(self.normals * self.points, axis=1, keepdims=True)
            poly = self.points + rho * scale * self.normals
        else:
            poly = self.points + rho * self.normals
        poly[-1] = poly[0]
        if rho != 0 and _segments_intersect(poly):
            raise ValueError(f"offset rho={rho} exceeds the local feature size of the contour")
        return poly


def offset_contour(family, rho, literal=False):
    """Offset polygon and its even-odd membership predicate."""
    poly = family.offset(rho, literal=literal)
    return poly, lambda x: polygon_contains(poly, x)


@dataclass(frozen=True, eq=False)
class ContourSigmoid(Family):
    """sigmoid(K d(x)) where d is +1/-1 inside/outside an offset contour or its signed distance."""

    polygons: list
    sharpness: np.ndarray
    mode: str = "sign"
    kind = "contour_sigmoid"

    @property
    def size(self):
        return len(self.polygons)

    def _d(self, x):
        x = _as_points(x)
        out = np.empty((len(x), self.size))
        grads = np.zeros((len(x), self.size, 2)) if self.mode == "distance" else None
        for j, poly in enumerate(self.polygons):
            inside = polygon_contains(poly, x)
            if self.mode == "sign":
                out[:, j] = np.where(inside, 1.0, -1.0)
            else:
                dist, g = polygon_distance(poly, x)
                sgn = np.where(inside, 1.0, -1.0)
                out[:, j] = sgn * dist
                grads[:, j] = sgn[:, None] * g
        return out, grads

    def values(self, x):
        d, _ = self._d(x)
        return expit(self.sharpness[None] * d)

    def gradients(self, x):
        x = _as_points(x)
        d, g = self._d(x)
        if self.mode == "sign":
            return np.zeros((len(x), self.size, 2))
        _, ds = _dsigmoid(self.sharpness[None] * d)
        return (self.sharpness[None] * ds)[..., None] * g


FAMILIES = {cls.kind: cls for cls in (
    RandomFeatures, SigmoidCircle, GaussianBump, TruncatedGaussianCircle, ReluCone,
    SigmoidRectangle, TorusSigmoid, ContourSigmoid)}
MORPH_KINDS = tuple(k for k in FAMILIES if k != "random")


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Ordered, immutable concatenation of feature families."""

    families: list = field(default_factory=list)

    @property
    def size(self):
        return sum(f.size for f in self.families)

    def __len__(self):
        return self.size

    def append(self, *families):
        return BasisSet(list(self.families) + [f for f in families if f.size > 0])

    def slices(self):
        out, start = [], 0
        for f in self.families:
            out.append(slice(start, start + f.size))
            start += f.size
        return out

    def values(self, x, chunk=4096):
        x = _as_points(x)
        out = np.empty((len(x), self.size))
        sl = self.slices()
        for i in range(0, len(x), chunk):
            xi = x[i:i + chunk]
            for f, s in zip(self.families, sl):
                out[i:i + chunk, s] = f.values(xi)
        return out

    def gradients(self, x):
        x = _as_points(x)
        return np.concatenate([f.gradients(x) for f in self.families], axis=1)

    def evaluate(self, x, s, chunk=4096):
        """S(x) = sum_m s_m phi_m(x) without keeping the full value matrix."""
        x = _as_points(x)
        s = np.asarray(s, dtype=float)
        out = np.zeros(len(x))
        sl = self.slices()
        for i in range(0, len(x), chunk):
            xi = x[i:i + chunk]
            for f, sj in zip(self.families, sl):
                out[i:i + chunk] += f.values(xi) @ s[sj]
        return out

    def grad_dot(self, x, s, chunk=2048):
        x = _as_points(x)
        s = np.asarray(s, dtype=float)
        out = np.zeros(x.shape)
        sl = self.slices()
        for i in range(0, len(x), chunk):
            xi = x[i:i + chunk]
            for f, sj in zip(self.families, sl):
                out[i:i + chunk] += f.grad_dot(xi, s[sj])
        return out

    def to_json(self):
        records = []
        for order, f in enumerate(self.families):
            if isinstance(f, (PoUFeatures,)):
                raise TypeError("PoU feature sets are rebuilt from their seed, not serialised")
            records.append({"order": order, "kind": f.kind, "params": f.params()})
        return json.dumps({"families": records})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        fams = []
        for rec in sorted(data["families"], key=lambda r: r["order"]):
            klass = FAMILIES[rec["kind"]]
            p = dict(rec["params"])
            for k, v in p.items():
                if k == "polygons":
                    p[k] = [np.asarray(a, dtype=float) for a in v]
                elif isinstance(v, list):
                    p[k] = np.asarray(v, dtype=float)
            fams.append(klass(**p))
        return cls(fams)


# --- sampling morphology parameters ------------------------------------------

@dataclass
class MorphologyWindows:
    """Tolerance windows for sampling morphology parameters around detected shapes.

    Relative windows follow ``U((1 - eps) x, (1 + eps) x)``; explicit ranges,
    when set, replace the relative window for that parameter.
    """

    eps_c: float = 0.03
    eps_r: float = 0.10
    eps_width: float = 0.20
    eps_height: float = 0.15
    center_abs: float = None
    radius_range: tuple = None
    decay_range: tuple = None
    major_range: tuple = None
    sharpness_range: tuple = (1000.0, 20000.0)
    rho_range: tuple = (-0.03, -0.01)
    contour_mode: str = "sign"
    literal_offset: bool = False


def _window(rng, value, eps, count):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    a = value * (1.0 - eps)
    b = value * (1.0 + eps)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return rng.uniform(lo, hi, size=(count, len(value)))


def _range(rng, bounds, count):
    lo, hi = bounds
    return rng.uniform(lo, hi, size=count)


def sample_morphology(kind, detected, count, seed=0, windows=None):
    """Draw ``count`` frozen morphology bases of ``kind`` around a detected shape.

    ``detected`` supplies ``center``, ``radius``, ``width``/``height``,
    ``decay_window`` or ``contour`` depending on the kind.
    """
    w = windows or MorphologyWindows()
    rng = np.random.default_rng(seed)
    if count < 1:
        raise ValueError("count must be >= 1")
    center = getattr(detected, "center", None)
    if center is None or (hasattr(detected, "n_points") and detected.n_points == 0):
        raise ValueError("empty detection region")
    center = np.asarray(center, dtype=float)

    def centers():
        if w.center_abs is not None:
            return center[None] + rng.uniform(-w.center_abs, w.center_abs, size=(count, len(center)))
        return _window(rng, center, w.eps_c, count)

    def radii():
        if w.radius_range is not None:
            return _range(rng, w.radius_range, count)
        return _window(rng, detected.radius, w.eps_r, count)[:, 0]

    def sharp():
        return _range(rng, w.sharpness_range, count)

    def decay():
        rng_v = w.decay_range or getattr(detected, "decay_window", None)
        if rng_v is None:
            raise ValueError("gaussian kinds need a decay window (FWHM statistics or decay_range)")
        return _range(rng, rng_v, count)

    if kind == "sigmoid_circle":
        return SigmoidCircle(centers(), radii(), sharp())
    if kind == "truncated_gaussian_circle":
        c, r, k = centers(), radii(), sharp()
        return TruncatedGaussianCircle(c, r, k, decay())
    if kind == "gaussian_bump":
        c = centers()
        return GaussianBump(c, decay())
    if kind == "relu_cone":
        c = centers()
        return ReluCone(c, radii())
    if kind == "sigmoid_rectangle":
        c = centers()
        widths = _window(rng, detected.width, w.eps_width, count)[:, 0]
        heights = _window(rng, detected.height, w.eps_height, count)[:, 0]
        return SigmoidRectangle(c, widths, heights, sharp())
    if kind == "torus_sigmoid":
        c = centers()
        major = (_range(rng, w.major_range, count) if w.major_range is not None
                 else _window(rng, detected.major, w.eps_r, count)[:, 0])
        return TorusSigmoid(c, major, radii(), sharp())
    if kind == "contour_sigmoid":
        contour = getattr(detected, "contour", None)
        if contour is None or len(contour) < 4:
            raise ValueError("contour kind needs an extracted closed contour")
        fam = ContourFamily(np.asarray(contour))
        rhos = _range(rng, w.rho_range, count)
        polys = [fam.offset(r, literal=w.literal_offset) for r in rhos]
        return ContourSigmoid(polys, sharp(), w.contour_mode)
    raise ValueError(f"unknown morphology kind {kind!r}")
