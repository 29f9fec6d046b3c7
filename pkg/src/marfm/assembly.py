"""Discrete radiation operators and the stacked real least-squares system.

For every wavenumber k and measurement point x the rows are

    D_k[x, m] = sum_j w_j Phi_k(x, y_j) phi_m(y_j)
    N_k[x, m] = sum_j w_j dPhi_k/dnu_x(x, y_j) phi_m(y_j)

and the real system stacks ``[Re D; Im D; Re N; Im N]`` where each block runs
over all wavenumbers (k-major) and then over points.
"""
import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .specfun import phi, phi_normal_derivative

KINDS = ("dirichlet", "neumann")
ROW_KINDS = ("ReD", "ImD", "ReN", "ImN")
ROW_DTYPE = np.dtype([("k_index", "i4"), ("k", "f8"), ("point", "i4"), ("kind", "U3")])


@dataclass(frozen=True)
class MeasurementPoint:
    x: tuple
    nu: tuple = None
    kinds: tuple = ("dirichlet",)

    def __post_init__(self):
        bad = set(self.kinds) - set(KINDS)
        if bad or not self.kinds:
            raise ValueError(f"kinds must be a nonempty subset of {KINDS}")
        if "neumann" in self.kinds:
            if self.nu is None:
                raise ValueError("Neumann data needs a unit normal")
            if abs(np.linalg.norm(self.nu) - 1.0) > 1e-10:
                raise ValueError("normal must have unit length")


def measurement_points(x, nu=None, kinds=("dirichlet", "neumann")):
    """Build a list of MeasurementPoint from coordinate (and normal) arrays."""
    x = np.asarray(x, dtype=float)
    if nu is None:
        kinds = tuple(k for k in kinds if k != "neumann")
        return [MeasurementPoint(tuple(p), None, kinds) for p in x]
    nu = np.asarray(nu, dtype=float)
    return [MeasurementPoint(tuple(p), tuple(n), tuple(kinds)) for p, n in zip(x, nu)]


def check_outside(points, box):
    """Reject measurement points on or inside the closed box ``(lo, hi)``."""
    lo, hi = np.asarray(box[0]), np.asarray(box[1])
    x = np.array([p.x for p in points])
    inside = np.all((x >= lo) & (x <= hi), axis=1)
    if inside.any():
        raise ValueError(f"{int(inside.sum())} measurement points lie in the source box")


@dataclass(frozen=True)
class WavenumberSet:
    values: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) == 0 or np.any(v <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("wavenumbers must be positive and strictly increasing")
        object.__setattr__(self, "values", tuple(float(a) for a in v))

    @classmethod
    def arithmetic(cls, k_min, k_max, step):
        return cls(tuple(np.arange(k_min, k_max + 0.5 * step, step)))

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


@dataclass
class SystemMatrix:
    A: np.ndarray
    row_map: np.ndarray
    col_map: list
    b: np.ndarray = None
    row_weights: np.ndarray = None

    @property
    def shape(self):
        return self.A.shape

    def with_rhs(self, b):
        return SystemMatrix(self.A, self.row_map, self.col_map, np.asarray(b, dtype=float),
                            self.row_weights)


def build_row_map(ks, points):
    kinds_d = [i for i, p in enumerate(points) if "dirichlet" in p.kinds]
    kinds_n = [i for i, p in enumerate(points) if "neumann" in p.kinds]
    rows = []
    for kind, idx in (("ReD", kinds_d), ("ImD", kinds_d), ("ReN", kinds_n), ("ImN", kinds_n)):
        for ik, k in enumerate(ks):
            rows.extend((ik, k, i, kind) for i in idx)
    return np.array(rows, dtype=ROW_DTYPE)


class KernelCache:
    """Weighted kernels w_j Phi_k(x, y_j) per wavenumber, reused across column blocks.

    When the full cache would exceed ``max_bytes`` kernels are recomputed on
    demand instead.
    """

    def __init__(self, mesh, ks, points, dim=None, max_bytes=1.5e9):
        self.mesh = mesh
        self.ks = WavenumberSet(tuple(ks)) if not isinstance(ks, WavenumberSet) else ks
        self.points = list(points)
        self.y = mesh.points
        self.w = mesh.weights
        self.dim = dim or self.y.shape[1]
        self.x = np.array([p.x for p in self.points], dtype=float)
        self.d_idx = np.array([i for i, p in enumerate(self.points) if "dirichlet" in p.kinds], int)
        self.n_idx = np.array([i for i, p in enumerate(self.points) if "neumann" in p.kinds], int)
        self.nu = np.array([self.points[i].nu for i in self.n_idx],
                           dtype=float).reshape(-1, self.dim)
        need = 16 * len(self.ks) * (len(self.d_idx) + len(self.n_idx)) * len(self.y)
        self.enabled = need <= max_bytes
        self._store = {}

    def kernels(self, ik, q=slice(None)):
        """(weighted Dirichlet kernel, weighted Neumann kernel) over quadrature slice ``q``."""
        K = self.stacked(ik, q)
        nd, nn = len(self.d_idx), len(self.n_idx)
        return K[:nd] + 1j * K[nd:2 * nd], K[2 * nd:2 * nd + nn] + 1j * K[2 * nd + nn:]

    def stacked(self, ik, q=slice(None)):
        """Real rows [Re D; Im D; Re N; Im N] of the weighted kernels, C-contiguous for BLAS."""
        if self.enabled and ik in self._store:
            return self._store[ik][:, q]
        full = self.enabled
        qq = slice(None) if full else q
        y = self.y[qq]
        w = self.w[qq]
        k = self.ks.values[ik]
        nd, nn = len(self.d_idx), len(self.n_idx)
        K = np.empty((2 * nd + 2 * nn, len(y)))
        if nd:
            kd = phi(k, self.x[self.d_idx][:, None, :], y[None], self.dim) * w[None]
            K[:nd], K[nd:2 * nd] = kd.real, kd.imag
        if nn:
            kn = phi_normal_derivative(k, self.x[self.n_idx][:, None, :], y[None],
                                       self.nu[:, None, :], self.dim) * w[None]
            K[2 * nd:2 * nd + nn], K[2 * nd + nn:] = kn.real, kn.imag
        if full:
            self._store[ik] = K
            return K[:, q]
        return K


def _column_map(basis, offset=0):
    cols = []
    j = offset
    for fi, fam in enumerate(basis.families):
        for m in range(fam.size):
            cols.append((j, fi, fam.kind, m))
            j += 1
    return cols


def assemble_block(cache, basis, chunk=2048, weights=(1.0, 1.0)):
    """Operator columns for ``basis`` as a real (n, M) array in row-map order."""
    nk = len(cache.ks)
    nd, nn = len(cache.d_idx), len(cache.n_idx)
    M = basis.size
    # per wavenumber: rows [Re D; Im D; Re N; Im N]
    out = np.zeros((nk, 2 * nd + 2 * nn, M))
    Q = len(cache.y)
    for start in range(0, Q, chunk):
        q = slice(start, min(start + chunk, Q))
        vals = np.ascontiguousarray(basis.values(cache.y[q]))
        for ik in range(nk):
            out[ik] += cache.stacked(ik, q) @ vals
    wd, wn = weights
    parts = [out[:, :nd], out[:, nd:2 * nd], out[:, 2 * nd:2 * nd + nn], out[:, 2 * nd + nn:]]
    scale = (wd, wd, wn, wn)
    return np.vstack([c * p.reshape(-1, M) for c, p in zip(scale, parts)])


def assemble_operator(mesh, basis, ks, points, dim=None, weights=(1.0, 1.0), chunk=2048,
                      cache=None):
    """Stacked real operator for ``basis`` on the measurement points.

    ``weights`` scales the Dirichlet and Neumann blocks; the same factors are
    applied to the data by :func:`assemble_rhs`.
    """
    if basis.size == 0:
        raise ValueError("empty basis")
    if mesh.n_points == 0:
        raise ValueError("empty quadrature mesh")
    if not isinstance(ks, WavenumberSet):
        ks = WavenumberSet(tuple(ks))
    cache = cache or KernelCache(mesh, ks, points, dim)
    A = assemble_block(cache, basis, chunk, weights)
    row_map = build_row_map(ks.values, points)
    rw = np.where(np.isin(row_map["kind"], ("ReD", "ImD")), weights[0], weights[1])
    return SystemMatrix(A, row_map, _column_map(basis), None, rw)


def append_columns(system, cache, family_set, chunk=2048, weights=(1.0, 1.0)):
    """New SystemMatrix with the columns of ``family_set`` appended (existing columns untouched)."""
    block = assemble_block(cache, family_set, chunk, weights)
    offset = system.A.shape[1]
    nfam = max((c[1] for c in system.col_map), default=-1) + 1
    cols = [(offset + j, nfam + fi, kind, m) for j, fi, kind, m in _column_map(family_set)]
    return SystemMatrix(np.hstack([system.A, block]), system.row_map, system.col_map + cols,
                        system.b, system.row_weights)


# --- data packing -------------------------------------------------------------

def data_from_arrays(dirichlet=None, neumann=None, points=None):
    """Dict (k_index, point, kind) -> complex from (n_k, n_points) arrays.

    Entries are produced only where the point collects that kind of data.
    """
    out = {}
    for kind, arr in (("dirichlet", dirichlet), ("neumann", neumann)):
        if arr is None:
            continue
        arr = np.asarray(arr)
        for ik in range(arr.shape[0]):
            for ip in range(arr.shape[1]):
                if points is None or kind in points[ip].kinds:
                    out[(ik, ip, kind)] = complex(arr[ik, ip])
    return out


def assemble_rhs(data, row_map, row_weights=None):
    """Pack complex data into the real right-hand side in ``row_map`` order."""
    b = np.empty(len(row_map))
    needed = set()
    for r, row in enumerate(row_map):
        kind = "dirichlet" if row["kind"].endswith("D") else "neumann"
        key = (int(row["k_index"]), int(row["point"]), kind)
        needed.add(key)
        if key not in data:
            raise KeyError(f"missing data for {key}")
        v = data[key]
        b[r] = v.real if row["kind"].startswith("Re") else v.imag
    surplus = set(data) - needed
    if surplus:
        raise KeyError(f"{len(surplus)} data entries have no matching row, e.g. {sorted(surplus)[0]}")
    if row_weights is not None:
        b = b * row_weights
    return b


def unpack_rhs(b, row_map, row_weights=None):
    """Inverse of :func:`assemble_rhs`."""
    b = np.asarray(b, dtype=float)
    if row_weights is not None:
        b = b / row_weights
    out = {}
    for r, row in enumerate(row_map):
        kind = "dirichlet" if row["kind"].endswith("D") else "neumann"
        key = (int(row["k_index"]), int(row["point"]), kind)
        cur = out.get(key, 0j)
        out[key] = cur + (b[r] if row["kind"].startswith("Re") else 1j * b[r])
    return out


def predict(system, s):
    """Residual A s - b and L_data = ||A s - b||^2."""
    s = np.asarray(s, dtype=float)
    if s.shape != (system.A.shape[1],):
        raise ValueError(f"expected {system.A.shape[1]} coefficients, got {s.shape}")
    r = system.A @ s - system.b
    return r, float(r @ r)


def per_k_residuals(system, s):
    """Squared residual per wavenumber index, useful for diagnostics."""
    r, _ = predict(system, s)
    nk = int(system.row_map["k_index"].max()) + 1
    return np.bincount(system.row_map["k_index"], weights=r * r, minlength=nk)


# --- dumps --------------------------------------------------------------------

def write_system(system, prefix):
    """``prefix.bin`` holds int64 n, M, then A row-major and b (if present) as float64."""
    n, M = system.A.shape
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(struct.pack("<qq", n, M))
        fh.write(np.ascontiguousarray(system.A, dtype="<f8").tobytes())
        if system.b is not None:
            fh.write(np.ascontiguousarray(system.b, dtype="<f8").tobytes())
    with open(f"{prefix}_rows.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "k_index", "k", "point", "kind"])
        for i, row in enumerate(system.row_map):
            w.writerow([i, int(row["k_index"]), repr(float(row["k"])), int(row["point"]), row["kind"]])
    with open(f"{prefix}_cols.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "family", "kind", "index_in_family"])
        w.writerows(system.col_map)


def read_system_binary(path):
    with open(path, "rb") as fh:
        n, M = struct.unpack("<qq", fh.read(16))
        A = np.frombuffer(fh.read(8 * n * M), dtype="<f8").reshape(n, M)
        rest = fh.read()
    b = np.frombuffer(rest, dtype="<f8") if rest else None
    return A, b
