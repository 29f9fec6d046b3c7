"""Tikhonov-regularised least squares through the SVD, with L-curve selection.

For A = U diag(sigma) V^T the regularised solution is

    s = sum_i f_i (u_i^T b / sigma_i) v_i,   f_i = sigma_i^2 / (sigma_i^2 + lambda^2).

One factorisation serves any number of lambda values.
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy import linalg

DEFAULT_GRID = np.logspace(-1, -34, 40)


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    beta: np.ndarray = None  # U^T b, cached when a right-hand side is attached
    b_norm2: float = None

    @property
    def rank_tol(self):
        if len(self.sigma) == 0:
            return 0.0
        return max(self.U.shape[0], self.V.shape[0]) * np.finfo(float).eps * self.sigma[0]

    def with_rhs(self, b):
        """Same factorization, new right-hand side."""
        b = np.asarray(b, dtype=float)
        return SvdFactors(self.U, self.sigma, self.V, self.U.T @ b, float(np.dot(b, b)))


def svd_factors(A, b=None):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        raise ValueError("empty matrix")
    U, sigma, Vt = linalg.svd(A, full_matrices=False, lapack_driver="gesdd", check_finite=True)
    beta = None if b is None else U.T @ np.asarray(b, dtype=float)
    b2 = None if b is None else float(np.dot(b, b))
    return SvdFactors(U, sigma, Vt.T, beta, b2)


@dataclass(frozen=True)
class TikhonovSolution:
    s: np.ndarray
    lambda_sq: float
    filters: np.ndarray
    residual_norm: float
    solution_norm: float
    rank_deficient: bool = False


def _solve_from_factors(F, lambda_sq):
    if lambda_sq < 0:
        raise ValueError("lambda_sq must be >= 0")
    sig = F.sigma
    beta = F.beta
    positive = sig > 0
    deficient = False
    if lambda_sq == 0:
        keep = sig > F.rank_tol
        deficient = bool(np.count_nonzero(keep) < min(F.U.shape[0], F.V.shape[0]))
        f = keep.astype(float)
        coef = np.where(keep, beta / np.where(keep, sig, 1.0), 0.0)
    else:
        f = sig**2 / (sig**2 + lambda_sq)
        coef = np.where(positive, sig * beta / (sig**2 + lambda_sq), 0.0)
    s = F.V @ coef
    # ||b - A s||^2 = ||b||^2 - ||beta||^2 + sum((1 - f_i)^2 beta_i^2)
    res2 = F.b_norm2 - float(beta @ beta) + float(np.sum(((1.0 - f) * beta) ** 2))
    return TikhonovSolution(s, float(lambda_sq), f, float(np.sqrt(max(res2, 0.0))),
                            float(np.linalg.norm(coef)), deficient)


def solve_tikhonov(A, b, lambda_sq, factors=None):
    """Minimiser of ||A s - b||^2 + lambda_sq ||s||^2.

    With ``lambda_sq == 0`` the minimum-norm least-squares solution is returned
    and ``rank_deficient`` reports whether small singular values were dropped.
    """
    b = np.asarray(b, dtype=float)
    F = factors if factors is not None and factors.beta is not None else svd_factors(A, b)
    sol = _solve_from_factors(F, lambda_sq)
    r = np.asarray(A) @ sol.s - b
    return TikhonovSolution(sol.s, sol.lambda_sq, sol.filters, float(np.linalg.norm(r)),
                            sol.solution_norm, sol.rank_deficient)


def objective(A, b, s, lambda_sq):
    r = A @ s - b
    return float(r @ r + lambda_sq * (s @ s))


def _curvature(xs, ys):
    """Signed curvature of the circle through consecutive triples of points."""
    k = np.zeros(len(xs))
    for i in range(1, len(xs) - 1):
        p, q, r = np.array([xs[i - 1], ys[i - 1]]), np.array([xs[i], ys[i]]), np.array([xs[i + 1], ys[i + 1]])
        a = np.linalg.norm(q - p)
        b = np.linalg.norm(r - q)
        c = np.linalg.norm(r - p)
        cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        denom = a * b * c
        k[i] = 2.0 * cross / denom if denom > 0 else 0.0
    return k


@dataclass
class LCurve:
    lambda_sq: np.ndarray
    residual_norm: np.ndarray
    solution_norm: np.ndarray
    curvature: np.ndarray
    selected: int
    no_distinct_corner: bool

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda_sq", "residual_norm", "solution_norm", "curvature", "selected"])
            for i in range(len(self.lambda_sq)):
                w.writerow([repr(float(self.lambda_sq[i])), repr(float(self.residual_norm[i])),
                            repr(float(self.solution_norm[i])), repr(float(self.curvature[i])),
                            int(i == self.selected)])


def lcurve_select(A, b, lambda_grid=None, factors=None):
    """Pick lambda^2 at the corner of the log-log L-curve.

    The grid is sorted descending.  Points whose residual does not grow by at
    least 1e-14 relative to the next smaller lambda are dropped before the
    three-point curvature is taken; the maximiser of the curvature wins.
    """
    grid = np.sort(np.asarray(DEFAULT_GRID if lambda_grid is None else lambda_grid, dtype=float))[::-1]
    if len(grid) < 5:
        raise ValueError("L-curve grid needs at least 5 values")
    if np.any(grid <= 0) or np.log10(grid[0] / grid[-1]) < 6 - 1e-9:
        raise ValueError("L-curve grid must be positive and span at least 6 decades")
    F = factors if factors is not None and factors.beta is not None else svd_factors(A, b)
    sols = [_solve_from_factors(F, lam) for lam in grid]
    res = np.array([max(s.residual_norm, 1e-300) for s in sols])
    nrm = np.array([max(s.solution_norm, 1e-300) for s in sols])
    # monotone cleanup: walk from small to large lambda keeping strict residual growth
    keep = np.zeros(len(grid), dtype=bool)
    keep[-1] = True
    last = res[-1]
    for i in range(len(grid) - 2, -1, -1):
        if res[i] > last * (1.0 + 1e-14):
            keep[i] = True
            last = res[i]
    idx = np.flatnonzero(keep)
    curv = np.zeros(len(grid))
    flag = False
    if len(idx) >= 3:
        # traversed from large to small lambda the corner turns clockwise
        kk = -_curvature(np.log10(res[idx]), np.log10(nrm[idx]))
        curv[idx] = kk
        inner = kk[1:-1]
        flag = not (np.any(inner > 0) and np.any(inner < 0))
        best = idx[1 + int(np.argmax(inner))]
    else:
        flag = True
        best = int(len(grid) - 1)
    curve = LCurve(grid, res, nrm, curv, int(best), bool(flag))
    return float(grid[best]), curve


@dataclass(frozen=True)
class BoundDiagnostics:
    delta_all: float
    eta_M: float
    nu: float
    w_norm: float
    C_nu: float
    lambda_opt_sq: float
    bound_value: float
    lambda_sq: float
    optimal_rate_bound: float


def bound_at(lambda_sq, delta_all, eta_M, nu, C_nu, w_norm):
    lam = np.sqrt(lambda_sq)
    return (delta_all + eta_M) / (2.0 * lam) + C_nu * lam ** (2.0 * nu) * w_norm


def stability_bound(delta_all, eta_M, nu=1.0, w_norm=1.0, C_nu=1.0, lambda_sq=None):
    """Stability bound for the Tikhonov solution under a source condition.

    Returns the optimal lambda^2, the generic bound at ``lambda_sq`` (the
    optimal value when omitted) and the closed-form optimal-rate bound.
    """
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    if C_nu <= 0 or w_norm <= 0:
        raise ValueError("C_nu and ||w|| must be positive")
    total = delta_all + eta_M
    p = 2.0 * nu + 1.0
    lam_opt_sq = (total / (4.0 * nu * C_nu * w_norm)) ** (2.0 / p)
    lam_sq = lam_opt_sq if lambda_sq is None else float(lambda_sq)
    rate = p * (4.0 * nu) ** (-2.0 * nu / p) * (C_nu * w_norm) ** (1.0 / p) * total ** (2.0 * nu / p)
    value = bound_at(lam_sq, delta_all, eta_M, nu, C_nu, w_norm) if lam_sq > 0 else np.inf
    return BoundDiagnostics(float(delta_all), float(eta_M), float(nu), float(w_norm), float(C_nu),
                            float(lam_opt_sq), float(value), float(lam_sq), float(rate))
