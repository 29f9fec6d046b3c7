"""Bessel/Hankel functions of integer order and the Helmholtz fundamental solution.

The Bessel routines are written from scratch (power series for small
arguments, Hankel asymptotic expansion for large ones, recurrences for higher
orders) so the circular-harmonic data extension does not depend on anything
opaque.  The kernel routines ``phi`` and ``phi_normal_derivative`` sit on the
assembly hot path and evaluate H_0/H_1 through the fixed-order ``scipy.special`` routines; the test
suite checks that both routes agree.
"""
import math

import numpy as np
from scipy import special

EULER_GAMMA = 0.57721566490153286060651209
SERIES_CUTOFF = 12.0
R_MIN = 1e-10

_SERIES_TERMS = 80
_ASYMPTOTIC_TERMS = 40


class KernelSingularityError(ValueError):
    """Raised when a kernel is evaluated with source and target (nearly) coincident."""


def _check_arg(z):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise ValueError("Bessel functions are only implemented for real z > 0")
    return z


def _check_order(n):
    if int(n) != n or n < 0:
        raise ValueError(f"order must be a non-negative integer, got {n!r}")
    return int(n)


def _harmonic(k):
    return sum(1.0 / j for j in range(1, k + 1))


def _j_series(n, z):
    half = 0.5 * z
    q = -half * half
    term = half**n / math.factorial(n)
    total = term.copy()
    for k in range(1, _SERIES_TERMS):
        term = term * q / (k * (k + n))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
            break
    return total


def _y_series(n, z, jn):
    # Abramowitz & Stegun 9.1.11
    half = 0.5 * z
    q = -half * half
    out = (2.0 / np.pi) * np.log(half) * jn
    if n > 0:
        finite = np.zeros_like(z)
        for k in range(n):
            finite = finite + math.factorial(n - k - 1) / math.factorial(k) * (half * half) ** k
        out = out - finite * half ** (-n) / np.pi
    term = half**n / math.factorial(n)
    psi_sum = -2.0 * EULER_GAMMA + _harmonic(n)
    total = psi_sum * term
    for k in range(1, _SERIES_TERMS):
        term = term * q / (k * (k + n))
        psi_sum += 1.0 / k + 1.0 / (k + n)
        inc = psi_sum * term
        total = total + inc
        if np.all(np.abs(inc) <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
            break
    return out - total / np.pi


def _hankel_asymptotic(n, z):
    """Large-argument expansion of H_n^(1)(z), truncated at its smallest term."""
    mu = 4.0 * n * n
    phase = z - (0.5 * n + 0.25) * np.pi
    total = np.ones_like(z, dtype=complex)
    term = np.ones_like(z, dtype=complex)
    last = np.ones_like(z)
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, _ASYMPTOTIC_TERMS):
        term = term * 1j * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
        size = np.abs(term)
        active &= size < last
        total = total + np.where(active, term, 0.0)
        last = np.where(active, size, last)
        if not active.any():
            break
    return np.sqrt(2.0 / (np.pi * z)) * np.exp(1j * phase) * total


def _j01_y01(z):
    """J0, J1, Y0, Y1 on an array of positive arguments."""
    z = np.atleast_1d(z)
    j0 = np.empty_like(z)
    j1 = np.empty_like(z)
    y0 = np.empty_like(z)
    y1 = np.empty_like(z)
    small = z < SERIES_CUTOFF
    if small.any():
        zs = z[small]
        j0[small] = _j_series(0, zs)
        j1[small] = _j_series(1, zs)
        y0[small] = _y_series(0, zs, j0[small])
        y1[small] = _y_series(1, zs, j1[small])
    if (~small).any():
        zl = z[~small]
        h0 = _hankel_asymptotic(0, zl)
        h1 = _hankel_asymptotic(1, zl)
        j0[~small], y0[~small] = h0.real, h0.imag
        j1[~small], y1[~small] = h1.real, h1.imag
    return j0, j1, y0, y1


def _j_miller(n, x):
    """J_n(x) by backward recurrence normalised with 1 = J0 + 2*sum J_2k."""
    m = 2 * ((max(n, int(x)) + int(math.sqrt(160.0 * max(n, x)))) // 2) + 20
    tox = 2.0 / x
    bjp, bj, total, ans = 0.0, 1.0, 0.0, 0.0
    even = False
    for j in range(m, 0, -1):
        bjm = j * tox * bj - bjp
        bjp, bj = bj, bjm
        if abs(bj) > 1e250:
            bj *= 1e-250
            bjp *= 1e-250
            ans *= 1e-250
            total *= 1e-250
        if even:
            total += bj
        even = not even
        if j == n:
            ans = bjp
    total = 2.0 * total - bj
    return ans / total


def bessel_j(n, z):
    """Bessel function of the first kind J_n(z) for integer n >= 0 and real z > 0."""
    n = _check_order(n)
    z = _check_arg(z)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    small = z < SERIES_CUTOFF
    out = np.empty_like(z)
    if small.any():
        out[small] = _j_series(n, z[small])
    if (~small).any():
        zl = z[~small]
        if n <= 1:
            out[~small] = _hankel_asymptotic(n, zl).real
        else:
            j0, j1, _, _ = _j01_y01(zl)
            upward = zl > n
            vals = np.empty_like(zl)
            if upward.any():
                jm, jc = j0[upward], j1[upward]
                zu = zl[upward]
                for m in range(1, n):
                    jm, jc = jc, (2.0 * m / zu) * jc - jm
                vals[upward] = jc
            for idx in np.flatnonzero(~upward):
                vals[idx] = _j_miller(n, float(zl[idx]))
            out[~small] = vals
    return out[0] if scalar else out


def bessel_y(n, z):
    """Bessel function of the second kind Y_n(z); orders >= 2 by upward recurrence."""
    n = _check_order(n)
    z = _check_arg(z)
    scalar = z.ndim == 0
    _, _, y0, y1 = _j01_y01(np.atleast_1d(z))
    if n == 0:
        out = y0
    else:
        zz = np.atleast_1d(z)
        ym, yc = y0, y1
        for m in range(1, n):
            ym, yc = yc, (2.0 * m / zz) * yc - ym
        out = yc
    return out[0] if scalar else out


def hankel1(n, z):
    """Hankel function of the first kind H_n^(1)(z) = J_n(z) + i Y_n(z).

    Orders n >= 2 come from the three-term recurrence applied to the complex
    pair (H_0, H_1); the recurrence is stable upward because the Y part
    dominates.
    """
    n = _check_order(n)
    z = _check_arg(z)
    scalar = z.ndim == 0
    zz = np.atleast_1d(z)
    j0, j1, y0, y1 = _j01_y01(zz)
    hm = j0 + 1j * y0
    hc = j1 + 1j * y1
    if n == 0:
        out = hm
    else:
        for m in range(1, n):
            hm, hc = hc, (2.0 * m / zz) * hc - hm
        out = hc
    return out[0] if scalar else out


def hankel1_derivative(n, z):
    """d/dz H_n^(1)(z) = H_{n-1}^(1)(z) - (n/z) H_n^(1)(z), with H_{-1} = -H_1."""
    n = _check_order(n)
    if n == 0:
        return -hankel1(1, z)
    return hankel1(n - 1, z) - n / np.asarray(z, dtype=float) * hankel1(n, z)


def _distance(x, y, r_min):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    if np.any(r <= r_min):
        raise KernelSingularityError(
            f"kernel evaluated at |x - y| = {float(np.min(r)):.3e} <= r_min = {r_min:g}"
        )
    return diff, r


def _dim(x, y, dim):
    d = np.shape(x)[-1] if dim is None else dim
    if d not in (2, 3) or np.shape(x)[-1] != d or np.shape(y)[-1] != d:
        raise ValueError(f"only 2D and 3D kernels are implemented (got dim={d})")
    return d


def phi_of_r(k, r, dim):
    """Kernel as a function of the distance alone (r > 0 assumed checked)."""
    if dim == 2:
        z = k * r
        return 0.25j * (special.j0(z) + 1j * special.y0(z))
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


def dphi_of_r(k, r, proj, dim):
    """Normal derivative from the distance and proj = (x - y) . nu / r."""
    if dim == 2:
        z = k * r
        return -0.25j * k * (special.j1(z) + 1j * special.y1(z)) * proj
    return np.exp(1j * k * r) / (4.0 * np.pi * r) * (1j * k - 1.0 / r) * proj


def phi(k, x, y, dim=None, r_min=R_MIN):
    """Outgoing fundamental solution of -(Laplace + k^2) evaluated at |x - y|.

    ``x`` and ``y`` broadcast against each other along leading axes; the last
    axis holds coordinates.  2D: (i/4) H_0^(1)(kr); 3D: exp(ikr)/(4 pi r).
    """
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    d = _dim(x, y, dim)
    _, r = _distance(x, y, r_min)
    return phi_of_r(k, r, d)


def phi_normal_derivative(k, x, y, nu, dim=None, r_min=R_MIN):
    """Derivative of ``phi`` with respect to x in the direction ``nu`` (unit normal at x)."""
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    d = _dim(x, y, dim)
    diff, r = _distance(x, y, r_min)
    proj = np.sum(diff * np.asarray(nu, dtype=float), axis=-1) / r
    return dphi_of_r(k, r, proj, d)
