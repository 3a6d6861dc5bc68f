"""
Independent reference computations used to validate the main solver and the
CLT quadrature.

Everything here works in the inverted picture: when T is invertible, the
eigenvalues of S^{-1}T are the reciprocals of those of T^{-1/2} S T^{-1/2},
a sample covariance matrix with population spectrum 1/t. Its companion
Stieltjes transform m(w) solves the classical Silverstein equation, which
is solved here as a polynomial root problem rather than by iteration, and
the classical CLT for its linear spectral statistics is integrated in the
w = 1/z plane. None of this shares code with the solver in the z plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measures import ModelParams, SpectralMeasure, TestFunction

__all__ = [
    "mp_edges",
    "mp_companion",
    "mp_density",
    "inverse_mp_edges",
    "inverse_mp_stieltjes",
    "inverse_mp_companion",
    "inverse_mp_density",
    "silverstein_companion",
    "ReferenceClt",
    "reference_clt",
]


# --------------------------------------------------------------------------
# Marchenko-Pastur closed forms (population I, ratio y < 1)


def mp_edges(y: float) -> tuple[float, float]:
    r = math.sqrt(y)
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def mp_companion(w, y: float):
    """Companion transform of the MP law, -(1-y)/w + y m(w), from the quadratic formula.

    The product of principal square roots picks the branch that decays like
    -1/w at infinity on the whole plane minus the support.
    """
    w = np.asarray(w, dtype=complex)
    a, b = mp_edges(y)
    m = (1.0 - y - w + np.sqrt(w - a) * np.sqrt(w - b)) / (2.0 * y * w)
    return -(1.0 - y) / w + y * m


def mp_density(x, y: float):
    x = np.asarray(x, dtype=float)
    a, b = mp_edges(y)
    inside = (x > a) & (x < b)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2.0 * math.pi * y * xi)
    return out


def inverse_mp_edges(y: float, c: float = 1.0) -> tuple[float, float]:
    """Support of the LSD of S^{-1}(cI)."""
    a, b = mp_edges(y)
    return c / b, c / a


def inverse_mp_companion(z, y: float, c: float = 1.0):
    """-A(z) for T = cI, i.e. the MP companion transform at 1/z after rescaling."""
    z = np.asarray(z, dtype=complex) / c
    return c * mp_companion(1.0 / z, y)


def inverse_mp_stieltjes(z, y: float, c: float = 1.0):
    """Stieltjes transform of the LSD of S^{-1}(cI) via 1 + y z s(z) = -m(1/z)/z."""
    z = np.asarray(z, dtype=complex) / c
    mb = mp_companion(1.0 / z, y)
    return (-1.0 / (y * z) - mb / (y * z * z)) / c


def inverse_mp_density(x, y: float, c: float = 1.0):
    """Density of the LSD of S^{-1}(cI) by the change of variables x -> 1/x."""
    x = np.asarray(x, dtype=float) / c
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = mp_density(1.0 / x[pos], y) / x[pos] ** 2
    return out / c


# --------------------------------------------------------------------------
# Silverstein equation for population 1/t, solved by polynomial roots


def _polynomial(w: complex, y: float, t: np.ndarray, wt: np.ndarray) -> np.ndarray:
    """Coefficients of m (-w P(m) + y sum_k w_k P_k(m)) - P(m), P(m) = prod (m + t_k)."""
    P = np.poly1d([1.0])
    for tk in t:
        P = P * np.poly1d([1.0, tk])
    Q = np.poly1d([0.0])
    for k, tk in enumerate(t):
        Pk = np.poly1d([1.0])
        for j, tj in enumerate(t):
            if j != k:
                Pk = Pk * np.poly1d([1.0, tj])
        Q = Q + wt[k] * Pk
    poly = np.poly1d([1.0, 0.0]) * (-w * P + y * Q) - P
    return poly.coeffs


def _silverstein_newton(m, w, y, t, wt, steps=4):
    for _ in range(steps):
        d = t + m
        g = m * (-w + y * np.sum(wt / d)) - 1.0
        gp = (-w + y * np.sum(wt / d)) - m * y * np.sum(wt / d**2)
        m = m - g / gp
    return m


def silverstein_companion(w: complex, y: float, measure: SpectralMeasure) -> complex:
    """Companion transform m(w) of the LSD of T^{-1/2} S T^{-1/2} for Im w != 0.

    Solves m = 1 / (-w + y int dH(t) / (t + m)) and keeps the unique root with
    Im m of the same sign as Im w.
    """
    w = complex(w)
    if w.imag == 0.0:
        raise ValueError("the root selection needs Im w != 0")
    if measure.zero_mass > 0.0:
        raise ValueError("the inverted picture needs an invertible T")
    flip = w.imag < 0.0
    ww = w.conjugate() if flip else w
    t, wt = measure.t, measure.w
    roots = np.roots(_polynomial(ww, y, t, wt))
    good = roots[roots.imag > 0.0]
    if good.size == 0:
        raise ArithmeticError(f"no root in the upper half-plane at w={w!r}")
    m = good[np.argmax(good.imag)] if good.size > 1 else good[0]
    m = complex(_silverstein_newton(m, ww, y, t, wt))
    return m.conjugate() if flip else m


# --------------------------------------------------------------------------
# CLT for linear spectral statistics in the inverted picture


@dataclass(frozen=True, eq=False)
class ReferenceClt:
    mean: np.ndarray
    covariance: np.ndarray
    mean_beta: np.ndarray
    covariance_beta: np.ndarray


def _w_contour(lo: float, hi: float, widen: float, height: float, nodes: int):
    """Image under exp of an ellipse around [log lo, log hi].

    In log w the pole of f(1/w) at 0 sits at -infinity, so a wide support
    close to 0 no longer pinches the contour. ``height`` < pi keeps the curve
    off the negative real axis. Offset nodes avoid the real axis.
    """
    left, right = math.log(lo) - widen, math.log(hi) + widen
    c, a = 0.5 * (left + right), 0.5 * (right - left)
    th = 2.0 * np.pi * (np.arange(nodes) + 0.5) / nodes
    w = np.exp(c + a * np.cos(th) + 1j * height * np.sin(th))
    dw = w * (-a * np.sin(th) + 1j * height * np.cos(th)) * (2.0 * np.pi / nodes)
    return w, dw


def _solve_contour(w, y, measure):
    return np.array([silverstein_companion(wk, y, measure) for wk in w])


def reference_clt(functions: Sequence[TestFunction], params: ModelParams,
                  nodes: int = 1024) -> ReferenceClt:
    """Mean and covariance of the limiting LSS vector computed in the w = 1/z plane.

    The Gaussian-moment parts (per unit of kappa - 1 for the mean and per unit of
    kappa for the covariance) and the fourth-moment parts (per unit of beta_x)
    are returned separately:

        mean    = -(1/2 pi i) oint f(1/w) y m^3 int tau^2 dH/(1+tau m)^3 / D(w)^2 dw
        cov     = -(1/4 pi^2) oint oint f(1/w1) g(1/w2) m1' m2' / (m1 - m2)^2 dw1 dw2
        mean_b  = -(y/2 pi i) oint f(1/w) m^3 int tau^2 dH/(1+tau m)^3 / D(w) dw
        cov_b   = -(y/4 pi^2) oint oint f g int tau^2 m1' m2' dH/((1+tau m1)^2 (1+tau m2)^2)

    with tau = 1/t the population eigenvalues and D(w) = 1 - y int m^2 tau^2 dH/(1+tau m)^2.
    """
    measure = params.measure
    y = params.y
    if measure.zero_mass > 0.0:
        raise ValueError("the reference CLT needs an invertible T")
    tau = 1.0 / measure.t
    wt = measure.w
    r = math.sqrt(y)
    lo, hi = float(tau.min()) * (1.0 - r) ** 2, float(tau.max()) * (1.0 + r) ** 2
    # |arg w| < pi on both curves, so powers and the principal log are analytic there
    inner, outer = (0.3, 1.2), (0.6, 2.4)

    def pieces(w):
        m = _solve_contour(w, y, measure)
        q = 1.0 + np.outer(m, tau)
        D = 1.0 - y * ((wt * tau**2) / q**2).sum(-1) * m**2
        mp = m**2 / D
        return m, q, D, mp

    w1, dw1 = _w_contour(lo, hi, *inner, nodes)
    w2, dw2 = _w_contour(lo, hi, *outer, nodes)
    m1, q1, D1, mp1 = pieces(w1)
    m2, q2, _, mp2 = pieces(w2)

    F1 = np.stack([np.asarray(f(1.0 / w1), dtype=complex) for f in functions], axis=1)
    F2 = np.stack([np.asarray(f(1.0 / w2), dtype=complex) for f in functions], axis=1)

    cube = ((wt * tau**2) / q1**3).sum(-1)
    mean = -(F1 * (y * m1**3 * cube / D1**2 * dw1)[:, None]).sum(0) / (2j * np.pi)
    mean_b = -(F1 * (y * m1**3 * cube / D1 * dw1)[:, None]).sum(0) / (2j * np.pi)

    K = 1.0 / (m1[:, None] - m2[None, :]) ** 2
    left = F1 * (mp1 * dw1)[:, None]
    right = F2 * (mp2 * dw2)[:, None]
    cov = -(left.T @ K @ right) / (4.0 * np.pi**2)
    # separable in the population atoms
    u = left.T @ ((wt * tau**2) ** 0.5 / q1**2)
    v = right.T @ ((wt * tau**2) ** 0.5 / q2**2)
    cov_b = -y * (u @ v.T) / (4.0 * np.pi**2)
    sym = lambda c: 0.5 * (c + c.T)  # noqa: E731
    return ReferenceClt(mean.real, sym(cov.real), mean_b.real, sym(cov_b.real))
