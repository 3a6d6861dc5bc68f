"""
The limiting spectral distribution F of S^{-1}T: density by Stieltjes
inversion, numerical support detection, and functionals int f dF by Cauchy
contour integrals.
"""

from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .contour import Contour, ContourError, contour_data, default_contour
from .measures import ModelParams, TestFunction, support_bracket
from .stieltjes import SolverConfig, _effective, solve_upper

__all__ = [
    "DensityCurve",
    "DensityWarning",
    "density",
    "default_grid",
    "default_eps_schedule",
    "numeric_support",
    "lsd_functional",
]

log = logging.getLogger(__name__)

MAX_FLAGGED_FRACTION = 0.05
SUPPORT_THRESHOLD = 1e-6
REFINE_STEPS = 40


class DensityWarning(RuntimeWarning):
    """Some grid points failed to converge and were interpolated."""


@dataclass(frozen=True, eq=False)
class DensityCurve:
    grid: np.ndarray
    values: np.ndarray
    zero_mass: float
    epsilon_used: np.ndarray
    flagged: np.ndarray | None = None

    def mass(self) -> float:
        return self.zero_mass + float(np.trapezoid(self.values, self.grid))

    def cdf(self) -> np.ndarray:
        """Distribution function at the grid points, including the atom at 0."""
        steps = 0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.grid)
        return self.zero_mass + np.concatenate([[0.0], np.cumsum(steps)])

    def cdf_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.grid, self.cdf(), left=self.zero_mass, right=self.mass())
        if self.zero_mass > 0.0:
            out = np.where(x < 0.0, 0.0, out)
        return out

    def to_csv(self, preamble: str | None = None) -> str:
        buf = io.StringIO(newline="")
        if preamble:
            buf.write(preamble.rstrip("\n") + "\n")
        buf.write("x,density,epsilon_used\n")
        for x, v, e in zip(self.grid, self.values, self.epsilon_used):
            buf.write(f"{x:.17g},{v:.17g},{e:.17g}\n")
        return buf.getvalue()


DEFAULT_EPS_SCHEDULE = (1e-5, 1e-6, 1e-7)


def default_eps_schedule(params: ModelParams | None = None) -> tuple[float, ...]:
    """Relative imaginary offsets; the offset at grid point x is eps * |x|.

    Relative offsets respect the scale equivariance of the law and resolve
    the narrow lower edge as well as the wide upper one. Square-root edges
    need small offsets: the extrapolation model breaks down within a few
    epsilon of an edge.
    """
    return DEFAULT_EPS_SCHEDULE


def default_grid(params: ModelParams, points: int = 4001) -> np.ndarray:
    """Union of a linear and a geometric grid over the support bracket.

    The geometric half resolves the narrow peak near the lower edge, which
    dominates when y is close to 1 or H is spread over several decades.
    """
    x_l, x_r = support_bracket(params)
    lo = x_l if x_l > 0.0 else x_r * 1e-6
    grid = np.union1d(np.linspace(lo, x_r, points), np.geomspace(lo, x_r, points))
    return grid[np.concatenate([[True], np.diff(grid) > 1e-12 * x_r])]


def _neville(eps: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Polynomial extrapolation to eps = 0 of rows[k] sampled at eps[k]."""
    p = [r.copy() for r in rows]
    n = len(eps)
    for m in range(1, n):
        for i in range(n - m):
            p[i] = (eps[i + m] * p[i] - eps[i] * p[i + 1]) / (eps[i + m] - eps[i])
    return p[0]


def _inverted(params: ModelParams, x: np.ndarray, eps: np.ndarray,
              cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Extrapolated Im s(x + i eps |x|) / pi and a mask of failed points."""
    measure, _ = _effective(params, cfg)
    w0 = params.measure.zero_mass
    y = params.y
    rows = []
    flagged = np.zeros(x.size, dtype=bool)
    A_prev = None
    scale = np.abs(x)
    for e in eps:
        z = x + 1j * e * scale
        A, _, _, ok = solve_upper(z, y, measure, cfg, A_prev)
        flagged |= ~ok
        # warm-start the next offset only from a clean pass
        A_prev = A if ok.all() else None
        s = (A - z) / (y * z * z)
        if w0 > 0.0:
            s = s + w0 / z
        rows.append(s.imag / math.pi)
    # the offsets at a point are proportional to eps, so extrapolating in eps is enough
    values = _neville(eps, np.array(rows)) if eps.size > 1 else rows[0]
    return values, flagged


def density(params: ModelParams, grid: Sequence[float] | None = None,
            eps_schedule: Sequence[float] | None = None,
            config: SolverConfig | None = None) -> DensityCurve:
    """Density of the absolutely continuous part of F on a grid.

    Im s(x + i eps |x|) / pi is computed for each relative offset eps in the
    schedule and extrapolated to eps = 0. The atom H({0}) is removed from s first and
    reported separately as ``zero_mass``.
    """
    cfg = config or SolverConfig()
    grid = default_grid(params) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be strictly ascending with at least two points")
    eps = np.asarray(default_eps_schedule(params) if eps_schedule is None else eps_schedule, dtype=float)
    if eps.size == 0 or np.any(eps <= 0.0) or np.any(np.diff(eps) >= 0.0):
        raise ValueError("eps_schedule must be positive and strictly descending")
    x_l, x_r = support_bracket(params, margin=0.5)
    if grid[0] <= 0.0 or grid[-1] > x_r:
        raise ValueError(f"grid must lie inside the widened support bracket (0, {x_r:.6g}]")

    values, flagged = _inverted(params, grid, eps, cfg)
    w0 = params.measure.zero_mass
    scale = np.abs(grid)
    n_bad = int(flagged.sum())
    if n_bad:
        frac = n_bad / grid.size
        if frac > MAX_FLAGGED_FRACTION:
            raise ArithmeticError(f"density solve failed at {n_bad} of {grid.size} grid points")
        warnings.warn(f"density solve failed at {n_bad} grid points; interpolated", DensityWarning,
                      stacklevel=2)
        good = ~flagged
        values = values.copy()
        values[flagged] = np.interp(grid[flagged], grid[good], values[good])
    values = np.where(values < 0.0, 0.0, values)
    return DensityCurve(grid, values, w0, eps[-1] * scale, flagged)


def numeric_support(params: ModelParams, resolution: int = 4001,
                    threshold: float = SUPPORT_THRESHOLD,
                    config: SolverConfig | None = None) -> list[tuple[float, float]]:
    """Maximal intervals of the bracket on which x times the density exceeds ``threshold``.

    Interval ends are refined by bisection between neighbouring grid points.

    The atom at 0 inherited from H is not part of the result.
    """
    cfg = config or SolverConfig()
    grid = default_grid(params, resolution)
    curve = density(params, grid[grid > 0.0], config=cfg)
    g = curve.grid
    # x * density is invariant under rescaling T, unlike the density itself
    above = curve.values * g > threshold
    starts = np.flatnonzero(above & ~np.concatenate([[False], above[:-1]]))
    ends = np.flatnonzero(above & ~np.concatenate([above[1:], [False]]))
    # bisect each threshold crossing between neighbouring grid points
    eps = np.asarray(default_eps_schedule(params))
    lo_in, lo_out = g[starts], g[np.maximum(starts - 1, 0)]
    hi_in, hi_out = g[ends], g[np.minimum(ends + 1, g.size - 1)]
    inside = np.concatenate([lo_in, hi_in])
    outside = np.concatenate([lo_out, hi_out])
    for _ in range(REFINE_STEPS):
        mid = 0.5 * (inside + outside)
        vals, _ = _inverted(params, mid, eps, cfg)
        hit = vals * mid > threshold
        inside = np.where(hit, mid, inside)
        outside = np.where(hit, outside, mid)
    k = starts.size
    return [(float(a), float(b)) for a, b in zip(inside[:k], inside[k:])]


def lsd_functional(f: TestFunction, params: ModelParams, contour: Contour | None = None,
                   config: SolverConfig | None = None, tolerance: float = 1e-10,
                   max_nodes: int = 4096) -> float:
    """int f dF = -(1/2 pi i) oint f(z) s(z) dz, doubling the nodes until converged."""
    cfg = config or SolverConfig()
    if contour is None:
        contour = default_contour(params, [f])
    else:
        contour.validate(params, [f])
    if params.measure.zero_mass > 0.0 and not contour.contains(0.0):
        raise ContourError("the contour must enclose 0 when H has an atom there")
    n = contour.nodes
    while True:
        d = contour_data(contour.with_nodes(2 * n), params, cfg)
        integrand = np.asarray(f(d.z), dtype=complex) * d.s * d.weights
        fine = integrand.sum() / (-2j * math.pi)
        coarse = 2.0 * integrand[::2].sum() / (-2j * math.pi)
        if abs(fine - coarse) <= tolerance * max(1.0, abs(fine)) or 2 * n >= max_nodes:
            break
        n *= 2
    if abs(fine.imag) >= 1e-8 * max(1.0, abs(fine.real)):
        raise ContourError(f"functional has imaginary part {fine.imag:.3e}; check the contour")
    return float(fine.real)
