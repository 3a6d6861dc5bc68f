"""
Elliptic quadrature contours around the LSD support and the solved companion
values on their nodes.

A contour is the ellipse z(theta) = center + a cos(theta) + i b sin(theta),
traversed counter-clockwise, with nodes theta_k = 2 pi k / N. The
``log_ellipse`` kind is the image under exp of such an ellipse (center and
semi-axes then live in log z); it stays off (-inf, 0] and suits test
functions with a singularity at 0 and supports spanning several decades. The trapezoid
rule on it converges geometrically for integrands analytic in an annulus
around the curve, and the node sets for N and 2N are nested, which gives a
free error estimate by node doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .measures import ModelParams, TestFunction, support_bracket
from .stieltjes import SolverConfig, SolverError, _a_prime, _effective, solve_upper

__all__ = [
    "Contour",
    "ContourData",
    "ContourError",
    "default_contour",
    "nested_contours",
    "contour_data",
]

NESTING = 0.8
LOG_HEIGHT = 1.2


class ContourError(ValueError):
    """The contour does not fit the support or the test functions."""


@dataclass(frozen=True)
class Contour:
    center: float
    semi_axis_x: float
    semi_axis_y: float
    nodes: int = 256
    kind: str = "ellipse"

    def __post_init__(self) -> None:
        if self.kind not in ("ellipse", "log_ellipse"):
            raise ContourError(f"unknown contour kind {self.kind!r}")
        if not (self.semi_axis_x > 0.0 and self.semi_axis_y > 0.0):
            raise ContourError("semi-axes must be positive")
        if self.kind == "log_ellipse" and self.semi_axis_y >= math.pi:
            raise ContourError("a log ellipse needs semi_axis_y < pi")
        n = int(self.nodes)
        if n < 4 or n & (n - 1):
            raise ContourError(f"nodes must be a power of two >= 4, got {self.nodes}")

    @property
    def left(self) -> float:
        """Leftmost real point of the curve."""
        v = self.center - self.semi_axis_x
        return math.exp(v) if self.kind == "log_ellipse" else v

    @property
    def right(self) -> float:
        v = self.center + self.semi_axis_x
        return math.exp(v) if self.kind == "log_ellipse" else v

    def with_nodes(self, nodes: int) -> "Contour":
        return replace(self, nodes=int(nodes))

    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.nodes) / self.nodes

    def _base(self) -> tuple[np.ndarray, np.ndarray]:
        th = self.theta()
        z = self.center + self.semi_axis_x * np.cos(th) + 1j * self.semi_axis_y * np.sin(th)
        dz = -self.semi_axis_x * np.sin(th) + 1j * self.semi_axis_y * np.cos(th)
        if self.kind == "log_ellipse":
            z = np.exp(z)
            dz = z * dz
        return z, dz

    def points(self) -> np.ndarray:
        return _mirror(self._base()[0], 1.0)

    def tangent(self) -> np.ndarray:
        """dz/dtheta at the nodes."""
        return _mirror(self._base()[1], -1.0)

    def weights(self) -> np.ndarray:
        """Trapezoid weights w_k so that the contour integral of F is sum F(z_k) w_k."""
        return self.tangent() * (2.0 * np.pi / self.nodes)

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.kind == "log_ellipse":
            with np.errstate(divide="ignore"):
                zeta = np.log(np.where(z == 0, np.nan, z))
            u = (zeta.real - self.center) / self.semi_axis_x
            v = zeta.imag / self.semi_axis_y
            return np.nan_to_num(u * u + v * v, nan=np.inf) < 1.0
        u = (z.real - self.center) / self.semi_axis_x
        v = z.imag / self.semi_axis_y
        return u * u + v * v < 1.0

    def inside(self, other: "Contour", samples: int = 2048) -> bool:
        """True if this curve lies strictly inside ``other``."""
        return bool(np.all(other.contains(self.with_nodes(samples).points())))

    def validate(self, params: ModelParams, functions: Sequence[TestFunction] = ()) -> None:
        """Check enclosure of the support bracket and avoidance of function singularities."""
        x_l, x_r = support_bracket(params)
        gap = 0.01 * (x_r - x_l)
        floor = _floor(functions)
        if math.isfinite(floor):
            # a singularity just left of the support caps the attainable margin
            gap = min(gap, 0.1 * (x_l - max(floor, 0.0)))
        pts = self.with_nodes(4096).points()
        xs = np.clip(pts.real, x_l, x_r)
        dist = np.min(np.hypot(pts.real - xs, pts.imag))
        if not (self.left < x_l and self.right > x_r and dist >= gap):
            raise ContourError(
                f"contour [{self.left:.6g}, {self.right:.6g}] x {self.semi_axis_y:.6g} does not enclose "
                f"the support bracket [{x_l:.6g}, {x_r:.6g}] with the required margin"
            )
        if np.any(pts == 0.0):
            raise ContourError("contour passes through 0")
        for f in functions:
            fl = f.analyticity_floor
            if math.isfinite(fl) and self.left <= fl:
                raise ContourError(
                    f"contour reaches {self.left:.6g}, left of the analyticity floor {fl:.6g} of {f.label}"
                )


def _mirror(v: np.ndarray, sign: float) -> np.ndarray:
    """Impose v[n-k] = sign * conj(v[k]) exactly; nodes 0 and n/2 sit on the real axis."""
    n = v.size
    half = n // 2
    v[0] = v[0].real if sign > 0 else 1j * v[0].imag
    v[half] = v[half].real if sign > 0 else 1j * v[half].imag
    v[half + 1:] = sign * np.conj(v[1:half][::-1])
    return v


def _floor(functions: Sequence[TestFunction]) -> float:
    return max((f.analyticity_floor for f in functions), default=-math.inf)


def _ellipses(params: ModelParams, functions: Sequence[TestFunction], nodes: int,
              nesting: float) -> tuple[Contour, Contour]:
    x_l, x_r = support_bracket(params)
    floor = _floor(functions)
    for f in functions:
        f.check_bracket((x_l, x_r))
    half = 0.5 * (x_r - x_l)
    if not math.isfinite(floor):
        # near-circles around the bracket; the left vertex may cross 0 freely
        center = 0.5 * (x_l + x_r)
        a_in = 1.25 * half
        if abs(center - a_in) < 1e-3 * half:
            a_in *= 1.01
        inner = Contour(center, a_in, a_in, nodes)
        outer = Contour(center, a_in / nesting, a_in / nesting, nodes)
        return inner, outer
    # ellipses in log z: the singular set (-inf, 0] of the test functions stays outside
    lo, hi = math.log(x_l), math.log(x_r)
    widen = min(0.3, 0.5 * math.log(x_l / floor)) if floor > 0.0 else 0.3
    b_in = LOG_HEIGHT
    a_in = 0.5 * (hi - lo) + widen
    a_out, b_out = a_in / nesting, b_in / nesting
    c = 0.5 * (lo + hi)
    inner = Contour(c, a_in, b_in, nodes, "log_ellipse")
    # keep the outer curve right of the floor by shifting its center
    c_out = c
    if floor > 0.0 and c - a_out <= math.log(floor):
        c_out = math.log(floor) + 0.5 * (c - a_in - math.log(floor)) + a_out
    outer = Contour(c_out, a_out, b_out, nodes, "log_ellipse")
    return inner, outer


def default_contour(params: ModelParams, functions: Sequence[TestFunction] = (),
                    nodes: int = 256) -> Contour:
    """A single contour enclosing the support, fitted to the test functions' analyticity floors."""
    inner, _ = _ellipses(params, functions, nodes, NESTING)
    inner.validate(params, functions)
    return inner


def nested_contours(params: ModelParams, functions: Sequence[TestFunction] = (),
                    nodes: int = 256, nesting: float = NESTING) -> tuple[Contour, Contour]:
    """Inner and outer contours for double integrals, with inner semi-axes at most ``nesting`` x outer."""
    if not (0.0 < nesting < 1.0):
        raise ContourError("nesting factor must lie in (0, 1)")
    inner, outer = _ellipses(params, functions, nodes, nesting)
    check_nested(inner, outer, nesting)
    inner.validate(params, functions)
    outer.validate(params, functions)
    return inner, outer


def check_nested(inner: Contour, outer: Contour, nesting: float = NESTING) -> None:
    if not inner.inside(outer):
        raise ContourError("inner contour is not strictly inside the outer contour")
    if (inner.semi_axis_x > nesting * outer.semi_axis_x * (1.0 + 1e-12)
            or inner.semi_axis_y > nesting * outer.semi_axis_y * (1.0 + 1e-12)):
        raise ContourError(f"inner semi-axis exceeds {nesting} x outer semi-axis")


@dataclass(frozen=True, eq=False)
class ContourData:
    """Companion values on the nodes of a contour."""

    contour: Contour
    z: np.ndarray
    weights: np.ndarray
    A: np.ndarray
    A_prime: np.ndarray
    D: np.ndarray
    residual: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return (self.A - self.z) / (self._y * self.z * self.z)

    def subsample(self, step: int) -> "ContourData":
        """Data on the nested contour with nodes / step nodes."""
        if step == 1:
            return self
        c = self.contour.with_nodes(self.contour.nodes // step)
        out = ContourData(
            c, self.z[::step], self.weights[::step] * step, self.A[::step],
            self.A_prime[::step], self.D[::step], self.residual[::step],
        )
        object.__setattr__(out, "_y", self._y)
        return out


@lru_cache(maxsize=64)
def contour_data(contour: Contour, params: ModelParams,
                 config: SolverConfig | None = None) -> ContourData:
    """Solve the fixed point at every node; cached per (contour, params, config).

    The upper half of the ellipse is solved in one vectorised continuation
    pass and the lower half follows from conjugate symmetry.
    """
    cfg = config or SolverConfig()
    measure, _ = _effective(params, cfg)
    z = contour.points()
    n = contour.nodes
    half = n // 2
    upper = z[: half + 1]
    upper = upper.real + 1j * np.abs(upper.imag)
    A_up, res_up, _, ok = solve_upper(upper, params.y, measure, cfg)
    if not ok.all():
        k = int(np.flatnonzero(~ok)[0])
        raise SolverError("contour solve failed", z=complex(upper[k]), residual=float(res_up[k]), node=k)
    A = np.empty(n, dtype=complex)
    res = np.empty(n)
    A[: half + 1], res[: half + 1] = A_up, res_up
    # node k and node n - k are mirror images
    A[half + 1:] = np.conj(A_up[1:half][::-1])
    res[half + 1:] = res_up[1:half][::-1]
    Ap, D = _a_prime(z, A, params.y, measure)
    out = ContourData(contour, z, contour.weights(), A, Ap, D, res)
    object.__setattr__(out, "_y", params.y)
    return out
