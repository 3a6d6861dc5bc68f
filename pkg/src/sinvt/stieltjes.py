"""
Solver for the Stieltjes transform s(z) of the LSD of S^{-1}T.

The fixed point is solved in the companion variable A(z) = z(1 + y z s(z)),
which satisfies

    1/z = 1/A + y * int dH(t) / (t - A),

and s is recovered as s = (A - z) / (y z^2). The equation in A avoids the
z^2 amplification of the direct equation for s and has a well conditioned
Newton iteration away from the support edges.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .measures import ModelParams, SpectralMeasure, support_bracket

__all__ = [
    "SolverConfig",
    "StieltjesSolution",
    "SolverError",
    "SupportError",
    "NearCriticalError",
    "solve_s",
    "solve_along_contour",
    "solve_nodes",
    "solve_upper",
    "companion_A_prime",
    "inverted_companion",
    "fixed_point_residual",
]

log = logging.getLogger(__name__)

CRITICAL_DENOMINATOR = 1e-10


class SolverError(RuntimeError):
    """Raised when the fixed-point iteration fails to converge."""

    def __init__(self, message: str, z: complex | None = None, residual: float | None = None,
                 node: int | None = None) -> None:
        self.z = z
        self.residual = residual
        self.node = node
        details = []
        if node is not None:
            details.append(f"node={node}")
        if z is not None:
            details.append(f"z={z!r}")
        if residual is not None:
            details.append(f"residual={residual:.3e}")
        super().__init__(message + (f" ({', '.join(details)})" if details else ""))


class SupportError(ValueError):
    """z is real and lies inside the support bracket."""


class NearCriticalError(SolverError):
    """The derivative denominator vanishes: the point is too close to a support edge."""


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-13
    max_iterations: int = 200
    damping: float = 1.0
    epsilon_regularization: float = 0.0

    def __post_init__(self) -> None:
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.epsilon_regularization < 0.0:
            raise ValueError("epsilon_regularization must be non-negative")


@dataclass(frozen=True)
class StieltjesSolution:
    z: complex
    s: complex
    A: complex
    A_prime: complex
    residual: float
    iterations: int
    epsilon: float = 0.0


# --------------------------------------------------------------------------
# vectorised kernels; t, w are the atoms of H, A and z broadcast together


def _integrals(A: np.ndarray, t: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    inv = 1.0 / (t - A[..., None])
    return (w * inv).sum(-1), (w * inv * inv).sum(-1)


def _g(A, z, y, t, w):
    i1, _ = _integrals(A, t, w)
    return A - z - y * z * A * i1


def _s_from_A(A, z, y):
    return (A - z) / (y * z * z)


def fixed_point_residual(z, s, y: float, t: np.ndarray, w: np.ndarray):
    """|z s + 1 - int t dH(t) / (-z - y z^2 s + t)|, vectorised."""
    z = np.asarray(z, dtype=complex)
    s = np.asarray(s, dtype=complex)
    den = t - (z + y * z * z * s)[..., None]
    return np.abs(z * s + 1.0 - (w * t / den).sum(-1))


def _residual(A, z, y, t, w):
    return fixed_point_residual(z, _s_from_A(A, z, y), y, t, w)


def _newton(z, A0, y, t, w, cfg: SolverConfig):
    """Damped Newton on G(A) = A - z - y z A int dH/(t-A).

    Returns (A, residual, iterations, converged). A step is accepted only if
    it does not increase |G|; otherwise the damping is halved.
    """
    z = np.asarray(z, dtype=complex)
    A = np.array(A0, dtype=complex, copy=True)
    iters = np.zeros(A.shape, dtype=int)
    res = _residual(A, z, y, t, w)
    done = res <= cfg.tolerance
    stalled = np.zeros(A.shape, dtype=bool)
    for _ in range(cfg.max_iterations):
        active = ~(done | stalled)
        if not active.any():
            break
        i1, i2 = _integrals(A, t, w)
        g = A - z - y * z * A * i1
        gp = 1.0 - y * z * i1 - y * z * A * i2
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(active, g / gp, 0.0)
        step = np.where(np.isfinite(step), step, 0.0)
        lam = np.full(A.shape, cfg.damping)
        trial = A - lam * step
        with np.errstate(divide="ignore", invalid="ignore"):
            g_trial = _g(trial, z, y, t, w)
        bad = active & ~(np.abs(g_trial) <= np.abs(g))
        for _ in range(40):
            if not bad.any():
                break
            lam = np.where(bad, lam * 0.5, lam)
            trial = np.where(bad, A - lam * step, trial)
            with np.errstate(divide="ignore", invalid="ignore"):
                g_trial = np.where(bad, _g(trial, z, y, t, w), g_trial)
            bad = bad & ~(np.abs(g_trial) <= np.abs(g))
        tiny = np.abs(lam * step) <= 4.0 * np.finfo(float).eps * np.maximum(np.abs(A), 1e-300)
        A = np.where(active & ~bad, trial, A)
        iters = iters + active
        res = np.where(active, _residual(A, z, y, t, w), res)
        done = res <= cfg.tolerance
        stalled = stalled | (active & ~done & (bad | tiny))
    return A, res, iters, done


def _fixed_point(z, y, t, w, m0, iterations=5000, damping=0.5, tol=1e-14):
    """Damped iteration on m~ = int dH / (t/z - 1/(1 - y m~)); maps C+ to C+ when Im z > 0.

    Returns A = z / (1 - y m~).
    """
    z = np.asarray(z, dtype=complex)
    m = np.array(m0, dtype=complex, copy=True)
    for _ in range(iterations):
        new = (w / (t / z[..., None] - (1.0 / (1.0 - y * m))[..., None])).sum(-1)
        new = (1.0 - damping) * m + damping * new
        delta = np.abs(new - m)
        m = new
        if np.all(delta <= tol * np.maximum(np.abs(m), 1.0)):
            break
    return z / (1.0 - y * m)


def _herglotz_ok(A, z, y):
    """Im s >= 0 where Im z > 0, allowing rounding noise."""
    s = _s_from_A(A, z, y)
    slack = 64.0 * np.finfo(float).eps * np.abs(s)
    return np.where(z.imag > 0.0, s.imag >= -slack, True)


def _asymptote(z, y, m1):
    # A = (1-y) z - y m1/(1-y) + O(1/z), where m1 = int t dH
    return (1.0 - y) * z - y * m1 / (1.0 - y)


def _scale(measure: SpectralMeasure, y: float) -> float:
    return max(measure.t_max / (1.0 - math.sqrt(y)) ** 2, 1e-300)


def solve_upper(z, y: float, measure: SpectralMeasure, cfg: SolverConfig, A0=None):
    """Vectorised solve for Im z >= 0.

    Points with a warm start are tried with Newton first. The rest (and any
    warm start that fails or lands on the wrong branch) are continued down
    a geometric ladder of imaginary parts from far above the support, where
    the large-|z| asymptote is an accurate initial guess.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag < 0.0):
        raise ValueError("solve_upper needs Im z >= 0")
    t, w = measure.t, measure.w
    A = np.empty(z.shape, dtype=complex)
    res = np.full(z.shape, np.inf)
    iters = np.zeros(z.shape, dtype=int)
    ok = np.zeros(z.shape, dtype=bool)

    if A0 is not None:
        A0 = np.broadcast_to(np.asarray(A0, dtype=complex), z.shape)
        a, r, it, conv = _newton(z, A0, y, t, w, cfg)
        conv = conv & _herglotz_ok(a, z, y) & np.isfinite(a)
        A[conv], res[conv], iters[conv], ok[conv] = a[conv], r[conv], it[conv], True

    todo = ~ok
    if todo.any():
        a, r, it, conv = _ladder(z[todo], y, measure, cfg)
        A[todo], res[todo], iters[todo], ok[todo] = a, r, it, conv

    real = (z.imag == 0.0) & ok
    if real.any():
        # the root at real z off the support is real; strip rounding noise and polish
        a, r, it, conv = _newton(z[real], A[real].real.astype(complex), y, t, w, cfg)
        a = np.where(conv, a.real, A[real])
        A[real], res[real], iters[real] = a, np.where(conv, r, res[real]), iters[real] + it
        ok[real] = conv | (res[real] <= cfg.tolerance)
    return A, res, iters, ok


def _ladder(z, y, measure, cfg):
    t, w = measure.t, measure.w
    scale = _scale(measure, y)
    top = 10.0 * max(scale, 1.0, float(np.max(np.abs(z.real))))
    # real targets stop the ladder a little above the axis, then jump
    target = np.where(z.imag > 0.0, np.minimum(z.imag, top), 1e-5 * scale)
    n_levels = int(math.ceil(math.log10(top / float(np.min(target))))) + 1
    A = _asymptote(z.real + 1j * top, y, measure.moment(1))
    iters = np.zeros(z.shape, dtype=int)
    for j in range(n_levels + 1):
        zk = z.real + 1j * np.maximum(top * 0.1**j, target)
        A, res, it, conv = _newton(zk, A, y, t, w, cfg)
        iters += it
        bad = ~(conv & _herglotz_ok(A, zk, y) & np.isfinite(A))
        if bad.any():
            A_fp = _fixed_point(zk[bad], y, t, w, np.full(int(bad.sum()), 1j))
            a2, _, it2, _ = _newton(zk[bad], A_fp, y, t, w, cfg)
            A[bad] = a2
            iters[bad] += it2
    zk = z
    A, res, it, conv = _newton(zk, A, y, t, w, cfg)
    iters += it
    conv = conv & _herglotz_ok(A, zk, y) & np.isfinite(A)
    return A, res, iters, conv


def _critical_denominator(A, y, measure: SpectralMeasure):
    t, w = measure.t, measure.w
    d = t - np.asarray(A)[..., None]
    return 1.0 - y * (w * np.asarray(A)[..., None] ** 2 / (d * d)).sum(-1)


def _a_prime(z, A, y, measure):
    D = _critical_denominator(A, y, measure)
    with np.errstate(divide="ignore", invalid="ignore"):
        return A * A / (z * z * D), D


def _effective(params: ModelParams, cfg: SolverConfig) -> tuple[SpectralMeasure, tuple[float, float]]:
    measure = params.measure.shifted(cfg.epsilon_regularization)
    if measure is params.measure:
        return measure, support_bracket(params)
    shifted = ModelParams(params.y, measure, params.moments, params.max_y)
    return measure, support_bracket(shifted)


def _check_point(z: complex, bracket: tuple[float, float]) -> None:
    if z.imag == 0.0 and bracket[0] <= z.real <= bracket[1]:
        raise SupportError(
            f"z={z.real!r} is real and inside the support bracket [{bracket[0]:.6g}, {bracket[1]:.6g}]"
        )
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValueError("z must be finite")
    if z == 0:
        raise SupportError("z = 0 is not a valid evaluation point")


def _solve_point(z: complex, y, measure, cfg, A_warm=None):
    flip = z.imag < 0.0
    zz = z.conjugate() if flip else z
    warm = None if A_warm is None else (complex(A_warm).conjugate() if flip else complex(A_warm))
    A, res, it, ok = solve_upper(np.array([zz]), y, measure, cfg, None if warm is None else np.array([warm]))
    if not ok[0]:
        raise SolverError("fixed-point iteration did not converge", z=z, residual=float(res[0]))
    a = complex(A[0])
    return (a.conjugate() if flip else a), float(res[0]), int(it[0])


def _solution(z, A, res, it, y, measure, eps) -> StieltjesSolution:
    ap, _ = _a_prime(np.asarray(z), np.asarray(A), y, measure)
    s = complex(_s_from_A(A, z, y))
    return StieltjesSolution(complex(z), s, complex(A), complex(ap), res, it, eps)


def solve_s(z: complex, params: ModelParams, config: SolverConfig | None = None,
            warm_start: complex | None = None) -> StieltjesSolution:
    """Solve the fixed-point equation for s(z) at one point off the support.

    ``warm_start`` is an initial guess for s(z); without one the solution is
    reached by continuation from far above the support.
    """
    cfg = config or SolverConfig()
    z = complex(z)
    measure, bracket = _effective(params, cfg)
    _check_point(z, bracket)
    y = params.y
    A_warm = None if warm_start is None else z + y * z * z * complex(warm_start)
    A, res, it = _solve_point(z, y, measure, cfg, A_warm)
    return _solution(z, A, res, it, y, measure, cfg.epsilon_regularization)


def solve_nodes(z_nodes, params: ModelParams, config: SolverConfig | None = None):
    """Warm-started path following along a sequence of points.

    Returns arrays (A, residual, iterations). Node k is started from the
    solution at node k-1; node 0 is reached by continuation.
    """
    cfg = config or SolverConfig()
    measure, bracket = _effective(params, cfg)
    y = params.y
    z_nodes = np.asarray(z_nodes, dtype=complex)
    A = np.empty(z_nodes.shape, dtype=complex)
    res = np.empty(z_nodes.shape)
    its = np.empty(z_nodes.shape, dtype=int)
    prev = None
    for k, z in enumerate(z_nodes):
        z = complex(z)
        try:
            _check_point(z, bracket)
            A[k], res[k], its[k] = _solve_point(z, y, measure, cfg, prev)
        except SolverError as exc:
            raise SolverError("contour solve failed", z=z, residual=exc.residual, node=k) from exc
        except SupportError as exc:
            raise SupportError(f"node {k}: {exc}") from exc
        prev = A[k]
    return A, res, its


def solve_along_contour(contour, params: ModelParams,
                        config: SolverConfig | None = None) -> list[StieltjesSolution]:
    cfg = config or SolverConfig()
    measure, _ = _effective(params, cfg)
    z = contour.points()
    A, res, its = solve_nodes(z, params, cfg)
    return [
        _solution(zk, Ak, float(rk), int(ik), params.y, measure, cfg.epsilon_regularization)
        for zk, Ak, rk, ik in zip(z, A, res, its)
    ]


def companion_A_prime(sol: StieltjesSolution, params: ModelParams) -> complex:
    """dA/dz from the analytic identity A' = A^2 / (z^2 (1 - y int A^2 dH/(t-A)^2))."""
    measure = params.measure.shifted(sol.epsilon)
    D = complex(_critical_denominator(np.asarray(sol.A), params.y, measure))
    if abs(D) < CRITICAL_DENOMINATOR:
        raise NearCriticalError(
            "derivative denominator vanishes; the point is too close to a support edge",
            z=sol.z, residual=abs(D),
        )
    return sol.A * sol.A / (sol.z * sol.z * D)


def inverted_companion(z: complex, sol: StieltjesSolution) -> complex:
    """Companion Stieltjes transform of X T^{-1} X*/n at 1/z, i.e. -A(z)."""
    return -sol.A
