"""
Mean and covariance of the Gaussian limit of linear spectral statistics of
S^{-1}T, by trapezoid quadrature on elliptic contours.

All integrands are written in the companion variable A(z) = z(1 + y z s(z)):

    mean  = -((kappa-1)/2 pi i) oint f(z) y A^3 int t dH/(t-A)^3 / (z^2 D^2) dz
    cov   = -(kappa/4 pi^2) oint oint f(z1) g(z2) A1' A2' / (A1 - A2)^2 dz1 dz2

with D(z) = 1 - y int A^2 dH/(t-A)^2 and A' = A^2 / (z^2 D). The fourth-moment
corrections for diagonal T with a common excess beta_x are

    mean_b = -(beta_x/2 pi i) oint f(z) y A^3 int t dH/(t-A)^3 / (z^2 D) dz
    cov_b  = -(beta_x y/4 pi^2) int t^2 dH(t) [oint f A'/(t-A)^2 dz1] [oint g A'/(t-A)^2 dz2]

where the covariance term is the mixed derivative of
y int A1 A2 dH/((t-A1)(t-A2)) integrated twice; it factorises over the atoms.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .contour import Contour, ContourData, ContourError, check_nested, contour_data, default_contour, nested_contours
from .measures import ModelParams, TestFunction
from .stieltjes import CRITICAL_DENOMINATOR, NearCriticalError, SolverConfig, _effective, solve_upper

__all__ = [
    "FourthMomentKernels",
    "QuadratureConfig",
    "CltResult",
    "clt_mean",
    "clt_cov",
    "clt_vector",
    "clt_mean_logderivative",
    "clt_cov_resolvent_kernel",
    "closed_form_kernels",
    "MODES",
]

log = logging.getLogger(__name__)

MODES = ("none", "diagonal_T_closed_form", "user_supplied")
IMAG_TOLERANCE = 1e-8
COLLISION_TOLERANCE = 1e-8


@dataclass(frozen=True)
class FourthMomentKernels:
    """Fourth-moment correction kernels.

    ``user_supplied`` kernels must accept numpy arrays and broadcast:
    ``h(z1, z2)`` is evaluated on a grid of node pairs and ``h_M(z)`` on the
    contour nodes.
    """

    mode: str = "none"
    h: Callable[[Any, Any], Any] | None = None
    h_M: Callable[[Any], Any] | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        if self.mode == "user_supplied" and (self.h is None or self.h_M is None):
            raise ValueError("user_supplied kernels need both h and h_M")

    def check(self, params: ModelParams) -> None:
        if self.mode == "diagonal_T_closed_form" and params.measure.zero_mass > 0.0:
            raise ValueError("closed-form fourth-moment kernels need T with positive eigenvalues")


@dataclass(frozen=True)
class QuadratureConfig:
    nodes: int = 256
    max_nodes: int = 4096
    tolerance: float = 1e-7
    nesting: float = 0.8
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        if self.nodes < 4 or self.nodes & (self.nodes - 1):
            raise ValueError("nodes must be a power of two")
        if self.max_nodes < self.nodes:
            raise ValueError("max_nodes must be >= nodes")


@dataclass(frozen=True, eq=False)
class CltResult:
    functions: tuple[TestFunction, ...]
    mean: np.ndarray
    covariance: np.ndarray
    kappa: int
    beta_x: float
    diagnostics: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "functions": [f.to_dict() for f in self.functions],
            "labels": [f.label for f in self.functions],
            "mean": [float(v) for v in self.mean],
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "kappa": int(self.kappa),
            "beta_x": float(self.beta_x),
            "node_counts": list(self.diagnostics.get("node_counts", [])),
            "error_estimates": dict(self.diagnostics.get("error_estimates", {})),
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if k not in ("node_counts", "error_estimates")},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# integrand pieces


def _values(fs: Sequence[TestFunction], z: np.ndarray) -> np.ndarray:
    """Matrix of f_j(z_k), nodes by functions."""
    return np.stack([np.broadcast_to(np.asarray(f(z), dtype=complex), z.shape) for f in fs], axis=1)


def _atoms(params: ModelParams, cfg: SolverConfig):
    measure, _ = _effective(params, cfg)
    return measure.t, measure.w


def _check_critical(d: ContourData) -> None:
    if np.min(np.abs(d.D)) < CRITICAL_DENOMINATOR:
        k = int(np.argmin(np.abs(d.D)))
        raise NearCriticalError("contour passes too close to a support edge", z=complex(d.z[k]),
                                residual=float(abs(d.D[k])), node=k)


def _mean_weights(d: ContourData, params: ModelParams, cfg: SolverConfig, beta_mode: str,
                  kernels: FourthMomentKernels) -> tuple[np.ndarray, np.ndarray]:
    """Node weights for the kappa part and the fourth-moment part of the mean."""
    t, w = _atoms(params, cfg)
    y, A, z, D = params.y, d.A, d.z, d.D
    cube = (w * t / (t - A[:, None]) ** 3).sum(-1)
    base = y * A**3 * cube / (z * z * D)
    kappa_part = base / D * d.weights
    if beta_mode == "diagonal_T_closed_form":
        beta_part = base * d.weights
    elif beta_mode == "user_supplied":
        hm = np.asarray(kernels.h_M(z), dtype=complex)
        beta_part = y * A**3 / (z**3 * z * z * D) * hm * d.weights
    else:
        beta_part = np.zeros_like(base)
    return kappa_part / (-2j * np.pi), beta_part / (-2j * np.pi)


def _collision(d1: ContourData, d2: ContourData) -> float:
    sep = np.inf
    for start in range(0, d1.A.size, 512):
        block = np.abs(d1.A[start:start + 512, None] - d2.A[None, :])
        sep = min(sep, float(block.min()))
    return sep


def _cov_kappa(F1, G2, d1: ContourData, d2: ContourData, subtract_z: bool = False) -> np.ndarray:
    """-(1/4 pi^2) F1^T K G2 with K = A1'A2'/(A1-A2)^2, built in row blocks."""
    left = F1 * (d1.A_prime * d1.weights)[:, None]
    right = G2 * (d2.A_prime * d2.weights)[:, None]
    out = np.zeros((F1.shape[1], G2.shape[1]), dtype=complex)
    for start in range(0, d1.A.size, 512):
        sl = slice(start, start + 512)
        K = 1.0 / (d1.A[sl, None] - d2.A[None, :]) ** 2
        out += left[sl].T @ K @ right
        if subtract_z:
            Kz = 1.0 / (d1.z[sl, None] - d2.z[None, :]) ** 2
            out -= (F1[sl] * d1.weights[sl, None]).T @ Kz @ (G2 * d2.weights[:, None])
    return out / (-4.0 * np.pi**2)


def _cov_beta(F1, G2, d1, d2, params, cfg, beta_mode, kernels, fs1, fs2) -> np.ndarray:
    y = params.y
    if beta_mode == "diagonal_T_closed_form":
        t, w = _atoms(params, cfg)
        u = (F1 * (d1.A_prime * d1.weights)[:, None]).T @ (1.0 / (t - d1.A[:, None]) ** 2)
        v = (G2 * (d2.A_prime * d2.weights)[:, None]).T @ (1.0 / (t - d2.A[:, None]) ** 2)
        return -y * (u * (w * t * t)) @ v.T / (4.0 * np.pi**2)
    if beta_mode == "user_supplied":
        # the mixed derivative moves onto f and g after integrating by parts twice
        dF = _values([f.derivative() for f in fs1], d1.z) * (d1.A / d1.z * d1.weights)[:, None]
        dG = _values([g.derivative() for g in fs2], d2.z) * (d2.A / d2.z * d2.weights)[:, None]
        out = np.zeros((F1.shape[1], G2.shape[1]), dtype=complex)
        for start in range(0, d1.z.size, 512):
            sl = slice(start, start + 512)
            H = np.asarray(kernels.h(d1.z[sl, None], d2.z[None, :]), dtype=complex)
            out += dF[sl].T @ H @ dG
        return -y * out / (4.0 * np.pi**2)
    return np.zeros((F1.shape[1], G2.shape[1]), dtype=complex)


def _beta_mode(params: ModelParams, kernels: FourthMomentKernels | None) -> str:
    k = kernels or FourthMomentKernels()
    k.check(params)
    return k.mode


def _beta_coefficient(params: ModelParams, mode: str) -> float:
    # user-supplied kernels already carry the excess
    return params.moments.beta_x if mode == "diagonal_T_closed_form" else 1.0


def _real(values: np.ndarray, what: str) -> np.ndarray:
    scale = np.maximum(1.0, np.abs(values.real))
    worst = float(np.max(np.abs(values.imag) / scale)) if values.size else 0.0
    if worst >= IMAG_TOLERANCE:
        raise ContourError(f"{what} has a relative imaginary residue {worst:.3e}; check the contour")
    return values.real


# --------------------------------------------------------------------------
# public API


def _adaptive(compute, contours: Sequence[Contour], params, qcfg: QuadratureConfig):
    """Evaluate ``compute(datas)`` at N and 2N nodes until the change is below tolerance."""
    n = contours[0].nodes
    while True:
        datas = [contour_data(c.with_nodes(2 * n), params, qcfg.solver) for c in contours]
        for d in datas:
            _check_critical(d)
        coarse = compute([d.subsample(2) for d in datas])
        fine = compute(datas)
        # relative to max(1, |value|): large entries are limited by rounding, not quadrature
        err = max(
            float(np.max(np.abs(fa - fc) / np.maximum(1.0, np.abs(fa)))) if np.size(fa) else 0.0
            for fa, fc in zip(fine, coarse)
        )
        if err <= qcfg.tolerance or 2 * n >= qcfg.max_nodes:
            if err > qcfg.tolerance:
                log.warning("quadrature error estimate %.3e above tolerance at %d nodes", err, 2 * n)
            return fine, err, 2 * n, datas
        n *= 2


def clt_vector(fs: Sequence[TestFunction], params: ModelParams,
               contours: tuple[Contour, Contour] | None = None,
               kernels: FourthMomentKernels | None = None,
               quadrature: QuadratureConfig | None = None) -> CltResult:
    """Mean vector and covariance matrix of the limiting LSS vector (X_{f_1}, ..., X_{f_k})."""
    fs = tuple(fs)
    if not fs:
        raise ValueError("need at least one test function")
    qcfg = quadrature or QuadratureConfig()
    mode = _beta_mode(params, kernels)
    kernels = kernels or FourthMomentKernels()
    if contours is None:
        contours = nested_contours(params, fs, qcfg.nodes, qcfg.nesting)
    else:
        check_nested(*contours, nesting=qcfg.nesting)
        for c in contours:
            c.validate(params, fs)
    kappa, beta = params.moments.kappa, _beta_coefficient(params, mode)
    cfg = qcfg.solver

    def compute(datas):
        d1, d2 = datas
        F1, F2 = _values(fs, d1.z), _values(fs, d2.z)
        wk, wb = _mean_weights(d1, params, cfg, mode, kernels)
        mean = (kappa - 1) * (F1.T @ wk) + beta * (F1.T @ wb)
        cov = kappa * _cov_kappa(F1, F2, d1, d2)
        if mode != "none":
            cov = cov + beta * _cov_beta(F1, F2, d1, d2, params, cfg, mode, kernels, fs, fs)
        return mean, cov

    (mean, cov), err, nodes, datas = _adaptive(compute, contours, params, qcfg)
    sep = _collision(*datas)
    if sep <= COLLISION_TOLERANCE:
        raise ContourError("contours too close in the companion plane; increase the outer radius")
    mean = _real(mean, "mean")
    cov = _real(cov, "covariance")
    asym = float(np.max(np.abs(cov - cov.T) / np.maximum(1.0, np.abs(cov)))) if cov.size else 0.0
    cov = 0.5 * (cov + cov.T)
    # exact zeros for functions that are constant by construction
    for j, f in enumerate(fs):
        if f.constant_value is not None:
            mean[j] = 0.0
            cov[j, :] = 0.0
            cov[:, j] = 0.0
    eig_min = float(np.linalg.eigvalsh(cov).min())
    psd_floor = -1e-8 * max(1.0, float(np.max(np.abs(np.diag(cov)))))
    if eig_min < psd_floor:
        raise ArithmeticError(
            f"covariance has minimum eigenvalue {eig_min:.3e}; the quadrature is misconfigured"
        )
    diagnostics = {
        "node_counts": [nodes, nodes],
        "error_estimates": {"node_doubling": err, "asymmetry": asym},
        "min_companion_separation": sep,
        "min_eigenvalue": eig_min,
        "kernel_mode": mode,
        "contours": [
            {"center": c.center, "semi_axis_x": c.semi_axis_x, "semi_axis_y": c.semi_axis_y}
            for c in contours
        ],
        "max_residual": max(float(d.residual.max()) for d in datas),
    }
    return CltResult(fs, mean, cov, kappa, params.moments.beta_x, diagnostics)


def clt_mean(f: TestFunction, params: ModelParams, contour: Contour | None = None,
             kernels: FourthMomentKernels | None = None,
             quadrature: QuadratureConfig | None = None) -> float:
    """E X_f, the mean of the Gaussian limit of X_n(f)."""
    qcfg = quadrature or QuadratureConfig()
    mode = _beta_mode(params, kernels)
    kernels = kernels or FourthMomentKernels()
    if f.constant_value is not None:
        return 0.0
    if contour is None:
        contour = default_contour(params, [f], qcfg.nodes)
    else:
        contour.validate(params, [f])
    kappa, beta = params.moments.kappa, _beta_coefficient(params, mode)

    def compute(datas):
        (d,) = datas
        F = _values([f], d.z)
        wk, wb = _mean_weights(d, params, qcfg.solver, mode, kernels)
        return ((kappa - 1) * (F.T @ wk) + beta * (F.T @ wb),)

    (mean,), _, _, _ = _adaptive(compute, [contour], params, qcfg)
    return float(_real(mean, "mean")[0])


def clt_cov(f: TestFunction, g: TestFunction, params: ModelParams,
            contour_pair: tuple[Contour, Contour] | None = None,
            kernels: FourthMomentKernels | None = None,
            quadrature: QuadratureConfig | None = None) -> float:
    """Cov(X_f, X_g), with f integrated on the inner and g on the outer contour."""
    qcfg = quadrature or QuadratureConfig()
    mode = _beta_mode(params, kernels)
    kernels = kernels or FourthMomentKernels()
    if f.constant_value is not None or g.constant_value is not None:
        return 0.0
    if contour_pair is None:
        contour_pair = nested_contours(params, [f, g], qcfg.nodes, qcfg.nesting)
    else:
        check_nested(*contour_pair, nesting=qcfg.nesting)
        for c in contour_pair:
            c.validate(params, [f, g])
    kappa, beta = params.moments.kappa, _beta_coefficient(params, mode)

    def compute(datas):
        d1, d2 = datas
        F1, G2 = _values([f], d1.z), _values([g], d2.z)
        cov = kappa * _cov_kappa(F1, G2, d1, d2)
        if mode != "none":
            cov = cov + beta * _cov_beta(F1, G2, d1, d2, params, qcfg.solver, mode, kernels, [f], [g])
        return (cov,)

    (cov,), _, _, datas = _adaptive(compute, contour_pair, params, qcfg)
    if _collision(*datas) <= COLLISION_TOLERANCE:
        raise ContourError("contours too close in the companion plane; increase the outer radius")
    return float(_real(cov, "covariance")[0, 0])


# --------------------------------------------------------------------------
# alternative code paths used as cross-checks


def _fft_derivative(values: np.ndarray) -> np.ndarray:
    """d/dtheta of a periodic sample on equispaced nodes, by FFT."""
    n = values.size
    k = np.fft.fftfreq(n, d=1.0 / n)
    k[n // 2] = 0.0
    return np.fft.ifft(1j * k * np.fft.fft(values))


def clt_mean_logderivative(f: TestFunction, params: ModelParams, contour: Contour | None = None,
                           nodes: int = 1024, solver: SolverConfig | None = None) -> float:
    """Gaussian part of E X_f from the log-derivative form of the integrand.

    The mean integrand equals -(1/2) d log D(z)/dz. Here d D/dz is obtained by
    spectral differentiation of D along the contour, so no derivative of A
    enters; this makes it an independent check of the closed-form integrand.
    """
    if f.constant_value is not None:
        return 0.0
    contour = (contour or default_contour(params, [f])).with_nodes(nodes)
    d = contour_data(contour, params, solver or SolverConfig())
    _check_critical(d)
    dlogD = _fft_derivative(d.D) / (d.D * contour.tangent())
    kappa = params.moments.kappa
    val = -(kappa - 1) / (2j * np.pi) * np.sum(f(d.z) * (-0.5) * dlogD * d.weights)
    return float(_real(np.array([val]), "mean")[0])


def clt_cov_resolvent_kernel(fs: Sequence[TestFunction], params: ModelParams,
                             contours: tuple[Contour, Contour] | None = None,
                             nodes: int = 1024, solver: SolverConfig | None = None) -> np.ndarray:
    """Gaussian-part covariance using the kernel A1'A2'/(A1-A2)^2 - 1/(z1-z2)^2.

    The subtracted term integrates to zero on nested contours; computing it
    explicitly checks that claim rather than assuming it.
    """
    fs = tuple(fs)
    if contours is None:
        contours = nested_contours(params, fs)
    d1, d2 = (contour_data(c.with_nodes(nodes), params, solver or SolverConfig()) for c in contours)
    F1, F2 = _values(fs, d1.z), _values(fs, d2.z)
    cov = params.moments.kappa * _cov_kappa(F1, F2, d1, d2, subtract_z=True)
    cov = _real(cov, "covariance")
    return 0.5 * (cov + cov.T)


# --------------------------------------------------------------------------
# closed-form kernels for diagonal T


def closed_form_kernels(params: ModelParams, solver: SolverConfig | None = None) -> FourthMomentKernels:
    """Kernels h and h_M for diagonal T with a common fourth-moment excess.

    h_M(z) = beta_x int z^3 t dH/(t - A)^3 and
    h(z1, z2) = beta_x int z1 z2 dH/((t - A1)(t - A2)). Both solve for A(z) on
    demand and cache the solutions keyed by z.
    """
    if params.measure.zero_mass > 0.0:
        raise ValueError("closed-form fourth-moment kernels need T with positive eigenvalues")
    beta = params.moments.beta_x
    cfg = solver or SolverConfig()
    measure, _ = _effective(params, cfg)
    t, w = measure.t, measure.w
    cache: dict[complex, complex] = {}

    def companion(z):
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        missing = np.array([zk for zk in dict.fromkeys(flat.tolist()) if zk not in cache], dtype=complex)
        if missing.size:
            flip = missing.imag < 0.0
            up = np.where(flip, np.conj(missing), missing)
            A, res, _, ok = solve_upper(up, params.y, measure, cfg)
            if not ok.all():
                raise ArithmeticError("kernel evaluation failed to converge")
            A = np.where(flip, np.conj(A), A)
            cache.update(zip(missing.tolist(), A.tolist()))
        return np.array([cache[zk] for zk in flat.tolist()], dtype=complex).reshape(z.shape)

    def h_M(z):
        z = np.asarray(z, dtype=complex)
        if beta == 0.0:
            return np.zeros_like(z)
        A = companion(z)
        return beta * z**3 * (w * t / (t - A[..., None]) ** 3).sum(-1)

    def h(z1, z2):
        z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex))
        if beta == 0.0:
            return np.zeros(z1.shape, dtype=complex)
        A1, A2 = companion(z1), companion(z2)
        return beta * z1 * z2 * (w / ((t - A1[..., None]) * (t - A2[..., None]))).sum(-1)

    return FourthMomentKernels("diagonal_T_closed_form", h=h, h_M=h_M)
