"""
Self-check suite run by ``sinvt verify``: analytic identities and oracle
agreements that must hold on any correct build. Each check is cheap and
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .clt import clt_cov_resolvent_kernel, clt_mean_logderivative, clt_vector
from .contour import contour_data, default_contour, nested_contours
from .measures import ModelParams, MomentModel, SpectralMeasure, TestFunction
from .oracles import inverse_mp_stieltjes, reference_clt
from .stieltjes import SolverConfig, _effective, solve_upper

__all__ = ["CheckResult", "CHECKS", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    anchor: str
    passed: bool
    value: float
    threshold: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (limit {self.threshold:.1e}) [{self.anchor}]"


_X = TestFunction.polynomial([0.0, 1.0])
_X2 = TestFunction.polynomial([0.0, 0.0, 1.0])
_CASES = (
    ModelParams(0.25, SpectralMeasure((1.0,), (1.0,))),
    ModelParams(0.5, SpectralMeasure((1.0, 2.0), (0.5, 0.5))),
    ModelParams(0.8, SpectralMeasure((0.5, 1.0, 3.0), (0.2, 0.5, 0.3))),
)


def _rel(a, b) -> float:
    """Largest |a - b| / max(1, |a|), entrywise."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


def _herglotz() -> float:
    rng = np.random.default_rng(0)
    z = rng.uniform(-5.0, 20.0, 1000) + 1j * rng.uniform(1e-3, 10.0, 1000)
    worst = np.inf
    for params in _CASES:
        measure, _ = _effective(params, SolverConfig())
        A, _, _, ok = solve_upper(z, params.y, measure, SolverConfig())
        s = (A - z) / (params.y * z * z)
        worst = min(worst, float(np.min(np.where(ok, s.imag, -np.inf))))
    return worst


def _closed_form() -> float:
    params = _CASES[0]
    rng = np.random.default_rng(1)
    z = rng.uniform(-3.0, 6.0, 100) + 1j * rng.uniform(0.05, 3.0, 100)
    measure, _ = _effective(params, SolverConfig())
    A, _, _, _ = solve_upper(z, params.y, measure, SolverConfig())
    s = (A - z) / (params.y * z * z)
    return float(np.max(np.abs(s - inverse_mp_stieltjes(z, params.y))))


def _derivative() -> float:
    worst = 0.0
    for params in _CASES:
        c = default_contour(params, [_X])
        d = contour_data(c, params)
        measure, _ = _effective(params, SolverConfig())
        h = 1e-6 * np.abs(d.z)
        up = d.z + h
        dn = d.z - h
        A_up, _, _, _ = solve_upper(up.real + 1j * np.abs(up.imag), params.y, measure, SolverConfig())
        A_dn, _, _, _ = solve_upper(dn.real + 1j * np.abs(dn.imag), params.y, measure, SolverConfig())
        A_up = np.where(up.imag < 0, np.conj(A_up), A_up)
        A_dn = np.where(dn.imag < 0, np.conj(A_dn), A_dn)
        fd = (A_up - A_dn) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(fd - d.A_prime) / np.abs(d.A_prime))))
    return worst


def _mean_forms() -> float:
    worst = 0.0
    for params in _CASES:
        for f in (_X, _X2):
            a = clt_vector([f], params).mean[0]
            b = clt_mean_logderivative(f, params)
            worst = max(worst, _rel(a, b))
    return worst


def _resolvent_kernel() -> float:
    worst = 0.0
    for params in _CASES:
        a = clt_vector([_X, _X2], params).covariance
        b = clt_cov_resolvent_kernel([_X, _X2], params)
        worst = max(worst, _rel(a, b))
    return worst


def _reference() -> float:
    worst = 0.0
    for params in _CASES:
        params = replace(params, moments=MomentModel("real", 0.0))
        ours = clt_vector([_X, _X2], params)
        ref = reference_clt([_X, _X2], params, nodes=1024)
        worst = max(worst, _rel(ours.mean, ref.mean), _rel(ours.covariance, 2.0 * ref.covariance))
    return worst


def _kappa_linearity() -> float:
    params = _CASES[1]
    real = clt_vector([_X, _X2], replace(params, moments=MomentModel("real")))
    cplx = clt_vector([_X, _X2], replace(params, moments=MomentModel("complex")))
    return max(_rel(real.covariance, 2.0 * cplx.covariance), float(np.max(np.abs(cplx.mean))))


def _nesting() -> float:
    params = _CASES[2]
    inner, outer = nested_contours(params, [_X])
    return 0.0 if inner.inside(outer) else 1.0


CHECKS: tuple[tuple[str, str, Callable[[], float], float, str], ...] = (
    ("herglotz", "Im s > 0 on the upper half-plane", _herglotz, 0.0, "min"),
    ("closed_form", "Marchenko-Pastur closed form for T = I", _closed_form, 1e-10, "max"),
    ("derivative_identity", "analytic dA/dz vs central differences", _derivative, 1e-6, "max"),
    ("mean_forms", "mean integrand vs log-derivative form", _mean_forms, 1e-8, "max"),
    ("covariance_kernels", "companion kernel vs resolvent kernel", _resolvent_kernel, 1e-7, "max"),
    ("reference_clt", "CLT in the inverted (w = 1/z) picture", _reference, 1e-7, "max"),
    ("kappa_linearity", "covariance linear in kappa, zero complex mean", _kappa_linearity, 1e-9, "max"),
    ("contour_nesting", "inner contour strictly inside outer", _nesting, 0.5, "max"),
)


def run_checks() -> list[CheckResult]:
    out = []
    for name, anchor, fn, limit, kind in CHECKS:
        try:
            value = float(fn())
            ok = value > limit if kind == "min" else value < limit
        except Exception:  # a crash is a failure, not an abort
            value, ok = float("nan"), False
        out.append(CheckResult(name, anchor, bool(ok), value, limit))
    return out
