"""
Acceptance suite: twelve end-to-end criteria at their stated tolerances.

Each test records a single PASS/FAIL line which the terminal summary
repeats at the end of the run.
"""

from __future__ import annotations

import math
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy import linalg

from sinvt import cli
from sinvt.clt import (
    closed_form_kernels,
    clt_cov_resolvent_kernel,
    clt_mean_logderivative,
    clt_vector,
)
from sinvt.contour import contour_data, default_contour, nested_contours
from sinvt.ensemble import (
    EntryDistribution,
    McConfig,
    product_eigenvalues,
    run_mc,
    sample_cholesky,
    sample_covariance,
)
from sinvt.lsd import density, lsd_functional, numeric_support
from sinvt.measures import ModelParams, MomentModel, SpectralMeasure, TestFunction, measure_from_values
from sinvt.oracles import inverse_mp_density, inverse_mp_edges, inverse_mp_stieltjes, reference_clt
from sinvt.stieltjes import SolverConfig, _effective, solve_s, solve_upper

X = TestFunction.polynomial([0.0, 1.0])
X2 = TestFunction.polynomial([0.0, 0.0, 1.0])
LOG = TestFunction.log()
IDENTITY = SpectralMeasure((1.0,), (1.0,))
TWO = SpectralMeasure((1.0, 2.0), (0.5, 0.5))
YS = (0.1, 0.5, 0.9)


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _measures() -> list[SpectralMeasure]:
    rng = np.random.default_rng(2024)
    out = []
    for k in (1, 2, 3, 5, 10):
        t = np.sort(rng.choice(np.arange(1, 200), size=k, replace=False) / 20.0)
        w = rng.dirichlet(np.ones(k))
        w[-1] = 1.0 - w[:-1].sum()
        out.append(SpectralMeasure(tuple(t), tuple(w)))
    return out


def test_criterion_01_fixed_point_fidelity(criterion):
    contour_data.cache_clear()
    start = time.perf_counter()
    worst_res, herglotz_ok, nodes = 0.0, True, 0
    for measure in _measures():
        for y in YS:
            params = ModelParams(y, measure)
            for c in nested_contours(params, [X], nodes=256):
                d = contour_data(c, params)
                worst_res = max(worst_res, float(d.residual.max()))
                off = d.z.imag != 0.0
                herglotz_ok &= bool(np.all(np.sign(d.s.imag[off]) == np.sign(d.z.imag[off])))
                nodes += d.z.size
    elapsed = time.perf_counter() - start
    passed = worst_res < 1e-12 and herglotz_ok and elapsed < 5.0
    criterion(1, "fixed-point fidelity", passed,
              f"{nodes} nodes, max residual {worst_res:.2e}, Herglotz {herglotz_ok}, {elapsed:.2f} s")


def test_criterion_02_closed_form_oracle(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    for y in YS:
        a, b = inverse_mp_edges(y)
        z = rng.uniform(-0.5 * b, 1.5 * b, 100) + 1j * rng.uniform(0.01, 0.5 * b, 100)
        measure, _ = _effective(ModelParams(y, IDENTITY), SolverConfig())
        A, _, _, _ = solve_upper(z, y, measure, SolverConfig())
        s = (A - z) / (y * z * z)
        worst = max(worst, float(np.max(np.abs(s - inverse_mp_stieltjes(z, y)))))
    criterion(2, "closed-form oracle for T = I", worst < 1e-10, f"sup |s - s_oracle| = {worst:.2e}")


def test_criterion_03_density(criterion):
    details, passed = [], True
    for y in YS:
        start = time.perf_counter()
        params = ModelParams(y, IDENTITY)
        curve = density(params)
        (lo, hi), = numeric_support(params)
        elapsed = time.perf_counter() - start
        a, b = inverse_mp_edges(y)
        mass_err = abs(curve.mass() - 1.0)
        edge_err = max(abs(lo - a), abs(hi - b))
        pw = float(np.max(np.abs(curve.values - inverse_mp_density(curve.grid, y))))
        passed &= mass_err < 1e-4 and edge_err < 1e-2 and pw < 2e-3 and elapsed < 30.0
        details.append(f"y={y}: mass {mass_err:.1e}, edges {edge_err:.1e}, pointwise {pw:.1e}, {elapsed:.1f} s")
    for measure in _measures():
        mass_err = abs(density(ModelParams(0.5, measure)).mass() - 1.0)
        passed &= mass_err < 1e-4
    details.append(f"random H mass errors < 1e-4: {passed}")
    criterion(3, "density", passed, "; ".join(details))


def _trace_replicates(p: int, n: int, t: np.ndarray, reps: int, seed: int) -> np.ndarray:
    dist = EntryDistribution("complex_gaussian")
    rhs = np.diag(np.sqrt(t)).astype(complex)
    out = np.empty(reps)
    for r in range(reps):
        L = sample_cholesky(p, n, dist, np.random.default_rng([seed, r]))
        C = linalg.solve_triangular(L, rhs, lower=True, check_finite=False)
        out[r] = np.sum(np.abs(C) ** 2) / p
    return out


def test_criterion_04_first_moment(criterion):
    rng = np.random.default_rng(44)
    p, reps = 800, 50
    details, passed = [], True
    for i, y in enumerate((0.1, 0.5, 0.9, 0.1, 0.5)):
        k = int(rng.integers(1, 11))
        counts = rng.multinomial(p - k, np.ones(k) / k) + 1
        t = np.repeat(rng.uniform(0.2, 5.0, k), counts)
        measure = measure_from_values(t)
        n = int(round(p / y))
        contour_value = lsd_functional(X, ModelParams(y, measure))
        exact = measure.moment(1) / (1.0 - y)
        # complex Gaussian: E tr(S^{-1}T)/p = n/(n-p) int t dH exactly
        mc = _trace_replicates(p, n, t, reps, seed=i)
        target = measure.moment(1) / (1.0 - p / n)
        z = (mc.mean() - target) / (mc.std(ddof=1) / math.sqrt(reps))
        passed &= abs(contour_value - exact) < 1e-6 and abs(z) < 3.0
        details.append(f"k={k} y={y}: |contour-exact| {abs(contour_value - exact):.1e}, MC z {z:+.2f}")
    criterion(4, "first-moment identity", passed, "; ".join(details))


def test_criterion_05_derivative_identity(criterion):
    params = ModelParams(0.6, SpectralMeasure((0.5, 1.0, 3.0), (0.2, 0.5, 0.3)))
    d = contour_data(default_contour(params, nodes=512), params)
    idx = np.arange(500)
    z = d.z[idx]
    h = 1e-6 * np.abs(z)
    fd = np.empty(z.size, dtype=complex)
    for k, (zk, hk) in enumerate(zip(z, h)):
        fd[k] = (solve_s(zk + hk, params).A - solve_s(zk - hk, params).A) / (2 * hk)
    err = float(np.max(np.abs(fd - d.A_prime[idx]) / np.abs(d.A_prime[idx])))
    criterion(5, "derivative identity", err < 1e-6, f"500 points, max relative error {err:.2e}")


CONFIGS = (
    ModelParams(0.25, IDENTITY),
    ModelParams(1 / 3, TWO),
    ModelParams(0.8, SpectralMeasure((0.5, 1.0, 3.0), (0.2, 0.5, 0.3))),
)


def test_criterion_06_mean_forms(criterion):
    worst = 0.0
    for params in CONFIGS:
        for f in (X, X2, LOG):
            a = clt_vector([f], params).mean[0]
            b = clt_mean_logderivative(f, params)
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    criterion(6, "mean-form identity", worst < 1e-8, f"3 configurations, max deviation {worst:.2e}")


def test_criterion_07_covariance_consistency(criterion):
    kern, bs = 0.0, 0.0
    for params in CONFIGS:
        ours = clt_vector([X, X2, LOG], params)
        kern = max(kern, _rel(clt_cov_resolvent_kernel([X, X2, LOG], params), ours.covariance))
        ref = reference_clt([X, X2, LOG], params)
        bs = max(bs, _rel(ref.mean, ours.mean), _rel(2.0 * ref.covariance, ours.covariance))
        rad = replace_moments(params, MomentModel("real", -2.0))
        ours_b = clt_vector([X, X2], rad, kernels=closed_form_kernels(rad))
        ref_b = reference_clt([X, X2], rad)
        bs = max(bs, _rel(ref_b.mean - 2.0 * ref_b.mean_beta, ours_b.mean),
                 _rel(2.0 * ref_b.covariance - 2.0 * ref_b.covariance_beta, ours_b.covariance))
    passed = kern < 1e-7 and bs < 1e-7
    criterion(7, "covariance consistency", passed,
              f"kernel forms {kern:.2e}, inverted-picture oracle {bs:.2e} (relative to max(1, |entry|))")


def replace_moments(params: ModelParams, moments: MomentModel) -> ModelParams:
    return ModelParams(params.y, params.measure, moments, params.max_y)


# --------------------------------------------------------------------------
# Monte Carlo criteria share their runs

P, N = 100, 300
T_TWO = (1.0,) * 50 + (2.0,) * 50


@lru_cache(maxsize=None)
def _mc(kind: str, reps: int, seed: int, t_diag: tuple[float, ...] = T_TWO, n: int = N,
        fs: tuple[TestFunction, ...] = (X, X2)):
    cfg = McConfig(P, n, t_diag, EntryDistribution(kind), fs, reps, master_seed=seed)
    return run_mc(cfg)


def test_criterion_08_mc_means(criterion):
    start = time.perf_counter()
    cplx = _mc("complex_gaussian", 2000, 81)
    real = _mc("real_gaussian", 2000, 82)
    zc = cplx.mean / cplx.mean_se
    zr = real.z_mean
    elapsed = time.perf_counter() - start
    passed = bool(np.all(np.abs(zc) < 3.0) and np.all(np.abs(zr) < 3.0)) and elapsed < 600
    criterion(8, "CLT Monte Carlo means", passed,
              f"complex z vs 0 {np.round(zc, 2).tolist()}, real z vs theory {np.round(zr, 2).tolist()}, "
              f"{elapsed:.0f} s")


def test_criterion_09_mc_covariances(criterion):
    cplx = _mc("complex_gaussian", 2000, 81)
    real = _mc("real_gaussian", 2000, 82)
    zmax = max(float(np.max(np.abs(cplx.z_cov))), float(np.max(np.abs(real.z_cov))))
    big_c = _mc("complex_gaussian", 4000, 91)
    big_r = _mc("real_gaussian", 4000, 92)
    ratio = np.diag(big_r.covariance) / np.diag(big_c.covariance)
    passed = zmax < 4.0 and bool(np.all((ratio >= 1.85) & (ratio <= 2.15)))
    criterion(9, "CLT Monte Carlo covariances", passed,
              f"max jackknife z {zmax:.2f}, real/complex variance ratios {np.round(ratio, 3).tolist()}")


def test_criterion_10_fourth_moment_correction(criterion):
    gauss = _mc("real_gaussian", 2000, 82)
    rad = _mc("rademacher", 2000, 83)
    shift_mean = rad.mean - gauss.mean
    theory_mean = rad.theory.mean - gauss.theory.mean
    z_mean = (shift_mean - theory_mean) / np.hypot(rad.mean_se, gauss.mean_se)
    shift_var = np.diag(rad.covariance - gauss.covariance)
    theory_var = np.diag(rad.theory.covariance - gauss.theory.covariance)
    z_var = (shift_var - theory_var) / np.hypot(np.diag(rad.covariance_se), np.diag(gauss.covariance_se))
    passed = bool(np.all(np.abs(z_mean) < 4.0) and np.all(np.abs(z_var) < 4.0)) and rad.max_abs_z() < 4.0
    criterion(10, "fourth-moment correction", passed,
              f"mean shift z {np.round(z_mean, 2).tolist()}, variance shift z {np.round(z_var, 2).tolist()}, "
              f"theory shifts {np.round(theory_mean, 3).tolist()} / {np.round(theory_var, 2).tolist()}")


def test_criterion_11_singular_population(criterion):
    y = 0.25
    n = int(P / y)
    t_diag = (0.0,) * 30 + (1.0,) * 70
    zeros = []
    for r in range(20):
        S = sample_covariance(P, n, EntryDistribution(), np.random.default_rng([11, r]))
        zeros.append(int(np.count_nonzero(product_eigenvalues(S, t_diag) == 0.0)))
    rep = _mc("real_gaussian", 2000, 111, t_diag, n, (X, X2))
    # Schur complement: the nonzero block is an identity model with a smaller ratio
    singular = ModelParams(y, SpectralMeasure((0.0, 1.0), (0.3, 0.7)))
    reduced = ModelParams(0.7 * y / (1 - 0.3 * y), SpectralMeasure((1 / (1 - 0.3 * y),), (1.0,)))
    a, b = clt_vector([X, X2], singular), clt_vector([X, X2], reduced)
    schur = max(_rel(a.mean, b.mean), _rel(a.covariance, b.covariance))
    with pytest.raises(ValueError):
        clt_vector([LOG], singular)
    passed = all(z == 30 for z in zeros) and bool(np.all(np.abs(rep.z_mean) < 4.0)) and schur < 1e-10
    criterion(11, "singular T", passed,
              f"zero eigenvalues per replicate {sorted(set(zeros))}, mean z {np.round(rep.z_mean, 2).tolist()}, "
              f"Schur reduction {schur:.1e}, log rejected")


def test_criterion_12_determinism(criterion, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(
        '{"model": {"p": 40, "n": 120, "population": [{"t": 1, "w": 0.5}, {"t": 3, "w": 0.5}],'
        ' "distribution": {"kind": "rademacher"}},'
        ' "functions": [{"kind": "polynomial", "coefficients": [0, 1]}, {"kind": "log"}],'
        ' "mc": {"reps": 300, "seed": 12, "write_replicates": true}}',
        encoding="utf-8",
    )
    blobs = []
    for k in (1, 4, 8):
        out = tmp_path / f"w{k}"
        code = cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--threads", str(k)])
        assert code in (0, 4)
        blobs.append(((out / "simulate.json").read_bytes(), (out / "simulate_replicates.csv").read_bytes()))
    passed = blobs[0] == blobs[1] == blobs[2]
    criterion(12, "determinism", passed, "byte-identical reports at 1, 4 and 8 workers" if passed
              else "reports differ across worker counts")
