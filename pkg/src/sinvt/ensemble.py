"""
Monte Carlo engine: sample covariance matrices, eigenvalues of S^{-1}T,
linear spectral statistics, and replicate statistics against the CLT.

Every replicate draws from its own generator, seeded from the master seed
and the replicate index, so results do not depend on scheduling or on the
number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import linalg
from threadpoolctl import threadpool_limits

from .clt import CltResult, FourthMomentKernels, clt_vector, closed_form_kernels
from .lsd import density, lsd_functional
from .measures import ModelParams, MomentModel, TestFunction, measure_from_values

__all__ = [
    "EntryDistribution",
    "ReplicateRejected",
    "McConfig",
    "SimulationReport",
    "sample_covariance",
    "sample_cholesky",
    "product_eigenvalues",
    "lss_fluctuation",
    "lss_centers",
    "replicate_seed",
    "run_mc",
    "default_kernels",
    "jackknife_cov_se",
    "ks_distance",
]

log = logging.getLogger(__name__)

KINDS = ("real_gaussian", "complex_gaussian", "rademacher", "two_point")
MAX_REJECTION_RATE = 0.01
MAX_ATTEMPTS = 8


class ReplicateRejected(ValueError):
    """A replicate cannot be used; ``reason`` is a short machine-readable tag."""

    def __init__(self, reason: str, message: str) -> None:
        self.reason = reason
        super().__init__(message)


@dataclass(frozen=True)
class EntryDistribution:
    """Law of the standardised entries x_ij.

    ``two_point`` takes the value sqrt((1-prob)/prob) with probability ``prob``
    and -sqrt(prob/(1-prob)) otherwise, which fixes mean 0 and variance 1;
    ``prob = 1/2`` is the Rademacher law.
    """

    kind: str = "real_gaussian"
    prob: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown entry distribution {self.kind!r}")
        if self.kind == "two_point":
            if self.prob is None or not (0.0 < self.prob < 1.0):
                raise ValueError("two_point needs prob in (0, 1)")
        elif self.prob is not None:
            raise ValueError(f"{self.kind} takes no prob parameter")

    @property
    def is_complex(self) -> bool:
        return self.kind == "complex_gaussian"

    @property
    def is_gaussian(self) -> bool:
        return self.kind in ("real_gaussian", "complex_gaussian")

    @property
    def values(self) -> tuple[float, float]:
        """The two atoms (a, b) of a two-point law."""
        q = 0.5 if self.kind == "rademacher" else float(self.prob)
        return math.sqrt((1.0 - q) / q), -math.sqrt(q / (1.0 - q))

    @property
    def fourth_moment(self) -> float:
        if self.kind == "real_gaussian":
            return 3.0
        if self.kind == "complex_gaussian":
            return 2.0
        q = 0.5 if self.kind == "rademacher" else float(self.prob)
        a, b = self.values
        return q * a**4 + (1.0 - q) * b**4

    @property
    def moments(self) -> MomentModel:
        kind = "complex" if self.is_complex else "real"
        kappa = 1 if self.is_complex else 2
        return MomentModel(kind, self.fourth_moment - 1.0 - kappa)

    def sample(self, rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
        if self.kind == "real_gaussian":
            return rng.standard_normal(shape)
        if self.kind == "complex_gaussian":
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
        q = 0.5 if self.kind == "rademacher" else float(self.prob)
        a, b = self.values
        return np.where(rng.random(shape) < q, a, b)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.prob is not None:
            out["prob"] = self.prob
        return out


def _check_dims(p: int, n: int) -> None:
    if p < 2 or n < 2:
        raise ValueError("p and n must be at least 2")
    if p >= n:
        raise ValueError(f"p={p} >= n={n}: the dimension ratio must stay below 1")


def sample_covariance(p: int, n: int, dist: EntryDistribution,
                      seed: int | np.random.Generator) -> np.ndarray:
    """S = X X* / n for a p x n matrix X of i.i.d. standardised entries."""
    _check_dims(p, n)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = dist.sample(rng, (p, n))
    S = X @ X.conj().T / n
    return 0.5 * (S + S.conj().T)


def sample_cholesky(p: int, n: int, dist: EntryDistribution,
                    seed: int | np.random.Generator) -> np.ndarray:
    """Lower Cholesky factor of a Gaussian S by the Bartlett decomposition.

    In distribution this equals cholesky(sample_covariance(...)) at a cost of
    O(p^2) random draws instead of O(p n) plus a product.
    """
    _check_dims(p, n)
    if not dist.is_gaussian:
        raise ValueError("the Bartlett decomposition needs Gaussian entries")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dof = n - np.arange(p)
    if dist.is_complex:
        diag = np.sqrt(rng.gamma(dof, 1.0))
        low = (rng.standard_normal((p, p)) + 1j * rng.standard_normal((p, p))) / math.sqrt(2.0)
    else:
        diag = np.sqrt(rng.chisquare(dof))
        low = rng.standard_normal((p, p))
    L = np.tril(low, -1)
    L[np.diag_indices(p)] = diag
    return L / math.sqrt(n)


def product_eigenvalues(S: np.ndarray | None, T_diag: Sequence[float],
                        cholesky: np.ndarray | None = None) -> np.ndarray:
    """Eigenvalues of S^{-1}T in ascending order, without inverting S.

    With S = L L*, the spectrum equals that of C* C for C = L^{-1} T^{1/2}
    restricted to the columns where T is nonzero; the remaining eigenvalues
    are exactly zero.
    """
    t = np.asarray(T_diag, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("T must be non-negative")
    if cholesky is None:
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise ReplicateRejected("singular_S", "S is not numerically positive definite") from exc
    else:
        L = cholesky
    p = L.shape[0]
    if t.size != p:
        raise ValueError("T diagonal must match the dimension of S")
    nz = np.flatnonzero(t > 0.0)
    rhs = np.zeros((p, nz.size), dtype=L.dtype)
    rhs[nz, np.arange(nz.size)] = np.sqrt(t[nz])
    C = linalg.solve_triangular(L, rhs, lower=True, check_finite=False)
    G = C.conj().T @ C
    eig = np.linalg.eigvalsh(0.5 * (G + G.conj().T))
    return np.concatenate([np.zeros(p - nz.size), eig])


def lss_centers(fs: Sequence[TestFunction], params_n: ModelParams) -> np.ndarray:
    """F^{y_n, H_n}(f) for each f."""
    out = np.empty(len(fs))
    for j, f in enumerate(fs):
        c = f.constant_value
        out[j] = c if c is not None else lsd_functional(f, params_n)
    return out


def lss_fluctuation(eigs: np.ndarray, fs: Sequence[TestFunction], params_n: ModelParams,
                    centers: np.ndarray | None = None) -> np.ndarray:
    """X_n(f) = sum_i f(lambda_i) - p F^{y_n, H_n}(f) for each f."""
    eigs = np.asarray(eigs, dtype=float)
    p = eigs.size
    if centers is None:
        centers = lss_centers(fs, params_n)
    out = np.empty(len(fs))
    for j, f in enumerate(fs):
        if f.constant_value is not None:
            out[j] = 0.0
            continue
        if math.isfinite(f.analyticity_floor) and eigs.min() <= f.analyticity_floor:
            raise ReplicateRejected(
                "outside_domain",
                f"eigenvalue {eigs.min():.3e} is outside the analyticity domain of {f.label}",
            )
        out[j] = math.fsum(np.asarray(f(eigs), dtype=float)) - p * centers[j]
    return out


def replicate_seed(master_seed: int, replicate: int, attempt: int = 0) -> int:
    """Counter-based 64-bit seed for one replicate draw."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replicate), int(attempt)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def jackknife_cov_se(values: np.ndarray) -> np.ndarray:
    """Leave-one-replicate-out standard errors of the sample covariance entries."""
    x = np.asarray(values, dtype=float)
    R = x.shape[0]
    if R < 3:
        raise ValueError("need at least 3 replicates")
    total = x.sum(0)
    cross = x.T @ x
    loo_mean = (total[None, :] - x) / (R - 1)
    loo = (cross[None] - np.einsum("ri,rj->rij", x, x)
           - (R - 1) * np.einsum("ri,rj->rij", loo_mean, loo_mean)) / (R - 2)
    centred = loo - loo.mean(0)
    return np.sqrt((R - 1) / R * (centred**2).sum(0))


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a CDF callable."""
    x = np.sort(np.asarray(samples, dtype=float))
    N = x.size
    F = cdf(x)
    hi = np.arange(1, N + 1) / N
    lo = np.arange(0, N) / N
    return float(max(np.max(hi - F), np.max(F - lo)))


@dataclass(frozen=True)
class McConfig:
    p: int
    n: int
    T_diag: tuple[float, ...]
    dist: EntryDistribution
    fs: tuple[TestFunction, ...]
    reps: int
    master_seed: int = 0
    workers: int = 1
    method: str = "direct"
    ks_replicates: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "T_diag", tuple(float(t) for t in self.T_diag))
        object.__setattr__(self, "fs", tuple(self.fs))
        _check_dims(self.p, self.n)
        if len(self.T_diag) != self.p:
            raise ValueError("T_diag must have length p")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if not self.fs:
            raise ValueError("need at least one test function")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.method not in ("direct", "bartlett"):
            raise ValueError("method must be 'direct' or 'bartlett'")
        if self.method == "bartlett" and not self.dist.is_gaussian:
            raise ValueError("the bartlett method needs Gaussian entries")
        if not (0 <= self.ks_replicates <= self.reps):
            raise ValueError("ks_replicates must lie in [0, reps]")
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.p / self.n, measure_from_values(self.T_diag), self.dist.moments)

    def to_dict(self) -> dict[str, Any]:
        counts = Counter(self.T_diag)
        return {
            "p": self.p,
            "n": self.n,
            "population": [{"t": t, "count": counts[t]} for t in sorted(counts)],
            "distribution": self.dist.to_dict(),
            "functions": [f.to_dict() for f in self.fs],
            "reps": self.reps,
            "master_seed": int(self.master_seed),
            "method": self.method,
            "ks_replicates": self.ks_replicates,
        }


@dataclass(frozen=True, eq=False)
class SimulationReport:
    config: McConfig
    values: np.ndarray
    seeds: tuple[int, ...]
    mean: np.ndarray
    covariance: np.ndarray
    mean_se: np.ndarray
    covariance_se: np.ndarray
    theory: CltResult | None
    z_mean: np.ndarray
    z_cov: np.ndarray
    ks_distance: float | None
    rejections: dict[str, int] = field(default_factory=dict)

    def max_abs_z(self) -> float:
        zs = np.concatenate([self.z_mean.ravel(), self.z_cov.ravel()])
        return float(np.max(np.abs(zs))) if zs.size else 0.0

    def passes(self, gate: float = 4.0) -> bool:
        return self.max_abs_z() < gate

    def to_dict(self) -> dict[str, Any]:
        lst = lambda a: np.asarray(a, dtype=float).tolist()  # noqa: E731
        return {
            "config": self.config.to_dict(),
            "empirical_mean": lst(self.mean),
            "empirical_covariance": lst(self.covariance),
            "mean_se": lst(self.mean_se),
            "covariance_se": lst(self.covariance_se),
            "theory": None if self.theory is None else self.theory.to_dict(),
            "z_mean": lst(self.z_mean),
            "z_cov": lst(self.z_cov),
            "max_abs_z": self.max_abs_z(),
            "ks_distance": self.ks_distance,
            "rejections": dict(sorted(self.rejections.items())),
            "seeds": [int(s) for s in self.seeds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replicates_csv(self, preamble: str | None = None) -> str:
        buf = io.StringIO(newline="")
        if preamble:
            buf.write(preamble.rstrip("\n") + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["replicate", "seed", "f_index", "value"])
        for r, (seed, row) in enumerate(zip(self.seeds, self.values)):
            for j, v in enumerate(row):
                writer.writerow([r, seed, j, format(float(v), ".17g")])
        return buf.getvalue()


def _z(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0.0, diff / np.where(se > 0.0, se, 1.0), 0.0)
    # a nonzero gap with zero spread is an infinite disagreement
    return np.where((se == 0.0) & (np.abs(diff) > 1e-9), np.inf * np.sign(diff), z)


def _replicate(cfg: McConfig, r: int, centers: np.ndarray, keep_eigs: bool):
    rejected: Counter = Counter()
    for attempt in range(MAX_ATTEMPTS):
        seed = replicate_seed(cfg.master_seed, r, attempt)
        rng = np.random.default_rng(seed)
        try:
            if cfg.method == "bartlett":
                L = sample_cholesky(cfg.p, cfg.n, cfg.dist, rng)
                eigs = product_eigenvalues(None, cfg.T_diag, cholesky=L)
            else:
                S = sample_covariance(cfg.p, cfg.n, cfg.dist, rng)
                eigs = product_eigenvalues(S, cfg.T_diag)
            x = lss_fluctuation(eigs, cfg.fs, cfg.params, centers)
        except ReplicateRejected as exc:
            rejected[exc.reason] += 1
            continue
        return x, seed, (eigs if keep_eigs else None), rejected
    raise RuntimeError(f"replicate {r} rejected {MAX_ATTEMPTS} times: {dict(rejected)}")


def run_mc(config: McConfig, theory: CltResult | None | bool = True) -> SimulationReport:
    """Run the replicates and compare with the CLT.

    ``theory`` may be a precomputed CltResult, True to compute it for the
    finite-sample parameters (p/n, H_n), or False/None to skip the comparison.
    """
    cfg = config
    params = cfg.params
    centers = lss_centers(cfg.fs, params)
    if theory is True:
        theory = clt_vector(cfg.fs, params, kernels=default_kernels(params))
    elif theory is False:
        theory = None

    def task(r):
        return _replicate(cfg, r, centers, r < cfg.ks_replicates)

    with threadpool_limits(limits=1):
        if cfg.workers == 1:
            results = [task(r) for r in range(cfg.reps)]
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(task, range(cfg.reps)))

    values = np.array([res[0] for res in results])
    seeds = tuple(res[1] for res in results)
    rejections: Counter = Counter()
    for res in results:
        rejections.update(res[3])
    total_rejected = sum(rejections.values())
    if total_rejected > MAX_REJECTION_RATE * cfg.reps:
        raise RuntimeError(f"{total_rejected} replicate draws rejected: {dict(rejections)}")

    R = cfg.reps
    mean = values.mean(0)
    cov = np.cov(values, rowvar=False, ddof=1).reshape(len(cfg.fs), len(cfg.fs)) if R > 1 else \
        np.zeros((len(cfg.fs),) * 2)
    mean_se = np.sqrt(np.diag(cov) / R)
    cov_se = jackknife_cov_se(values) if R >= 3 else np.zeros_like(cov)
    if theory is not None:
        z_mean = _z(mean - theory.mean, mean_se)
        z_cov = _z(cov - theory.covariance, cov_se)
    else:
        z_mean = np.zeros_like(mean)
        z_cov = np.zeros_like(cov)

    ks = None
    if cfg.ks_replicates:
        pooled = np.concatenate([res[2] for res in results[: cfg.ks_replicates]])
        curve = density(params)
        ks = ks_distance(pooled, curve.cdf_at)
    return SimulationReport(cfg, values, seeds, mean, cov, mean_se, cov_se, theory, z_mean, z_cov, ks,
                            dict(rejections))


def default_kernels(params: ModelParams) -> FourthMomentKernels | None:
    """Closed-form fourth-moment kernels when they apply, else None."""
    if params.moments.beta_x == 0.0:
        return None
    if params.measure.zero_mass > 0.0:
        log.warning("fourth-moment correction needs T with positive eigenvalues; omitted")
        return None
    return closed_form_kernels(params)
