"""
Domain types shared by every other module: spectral measures of the
deterministic factor T, the entry moment model, the model parameters, and
analytic test functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "SpectralMeasure",
    "MomentModel",
    "ModelParams",
    "TestFunction",
    "measure_from_values",
    "support_bracket",
    "MAX_Y",
]

MAX_Y = 0.95


@dataclass(frozen=True)
class SpectralMeasure:
    """Discrete probability measure on [0, inf), stored as sorted atoms."""

    locations: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        locs = tuple(float(t) for t in self.locations)
        wts = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", wts)
        if not locs or len(locs) != len(wts):
            raise ValueError("a spectral measure needs matching, non-empty atom lists")
        if any(not math.isfinite(t) or t < 0.0 for t in locs):
            raise ValueError("atom locations must be finite and non-negative")
        if any(not math.isfinite(w) or w <= 0.0 for w in wts):
            raise ValueError("atom weights must be positive")
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise ValueError("atom locations must be distinct and sorted ascending")
        if abs(math.fsum(wts) - 1.0) > 1e-12:
            raise ValueError(f"atom weights sum to {math.fsum(wts)!r}, expected 1")
        if locs[-1] <= 0.0:
            raise ValueError("degenerate-at-zero measure: at least one atom must be positive")

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "SpectralMeasure":
        pairs = sorted((float(t), float(w)) for t, w in atoms)
        return cls(tuple(t for t, _ in pairs), tuple(w for _, w in pairs))

    @classmethod
    def from_records(cls, records: Iterable[dict[str, float]]) -> "SpectralMeasure":
        """Build from the ``[{"t": ..., "w": ...}, ...]`` config format."""
        return cls.from_atoms((rec["t"], rec["w"]) for rec in records)

    def to_records(self) -> list[dict[str, float]]:
        return [{"t": t, "w": w} for t, w in zip(self.locations, self.weights)]

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations, self.weights))

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.locations, dtype=float)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def zero_mass(self) -> float:
        return self.weights[0] if self.locations[0] == 0.0 else 0.0

    @property
    def t_min(self) -> float:
        return self.locations[0]

    @property
    def t_max(self) -> float:
        return self.locations[-1]

    def moment(self, k: int) -> float:
        return math.fsum(w * t**k for t, w in zip(self.locations, self.weights))

    def shifted(self, eps: float) -> "SpectralMeasure":
        """Law of T + eps*I."""
        if eps == 0.0:
            return self
        return SpectralMeasure(tuple(t + eps for t in self.locations), self.weights)

    def scaled(self, c: float) -> "SpectralMeasure":
        if c <= 0.0:
            raise ValueError("scale factor must be positive")
        return SpectralMeasure(tuple(c * t for t in self.locations), self.weights)


def measure_from_values(values: Sequence[float]) -> SpectralMeasure:
    """Empirical spectral distribution of a diagonal T with the given entries.

    Weights are multiplicity / count, rounded once from exact fractions so
    the result does not depend on the order of ``values``.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("values must be non-empty")
    if any(not math.isfinite(v) or v < 0.0 for v in vals):
        raise ValueError("values must be finite and non-negative")
    if max(vals) == 0.0:
        raise ValueError("degenerate-at-zero measure: all values are zero")
    counts: dict[float, int] = {}
    for v in vals:
        counts[v] = counts.get(v, 0) + 1
    n = len(vals)
    locs = tuple(sorted(counts))
    wts = tuple(float(Fraction(counts[t], n)) for t in locs)
    return SpectralMeasure(locs, wts)


@dataclass(frozen=True)
class MomentModel:
    """Field of the entries plus their fourth-moment excess.

    ``kappa`` is 2 for real entries and 1 for complex ones, so that the
    Gaussian fourth moment is ``1 + kappa`` and ``fourth_excess`` is
    ``E|x|^4 - 1 - kappa``.
    """

    field_kind: str = "real"
    fourth_excess: float = 0.0

    def __post_init__(self) -> None:
        if self.field_kind not in ("real", "complex"):
            raise ValueError(f"field_kind must be 'real' or 'complex', got {self.field_kind!r}")
        if not math.isfinite(self.fourth_excess) or self.fourth_excess < -2.0:
            raise ValueError("fourth_excess must be finite and >= -2")

    @property
    def kappa(self) -> int:
        return 2 if self.field_kind == "real" else 1

    @property
    def beta_x(self) -> float:
        return self.fourth_excess


@dataclass(frozen=True)
class ModelParams:
    y: float
    measure: SpectralMeasure
    moments: MomentModel = field(default_factory=MomentModel)
    max_y: float = MAX_Y

    def __post_init__(self) -> None:
        if not (0.0 < self.y < 1.0):
            raise ValueError(
                f"y={self.y!r} is outside (0, 1): the ratio p/n must converge to a limit in (0, 1)"
            )
        if self.y > self.max_y:
            raise ValueError(f"y={self.y!r} exceeds the configured bound {self.max_y}")

    @classmethod
    def finite(
        cls, p: int, n: int, t_diag: Sequence[float], moments: MomentModel | None = None
    ) -> "ModelParams":
        """Finite-sample proxy parameters (y_n = p/n, H_n = ESD of T)."""
        if len(t_diag) != p:
            raise ValueError("T diagonal must have length p")
        return cls(p / n, measure_from_values(t_diag), moments or MomentModel())


def support_bracket(params: ModelParams, margin: float = 0.05) -> tuple[float, float]:
    """Interval guaranteed to contain the support of the LSD of S^{-1}T.

    Based on the extreme-eigenvalue limits of S: every eigenvalue of S^{-1}T lies in
    [t_min/(1+sqrt y)^2, t_max/(1-sqrt y)^2] asymptotically. The margin
    widens both ends multiplicatively.
    """
    if margin < 0.0:
        raise ValueError("margin must be non-negative")
    r = math.sqrt(params.y)
    m = params.measure
    x_r = m.t_max / (1.0 - r) ** 2 * (1.0 + margin)
    if m.zero_mass > 0.0:
        return 0.0, x_r
    return m.t_min / (1.0 + r) ** 2 * (1.0 - margin), x_r


# --------------------------------------------------------------------------
# test functions

_KINDS = ("polynomial", "log", "power", "combination")


@dataclass(frozen=True)
class TestFunction:
    """Analytic test function f, evaluable at complex arguments.

    Use the constructors :meth:`polynomial`, :meth:`log`, :meth:`power` and
    :meth:`combination` rather than the raw fields.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    coefficients: tuple[float, ...] = ()
    k: int = 0
    terms: tuple[tuple[float, "TestFunction"], ...] = ()
    analyticity_floor: float = -math.inf

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.kind == "log" and not self.analyticity_floor > 0.0:
            raise ValueError("log requires a positive analyticity floor")
        if self.kind == "power" and self.k < 0 and not self.analyticity_floor > 0.0:
            raise ValueError("negative powers require a positive analyticity floor")
        if self.kind == "combination" and not self.terms:
            raise ValueError("a combination needs at least one term")

    # constructors
    @classmethod
    def polynomial(cls, coefficients: Sequence[float]) -> "TestFunction":
        """sum_k coefficients[k] * x**k."""
        coeffs = tuple(float(c) for c in coefficients)
        if not coeffs:
            raise ValueError("polynomial needs at least one coefficient")
        return cls("polynomial", coefficients=coeffs)

    @classmethod
    def constant(cls, c: float = 1.0) -> "TestFunction":
        return cls.polynomial([c])

    @classmethod
    def log(cls, floor: float = 1e-12) -> "TestFunction":
        return cls("log", analyticity_floor=float(floor))

    @classmethod
    def power(cls, k: int, floor: float | None = None) -> "TestFunction":
        k = int(k)
        if floor is None:
            floor = 1e-12 if k < 0 else -math.inf
        return cls("power", k=k, analyticity_floor=float(floor))

    @classmethod
    def combination(cls, terms: Iterable[tuple[float, "TestFunction"]]) -> "TestFunction":
        terms = tuple((float(a), f) for a, f in terms)
        floor = max((f.analyticity_floor for _, f in terms), default=-math.inf)
        return cls("combination", terms=terms, analyticity_floor=floor)

    # evaluation
    def __call__(self, z: Any) -> Any:
        z = np.asarray(z)
        if self.kind == "polynomial":
            out = np.zeros_like(z, dtype=np.result_type(z, float))
            for c in reversed(self.coefficients):
                out = out * z + c
            return out
        if self.kind == "log":
            return np.log(z.astype(complex) if np.iscomplexobj(z) else z)
        if self.kind == "power":
            zz = z.astype(complex) if np.iscomplexobj(z) else z.astype(float)
            return zz ** self.k
        return sum(a * f(z) for a, f in self.terms)

    def derivative(self) -> "TestFunction":
        if self.kind == "polynomial":
            c = self.coefficients
            return TestFunction.polynomial([k * c[k] for k in range(1, len(c))] or [0.0])
        if self.kind == "log":
            return TestFunction.power(-1, floor=self.analyticity_floor)
        if self.kind == "power":
            if self.k == 0:
                return TestFunction.constant(0.0)
            return TestFunction.combination(
                [(float(self.k), TestFunction.power(self.k - 1, floor=self.analyticity_floor))]
            )
        return TestFunction.combination([(a, f.derivative()) for a, f in self.terms])

    @property
    def constant_value(self) -> float | None:
        """The value of f if it is constant by construction, else None."""
        if self.kind == "polynomial" and all(c == 0.0 for c in self.coefficients[1:]):
            return self.coefficients[0]
        if self.kind == "power" and self.k == 0:
            return 1.0
        if self.kind == "combination":
            vals = [f.constant_value for _, f in self.terms]
            if all(v is not None for v in vals):
                return math.fsum(a * v for (a, _), v in zip(self.terms, vals))
        return None

    def check_bracket(self, bracket: tuple[float, float]) -> None:
        """Reject f when its analyticity floor does not lie left of the bracket."""
        if math.isfinite(self.analyticity_floor) and bracket[0] <= self.analyticity_floor:
            raise ValueError(
                f"{self.label} is not analytic on a neighbourhood of the support bracket "
                f"[{bracket[0]:.6g}, {bracket[1]:.6g}]"
            )

    @property
    def label(self) -> str:
        if self.kind == "polynomial":
            parts = [f"{c:g}*x^{k}" for k, c in enumerate(self.coefficients) if c != 0.0]
            return " + ".join(parts) or "0"
        if self.kind == "log":
            return "log(x)"
        if self.kind == "power":
            return f"x^{self.k}"
        return " + ".join(f"{a:g}*({f.label})" for a, f in self.terms)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "polynomial":
            return {"kind": "polynomial", "coefficients": list(self.coefficients)}
        if self.kind == "log":
            return {"kind": "log", "floor": self.analyticity_floor}
        if self.kind == "power":
            out: dict[str, Any] = {"kind": "power", "k": self.k}
            if math.isfinite(self.analyticity_floor):
                out["floor"] = self.analyticity_floor
            return out
        return {
            "kind": "combination",
            "terms": [{"coefficient": a, "function": f.to_dict()} for a, f in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TestFunction":
        kind = d.get("kind")
        if kind == "polynomial":
            return cls.polynomial(d["coefficients"])
        if kind == "log":
            return cls.log(d.get("floor", 1e-12))
        if kind == "power":
            return cls.power(d["k"], d.get("floor"))
        if kind == "combination":
            return cls.combination(
                (term["coefficient"], cls.from_dict(term["function"])) for term in d["terms"]
            )
        raise ValueError(f"unknown test function kind {kind!r}")
