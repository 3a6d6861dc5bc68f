"""
Run configuration: a single JSON document validated against a strict schema,
with command-line overrides applied on top and a content hash for provenance.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema

from . import __version__
from .clt import FourthMomentKernels, QuadratureConfig
from .contour import Contour
from .ensemble import EntryDistribution, McConfig, default_kernels
from .measures import ModelParams, MomentModel, SpectralMeasure, TestFunction, support_bracket
from .stieltjes import SolverConfig

__all__ = ["ConfigError", "SCHEMA", "RunConfig", "load_config", "parse_config", "config_hash"]


class ConfigError(ValueError):
    """The configuration is malformed or describes an invalid model."""


_NUMBER = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

_FUNCTION = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "polynomial"},
                "coefficients": {"type": "array", "items": _NUMBER, "minItems": 1},
            },
            "required": ["kind", "coefficients"],
            "additionalProperties": False,
        },
        {
            "properties": {"kind": {"const": "log"}, "floor": _POS},
            "required": ["kind"],
            "additionalProperties": False,
        },
        {
            "properties": {"kind": {"const": "power"}, "k": {"type": "integer"}, "floor": _POS},
            "required": ["kind", "k"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "combination"},
                "terms": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {"coefficient": _NUMBER, "function": {"$ref": "#/$defs/function"}},
                        "required": ["coefficient", "function"],
                        "additionalProperties": False,
                    },
                },
            },
            "required": ["kind", "terms"],
            "additionalProperties": False,
        },
    ],
}

_CONTOUR = {
    "type": "object",
    "properties": {
        "center": _NUMBER,
        "semi_axis_x": _POS,
        "semi_axis_y": _POS,
        "kind": {"enum": ["ellipse", "log_ellipse"]},
    },
    "required": ["center", "semi_axis_x", "semi_axis_y"],
    "additionalProperties": False,
}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "sinvt run configuration",
    "type": "object",
    "$defs": {"function": _FUNCTION},
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "y": _NUMBER,
                "p": {"type": "integer", "minimum": 2},
                "n": {"type": "integer", "minimum": 2},
                "population": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {"t": {"type": "number", "minimum": 0}, "w": _POS},
                        "required": ["t", "w"],
                        "additionalProperties": False,
                    },
                },
                "field_kind": {"enum": ["real", "complex"]},
                "beta_x": _NUMBER,
                "distribution": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["real_gaussian", "complex_gaussian", "rademacher", "two_point"]},
                        "prob": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
                "max_y": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "required": ["population"],
            "oneOf": [{"required": ["y"]}, {"required": ["p", "n"]}],
            "not": {"anyOf": [
                {"required": ["distribution", "field_kind"]},
                {"required": ["distribution", "beta_x"]},
            ]},
            "additionalProperties": False,
        },
        "functions": {"type": "array", "items": {"$ref": "#/$defs/function"}, "minItems": 1},
        "contour": {
            "type": "object",
            "properties": {
                "nodes": {"type": "integer", "minimum": 4},
                "max_nodes": {"type": "integer", "minimum": 4},
                "tolerance": _POS,
                "nesting": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "inner": _CONTOUR,
                "outer": _CONTOUR,
            },
            "dependentRequired": {"inner": ["outer"], "outer": ["inner"]},
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "tolerance": _POS,
                "max_iterations": _POS_INT,
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "epsilon_regularization": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "lsd": {
            "type": "object",
            "properties": {
                "grid_points": {"type": "integer", "minimum": 2},
                "grid": {"type": "array", "items": _POS, "minItems": 2},
                "eps_schedule": {"type": "array", "items": _POS, "minItems": 1},
                "support_threshold": _POS,
            },
            "not": {"required": ["grid", "grid_points"]},
            "additionalProperties": False,
        },
        "kernels": {
            "type": "object",
            "properties": {"mode": {"enum": ["auto", "none", "diagonal_T_closed_form"]}},
            "additionalProperties": False,
        },
        "mc": {
            "type": "object",
            "properties": {
                "reps": _POS_INT,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "method": {"enum": ["direct", "bartlett"]},
                "ks_replicates": {"type": "integer", "minimum": 0},
                "z_gate": _POS,
                "write_replicates": {"type": "boolean"},
                "workers": _POS_INT,
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string", "minLength": 1}},
            "additionalProperties": False,
        },
    },
    "required": ["model"],
    "additionalProperties": False,
}

# fields that steer where or how fast a run goes but never what it computes
_UNHASHED = (("mc", "workers"), ("output", "dir"))


def _format_error(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{where}: {err.message}"


def config_hash(raw: dict[str, Any]) -> str:
    """sha256 of the canonical JSON of the effective configuration."""
    doc = copy.deepcopy(raw)
    for section, key in _UNHASHED:
        doc.get(section, {}).pop(key, None)
        if section in doc and not doc[section]:
            del doc[section]
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A validated configuration plus the objects built from it.

    ``p`` and ``n`` are None when the model was given by its ratio ``y``;
    the simulate workflow needs them.
    """

    raw: dict[str, Any]
    params: ModelParams
    functions: tuple[TestFunction, ...]
    p: int | None
    n: int | None
    distribution: EntryDistribution | None
    solver: SolverConfig
    quadrature: QuadratureConfig
    contours: tuple[Contour, Contour] | None
    kernel_mode: str

    @property
    def sha256(self) -> str:
        return config_hash(self.raw)

    @property
    def meta(self) -> dict[str, str]:
        return {"version": __version__, "config_sha256": self.sha256}

    @property
    def csv_preamble(self) -> str:
        return f"# sinvt {__version__} config-sha256={self.sha256}"

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.raw.get(name, {}))

    @property
    def output_dir(self) -> Path:
        return Path(self.section("output").get("dir", "."))

    def kernels(self, params: ModelParams | None = None) -> FourthMomentKernels | None:
        params = params or self.params
        if self.kernel_mode == "none":
            return None
        if self.kernel_mode == "diagonal_T_closed_form":
            return default_kernels_for(params)
        return default_kernels(params)

    def mc_config(self) -> McConfig:
        if self.p is None or self.n is None:
            raise ConfigError("simulate needs model.p and model.n")
        mc = self.section("mc")
        t_diag = _population_diagonal(self.params.measure, self.p)
        if self.distribution is None and self.params.moments.beta_x != 0.0:
            raise ConfigError("simulate with beta_x != 0 needs model.distribution")
        return McConfig(
            p=self.p,
            n=self.n,
            T_diag=t_diag,
            dist=self.distribution or EntryDistribution(
                "complex_gaussian" if self.params.moments.field_kind == "complex" else "real_gaussian"
            ),
            fs=self.functions,
            reps=mc.get("reps", 200),
            master_seed=mc.get("seed", 0),
            workers=mc.get("workers", 1),
            method=mc.get("method", "direct"),
            ks_replicates=mc.get("ks_replicates", 0),
        )


def default_kernels_for(params: ModelParams) -> FourthMomentKernels:
    kernels = default_kernels(params)
    if kernels is None:
        raise ConfigError("closed-form fourth-moment kernels need beta_x != 0 and T with positive eigenvalues")
    return kernels


def _population_diagonal(measure: SpectralMeasure, p: int) -> tuple[float, ...]:
    out: list[float] = []
    for t, w in measure.atoms:
        count = w * p
        if abs(count - round(count)) > 1e-9 * p:
            raise ConfigError(f"population weight {w} of t={t} is not a multiple of 1/p for p={p}")
        out.extend([t] * int(round(count)))
    if len(out) != p:
        raise ConfigError("population weights must sum to 1")
    return tuple(out)


def _moments(model: dict[str, Any]) -> tuple[MomentModel, EntryDistribution | None]:
    if "distribution" in model:
        d = model["distribution"]
        dist = EntryDistribution(d["kind"], d.get("prob"))
        return dist.moments, dist
    return MomentModel(model.get("field_kind", "real"), float(model.get("beta_x", 0.0))), None


def _contour(d: dict[str, Any], nodes: int) -> Contour:
    return Contour(d["center"], d["semi_axis_x"], d["semi_axis_y"], nodes, d.get("kind", "ellipse"))


def apply_overrides(raw: dict[str, Any], seed: int | None = None, threads: int | None = None,
                    out: str | None = None) -> dict[str, Any]:
    """Command-line flags take precedence over the corresponding config fields."""
    doc = copy.deepcopy(raw)
    if seed is not None:
        doc.setdefault("mc", {})["seed"] = int(seed)
    if threads is not None:
        doc.setdefault("mc", {})["workers"] = int(threads)
    if out is not None:
        doc.setdefault("output", {})["dir"] = str(out)
    return doc


def parse_config(raw: dict[str, Any]) -> RunConfig:
    """Validate ``raw`` and build the model objects. Raises ConfigError."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("invalid config: " + "; ".join(_format_error(e) for e in errors))
    try:
        return _build(raw)
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _build(raw: dict[str, Any]) -> RunConfig:
    model = raw["model"]
    if "y" in model:
        y, p, n = float(model["y"]), None, None
    else:
        p, n = int(model["p"]), int(model["n"])
        y = p / n
    measure = SpectralMeasure.from_records(model["population"])
    moments, dist = _moments(model)
    kw = {"max_y": model["max_y"]} if "max_y" in model else {}
    params = ModelParams(y, measure, moments, **kw)

    functions = tuple(TestFunction.from_dict(f) for f in raw.get("functions", [{"kind": "polynomial",
                                                                                 "coefficients": [0, 1]}]))
    bracket = support_bracket(params)
    for f in functions:
        f.check_bracket(bracket)

    solver = SolverConfig(**raw.get("solver", {}))
    c = raw.get("contour", {})
    quadrature = QuadratureConfig(
        nodes=c.get("nodes", 256),
        max_nodes=c.get("max_nodes", 4096),
        tolerance=c.get("tolerance", 1e-7),
        nesting=c.get("nesting", 0.8),
        solver=solver,
    )
    contours = None
    if "inner" in c:
        contours = (_contour(c["inner"], quadrature.nodes), _contour(c["outer"], quadrature.nodes))

    lsd = raw.get("lsd", {})
    if "eps_schedule" in lsd:
        eps = lsd["eps_schedule"]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("lsd.eps_schedule must be strictly descending")
    if "grid" in lsd and any(b <= a for a, b in zip(lsd["grid"], lsd["grid"][1:])):
        raise ConfigError("lsd.grid must be strictly ascending")

    mode = raw.get("kernels", {}).get("mode", "auto")
    if mode == "diagonal_T_closed_form":
        default_kernels_for(params)
    mc = raw.get("mc", {})
    if mc.get("method") == "bartlett" and dist is not None and not dist.is_gaussian:
        raise ConfigError("mc.method 'bartlett' needs Gaussian entries")
    if not math.isfinite(y):
        raise ConfigError("y must be finite")
    return RunConfig(raw, params, functions, p, n, dist, solver, quadrature, contours, mode)


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a JSON config file. Raises ConfigError on I/O or syntax errors."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: the config must be a JSON object")
    return doc
