"""Experiment configuration: JSON schema, dataclass and semantic checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import CASES, QuadratureSettings, case_catalog, ManufacturedCase
from .derham import ConfigurationError, n_elements_from_h, validate_degrees
from .geometry import as_multipatch, catalog, load_spline_map
from .solver import METHODS, PRECONDITIONERS, SolveConfig

FACE = {"enum": ["left", "right", "bottom", "top", "front", "back"]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["case"],
    "properties": {
        "case": {"enum": list(CASES)},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
                "file": {"type": "string"},
            },
        },
        "p": {"type": "integer", "minimum": 1},
        "r": {"type": "integer", "minimum": 0},
        "h": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "minItems": 1},
        "material": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]},
                "mu": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "bc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dirichlet": {"type": "array", "items": FACE},
                "traction": {"type": "array", "items": FACE},
                "traction_value": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 3},
                "traction_faces": {"type": "array", "items": FACE},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": list(METHODS)},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": ["integer", "null"], "minimum": 1},
                "preconditioner": {"enum": list(PRECONDITIONERS)},
            },
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "assembly_extra": {"type": "integer", "minimum": 1},
                "error_extra": {"type": "integer", "minimum": 1},
            },
        },
        "naive": {"type": "boolean"},
        "threads": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "probes": {"type": "array", "items": {"type": "string"}},
        "vtk_samples": {"type": "integer", "minimum": 2},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "csv": {"type": "string"},
                "json": {"type": "string"},
                "vtk": {"type": "string"},
            },
        },
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    case: str
    p: int = 2
    r: int = 0
    h: tuple[float, ...] = (0.5, 0.25)
    geometry: dict | None = None
    lam: float | str | None = None
    mu: float | None = None
    dirichlet: tuple[str, ...] | None = None
    traction: tuple[str, ...] | None = None
    traction_value: tuple[float, ...] | None = None
    traction_faces: tuple[str, ...] | None = None
    solver: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)
    naive: bool = False
    threads: int = 1
    seed: int = 0
    probes: tuple[str, ...] | None = None
    vtk_samples: int = 10
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"invalid config at {where}: {exc.message}") from None
        mat = data.get("material", {})
        bc = data.get("bc", {})
        tup = lambda v: None if v is None else tuple(v)  # noqa: E731
        cfg = cls(case=data["case"], p=data.get("p", 2), r=data.get("r", 0), h=tuple(data.get("h", (0.5, 0.25))),
                  geometry=data.get("geometry"), lam=mat.get("lambda"), mu=mat.get("mu"),
                  dirichlet=tup(bc.get("dirichlet")), traction=tup(bc.get("traction")),
                  traction_value=tup(bc.get("traction_value")), traction_faces=tup(bc.get("traction_faces")),
                  solver=dict(data.get("solver", {})), quadrature=dict(data.get("quadrature", {})),
                  naive=data.get("naive", False), threads=data.get("threads", 1), seed=data.get("seed", 0),
                  probes=tup(data.get("probes")), vtk_samples=data.get("vtk_samples", 10),
                  output=dict(data.get("output", {})))
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # --- derived objects ---

    def solve_config(self) -> SolveConfig | None:
        return SolveConfig(**self.solver) if self.solver else None

    def quadrature_settings(self) -> QuadratureSettings:
        try:
            return QuadratureSettings(**self.quadrature)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    def build_case(self) -> ManufacturedCase:
        case = case_catalog(self.case, lam=self.lam, mu=self.mu)
        if self.geometry:
            geom = self._geometry()
            if case.frame == "parametric":
                raise ConfigurationError(f"case {self.case!r} is defined through its own map; geometry cannot change")
            if geom.dim != case.dim:
                raise ConfigurationError("geometry dimension does not match the case")
            case.geometry = as_multipatch(geom)
            case.reference = geom if not hasattr(geom, "patches") else case.reference
        if self.dirichlet is not None:
            case.dirichlet = self.dirichlet
        if self.traction is not None:
            case.traction = self.traction
        if self.traction_value is not None:
            if len(self.traction_value) != case.dim:
                raise ConfigurationError("traction_value length must equal the dimension")
            case.traction_value = np.asarray(self.traction_value, dtype=float)
        if self.traction_faces is not None:
            case.traction_faces = self.traction_faces
        return case

    def _geometry(self):
        g = self.geometry
        if "file" in g:
            try:
                return load_spline_map(g["file"])
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigurationError(f"cannot load geometry file: {exc}") from None
        try:
            return catalog(g.get("name", ""), **g.get("params", {}))
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(str(exc)) from None

    def validate(self) -> ManufacturedCase:
        """Semantic checks that need no solve; returns the configured case."""
        try:
            case = self.build_case()
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(str(exc)) from None
        for h in self.h:
            n_elements_from_h(h)
        if list(self.h) != sorted(set(self.h), reverse=True):
            raise ConfigurationError("h values must be strictly decreasing")
        if self.naive:
            if not self.p > self.r >= 0:
                raise ConfigurationError(f"naive spaces need p > r >= 0 (got p={self.p}, r={self.r})")
        else:
            validate_degrees(case.dim, self.p, self.r)
        self.solve_config()
        self.quadrature_settings()
        faces = set(case.dirichlet) | set(case.traction)
        if set(case.dirichlet) & set(case.traction):
            raise ConfigurationError("a face cannot be both Dirichlet and traction")
        if len(case.geometry.patches) == 1 and len(faces) != 2 * case.dim:
            raise ConfigurationError("Dirichlet and traction faces must cover the boundary")
        if case.params.incompressible and not case.traction and not self.naive:
            self._check_identity(case)
        return case

    def _check_identity(self, case: ManufacturedCase) -> None:
        from .derham import build_spaces
        from .solver import identity_coefficients

        spaces = build_spaces(case.geometry, 1.0, self.p, self.r)
        _, resid = identity_coefficients(spaces.sigma)
        if not resid <= 1e-10 or not math.isfinite(resid):
            raise ConfigurationError(
                "lambda='inf' with displacement data on the whole boundary needs the identity in the stress "
                f"space, which fails here (fit residual {resid:.2e}); for spline maps of degree q this requires "
                "2q <= p+1 in 3D")
