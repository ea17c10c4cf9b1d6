"""JSON configuration: schema, loading and derived settings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema

from .certify import CertifySettings
from .envelopes import EnvelopeSet, WeightSet
from .expr import ExprError
from .gains import GainSettings
from .quadrature import QuadSettings
from .system import InterconnectedSystem, SystemDefinitionError, load_system


class ConfigError(ValueError):
    """Unreadable, schema-invalid or semantically invalid configuration."""


_expr = {"type": "string", "minLength": 1}
_block = {"oneOf": [_expr, {"type": "array", "minItems": 1,
                            "items": {"type": "array", "minItems": 1, "items": _expr}}]}
_sub = {"type": "object", "required": ["alpha", "beta", "gamma", "delta"],
        "properties": {k: _expr for k in ("alpha", "beta", "gamma", "delta")},
        "additionalProperties": False}
_params = {"type": "object", "additionalProperties": {"type": "number"}}

SCHEMA = {
    "type": "object",
    "required": ["system", "envelopes"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["A11", "A12", "A21", "A22"],
            "additionalProperties": False,
            "properties": {
                "n1": {"type": "integer", "minimum": 1},
                "n2": {"type": "integer", "minimum": 1},
                "A11": _block, "A12": _block, "A21": _block, "A22": _block,
                "params": _params,
                "tau": {"type": "number"},
                "comparison": {"type": "boolean"},
            },
        },
        "envelopes": {
            "type": "object",
            "required": ["sub1", "sub2"],
            "additionalProperties": False,
            "properties": {
                "sub1": _sub, "sub2": _sub,
                "params": _params,
                "decay": {"type": "object",
                          "patternProperties": {"^[12]$": {"type": "number", "exclusiveMinimum": 0}},
                          "additionalProperties": False},
            },
        },
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _expr for k in ("q1", "q2", "omega1", "omega2")},
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t0": {"oneOf": [{"type": "number"},
                                 {"type": "array", "minItems": 1, "items": {"type": "number"}}]},
                "T_max": {"type": "number", "exclusiveMinimum": 0},
                "grid_step": {"type": "number", "exclusiveMinimum": 0},
                "quad_tol": {"type": "number", "exclusiveMinimum": 0},
                "picard_tol": {"type": "number", "exclusiveMinimum": 0},
                "picard_max_iter": {"type": "integer", "minimum": 1},
                "trials": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "envelope_points": {"type": "integer", "minimum": 2},
            },
        },
    },
}


@dataclass(frozen=True)
class Analysis:
    t0: tuple = (0.0,)
    T_max: float = 50.0
    grid_step: float = 0.05
    quad_tol: float = 1e-9
    picard_tol: float = 1e-8
    picard_max_iter: int = 200
    trials: int = 100
    seed: int = 0
    envelope_points: int = 21

    @property
    def quad(self) -> QuadSettings:
        return QuadSettings(tol=self.quad_tol)

    @property
    def gain_settings(self) -> GainSettings:
        return GainSettings(quad=self.quad)

    @property
    def certify_settings(self) -> CertifySettings:
        return CertifySettings(step=self.grid_step, envelope_span=self.T_max,
                               gains=self.gain_settings, quad=self.quad)


@dataclass
class Config:
    """A resolved configuration with the objects it describes."""

    raw: dict
    system: InterconnectedSystem
    envelopes: EnvelopeSet
    weights: WeightSet
    analysis: Analysis
    source: str = ""
    overrides: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        """SHA-256 of the canonical JSON of the resolved document."""
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def resolved(self) -> dict:
        doc = json.loads(json.dumps(self.raw))
        an = dict(doc.get("analysis", {}))
        a = self.analysis
        an.update(t0=list(a.t0), T_max=a.T_max, grid_step=a.grid_step, quad_tol=a.quad_tol,
                  picard_tol=a.picard_tol, picard_max_iter=a.picard_max_iter, trials=a.trials,
                  seed=a.seed, envelope_points=a.envelope_points)
        doc["analysis"] = an
        return doc

    def with_overrides(self, **kw) -> "Config":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "t0" in kw:
            kw["t0"] = tuple(float(v) for v in kw["t0"])
        return replace(self, analysis=replace(self.analysis, **kw),
                       overrides={**self.overrides, **kw})


def from_dict(doc: dict, source: str = "") -> Config:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source or 'config'}: {where}: {exc.message}") from None
    try:
        sys = load_system(doc)
        sys_params = dict(doc["system"].get("params", {}))
        env_doc = doc["envelopes"]
        env = EnvelopeSet.from_strings(env_doc["sub1"], env_doc["sub2"],
                                       {**sys_params, **env_doc.get("params", {})},
                                       env_doc.get("decay"))
        wts = WeightSet.from_strings(**doc.get("weights", {}), params=sys_params)
        for name in ("q", "omega"):
            for i in (1, 2):
                wts.fn(name, i)
    except (ExprError, SystemDefinitionError, ValueError, KeyError) as exc:
        raise ConfigError(f"{source or 'config'}: {exc}") from None
    an = dict(doc.get("analysis", {}))
    t0 = an.pop("t0", [sys.tau])
    analysis = Analysis(t0=tuple(float(v) for v in (t0 if isinstance(t0, list) else [t0])), **an)
    return Config(doc, sys, env, wts, analysis, source)


def load_config(path) -> Config:
    """Read and validate a JSON configuration file.

    Raises
    ------
    OSError
        The file cannot be read.
    ConfigError
        Invalid JSON, schema violation, unparsable expression or unbound
        parameter.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return from_dict(doc, str(path))


def bundled(name: str) -> Path:
    """Path of a configuration shipped in the package ``data`` directory."""
    from importlib.resources import files
    path = Path(str(files("ltvgain") / "data" / f"{name}.json"))
    if not path.exists():
        raise FileNotFoundError(path)
    return path
