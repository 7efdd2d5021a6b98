"""Run configuration: JSON on disk, dataclasses in memory.

Keys on disk are camelCase (``nGrid``, ``samplesPerReplica``); the schema
shipped in ``schema/run_config.schema.json`` covers structure, and
:func:`validate_dict` adds the semantic checks (families in range, grids
nonempty, events well formed).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields, is_dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from .dp_core import EXACT, CylinderEvent, Truncation
from .env import EnvironmentSpec
from .functionals import RangeError, default_g_family, default_phi_family, make_g, make_phi

__all__ = [
    "CHECKS",
    "Diagnostic",
    "ConfigError",
    "Tolerances",
    "ContractionBlock",
    "MartingaleBlock",
    "FkgBlock",
    "OracleBlock",
    "DecompositionBlock",
    "RunConfig",
    "load_schema",
    "validate_dict",
    "validate_file",
    "load_config",
]

CHECKS = ("oracle", "martingale", "contraction", "fkg", "decomposition", "survival", "schedule", "uniformity")
# the statistical scans (survival, schedule, uniformity) are opt-in: they need many replicas
DEFAULT_CHECKS = ["oracle", "martingale", "contraction", "fkg", "decomposition"]
RANGE_NOTE = "the L1 contraction E|W_n(g)-W_m(g)| <= E|W_n-W_m| only holds for g with values in [0, 1]"


@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str

    def to_dict(self) -> dict:
        return {"field": self.field, "message": self.message}


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(f"{d.field}: {d.message}" for d in diagnostics))


_ALIASES = {"memory_budget_mb": "memoryBudgetMB"}


def _camel(name: str) -> str:
    if name in _ALIASES:
        return _ALIASES[name]
    head, *rest = name.split("_")
    return head + "".join(part[:1].upper() + part[1:] for part in rest)


def _snake(name: str) -> str:
    for snake, camel in _ALIASES.items():
        if name == camel:
            return snake
    return re.sub(r"([A-Z])", lambda m: "_" + m.group(1).lower(), name)


def _block_to_dict(obj) -> dict:
    return {_camel(f.name): getattr(obj, f.name) for f in fields(obj)}


def _block_from_dict(cls, data: Mapping | None):
    data = data or {}
    known = {f.name for f in fields(cls)}
    kwargs = {_snake(k): v for k, v in data.items() if _snake(k) in known}
    return cls(**kwargs)


@dataclass
class Tolerances:
    exact_atol: float = 1e-12
    oracle_relative: float = 1e-12
    decomposition_residual: float = 1e-10
    se_multiplier: float = 4.0
    ks_threshold: float | None = None
    covariance_threshold: float = 0.10
    thread_relative: float = 1e-12
    brownian_tail_sd: float = 8.0


@dataclass
class ContractionBlock:
    m: int = 5
    n: int = 25
    exhaustive: bool = True
    exhaustive_d: int = 1
    exhaustive_n: int = 3
    exhaustive_m: int = 1


@dataclass
class MartingaleBlock:
    instances: list = field(default_factory=lambda: [[1, 2], [1, 3], [2, 2]])


@dataclass
class FkgBlock:
    pairs: int = 1000
    max_atoms: int = 1 << 16
    pair_n: int = 3
    pair_m: int = 1


@dataclass
class OracleBlock:
    max_n: int = 6
    instances: int = 20
    dims: list = field(default_factory=lambda: [1, 2])


@dataclass
class DecompositionBlock:
    instances: int = 20
    max_n: int = 6
    max_k: int = 6


_BLOCKS = {
    "tolerances": Tolerances,
    "contraction": ContractionBlock,
    "martingale": MartingaleBlock,
    "fkg": FkgBlock,
    "oracle": OracleBlock,
    "decomposition": DecompositionBlock,
}


@dataclass
class RunConfig:
    environment: EnvironmentSpec
    d: int
    n_grid: list[int]
    replicas: int
    samples_per_replica: int = 100
    survival_threshold: float = 1e-3
    truncation: float | None = None
    time_grid: list[float] = field(default_factory=lambda: [1.0])
    sampling: str = "endpoints"
    memory_budget_mb: float = 1024.0
    output_dir: str = "out"
    threads: int = 1
    format: str = "json"
    checks: list[str] = field(default_factory=lambda: list(DEFAULT_CHECKS))
    g_family: list[dict] | None = None
    phi_family: list[dict] | None = None
    events: list[dict] | None = None
    m_grid: list[int] | None = None
    contraction: ContractionBlock = field(default_factory=ContractionBlock)
    martingale: MartingaleBlock = field(default_factory=MartingaleBlock)
    fkg: FkgBlock = field(default_factory=FkgBlock)
    oracle: OracleBlock = field(default_factory=OracleBlock)
    decomposition: DecompositionBlock = field(default_factory=DecompositionBlock)
    tolerances: Tolerances = field(default_factory=Tolerances)

    @property
    def seed(self) -> int:
        return self.environment.seed

    def with_overrides(self, seed: int | None = None, threads: int | None = None, out: str | None = None, fmt: str | None = None) -> "RunConfig":
        data = self.to_dict()
        if seed is not None:
            data["environment"]["seed"] = str(seed)
        if threads is not None:
            data["threads"] = threads
        if out is not None:
            data["outputDir"] = out
        if fmt is not None:
            data["format"] = fmt
        return RunConfig.from_dict(data)

    def trunc(self) -> Truncation:
        return EXACT if self.truncation is None else Truncation(self.truncation)

    def gs(self) -> list[dict]:
        return self.g_family if self.g_family is not None else default_g_family(self.d)

    def phis(self) -> list[dict]:
        return self.phi_family if self.phi_family is not None else default_phi_family()

    def event_steps(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.events is None:
            return [("+1", tuple([1] + [0] * (self.d - 1)))]
        return [(e.get("name", f"event{i}"), tuple(e["pattern"][0])) for i, e in enumerate(self.events)]

    def ms(self) -> list[int]:
        return self.m_grid if self.m_grid is not None else [0, 2, 8, 32]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "environment":
                value = value.to_dict()
            elif is_dataclass(value):
                value = _block_to_dict(value)
            elif value is None and f.name in ("g_family", "phi_family", "events", "m_grid"):
                continue
            out[_camel(f.name)] = value
        return json.loads(json.dumps(out))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        kwargs: dict[str, Any] = {}
        names = {f.name for f in fields(cls)}
        for key, value in data.items():
            name = _snake(key)
            if name not in names:
                raise ConfigError([Diagnostic(key, "unknown field")])
            if name == "environment":
                value = EnvironmentSpec.from_dict(value)
            elif name in _BLOCKS:
                value = _block_from_dict(_BLOCKS[name], value)
            kwargs[name] = value
        return cls(**kwargs)


def load_schema() -> dict:
    text = resources.files("polymerlab").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def _path(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        missing = re.findall(r"'([^']+)' is a required property", error.message)
        parts += missing[:1]
    if error.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)'", error.message)
        parts += extra[:1]
    return ".".join(parts) or "$"


def _probe_points(d: int, n: int) -> np.ndarray:
    r = min(n, 8)
    axis = np.arange(-r, r + 1)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def validate_dict(data: Any) -> list[Diagnostic]:
    """Structural then semantic diagnostics; empty iff the config is valid."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    diags = [Diagnostic(_path(e), e.message) for e in errors]
    if diags or not isinstance(data, dict):
        return diags or [Diagnostic("$", "configuration must be a JSON object")]
    d = data["d"]
    if data["replicas"] < 1:
        diags.append(Diagnostic("replicas", f"must be >= 1, got {data['replicas']}"))
    for key in ("nGrid", "mGrid", "timeGrid", "checks"):
        if key in data and len(data[key]) == 0:
            diags.append(Diagnostic(key, "grid must be nonempty"))
    try:
        EnvironmentSpec.from_dict(data["environment"])
    except (ValueError, KeyError) as exc:
        diags.append(Diagnostic("environment.params", str(exc)))
    if "survival" in data.get("checks", []) and data["replicas"] < 100:
        diags.append(Diagnostic("replicas", "the survival scan needs at least 100 replicas"))
    probe_n = max(data["nGrid"]) if data["nGrid"] else 1
    for i, spec in enumerate(data.get("gFamily", [])):
        try:
            g = make_g(spec, probe_n, d)
            g(_probe_points(d, probe_n))
        except RangeError as exc:
            diags.append(Diagnostic(f"gFamily[{i}]", f"{exc}; {RANGE_NOTE}"))
        except (ValueError, KeyError, TypeError) as exc:
            diags.append(Diagnostic(f"gFamily[{i}]", str(exc)))
    for i, spec in enumerate(data.get("phiFamily", [])):
        try:
            phi = make_phi(spec)
            phi(_probe_points(d, 8) / 2.0)
        except RangeError as exc:
            diags.append(Diagnostic(f"phiFamily[{i}]", f"{exc}; phi must take values in [0, 1]"))
        except (ValueError, KeyError, TypeError) as exc:
            diags.append(Diagnostic(f"phiFamily[{i}]", str(exc)))
    for i, ev in enumerate(data.get("events", [])):
        try:
            event = CylinderEvent(0, tuple(tuple(s) for s in ev["pattern"]))
            if event.d != d:
                raise ValueError(f"increments have dimension {event.d}, lattice has {d}")
            if event.length != 1:
                raise ValueError("the uniformity check takes single-increment events")
        except ValueError as exc:
            diags.append(Diagnostic(f"events[{i}].pattern", str(exc)))
    block = data.get("contraction", {})
    m, n = block.get("m", 5), block.get("n", 25)
    if m > n:
        diags.append(Diagnostic("contraction.m", f"need m <= n, got m={m}, n={n}"))
    if block.get("exhaustiveM", 1) > block.get("exhaustiveN", 3):
        diags.append(Diagnostic("contraction.exhaustiveM", "need exhaustiveM <= exhaustiveN"))
    fkg = data.get("fkg", {})
    if fkg.get("pairM", 1) > fkg.get("pairN", 3):
        diags.append(Diagnostic("fkg.pairM", "need pairM <= pairN"))
    trunc = data.get("truncation")
    if trunc is not None and not math.isfinite(trunc):
        diags.append(Diagnostic("truncation", "must be finite"))
    return diags


def validate_file(path) -> list[Diagnostic]:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return [Diagnostic("$", f"not valid JSON: {exc}")]
    return validate_dict(data)


def load_config(path) -> RunConfig:
    diags = validate_file(path)
    if diags:
        raise ConfigError(diags)
    return RunConfig.from_dict(json.loads(Path(path).read_text()))
