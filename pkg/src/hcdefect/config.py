"""Experiment configuration: a flat JSON document with strict validation."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .geometry import BoundaryPolicy, CellGeometry, DefectGeometry, GeometryError, MediumSpec


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists one message per violated field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    # medium
    a0: float = 0.025
    a1: float = 1.0
    a2: float = 1.0
    boundary_policy: str = "full"
    theta: float = 2.0
    A0t: float = 1.0
    B0t: float = 1.0
    inclusion_radius: float = 0.3
    defect_shape: str = "disk"
    defect_size: float = 1.0
    # cell problem; h_cell = None means one cell element per fine element (1/m)
    h_cell: float | None = None
    J: int = 40
    # limit problem
    L: float = 6.0
    h_macro: float = 0.03125
    n_scan: int = 32
    Jc: int = 40
    gap_index: int = 0
    # fine problem
    eps_list: tuple = (0.25, 0.125, 0.0625)
    m: int = 4
    L_fine: float = 4.0
    dof_cap: int = 4_000_000
    # bands; lambda_max = None means twice the upper edge of the selected gap
    lambda_max: float | None = None
    n_theta: int = 8
    n_path: int = 17
    k_bands: int = 12
    # solver
    tol: float = 1e-9
    maxiter: int = 500
    record_timings: bool = False
    defaults_applied: tuple = field(default=(), compare=False)

    @property
    def cell_h(self) -> float:
        return self.h_cell if self.h_cell is not None else 1.0 / self.m

    @property
    def lattice_consistent(self) -> bool:
        return self.h_cell is None or abs(self.h_cell * self.m - 1.0) < 1e-12

    def medium(self) -> MediumSpec:
        return MediumSpec(self.a0, self.a1, self.a2,
                          BoundaryPolicy(self.boundary_policy, self.theta, self.A0t, self.B0t),
                          CellGeometry(self.inclusion_radius),
                          DefectGeometry(self.defect_shape, self.defect_size))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("defaults_applied")
        d["eps_list"] = list(d["eps_list"])
        return d

    def canonical(self) -> str:
        """Sorted-key compact JSON, the basis of the config hash."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self, keys=None) -> str:
        d = self.to_dict()
        if keys is not None:
            d = {k: d[k] for k in keys}
        s = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(s.encode()).hexdigest()[:16]


FIELDS = {f.name: f for f in fields(ExperimentConfig) if f.name != "defaults_applied"}
_INT = {"J", "n_scan", "Jc", "gap_index", "m", "dof_cap", "n_theta", "n_path", "k_bands",
        "maxiter"}
_STR = {"boundary_policy", "defect_shape"}
_OPTIONAL = {"h_cell", "lambda_max"}


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _coerce(name, v, errors):
    if name in _OPTIONAL and v is None:
        return None
    if name in _STR:
        if not isinstance(v, str):
            errors.append(f"{name}: expected a string, got {v!r}")
        return v
    if name == "record_timings":
        if not isinstance(v, bool):
            errors.append(f"{name}: expected true or false, got {v!r}")
        return v
    if name == "eps_list":
        if not isinstance(v, (list, tuple)) or not all(_number(x) for x in v):
            errors.append(f"eps_list: expected a list of numbers, got {v!r}")
            return ()
        return tuple(float(x) for x in v)
    if name in _INT:
        if not (_number(v) and float(v) == int(v)):
            errors.append(f"{name}: expected an integer, got {v!r}")
            return v
        return int(v)
    if not _number(v):
        errors.append(f"{name}: expected a number, got {v!r}")
        return v
    return float(v)


def validate_config(raw: dict, strict: bool = True) -> ExperimentConfig:
    """Fill defaults and check every field; raise ConfigError listing all problems.

    Unknown keys are errors in strict mode and ignored otherwise.
    """
    if not isinstance(raw, dict):
        raise ConfigError([f"config must be a JSON object, got {type(raw).__name__}"])
    errors = []
    unknown = sorted(set(raw) - set(FIELDS))
    if unknown and strict:
        errors += [f"{k}: unknown key" for k in unknown]
    vals, applied = {}, []
    for name, f in FIELDS.items():
        if name in raw:
            vals[name] = _coerce(name, raw[name], errors)
        else:
            applied.append(name)
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(**vals, defaults_applied=tuple(applied))
    errors += _check(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _check(c: ExperimentConfig) -> list[str]:
    e = []
    for name in ("a0", "a1", "a2"):
        if not getattr(c, name) > 0:
            e.append(f"{name}: conductivity must be positive")
    if c.boundary_policy not in ("full", "removed", "scaled"):
        e.append(f"boundary_policy: must be full, removed or scaled, got {c.boundary_policy!r}")
    elif c.boundary_policy == "scaled":
        if not 0.0 < c.theta <= 2.0:
            e.append(f"theta: exponent {c.theta} outside (0, 2] for the scaled policy")
        if not 0.0 < c.A0t <= c.B0t:
            e.append("A0t, B0t: need 0 < A0t <= B0t for the scaled policy")
    for name in ("h_macro", "L", "L_fine", "tol"):
        if not getattr(c, name) > 0:
            e.append(f"{name}: must be positive")
    if c.h_cell is not None and not c.h_cell > 0:
        e.append("h_cell: must be positive")
    if c.h_cell is not None and c.h_cell > 0 and abs(1.0 / c.h_cell - round(1.0 / c.h_cell)) > 1e-9:
        e.append("h_cell: 1/h_cell must be an integer (elements per period)")
    for name in ("J", "Jc", "n_scan", "n_theta", "n_path", "k_bands", "maxiter", "dof_cap"):
        if not getattr(c, name) >= 1:
            e.append(f"{name}: must be at least 1")
    if c.gap_index < 0:
        e.append("gap_index: must be non-negative")
    if c.m < 4:
        e.append("m: need at least 4 elements per period")
    if c.lambda_max is not None and not c.lambda_max > 0:
        e.append("lambda_max: must be positive")
    for x in c.eps_list:
        n = 1.0 / x if x > 0 else 0.0
        if not x > 0 or abs(n - round(n)) > 1e-9 * n:
            e.append(f"eps_list: eps = {x} needs an integer reciprocal so the lattice aligns "
                     f"with the origin-centred box")
        elif abs(c.L_fine * round(n) - round(c.L_fine * round(n))) > 1e-9:
            e.append(f"L_fine: {c.L_fine} is not a whole number of periods for eps = {x}")
    if c.L > 0 and c.h_macro > 0 and abs(2 * c.L / c.h_macro - round(2 * c.L / c.h_macro)) > 1e-9:
        e.append("h_macro: 2L must be a multiple of h_macro")
    try:
        if not e:
            c.medium()
    except GeometryError as exc:
        e.append(f"medium: {exc}")
    return e


def load_config(path=None, overrides=(), strict: bool = True) -> ExperimentConfig:
    """Read a JSON config (or the defaults) and apply KEY=VALUE overrides."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    raw = dict(raw)
    errors = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            errors.append(f"override {item!r}: expected KEY=VALUE")
            continue
        try:
            raw[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            raw[key.strip()] = value
    if errors:
        raise ConfigError(errors)
    return validate_config(raw, strict=strict)
