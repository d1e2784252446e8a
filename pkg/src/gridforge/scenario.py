"""Declarative microgrid scenario description: units, inverters with their
lines and controller designs, load schedule, optional stiff grid and breaker,
and simulation timing. Loaded from versioned YAML and fully resolved (per-unit
conversion, controller synthesis) into immutable dataclasses."""

from __future__ import annotations

import hashlib
import importlib.resources
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

from .droop import LinePhasor
from .lineloop import LineModel
from .plant import InverterParams
from .synthesis import ControllerSet, DesignSpec, synthesize

__all__ = [
    "ValidationError",
    "NoVoltageSolution",
    "BaseUnits",
    "SimConfig",
    "LoadEvent",
    "LoadSpec",
    "BreakerEvent",
    "GridSpec",
    "InverterUnit",
    "Scenario",
    "build_scenario",
    "load_scenario",
    "scenario_from_yaml",
    "bundled_scenario_path",
    "list_bundled_scenarios",
    "apply_overrides",
]


class ValidationError(ValueError):
    """Scenario description failed validation; message carries the field path."""


class NoVoltageSolution(ValueError):
    """The islanded algebraic PCC solve cannot support the requested load."""


SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["version", "name", "sim", "inverters", "load"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "seed": {"type": "integer"},
        "base": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "v_base_v": _POS,
                "i_base_a": _POS,
                "f0_hz": _POS,
            },
        },
        "sim": {
            "type": "object",
            "required": ["duration_s"],
            "additionalProperties": False,
            "properties": {
                "dt_s": _POS,
                "control_dt_s": _POS,
                "duration_s": _POS,
                "record_every": {"type": "integer", "minimum": 1},
            },
        },
        "control": {"$ref": "#/$defs/control"},
        "droop": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"aggregate_f_slope_hz_per_pu": _POS},
        },
        "inverters": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["filter", "line"],
                "additionalProperties": False,
                "properties": {
                    "filter": {
                        "type": "object",
                        "required": ["c_f", "l_i_h", "r_i_ohm", "v_dc_v"],
                        "additionalProperties": False,
                        "properties": {
                            "c_f": _POS,
                            "l_i_h": _POS,
                            "r_i_ohm": _POS,
                            "v_dc_v": _POS,
                        },
                    },
                    "line": {
                        "type": "object",
                        "required": ["r_ohm", "x_ohm"],
                        "additionalProperties": False,
                        "properties": {
                            "r_ohm": {"type": "number", "minimum": 0},
                            "x_ohm": _POS,
                        },
                    },
                    "sharing": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "v0_v": _POS,
                    "i0_d_a": _NUM,
                    "i0_q_a": _NUM,
                    "theta0_rad": _NUM,
                    "control": {"$ref": "#/$defs/control"},
                },
            },
        },
        "load": {
            "type": "object",
            "required": ["kind", "schedule"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["resistance", "current", "direct"]},
                "pcc_mode": {"enum": ["algebraic", "capacitive"]},
                "bus_capacitance_f": _POS,
                "schedule": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["t_s"],
                        "additionalProperties": False,
                        "properties": {
                            "t_s": {"type": "number", "minimum": 0},
                            "value_pu": _NUM,
                            "d_a": _NUM,
                            "q_a": _NUM,
                        },
                    },
                },
            },
        },
        "grid": {
            "type": "object",
            "required": ["amplitude_v", "f_hz"],
            "additionalProperties": False,
            "properties": {
                "amplitude_v": _POS,
                "f_hz": _POS,
                "phase0_rad": _NUM,
                "sync_tol_rad": _POS,
                "breaker": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["t_s", "action"],
                        "additionalProperties": False,
                        "properties": {
                            "t_s": {"type": "number", "minimum": 0},
                            "action": {"enum": ["close", "open"]},
                        },
                    },
                },
            },
        },
    },
    "$defs": {
        "control": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["resistive", "inductive", "general"]},
                "wc_rad_s": _POS,
                "pm_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 90},
                "gamma_d_ohm": _POS,
                "gamma_q_ohm": _POS,
                "beta_lag": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta_q": {"type": "number", "minimum": 0},
                "notch_xi0": _POS,
            },
        }
    },
}


@dataclass(frozen=True)
class BaseUnits:
    v_base: float = 170.0
    i_base: float = 100.0
    f0: float = 60.0

    @property
    def s_base(self) -> float:
        return self.v_base * self.i_base

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.f0

    @property
    def r_base(self) -> float:
        return self.v_base / self.i_base


@dataclass(frozen=True)
class SimConfig:
    duration: float
    dt: float = 5e-6
    control_dt: float = 5e-5
    record_every: int = 20

    def __post_init__(self):
        n = self.control_dt / self.dt
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValidationError(
                "sim.control_dt_s must be an integer multiple of sim.dt_s"
            )

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.dt))

    @property
    def n_control_steps(self) -> int:
        return int(round(self.duration / self.control_dt))


@dataclass(frozen=True)
class LoadEvent:
    t: float
    value: float  # ohms (resistance), amps (current magnitude) or d-axis amps
    value_q: float = 0.0  # q-axis amps (direct injection only)


@dataclass(frozen=True)
class LoadSpec:
    kind: str
    events: tuple[LoadEvent, ...]
    pcc_mode: str = "algebraic"
    bus_capacitance: float = 1e-6


@dataclass(frozen=True)
class BreakerEvent:
    t: float
    close: bool


@dataclass(frozen=True)
class GridSpec:
    amplitude: float
    omega: float
    phase0: float = 0.0
    sync_tol: float = 0.02
    events: tuple[BreakerEvent, ...] = ()


@dataclass(frozen=True)
class InverterUnit:
    params: InverterParams
    line: LineModel
    controllers: ControllerSet
    sharing: float
    v0: float
    i0_d: float
    i0_q: float
    theta0: float
    design: DesignSpec


@dataclass(frozen=True)
class Scenario:
    name: str
    base: BaseUnits
    sim: SimConfig
    inverters: tuple[InverterUnit, ...]
    load: LoadSpec
    grid: Optional[GridSpec]
    seed: int
    source: dict = field(repr=False, default_factory=dict)

    def content_hash(self) -> str:
        canon = yaml.safe_dump(self.source, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


_CONTROL_DEFAULTS = {
    "family": "general",
    "wc_rad_s": 600.0,
    "pm_deg": 53.0,
    "gamma_d_ohm": 1.0,
    "gamma_q_ohm": None,
    "beta_lag": 0.01,
    "beta_q": None,
    "notch_xi0": None,
}


def _resolve_control(global_ctl: dict, local_ctl: dict) -> dict:
    out = dict(_CONTROL_DEFAULTS)
    out.update(global_ctl or {})
    out.update(local_ctl or {})
    return out


def build_scenario(config: dict) -> Scenario:
    """Validate a parsed scenario description and resolve it completely.

    Controller sets are synthesized from the control sections (per-inverter
    sections override the global one); per-unit load values are converted
    using the declared bases; setpoints default to sharing * nominal load.
    """
    try:
        jsonschema.validate(config, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"{path}: {exc.message}") from None

    base_cfg = config.get("base", {})
    base = BaseUnits(
        v_base=base_cfg.get("v_base_v", 170.0),
        i_base=base_cfg.get("i_base_a", 100.0),
        f0=base_cfg.get("f0_hz", 60.0),
    )
    sim_cfg = config["sim"]
    sim = SimConfig(
        duration=sim_cfg["duration_s"],
        dt=sim_cfg.get("dt_s", 5e-6),
        control_dt=sim_cfg.get("control_dt_s", 5e-5),
        record_every=sim_cfg.get("record_every", 20),
    )

    load_cfg = config["load"]
    kind = load_cfg["kind"]
    pcc_mode = load_cfg.get("pcc_mode", "algebraic" if kind == "resistance" else "capacitive")
    if kind == "current" and pcc_mode == "algebraic":
        raise NoVoltageSolution(
            "load.pcc_mode: a current-sink load has no algebraic islanded "
            "solution; use the capacitive bus mode"
        )
    if kind == "direct" and len(config["inverters"]) != 1:
        raise ValidationError("load.kind: direct injection supports exactly one inverter")

    events = []
    prev_t = -1.0
    for k, ev in enumerate(load_cfg["schedule"]):
        t = ev["t_s"]
        if t <= prev_t and k > 0:
            raise ValidationError(f"load.schedule.{k}.t_s: events must be time-sorted")
        prev_t = t
        if kind == "resistance":
            pu = ev.get("value_pu")
            if pu is None or pu <= 0:
                raise ValidationError(f"load.schedule.{k}.value_pu: required and > 0")
            events.append(LoadEvent(t, base.r_base / pu))
        elif kind == "current":
            pu = ev.get("value_pu")
            if pu is None or pu < 0:
                raise ValidationError(f"load.schedule.{k}.value_pu: required and >= 0")
            events.append(LoadEvent(t, pu * base.i_base))
        else:  # direct dq injection in the inverter frame
            events.append(LoadEvent(t, ev.get("d_a", 0.0), ev.get("q_a", 0.0)))
    if events[0].t != 0.0:
        raise ValidationError("load.schedule.0.t_s: schedule must start at t = 0")
    load = LoadSpec(
        kind=kind,
        events=tuple(events),
        pcc_mode=pcc_mode,
        bus_capacitance=load_cfg.get("bus_capacitance_f", 1e-6),
    )

    grid = None
    if "grid" in config:
        g = config["grid"]
        brk = tuple(
            BreakerEvent(ev["t_s"], ev["action"] == "close")
            for ev in g.get("breaker", [])
        )
        grid = GridSpec(
            amplitude=g["amplitude_v"],
            omega=2.0 * math.pi * g["f_hz"],
            phase0=g.get("phase0_rad", 0.0),
            sync_tol=g.get("sync_tol_rad", 0.02),
            events=brk,
        )
        if kind == "direct" and grid is not None:
            raise ValidationError("grid: not supported with direct load injection")

    slope = config.get("droop", {}).get("aggregate_f_slope_hz_per_pu")
    inv_cfgs = config["inverters"]
    n = len(inv_cfgs)
    shares = [ic.get("sharing", 1.0 / n) for ic in inv_cfgs]
    if abs(sum(shares) - 1.0) > 1e-6:
        raise ValidationError("inverters.*.sharing: sharing fractions must sum to 1")

    units = []
    default_offsets = [0.01 * i for i in range(n)]
    for k, ic in enumerate(inv_cfgs):
        f = ic["filter"]
        params = InverterParams(
            C=f["c_f"], L_i=f["l_i_h"], R_i=f["r_i_ohm"], v_dc=f["v_dc_v"]
        )
        lc = ic["line"]
        line_model = LineModel.from_xr(lc["r_ohm"], lc["x_ohm"], base.omega0)
        v0 = ic.get("v0_v", base.v_base)
        line_ph = LinePhasor(R=lc["r_ohm"], X=lc["x_ohm"], v2=v0, omega0=base.omega0)
        ctl = _resolve_control(config.get("control", {}), ic.get("control", {}))

        gamma_q = ctl["gamma_q_ohm"]
        if slope is not None:
            if ctl["family"] == "resistive":
                raise ValidationError(
                    "droop.aggregate_f_slope_hz_per_pu: the resistive family "
                    "droops frequency on reactive mismatch; set gamma_q_ohm "
                    "explicitly instead"
                )
            # per-unit frequency slope distributed inversely to sharing so the
            # aggregate deviation for a shared step matches the target
            alpha_q = 2.0 * math.pi * slope * v0 / (base.i_base * shares[k])
            gamma_q = alpha_q * line_ph.Zbar / line_ph.X
        if gamma_q is None:
            raise ValidationError(
                f"inverters.{k}.control.gamma_q_ohm: required unless an "
                "aggregate frequency-droop slope is given"
            )

        spec = DesignSpec(
            wc=ctl["wc_rad_s"],
            pm_deg=ctl["pm_deg"],
            line=line_ph,
            inverter=params,
            family=ctl["family"],
            gamma_d=ctl["gamma_d_ohm"],
            gamma_q=gamma_q,
            beta_lag=ctl["beta_lag"],
            beta_q=ctl["beta_q"],
            notch_xi0=ctl["notch_xi0"],
        )
        design = synthesize(spec)
        units.append(
            InverterUnit(
                params=params,
                line=line_model,
                controllers=design.controllers,
                sharing=shares[k],
                v0=v0,
                i0_d=ic.get("i0_d_a", shares[k] * base.i_base),
                i0_q=ic.get("i0_q_a", 0.0),
                theta0=ic.get("theta0_rad", default_offsets[k]),
                design=spec,
            )
        )

    return Scenario(
        name=config["name"],
        base=base,
        sim=sim,
        inverters=tuple(units),
        load=load,
        grid=grid,
        seed=config.get("seed", 0),
        source=config,
    )


def scenario_from_yaml(text: str) -> Scenario:
    config = yaml.safe_load(text)
    if not isinstance(config, dict):
        raise ValidationError("<root>: scenario file must contain a mapping")
    return build_scenario(config)


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        bundled = bundled_scenario_path(str(path))
        if bundled is not None:
            p = bundled
        else:
            raise FileNotFoundError(f"no scenario file or bundled scenario named {path!r}")
    return scenario_from_yaml(p.read_text())


def bundled_scenario_path(name: str) -> Optional[Path]:
    stem = name.removesuffix(".yaml")
    root = importlib.resources.files("gridforge") / "data"
    candidate = root / f"{stem}.yaml"
    return Path(str(candidate)) if candidate.is_file() else None


def list_bundled_scenarios() -> list[str]:
    root = importlib.resources.files("gridforge") / "data"
    return sorted(
        p.name.removesuffix(".yaml")
        for p in root.iterdir()
        if p.name.endswith(".yaml")
    )


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.0.c=value`` style overrides to a parsed config dict."""
    import copy

    out = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = out
        parts = key.split(".")
        for j, part in enumerate(parts[:-1]):
            idx = int(part) if isinstance(node, list) else part
            try:
                node = node[idx]
            except (KeyError, IndexError, TypeError):
                raise ValidationError(f"override path {key!r} has no node {part!r}")
            if not isinstance(node, (dict, list)):
                raise ValidationError(f"override path {key!r}: {part!r} is a leaf")
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return out
