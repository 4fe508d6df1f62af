"""Declarative configuration of domain geometry, grid, fluids and run parameters.

All quantities are SI (meters, seconds, kg) in double precision.  A
configuration is read from a single TOML file with sections [domain], [grid],
[fluids], [[pores]], [run] and the optional analysis sections [criterion] and
[quantum].  Unknown keys are validation errors, not silently ignored.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, asdict
from enum import IntEnum
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


class CellClass(IntEnum):
    SOLID = 0
    LIQUID = 1
    GAS = 2


class ConfigError(Exception):
    """Base class for configuration failures."""


class ParseError(ConfigError):
    """Config file could not be parsed as TOML."""


class ValidationError(ConfigError):
    """Config parsed but violates the schema (e.g. unknown keys)."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ResolutionError(ConfigError):
    """A pore is too narrow for the chosen grid (spans < 3 cells)."""


@dataclass(frozen=True)
class DomainSpec:
    """Rectangular domain with an internal horizontal solid wall.

    The wall slab occupies [wall_y, wall_y + wall_thickness]; liquid sits
    below wall_y, gas above the slab.
    """

    width: float = 6.0e-6
    height: float = 6.1e-6
    wall_y: float = 3.0e-6
    wall_thickness: float = 0.1e-6
    wall_enabled: bool = True  # False: open verification domain, no solid slab


@dataclass(frozen=True)
class PoreSpec:
    """A vertical through-pore in the wall, centered at x = sigma."""

    sigma: float
    diameter: float
    area: float = 0.0  # diameter * wall_thickness, filled in at parse time


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float
    dy: float

    @classmethod
    def for_domain(cls, domain: DomainSpec, nx: int, ny: int) -> "GridSpec":
        return cls(nx=nx, ny=ny, dx=domain.width / nx, dy=domain.height / ny)


@dataclass(frozen=True)
class FluidProps:
    rho_liquid: float = 1000.0
    rho_gas: float = 1.2
    eta_liquid: float = 1.0e-3
    eta_gas: float = 1.8e-5
    surface_tension: float = 0.072
    v_ref: float = 4.2e-9
    evaporation_rate: float = 0.0


@dataclass(frozen=True)
class RunParams:
    """Time stepping, driving mechanism and output cadence."""

    dt_max: float = 1.0e-3
    end_time: float = 0.0
    max_steps: int = 0
    snapshot_every: int = 100
    steady_tol: float = 1.0e-12
    # Driving mechanisms: "none", "pressure_offset" (phase pressure bias),
    # "laplace" (capillary forces only), "evaporation" (interface mass sink).
    driver: str = "none"
    pressure_offset: float = 0.0
    body_force_x: float = 0.0
    body_force_y: float = 0.0
    periodic_x: bool = False
    compression: float = 1.0
    initial_speed: float = 0.0


@dataclass(frozen=True)
class CriterionParams:
    """Inputs to the Landau-criterion bridge (see the landau module)."""

    mass: float = 2.99e-26          # H2O molecule
    number_density: float = 3.34e28  # liquid water
    form: str = "gaussian"
    g: float = 1.0e-52
    b: float = 1.0e-10
    tau: int = 1
    g_sweep_max: float = 1.0e-50
    g_sweep_points: int = 50


@dataclass(frozen=True)
class QuantumParams:
    """Inputs to the 2D mode-grid / Bose-Einstein stage."""

    box_length: float = 1.0e-6
    n_max: int = 8
    mass: float = 2.99e-26
    n_particles: float = 1.0e4
    temperature: float = 1.0


@dataclass(frozen=True)
class SimulationConfig:
    domain: DomainSpec
    grid: GridSpec
    fluids: FluidProps
    pores: tuple[PoreSpec, ...]
    run: RunParams
    criterion: CriterionParams = field(default_factory=CriterionParams)
    quantum: QuantumParams = field(default_factory=QuantumParams)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class CellMask:
    """Per-cell SOLID/LIQUID/GAS classification on the (ny, nx) grid."""

    classes: np.ndarray  # int8, shape (ny, nx)

    @property
    def solid(self) -> np.ndarray:
        return self.classes == CellClass.SOLID

    @property
    def liquid(self) -> np.ndarray:
        return self.classes == CellClass.LIQUID

    @property
    def gas(self) -> np.ndarray:
        return self.classes == CellClass.GAS


def equidistant_pores(n: int, diameter: float, domain: DomainSpec) -> tuple[PoreSpec, ...]:
    """Place n pores equidistant along the wall: sigma_k = k*width/(n+1).

    Reproduces the published 2-pore layout (2000/4000 nm in a 6 um wall);
    positions for >2 pores are a convention, not published values.
    """
    return tuple(
        PoreSpec(sigma=k * domain.width / (n + 1), diameter=diameter,
                 area=diameter * domain.wall_thickness)
        for k in range(1, n + 1)
    )


def validate_config(config: SimulationConfig) -> ValidationReport:
    """Check every schema invariant; returns violations as data, never raises."""
    v: list[str] = []
    d, g, f, r = config.domain, config.grid, config.fluids, config.run

    if not d.width > 0:
        v.append(f"domain.width must be > 0, got {d.width}")
    if not d.height > 0:
        v.append(f"domain.height must be > 0, got {d.height}")
    if d.wall_enabled:
        if not 0 < d.wall_y < d.height:
            v.append(f"domain.wall_y must lie inside (0, height), got {d.wall_y}")
        if not d.wall_thickness > 0:
            v.append(f"domain.wall_thickness must be > 0, got {d.wall_thickness}")
        if d.wall_y + d.wall_thickness >= d.height:
            v.append("wall slab extends beyond the domain top")
    else:
        if not 0 < d.wall_y <= d.height:
            v.append(f"domain.wall_y must lie inside (0, height], got {d.wall_y}")

    if g.nx < 16 or g.ny < 16:
        v.append(f"grid must be at least 16x16, got {g.nx}x{g.ny}")
    if g.dx <= 0 or g.dy <= 0:
        v.append("grid spacing must be positive")

    for i, p in enumerate(config.pores):
        if p.diameter <= 0:
            v.append(f"pores[{i}].diameter must be > 0, got {p.diameter}")
        if p.sigma - p.diameter / 2 < 0 or p.sigma + p.diameter / 2 > d.width:
            v.append(f"pores[{i}] extends outside the wall (sigma={p.sigma}, d={p.diameter})")
        if g.dx > 0 and p.diameter < 3 * g.dx:
            v.append(f"pores[{i}] spans fewer than 3 cells (d={p.diameter}, dx={g.dx})")
    for i in range(len(config.pores)):
        for j in range(i + 1, len(config.pores)):
            pi, pj = config.pores[i], config.pores[j]
            if abs(pi.sigma - pj.sigma) < (pi.diameter + pj.diameter) / 2:
                v.append(f"pores overlap: pores[{i}] and pores[{j}]")

    if f.rho_liquid <= 0 or f.rho_gas <= 0:
        v.append("densities must be positive")
    if f.eta_liquid <= 0 or f.eta_gas <= 0:
        v.append("viscosities must be positive")
    if f.surface_tension < 0:
        v.append("surface_tension must be >= 0")
    if f.v_ref <= 0:
        v.append("v_ref must be > 0")
    if f.evaporation_rate < 0:
        v.append("evaporation_rate must be >= 0")

    if r.dt_max <= 0:
        v.append("run.dt_max must be > 0")
    if r.driver not in ("none", "pressure_offset", "laplace", "evaporation"):
        v.append(f"run.driver unknown: {r.driver!r}")
    if r.end_time < 0 or r.max_steps < 0:
        v.append("run.end_time and run.max_steps must be >= 0")
    if r.compression < 0:
        v.append("run.compression must be >= 0")

    return ValidationReport(v)


def build_mask(domain: DomainSpec, pores, grid: GridSpec) -> CellMask:
    """Classify every cell as SOLID, LIQUID or GAS.

    SOLID exactly where the cell center lies inside the wall slab and outside
    every pore interval.  Pore-gap cells take the phase of the nearer
    reservoir.  Pure function of its arguments.
    """
    yc = (np.arange(grid.ny) + 0.5) * grid.dy
    xc = (np.arange(grid.nx) + 0.5) * grid.dx
    X, Y = np.meshgrid(xc, yc)

    classes = np.where(Y < domain.wall_y, CellClass.LIQUID, CellClass.GAS).astype(np.int8)
    if not domain.wall_enabled:
        return CellMask(classes=classes)
    in_wall = (Y >= domain.wall_y) & (Y <= domain.wall_y + domain.wall_thickness)

    in_pore = np.zeros_like(in_wall)
    wall_mid = domain.wall_y + domain.wall_thickness / 2
    for p in pores:
        gap = (X > p.sigma - p.diameter / 2) & (X < p.sigma + p.diameter / 2)
        n_cols = int(np.count_nonzero(np.any(gap, axis=0)))
        if n_cols < 3:
            raise ResolutionError(
                f"pore at sigma={p.sigma} spans {n_cols} cells (< 3); refine the grid"
            )
        in_pore |= gap & in_wall

    classes[in_wall & ~in_pore] = CellClass.SOLID
    pore_cells = in_wall & in_pore
    classes[pore_cells & (Y < wall_mid)] = CellClass.LIQUID
    classes[pore_cells & (Y >= wall_mid)] = CellClass.GAS
    return CellMask(classes=classes)


# ---------------------------------------------------------------------------
# TOML parsing / serialization

_SCHEMA = {
    "domain": {"width", "height", "wall_y", "wall_thickness", "wall_enabled"},
    "grid": {"nx", "ny"},
    "fluids": {"rho_liquid", "rho_gas", "eta_liquid", "eta_gas",
               "surface_tension", "v_ref", "evaporation_rate"},
    "pores": {"sigma", "diameter"},
    "run": {"dt_max", "end_time", "max_steps", "snapshot_every", "steady_tol",
            "driver", "pressure_offset", "body_force_x", "body_force_y",
            "periodic_x", "compression", "initial_speed"},
    "criterion": {"mass", "number_density", "form", "g", "b", "tau",
                  "g_sweep_max", "g_sweep_points"},
    "quantum": {"box_length", "n_max", "mass", "n_particles", "temperature"},
}


def _check_keys(section: str, data: dict, violations: list[str]) -> None:
    for key in data:
        if key not in _SCHEMA[section]:
            violations.append(f"unknown key [{section}].{key}")


def parse_config(path) -> SimulationConfig:
    """Parse a TOML config file, apply defaults and reject unknown keys.

    Raises ParseError for malformed TOML, ValidationError for unknown keys or
    invariant violations.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        doc = _toml.loads(raw.decode("utf-8"))
    except _toml.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> SimulationConfig:
    violations: list[str] = []
    for section in doc:
        if section not in _SCHEMA:
            violations.append(f"unknown section [{section}]")
    for section in ("domain", "grid", "fluids", "run", "criterion", "quantum"):
        if section in doc:
            _check_keys(section, doc[section], violations)
    for i, pore in enumerate(doc.get("pores", [])):
        _check_keys("pores", pore, violations)
    if violations:
        raise ValidationError(violations)

    dom = dict(doc.get("domain", {}))
    grd = dict(doc.get("grid", {}))
    nx = int(grd.get("nx", 96))
    ny = int(grd.get("ny", 96))
    wall_y = float(dom.get("wall_y", 3.0e-6))
    # Default wall thickness: about two cells of the chosen grid.
    wall_thickness = float(dom.get("wall_thickness", 2 * (2 * wall_y) / ny))
    height = float(dom.get("height", 2 * wall_y + wall_thickness))
    domain = DomainSpec(
        width=float(dom.get("width", 6.0e-6)),
        height=height,
        wall_y=wall_y,
        wall_thickness=wall_thickness,
        wall_enabled=bool(dom.get("wall_enabled", True)),
    )
    grid = GridSpec.for_domain(domain, nx, ny)
    fluids = FluidProps(**{k: float(v) for k, v in doc.get("fluids", {}).items()})
    pores = tuple(
        PoreSpec(sigma=float(p["sigma"]), diameter=float(p["diameter"]),
                 area=float(p["diameter"]) * domain.wall_thickness)
        for p in doc.get("pores", [])
    )
    run_raw = dict(doc.get("run", {}))
    for int_key in ("max_steps", "snapshot_every"):
        if int_key in run_raw:
            run_raw[int_key] = int(run_raw[int_key])
    if "periodic_x" in run_raw:
        run_raw["periodic_x"] = bool(run_raw["periodic_x"])
    run = RunParams(**run_raw)
    crit_raw = dict(doc.get("criterion", {}))
    if "tau" in crit_raw:
        crit_raw["tau"] = int(crit_raw["tau"])
    if "g_sweep_points" in crit_raw:
        crit_raw["g_sweep_points"] = int(crit_raw["g_sweep_points"])
    criterion = CriterionParams(**crit_raw)
    quant_raw = dict(doc.get("quantum", {}))
    if "n_max" in quant_raw:
        quant_raw["n_max"] = int(quant_raw["n_max"])
    quantum = QuantumParams(**quant_raw)

    config = SimulationConfig(domain=domain, grid=grid, fluids=fluids,
                              pores=pores, run=run, criterion=criterion,
                              quantum=quantum)
    report = validate_config(config)
    if not report.ok:
        raise ValidationError(report.violations)
    return config


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_config(config: SimulationConfig) -> str:
    """Emit the full config (defaults included) as TOML.

    parse(serialize(parse(f))) is the identity: all floats use repr, which
    round-trips exactly in binary64.
    """
    lines: list[str] = []

    def emit(section: str, obj, keys) -> None:
        lines.append(f"[{section}]")
        data = asdict(obj) if not isinstance(obj, dict) else obj
        for k in keys:
            lines.append(f"{k} = {_toml_value(data[k])}")
        lines.append("")

    emit("domain", config.domain, ["width", "height", "wall_y", "wall_thickness",
                                   "wall_enabled"])
    emit("grid", {"nx": config.grid.nx, "ny": config.grid.ny}, ["nx", "ny"])
    emit("fluids", config.fluids, ["rho_liquid", "rho_gas", "eta_liquid", "eta_gas",
                                   "surface_tension", "v_ref", "evaporation_rate"])
    for p in config.pores:
        lines.append("[[pores]]")
        lines.append(f"sigma = {_toml_value(p.sigma)}")
        lines.append(f"diameter = {_toml_value(p.diameter)}")
        lines.append("")
    emit("run", config.run, sorted(_SCHEMA["run"]))
    emit("criterion", config.criterion, sorted(_SCHEMA["criterion"]))
    emit("quantum", config.quantum, sorted(_SCHEMA["quantum"]))
    return "\n".join(lines)
