"""Stage orchestration: simulate -> sample -> landau -> quantum -> report.

Each stage reads the previous stage's files from the run directory, so any
stage can be re-run or fed externally produced inputs (e.g. a VTK velocity
field from another CFD code).  A manifest records config hash, tool version
and per-file digests; --resume skips stages whose outputs still verify.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__, trace, vtkio
from .config import SimulationConfig, serialize_config
from .landau import (InteractionForm, InteractionModel, LandauParams,
                     criterion_from_simulation, sweep_critical_velocity)
from .quantum import (build_mode_grid, condensate_fraction, ladder_operators,
                      solve_chemical_potential)
from .solver import run_simulation

ALL_STAGES = ("simulate", "sample", "landau", "quantum", "report")


class StageError(Exception):
    """A pipeline stage failed; earlier outputs are preserved."""


def config_hash(config: SimulationConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    stages_completed: list[str] = field(default_factory=list)
    files: dict[str, str] = field(default_factory=dict)

    def record(self, out_dir: Path, paths) -> None:
        for p in paths:
            p = Path(p)
            self.files[str(p.relative_to(out_dir))] = _digest(p)

    def save(self, out_dir: Path) -> None:
        (out_dir / "manifest.json").write_text(json.dumps(asdict(self), indent=1))

    @classmethod
    def load(cls, out_dir: Path) -> "RunManifest | None":
        path = out_dir / "manifest.json"
        if not path.exists():
            return None
        data = json.loads(path.read_text())
        return cls(**data)

    def verify(self, out_dir: Path, stage: str) -> bool:
        if stage not in self.stages_completed:
            return False
        for rel, digest in self.files.items():
            p = out_dir / rel
            if not p.exists() or _digest(p) != digest:
                return False
        return True


@dataclass
class ReportBundle:
    rows: list[dict]
    slope: float | None = None
    r_squared: float | None = None


def _interaction_model(config: SimulationConfig) -> InteractionModel:
    crit = config.criterion
    return InteractionModel(form=InteractionForm(crit.form), g=crit.g, b=crit.b)


def stage_simulate(config: SimulationConfig, out_dir: Path) -> list[Path]:
    run_simulation(config, out_dir=out_dir)
    return sorted(out_dir.glob("snapshot_*.vtk")) + [
        out_dir / "final.vtk", out_dir / "checkpoint.bin", out_dir / "summary.json"]


def stage_sample(config: SimulationConfig, out_dir: Path,
                 field_path=None) -> list[Path]:
    source = Path(field_path) if field_path else out_dir / "final.vtk"
    if not source.exists():
        raise StageError(f"sample stage needs a velocity field; missing {source}")
    snap = vtkio.read_vtk(source)

    par, perp = trace.sample_lines(snap, config.domain)
    trace.sample_table_to_csv(par, out_dir / "samples_parallel.csv")
    trace.sample_table_to_csv(perp, out_dir / "samples_perpendicular.csv")

    region = (0.0, 0.0, config.domain.width, config.domain.wall_y)
    seeds = trace.seed_equidistant(region, 10)
    h = min(snap.dx, snap.dy) / 2.0
    streamlines = [
        trace.trace_streamline(snap, s, step_length=h,
                               max_arc_length=4.0 * config.domain.width,
                               v_ref=config.fluids.v_ref)
        for s in seeds
    ]
    trace.streamlines_to_csv(streamlines, out_dir / "streamlines.csv")
    vtkio.write_streamlines_vtk(streamlines, out_dir / "streamlines.vtk")

    cores = trace.detect_vortices(snap)
    with open(out_dir / "vortices.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_m", "y_m", "peak_vorticity", "core_speed", "sense",
                    "paired_with"])
        for c in cores:
            w.writerow([repr(c.position[0]), repr(c.position[1]),
                        repr(c.peak_vorticity), repr(c.core_speed),
                        c.sense.value,
                        "" if c.paired_with is None else c.paired_with])
    return [out_dir / n for n in ("samples_parallel.csv",
                                  "samples_perpendicular.csv",
                                  "streamlines.csv", "streamlines.vtk",
                                  "vortices.csv")]


def stage_landau(config: SimulationConfig, out_dir: Path) -> list[Path]:
    tables = []
    for name in ("samples_parallel.csv", "samples_perpendicular.csv"):
        path = out_dir / name
        if not path.exists():
            raise StageError(f"landau stage needs sample tables; missing {path}")
        tables.append(trace.sample_table_from_csv(path))

    crit = config.criterion
    model = _interaction_model(config)
    result = criterion_from_simulation(tables, m=crit.mass,
                                       rho=crit.number_density, model=model,
                                       v_ref=config.fluids.v_ref, tau=crit.tau)
    with open(out_dir / "criterion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "q", "q_squared", "threshold", "satisfied",
                    "margin", "p_c"])
        w.writerow([config_hash(config)[:12], repr(result.q),
                    repr(result.q ** 2), repr(result.threshold),
                    int(result.satisfied), repr(result.margin), repr(result.p_c)])

    params = LandauParams(m=crit.mass, rho=crit.number_density,
                          p_c=max(result.p_c, 0.0), tau=crit.tau)
    g_values = np.linspace(0.0, crit.g_sweep_max, crit.g_sweep_points)
    curve = sweep_critical_velocity(params, model, list(g_values))
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["g", "v_c"])
        for g, v_c in curve:
            w.writerow([repr(g), repr(v_c)])
    return [out_dir / "criterion.csv", out_dir / "sweep.csv"]


def stage_quantum(config: SimulationConfig, out_dir: Path) -> list[Path]:
    q = config.quantum
    grid = build_mode_grid(q.box_length, q.n_max, q.mass)
    Q = solve_chemical_potential(grid, q.n_particles, q.temperature)
    frac = condensate_fraction(grid, q.n_particles, q.temperature)
    fock = ladder_operators(4)
    payload = {
        "box_length": q.box_length,
        "n_max": q.n_max,
        "mode_count": grid.mode_count,
        "chemical_potential_J": Q,
        "condensate_fraction": frac,
        "spectrum_lowest_J": list(grid.sorted_spectrum()[:10]),
        "fock_commutator_diagonal": list(np.diag(fock.commutator)),
    }
    (out_dir / "quantum.json").write_text(json.dumps(payload, indent=1))
    return [out_dir / "quantum.json"]


def stage_report(config: SimulationConfig, out_dir: Path) -> list[Path]:
    bundle = build_report([out_dir])
    _write_report(bundle, out_dir)
    return [out_dir / "report.csv", out_dir / "report.json"]


REPORT_COLUMNS = ["config_id", "pore_count", "diameter_m", "sigmas_m",
                  "v_c_estimate", "q_squared", "threshold", "satisfied",
                  "margin"]


def build_report(run_dirs) -> ReportBundle:
    """Combine criterion rows from one or more completed run directories.

    Fits v_c against pore count (the claimed linear trend is reported as a
    slope and R^2, not asserted).
    """
    rows = []
    for d in run_dirs:
        d = Path(d)
        crit_path = d / "criterion.csv"
        cfg_path = d / "config.toml"
        if not crit_path.exists():
            raise StageError(f"report needs {crit_path}")
        from .config import parse_config
        cfg = parse_config(cfg_path) if cfg_path.exists() else None
        with open(crit_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append({
                    "config_id": rec["config_id"],
                    "pore_count": len(cfg.pores) if cfg else None,
                    "diameter_m": cfg.pores[0].diameter if cfg and cfg.pores else None,
                    "sigmas_m": ";".join(repr(p.sigma) for p in cfg.pores) if cfg else "",
                    "v_c_estimate": float(rec["p_c"]) / (cfg.criterion.mass if cfg else 1.0),
                    "q_squared": float(rec["q_squared"]),
                    "threshold": float(rec["threshold"]),
                    "satisfied": bool(int(rec["satisfied"])),
                    "margin": float(rec["margin"]),
                })

    slope = r2 = None
    pts = [(r["pore_count"], r["v_c_estimate"]) for r in rows
           if r["pore_count"] is not None]
    if len({p for p, _ in pts}) >= 2:
        x = np.array([p for p, _ in pts], dtype=float)
        y = np.array([v for _, v in pts])
        slope_, intercept = np.polyfit(x, y, 1)
        pred = slope_ * x + intercept
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - np.mean(y)) ** 2))
        slope = float(slope_)
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ReportBundle(rows=rows, slope=slope, r_squared=r2)


def _write_report(bundle: ReportBundle, out_dir: Path) -> None:
    with open(out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in bundle.rows:
            w.writerow([r["config_id"], r["pore_count"],
                        repr(r["diameter_m"]) if r["diameter_m"] is not None else "",
                        r["sigmas_m"], repr(r["v_c_estimate"]),
                        repr(r["q_squared"]), repr(r["threshold"]),
                        int(r["satisfied"]), repr(r["margin"])])
    payload = {"rows": bundle.rows, "slope": bundle.slope,
               "r_squared": bundle.r_squared}
    (out_dir / "report.json").write_text(json.dumps(payload, indent=1))


_STAGE_FUNCS = {
    "simulate": stage_simulate,
    "sample": stage_sample,
    "landau": stage_landau,
    "quantum": stage_quantum,
    "report": stage_report,
}


def run_pipeline(config: SimulationConfig, stages=ALL_STAGES, out_dir=".",
                 resume: bool = False, field_path=None
                 ) -> tuple[ReportBundle | None, RunManifest]:
    """Execute the requested stages in canonical order.

    A stage failure aborts later stages but preserves earlier outputs.
    Returns the report bundle (if the report stage ran) and the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = [s for s in ALL_STAGES if s in set(stages)]

    chash = config_hash(config)
    manifest = RunManifest.load(out) if resume else None
    if manifest is None or manifest.config_hash != chash:
        manifest = RunManifest(config_hash=chash)
    manifest.started_at = manifest.started_at or _now()

    (out / "config.toml").write_text(serialize_config(config))
    manifest.record(out, [out / "config.toml"])

    bundle = None
    for stage in stages:
        if resume and manifest.verify(out, stage):
            continue
        func = _STAGE_FUNCS[stage]
        try:
            if stage == "sample":
                paths = func(config, out, field_path=field_path)
            else:
                paths = func(config, out)
        except Exception:
            manifest.finished_at = _now()
            manifest.save(out)
            raise
        manifest.record(out, paths)
        if stage not in manifest.stages_completed:
            manifest.stages_completed.append(stage)
        manifest.save(out)
        if stage == "report":
            bundle = build_report([out])

    manifest.finished_at = _now()
    manifest.save(out)
    return bundle, manifest


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
