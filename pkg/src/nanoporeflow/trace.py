"""Flow measurement toolkit: streamlines, sampling lines, vorticity, vortex
cores and the pooled-histogram critical-velocity estimator.

All operations are pure functions of immutable FieldSnapshots.  Sampling-line
convention: "parallel" lines run horizontally inside the liquid region
(labels a..e bottom to top), "perpendicular" lines run vertically across the
full domain height, crossing the wall into the gas region (labels a..e left
to right).  Five lines per orientation, ten probes per line, all inset by one
spacing from the boundaries.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import DomainSpec
from .snapshot import FieldSnapshot, VelocityInterpolator, OutOfDomainError

LINE_LABELS = ("a", "b", "c", "d", "e")
N_LINES = 5
N_POINTS = 10
STAGNATION_FACTOR = 1.0e-3
DEFAULT_V_REF = 4.2e-9


class Orientation(str, Enum):
    PARALLEL = "parallel"
    PERPENDICULAR = "perpendicular"


class TerminalReason(str, Enum):
    MAX_LENGTH = "max_length"
    LEFT_DOMAIN = "left_domain"
    STAGNATION = "stagnation"


class Sense(str, Enum):
    CW = "cw"
    CCW = "ccw"


class DegenerateInput(Exception):
    """All pooled speeds identical; the estimate is trivially that value."""


@dataclass(frozen=True)
class ProbePoint:
    x: float
    y: float
    ux: float
    uy: float
    speed: float
    in_solid: bool = False


@dataclass(frozen=True)
class SampleLine:
    label: str
    position: float           # y for parallel lines, x for perpendicular
    points: tuple[ProbePoint, ...]


@dataclass(frozen=True)
class SampleTable:
    orientation: Orientation
    lines: tuple[SampleLine, ...]

    def all_speeds(self, include_solid: bool = False) -> np.ndarray:
        return np.array([pt.speed for ln in self.lines for pt in ln.points
                         if include_solid or not pt.in_solid])

    def line_mean_speeds(self) -> np.ndarray:
        return np.array([
            np.mean([pt.speed for pt in ln.points if not pt.in_solid])
            if any(not pt.in_solid for pt in ln.points) else 0.0
            for ln in self.lines
        ])


@dataclass(frozen=True)
class Streamline:
    seed: tuple[float, float]
    vertices: tuple[tuple[float, float], ...]
    terminal_reason: TerminalReason


@dataclass(frozen=True)
class VortexCore:
    position: tuple[float, float]
    peak_vorticity: float
    core_speed: float
    sense: Sense
    paired_with: int | None = None


@dataclass(frozen=True)
class CriticalVelocityEstimate:
    speed: float
    bin_edges: np.ndarray
    counts: np.ndarray
    degenerate: bool = False


def trace_streamline(snapshot: FieldSnapshot, seed, step_length: float,
                     max_arc_length: float,
                     v_ref: float = DEFAULT_V_REF) -> Streamline:
    """Integrate dx/ds = v/|v| with classical RK4 at fixed arc-length step.

    Terminates on max arc length, leaving the domain (or entering solid), or
    local speed below 1e-3 * v_ref (stagnation).
    """
    interp = VelocityInterpolator(snapshot)
    x, y = float(seed[0]), float(seed[1])
    if not snapshot.contains(x, y) or snapshot.in_solid(x, y):
        raise OutOfDomainError(f"seed ({x}, {y}) not inside the fluid")

    stag = STAGNATION_FACTOR * v_ref

    def direction(px, py):
        ux, uy = interp(px, py)
        s = np.hypot(ux, uy)
        if s < stag:
            return None
        return ux / s, uy / s

    vertices = [(x, y)]
    d0 = direction(x, y)
    if d0 is None:
        return Streamline(seed=(x, y), vertices=tuple(vertices),
                          terminal_reason=TerminalReason.STAGNATION)

    h = step_length
    arc = 0.0
    reason = TerminalReason.MAX_LENGTH
    while arc + h <= max_arc_length + 1e-12 * max_arc_length:
        try:
            k1 = direction(x, y)
            if k1 is None:
                reason = TerminalReason.STAGNATION
                break
            k2 = direction(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1])
            if k2 is None:
                reason = TerminalReason.STAGNATION
                break
            k3 = direction(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1])
            if k3 is None:
                reason = TerminalReason.STAGNATION
                break
            k4 = direction(x + h * k3[0], y + h * k3[1])
            if k4 is None:
                reason = TerminalReason.STAGNATION
                break
        except OutOfDomainError:
            reason = TerminalReason.LEFT_DOMAIN
            break
        nx_ = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        ny_ = y + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not snapshot.contains(nx_, ny_) or snapshot.in_solid(nx_, ny_):
            reason = TerminalReason.LEFT_DOMAIN
            break
        x, y = nx_, ny_
        vertices.append((x, y))
        arc += h
    return Streamline(seed=(float(seed[0]), float(seed[1])),
                      vertices=tuple(vertices), terminal_reason=reason)


def seed_equidistant(region, n: int) -> list[tuple[float, float]]:
    """n seeds on a uniform lattice covering region = (x0, y0, x1, y1).

    The rows x cols factorization of n is chosen so lattice cells are as
    square as possible; seeds sit at lattice cell centers.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x0, y0, x1, y1 = region
    w, h = x1 - x0, y1 - y0
    best = None
    for cols in range(1, n + 1):
        if n % cols:
            continue
        rows = n // cols
        cost = abs(w / cols - h / rows)
        if best is None or cost < best[0]:
            best = (cost, cols, rows)
    _, cols, rows = best
    return [
        (x0 + (i + 0.5) * w / cols, y0 + (j + 0.5) * h / rows)
        for j in range(rows) for i in range(cols)
    ]


def _probe(interp: VelocityInterpolator, snapshot: FieldSnapshot,
           x: float, y: float) -> ProbePoint:
    in_solid = snapshot.in_solid(x, y)
    ux, uy = interp(x, y)
    return ProbePoint(x=x, y=y, ux=ux, uy=uy,
                      speed=float(np.hypot(ux, uy)), in_solid=in_solid)


def sample_lines(snapshot: FieldSnapshot, domain: DomainSpec
                 ) -> tuple[SampleTable, SampleTable]:
    """Build the five-line / ten-probe tables for both orientations."""
    interp = VelocityInterpolator(snapshot)

    par_lines = []
    for k in range(1, N_LINES + 1):
        y = k * domain.wall_y / (N_LINES + 1)
        pts = tuple(
            _probe(interp, snapshot, j * domain.width / (N_POINTS + 1), y)
            for j in range(1, N_POINTS + 1)
        )
        par_lines.append(SampleLine(label=LINE_LABELS[k - 1], position=y, points=pts))

    height = snapshot.height
    perp_lines = []
    for k in range(1, N_LINES + 1):
        x = k * domain.width / (N_LINES + 1)
        pts = tuple(
            _probe(interp, snapshot, x, j * height / (N_POINTS + 1))
            for j in range(1, N_POINTS + 1)
        )
        perp_lines.append(SampleLine(label=LINE_LABELS[k - 1], position=x, points=pts))

    return (SampleTable(orientation=Orientation.PARALLEL, lines=tuple(par_lines)),
            SampleTable(orientation=Orientation.PERPENDICULAR, lines=tuple(perp_lines)))


def vorticity_field(snapshot: FieldSnapshot) -> np.ndarray:
    """omega = dv/dx - du/dy at cell centers (centered interior, one-sided edges)."""
    dvdx = np.gradient(snapshot.v, snapshot.dx, axis=1, edge_order=1)
    dudy = np.gradient(snapshot.u, snapshot.dy, axis=0, edge_order=1)
    return dvdx - dudy


def detect_vortices(snapshot: FieldSnapshot, threshold_factor: float = 2.0,
                    pair_distance: float | None = None) -> list[VortexCore]:
    """Vortex cores: 3x3-local |omega| maxima above threshold_factor * RMS(omega)
    whose nearby speed minimum is itself a 3x3-local minimum.  Cores of
    opposite sense within pair_distance are flagged as pairs."""
    from .config import CellClass

    omega = vorticity_field(snapshot)
    fluid = snapshot.mask != CellClass.SOLID
    if not np.any(fluid):
        return []
    rms = float(np.sqrt(np.mean(omega[fluid] ** 2)))
    if rms == 0.0:
        return []
    threshold = threshold_factor * rms

    speed = np.hypot(snapshot.u, snapshot.v)
    # Solid cells carry spurious one-sided-gradient vorticity; keep them out
    # of the local-extremum comparison (RMS above is fluid-only too).
    abs_om = np.where(fluid, np.abs(omega), 0.0)
    om_max = ndimage.maximum_filter(abs_om, size=3, mode="nearest")
    sp_min = ndimage.minimum_filter(np.where(fluid, speed, np.inf),
                                    size=3, mode="nearest")

    ny, nx = omega.shape
    cores: list[VortexCore] = []
    seen: set[tuple[int, int]] = set()
    cand = np.argwhere((abs_om >= om_max) & (abs_om > threshold) & fluid)
    for j, i in cand:
        j0, j1 = max(j - 1, 0), min(j + 2, ny)
        i0, i1 = max(i - 1, 0), min(i + 2, nx)
        window = speed[j0:j1, i0:i1]
        dj, di = np.unravel_index(np.argmin(window), window.shape)
        mj, mi = j0 + dj, i0 + di
        if speed[mj, mi] > sp_min[mj, mi]:
            continue
        if (mj, mi) in seen:
            continue
        seen.add((mj, mi))
        cores.append(VortexCore(
            position=((mi + 0.5) * snapshot.dx, (mj + 0.5) * snapshot.dy),
            peak_vorticity=float(omega[j, i]),
            core_speed=float(speed[mj, mi]),
            sense=Sense.CCW if omega[j, i] > 0 else Sense.CW,
        ))

    if pair_distance is None:
        pair_distance = 0.5 * max(snapshot.width, snapshot.height)
    paired = [None] * len(cores)
    for a in range(len(cores)):
        if paired[a] is not None:
            continue
        best = None
        for b in range(len(cores)):
            if b == a or paired[b] is not None:
                continue
            if cores[a].sense == cores[b].sense:
                continue
            d = np.hypot(cores[a].position[0] - cores[b].position[0],
                         cores[a].position[1] - cores[b].position[1])
            if d <= pair_distance and (best is None or d < best[0]):
                best = (d, b)
        if best is not None:
            b = best[1]
            paired[a], paired[b] = b, a
    return [
        VortexCore(position=c.position, peak_vorticity=c.peak_vorticity,
                   core_speed=c.core_speed, sense=c.sense, paired_with=paired[k])
        for k, c in enumerate(cores)
    ]


def estimate_critical_velocity(tables) -> CriticalVelocityEstimate:
    """Histogram mode of all pooled probe speeds (the convergence velocity).

    Bin width is (p90 - p10)/20 of the pooled speeds; ties break toward the
    lower bin.  Invariant under permutation of the input tables.
    """
    tables = list(tables)
    if not tables:
        raise ValueError("at least one sample table is required")
    pooled = np.concatenate([t.all_speeds() for t in tables])
    pooled = np.sort(pooled)
    lo, hi = float(pooled[0]), float(pooled[-1])
    if hi == lo:
        return CriticalVelocityEstimate(speed=lo, bin_edges=np.array([lo, lo]),
                                        counts=np.array([len(pooled)]),
                                        degenerate=True)
    p10, p90 = np.percentile(pooled, [10.0, 90.0])
    width = (p90 - p10) / 20.0
    if width <= 0:
        width = (hi - lo) / 20.0
    n_bins = int(np.ceil((hi - lo) / width))
    edges = lo + width * np.arange(n_bins + 1)
    edges[-1] = max(edges[-1], hi)
    counts, edges = np.histogram(pooled, bins=edges)
    k = int(np.argmax(counts))  # argmax returns the first (lowest) max bin
    center = 0.5 * (edges[k] + edges[k + 1])
    return CriticalVelocityEstimate(speed=float(center), bin_edges=edges,
                                    counts=counts)


# ---------------------------------------------------------------------------
# CSV serialization

SAMPLE_CSV_COLUMNS = ["orientation", "line_label", "line_position_m",
                      "point_index", "x_m", "y_m", "speed_m_per_s",
                      "ux", "uy", "in_solid"]


def sample_table_to_csv(table: SampleTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SAMPLE_CSV_COLUMNS)
        for ln in table.lines:
            for idx, pt in enumerate(ln.points):
                w.writerow([table.orientation.value, ln.label, repr(ln.position),
                            idx, repr(pt.x), repr(pt.y), repr(pt.speed),
                            repr(pt.ux), repr(pt.uy), int(pt.in_solid)])


def sample_table_from_csv(path) -> SampleTable:
    lines: dict[tuple[str, float], list[ProbePoint]] = {}
    orientation = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            orientation = Orientation(row["orientation"])
            key = (row["line_label"], float(row["line_position_m"]))
            lines.setdefault(key, []).append(ProbePoint(
                x=float(row["x_m"]), y=float(row["y_m"]),
                ux=float(row["ux"]), uy=float(row["uy"]),
                speed=float(row["speed_m_per_s"]),
                in_solid=bool(int(row["in_solid"])),
            ))
    if orientation is None:
        raise ValueError(f"{path}: empty sample table")
    return SampleTable(
        orientation=orientation,
        lines=tuple(SampleLine(label=k[0], position=k[1], points=tuple(v))
                    for k, v in lines.items()),
    )


def streamlines_to_csv(streamlines, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["streamline_index", "vertex_index", "x_m", "y_m",
                    "terminal_reason"])
        for si, sl in enumerate(streamlines):
            for vi, (x, y) in enumerate(sl.vertices):
                w.writerow([si, vi, repr(x), repr(y), sl.terminal_reason.value])
