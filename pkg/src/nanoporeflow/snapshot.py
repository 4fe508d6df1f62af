"""Immutable cell-centered field snapshots and velocity interpolation.

A FieldSnapshot is the unit of exchange between the solver, the VTK writer
and the analysis code: cell-centered u, v, p, gamma plus the cell mask.
Staggered solver fields are averaged to centers once, so the in-pipeline and
external-file analysis paths see bit-identical data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CellClass


class OutOfDomainError(Exception):
    """Query point lies outside the domain rectangle."""


@dataclass(frozen=True)
class FieldSnapshot:
    dx: float
    dy: float
    u: np.ndarray       # (ny, nx) cell-centered x-velocity
    v: np.ndarray       # (ny, nx) cell-centered y-velocity
    p: np.ndarray       # (ny, nx)
    gamma: np.ndarray   # (ny, nx)
    mask: np.ndarray    # (ny, nx) int8 CellClass codes
    t: float = 0.0
    step: int = 0

    @property
    def ny(self) -> int:
        return self.u.shape[0]

    @property
    def nx(self) -> int:
        return self.u.shape[1]

    @property
    def width(self) -> float:
        return self.nx * self.dx

    @property
    def height(self) -> float:
        return self.ny * self.dy

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(j, i) indices of the cell containing the point (clamped to grid)."""
        i = min(max(int(x / self.dx), 0), self.nx - 1)
        j = min(max(int(y / self.dy), 0), self.ny - 1)
        return j, i

    def in_solid(self, x: float, y: float) -> bool:
        j, i = self.cell_of(x, y)
        return self.mask[j, i] == CellClass.SOLID


def _pad_linear(a: np.ndarray) -> np.ndarray:
    """Pad with one ghost layer by linear extrapolation (exact for linear fields)."""
    out = np.empty((a.shape[0] + 2, a.shape[1] + 2), dtype=a.dtype)
    out[1:-1, 1:-1] = a
    out[0, 1:-1] = 2 * a[0] - a[1]
    out[-1, 1:-1] = 2 * a[-1] - a[-2]
    out[:, 0] = 2 * out[:, 1] - out[:, 2]
    out[:, -1] = 2 * out[:, -2] - out[:, -3]
    return out


def _bilinear(padded: np.ndarray, gx: float, gy: float) -> float:
    i0 = int(np.floor(gx))
    j0 = int(np.floor(gy))
    i0 = min(max(i0, 0), padded.shape[1] - 2)
    j0 = min(max(j0, 0), padded.shape[0] - 2)
    fx = gx - i0
    fy = gy - j0
    return float(
        padded[j0, i0] * (1 - fx) * (1 - fy)
        + padded[j0, i0 + 1] * fx * (1 - fy)
        + padded[j0 + 1, i0] * (1 - fx) * fy
        + padded[j0 + 1, i0 + 1] * fx * fy
    )


class VelocityInterpolator:
    """Bilinear interpolation of a snapshot's velocity to arbitrary points.

    Ghost layers are linearly extrapolated so any field linear in x and y is
    reproduced exactly throughout the domain, boundary cells included.
    """

    def __init__(self, snapshot: FieldSnapshot):
        self.snapshot = snapshot
        self._u = _pad_linear(snapshot.u)
        self._v = _pad_linear(snapshot.v)

    def __call__(self, x: float, y: float) -> tuple[float, float]:
        snap = self.snapshot
        if not snap.contains(x, y):
            raise OutOfDomainError(f"point ({x}, {y}) outside domain")
        if snap.in_solid(x, y):
            return (0.0, 0.0)
        gx = x / snap.dx - 0.5 + 1.0  # padded index space
        gy = y / snap.dy - 0.5 + 1.0
        return (_bilinear(self._u, gx, gy), _bilinear(self._v, gx, gy))


def interpolate_velocity(snapshot: FieldSnapshot, point) -> tuple[float, float]:
    """One-off bilinear velocity lookup; see VelocityInterpolator for batches."""
    x, y = point
    return VelocityInterpolator(snapshot)(x, y)
