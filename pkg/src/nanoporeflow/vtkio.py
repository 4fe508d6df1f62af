"""Legacy-VTK structured-points output for field snapshots.

ASCII header plus big-endian binary payload, per the legacy VTK format.
Points are cell centers (ORIGIN at dx/2, dy/2).  Doubles round-trip exactly,
so write -> read -> write is byte-identical; the snapshot time and step are
carried in the title line.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .snapshot import FieldSnapshot

_FIELDS = ("u", "v", "p", "gamma")


class VtkError(Exception):
    pass


def write_vtk(snapshot: FieldSnapshot, path) -> None:
    """Write a snapshot as legacy VTK structured points (binary payload).

    Refuses non-finite data, reporting the first offending field and cell.
    """
    for name in _FIELDS:
        arr = getattr(snapshot, name)
        if not np.all(np.isfinite(arr)):
            j, i = np.argwhere(~np.isfinite(arr))[0]
            raise VtkError(f"non-finite value in field '{name}' at cell "
                           f"(j={j}, i={i}); refusing to write {path}")

    nx, ny = snapshot.nx, snapshot.ny
    header = (
        "# vtk DataFile Version 3.0\n"
        f"nanoporeflow t={snapshot.t!r} step={snapshot.step}\n"
        "BINARY\n"
        "DATASET STRUCTURED_POINTS\n"
        f"DIMENSIONS {nx} {ny} 1\n"
        f"ORIGIN {snapshot.dx / 2!r} {snapshot.dy / 2!r} 0.0\n"
        f"SPACING {snapshot.dx!r} {snapshot.dy!r} 1.0\n"
        f"POINT_DATA {nx * ny}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for name in _FIELDS:
            arr = np.ascontiguousarray(getattr(snapshot, name), dtype=">f8")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n".encode("ascii"))
            fh.write(arr.tobytes())
            fh.write(b"\n")
        mask = np.ascontiguousarray(snapshot.mask, dtype=">i4")
        fh.write(b"SCALARS mask int 1\nLOOKUP_TABLE default\n")
        fh.write(mask.tobytes())
        fh.write(b"\n")


def read_vtk(path) -> FieldSnapshot:
    """Read a file written by write_vtk back into a snapshot (bitwise equal)."""
    data = Path(path).read_bytes()

    def next_line(pos):
        end = data.index(b"\n", pos)
        return data[pos:end].decode("ascii"), end + 1

    pos = 0
    line, pos = next_line(pos)
    if not line.startswith("# vtk DataFile"):
        raise VtkError(f"{path}: not a legacy VTK file")
    title, pos = next_line(pos)
    t, step = 0.0, 0
    for tok in title.split():
        if tok.startswith("t="):
            t = float(tok[2:])
        elif tok.startswith("step="):
            step = int(tok[5:])
    fmt, pos = next_line(pos)
    if fmt.strip() != "BINARY":
        raise VtkError(f"{path}: expected BINARY payload, got {fmt!r}")
    dataset, pos = next_line(pos)
    dims, pos = next_line(pos)
    nx, ny, _nz = (int(x) for x in dims.split()[1:])
    origin, pos = next_line(pos)
    spacing, pos = next_line(pos)
    dx, dy = (float(x) for x in spacing.split()[1:3])
    npoints_line, pos = next_line(pos)
    n = nx * ny

    fields = {}
    while pos < len(data):
        try:
            line, pos = next_line(pos)
        except ValueError:
            break
        if not line.startswith("SCALARS"):
            continue
        _, name, dtype_name = line.split()[:3]
        _lut, pos = next_line(pos)
        if dtype_name == "double":
            raw = np.frombuffer(data, dtype=">f8", count=n, offset=pos)
            pos += 8 * n
        elif dtype_name == "int":
            raw = np.frombuffer(data, dtype=">i4", count=n, offset=pos)
            pos += 4 * n
        else:
            raise VtkError(f"{path}: unsupported scalar type {dtype_name}")
        fields[name] = raw.reshape(ny, nx)
        pos += 1  # trailing newline

    missing = [f for f in (*_FIELDS, "mask") if f not in fields]
    if missing:
        raise VtkError(f"{path}: missing fields {missing}")
    return FieldSnapshot(
        dx=dx, dy=dy,
        u=fields["u"].astype(np.float64),
        v=fields["v"].astype(np.float64),
        p=fields["p"].astype(np.float64),
        gamma=fields["gamma"].astype(np.float64),
        mask=fields["mask"].astype(np.int8),
        t=t, step=step,
    )


def write_streamlines_vtk(streamlines, path) -> None:
    """Streamline polylines as ASCII legacy VTK POLYDATA."""
    points = []
    lines = []
    offset = 0
    for sl in streamlines:
        npts = len(sl.vertices)
        points.extend(sl.vertices)
        lines.append([npts] + list(range(offset, offset + npts)))
        offset += npts
    out = [
        "# vtk DataFile Version 3.0",
        "nanoporeflow streamlines",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {len(points)} double",
    ]
    out.extend(f"{x!r} {y!r} 0.0" for x, y in points)
    total = sum(len(l) for l in lines)
    out.append(f"LINES {len(lines)} {total}")
    out.extend(" ".join(str(i) for i in l) for l in lines)
    Path(path).write_text("\n".join(out) + "\n")
