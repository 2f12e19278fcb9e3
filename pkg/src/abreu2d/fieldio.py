"""Text field files (.fld).

Layout: line 1 "nx ny xmin xmax ymin ymax", line 2 "field <name> <kind>",
optional line "dualgrid" for fields living on a gradient-image grid, then
ny*nx value lines row-major (y outer).  EXTERIOR nodes are written as nan per
component.  Values use repr-precision so write/read round-trips bit-exactly.
"""

from collections import namedtuple

import numpy as np

from .geometry import ScalarField, SymMatField, VectorField

_KINDS = {"scalar": 1, "vector": 2, "symmat": 3}

RawField = namedtuple("RawField", ["name", "kind", "nx", "ny", "bbox", "arrays", "dualgrid"])


def _fmt(v):
    return format(v, ".17g")


def write_field(path, field, name, dualgrid=False):
    grid = field.grid
    comps = field.components
    lines = []
    xmin, xmax, ymin, ymax = grid.bbox
    lines.append(" ".join([str(grid.nx), str(grid.ny), _fmt(xmin), _fmt(xmax), _fmt(ymin), _fmt(ymax)]))
    lines.append(f"field {name} {field.kind}")
    if dualgrid:
        lines.append("dualgrid")
    mask = grid.inside
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            if mask[iy, ix]:
                lines.append(" ".join(_fmt(c[iy, ix]) for c in comps))
            else:
                lines.append(" ".join(["nan"] * len(comps)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    nx, ny = int(head[0]), int(head[1])
    bbox = tuple(float(v) for v in head[2:6])
    tag, name, kind = lines[1].split()
    if tag != "field" or kind not in _KINDS:
        raise ValueError("bad field header: %r" % lines[1])
    row = 2
    dual = False
    if row < len(lines) and lines[row].strip() == "dualgrid":
        dual = True
        row += 1
    ncomp = _KINDS[kind]
    data = np.empty((ny * nx, ncomp))
    for k in range(ny * nx):
        parts = lines[row + k].split()
        if len(parts) != ncomp:
            raise ValueError("line %d: expected %d values" % (row + k + 1, ncomp))
        data[k] = [float(p) for p in parts]
    arrays = tuple(data[:, j].reshape(ny, nx) for j in range(ncomp))
    return RawField(name, kind, nx, ny, bbox, arrays, dual)


def attach(raw, grid):
    """Bind a RawField to a compatible grid, restoring the typed field."""
    if (raw.nx, raw.ny) != (grid.nx, grid.ny):
        raise ValueError("grid shape mismatch: file %s vs grid %s"
                         % ((raw.nx, raw.ny), (grid.nx, grid.ny)))
    if not np.allclose(raw.bbox, grid.bbox, rtol=0, atol=1e-12):
        raise ValueError("grid bbox mismatch")
    if raw.kind == "scalar":
        return ScalarField(grid, raw.arrays[0])
    if raw.kind == "vector":
        return VectorField(grid, *raw.arrays)
    return SymMatField(grid, *raw.arrays)
