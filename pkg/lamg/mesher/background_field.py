"""
Background size fields in Gmsh post-processing (`.pos`) scalar-point form:

    View "background" {
    SP(x,y,z){s};
    ...
    };
"""
import logging
import re
from pathlib import Path

import numpy as np

from lamg.mesher.sizing import SizingField, scale

logger = logging.getLogger(__name__)

_SCALAR_POINT = re.compile(r"SP\(([^,]+),([^,]+),([^)]+)\)\{([^}]+)\}")


def export_background_field(path: str, field: SizingField, eta: float = 1.0) -> int:
    """
    Write eta-scaled physical sizes as a `.pos` scalar-point view.

    Returns:
        int: Number of points written
    """
    sizes = scale(field, eta).sizes
    with Path(path).open("w", encoding="utf-8") as f:
        f.write('View "background" {\n')
        for (x, y, z), s in zip(field.points, sizes):
            f.write(f"SP({x:.17g},{y:.17g},{z:.17g}){{{s:.17g}}};\n")
        f.write("};\n")
    logger.info(f"Wrote {field.n} background sizes to {path}")
    return field.n


def read_background_field(path: str) -> SizingField:
    rows = [[float(v) for v in match.groups()] for match in _SCALAR_POINT.finditer(Path(path).read_text(encoding="utf-8"))]
    if not rows:
        return SizingField(np.empty((0, 3)), np.empty(0))
    data = np.asarray(rows)
    return SizingField(data[:, :3], data[:, 3])
