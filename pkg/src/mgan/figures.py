"""Side-by-side comparison grids: label | CT | real PET | synthetic PET per arm."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

GAP = 2


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def comparison_grid(rows: list[list[np.ndarray]], scale: int = 2) -> np.ndarray:
    """Tile equally sized images into one 8-bit array with white gutters."""
    if not rows:
        raise ValueError("no rows to draw")
    h, w = rows[0][0].shape
    n_cols = max(len(r) for r in rows)
    out = np.full((len(rows) * (h + GAP) - GAP, n_cols * (w + GAP) - GAP), 255, np.uint8)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = i * (h + GAP), j * (w + GAP)
            out[y:y + h, x:x + w] = _to_u8(img)
    return np.kron(out, np.ones((scale, scale), np.uint8)) if scale > 1 else out


def write_comparison(real_studies, synthetic: dict, path, n_rows: int = 4) -> Path | None:
    """Draw up to ``n_rows`` studies, preferring slices that contain tumors.

    ``synthetic`` maps an arm name to a list of studies aligned with
    ``real_studies``. Columns follow its insertion order after the three
    reference columns.
    """
    real_studies = list(real_studies)
    order = sorted(range(len(real_studies)),
                   key=lambda i: (not real_studies[i].label.values.any(), i))
    picks = order[:n_rows]
    if not picks:
        return None
    rows = []
    for i in picks:
        s = real_studies[i]
        row = [s.label.values, s.ct.values, s.pet.values]
        row += [arm_studies[i].pet.values for arm_studies in synthetic.values()]
        rows.append(row)
    path = Path(path)
    Image.fromarray(comparison_grid(rows)).save(path, format="PNG", optimize=False)
    return path
