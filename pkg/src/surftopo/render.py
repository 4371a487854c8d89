"""PNG export of maps and luminance import from images.

Images are written with v increasing upward, so map row 0 is the bottom
image row. Each PNG gets a ``<name>.png.json`` sidecar recording how values
were normalized.
"""

from __future__ import annotations

import json

import numpy as np
from PIL import Image

from .errors import SurfTopoError
from .raster import GridMap

STYLES = ("gray", "signed")
GRAY_MAX = 65535
GRAY_MID = 32768


class RenderError(SurfTopoError):
    pass


def gray_levels(grid: GridMap) -> tuple[np.ndarray, dict]:
    """Min-max map valid values onto 0..65535; a constant map becomes mid-gray."""
    vals = grid.values[grid.valid]
    if vals.size == 0:
        raise RenderError("map has no valid cell")
    lo, hi = float(vals.min()), float(vals.max())
    if hi > lo:
        q = np.rint((grid.values - lo) / (hi - lo) * GRAY_MAX)
    else:
        q = np.full(grid.shape, float(GRAY_MID))
    q = np.where(grid.valid, np.clip(q, 0, GRAY_MAX), 0).astype(np.uint16)
    return q, {"style": "gray", "lo": lo, "hi": hi, "levels": GRAY_MAX,
               "constant_level": GRAY_MID, "row0": "bottom"}


def signed_colors(grid: GridMap) -> tuple[np.ndarray, dict]:
    """Diverging map: blue for negative (peaks), white at zero, red for positive (valleys)."""
    vals = grid.values[grid.valid]
    if vals.size == 0:
        raise RenderError("map has no valid cell")
    scale = float(np.abs(vals).max())
    t = grid.values / scale if scale > 0 else np.zeros(grid.shape)
    t = np.clip(t, -1.0, 1.0)
    fade = np.rint(255.0 * (1.0 - np.abs(t))).astype(np.uint8)
    full = np.full(grid.shape, 255, dtype=np.uint8)
    r = np.where(t < 0, fade, full)
    g = fade
    b = np.where(t > 0, fade, full)
    rgb = np.stack([r, g, b], axis=-1)
    rgb[~grid.valid] = 0
    return rgb, {"style": "signed", "scale": scale, "zero_color": [255, 255, 255],
                 "row0": "bottom"}


def write_png(path, grid: GridMap, style: str = "gray") -> dict:
    if style == "gray":
        data, meta = gray_levels(grid)
    elif style == "signed":
        data, meta = signed_colors(grid)
    else:
        raise RenderError(f"unknown style {style!r}; choose from {', '.join(STYLES)}")
    Image.fromarray(np.ascontiguousarray(data[::-1])).save(path, format="PNG")
    with open(f"{path}.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def read_gray_png(path) -> tuple[np.ndarray, dict]:
    """Invert :func:`write_png` for the gray style: values in map row order."""
    with open(f"{path}.json") as fh:
        meta = json.load(fh)
    if meta.get("style") != "gray":
        raise RenderError(f"{path} is not a gray rendering")
    q = np.array(Image.open(path)).astype(np.float64)[::-1]
    lo, hi = meta["lo"], meta["hi"]
    if hi > lo:
        return lo + q / meta["levels"] * (hi - lo), meta
    return np.full(q.shape, lo), meta


def load_luminance(path, pixel_size: float = 1.0) -> GridMap:
    """Luma (ITU-R 601) of an image as a fully valid map, row 0 at the bottom."""
    img = Image.open(path)
    if img.mode in ("I;16", "I;16B", "I", "F", "L"):
        arr = np.array(img, dtype=np.float64)
    else:
        rgb = np.array(img.convert("RGB"), dtype=np.float64)
        arr = rgb @ np.array([0.299, 0.587, 0.114])
    return GridMap.full(arr[::-1].copy(), pixel_size)
