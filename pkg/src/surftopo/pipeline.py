"""End-to-end composition: cloud -> maps -> block datasets.

Also owns the flat ``key=value`` run configuration and the seed fan-out used
by every randomized step.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import features as feat
from .errors import SurfTopoError
from .planefit import SupportPlane, fit_support_plane, project_to_plane
from .pointcloud import PointCloud
from .raster import DEFAULT_MAX_CELLS, DEFAULT_PIXEL_SIZE, GridMap, fill_holes, rasterize
from .synth import LabeledCloud, fill_label_holes, rasterize_labels
from .topo import (DEFAULT_EPSILON, DEFAULT_STRUCTURE_SIZE, depth_gradient_map, enhance,
                   extract_topography, make_gaussian_kernel, split_peaks_valleys, to_depth)

logger = logging.getLogger(__name__)

MAP_NAMES = ("depth", "topography", "ev", "ep", "dgm")

# Which extracted maps feed each 2D representation.
REPRESENTATIONS = {
    "depth": ("depth",),
    "dgm": ("dgm",),
    "topography": ("topography",),
    "ev": ("ev",),
    "ep": ("ep",),
    "etm": ("ev", "ep"),
}

# Counter per random stream; sub-seed = SeedSequence([seed, counter]).
SEED_STREAMS = {"synth": 0, "train": 1, "cv": 2, "randomization": 3}


class ConfigError(SurfTopoError):
    pass


def sub_seed(seed: int, stream: str) -> int:
    return int(np.random.SeedSequence([seed, SEED_STREAMS[stream]]).generate_state(1)[0])


@dataclass
class PipelineConfig:
    pixel_size: float = DEFAULT_PIXEL_SIZE
    structure_size: float = DEFAULT_STRUCTURE_SIZE
    epsilon: float = DEFAULT_EPSILON
    fill_rounds: int = 64
    max_cells: int = DEFAULT_MAX_CELLS
    block_size: int = feat.DEFAULT_BLOCK_SIZE
    stride: int = feat.DEFAULT_STRIDE
    theta: float = feat.DEFAULT_THETA
    families: tuple = ("ghs", "sf")
    representation: str = "etm"
    n_rounds: int = 50
    k_folds: int = 10
    seed: int = 0
    n_perm: int = 10000
    out: str = ""

    def validate(self) -> "PipelineConfig":
        checks = [
            (self.pixel_size > 0, "pixel_size must be > 0"),
            (self.structure_size > 0, "structure_size must be > 0"),
            (self.epsilon > 0, "epsilon must be > 0"),
            (self.fill_rounds >= 0, "fill_rounds must be >= 0"),
            (self.max_cells >= 1, "max_cells must be >= 1"),
            (self.block_size >= 16, "block_size must be >= 16"),
            (self.stride >= 1, "stride must be >= 1"),
            (0 < self.theta <= 1, "theta must lie in (0, 1]"),
            (len(self.families) > 0, "families must not be empty"),
            (all(f in feat.FAMILIES for f in self.families),
             f"families must be drawn from {', '.join(feat.FAMILIES)}"),
            (self.representation in REPRESENTATIONS,
             f"representation must be one of {', '.join(REPRESENTATIONS)}"),
            (self.n_rounds >= 1, "n_rounds must be >= 1"),
            (self.k_folds >= 2, "k_folds must be >= 2"),
            (self.n_perm >= 1000, "n_perm must be >= 1000"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        return d

    def update(self, values: dict) -> "PipelineConfig":
        """Apply string or typed overrides; unknown keys are rejected."""
        known = {f.name: f for f in fields(self)}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, getattr(self, key), raw))
        return self


def _coerce(key, current, raw):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(current, tuple) else raw
    try:
        if isinstance(current, tuple):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = (p.strip() for p in s.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        with open(path) as fh:
            cfg.update(parse_config_text(fh.read()))
    if overrides:
        cfg.update(overrides)
    return cfg.validate()


def format_config(cfg: PipelineConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {','.join(v) if isinstance(v, list) else v}")
    return "\n".join(lines) + "\n"


@dataclass
class Extraction:
    maps: dict[str, GridMap]
    plane: SupportPlane
    kernel_size: int
    kernel_sigma: float
    unfilled: int
    labels: GridMap | None = None
    timings: dict = field(default_factory=dict)


def extract_maps(cloud: PointCloud, cfg: PipelineConfig,
                 labeled: LabeledCloud | None = None) -> Extraction:
    """Fit, project, rasterize, fill, compensate, split, enhance, DGM."""
    timings = {}
    t0 = time.perf_counter()

    def tick(name):
        nonlocal t0
        now = time.perf_counter()
        timings[name] = now - t0
        t0 = now

    plane = fit_support_plane(cloud)
    tick("fit")
    proj = project_to_plane(cloud, plane)
    tick("project")
    heights = rasterize(proj, cfg.pixel_size, cfg.max_cells)
    tick("rasterize")
    heights, unfilled = fill_holes(heights, cfg.fill_rounds)
    if unfilled:
        raise SurfTopoError(f"{unfilled} cells remain empty after hole filling; "
                            "increase fill_rounds or pixel_size")
    tick("fill")
    depth = to_depth(heights)
    kernel = make_gaussian_kernel(cfg.structure_size, cfg.pixel_size)
    topo = extract_topography(depth, kernel)
    tick("topography")
    valleys, peaks = split_peaks_valleys(topo)
    ev = enhance(valleys, kernel, cfg.epsilon)
    ep = enhance(peaks, kernel, cfg.epsilon)
    tick("enhance")
    dgm = depth_gradient_map(depth)
    tick("dgm")
    label_map = None
    if labeled is not None:
        label_map = fill_label_holes(rasterize_labels(labeled, plane, cfg.pixel_size,
                                                      cfg.max_cells), cfg.fill_rounds)
        tick("labels")
    logger.info("extracted %dx%d maps from %d points (W=%d)", depth.width, depth.height,
                cloud.count, kernel.size)
    maps = {"depth": depth, "topography": topo, "ev": ev, "ep": ep, "dgm": dgm}
    return Extraction(maps, plane, kernel.size, kernel.sigma, unfilled, label_map, timings)


def build_dataset(maps: dict[str, GridMap], labels: GridMap | None, cfg: PipelineConfig,
                  families=None) -> feat.LabeledDataset:
    """Block features of every map in ``maps`` (in order), concatenated per block.

    Blocks are cut from the first map; all maps must share its geometry.
    Column families are prefixed with the map name, e.g. ``ev_ghs``.
    """
    families = list(cfg.families if families is None else families)
    names = list(maps)
    if not names:
        raise ConfigError("no maps given")
    ref = maps[names[0]]
    for n in names[1:]:
        if not maps[n].same_geometry(ref):
            raise feat.GeometryMismatch(f"map {n!r} differs in geometry from {names[0]!r}")
    valid = ref.valid.copy()
    for n in names[1:]:
        valid &= maps[n].valid
    data = None
    for n in names:
        grid = GridMap(maps[n].values, valid, ref.pixel_size, ref.origin_u, ref.origin_v)
        blocks = feat.blockify(grid, labels, cfg.block_size, cfg.stride, cfg.theta)
        if not blocks:
            raise feat.EmptyDataset("no fully valid block fits the map")
        part = feat.assemble_dataset(blocks, families, feat.map_value_range(maps[n]),
                                     prefix=f"{n}_" if len(names) > 1 else "")
        data = part if data is None else data.hstack(part)
    return data


def representation_maps(extraction_maps: dict[str, GridMap], representation: str
                        ) -> dict[str, GridMap]:
    try:
        keys = REPRESENTATIONS[representation]
    except KeyError:
        raise ConfigError(f"unknown representation {representation!r}") from None
    return {k: extraction_maps[k] for k in keys}
