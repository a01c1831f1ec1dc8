"""Paired training corpus: consecutive (semantic tile, scan tile, yaw) examples.

A corpus is always cut from one continuous mission so that each stored scan's
predecessor really is the previous example; training snippets are therefore
genuine tails, and the saved layout only needs the images themselves.

On-disk layout::

    corpus/meta.json
    corpus/tiles/00000/map.png    8-bit label indices
    corpus/tiles/00000/image.png  16-bit grayscale intensity
    corpus/tiles/00000/att.json   {"yaw_deg": [...], "theta": [...], "sign": [...]}
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import conditioning
from .errors import FormatError, ValidationError
from .mission import (AttitudeSeries, MissionSpec, ScanTile, SemanticTile,
                      TerrainLabel, WorldMap, pad_attitude_rows, plan_pings,
                      rasterize_rows, slice_tiles)
from .oracle import OracleParams, shear_offsets, synth_tile

CORPUS_FORMAT_VERSION = 1


@dataclass
class Corpus:
    """Stacked along-track examples plus the metadata to rebuild snippets."""

    maps: np.ndarray      # (N, H, W) uint8 label codes
    images: np.ndarray    # (N, H, W) float32 intensities
    yaw_deg: np.ndarray   # (N, H) float64 per-row vehicle yaw
    theta: np.ndarray     # (N, H) float64 turn metric
    sign: np.ndarray      # (N, H) int8 turn sense
    meta: dict

    def __post_init__(self):
        n = self.maps.shape[0]
        shapes = {self.images.shape[0], self.yaw_deg.shape[0],
                  self.theta.shape[0], self.sign.shape[0]}
        if shapes != {n}:
            raise ValidationError("corpus arrays disagree on example count")
        if n < 1:
            raise ValidationError("corpus is empty")

    def __len__(self) -> int:
        return int(self.maps.shape[0])

    @property
    def tile_rows(self) -> int:
        return int(self.maps.shape[1])

    @property
    def swath_px(self) -> int:
        return int(self.maps.shape[2])

    @property
    def snippet_rows(self) -> int:
        return int(self.meta["snippet_rows"])

    def snippet(self, i: int) -> np.ndarray:
        """True-predecessor snippet for example i (zeros at the chain head)."""
        s = self.snippet_rows
        if i == 0:
            return np.zeros((s, self.swath_px), dtype=np.float32)
        return self.images[i - 1, self.tile_rows - s:].astype(np.float32)

    def semantic_tile(self, i: int) -> SemanticTile:
        return SemanticTile(labels=self.maps[i], tile_index=i,
                            valid_rows=self.tile_rows)

    def scan_tile(self, i: int) -> ScanTile:
        return ScanTile(intensity=self.images[i], tile_index=i, provenance="real"
                        if self.meta.get("source") == "real" else "oracle")


def make_corpus(world: WorldMap, mission: MissionSpec, n_tiles: int, seed: int,
                tile_rows: int = 464, oracle_params: OracleParams = OracleParams(),
                snippet_rows: Optional[int] = None,
                lookahead: int = conditioning.DEFAULT_LOOKAHEAD,
                theta_max: float = conditioning.DEFAULT_THETA_MAX,
                nadir_px: Optional[int] = None,
                turn_arc_m: float = 5.0) -> Corpus:
    """Fly the mission over the oracle seabed and cut paired examples.

    The route must supply at least n_tiles * tile_rows pings; examples are
    consecutive, so stored predecessors are genuine.
    """
    if n_tiles < 1:
        raise ValidationError("n_tiles must be >= 1")
    positions, attitude = plan_pings(mission, world, turn_arc_m=turn_arc_m)
    needed = n_tiles * tile_rows
    if len(attitude) < needed:
        raise ValidationError(
            f"route supplies {len(attitude)} pings, need {needed} for {n_tiles} tiles")
    positions = positions[:needed]
    attitude = AttitudeSeries(attitude.yaw_deg[:needed])

    if nadir_px is None:
        nadir_px = max(2, round(16 * mission.swath_px / 512))
    rows = rasterize_rows(world, positions, attitude, mission.side,
                          mission.swath_px, nadir_px=nadir_px)
    tiles = slice_tiles(rows, tile_rows, world.background_label)
    theta, sign = conditioning.yaw_metric_series(attitude, lookahead)
    offsets = shear_offsets(theta, sign, oracle_params.yaw_shear_gain)

    if snippet_rows is None:
        snippet_rows = conditioning.default_snippet_rows(tile_rows)

    maps = np.stack([t.labels for t in tiles])
    theta_t = pad_attitude_rows(theta, n_tiles, tile_rows, fill=conditioning.THETA_FLOOR)
    sign_t = pad_attitude_rows(sign, n_tiles, tile_rows, fill=0).astype(np.int8)
    yaw_t = pad_attitude_rows(attitude.yaw_deg, n_tiles, tile_rows, fill=0.0)

    images = np.empty((n_tiles, tile_rows, mission.swath_px), dtype=np.float32)
    for i, tile in enumerate(tiles):
        start = 0.0 if i == 0 else float(offsets[i * tile_rows - 1])
        scan = synth_tile(tile, theta_t[i], sign_t[i], seed, oracle_params,
                          initial_offset=start)
        images[i] = scan.intensity

    meta = {
        "format_version": CORPUS_FORMAT_VERSION,
        "source": "oracle",
        "tile_rows": tile_rows,
        "swath_px": mission.swath_px,
        "snippet_rows": int(snippet_rows),
        "lookahead": int(lookahead),
        "theta_max": float(theta_max),
        "seed": int(seed),
        "labels": {label.name.lower(): int(label) for label in TerrainLabel},
        "oracle_params": oracle_params.to_dict(),
        "n_examples": int(n_tiles),
    }
    return Corpus(maps=maps, images=images, yaw_deg=yaw_t, theta=theta_t,
                  sign=sign_t, meta=meta)


def save_label_png(labels: np.ndarray, path: Path) -> None:
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path)


def save_gray16_png(intensity: np.ndarray, path: Path) -> None:
    data = np.rint(np.asarray(intensity, dtype=np.float64) * 65535.0).astype(np.uint16)
    Image.fromarray(data, mode="I;16").save(path)


def load_label_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.uint8)


def load_gray16_png(path: Path) -> np.ndarray:
    data = np.asarray(Image.open(path))
    if data.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit grayscale")
    return (data.astype(np.float32) / 65535.0).astype(np.float32)


def save_corpus(corpus: Corpus, path) -> None:
    root = Path(path)
    (root / "tiles").mkdir(parents=True, exist_ok=True)
    for i in range(len(corpus)):
        d = root / "tiles" / f"{i:05d}"
        d.mkdir(exist_ok=True)
        save_label_png(corpus.maps[i], d / "map.png")
        save_gray16_png(corpus.images[i], d / "image.png")
        att = {
            "yaw_deg": [round(v, 6) for v in corpus.yaw_deg[i].tolist()],
            "theta": [round(v, 6) for v in corpus.theta[i].tolist()],
            "sign": corpus.sign[i].astype(int).tolist(),
        }
        (d / "att.json").write_text(json.dumps(att))
    (root / "meta.json").write_text(json.dumps(corpus.meta, indent=2))


def load_corpus(path) -> Corpus:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"{root}: missing meta.json")
    meta = json.loads(meta_path.read_text())
    version = meta.get("format_version")
    if version != CORPUS_FORMAT_VERSION:
        raise FormatError(f"{root}: unsupported corpus format_version {version!r}")
    n = int(meta["n_examples"])
    h, w = int(meta["tile_rows"]), int(meta["swath_px"])
    maps = np.empty((n, h, w), dtype=np.uint8)
    images = np.empty((n, h, w), dtype=np.float32)
    yaw = np.empty((n, h), dtype=np.float64)
    theta = np.empty((n, h), dtype=np.float64)
    sign = np.empty((n, h), dtype=np.int8)
    for i in range(n):
        d = root / "tiles" / f"{i:05d}"
        for name in ("map.png", "image.png", "att.json"):
            if not (d / name).exists():
                raise FormatError(f"corpus example {i}: missing {name}")
        maps[i] = load_label_png(d / "map.png")
        images[i] = load_gray16_png(d / "image.png")
        att = json.loads((d / "att.json").read_text())
        for key, target in (("yaw_deg", yaw), ("theta", theta), ("sign", sign)):
            vals = att.get(key)
            if vals is None or len(vals) != h:
                raise FormatError(f"corpus example {i}: bad or missing '{key}'")
            target[i] = np.asarray(vals)
    return Corpus(maps=maps, images=images, yaw_deg=yaw, theta=theta,
                  sign=sign, meta=meta)


def make_demo_world(seed: int = 0, width_m: float = 360.0, height_m: float = 360.0,
                    cell_m: float = 52.0) -> WorldMap:
    """Jittered mosaic of ripples/rocks/clutter patches on a flat background.

    Patch centers sit on a jittered grid with cycling labels, so any survey
    strip through the map crosses every terrain type repeatedly.
    """
    rng = np.random.default_rng(seed)
    labels = [TerrainLabel.RIPPLES, TerrainLabel.ROCKS, TerrainLabel.CLUTTER]
    regions = []
    nx = int(width_m // cell_m)
    ny = int(height_m // cell_m)
    order = rng.permutation(nx * ny)
    for k in range(nx * ny):
        i, j = divmod(k, ny)
        label = labels[int(order[k]) % len(labels)]
        cx = (i + 0.5 + rng.uniform(-0.25, 0.25)) * cell_m
        cy = (j + 0.5 + rng.uniform(-0.25, 0.25)) * cell_m
        r = rng.uniform(0.34, 0.52) * cell_m
        n_vert = int(rng.integers(5, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, n_vert))
        radii = r * rng.uniform(0.65, 1.0, n_vert)
        xs = np.clip(cx + radii * np.cos(angles), 0, width_m)
        ys = np.clip(cy + radii * np.sin(angles), 0, height_m)
        regions.append((np.stack([xs, ys], axis=1), label))
    return WorldMap(width_m=width_m, height_m=height_m, regions=tuple(regions),
                    background_label=TerrainLabel.FLAT)


def make_survey_mission(world: WorldMap, map_id: str = "demo", n_tiles: int = 200,
                        tile_rows: int = 116, swath_px: int = 128,
                        side: str = "port",
                        leg_len_m: Optional[float] = None) -> MissionSpec:
    """Lawnmower mission sized to cover at least n_tiles tiles of pings.

    Shorter legs mean more turns per mission, i.e. more yaw-conditioned rows
    in a corpus cut from this route.
    """
    speed, rate = 1.0, 16.0
    need_m = n_tiles * tile_rows * speed / rate * 1.02 + 10.0
    margin = 0.1 * world.height_m
    leg = leg_len_m if leg_len_m else world.height_m - 2 * margin
    leg = min(leg, world.height_m - 2 * margin)
    spacing = max(10.0, world.width_m / 24.0)
    n_legs = max(2, math.ceil((need_m + spacing) / (leg + spacing)))
    if margin + (n_legs - 1) * spacing > world.width_m - margin:
        spacing = (world.width_m - 2 * margin) / max(1, n_legs - 1)
    waypoints = []
    direction = 1
    x = margin
    y0, y1 = margin, margin + leg
    waypoints.append((x, y0))
    for i in range(n_legs):
        waypoints.append((x, y1 if direction > 0 else y0))
        if i < n_legs - 1:
            x += spacing
            waypoints.append((x, waypoints[-1][1]))
        direction = -direction
    return MissionSpec(map_id=map_id, waypoints=tuple(waypoints),
                       speed_mps=speed, ping_rate_hz=rate,
                       swath_px=swath_px, side=side)


def make_demo_corpus(n_tiles: int = 200, seed: int = 7, tile_rows: int = 116,
                     swath_px: int = 128, world_seed: int = 3,
                     snippet_rows: int = 16) -> Corpus:
    """Desk-scale corpus over the demo world with a turn-rich survey route.

    The snippet is kept at 16 rows (twice the strictly proportional scaling
    of the full-resolution 32) so the Markov conditioning stays informative
    on short desk tiles.
    """
    world = make_demo_world(seed=world_seed)
    mission = make_survey_mission(world, n_tiles=n_tiles, tile_rows=tile_rows,
                                  swath_px=swath_px, leg_len_m=140.0)
    return make_corpus(world, mission, n_tiles=n_tiles, seed=seed,
                       tile_rows=tile_rows, turn_arc_m=8.0,
                       snippet_rows=snippet_rows)
