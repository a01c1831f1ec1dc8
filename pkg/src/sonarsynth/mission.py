"""Mission geometry: routes to pings, pings to label rows, rows to tiles.

A mission is a polyline route over a labelled world map. The vehicle moves at
constant speed emitting pings at a fixed rate; each ping contributes one
across-track row of terrain labels on the chosen side, and consecutive rows
are sliced into fixed-height semantic tiles.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import shapely

from .errors import BoundsError, FormatError, ValidationError

FORMAT_VERSION = 1

#: Tile height in rows (pings) at full sensor scale.
DEFAULT_TILE_ROWS = 464
#: Across-track pixels per side at full sensor scale.
DEFAULT_SWATH_PX = 512
#: Width of the blind stripe at the inboard swath edge, in pixels.
DEFAULT_NADIR_PX = 16


class TerrainLabel(IntEnum):
    """Stable integer codes for seabed texture classes."""

    FLAT = 0
    RIPPLES = 1
    ROCKS = 2
    CLUTTER = 3
    NADIR = 4


NUM_LABELS = len(TerrainLabel)


def wrap_angle_deg(angle):
    """Wrap an angle (scalar or array) to [-180, 180) degrees."""
    return (np.asarray(angle) + 180.0) % 360.0 - 180.0


def signed_angle_diff_deg(a, b):
    """Shortest signed difference a - b on the circle, in degrees."""
    return wrap_angle_deg(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


@dataclass(frozen=True)
class WorldMap:
    """Rectangular world with polygonal terrain regions.

    Regions are painted in list order: later polygons override earlier ones.
    Coordinates are meters with the origin at the lower-left corner.
    """

    width_m: float
    height_m: float
    regions: tuple = ()  # tuple of (vertices (K,2) float array, TerrainLabel)
    background_label: TerrainLabel = TerrainLabel.FLAT

    def __post_init__(self):
        if self.width_m <= 0 or self.height_m <= 0:
            raise ValidationError("map dimensions must be positive")
        norm = []
        for poly, label in self.regions:
            pts = np.asarray(poly, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
                raise ValidationError("region polygon needs >=3 (x, y) vertices")
            if (pts[:, 0].min() < 0 or pts[:, 1].min() < 0
                    or pts[:, 0].max() > self.width_m or pts[:, 1].max() > self.height_m):
                raise ValidationError("region polygon exceeds map bounds")
            norm.append((pts, TerrainLabel(label)))
        object.__setattr__(self, "regions", tuple(norm))
        object.__setattr__(self, "background_label", TerrainLabel(self.background_label))

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width_m and 0.0 <= y <= self.height_m

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "width_m": self.width_m,
            "height_m": self.height_m,
            "background_label": int(self.background_label),
            "regions": [
                {"polygon": poly.tolist(), "label": int(label)}
                for poly, label in self.regions
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldMap":
        _check_version(data, "WorldMap")
        return cls(
            width_m=float(data["width_m"]),
            height_m=float(data["height_m"]),
            regions=tuple(
                (np.asarray(r["polygon"], dtype=float), TerrainLabel(r["label"]))
                for r in data.get("regions", ())
            ),
            background_label=TerrainLabel(data.get("background_label", 0)),
        )


@dataclass(frozen=True)
class MissionSpec:
    """Route and sensor parameters for one survey pass."""

    map_id: str
    waypoints: tuple  # ((x, y) meters, ...)
    speed_mps: float = 1.0
    ping_rate_hz: float = 16.0
    swath_px: int = DEFAULT_SWATH_PX
    side: str = "port"

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.waypoints)
        if len(pts) < 2:
            raise ValidationError("mission needs at least 2 waypoints")
        if self.speed_mps <= 0:
            raise ValidationError("speed_mps must be positive")
        if self.ping_rate_hz <= 0:
            raise ValidationError("ping_rate_hz must be positive")
        if self.swath_px <= 0 or self.swath_px % 4 != 0:
            raise ValidationError("swath_px must be a positive multiple of 4")
        if self.side not in ("port", "starboard"):
            raise ValidationError("side must be 'port' or 'starboard'")
        object.__setattr__(self, "waypoints", pts)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "map_id": self.map_id,
            "waypoints": [list(p) for p in self.waypoints],
            "speed_mps": self.speed_mps,
            "ping_rate_hz": self.ping_rate_hz,
            "swath_px": self.swath_px,
            "side": self.side,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MissionSpec":
        _check_version(data, "MissionSpec")
        return cls(
            map_id=str(data["map_id"]),
            waypoints=tuple(tuple(p) for p in data["waypoints"]),
            speed_mps=float(data.get("speed_mps", 1.0)),
            ping_rate_hz=float(data.get("ping_rate_hz", 16.0)),
            swath_px=int(data.get("swath_px", DEFAULT_SWATH_PX)),
            side=str(data.get("side", "port")),
        )


def _check_version(data: dict, what: str) -> None:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{what}: unsupported format_version {version!r}")


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj.to_dict(), indent=2))


def load_world_map(path) -> WorldMap:
    return WorldMap.from_dict(json.loads(Path(path).read_text()))


def load_mission_spec(path) -> MissionSpec:
    return MissionSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AttitudeSeries:
    """Per-ping yaw in degrees, wrapped to [-180, 180)."""

    yaw_deg: np.ndarray

    def __post_init__(self):
        yaw = np.asarray(self.yaw_deg, dtype=np.float64)
        if yaw.ndim != 1 or yaw.size == 0:
            raise ValidationError("yaw series must be a non-empty 1-D array")
        if not np.all(np.isfinite(yaw)):
            raise ValidationError("yaw series contains non-finite entries")
        object.__setattr__(self, "yaw_deg", wrap_angle_deg(yaw))

    def __len__(self) -> int:
        return int(self.yaw_deg.shape[0])


@dataclass
class SemanticTile:
    """Fixed-height grid of terrain label codes; last tile may be padded."""

    labels: np.ndarray  # (tile_rows, swath_px) uint8
    tile_index: int
    valid_rows: int

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValidationError("semantic tile must be 2-D")
        if not (0 < self.valid_rows <= self.labels.shape[0]):
            raise ValidationError("valid_rows out of range")
        if self.labels.max(initial=0) >= NUM_LABELS:
            raise ValidationError("unknown terrain label code")


@dataclass
class ScanTile:
    """Single-channel intensity tile in [0, 1]."""

    intensity: np.ndarray  # (tile_rows, swath_px) float32
    tile_index: int
    provenance: str = "generated"  # real | generated | oracle
    valid_rows: Optional[int] = None

    def __post_init__(self):
        self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float32)
        if self.intensity.ndim != 2:
            raise ValidationError("scan tile must be 2-D")
        lo, hi = float(self.intensity.min()), float(self.intensity.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"scan intensities outside [0, 1]: [{lo}, {hi}]")
        if self.provenance not in ("real", "generated", "oracle"):
            raise ValidationError("provenance must be real | generated | oracle")
        if self.valid_rows is None:
            self.valid_rows = self.intensity.shape[0]
        if not (0 < self.valid_rows <= self.intensity.shape[0]):
            raise ValidationError("valid_rows out of range")


def _route_segments(waypoints: Sequence[tuple]):
    pts = np.asarray(waypoints, dtype=float)
    deltas = np.diff(pts, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    headings = np.degrees(np.arctan2(deltas[:, 1], deltas[:, 0]))
    return pts, deltas, seg_len, headings


def plan_pings(mission: MissionSpec, world: Optional[WorldMap] = None,
               turn_arc_m: float = 5.0):
    """Sample the route into per-ping positions and yaw.

    Ping count is floor(route_length / speed * ping_rate); pings sit at equal
    arclength steps from the route start. Yaw is the heading of the local
    route tangent; across each corner it is interpolated linearly over a
    ``turn_arc_m``-long stretch of track (clamped to half the adjoining
    segments) so the heading never jumps.

    Returns (positions (N,2) meters, AttitudeSeries).
    """
    pts, deltas, seg_len, headings = _route_segments(mission.waypoints)
    if np.any(seg_len <= 0):
        raise ValidationError("route has a zero-length segment")
    total = float(seg_len.sum())
    if total <= 0:
        raise ValidationError("route has zero length")
    if world is not None:
        for x, y in mission.waypoints:
            if not world.contains(x, y):
                raise BoundsError(f"waypoint ({x}, {y}) outside map bounds")

    step = mission.speed_mps / mission.ping_rate_hz
    # Epsilon guards float jitter in the length sum so e.g. a 29 m leg at
    # 16 Hz yields exactly 464 pings.
    n_pings = int(math.floor(total / step + 1e-9))
    if n_pings < 1:
        raise ValidationError("route too short for a single ping")

    s = np.arange(n_pings, dtype=np.float64) * step
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    seg_idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    frac = (s - cum[seg_idx]) / seg_len[seg_idx]
    positions = pts[seg_idx] + deltas[seg_idx] * frac[:, None]

    yaw = headings[seg_idx].astype(np.float64)
    # Corner blending: inside the arc straddling corner j, lerp between the
    # incoming and outgoing headings along the shortest angular path.
    for j in range(1, len(seg_len)):
        turn = float(signed_angle_diff_deg(headings[j], headings[j - 1]))
        if turn == 0.0:
            continue
        half = min(turn_arc_m / 2.0, seg_len[j - 1] / 2.0, seg_len[j] / 2.0)
        if half <= 0:
            continue
        lo, hi = cum[j] - half, cum[j] + half
        mask = (s >= lo) & (s < hi)
        t = (s[mask] - lo) / (hi - lo)
        yaw[mask] = headings[j - 1] + t * turn

    if world is not None:
        inside = ((positions[:, 0] >= 0) & (positions[:, 0] <= world.width_m)
                  & (positions[:, 1] >= 0) & (positions[:, 1] <= world.height_m))
        if not bool(inside.all()):
            raise BoundsError("route leaves map bounds between waypoints")

    return positions, AttitudeSeries(yaw)


def rasterize_rows(world: WorldMap, positions: np.ndarray, attitude: AttitudeSeries,
                   side: str = "port", swath_px: int = DEFAULT_SWATH_PX,
                   px_size_m: Optional[float] = None,
                   nadir_px: int = DEFAULT_NADIR_PX) -> np.ndarray:
    """Sample terrain labels along each ping's across-track ray.

    The ray leaves the vehicle perpendicular to its heading, on the port
    (left) or starboard (right) side; column 0 is inboard. Samples beyond the
    map take the background label and the first ``nadir_px`` columns are the
    sensor's blind stripe. ``px_size_m`` defaults to square pixels relative
    to the along-track ping spacing of a 1 m/s, 16 Hz mission.

    Returns an (N, swath_px) uint8 label grid.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[0] != len(attitude):
        raise ValidationError("positions and attitude must align by ping index")
    if side not in ("port", "starboard"):
        raise ValidationError("side must be 'port' or 'starboard'")
    if px_size_m is None:
        px_size_m = 1.0 / 16.0
    n = positions.shape[0]

    heading_rad = np.radians(attitude.yaw_deg)
    ux, uy = np.cos(heading_rad), np.sin(heading_rad)
    if side == "port":
        nx, ny = -uy, ux
    else:
        nx, ny = uy, -ux

    dist = (np.arange(swath_px, dtype=np.float64) + 0.5) * px_size_m
    px = positions[:, 0, None] + nx[:, None] * dist[None, :]
    py = positions[:, 1, None] + ny[:, None] * dist[None, :]

    rows = np.full((n, swath_px), int(world.background_label), dtype=np.uint8)
    in_bounds = ((px >= 0) & (px <= world.width_m)
                 & (py >= 0) & (py <= world.height_m))
    flat_x, flat_y = px.ravel(), py.ravel()
    for poly, label in world.regions:
        geom = shapely.polygons(poly)
        hit = shapely.contains_xy(geom, flat_x, flat_y).reshape(n, swath_px)
        rows[hit & in_bounds] = int(label)
    rows[:, :nadir_px] = int(TerrainLabel.NADIR)
    return rows


def slice_tiles(rows: np.ndarray, tile_rows: int = DEFAULT_TILE_ROWS,
                background_label: TerrainLabel = TerrainLabel.FLAT) -> list:
    """Cut a row stream into ceil(N / tile_rows) semantic tiles.

    The final tile is padded with the background label; its valid_rows field
    records how many rows are real so downstream metrics can skip padding.
    """
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValidationError("need at least one label row")
    n = rows.shape[0]
    tiles = []
    for t in range(math.ceil(n / tile_rows)):
        chunk = rows[t * tile_rows:(t + 1) * tile_rows]
        valid = chunk.shape[0]
        if valid < tile_rows:
            pad = np.full((tile_rows - valid, rows.shape[1]),
                          int(background_label), dtype=np.uint8)
            chunk = np.concatenate([chunk, pad], axis=0)
        tiles.append(SemanticTile(labels=chunk, tile_index=t, valid_rows=valid))
    return tiles


def pad_attitude_rows(values: np.ndarray, n_tiles: int, tile_rows: int,
                      fill: float = 0.0) -> np.ndarray:
    """Reshape a per-ping series to (n_tiles, tile_rows), padding the tail."""
    values = np.asarray(values)
    out = np.full(n_tiles * tile_rows, fill, dtype=values.dtype)
    out[:values.shape[0]] = values
    return out.reshape(n_tiles, tile_rows)


def make_survey_route(origin: tuple, leg_len_m: float, spacing_m: float,
                      n_legs: int, along_axis: str = "y") -> tuple:
    """Boustrophedon (lawnmower) waypoint list covering a rectangular area.

    Legs run along ``along_axis`` and alternate direction; short cross legs
    of length ``spacing_m`` join them, giving the mission regular turns of
    both senses.
    """
    if n_legs < 1:
        raise ValidationError("n_legs must be >= 1")
    x0, y0 = float(origin[0]), float(origin[1])
    pts = [(x0, y0)]
    direction = 1.0
    for leg in range(n_legs):
        x, y = pts[-1]
        if along_axis == "y":
            pts.append((x, y + direction * leg_len_m))
            if leg < n_legs - 1:
                pts.append((pts[-1][0] + spacing_m, pts[-1][1]))
        else:
            pts.append((x + direction * leg_len_m, y))
            if leg < n_legs - 1:
                pts.append((pts[-1][0], pts[-1][1] + spacing_m))
        direction = -direction
    return tuple(pts)
