"""Full-mission scan synthesis: Markov chaining, baselines, and stitching.

Markov mode feeds the tail of each generated tile back as the next tile's
snippet, so the waterfall stays continuous for arbitrarily long missions
while only a bounded number of tiles is ever in memory. The two baselines
regenerate each tile from a cold (all-zero) snippet, optionally cross-fading
the seams with a sigmoid weight afterwards.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np
import torch

from . import conditioning
from .corpus import load_gray16_png, save_gray16_png
from .errors import FormatError, ShapeError, ValidationError
from .mission import AttitudeSeries, ScanTile, SemanticTile, pad_attitude_rows
from .training import Checkpoint

SCAN_FORMAT_VERSION = 1


class GenerationMode(str, Enum):
    MARKOV = "markov"
    INDEPENDENT = "independent"
    SIGMOID_BLENDED = "sigmoid_blended"


@dataclass(frozen=True)
class GenerationOptions:
    mode: GenerationMode = GenerationMode.MARKOV
    blend_window_rows: int = 32
    blend_steepness: float = 8.0
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", GenerationMode(self.mode))
        if self.blend_steepness <= 0:
            raise ValidationError("blend_steepness must be positive")
        if self.blend_window_rows < 1:
            raise ValidationError("blend_window_rows must be >= 1")


@dataclass
class MissionScan:
    """Ordered tile stream with seam bookkeeping.

    ``tiles`` may be a one-shot iterator (streaming) or a list
    (materialized); stitch and the seam metrics need the materialized form.
    """

    tiles: Iterable[ScanTile]
    mode: str
    total_pings: int
    tile_rows: int
    seam_row_indices: List[int] = field(default_factory=list)

    def materialized(self) -> "MissionScan":
        tiles = list(self.tiles)
        return MissionScan(tiles=tiles, mode=self.mode,
                           total_pings=self.total_pings,
                           tile_rows=self.tile_rows,
                           seam_row_indices=list(self.seam_row_indices))

    @property
    def tile_list(self) -> List[ScanTile]:
        if not isinstance(self.tiles, list):
            raise ValidationError("scan is streaming; call materialized() first")
        return self.tiles


def _tile_noise_generator(base_seed: int, tile_index: int) -> torch.Generator:
    # Per-tile noise derives from (base_seed, tile_index) so regeneration
    # from any midpoint reproduces the remainder of the chain.
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(tile_index,))
    g = torch.Generator()
    g.manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0] >> 1))
    return g


def _generate_one(checkpoint: Checkpoint, x: SemanticTile, theta_rows, sign_rows,
                  snippet: conditioning.Snippet, rng: torch.Generator,
                  stochastic: bool) -> ScanTile:
    h, w = x.labels.shape
    block = conditioning.build_conditioning(snippet, theta_rows, sign_rows, h, w,
                                            checkpoint.theta_max)
    gi = conditioning.assemble_generator_input(x, block)
    with torch.no_grad():
        out = checkpoint.generator(torch.from_numpy(gi.channels[None]),
                                   rng=rng, stochastic=stochastic)
    intensity = out[0, 0].numpy().astype(np.float32)
    return ScanTile(intensity=np.clip(intensity, 0.0, 1.0), tile_index=x.tile_index,
                    provenance="generated", valid_rows=x.valid_rows)


def generate_mission(tiles_x: Sequence[SemanticTile], attitude: AttitudeSeries,
                     checkpoint: Checkpoint,
                     options: GenerationOptions = GenerationOptions(),
                     stochastic: bool = True,
                     initial_snippet: Optional[conditioning.Snippet] = None) -> MissionScan:
    """Translate a semantic tile stream into a scan stream.

    Markov mode conditions tile t on the tail of generated tile t-1 (cold
    start at t=0); independent mode always uses a zero snippet;
    sigmoid_blended additionally cross-fades each seam. Tiles are produced
    lazily with at most three resident at a time.

    Per-tile noise derives from (base_seed, tile.tile_index), so passing the
    tail snippet of tile t-1 as ``initial_snippet`` together with the suffix
    of the tile stream regenerates tiles t..end exactly: the chain is
    memoryless beyond the snippet.
    """
    tiles_x = list(tiles_x)
    if not tiles_x:
        raise ValidationError("no semantic tiles to generate from")
    h, w = tiles_x[0].labels.shape
    if h != checkpoint.tile_rows or w != checkpoint.swath_px:
        raise ShapeError(
            f"tiles are {h}x{w} but checkpoint was trained at "
            f"{checkpoint.tile_rows}x{checkpoint.swath_px}")
    if (options.mode is GenerationMode.SIGMOID_BLENDED
            and options.blend_window_rows > h // 2):
        raise ValidationError("blend window exceeds half the tile height")
    checkpoint.generator.eval()

    n = len(tiles_x)
    theta, sign = conditioning.yaw_metric_series(attitude, checkpoint.lookahead)
    theta_t = pad_attitude_rows(theta, n, h, fill=conditioning.THETA_FLOOR)
    sign_t = pad_attitude_rows(sign, n, h, fill=0).astype(np.int8)
    total = sum(t.valid_rows for t in tiles_x)
    seams = [i * h for i in range(1, n)]
    markov = options.mode is GenerationMode.MARKOV
    blended = options.mode is GenerationMode.SIGMOID_BLENDED

    def stream() -> Iterator[ScanTile]:
        if initial_snippet is not None and markov:
            snippet = initial_snippet
        else:
            snippet = conditioning.Snippet.cold_start(checkpoint.snippet_rows, w)
        pending: Optional[ScanTile] = None
        for t, x in enumerate(tiles_x):
            rng = _tile_noise_generator(options.base_seed, x.tile_index)
            tile = _generate_one(checkpoint, x, theta_t[t], sign_t[t],
                                 snippet, rng, stochastic)
            if markov:
                snippet = conditioning.extract_snippet(tile, checkpoint.snippet_rows)
            if not blended:
                yield tile
                continue
            if pending is not None:
                a, b = blend_seams(pending, tile, options.blend_window_rows,
                                   options.blend_steepness)
                yield a
                tile = b
            pending = tile
        if pending is not None:
            yield pending

    return MissionScan(tiles=stream(), mode=options.mode.value,
                       total_pings=total, tile_rows=h, seam_row_indices=seams)


def blend_seams(tile_a: ScanTile, tile_b: ScanTile, window_rows: int = 32,
                steepness: float = 8.0):
    """Cross-fade the 2W rows straddling the seam between consecutive tiles.

    Row r (measured from the seam, negative above) blends the two tiles at
    the same local row with weight w(r) = 1 / (1 + exp(-k r / W)) on tile_b,
    so equal tiles pass through unchanged and the seam row itself is the
    even mixture. Rows outside the window are untouched.
    """
    h, w = tile_a.intensity.shape
    if tile_b.intensity.shape != (h, w):
        raise ValidationError("tiles must share a shape")
    if tile_a.valid_rows != h or tile_b.valid_rows != h:
        raise ValidationError("blend requires full-height tiles")
    if window_rows > h // 2:
        raise ValidationError("blend window exceeds half the tile height")
    k = float(steepness)
    if k <= 0:
        raise ValidationError("steepness must be positive")

    a = tile_a.intensity.astype(np.float64).copy()
    b = tile_b.intensity.astype(np.float64).copy()
    # Rows above the seam live at the tail of A: r = -W .. -1.
    r_above = np.arange(-window_rows, 0, dtype=np.float64)
    w_above = 1.0 / (1.0 + np.exp(-k * r_above / window_rows))
    tail = slice(h - window_rows, h)
    a[tail] = (1.0 - w_above[:, None]) * tile_a.intensity[tail] \
        + w_above[:, None] * tile_b.intensity[tail]
    # Rows below the seam live at the head of B: r = 0 .. W-1.
    r_below = np.arange(0, window_rows, dtype=np.float64)
    w_below = 1.0 / (1.0 + np.exp(-k * r_below / window_rows))
    head = slice(0, window_rows)
    b[head] = (1.0 - w_below[:, None]) * tile_a.intensity[head] \
        + w_below[:, None] * tile_b.intensity[head]

    out_a = ScanTile(intensity=a.astype(np.float32), tile_index=tile_a.tile_index,
                     provenance=tile_a.provenance, valid_rows=tile_a.valid_rows)
    out_b = ScanTile(intensity=b.astype(np.float32), tile_index=tile_b.tile_index,
                     provenance=tile_b.provenance, valid_rows=tile_b.valid_rows)
    return out_a, out_b


def stitch(scan: MissionScan, row_range: tuple) -> np.ndarray:
    """Extract contiguous waterfall rows (padding excluded) across tiles."""
    lo, hi = int(row_range[0]), int(row_range[1])
    if not (0 <= lo < hi <= scan.total_pings):
        raise ValidationError(
            f"row range [{lo}, {hi}) outside mission rows [0, {scan.total_pings})")
    tiles = scan.tile_list
    pieces = []
    start = 0
    for tile in tiles:
        end = start + tile.valid_rows
        if end > lo and start < hi:
            a = max(lo, start) - start
            b = min(hi, end) - start
            pieces.append(tile.intensity[a:b])
        start = end
        if start >= hi:
            break
    return np.concatenate(pieces, axis=0)


def save_scan(scan: MissionScan, path, base_seed: int = 0,
              checkpoint_id: str = "", extra_meta: Optional[dict] = None,
              progress=None) -> MissionScan:
    """Persist a (possibly streaming) scan as numbered 16-bit PNG tiles.

    Consumes the stream tile by tile; returns a materialized-manifest scan
    whose tiles have been dropped (reload with load_scan for pixel access).
    """
    root = Path(path)
    (root / "tiles").mkdir(parents=True, exist_ok=True)
    valid_rows = []
    count = 0
    for tile in scan.tiles:
        save_gray16_png(tile.intensity, root / "tiles" / f"{tile.tile_index:05d}.png")
        valid_rows.append(tile.valid_rows)
        count += 1
        if progress is not None:
            progress(count)
    manifest = {
        "format_version": SCAN_FORMAT_VERSION,
        "mode": scan.mode,
        "seed": base_seed,
        "total_pings": scan.total_pings,
        "tile_rows": scan.tile_rows,
        "seam_row_indices": scan.seam_row_indices,
        "checkpoint_id": checkpoint_id,
        "n_tiles": count,
        "valid_rows": valid_rows,
    }
    if extra_meta:
        manifest.update(extra_meta)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return MissionScan(tiles=[], mode=scan.mode, total_pings=scan.total_pings,
                       tile_rows=scan.tile_rows,
                       seam_row_indices=scan.seam_row_indices)


def load_scan(path) -> MissionScan:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{root}: missing manifest.json")
    m = json.loads(manifest_path.read_text())
    if m.get("format_version") != SCAN_FORMAT_VERSION:
        raise FormatError(f"{root}: unsupported scan format_version")
    tiles = []
    for i in range(int(m["n_tiles"])):
        intensity = load_gray16_png(root / "tiles" / f"{i:05d}.png")
        tiles.append(ScanTile(intensity=intensity, tile_index=i,
                              provenance="generated",
                              valid_rows=int(m["valid_rows"][i])))
    return MissionScan(tiles=tiles, mode=m["mode"], total_pings=int(m["total_pings"]),
                       tile_rows=int(m["tile_rows"]),
                       seam_row_indices=list(m["seam_row_indices"]))
