"""Deterministic procedural seabed textures standing in for real sonar data.

Every texture field is a pure function of (seed, global waterfall
coordinates), so adjacent tiles of the same mission share texture phase and
the rendered seabed is one coherent surface. Intensity statistics follow the
usual acoustic speckle picture: a Rayleigh multiplicative term over a
label-dependent mean level, modulated by slowly varying relief. Rows inside
turns are sheared sideways in proportion to the normalized yaw metric, which
is the signal the translator has to learn from the yaw channels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .conditioning import normalize_theta
from .errors import ValidationError
from .mission import ScanTile, SemanticTile, TerrainLabel

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + _GAMMA) & _MASK
        x = ((x ^ (x >> np.uint64(30))) * _MIX1) & _MASK
        x = ((x ^ (x >> np.uint64(27))) * _MIX2) & _MASK
        return x ^ (x >> np.uint64(31))


def hash_uniform(seed: int, salt: int, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) noise at integer lattice points, keyed by (seed, salt)."""
    yi = np.asarray(y, dtype=np.int64).astype(np.uint64)
    xi = np.asarray(x, dtype=np.int64).astype(np.uint64)
    h = _splitmix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _splitmix(np.uint64(salt)))
    with np.errstate(over="ignore"):
        v = _splitmix((yi * np.uint64(0x9E3779B1)) ^ _splitmix(xi) ^ h)
    return (v >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(seed: int, salt: int, y: np.ndarray, x: np.ndarray,
                cell: float) -> np.ndarray:
    """Smooth [0, 1] noise at float coordinates with lattice spacing ``cell``."""
    fy = np.asarray(y, dtype=np.float64) / cell
    fx = np.asarray(x, dtype=np.float64) / cell
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    ty = _smoothstep(fy - y0)
    tx = _smoothstep(fx - x0)
    v00 = hash_uniform(seed, salt, y0, x0)
    v01 = hash_uniform(seed, salt, y0, x0 + 1)
    v10 = hash_uniform(seed, salt, y0 + 1, x0)
    v11 = hash_uniform(seed, salt, y0 + 1, x0 + 1)
    top = v00 + tx * (v01 - v00)
    bot = v10 + tx * (v11 - v10)
    return top + ty * (bot - top)


@dataclass(frozen=True)
class OracleParams:
    """Texture model knobs for each terrain label plus the turn-shear gain."""

    flat_level: float = 0.26
    flat_speckle: float = 0.45        # speckle mix in [0, 1]
    relief_amp: float = 0.35          # slow brightness field amplitude
    relief_cell_px: float = 72.0
    detail_amp: float = 0.18          # fine grain, shared by all terrains
    detail_cell_px: float = 13.0
    meso_amp: float = 0.24            # mid-scale structure; what turn shear
    meso_cell_px: float = 34.0        # visibly drags sideways
    ripple_level: float = 0.31
    ripple_wavelength_px: float = 26.0
    ripple_depth: float = 0.75
    ripple_speckle: float = 0.30
    rock_level: float = 0.40
    rock_cell_px: float = 24.0
    rock_presence: float = 0.75
    rock_radius_px: tuple = (3.0, 8.0)
    rock_highlight_gain: float = 1.6
    rock_shadow_len: float = 1.8      # shadow length in blob radii
    clutter_level: float = 0.33
    clutter_density: float = 0.02
    clutter_gain: float = 0.55
    nadir_level: float = 0.045
    yaw_shear_gain: float = 3.0       # px of row-to-row shear per unit theta

    def __post_init__(self):
        if self.yaw_shear_gain <= 0:
            raise ValidationError("yaw_shear_gain must be positive")
        for name in ("flat_level", "ripple_level", "rock_level",
                     "clutter_level", "nadir_level", "relief_cell_px",
                     "ripple_wavelength_px", "rock_cell_px"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["rock_radius_px"] = list(self.rock_radius_px)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OracleParams":
        kwargs = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "rock_radius_px" in kwargs:
            kwargs["rock_radius_px"] = tuple(kwargs["rock_radius_px"])
        return cls(**kwargs)


def shear_offsets(theta: np.ndarray, sign: np.ndarray, gain: float,
                  initial: float = 0.0) -> np.ndarray:
    """Cumulative horizontal texture offset per row.

    Each turning row shifts the texture by sign * gain * normalized(theta)
    pixels relative to the previous row; straight rows add nothing.
    """
    step = np.asarray(sign, dtype=np.float64) * gain * normalize_theta(theta)
    return initial + np.cumsum(step)


def _rayleigh(seed: int, salt: int, y: np.ndarray, xi: np.ndarray) -> np.ndarray:
    u = hash_uniform(seed, salt, y, xi)
    # Rayleigh with unit mean: sigma * sqrt(-2 ln(1-u)) / (sigma * sqrt(pi/2)).
    return np.sqrt(-2.0 * np.log1p(-u * (1.0 - 1e-12))) / np.sqrt(np.pi / 2.0)


class _RenderContext:
    """Per-tile coordinates plus the turn-smear geometry.

    During turns the speckle is smeared into short streaks slanted along the
    shear direction (each row's contribution drags the previous rows'
    speckle sideways by the per-row shear increment), which is how platform
    rotation blurs real scans.
    """

    def __init__(self, seed, y, x, xi, delta_rows, smear_rows):
        self.seed = seed
        self.y = y
        self.x = x
        self.xi = xi
        self.delta = delta_rows      # (h,) px of shear per row
        self.smear = smear_rows      # (h,) integer streak length >= 1

    def speckle(self, salt: int, mask: np.ndarray) -> np.ndarray:
        y = self.y[mask]
        x = self.x[mask]
        smear = np.broadcast_to(self.smear[:, None], mask.shape)[mask]
        delta = np.broadcast_to(self.delta[:, None], mask.shape)[mask]
        k_max = int(self.smear.max())
        acc = _rayleigh(self.seed, salt, y, np.rint(x).astype(np.int64))
        if k_max == 1:
            return acc
        count = np.ones_like(acc)
        for j in range(1, k_max):
            active = smear > j
            if not active.any():
                break
            yj = y[active] - j
            xj = np.rint(x[active] - j * delta[active]).astype(np.int64)
            acc[active] += _rayleigh(self.seed, salt, yj, xj)
            count[active] += 1.0
        return acc / count


def _rock_field(p: OracleParams, seed: int, y: np.ndarray, x: np.ndarray):
    """Additive highlight and multiplicative shadow fields from hashed blobs."""
    g = p.rock_cell_px
    cy = np.floor(y / g).astype(np.int64)
    cx = np.floor(x / g).astype(np.int64)
    highlight = np.zeros_like(x, dtype=np.float64)
    shadow = np.ones_like(x, dtype=np.float64)
    r_lo, r_hi = p.rock_radius_px
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ny, nx = cy + dy, cx + dx
            present = hash_uniform(seed, 101, ny, nx) < p.rock_presence
            jy = hash_uniform(seed, 102, ny, nx)
            jx = hash_uniform(seed, 103, ny, nx)
            rad = r_lo + hash_uniform(seed, 104, ny, nx) * (r_hi - r_lo)
            by = (ny + 0.15 + 0.7 * jy) * g
            bx = (nx + 0.15 + 0.7 * jx) * g
            dyp = y - by
            dxp = x - bx
            d2 = (dyp ** 2 + dxp ** 2) / (rad ** 2)
            highlight += np.where(present, p.rock_highlight_gain * np.exp(-2.0 * d2), 0.0)
            # Acoustic shadow: a dark streak cast outboard (+x) of the blob.
            in_shadow = (present & (dxp > 0.6 * rad)
                         & (dxp < (0.6 + p.rock_shadow_len) * rad)
                         & (np.abs(dyp) < 0.8 * rad))
            shadow = np.where(in_shadow, np.minimum(shadow, 0.25), shadow)
    return highlight, shadow


def _texture(label: int, p: OracleParams, ctx: _RenderContext,
             mask: np.ndarray) -> np.ndarray:
    seed, y, x = ctx.seed, ctx.y[mask], ctx.x[mask]
    xi = ctx.xi[mask]
    relief = 1.0 + p.relief_amp * (2.0 * value_noise(seed, 7, y, x, p.relief_cell_px) - 1.0)
    relief *= 1.0 + p.detail_amp * (2.0 * value_noise(seed, 8, y, x, p.detail_cell_px) - 1.0)
    relief *= 1.0 + p.meso_amp * (2.0 * value_noise(seed, 9, y, x, p.meso_cell_px) - 1.0)
    if label == TerrainLabel.FLAT:
        speck = ctx.speckle(11, mask)
        return p.flat_level * relief * (1.0 - p.flat_speckle + p.flat_speckle * speck)
    if label == TerrainLabel.RIPPLES:
        drift = value_noise(seed, 21, y, x, 1.7 * p.relief_cell_px)
        # Mostly across-track periodicity: crests run along-track, the usual
        # look of sand ripples in a side-scan.
        phase = 2.0 * np.pi * (0.34 * y + 0.94 * x) / p.ripple_wavelength_px + 5.0 * drift
        wave = 1.0 + p.ripple_depth * np.sin(phase)
        speck = ctx.speckle(22, mask)
        return p.ripple_level * relief * wave * (1.0 - p.ripple_speckle + p.ripple_speckle * speck)
    if label == TerrainLabel.ROCKS:
        highlight, shadow = _rock_field(p, seed, y, x)
        speck = ctx.speckle(31, mask)
        base = p.rock_level * relief * (1.0 + highlight) * shadow
        return base * (0.55 + 0.45 * speck)
    if label == TerrainLabel.CLUTTER:
        speck = ctx.speckle(41, mask)
        spikes = hash_uniform(seed, 42, y, xi) < p.clutter_density
        base = p.clutter_level * relief * (0.72 + 0.28 * speck)
        return np.where(spikes, base + p.clutter_gain, base)
    if label == TerrainLabel.NADIR:
        return p.nadir_level * (0.8 + 0.4 * hash_uniform(seed, 51, y, xi))
    raise ValidationError(f"unknown terrain label {label}")


def render_rows(labels: np.ndarray, row0: int, offsets: np.ndarray,
                delta_rows: np.ndarray, params: OracleParams,
                seed: int) -> np.ndarray:
    """Render intensity rows for a label grid starting at global row ``row0``.

    ``offsets`` holds the cumulative per-row horizontal texture shift and
    ``delta_rows`` its per-row increment (see shear_offsets); turning rows
    additionally smear the speckle into streaks slanted along the shear.
    Output is quantized to 16-bit steps so that disk round-trips are exact.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    if offsets.shape[0] != h or delta_rows.shape[0] != h:
        raise ValidationError("offsets must align with label rows")
    gy = (row0 + np.arange(h, dtype=np.float64))[:, None] * np.ones((1, w))
    # Sampling at x - offset slides the visible texture toward +x as the
    # offset grows, so estimated image shear carries the sign of the turn.
    gx = np.arange(w, dtype=np.float64)[None, :] - offsets[:, None]
    gxi = np.rint(gx).astype(np.int64)
    smear = 1 + np.rint(3.0 * np.minimum(np.abs(delta_rows) / params.yaw_shear_gain,
                                         1.0)).astype(np.int64)
    smear[delta_rows == 0.0] = 1
    ctx = _RenderContext(seed, gy, gx, gxi, delta_rows, smear)
    out = np.zeros((h, w), dtype=np.float64)
    for label in np.unique(labels):
        mask = labels == label
        out[mask] = _texture(int(label), params, ctx, mask)
    out = np.clip(out, 0.004, 0.996)
    return (np.rint(out * 65535.0) / 65535.0).astype(np.float32)


def synth_tile(tile: SemanticTile, theta_rows: np.ndarray, signs: np.ndarray,
               seed: int, params: OracleParams = OracleParams(),
               initial_offset: float = 0.0) -> ScanTile:
    """Oracle "real" scan for one semantic tile.

    Deterministic in (seed, tile.tile_index); pass the mission's cumulative
    shear offset at the tile start as ``initial_offset`` to keep turn
    distortion continuous across tile boundaries.
    """
    h, w = tile.labels.shape
    theta_rows = np.asarray(theta_rows, dtype=np.float64)
    signs = np.asarray(signs)
    if theta_rows.shape[0] != h or signs.shape[0] != h:
        raise ValidationError("theta/sign rows must match tile height")
    step = (np.asarray(signs, dtype=np.float64) * params.yaw_shear_gain
            * normalize_theta(theta_rows))
    offsets = initial_offset + np.cumsum(step)
    intensity = render_rows(tile.labels, tile.tile_index * h, offsets, step,
                            params, seed)
    return ScanTile(intensity=intensity, tile_index=tile.tile_index,
                    provenance="oracle", valid_rows=tile.valid_rows)
