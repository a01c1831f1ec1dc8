"""Condition block assembly: yaw turn metric, previous-tile snippet, and the
fixed generator / discriminator channel stacks.

The yaw metric for ping t is ``5 * max(1, |psi_t - psi_{t+50}|)`` with the
difference taken on the wrapped circle; its sign picks the clockwise or
counterclockwise channel. The snippet is the tail of the previous scan tile
and is what makes the tile chain a first-order Markov process.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError
from .mission import (NUM_LABELS, AttitudeSeries, ScanTile, SemanticTile,
                      signed_angle_diff_deg)

#: Pings looked ahead when measuring the turn rate.
DEFAULT_LOOKAHEAD = 50
#: Snippet height in rows at full (464-row) tile scale.
DEFAULT_SNIPPET_ROWS = 32
#: Turn metric value that saturates the normalized channel. 450 metric units
#: correspond to a 90-degree yaw change over the lookahead (5 * 90).
DEFAULT_THETA_MAX = 450.0
#: Floor of the turn metric on straight track: 5 * max(1, 0).
THETA_FLOOR = 5.0


def default_snippet_rows(tile_rows: int) -> int:
    """Scale the full-resolution snippet height to a reduced tile height."""
    return max(1, round(DEFAULT_SNIPPET_ROWS * tile_rows / 464))


def yaw_metric(attitude: AttitudeSeries, t: int,
               lookahead: int = DEFAULT_LOOKAHEAD):
    """Turn metric and sense for ping t.

    Returns (theta, sign) with theta = 5 * max(1, |psi_t - psi_{t+L}|) and
    sign = sign(psi_t - psi_{t+L}). The lookahead index is clamped to the
    final ping, so straight tails keep theta at the floor value 5.
    """
    n = len(attitude)
    if not 0 <= t < n:
        raise ValidationError(f"ping index {t} out of range [0, {n})")
    ahead = min(t + lookahead, n - 1)
    diff = float(signed_angle_diff_deg(attitude.yaw_deg[t], attitude.yaw_deg[ahead]))
    theta = 5.0 * max(1.0, abs(diff))
    return theta, int(np.sign(diff))


def yaw_metric_series(attitude: AttitudeSeries,
                      lookahead: int = DEFAULT_LOOKAHEAD):
    """Vectorized yaw_metric over all pings; returns (theta[N], sign[N])."""
    n = len(attitude)
    idx = np.minimum(np.arange(n) + lookahead, n - 1)
    diff = signed_angle_diff_deg(attitude.yaw_deg, attitude.yaw_deg[idx])
    theta = 5.0 * np.maximum(1.0, np.abs(diff))
    return theta.astype(np.float64), np.sign(diff).astype(np.int8)


def normalize_theta(theta, theta_max: float = DEFAULT_THETA_MAX):
    """Map the raw metric onto [0, 1]: min(theta / theta_max, 1)."""
    return np.minimum(np.asarray(theta, dtype=np.float64) / theta_max, 1.0)


@dataclass(frozen=True)
class Snippet:
    """Tail rows of the previous scan tile; all-zero on cold start."""

    rows: np.ndarray  # (snippet_rows, swath_px) float32 in [0, 1]
    source_tile_index: Optional[int] = None

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValidationError("snippet must be 2-D")
        if rows.size and (rows.min() < 0.0 or rows.max() > 1.0):
            raise ValidationError("snippet values outside [0, 1]")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def cold_start(cls, snippet_rows: int, width: int) -> "Snippet":
        return cls(rows=np.zeros((snippet_rows, width), dtype=np.float32),
                   source_tile_index=None)


def extract_snippet(prev: Optional[ScanTile], snippet_rows: int,
                    width: Optional[int] = None) -> Snippet:
    """Bottom ``snippet_rows`` valid rows of the previous tile.

    Cold start (prev is None) yields an all-zero snippet. If the previous
    tile has fewer valid rows than requested, the valid rows sit at the
    bottom of the snippet and the remainder above is zero.
    """
    if prev is None:
        if width is None:
            raise ValidationError("width required for a cold-start snippet")
        return Snippet.cold_start(snippet_rows, width)
    valid = prev.valid_rows
    take = min(snippet_rows, valid)
    rows = np.zeros((snippet_rows, prev.intensity.shape[1]), dtype=np.float32)
    rows[snippet_rows - take:] = prev.intensity[valid - take:valid]
    return Snippet(rows=rows, source_tile_index=prev.tile_index)


@dataclass(frozen=True)
class ConditioningBlock:
    """Snippet plus the two sign-split, column-broadcast yaw channels."""

    snippet: Snippet
    yaw_cw: np.ndarray   # (H, W) float32 in [0, 1]
    yaw_ccw: np.ndarray  # (H, W) float32 in [0, 1]

    def __post_init__(self):
        cw = np.ascontiguousarray(self.yaw_cw, dtype=np.float32)
        ccw = np.ascontiguousarray(self.yaw_ccw, dtype=np.float32)
        if cw.shape != ccw.shape or cw.ndim != 2:
            raise ValidationError("yaw channels must be equal-shape 2-D arrays")
        for name, ch in (("yaw_cw", cw), ("yaw_ccw", ccw)):
            if ch.size and (ch.min() < 0.0 or ch.max() > 1.0):
                raise ValidationError(f"{name} outside [0, 1]")
        if np.any((cw > 0) & (ccw > 0)):
            raise ValidationError("yaw channels must have disjoint row support")
        object.__setattr__(self, "yaw_cw", cw)
        object.__setattr__(self, "yaw_ccw", ccw)


def yaw_channels(theta_rows: np.ndarray, sign_rows: np.ndarray, H: int, W: int,
                 theta_max: float = DEFAULT_THETA_MAX):
    """Broadcast per-row turn values into the two direction channels.

    Each row's normalized metric fills every column of yaw_cw when the sign
    is positive, yaw_ccw when negative; both stay zero on straight rows.
    """
    theta_rows = np.asarray(theta_rows, dtype=np.float64)
    sign_rows = np.asarray(sign_rows)
    if theta_rows.shape[0] != H or sign_rows.shape[0] != H:
        raise ValidationError("theta/sign rows must match tile height")
    norm = normalize_theta(theta_rows, theta_max).astype(np.float32)
    cw = np.zeros((H, W), dtype=np.float32)
    ccw = np.zeros((H, W), dtype=np.float32)
    cw[sign_rows > 0] = norm[sign_rows > 0, None]
    ccw[sign_rows < 0] = norm[sign_rows < 0, None]
    return cw, ccw


def build_conditioning(snippet: Snippet, theta_rows, sign_rows, H: int, W: int,
                       theta_max: float = DEFAULT_THETA_MAX) -> ConditioningBlock:
    cw, ccw = yaw_channels(theta_rows, sign_rows, H, W, theta_max)
    return ConditioningBlock(snippet=snippet, yaw_cw=cw, yaw_ccw=ccw)


@dataclass(frozen=True)
class GeneratorInput:
    """4-channel stack: [semantic map, yaw_cw, yaw_ccw, padded snippet]."""

    channels: np.ndarray  # (4, H, W) float32

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=np.float32)
        if ch.ndim != 3 or ch.shape[0] != 4:
            raise ValidationError("generator input must have exactly 4 channels")
        if ch.min() < 0.0 or ch.max() > 1.0:
            raise ValidationError("generator input outside [0, 1]")
        object.__setattr__(self, "channels", ch)

    @property
    def semantic_map(self) -> np.ndarray:
        return self.channels[0]

    @property
    def yaw_cw(self) -> np.ndarray:
        return self.channels[1]

    @property
    def yaw_ccw(self) -> np.ndarray:
        return self.channels[2]

    @property
    def snippet_padded(self) -> np.ndarray:
        return self.channels[3]


@dataclass(frozen=True)
class DiscriminatorInput:
    """3-channel stack: [semantic map, padded snippet, image]. No yaw."""

    channels: np.ndarray  # (3, H, W) float32

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=np.float32)
        if ch.ndim != 3 or ch.shape[0] != 3:
            raise ValidationError("discriminator input must have exactly 3 channels")
        object.__setattr__(self, "channels", ch)


def normalize_labels(labels: np.ndarray) -> np.ndarray:
    """Map label codes onto [0, 1] as code / (num_labels - 1)."""
    return (np.asarray(labels, dtype=np.float32) / (NUM_LABELS - 1))


def pad_snippet(snippet: Snippet, H: int, W: int) -> np.ndarray:
    """Place the snippet in the top rows of an otherwise-zero (H, W) plane."""
    s, w = snippet.rows.shape
    if s > H or w != W:
        raise ValidationError("snippet does not fit the tile")
    plane = np.zeros((H, W), dtype=np.float32)
    plane[:s] = snippet.rows
    return plane


def assemble_generator_input(x: SemanticTile, cond: ConditioningBlock) -> GeneratorInput:
    H, W = x.labels.shape
    if cond.yaw_cw.shape != (H, W):
        raise ValidationError("conditioning block does not match tile shape")
    stack = np.stack([
        normalize_labels(x.labels),
        cond.yaw_cw,
        cond.yaw_ccw,
        pad_snippet(cond.snippet, H, W),
    ])
    return GeneratorInput(channels=stack)


def assemble_discriminator_input(x: SemanticTile, snippet: Snippet,
                                 image: np.ndarray) -> DiscriminatorInput:
    H, W = x.labels.shape
    image = np.asarray(image, dtype=np.float32)
    if image.shape != (H, W):
        raise ValidationError("image does not match tile shape")
    stack = np.stack([
        normalize_labels(x.labels),
        pad_snippet(snippet, H, W),
        image,
    ])
    return DiscriminatorInput(channels=stack)
