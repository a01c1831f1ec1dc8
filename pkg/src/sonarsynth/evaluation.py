"""Quantitative assessment: Fréchet distance, seam continuity, drift,
viewpoint consistency, shear estimation, and throughput.

The feature embedder is a seeded random convolutional projection rather than
a pretrained classifier, so distances are comparable across runs of this
package but not against externally published figures; a precomputed-feature
path exists for when a reference embedder's outputs are available as files.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch

from .errors import FormatError, NumericError, ValidationError
from .mission import SemanticTile, TerrainLabel
from .sequence import MissionScan

#: Real-sensor acquisition rate the paper benchmarks against (px/s).
ACQUISITION_PX_PER_S = 17_100.0


@dataclass(frozen=True)
class FrechetStats:
    """Gaussian moment fit (mean, covariance, sample count) of features."""

    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise ValidationError("mu must be (d,), sigma (d, d)")
        if not np.allclose(sigma, sigma.T, atol=1e-8):
            raise ValidationError("sigma must be symmetric")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", (sigma + sigma.T) / 2.0)

    @property
    def dim(self) -> int:
        return int(self.mu.size)


class RandomConvEmbedder:
    """Seeded random strided conv stack -> d-dimensional image features.

    Deterministic given (seed, output_dim); use one instance for both
    distributions being compared.
    """

    def __init__(self, seed: int = 0, output_dim: int = 64):
        self.seed = seed
        self.output_dim = output_dim
        g = torch.Generator().manual_seed(seed)

        def conv(cin, cout, k, s):
            c = torch.nn.Conv2d(cin, cout, k, stride=s, padding=k // 2)
            with torch.no_grad():
                c.weight.copy_(torch.randn(c.weight.shape, generator=g)
                               / math.sqrt(cin * k * k))
                c.bias.zero_()
            return c

        self.net = torch.nn.Sequential(
            conv(1, 16, 5, 4), torch.nn.LeakyReLU(0.2),
            conv(16, 32, 5, 4), torch.nn.LeakyReLU(0.2),
            conv(32, 64, 5, 4), torch.nn.LeakyReLU(0.2),
            conv(64, output_dim, 1, 1),
        )
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def __call__(self, images: np.ndarray, batch: int = 8) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None]
        feats = []
        with torch.no_grad():
            for i in range(0, images.shape[0], batch):
                x = torch.from_numpy(images[i:i + batch])[:, None]
                y = self.net(x)
                feats.append(y.mean(dim=(2, 3)).numpy())
        return np.concatenate(feats, axis=0).astype(np.float64)


def load_feature_file(bin_path, sidecar_path=None) -> np.ndarray:
    """Read precomputed features: flat float32 binary + {"n", "d"} sidecar."""
    bin_path = Path(bin_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else bin_path.with_suffix(".json")
    if not bin_path.exists() or not sidecar_path.exists():
        raise FormatError(f"feature file or sidecar missing: {bin_path}")
    side = json.loads(sidecar_path.read_text())
    n, d = int(side["n"]), int(side["d"])
    data = np.fromfile(bin_path, dtype=np.float32)
    if data.size != n * d:
        raise FormatError(f"{bin_path}: expected {n * d} float32 values, got {data.size}")
    return data.reshape(n, d).astype(np.float64)


def save_feature_file(features: np.ndarray, bin_path) -> None:
    bin_path = Path(bin_path)
    features = np.asarray(features, dtype=np.float32)
    features.tofile(bin_path)
    bin_path.with_suffix(".json").write_text(
        json.dumps({"n": int(features.shape[0]), "d": int(features.shape[1])}))


def fit_features(features: np.ndarray) -> FrechetStats:
    """Moment fit with population covariance (idempotent under duplication)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("need at least 2 feature vectors")
    n, d = features.shape
    if n < d:
        warnings.warn(f"only {n} samples for {d}-dim covariance; "
                      "moments will be rank-deficient", stacklevel=2)
    mu = features.mean(axis=0)
    centered = features - mu
    sigma = centered.T @ centered / n
    return FrechetStats(mu=mu, sigma=sigma, n=n)


def embed_and_fit(images: Iterable[np.ndarray],
                  embedder: RandomConvEmbedder) -> FrechetStats:
    """Embed [0,1]-normalized images and fit Gaussian moments."""
    images = np.asarray(list(images) if not isinstance(images, np.ndarray) else images,
                        dtype=np.float32)
    if images.ndim == 2:
        images = images[None]
    if images.size == 0 or images.shape[0] < 2:
        raise ValidationError("need at least 2 images")
    lo, hi = float(images.min()), float(images.max())
    if lo < 0.0 or hi > 1.0:
        raise ValidationError(f"images must be normalized to [0, 1]; got [{lo}, {hi}]")
    return fit_features(embedder(images))


def _psd_sqrt(mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    scale = max(float(vals.max(initial=0.0)), 1.0)
    if vals.min(initial=0.0) < -tol * scale:
        raise NumericError(
            f"matrix not PSD within tolerance: min eig {vals.min()} vs scale {scale}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    """Squared Fréchet distance between two Gaussian moment fits.

    d^2 = |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), computed via
    eigendecomposition of the symmetrized product sqrt(S_a) S_b sqrt(S_a).
    Tiny negative results from eigen-noise (>= -1e-8) are clamped to zero.
    """
    if a.dim != b.dim:
        raise ValidationError(f"feature dims differ: {a.dim} vs {b.dim}")
    if np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma):
        return 0.0
    try:
        sqrt_a = _psd_sqrt(a.sigma)
        inner = _psd_sqrt(sqrt_a @ b.sigma @ sqrt_a)
    except np.linalg.LinAlgError as exc:
        conds = (np.linalg.cond(a.sigma), np.linalg.cond(b.sigma))
        raise NumericError(f"matrix square root failed (cond {conds})") from exc
    diff = a.mu - b.mu
    d2 = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma)
               - 2.0 * np.trace(inner))
    if d2 < 0.0:
        if d2 < -1e-8:
            raise NumericError(f"distance {d2} below the negativity tolerance")
        d2 = 0.0
    return d2


@dataclass
class SeamReport:
    seam_values: List[float]
    baseline: float
    ratio: float

    def to_dict(self) -> dict:
        return {"seam_values": self.seam_values, "baseline": self.baseline,
                "ratio": self.ratio}


def seam_discontinuity(scan: MissionScan) -> SeamReport:
    """Mean |row above - row below| at each seam, against the within-tile
    adjacent-row difference as baseline.

    Degenerate constant data (0/0) reports ratio 1.0 by convention; a
    discontinuity over a zero baseline reports +inf.
    """
    tiles = scan.tile_list
    if len(tiles) < 2:
        raise ValidationError("seam metric needs at least 2 tiles")
    seams = []
    interior = []
    for t, tile in enumerate(tiles):
        v = tile.valid_rows
        rows = tile.intensity[:v].astype(np.float64)
        if v >= 2:
            interior.append(np.abs(np.diff(rows, axis=0)).mean(axis=1))
        if t + 1 < len(tiles) and v == tile.intensity.shape[0]:
            nxt = tiles[t + 1].intensity
            seams.append(float(np.abs(rows[-1] - nxt[0].astype(np.float64)).mean()))
    if not seams:
        raise ValidationError("no full-height seams in scan")
    baseline = float(np.concatenate(interior).mean()) if interior else 0.0
    mean_seam = float(np.mean(seams))
    if baseline == 0.0:
        ratio = 1.0 if mean_seam == 0.0 else float("inf")
    else:
        ratio = mean_seam / baseline
    return SeamReport(seam_values=seams, baseline=baseline, ratio=ratio)


def viewpoint_consistency(gen_a: MissionScan, gen_b: MissionScan,
                          maps: Sequence[SemanticTile],
                          max_samples: int = 200_000,
                          seed: int = 0) -> Dict[str, Optional[float]]:
    """Per-label KS statistic between two generations of the same region.

    gen_b is expected to come from the row-reversed semantic maps (the same
    ground traversed the opposite way); labels absent from the maps are
    reported as None.
    """
    rng = np.random.default_rng(seed)
    tiles_a = gen_a.tile_list
    tiles_b = gen_b.tile_list
    if len(tiles_a) != len(maps) or len(tiles_b) != len(maps):
        raise ValidationError("scans and maps must have equal tile counts")
    label_grid = np.concatenate([m.labels[:m.valid_rows] for m in maps], axis=0)
    img_a = np.concatenate(
        [t.intensity[:t.valid_rows] for t in tiles_a], axis=0)
    img_b_rows = np.concatenate(
        [t.intensity[:t.valid_rows] for t in tiles_b], axis=0)
    img_b = img_b_rows[::-1]  # undo the traversal reversal

    out: Dict[str, Optional[float]] = {}
    for label in TerrainLabel:
        mask = label_grid == int(label)
        if not mask.any():
            out[label.name.lower()] = None
            continue
        xa = img_a[mask]
        xb = img_b[mask]
        if xa.size > max_samples:
            xa = rng.choice(xa, size=max_samples, replace=False)
        if xb.size > max_samples:
            xb = rng.choice(xb, size=max_samples, replace=False)
        out[label.name.lower()] = ks_statistic(xa, xb)
    return out


def ks_statistic(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (sup CDF difference)."""
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    y = np.sort(np.asarray(y, dtype=np.float64).ravel())
    if x.size == 0 or y.size == 0:
        raise ValidationError("KS statistic needs non-empty samples")
    grid = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, grid, side="right") / x.size
    cdf_y = np.searchsorted(y, grid, side="right") / y.size
    return float(np.abs(cdf_x - cdf_y).max())


def estimate_shear_rate(rows: np.ndarray, max_lag: int = 6,
                        smooth_px: int = 5) -> float:
    """Mean horizontal drift per row (px) via adjacent-row cross-correlation.

    Rows are lightly box-filtered along x to suppress single-pixel speckle,
    then correlation is aggregated over all row pairs and the integer peak
    refined with a parabolic fit; positive values mean rows slide toward +x.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValidationError("need at least 2 rows")
    if smooth_px > 1:
        kernel = np.ones(smooth_px) / smooth_px
        rows = np.apply_along_axis(
            lambda r: np.convolve(r, kernel, mode="same"), 1, rows)
    a = rows[:-1] - rows[:-1].mean(axis=1, keepdims=True)
    b = rows[1:] - rows[1:].mean(axis=1, keepdims=True)
    w = rows.shape[1]
    lags = np.arange(-max_lag, max_lag + 1)
    score = np.empty(lags.size)
    for i, lag in enumerate(lags):
        # Positive lag hypothesis: the next row equals this row slid +x.
        if lag >= 0:
            score[i] = float((a[:, :w - lag] * b[:, lag:]).sum())
        else:
            score[i] = float((a[:, -lag:] * b[:, :w + lag]).sum())
    best = int(np.argmax(score))
    if 0 < best < lags.size - 1:
        y0, y1, y2 = score[best - 1], score[best], score[best + 1]
        denom = y0 - 2 * y1 + y2
        frac = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        return float(lags[best] + np.clip(frac, -0.5, 0.5))
    return float(lags[best])


def throughput(generate_fn, tile_shape: tuple, n_tiles: int,
               warmup: int = 3) -> dict:
    """Time tile production and report px/s plus the real-time ratio.

    generate_fn(i) must produce one tile's worth of pixels. The benchmark
    assumes exclusive use of the machine; that assumption is recorded in the
    report rather than enforced.
    """
    if n_tiles < 1:
        raise ValidationError("n_tiles must be >= 1")
    h, w = tile_shape
    for i in range(warmup):
        generate_fn(i)
    t0 = time.perf_counter()
    for i in range(n_tiles):
        generate_fn(i)
    wall = time.perf_counter() - t0
    px_per_s = n_tiles * h * w / wall if wall > 0 else float("inf")
    return {
        "pixels_per_second": px_per_s,
        "realtime_ratio": px_per_s / ACQUISITION_PX_PER_S,
        "wall_time_s": wall,
        "n_tiles": n_tiles,
        "tile_shape": [h, w],
        "hardware_note": "wall-clock on the current host; assumes no concurrent load",
    }


def drift_check(scan: MissionScan, slope_limit: float = 1e-3) -> dict:
    """Least-squares slope of per-tile mean intensity vs tile index.

    Requires >= 100 tiles of a constant-map mission; verdict passes when
    |slope| stays under slope_limit per tile.
    """
    tiles = scan.tile_list
    if len(tiles) < 100:
        raise ValidationError(f"drift check needs >= 100 tiles, got {len(tiles)}")
    means = np.array([t.intensity[:t.valid_rows].mean() for t in tiles])
    idx = np.arange(means.size, dtype=np.float64)
    slope = float(np.polyfit(idx, means, 1)[0])
    return {"slope_per_tile": slope, "n_tiles": len(tiles),
            "pass": bool(abs(slope) < slope_limit), "limit": slope_limit}
