"""Metrics and diagnostic oracles: color histograms, 1-D rearrangement, round trips, reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cost import CostModel
from .gaussian import uvp  # noqa: F401  (re-exported: UVP lives with the Gaussian oracle)
from .transport import backward_map, forward_map

DEFAULT_BINS = 256


@dataclass
class ChannelHistogram:
    """Per-channel normalized histograms over [0, 1]; ``counts`` has shape (channels, bins)."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.atleast_2d(np.asarray(self.counts, dtype=np.float64))
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be nonnegative")
        sums = self.counts.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError(f"each channel must sum to 1, got {sums}")

    @property
    def bins(self) -> int:
        return self.counts.shape[1]

    @classmethod
    def from_pixels(cls, pixels, bins: int = DEFAULT_BINS) -> "ChannelHistogram":
        """Histogram of values in [0, 1] (clipped), one row per channel in storage order."""
        px = np.clip(np.atleast_2d(np.asarray(pixels, dtype=np.float64)), 0.0, 1.0)
        idx = np.minimum((px * bins).astype(np.int64), bins - 1)
        counts = np.stack([np.bincount(idx[:, c], minlength=bins) for c in range(px.shape[1])])
        return cls(counts / px.shape[0])


def _check_pair(h1: ChannelHistogram, h2: ChannelHistogram) -> None:
    if h1.counts.shape != h2.counts.shape:
        raise ValueError(f"histogram shapes differ: {h1.counts.shape} vs {h2.counts.shape}")


def emd_1d(h1: ChannelHistogram, h2: ChannelHistogram) -> float:
    """Per-channel (1/B) * sum_b |CDF1(b) - CDF2(b)|, averaged over channels."""
    _check_pair(h1, h2)
    cdf_gap = np.abs(np.cumsum(h1.counts, axis=1) - np.cumsum(h2.counts, axis=1))
    return float(np.mean(cdf_gap.sum(axis=1) / h1.bins))


def hist_intersection(h1: ChannelHistogram, h2: ChannelHistogram) -> float:
    """Per-channel sum of bin-wise minima, averaged over channels."""
    _check_pair(h1, h2)
    return float(np.mean(np.minimum(h1.counts, h2.counts).sum(axis=1)))


def monotone_1d_oracle(mu_samples, nu_samples, transport: Callable, n_quantiles: int = 99) -> float:
    """RMS gap between a learned 1-D map and the monotone rearrangement, in target-sigma units.

    Both are compared at the empirical ``i / (n_quantiles + 1)`` quantiles of
    the source: the oracle sends the source quantile to the matching target
    quantile.
    """
    mu = np.asarray(mu_samples, dtype=np.float64)
    nu = np.asarray(nu_samples, dtype=np.float64)
    for name, s in (("source", mu), ("target", nu)):
        if s.ndim == 2 and s.shape[1] != 1:
            raise ValueError(f"{name} samples must be 1-dimensional, got {s.shape[1]} columns")
        if s.size < 1000:
            raise ValueError(f"{name} needs at least 1000 samples, got {s.size}")
    mu, nu = mu.ravel(), nu.ravel()
    levels = np.arange(1, n_quantiles + 1) / (n_quantiles + 1)
    xq = np.quantile(mu, levels)
    oracle = np.quantile(nu, levels)
    learned = np.asarray(transport(xq.reshape(-1, 1)), dtype=np.float64).ravel()
    return float(np.sqrt(np.mean((learned - oracle) ** 2)) / nu.std())


def mean_pairwise_distance(points, max_points: int = 2000) -> float:
    """Mean |x - x'| over distinct pairs of (at most ``max_points`` leading) points."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))[:max_points]
    n = len(x)
    if n < 2:
        return 0.0
    total = 0.0
    for i in range(n - 1):
        total += np.sqrt(((x[i + 1:] - x[i]) ** 2).sum(axis=1)).sum()
    return total / (n * (n - 1) / 2)


def round_trip_error(model, cost: CostModel, samples, t_f: float = 1.0) -> float:
    """Mean |backward(forward(x)) - x| relative to the mean pairwise distance of the set."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    back = backward_map(model, cost, forward_map(model, cost, x, t_f), t_f)
    gap = np.sqrt(((back - x) ** 2).sum(axis=1)).mean()
    scale = mean_pairwise_distance(x)
    return float(gap / scale) if scale > 0 else float(gap)


# -- reports -------------------------------------------------------------------------

def write_metrics_csv(path, rows) -> None:
    """``rows`` are ``(metric, direction, value)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "direction", "value"])
        for metric, direction, value in rows:
            w.writerow([metric, direction, repr(float(value))])


def read_metrics_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["metric", "direction", "value"]:
            raise ValueError(f"{path}: not a metrics file")
        return [(m, d, float(v)) for m, d, v in reader]


def transport_svg(path, src, moved, tgt=None, size: int = 480, max_points: int = 400) -> None:
    """Scatter of source points, their images, and the straight segments between them."""
    src = np.asarray(src, dtype=np.float64)[:max_points, :2]
    moved = np.asarray(moved, dtype=np.float64)[:max_points, :2]
    tgt = None if tgt is None else np.asarray(tgt, dtype=np.float64)[:max_points, :2]
    pool = [src, moved] + ([tgt] if tgt is not None else [])
    pts = np.concatenate(pool)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    pad = 16

    def px(p):
        q = (p - lo) / span
        return pad + q[:, 0] * (size - 2 * pad), size - pad - q[:, 1] * (size - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
           '<rect width="100%" height="100%" fill="white"/>']
    (sx, sy), (mx, my) = px(src), px(moved)
    for a, b, c, e in zip(sx, sy, mx, my):
        out.append(f'<line x1="{a:.1f}" y1="{b:.1f}" x2="{c:.1f}" y2="{e:.1f}" stroke="#bbb" stroke-width="0.5"/>')
    layers = [(src, "#1f77b4"), (moved, "#d62728")] + ([(tgt, "#2ca02c")] if tgt is not None else [])
    for arr, color in layers:
        xs, ys = px(arr)
        out += [f'<circle cx="{a:.1f}" cy="{b:.1f}" r="1.5" fill="{color}"/>' for a, b in zip(xs, ys)]
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
