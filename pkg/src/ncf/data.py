"""Toy 2-D samplers, labeled Gaussian mixtures, PPM images as RGB pixel clouds, normalization."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .transport import SampleSet

KINDS_2D = ("swiss_roll", "double_moons", "checkerboard", "eight_gaussians", "labeled_gaussian_mixture")


@dataclass(frozen=True)
class Distribution2D:
    """A 2-D sampler. ``centers``/``sigma`` only apply to ``labeled_gaussian_mixture``.

    ``labels[i]`` gives the class of component ``i``; by default each
    component is its own class.
    """

    kind: str
    noise: float | None = None
    centers: tuple = field(default=())
    sigma: float = 0.1
    labels: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS_2D:
            raise ValueError(f"unknown distribution '{self.kind}'; expected one of {', '.join(KINDS_2D)}")
        if self.kind == "labeled_gaussian_mixture" and not self.centers:
            raise ValueError("labeled_gaussian_mixture needs at least one center")


# Two-class layouts: the source classes sit in a column, the target classes in a row.
PRESETS = {
    "vertical_gaussians": Distribution2D("labeled_gaussian_mixture",
                                         centers=((0.0, 0.5), (0.0, -0.5)), sigma=0.1),
    "horizontal_gaussians": Distribution2D("labeled_gaussian_mixture",
                                           centers=((-0.5, 0.0), (0.5, 0.0)), sigma=0.1),
}


def get_distribution(name: str) -> Distribution2D:
    if name in PRESETS:
        return PRESETS[name]
    return Distribution2D(name)


def _swiss_roll(n, rng, noise):
    theta = rng.uniform(1.5 * np.pi, 4.5 * np.pi, n)
    pts = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1) / (4.5 * np.pi)
    return pts + (0.01 if noise is None else noise) * rng.standard_normal((n, 2))


def _double_moons(n, rng, noise):
    upper = rng.permutation(n) < (n + 1) // 2
    a = rng.uniform(0.0, np.pi, n)
    x = np.where(upper, np.cos(a), 1.0 - np.cos(a))
    y = np.where(upper, np.sin(a), 0.5 - np.sin(a))
    pts = np.stack([x, y], axis=1) + (0.05 if noise is None else noise) * rng.standard_normal((n, 2))
    # center the pair of moons on the origin and fit it roughly inside [-1, 1]^2
    return (pts - np.array([0.5, 0.25])) / 1.5


def _eight_gaussians(n, rng, noise):
    k = rng.integers(0, 8, n)
    ang = 2.0 * np.pi * k / 8.0
    centers = 0.8 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return centers + (0.05 if noise is None else noise) * rng.standard_normal((n, 2))


def _checkerboard(n, rng, noise):
    # 4x4 grid of side 0.5 on [-1, 1]^2; the cell (i, j) is white when i + j is even
    cells = np.array([(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0])
    pick = cells[rng.integers(0, len(cells), n)]
    return -1.0 + 0.5 * (pick + rng.random((n, 2)))


def _mixture(n, rng, dist):
    centers = np.asarray(dist.centers, dtype=np.float64)
    comp = rng.integers(0, len(centers), n)
    pts = centers[comp] + dist.sigma * rng.standard_normal((n, centers.shape[1]))
    lab_map = np.asarray(dist.labels if dist.labels else range(len(centers)), dtype=np.int64)
    return pts, lab_map[comp], int(lab_map.max()) + 1


def sample_2d(dist, n: int, seed: int = 0) -> SampleSet:
    """Draw ``n`` points; a pure function of ``(dist, n, seed)``."""
    if isinstance(dist, str):
        dist = get_distribution(dist)
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    if dist.kind == "labeled_gaussian_mixture":
        pts, labels, k = _mixture(n, rng, dist)
        return SampleSet(pts, labels, n_classes=k)
    gen = {"swiss_roll": _swiss_roll, "double_moons": _double_moons,
           "eight_gaussians": _eight_gaussians, "checkerboard": _checkerboard}[dist.kind]
    return SampleSet(gen(n, rng, dist.noise))


# -- normalization -------------------------------------------------------------

def fit_normalization(*point_sets, mode: str = "box") -> tuple[np.ndarray, np.ndarray]:
    """Shared (shift, scale) for the pooled sets.

    ``box`` maps the pooled range onto [-1, 1] per axis; ``cube`` centers the
    pooled bounding box and divides every axis by its largest half-width, so
    the data fit in [-1, 1]^d; ``standard`` gives zero mean and unit
    variance; ``isotropic`` centers and divides every axis by the RMS
    standard deviation; ``identity`` leaves coordinates alone. The
    single-scale modes (``cube``, ``isotropic``) keep quadratic-cost optimal
    maps optimal.
    """
    pts = np.concatenate([np.atleast_2d(p) for p in point_sets], axis=0)
    if pts.size == 0:
        raise ValueError("cannot normalize an empty set")
    d = pts.shape[1]
    if mode == "identity":
        return np.zeros(d), np.ones(d)
    if mode == "box":
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        shift, scale = 0.5 * (lo + hi), 0.5 * (hi - lo)
    elif mode == "cube":
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        shift, scale = 0.5 * (lo + hi), np.full(d, 0.5 * np.max(hi - lo))
    elif mode == "standard":
        shift, scale = pts.mean(axis=0), pts.std(axis=0)
    elif mode == "isotropic":
        shift = pts.mean(axis=0)
        scale = np.full(d, np.sqrt(pts.var(axis=0).mean()))
    else:
        raise ValueError(f"unknown normalization mode '{mode}'")
    flat = scale <= 1e-300
    if flat.any():
        warnings.warn(f"zero-range dimension(s) {np.flatnonzero(flat).tolist()}; scale set to 1",
                      RuntimeWarning, stacklevel=2)
        scale = np.where(flat, 1.0, scale)
    return shift, scale


def normalize(s: SampleSet, mode: str = "box", stats=None) -> SampleSet:
    """Return a copy whose ``points`` are normalized; the inverse is stored on the set.

    ``stats`` reuses a (shift, scale) pair, e.g. one pooled over source and target.
    """
    shift, scale = fit_normalization(s.points, mode=mode) if stats is None else stats
    shift, scale = np.asarray(shift, dtype=np.float64), np.asarray(scale, dtype=np.float64)
    return SampleSet((s.points - shift) / scale, None if s.labels is None else s.labels.copy(),
                     shift, scale, s.n_classes)


def denormalize(s: SampleSet) -> SampleSet:
    return SampleSet(s.points * s.scale + s.shift, None if s.labels is None else s.labels.copy(),
                     None, None, s.n_classes)


def raw_frame(s: SampleSet) -> SampleSet:
    """Raw points of ``s`` with its normalization attached (the layout pushforward expects)."""
    return SampleSet(s.to_raw(s.points), s.labels, s.shift, s.scale, s.n_classes)


# -- PPM images ------------------------------------------------------------------

@dataclass
class PixelCloud:
    """RGB pixels in [0, 1], row-major, with the image geometry."""

    pixels: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 3)
        if self.pixels.shape[0] != self.width * self.height:
            raise ValueError(f"{self.pixels.shape[0]} pixels do not fill a {self.width}x{self.height} image")

    def as_samples(self) -> SampleSet:
        return SampleSet(self.pixels)

    def with_pixels(self, pixels) -> "PixelCloud":
        return PixelCloud(np.clip(pixels, 0.0, 1.0), self.width, self.height)


_HEADER = re.compile(rb"P6(?:\s+(?:#[^\n]*\n\s*)*)(\d+)(?:\s+(?:#[^\n]*\n\s*)*)(\d+)"
                     rb"(?:\s+(?:#[^\n]*\n\s*)*)(\d+)\s")


def parse_ppm(data: bytes, name: str = "<bytes>") -> PixelCloud:
    m = _HEADER.match(data)
    if not m:
        raise ValueError(f"{name}: malformed P6 header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{name}: only maxval 255 is supported, got {maxval}")
    if w < 1 or h < 1:
        raise ValueError(f"{name}: empty image {w}x{h}")
    body = data[m.end():]
    need = 3 * w * h
    if len(body) < need:
        raise ValueError(f"{name}: truncated payload ({len(body)} of {need} bytes)")
    px = np.frombuffer(body[:need], dtype=np.uint8).reshape(-1, 3) / 255.0
    return PixelCloud(px, w, h)


def load_ppm(path) -> PixelCloud:
    with open(path, "rb") as fh:
        return parse_ppm(fh.read(), str(path))


def encode_ppm(cloud: PixelCloud) -> bytes:
    q = np.rint(np.clip(cloud.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P6\n{cloud.width} {cloud.height}\n255\n".encode() + q.tobytes()


def save_ppm(cloud: PixelCloud, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(cloud))


def synthetic_image(palette, width: int = 64, height: int = 64, seed: int = 0,
                    jitter: float = 0.04) -> PixelCloud:
    """Blocky test image: smooth blend of palette colors plus per-pixel jitter."""
    palette = np.asarray(palette, dtype=np.float64)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    u, v = xx / max(width - 1, 1), yy / max(height - 1, 1)
    # four corner weights, one palette entry per corner (cycled)
    wts = np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v], axis=-1)
    cols = palette[np.arange(4) % len(palette)]
    img = wts.reshape(-1, 4) @ cols
    img += jitter * rng.standard_normal(img.shape)
    return PixelCloud(np.clip(img, 0.0, 1.0), width, height)
