"""Closed-form forward/backward transport maps of a trained potential, and point-cloud I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .cost import CostModel


@dataclass
class SampleSet:
    """Points in the raw data frame plus the affine normalization used for training.

    ``normalized = (points - shift) / scale`` per dimension.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None
    n_classes: int | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        d = self.points.shape[1]
        self.shift = np.zeros(d) if self.shift is None else np.asarray(self.shift, dtype=np.float64)
        self.scale = np.ones(d) if self.scale is None else np.asarray(self.scale, dtype=np.float64)
        if self.shift.shape != (d,) or self.scale.shape != (d,):
            raise ValueError("normalization vectors must have one entry per dimension")
        if np.any(self.scale <= 0):
            raise ValueError("normalization scale must be strictly positive")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.points),):
                raise ValueError("need exactly one label per point")
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
            if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def normalized(self) -> np.ndarray:
        return (self.points - self.shift) / self.scale

    def to_raw(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.scale + self.shift

    def with_points(self, points: np.ndarray) -> "SampleSet":
        return replace(self, points=np.array(points, dtype=np.float64, copy=True),
                       labels=None if self.labels is None else self.labels.copy())

    def subset(self, idx) -> "SampleSet":
        return replace(self, points=self.points[idx],
                       labels=None if self.labels is None else self.labels[idx])


def _check_points(model, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.dim:
        raise ValueError(f"model is {model.dim}-dimensional but points have {x.shape[1]} columns")
    return x


def forward_map(model, cost: CostModel, x, t_f: float = 1.0) -> np.ndarray:
    """x + t_f * grad_h(grad_x u(x, 0))."""
    x = _check_points(model, x)
    _, p, _ = model.evaluate(x, np.zeros(len(x)), grad=True)
    return x + t_f * cost.grad_h_t(p).value


def backward_map(model, cost: CostModel, y, t_f: float = 1.0) -> np.ndarray:
    """y - t_f * grad_h(grad_x u(y, t_f))."""
    y = _check_points(model, y)
    _, p, _ = model.evaluate(y, np.full(len(y), float(t_f)), grad=True)
    return y - t_f * cost.grad_h_t(p).value


def characteristic(model, cost: CostModel, x, t, t_f: float = 1.0) -> np.ndarray:
    """Positions x + t * grad_h(grad_x u(x, 0)) along the straight characteristics."""
    x = _check_points(model, x)
    _, p, _ = model.evaluate(x, np.zeros(len(x)), grad=True)
    return x + float(t) * cost.grad_h_t(p).value


def pushforward(samples: SampleSet, model, cost: CostModel, direction: str = "forward",
                t_f: float = 1.0, frame: SampleSet | None = None) -> SampleSet:
    """Transport every point of ``samples``; labels and normalization are carried over.

    The map acts in the normalized frame of ``frame`` (default: ``samples``
    itself); the output is returned in raw coordinates.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got '{direction}'")
    frame = samples if frame is None else frame
    z = (samples.points - frame.shift) / frame.scale
    fn = forward_map if direction == "forward" else backward_map
    moved = fn(model, cost, z, t_f)
    return samples.with_points(moved * frame.scale + frame.shift)


# -- CSV point clouds -----------------------------------------------------------

def write_points_csv(path, samples: SampleSet) -> None:
    d = samples.dim
    header = [f"x{i}" for i in range(d)]
    if samples.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(samples.points):
            out = [repr(float(v)) for v in row]
            if samples.labels is not None:
                out.append(str(int(samples.labels[i])))
            w.writerow(out)


def read_points_csv(path) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty point file") from None
        has_label = header[-1] == "label"
        d = len(header) - int(has_label)
        if d < 1 or header[:d] != [f"x{i}" for i in range(d)]:
            raise ValueError(f"{path}: header must read x0,...,x{{d-1}}[,label]")
        pts, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            pts.append([float(v) for v in row[:d]])
            if has_label:
                labels.append(int(row[d]))
    if not pts:
        raise ValueError(f"{path}: no points")
    return SampleSet(np.array(pts), np.array(labels) if has_label else None)
