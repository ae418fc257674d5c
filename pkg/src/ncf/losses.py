"""Training objectives: implicit Hamilton-Jacobi residuals and energy-distance MMD.

Functions suffixed ``_t`` build tape tensors for training; the others are
numpy entry points for evaluation and tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .cost import CostModel
from .transport import SampleSet


@dataclass(frozen=True)
class LossWeights:
    hj_forward: float = 1.0
    hj_backward: float = 1.0
    mmd_forward: float = 1.0
    mmd_backward: float = 1.0

    def __post_init__(self):
        vals = (self.hj_forward, self.hj_backward, self.mmd_forward, self.mmd_backward)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError("loss weights must be finite and nonnegative")
        if self.mmd_forward <= 0 and self.mmd_backward <= 0:
            raise ValueError("at least one MMD weight must be positive")

    @classmethod
    def from_lambda(cls, lam: float, hj: float = 1.0) -> "LossWeights":
        return cls(hj, hj, lam, lam)

    def as_tuple(self) -> tuple:
        return (self.hj_forward, self.hj_backward, self.mmd_forward, self.mmd_backward)


@dataclass
class CollocationBatch:
    x: np.ndarray
    t: np.ndarray
    t_f: float = 1.0

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if self.t.shape[0] != self.x.shape[0]:
            raise ValueError("need one time per collocation point")
        if np.any(self.t < 0) or np.any(self.t > self.t_f):
            raise ValueError(f"collocation times must lie in [0, {self.t_f}]")


def bounding_box(*arrays, margin: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box around all points, widened by ``margin`` of its extent on each side."""
    pts = np.concatenate([np.atleast_2d(a) for a in arrays], axis=0)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


def sample_collocation(lo, hi, n: int, t_f: float, rng: np.random.Generator) -> CollocationBatch:
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    x = lo + (hi - lo) * rng.random((n, lo.size))
    t = t_f * rng.random(n)
    return CollocationBatch(x, t, t_f)


# -- tape builders ---------------------------------------------------------

def forward_map_t(pot, cost: CostModel, x, t_f: float) -> Tensor:
    x = ad.as_tensor(x)
    _, p, _ = pot.evaluate(x, np.zeros(x.shape[0]), grad=True)
    return x + t_f * cost.grad_h_t(p)


def backward_map_t(pot, cost: CostModel, y, t_f: float) -> Tensor:
    y = ad.as_tensor(y)
    _, p, _ = pot.evaluate(y, np.full(y.shape[0], float(t_f)), grad=True)
    return y - t_f * cost.grad_h_t(p)


def hj_forward_t(pot, cost: CostModel, x: np.ndarray, t: np.ndarray) -> Tensor:
    n = x.shape[0]
    u, p, _ = pot.evaluate(x, t, grad=True)
    v = cost.grad_h_t(p)
    tt = t.reshape(n, 1)
    u_origin, _, _ = pot.evaluate(x - tt * v, np.zeros(n))
    return u + t * cost.h_t(p) - t * (p * v).sum(axis=1) - u_origin


def hj_backward_t(pot, cost: CostModel, x: np.ndarray, t: np.ndarray, t_f: float,
                  literal: bool = False) -> Tensor:
    """Residual anchored at the terminal slice u(., t_f).

    The horizon is ``t_f - t`` (time left to the terminal slice); ``literal``
    uses ``t`` itself as the horizon instead.
    """
    n = x.shape[0]
    u, p, _ = pot.evaluate(x, t, grad=True)
    v = cost.grad_h_t(p)
    tau = t if literal else t_f - t
    u_end, _, _ = pot.evaluate(x + tau.reshape(n, 1) * v, np.full(n, float(t_f)))
    return u - tau * cost.h_t(p) + tau * (p * v).sum(axis=1) - u_end


def mmd_sq_t(x, y) -> Tensor:
    """Squared energy distance (V-statistic, kernel -|a - b|)."""
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    n, m = x.shape[0], y.shape[0]
    if n == 0 or m == 0:
        raise ValueError("MMD needs nonempty sample sets")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    cross = ad.pairwise_distance_sum(x, y)
    sxx = ad.pairwise_distance_sum(x)
    syy = ad.pairwise_distance_sum(y)
    return (2.0 / (n * m)) * cross - (1.0 / (n * n)) * sxx - (1.0 / (m * m)) * syy


def _class_index(labels: np.ndarray, k: int, side: str) -> np.ndarray:
    idx = np.flatnonzero(labels == k)
    if idx.size == 0:
        raise ValueError(f"class {k} is empty in the {side} set")
    return idx


def mmd_sq_classwise_t(x, x_labels, y, y_labels, n_classes: int) -> Tensor:
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    terms = []
    for k in range(n_classes):
        ix = _class_index(x_labels, k, "first")
        iy = _class_index(y_labels, k, "second")
        terms.append(mmd_sq_t(ad.take(x, ix), ad.take(y, iy)))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / n_classes)


def loss_terms(pot, cost: CostModel, colloc: CollocationBatch, src, tgt, weights: LossWeights,
               class_conditional: bool = False, t_f: float = 1.0,
               literal_backward: bool = False) -> dict:
    """All loss components plus their weighted ``total``, as tape tensors.

    ``src`` and ``tgt`` are point arrays or :class:`SampleSet` objects already
    in the training frame.
    """
    xs, ls = _points_labels(src)
    ys, lt = _points_labels(tgt)
    r_f = hj_forward_t(pot, cost, colloc.x, colloc.t)
    r_b = hj_backward_t(pot, cost, colloc.x, colloc.t, t_f, literal_backward)
    moved_src = forward_map_t(pot, cost, xs, t_f)
    moved_tgt = backward_map_t(pot, cost, ys, t_f)
    if class_conditional:
        if ls is None or lt is None:
            raise ValueError("class-conditional loss needs labeled source and target samples")
        k = max(int(ls.max()), int(lt.max())) + 1
        mmd_f = mmd_sq_classwise_t(moved_src, ls, ys, lt, k)
        mmd_b = mmd_sq_classwise_t(xs, ls, moved_tgt, lt, k)
    else:
        mmd_f = mmd_sq_t(moved_src, ys)
        mmd_b = mmd_sq_t(xs, moved_tgt)
    terms = {
        "hj_f": (r_f * r_f).mean(),
        "hj_b": (r_b * r_b).mean(),
        "mmd_f": mmd_f,
        "mmd_b": mmd_b,
    }
    w = weights
    terms["total"] = (w.hj_forward * terms["hj_f"] + w.hj_backward * terms["hj_b"]
                      + w.mmd_forward * terms["mmd_f"] + w.mmd_backward * terms["mmd_b"])
    return terms


def _points_labels(s):
    if isinstance(s, SampleSet):
        return s.points, s.labels
    return np.atleast_2d(np.asarray(s, dtype=np.float64)), None


# -- numpy entry points ------------------------------------------------------

def _residual_values(build, what: str) -> np.ndarray:
    try:
        r = build()
    except NonFiniteError as exc:
        row = exc.index[0] if exc.index else "?"
        raise NonFiniteError(exc.primitive, f"{what} residual at collocation index {row}",
                             exc.index) from exc
    return r.value.copy()


def hj_residuals_forward(model, cost: CostModel, batch: CollocationBatch) -> np.ndarray:
    return _residual_values(lambda: hj_forward_t(model, cost, batch.x, batch.t), "forward")


def hj_residuals_backward(model, cost: CostModel, batch: CollocationBatch,
                          literal: bool = False) -> np.ndarray:
    return _residual_values(
        lambda: hj_backward_t(model, cost, batch.x, batch.t, batch.t_f, literal), "backward")


def mmd_sq(x, y) -> float:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return float(mmd_sq_t(x, y).value)


def mmd_sq_classwise(x: SampleSet, y: SampleSet, n_classes: int | None = None) -> float:
    if x.labels is None or y.labels is None:
        raise ValueError("class-conditional MMD needs labeled sets")
    k = n_classes if n_classes is not None else max(x.n_classes, y.n_classes)
    return float(mmd_sq_classwise_t(x.points, x.labels, y.points, y.labels, k).value)


def total_loss(model, cost: CostModel, colloc: CollocationBatch, src, tgt, weights: LossWeights,
               class_conditional: bool = False, t_f: float | None = None) -> float:
    t_f = colloc.t_f if t_f is None else t_f
    return float(loss_terms(model, cost, colloc, src, tgt, weights, class_conditional, t_f)["total"].value)
