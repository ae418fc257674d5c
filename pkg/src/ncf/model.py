"""Parameterizations of the space-time potential u(x, t)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = ("softplus", "tanh")
QUADRATIC_INPUTS = ("none", "norm", "products")


class Potential:
    """Shared plumbing for potentials with a list of float64 parameter arrays.

    Subclasses implement ``_forward(params, x, t, grad)`` on tensors and return
    ``(u, grad_x, grad_t)``; the last two are ``None`` when ``grad`` is false.
    """

    dim: int
    params: list

    def _forward(self, params, x, t, grad):  # pragma: no cover - abstract
        raise NotImplementedError

    def evaluate(self, x, t, grad: bool = False):
        consts = [Tensor(p) for p in self.params]
        return self._forward(consts, ad.as_tensor(x), ad.as_tensor(t), grad)

    def bind(self, leaves: Sequence[Tensor]) -> "BoundPotential":
        if len(leaves) != len(self.params):
            raise ValueError("leaf count does not match parameter count")
        return BoundPotential(self, list(leaves))

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    def flat_params(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        if not np.isfinite(flat).all():
            raise ValueError("parameters must be finite")
        pos = 0
        for i, p in enumerate(self.params):
            self.params[i] = flat[pos:pos + p.size].reshape(p.shape).copy()
            pos += p.size

    def __call__(self, x, t) -> np.ndarray:
        u, _, _ = self.evaluate(x, t, grad=False)
        return u.value


class BoundPotential:
    """A potential evaluated with caller-supplied parameter tensors."""

    def __init__(self, model: Potential, leaves: list):
        self.model = model
        self.leaves = leaves
        self.dim = model.dim

    def evaluate(self, x, t, grad: bool = False):
        return self.model._forward(self.leaves, ad.as_tensor(x), ad.as_tensor(t), grad)


# ---------------------------------------------------------------------------
# MLP


class MlpPotential(Potential):
    """Fully connected u(x, t) with time fed in as one more input coordinate.

    ``dims`` runs from the input size ``d + 1`` to the scalar output, e.g.
    ``(3, 64, 64, 1)`` for a 2-D problem. ``quadratic`` appends extra
    first-layer inputs: ``"norm"`` adds ``|x|^2`` and ``"products"`` adds every
    ``x_i x_j`` with ``i <= j``. With ``dense_skip`` every layer after the
    first also sees the (augmented) input, as in densely connected potential
    networks. A positive ``residual_scale`` switches the hidden stack to
    ``y + k * sigma(y) A + b`` blocks, which needs equal hidden widths.
    """

    def __init__(self, dims: Sequence[int], activation: str = "softplus", beta: float = 100.0,
                 residual_scale: float = 0.0, quadratic: str = "none", dense_skip: bool = False,
                 params=None):
        dims = tuple(int(w) for w in dims)
        if len(dims) < 2 or min(dims) <= 0:
            raise ValueError(f"layer widths must be positive, got {dims}")
        if dims[-1] != 1:
            raise ValueError("final layer must output a single scalar")
        if dims[0] < 2:
            raise ValueError("input size must be d + 1 with d >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        if residual_scale > 0 and len(set(dims[1:-1])) > 1:
            raise ValueError("residual blocks need equal hidden widths")
        if residual_scale > 0 and dense_skip:
            raise ValueError("dense input skips and residual blocks are exclusive")
        self.dims = dims
        self.dim = dims[0] - 1
        self.activation = activation
        self.beta = float(beta)
        self.residual_scale = float(residual_scale)
        if quadratic not in QUADRATIC_INPUTS:
            raise ValueError(f"unknown quadratic input mode '{quadratic}'")
        self.quadratic = quadratic
        d = self.dim
        self._pairs = np.triu_indices(d) if quadratic == "products" else None
        self.n_extra = {"none": 0, "norm": 1, "products": d * (d + 1) // 2}[quadratic]
        self.dense_skip = bool(dense_skip)
        if params is None:
            params = [np.zeros(s) for s in self.param_shapes()]
        self.params = [np.asarray(p, dtype=np.float64).copy() for p in params]
        for p, s in zip(self.params, self.param_shapes()):
            if p.shape != s:
                raise ValueError(f"parameter shape {p.shape} does not match architecture {s}")

    def param_shapes(self) -> list:
        shapes = []
        n_in = self.dims[0] + self.n_extra
        fan_in = n_in
        for width in self.dims[1:]:
            shapes += [(fan_in, width), (width,)]
            fan_in = width + (n_in if self.dense_skip else 0)
        return shapes

    def descriptor(self) -> str:
        return (
            f"mlp dims={','.join(map(str, self.dims))} act={self.activation} "
            f"beta={self.beta!r} kappa={self.residual_scale!r} quad={self.quadratic} "
            f"dense={int(self.dense_skip)}"
        )

    def _act(self, z):
        if self.activation == "softplus":
            return ad.softplus(z, self.beta)
        return ad.tanh(z)

    def _act_slope(self, z, act_value):
        if self.activation == "softplus":
            return ad.sigmoid(z, self.beta)
        return 1.0 - ad.square(act_value)

    def _forward(self, params, x, t, grad):
        n, d = x.shape
        if d != self.dim:
            raise ValueError(f"model expects {self.dim} spatial dimensions, got {d}")
        cols = [x, t.reshape(n, 1)]
        if self.quadratic == "norm":
            cols.append((x * x).sum(axis=1, keepdims=True))
        elif self.quadratic == "products":
            xi, xj = x[:, self._pairs[0]], x[:, self._pairs[1]]
            cols.append(xi * xj)
        h = ad.concat(cols, axis=1)
        jac = None
        if grad:
            k = d + 1
            eye = np.eye(k).reshape(1, k, k)
            if self.quadratic != "none":
                if self.quadratic == "norm":
                    extra = (2.0 * x).reshape(n, d, 1)
                else:
                    # d(x_i x_j)/dx_k = [k = i] x_j + [k = j] x_i
                    e_i, e_j = (np.eye(d)[:, idx].reshape(1, d, -1) for idx in self._pairs)
                    extra = xj.reshape(n, 1, -1) * e_i + xi.reshape(n, 1, -1) * e_j
                extra = ad.concat([extra, np.zeros((n, 1, self.n_extra))], axis=1)
                jac = ad.concat([np.broadcast_to(eye, (n, k, k)), extra], axis=2)
            else:
                jac = Tensor(eye)
        weights = params[0::2]
        biases = params[1::2]
        n_layers = len(weights)
        if self.residual_scale > 0:
            h = h @ weights[0] + biases[0]
            if grad:
                jac = jac @ weights[0]
            for W, b in zip(weights[1:-1], biases[1:-1]):
                a = self._act(h)
                step = a @ W
                if grad:
                    slope = self._act_slope(h, a).reshape(n, 1, -1)
                    jac = jac + self.residual_scale * ((slope * jac) @ W)
                h = h + self.residual_scale * step + b
        else:
            inp, jac_inp = h, jac
            if grad and self.dense_skip and jac.shape[0] != n:
                jac_inp = np.broadcast_to(jac.value, (n,) + jac.shape[1:])
            for i in range(n_layers - 1):
                if i > 0 and self.dense_skip:
                    h = ad.concat([h, inp], axis=1)
                    if grad:
                        jac = ad.concat([jac, jac_inp], axis=2)
                z = h @ weights[i] + biases[i]
                h = self._act(z)
                if grad:
                    slope = self._act_slope(z, h).reshape(n, 1, -1)
                    jac = slope * (jac @ weights[i])
            if self.dense_skip and n_layers > 1:
                h = ad.concat([h, inp], axis=1)
                if grad:
                    jac = ad.concat([jac, jac_inp], axis=2)
        u = (h @ weights[-1] + biases[-1]).reshape(n)
        if not grad:
            return u, None, None
        g = (jac @ weights[-1]).reshape(-1, d + 1)
        if g.shape[0] != n:  # constant tangent block with a zero-depth network
            g = g + np.zeros((n, d + 1))
        return u, g[:, :d], g[:, d]


def mlp_init(dims: Sequence[int], activation: str = "softplus", seed: int = 0, *,
             beta: float = 100.0, residual_scale: float = 0.0, quadratic: str = "none",
             dense_skip: bool = False, zero_last: bool = False) -> MlpPotential:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    model = MlpPotential(dims, activation, beta, residual_scale, quadratic, dense_skip)
    rng = np.random.default_rng(seed)
    params = []
    shapes = model.param_shapes()
    for i, shape in enumerate(shapes):
        if len(shape) == 1:
            params.append(np.zeros(shape))
        elif zero_last and i == len(shapes) - 2:
            params.append(np.zeros(shape))
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params.append(rng.uniform(-bound, bound, size=shape))
    model.params = params
    return model


def dense_widths(d: int) -> list:
    """Hidden widths [max(2d,64), max(2d,64), max(d,32)] used for Gaussian-type problems."""
    return [max(2 * d, 64), max(2 * d, 64), max(d, 32)]


# ---------------------------------------------------------------------------
# quadratic-in-x potential


def _upper_tri_map(d: int) -> np.ndarray:
    """Linear map from the packed upper triangle to a row-major symmetric d x d matrix."""
    rows, cols = np.triu_indices(d)
    m = np.zeros((rows.size, d * d))
    for k, (i, j) in enumerate(zip(rows, cols)):
        m[k, i * d + j] = 1.0
        m[k, j * d + i] = 1.0
    return m


def pack_symmetric(mats: np.ndarray) -> np.ndarray:
    mats = np.asarray(mats, dtype=np.float64)
    d = mats.shape[-1]
    rows, cols = np.triu_indices(d)
    return 0.5 * (mats[..., rows, cols] + mats[..., cols, rows])


class QuadraticPotential(Potential):
    """u(x, t) = -(x^T A(t) x / 2 + b(t)^T x + c(t)) with symmetric A.

    Coefficients come either from trainable knots (linear interpolation in t)
    or from a fixed closed-form ``profile``: a callable mapping an array of
    times to ``(A, b, c, dA, db, dc)`` batched along the first axis.
    """

    def __init__(self, dim: int, t_f: float = 1.0, knots=None, theta2=None, theta1=None,
                 theta0=None, profile: Callable | None = None):
        self.dim = int(dim)
        self.t_f = float(t_f)
        self.profile = profile
        self._tri = _upper_tri_map(self.dim)
        if profile is not None:
            self.knots = None
            self.params = []
            return
        if knots is None:
            knots = np.linspace(0.0, self.t_f, 17)
        knots = np.asarray(knots, dtype=np.float64)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("need at least two knot times")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if knots[0] != 0.0 or not np.isclose(knots[-1], self.t_f, rtol=0, atol=1e-14):
            raise ValueError("knots must start at 0 and end at t_f")
        self.knots = knots
        n_k = knots.size
        t2 = np.zeros((n_k, self.dim, self.dim)) if theta2 is None else np.broadcast_to(
            np.asarray(theta2, dtype=np.float64), (n_k, self.dim, self.dim))
        t1 = np.zeros((n_k, self.dim)) if theta1 is None else np.broadcast_to(
            np.asarray(theta1, dtype=np.float64), (n_k, self.dim))
        t0 = np.zeros(n_k) if theta0 is None else np.broadcast_to(
            np.asarray(theta0, dtype=np.float64), (n_k,))
        self.params = [pack_symmetric(t2).copy(), np.array(t1, copy=True), np.array(t0, copy=True)]

    def descriptor(self) -> str:
        if self.profile is not None:
            return f"quadratic d={self.dim} t_f={self.t_f!r} profile=closed-form"
        return f"quadratic d={self.dim} t_f={self.t_f!r} knots={','.join(repr(float(k)) for k in self.knots)}"

    def _check_times(self, t: np.ndarray) -> None:
        tol = 1e-12 * max(1.0, self.t_f)
        if np.any(t < -tol) or np.any(t > self.t_f + tol):
            raise ValueError(f"times must lie in [0, {self.t_f}]")

    def _coefficients(self, params, t: Tensor):
        """Per-sample (A, b, c, dA, db, dc) as tensors; A is (N, d, d)."""
        n = t.shape[0]
        d = self.dim
        if self.profile is not None:
            coeffs = self.profile(t.value)
            return tuple(Tensor(c) for c in coeffs)
        tri, th1, th0 = params
        full = tri @ self._tri  # (K, d*d)
        seg = np.clip(np.searchsorted(self.knots, t.value, side="right") - 1, 0, self.knots.size - 2)
        lo_t, hi_t = self.knots[seg], self.knots[seg + 1]
        w = ((t - lo_t) * (1.0 / (hi_t - lo_t))).reshape(n, 1)
        inv_dt = (1.0 / (hi_t - lo_t)).reshape(n, 1)
        out = []
        rates = []
        for arr in (full, th1, th0.reshape(-1, 1)):
            lo, hi = ad.take(arr, seg), ad.take(arr, seg + 1)
            out.append(lo + w * (hi - lo))
            rates.append((hi - lo) * inv_dt)
        a, b, c = out[0].reshape(n, d, d), out[1], out[2].reshape(n)
        da, db, dc = rates[0].reshape(n, d, d), rates[1], rates[2].reshape(n)
        return a, b, c, da, db, dc

    def _forward(self, params, x, t, grad):
        n, d = x.shape
        if d != self.dim:
            raise ValueError(f"model expects {self.dim} spatial dimensions, got {d}")
        self._check_times(t.value)
        a, b, c, da, db, dc = self._coefficients(params, t)
        ax = (a * x.reshape(n, 1, d)).sum(axis=2)
        u = -(0.5 * (x * ax).sum(axis=1) + (b * x).sum(axis=1) + c)
        if not grad:
            return u, None, None
        gx = -(ax + b)
        dax = (da * x.reshape(n, 1, d)).sum(axis=2)
        gt = -(0.5 * (x * dax).sum(axis=1) + (db * x).sum(axis=1) + dc)
        return u, gx, gt


def quadratic_eval(q: QuadraticPotential, x, t: float):
    """Value, spatial gradient and time derivative of ``q`` at one point ``(x, t)``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    tt = np.array([float(t)])
    u, gx, gt = q.evaluate(x, tt, grad=True)
    return float(u.value[0]), gx.value[0].copy(), float(gt.value[0])
