"""Closed-form optimal transport between Gaussians, used as ground truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .model import QuadraticPotential

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def _round_robin(n: int) -> list:
    """Pairings for one cyclic-Jacobi sweep; each round holds disjoint (p, q) pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                pairs.append((min(p, q), max(p, q)))
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def sym_eig(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations on disjoint index pairs commute, so each round of the
    round-robin ordering is applied as one orthogonal similarity. Iteration
    stops once the off-diagonal Frobenius norm falls below ``JACOBI_TOL`` or
    stops decreasing (rounding floor of very large matrices).

    Returns ``(eigenvalues, eigenvectors)`` with ``S = V diag(w) V^T``.
    """
    a = np.array(S, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    n = a.shape[0]
    scale = max(1.0, np.linalg.norm(a))
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1:
        return a[0].copy(), v
    rounds = _round_robin(n)
    prev = np.inf
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < JACOBI_TOL or off >= prev:
            break
        prev = off
        for pairs in rounds:
            p = np.array([pq[0] for pq in pairs])
            q = np.array([pq[1] for pq in pairs])
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            # t = sgn(theta) / (|theta| + sqrt(theta^2 + 1)) written to avoid overflow
            big = np.abs(theta) > 1e150
            safe = np.where(big, 1.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0)))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(n)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.diag(a).copy(), v


def _spd_function(S: np.ndarray, fn: Callable) -> np.ndarray:
    w, v = sym_eig(S)
    if w.min() <= 0:
        raise ValueError(f"matrix is not positive definite (min eigenvalue {w.min():.3e})")
    r = (v * fn(w)) @ v.T
    return 0.5 * (r + r.T)


def spd_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric positive-definite square root R with R @ R = S."""
    return _spd_function(S, np.sqrt)


def spd_inv_sqrt(S: np.ndarray) -> np.ndarray:
    return _spd_function(S, lambda w: 1.0 / np.sqrt(w))


def monge_matrix(sigma_mu: np.ndarray, sigma_nu: np.ndarray) -> np.ndarray:
    """A = S_mu^{-1/2} (S_mu^{1/2} S_nu S_mu^{1/2})^{1/2} S_mu^{-1/2}."""
    root = spd_sqrt(sigma_mu)
    inv_root = spd_inv_sqrt(sigma_mu)
    middle = root @ sigma_nu @ root
    a = inv_root @ spd_sqrt(0.5 * (middle + middle.T)) @ inv_root
    return 0.5 * (a + a.T)


@dataclass
class GaussianPair:
    b_mu: np.ndarray
    sigma_mu: np.ndarray
    b_nu: np.ndarray
    sigma_nu: np.ndarray
    seed: int | None = None
    A: np.ndarray = field(init=False)

    def __post_init__(self):
        self.b_mu = np.atleast_1d(np.asarray(self.b_mu, dtype=np.float64))
        self.b_nu = np.atleast_1d(np.asarray(self.b_nu, dtype=np.float64))
        self.sigma_mu = np.atleast_2d(np.asarray(self.sigma_mu, dtype=np.float64))
        self.sigma_nu = np.atleast_2d(np.asarray(self.sigma_nu, dtype=np.float64))
        d = self.b_mu.size
        for name in ("sigma_mu", "sigma_nu"):
            m = getattr(self, name)
            if m.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}")
            w, _ = sym_eig(m)
            if w.min() <= 1e-10:
                raise ValueError(f"{name} is not positive definite")
        if self.b_nu.shape != (d,):
            raise ValueError("mean vectors must have equal length")
        self.A = monge_matrix(self.sigma_mu, self.sigma_nu)
        self._eig = sym_eig(self.A)

    @property
    def dim(self) -> int:
        return self.b_mu.size

    def sample_mu(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.b_mu + rng.standard_normal((n, self.dim)) @ spd_sqrt(self.sigma_mu)

    def sample_nu(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.b_nu + rng.standard_normal((n, self.dim)) @ spd_sqrt(self.sigma_nu)


def optimal_map(gp: GaussianPair, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return (x - gp.b_mu) @ gp.A.T + gp.b_nu


def _interp_inverse_diag(gp: GaussianPair, s) -> np.ndarray:
    """1 / (1 + s (lambda_i - 1)) per eigenvalue of A, batched over s."""
    lam = gp._eig[0]
    m = 1.0 + np.multiply.outer(np.asarray(s, dtype=np.float64), lam - 1.0)
    if np.any(np.abs(m) < 1e-14):
        raise ValueError("interpolation matrix (1-t)I + tA is singular")
    return 1.0 / m


def optimal_velocity(gp: GaussianPair, x, t: float) -> np.ndarray:
    """v(x, t) = (I + t(A - I))^{-1} ((A - I) x + b_nu - A b_mu), for unit horizon."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    q = gp._eig[1]
    inv = _interp_inverse_diag(gp, float(t))
    rhs = x @ (gp.A - np.eye(gp.dim)).T + (gp.b_nu - gp.A @ gp.b_mu)
    return ((rhs @ q) * inv) @ q.T


def _theta_profile(gp: GaussianPair, t, t_f: float = 1.0):
    lam, q = gp._eig
    s = np.asarray(t, dtype=np.float64) / t_f
    inv = _interp_inverse_diag(gp, s)  # (..., d)
    e = gp.A @ gp.b_mu - gp.b_nu
    w = q.T @ e
    dinv = -(lam - 1.0) * inv * inv
    qq = np.einsum("ik,jk->kij", q, q)  # rank-one projectors q_k q_k^T
    theta2 = np.tensordot(inv * (1.0 - lam), qq, axes=([-1], [0]))
    theta1 = (inv * w) @ q.T
    theta0 = 0.5 * s * np.sum(w * w * inv, axis=-1)
    d2 = np.tensordot(dinv * (1.0 - lam), qq, axes=([-1], [0]))
    d1 = (dinv * w) @ q.T
    d0 = 0.5 * np.sum(w * w * inv, axis=-1) + 0.5 * s * np.sum(w * w * dinv, axis=-1)
    # u_{t_f}(x, t) = u_1(x, t / t_f) / t_f solves the same HJ equation on [0, t_f]
    return (theta2 / t_f, theta1 / t_f, theta0 / t_f,
            d2 / t_f ** 2, d1 / t_f ** 2, d0 / t_f ** 2)


def optimal_theta(gp: GaussianPair, t: float, t_f: float = 1.0):
    """Coefficients (theta2, theta1, theta0) of the optimal quadratic potential at time t.

    The additive constant is fixed by theta0(0) = 0.
    """
    if not -1e-12 <= t <= t_f + 1e-12:
        raise ValueError(f"t must lie in [0, {t_f}]")
    th2, th1, th0, *_ = _theta_profile(gp, np.array([t]), t_f)
    return th2[0], th1[0], float(th0[0])


def optimal_potential(gp: GaussianPair, t_f: float = 1.0) -> QuadraticPotential:
    """The exact viscosity solution as a quadratic potential with closed-form time profile."""
    return QuadraticPotential(gp.dim, t_f, profile=lambda t: _theta_profile(gp, t, t_f))


def optimal_knot_potential(gp: GaussianPair, t_f: float = 1.0, n_knots: int = 17) -> QuadraticPotential:
    """Optimal coefficients sampled at knots; exact only at knot times."""
    knots = np.linspace(0.0, t_f, n_knots)
    th2, th1, th0, *_ = _theta_profile(gp, knots, t_f)
    return QuadraticPotential(gp.dim, t_f, knots=knots, theta2=th2, theta1=th1, theta0=th0)


def _haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_spd(d: int, rng: np.random.Generator, log_range: float = 2.0) -> np.ndarray:
    q = _haar_orthogonal(d, rng)
    lam = np.exp(rng.uniform(-log_range, log_range, size=d))
    s = (q * lam) @ q.T
    return 0.5 * (s + s.T)


def random_gaussian_pair(d: int, seed: int = 0) -> GaussianPair:
    """Centered pair with Haar eigenvectors and log-eigenvalues uniform on [-2, 2]."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    rng = np.random.default_rng(seed)
    s_mu = random_spd(d, rng)
    s_nu = random_spd(d, rng)
    return GaussianPair(np.zeros(d), s_mu, np.zeros(d), s_nu, seed=seed)


def uvp(predicted: Callable, gp: GaussianPair, n_samples: int = 100_000, seed: int = 0) -> float:
    """100 * E_mu |T_hat(x) - T*(x)|^2 / trace(Sigma_nu), by Monte Carlo over mu."""
    if n_samples < 1000:
        raise ValueError("UVP needs at least 1000 samples")
    x = gp.sample_mu(n_samples, np.random.default_rng(seed))
    err = np.asarray(predicted(x), dtype=np.float64) - optimal_map(gp, x)
    return float(100.0 * np.mean(np.sum(err * err, axis=1)) / np.trace(gp.sigma_nu))


# -- sidecar persistence ------------------------------------------------------

def save_pair_csv(gp: GaussianPair, path) -> None:
    rows = [
        ["d", gp.dim],
        ["seed", "" if gp.seed is None else gp.seed],
        ["b_mu", *map(repr, gp.b_mu.tolist())],
        ["sigma_mu", *map(repr, gp.sigma_mu.ravel().tolist())],
        ["b_nu", *map(repr, gp.b_nu.tolist())],
        ["sigma_nu", *map(repr, gp.sigma_nu.ravel().tolist())],
    ]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def load_pair_csv(path) -> GaussianPair:
    with open(Path(path), newline="") as fh:
        rows = {r[0]: r[1:] for r in csv.reader(fh) if r}
    try:
        d = int(rows["d"][0])
        seed = int(rows["seed"][0]) if rows["seed"] and rows["seed"][0] else None
        vec = {k: np.array([float(v) for v in rows[k]]) for k in ("b_mu", "sigma_mu", "b_nu", "sigma_nu")}
    except (KeyError, ValueError, IndexError) as exc:
        raise ValueError(f"malformed Gaussian pair file {path}: {exc}") from exc
    return GaussianPair(vec["b_mu"], vec["sigma_mu"].reshape(d, d), vec["b_nu"],
                        vec["sigma_nu"].reshape(d, d), seed=seed)
