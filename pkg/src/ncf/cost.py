"""Transport costs l(z) with their Legendre transforms h and gradients of h.

Formulas are written once on tape tensors; the numpy entry points wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_TINY = 1e-300


@dataclass(frozen=True)
class CostModel:
    """``kind`` is ``"quadratic"`` (l = |z|^2 / 2) or ``"pnorm"`` (l = |z|^p / p)."""

    kind: str = "quadratic"
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "pnorm"):
            raise ValueError(f"unknown cost kind '{self.kind}'")
        if self.kind == "pnorm" and not self.p > 1.0:
            raise ValueError(f"p-norm cost needs p > 1, got {self.p}")

    @property
    def name(self) -> str:
        return "quadratic" if self.kind == "quadratic" else f"pnorm:{self.p!r}"

    @property
    def conjugate_exponent(self) -> float:
        return self.p / (self.p - 1.0)

    # tensor forms, batched over the leading axis
    def ell_t(self, z):
        if self.kind == "quadratic":
            return 0.5 * (z * z).sum(axis=-1)
        return ad.power(ad.norm(z, axis=-1), self.p) * (1.0 / self.p)

    def h_t(self, q):
        if self.kind == "quadratic":
            return 0.5 * (q * q).sum(axis=-1)
        ps = self.conjugate_exponent
        return ad.power(ad.norm(q, axis=-1), ps) * (1.0 / ps)

    def grad_h_t(self, q):
        if self.kind == "quadratic":
            return q
        ps = self.conjugate_exponent
        r = ad.maximum(ad.norm(q, axis=-1, keepdims=True), _TINY)
        return ad.power(r, ps - 2.0) * q


def get_cost(name: str) -> CostModel:
    """Parse ``"quadratic"`` or ``"pnorm:<p>"``."""
    if name == "quadratic":
        return CostModel()
    if name.startswith("pnorm:"):
        return CostModel("pnorm", float(name.split(":", 1)[1]))
    raise ValueError(f"unknown cost '{name}'")


def _check(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if not np.isfinite(q).all():
        raise ValueError("argument must be finite")
    return q


def transport_cost(cost: CostModel, z) -> np.ndarray:
    return cost.ell_t(ad.Tensor(_check(z))).value


def hamiltonian(cost: CostModel, q) -> np.ndarray:
    return cost.h_t(ad.Tensor(_check(q))).value


def grad_hamiltonian(cost: CostModel, q) -> np.ndarray:
    q = _check(q)
    return cost.grad_h_t(ad.Tensor(q)).value.copy()
