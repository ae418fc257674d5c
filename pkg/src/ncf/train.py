"""Adam, the training loop, presets, and the plain-text checkpoint format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .autodiff import loss_param_grad
from .cost import CostModel, get_cost
from .losses import LossWeights, bounding_box, loss_terms, sample_collocation
from .model import MlpPotential, dense_widths, mlp_init
from .transport import SampleSet

MAGIC = "NCF/1"
LOSS_COLUMNS = ("loss_total", "loss_hj_f", "loss_hj_b", "loss_mmd_f", "loss_mmd_b")
_TERM_KEYS = ("total", "hj_f", "hj_b", "mmd_f", "mmd_b")
DIVERGENCE_LIMIT = 1e6


class NonFiniteGradientError(FloatingPointError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_colloc: int = 1000
    n_mmd: int = 750
    weights: LossWeights = field(default_factory=LossWeights)
    t_f: float = 1.0
    seed: int = 0
    margin: float = 0.05
    class_conditional: bool = False
    eval_every: int = 0
    cost: str = "quadratic"
    literal_backward: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.n_colloc < 1 or self.n_mmd < 1:
            raise ValueError("collocation and MMD batch sizes must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not self.t_f > 0:
            raise ValueError("t_f must be positive")
        if self.eval_every < 0 or self.margin < 0:
            raise ValueError("eval_every and margin must be nonnegative")
        get_cost(self.cost)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weights"] = asdict(self.weights)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


# -- Adam ------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)``.

    A non-finite gradient rejects the step and leaves the inputs untouched.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NonFiniteGradientError(f"non-finite gradient at parameter index {int(bad[0])}; step rejected")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, step)


# -- batching ----------------------------------------------------------------------

class EpochSampler:
    """Draws batches without replacement, reshuffling when the pool runs out."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def draw(self, k: int) -> np.ndarray:
        if k >= self.n:
            return self.rng.permutation(self.n)
        if self.pos + k > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos:self.pos + k]
        self.pos += k
        return idx


@dataclass
class History:
    rows: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=np.float64).reshape(-1, len(LOSS_COLUMNS))

    def final(self) -> dict:
        if not self.rows:
            return {}
        return dict(zip(LOSS_COLUMNS, self.rows[-1]))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch," + ",".join(LOSS_COLUMNS) + "\n")
            for i, row in enumerate(self.rows):
                fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def fit(src: SampleSet, tgt: SampleSet, cfg: TrainConfig, model, callback=None):
    """Train ``model`` in place on normalized source/target sets; returns ``(model, history)``.

    ``callback(epoch, model)`` runs every ``cfg.eval_every`` epochs and its
    return value is stored in ``history.evals``.
    """
    cost = get_cost(cfg.cost)
    if src.dim != model.dim or tgt.dim != model.dim:
        raise ValueError(f"model is {model.dim}-dimensional but data are {src.dim}/{tgt.dim}")
    rng = np.random.default_rng(cfg.seed)
    lo, hi = bounding_box(src.points, tgt.points, margin=cfg.margin)
    src_draw, tgt_draw = EpochSampler(len(src), rng), EpochSampler(len(tgt), rng)
    state = AdamState.zeros(model.n_params)
    params = model.flat_params()
    history = History()
    for epoch in range(cfg.epochs):
        colloc = sample_collocation(lo, hi, cfg.n_colloc, cfg.t_f, rng)
        sb = src.subset(src_draw.draw(cfg.n_mmd))
        tb = tgt.subset(tgt_draw.draw(cfg.n_mmd))
        if cfg.class_conditional:
            sb = replace(sb, n_classes=src.n_classes)
            tb = replace(tb, n_classes=tgt.n_classes)
        terms = {}

        def build(pot):
            terms.update(loss_terms(pot, cost, colloc, sb, tb, cfg.weights,
                                    cfg.class_conditional, cfg.t_f, cfg.literal_backward))
            return terms["total"]

        try:
            total, grad = loss_param_grad(model, build)
        except FloatingPointError as exc:
            raise DivergenceError(epoch, float("nan")) from exc
        if not np.isfinite(total) or total > DIVERGENCE_LIMIT:
            raise DivergenceError(epoch, total)
        history.rows.append([float(terms[k].value) for k in _TERM_KEYS])
        params, state = adam_step(params, grad, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        model.set_flat_params(params)
        if callback is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            history.evals.append((epoch + 1, callback(epoch + 1, model)))
    return model, history


# -- presets ---------------------------------------------------------------------------

def preset(name: str, dim: int = 2, **overrides):
    """``(TrainConfig, model)`` for a named preset; keyword overrides go to the config.

    ``2d``: five hidden softplus layers of width 64 (beta 100), lr 1e-3,
    1000 collocation points, 750 MMD samples.
    ``gaussian``: dense widths [max(2d,64), max(2d,64), max(d,32)], every
    layer after the first also fed the input augmented with all products
    x_i x_j, softplus beta 5, zero-initialized output layer, lr 3e-4,
    HJ weight 10 against MMD weight 1, 2000 epochs, 1000 collocation
    points, 2000 MMD samples. Expects data scaled into [-1, 1]^d (``cube``
    normalization).
    """
    seed = int(overrides.get("seed", 0))
    if name == "2d":
        base = dict(epochs=2000, lr=1e-3, n_colloc=1000, n_mmd=750)
        dims = [dim + 1] + [64] * 5 + [1]
        model = mlp_init(dims, "softplus", seed, beta=100.0)
    elif name == "gaussian":
        base = dict(epochs=2000, lr=3e-4, n_colloc=1000, n_mmd=2000, weights=LossWeights(10.0, 10.0, 1.0, 1.0))
        dims = [dim + 1] + dense_widths(dim) + [1]
        model = mlp_init(dims, "softplus", seed, beta=5.0, quadratic="products", dense_skip=True,
                         zero_last=True)
    else:
        raise ValueError(f"unknown preset '{name}'; expected '2d' or 'gaussian'")
    base.update(overrides)
    return TrainConfig(**base), model


# -- checkpoints --------------------------------------------------------------------

def _parse_descriptor(desc: str) -> dict:
    kind, *items = desc.split()
    if kind != "mlp":
        raise ValueError(f"unsupported architecture '{kind}'")
    kv = dict(item.split("=", 1) for item in items)
    return dict(dims=[int(v) for v in kv["dims"].split(",")], activation=kv["act"],
                beta=float(kv["beta"]), residual_scale=float(kv["kappa"]),
                quadratic=kv["quad"], dense_skip=bool(int(kv.get("dense", "0"))))


@dataclass
class Checkpoint:
    model: MlpPotential
    src_shift: np.ndarray
    src_scale: np.ndarray
    tgt_shift: np.ndarray
    tgt_scale: np.ndarray
    config: TrainConfig
    final_losses: dict = field(default_factory=dict)

    @property
    def cost(self) -> CostModel:
        return get_cost(self.config.cost)

    def frames(self) -> tuple[SampleSet, SampleSet]:
        """Empty-point templates carrying the source and target normalizations."""
        d = self.model.dim
        return (SampleSet(np.zeros((1, d)), shift=self.src_shift, scale=self.src_scale),
                SampleSet(np.zeros((1, d)), shift=self.tgt_shift, scale=self.tgt_scale))


def _vec(v) -> str:
    return ",".join(repr(float(x)) for x in np.ravel(v))


def save_checkpoint(path, model: MlpPotential, src: SampleSet, tgt: SampleSet, cfg: TrainConfig,
                    final_losses: dict | None = None) -> None:
    lines = [MAGIC, model.descriptor()]
    lines += ["%.17g" % v for v in model.flat_params()]
    lines.append("src_shift=" + _vec(src.shift))
    lines.append("src_scale=" + _vec(src.scale))
    lines.append("tgt_shift=" + _vec(tgt.shift))
    lines.append("tgt_scale=" + _vec(tgt.scale))
    lines.append("config=" + json.dumps(cfg.to_dict(), sort_keys=True))
    lines.append("final=" + json.dumps({k: float(v) for k, v in (final_losses or {}).items()}, sort_keys=True))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}: not an {MAGIC} checkpoint")
    if len(lines) < 2:
        raise ValueError(f"{path}: missing architecture line")
    model = MlpPotential(**_parse_descriptor(lines[1]))
    n = model.n_params
    values = lines[2:2 + n]
    if len(values) != n or any("=" in v for v in values):
        raise ValueError(f"{path}: expected {n} parameter lines")
    model.set_flat_params(np.array([float(v) for v in values]))
    trailer = dict(line.split("=", 1) for line in lines[2 + n:] if line)
    vec = lambda key: np.array([float(x) for x in trailer[key].split(",")])  # noqa: E731
    try:
        return Checkpoint(model, vec("src_shift"), vec("src_scale"), vec("tgt_shift"), vec("tgt_scale"),
                          TrainConfig.from_dict(json.loads(trailer["config"])),
                          json.loads(trailer.get("final", "{}")))
    except KeyError as exc:
        raise ValueError(f"{path}: missing trailer key {exc}") from None
