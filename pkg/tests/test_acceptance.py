"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that pytest prints in its terminal
summary. The training criteria run the real command-line pipeline and take
several minutes each on one core.
"""

import math
import time

import numpy as np
import pytest

from ncf.autodiff import eval_with_input_grad, loss_param_grad
from ncf.cli import run
from ncf.cost import CostModel
from ncf.data import fit_normalization, normalize, save_ppm, synthetic_image
from ncf.evaluate import monotone_1d_oracle, read_metrics_csv
from ncf.gaussian import (monge_matrix, optimal_potential, random_gaussian_pair, random_spd, spd_sqrt)
from ncf.losses import (CollocationBatch, LossWeights, hj_residuals_backward, hj_residuals_forward,
                        loss_terms, mmd_sq, total_loss)
from ncf.model import mlp_init
from ncf.train import fit, preset
from ncf.transport import SampleSet, forward_map

COST = CostModel()
GAUSSIAN_RUNS = [(2, 0), (2, 1), (2, 2), (4, 0), (4, 1), (4, 2)]
UVP_BOUND = {2: 2.0, 4: 3.0}
WALL_LIMIT = {"gaussian": 15 * 60, "oracle_1d": 5 * 60, "color": 10 * 60}


def metrics(path):
    return {(m, d): v for m, d, v in read_metrics_csv(path)}


# -- 1. gradient correctness ------------------------------------------------------

def _random_mlp(rng):
    d = int(rng.choice([1, 2, 4]))
    widths = [int(w) for w in rng.integers(2, 17, size=rng.integers(1, 3))]
    model = mlp_init([d + 1] + widths + [1], str(rng.choice(["softplus", "tanh"])), int(rng.integers(1 << 30)),
                     beta=float(rng.uniform(1.0, 8.0)), quadratic=str(rng.choice(["none", "norm", "products"])),
                     dense_skip=bool(rng.integers(2)))
    return d, model


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_criterion_1_gradient_correctness(record):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_param = worst_space = 0.0
    for _ in range(50):
        d, m = _random_mlp(rng)
        xs, ys = rng.standard_normal((8, d)), rng.standard_normal((8, d)) + 0.5
        batch = CollocationBatch(rng.uniform(-1, 1, (8, d)), rng.uniform(0, 1, 8))
        w = LossWeights(*rng.uniform(0.2, 2.0, 4))
        _, grad = loss_param_grad(m, lambda p: loss_terms(p, COST, batch, xs, ys, w)["total"])
        theta = m.flat_params()
        fd = np.empty_like(theta)
        h = 1e-6
        for i in range(theta.size):
            up, dn = theta.copy(), theta.copy()
            up[i] += h
            dn[i] -= h
            m.set_flat_params(up)
            f_up = total_loss(m, COST, batch, xs, ys, w)
            m.set_flat_params(dn)
            fd[i] = (f_up - total_loss(m, COST, batch, xs, ys, w)) / (2 * h)
        m.set_flat_params(theta)
        worst_param = max(worst_param, _rel(grad, fd))

        pts = np.concatenate([batch.x, batch.t[:, None]], axis=1)
        dual = eval_with_input_grad(m, pts)
        fd_x = np.empty_like(pts)
        for k in range(d + 1):
            up, dn = pts.copy(), pts.copy()
            up[:, k] += 1e-5
            dn[:, k] -= 1e-5
            fd_x[:, k] = (m(up[:, :-1], up[:, -1]) - m(dn[:, :-1], dn[:, -1])) / 2e-5
        worst_space = max(worst_space, _rel(dual.input_tangents, fd_x))
    elapsed = time.perf_counter() - start
    ok = worst_param < 1e-4 and worst_space < 1e-6 and elapsed < 60
    record(1, ok, f"max rel err params={worst_param:.2e} (<1e-4), spatial={worst_space:.2e} (<1e-6), "
                  f"{elapsed:.1f}s (<60s)")
    assert ok


# -- 2. implicit-formula oracle -------------------------------------------------------

def test_criterion_2_implicit_formula_oracle(record):
    start = time.perf_counter()
    worst = 0.0
    for i in range(20):
        d = (1, 2, 4, 8)[i % 4]
        gp = random_gaussian_pair(d, seed=100 + i)
        q = optimal_potential(gp)
        rng = np.random.default_rng(i)
        batch = CollocationBatch(rng.uniform(-2, 2, (1000, d)), rng.uniform(0, 1, 1000))
        worst = max(worst, np.abs(hj_residuals_forward(q, COST, batch)).max(),
                    np.abs(hj_residuals_backward(q, COST, batch)).max())
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 60
    record(2, ok, f"max |HJ residual| over 20 pairs = {worst:.2e} (<1e-8), {elapsed:.1f}s")
    assert ok


# -- 3, 5, 10. Gaussian runs through the CLI ------------------------------------------------

@pytest.fixture(scope="session")
def gaussian_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("gaussian")
    out = {}
    for d, seed in GAUSSIAN_RUNS:
        run_dir = root / f"d{d}_s{seed}"
        start = time.perf_counter()
        code = run(["train-gaussian", "--dim", str(d), "--seed", str(seed), "--out", str(run_dir)])
        out[(d, seed)] = dict(dir=run_dir, code=code, seconds=time.perf_counter() - start)
    return out


def test_criterion_3_gaussian_uvp(gaussian_runs, record):
    lines, ok = [], True
    for (d, seed), info in sorted(gaussian_runs.items()):
        if info["code"] != 0:
            ok = False
            lines.append(f"d={d} seed={seed}: exit {info['code']}")
            continue
        value = metrics(info["dir"] / "metrics.csv")[("uvp", "forward")]
        good = value < UVP_BOUND[d] and info["seconds"] <= WALL_LIMIT["gaussian"]
        ok &= good
        lines.append(f"d={d} s={seed} uvp={value:.3f} ({info['seconds']:.0f}s)")
    record(3, ok, "; ".join(lines) + "  [bounds 2.0 / 3.0, <=900s each]")
    assert ok


def test_criterion_5_round_trip(gaussian_runs, record, capsys):
    info = gaussian_runs[(2, 0)]
    assert info["code"] == 0
    code = run(["eval-roundtrip", "--ckpt", str(info["dir"] / "model.ncf")])
    printed = capsys.readouterr().out
    value = float(printed.split("round_trip=")[1].split()[0])
    ok = code == 0 and value < 0.05
    record(5, ok, f"round_trip_error on the d=2 seed-0 model = {value:.4f} (<0.05)")
    assert ok


def test_criterion_10_determinism(gaussian_runs, tmp_path, record):
    first = gaussian_runs[(2, 0)]["dir"]
    again = tmp_path / "repeat"
    assert run(["train-gaussian", "--dim", "2", "--seed", "0", "--out", str(again)]) == 0
    same = {name: (first / name).read_bytes() == (again / name).read_bytes()
            for name in ("model.ncf", "metrics.csv", "loss.csv")}
    ok = all(same.values())
    record(10, ok, "bitwise identical: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok


# -- 4. 1-D monotone oracle --------------------------------------------------------------

def test_criterion_4_one_dimensional_oracle(record):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    mu = rng.normal(0.0, 1.0, (100_000, 1))
    nu = rng.normal(3.0, 2.0, (100_000, 1))
    stats = fit_normalization(mu, nu, mode="cube")
    src, tgt = normalize(SampleSet(mu), stats=stats), normalize(SampleSet(nu), stats=stats)
    cfg, model = preset("gaussian", 1, seed=0, epochs=1000)
    fit(src, tgt, cfg, model)
    shift, scale = stats

    def transport(x):
        return forward_map(model, COST, (x - shift) / scale, cfg.t_f) * scale + shift

    rms = monotone_1d_oracle(mu, nu, transport)
    elapsed = time.perf_counter() - start
    ok = rms < 0.05 and elapsed <= WALL_LIMIT["oracle_1d"]
    record(4, ok, f"RMS vs monotone rearrangement = {rms:.4f} target sigmas (<0.05), "
                  f"{cfg.epochs} epochs, {elapsed:.0f}s (<=300s)")
    assert ok


# -- 6. MMD properties ----------------------------------------------------------------------

def _mmd_double_loop(x, y):
    def mean_dist(a, b):
        return sum(math.dist(p, q) for p in a for q in b) / (len(a) * len(b))

    return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


def test_criterion_6_mmd_properties(record):
    rng = np.random.default_rng(6)
    worst = dict(neg=0.0, self=0.0, sym=0.0, homog=0.0, oracle=0.0)
    for _ in range(200):
        d, n, m = rng.integers(1, 9), rng.integers(1, 65), rng.integers(1, 65)
        x = rng.standard_normal((n, d)) * rng.uniform(0.1, 3)
        y = rng.standard_normal((m, d)) + rng.uniform(-1, 1, d)
        c = rng.uniform(0.1, 5.0)
        v = mmd_sq(x, y)
        worst["neg"] = max(worst["neg"], -v)
        worst["self"] = max(worst["self"], abs(mmd_sq(x, x)))
        worst["sym"] = max(worst["sym"], abs(v - mmd_sq(y, x)))
        worst["homog"] = max(worst["homog"], abs(mmd_sq(c * x, c * y) - c * v))
        worst["oracle"] = max(worst["oracle"], abs(v - _mmd_double_loop(x.tolist(), y.tolist())))
    ok = (worst["neg"] <= 1e-12 and worst["self"] == 0.0 and worst["sym"] <= 1e-12
          and worst["homog"] <= 1e-10 and worst["oracle"] <= 1e-12)
    record(6, ok, "worst: " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


# -- 7. linear algebra -------------------------------------------------------------------------

def test_criterion_7_linear_algebra(record):
    rng = np.random.default_rng(77)
    dims = [64] + [int(v) for v in rng.integers(1, 65, size=49)]
    worst_sqrt = worst_push = 0.0
    for d in dims:
        s_mu, s_nu = random_spd(d, rng), random_spd(d, rng)
        r = spd_sqrt(s_mu)
        worst_sqrt = max(worst_sqrt, np.linalg.norm(r @ r - s_mu))
        a = monge_matrix(s_mu, s_nu)
        worst_push = max(worst_push, np.abs(a @ s_mu @ a - s_nu).max())
    ok = worst_sqrt < 1e-10 and worst_push < 1e-8
    record(7, ok, f"50 pairs up to d=64: sqrt Frobenius err {worst_sqrt:.1e} (<1e-10), "
                  f"|A S_mu A - S_nu| {worst_push:.1e} (<1e-8)")
    assert ok


# -- 8. color transfer ---------------------------------------------------------------------------

WARM = [(0.95, 0.55, 0.15), (0.85, 0.25, 0.20), (0.98, 0.85, 0.35), (0.55, 0.20, 0.10)]
COOL = [(0.10, 0.35, 0.75), (0.20, 0.70, 0.65), (0.05, 0.15, 0.35), (0.55, 0.75, 0.95)]


def test_criterion_8_color_transfer(tmp_path, record):
    save_ppm(synthetic_image(WARM, seed=1), tmp_path / "warm.ppm")
    save_ppm(synthetic_image(COOL, seed=2), tmp_path / "cool.ppm")
    start = time.perf_counter()
    code = run(["color-transfer", "--source", str(tmp_path / "warm.ppm"), "--target", str(tmp_path / "cool.ppm"),
                "--out", str(tmp_path / "run")])
    elapsed = time.perf_counter() - start
    assert code == 0
    m = metrics(tmp_path / "run" / "metrics.csv")
    base_emd, base_hi = m[("emd", "baseline")], m[("hi", "baseline")]
    checks = []
    for direction in ("forward", "backward"):
        checks.append(m[("emd", direction)] < 0.5 * base_emd and m[("hi", direction)] > base_hi)
    ok = all(checks) and elapsed <= WALL_LIMIT["color"]
    record(8, ok, f"EMD fwd={m[('emd', 'forward')]:.4f} bwd={m[('emd', 'backward')]:.4f} "
                  f"(< 0.5 x {base_emd:.4f}); HI fwd={m[('hi', 'forward')]:.3f} bwd={m[('hi', 'backward')]:.3f} "
                  f"(> {base_hi:.3f}); {elapsed:.0f}s (<=600s)")
    assert ok


# -- 9. class-conditional 2-D ------------------------------------------------------------------

def test_criterion_9_class_conditional(tmp_path, record):
    out = tmp_path / "cls"
    assert run(["train-class", "--out", str(out)]) == 0
    m = metrics(out / "metrics.csv")
    ratios = [m[(f"mmd_sq_class{c}", "forward")] / m[(f"mmd_sq_class{c}", "init")] for c in (0, 1)]
    table = np.loadtxt(out / "centroids.csv", delimiter=",", skiprows=1, ndmin=2)
    moved, target = table[:, 1:3], table[:, 3:5]
    dists = np.linalg.norm(moved[:, None, :] - target[None, :, :], axis=2)
    nearest_ok = bool(np.all(np.argmin(dists, axis=1) == np.arange(len(moved))))
    ok = all(r < 0.1 for r in ratios) and nearest_ok
    record(9, ok, "per-class mmd after/init = " + ", ".join(f"{r:.4f}" for r in ratios)
                  + f" (<0.1); centroids matched to own class: {nearest_ok}")
    assert ok
