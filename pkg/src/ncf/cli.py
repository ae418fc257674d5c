"""Command-line entry point: ``python -m ncf <subcommand> ...``.

Every training command writes into ``--out``: ``model.ncf`` (checkpoint),
``loss.csv``, ``metrics.csv``, ``manifest.json`` and, with ``--svg``, a plot.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cost import get_cost
from .data import PRESETS, KINDS_2D, fit_normalization, load_ppm, normalize, sample_2d, save_ppm
from .evaluate import (ChannelHistogram, emd_1d, hist_intersection, round_trip_error, transport_svg,
                       write_metrics_csv)
from .gaussian import load_pair_csv, random_gaussian_pair, save_pair_csv, uvp
from .losses import LossWeights, mmd_sq, mmd_sq_classwise
from .train import DivergenceError, History, fit, load_checkpoint, preset, save_checkpoint
from .transport import SampleSet, backward_map, forward_map, pushforward, read_points_csv, write_points_csv

PAIR_FILE = "pair.csv"
N_EVAL = 2000
# pixel clouds are small and 3-D; the gaussian preset converges on them well before its default
COLOR_EPOCHS = 800


class CliError(Exception):
    """Reported on stderr with exit code 1."""


def derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


# -- argument parsing ---------------------------------------------------------------

def _lambda(text: str) -> float:
    value = math.inf if text in ("inf", "infinity") else float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"lambda must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_train_flags(p: argparse.ArgumentParser, default_preset: str) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=("2d", "gaussian"), default=default_preset)
    p.add_argument("--epochs", type=int, help="training epochs (preset default if omitted)")
    p.add_argument("--lr", type=float)
    p.add_argument("--n-colloc", type=_positive_int)
    p.add_argument("--n-mmd", type=_positive_int)
    p.add_argument("--lambda", dest="lam", type=_lambda, help="MMD weight (both directions)")
    p.add_argument("--hj-weight", type=float, help="implicit HJ weight (both directions)")
    p.add_argument("--t-f", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--cost", default=None, help="quadratic or pnorm:<p>")
    p.add_argument("--literal-backward", action="store_true",
                   help="use elapsed time as the backward residual horizon")
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--svg", action="store_true", help="also write a transport plot")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncf", description="Bidirectional neural transport via Hamilton-Jacobi potentials.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    kinds = sorted(set(KINDS_2D[:-1]) | set(PRESETS))

    p = sub.add_parser("train-2d", help="train on a pair of 2-D toy distributions")
    p.add_argument("--source", choices=kinds, default="swiss_roll")
    p.add_argument("--target", choices=kinds, default="double_moons")
    p.add_argument("--n-samples", type=_positive_int, default=50_000)
    _add_train_flags(p, "2d")

    p = sub.add_parser("train-gaussian", help="train on a random Gaussian pair with a known optimal map")
    p.add_argument("--dim", type=_positive_int, default=2)
    p.add_argument("--n-samples", type=_positive_int, default=100_000)
    _add_train_flags(p, "gaussian")

    p = sub.add_parser("train-class", help="class-conditional 2-D transport")
    p.add_argument("--source", choices=sorted(PRESETS), default="vertical_gaussians")
    p.add_argument("--target", choices=sorted(PRESETS), default="horizontal_gaussians")
    p.add_argument("--n-samples", type=_positive_int, default=50_000)
    _add_train_flags(p, "2d")

    p = sub.add_parser("color-transfer", help="transport the RGB pixel clouds of two PPM images")
    p.add_argument("--source", required=True, help="P6 PPM file")
    p.add_argument("--target", required=True, help="P6 PPM file")
    _add_train_flags(p, "gaussian")

    p = sub.add_parser("eval-uvp", help="UVP of a Gaussian-pair checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pair", help="Gaussian pair CSV (default: pair.csv beside the checkpoint)")
    p.add_argument("--n-samples", type=_positive_int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for metrics.csv (default: the checkpoint's)")

    p = sub.add_parser("eval-roundtrip", help="backward(forward(x)) deviation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--points", help="CSV point cloud in raw source coordinates")
    p.add_argument("--pair", help="Gaussian pair CSV to sample from when --points is absent")
    p.add_argument("--n-samples", type=_positive_int, default=N_EVAL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("export-points", help="push a CSV point cloud through a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--direction", choices=("forward", "backward"), default="forward")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("ablate-lambda", help="sweep the HJ/MMD balance on a 2-D pair")
    p.add_argument("--source", choices=kinds, default="checkerboard")
    p.add_argument("--target", choices=kinds, default="eight_gaussians")
    p.add_argument("--lambdas", default="0.1,1,10,inf",
                   help="comma-separated values; the HJ weight is 1/lambda (inf drops the HJ loss)")
    p.add_argument("--n-samples", type=_positive_int, default=50_000)
    _add_train_flags(p, "2d")
    return parser


# -- helpers ---------------------------------------------------------------------------

def _resolve(args, dim: int, **extra):
    """Preset config and model with command-line overrides applied."""
    over = dict(seed=args.seed, eval_every=args.eval_every, literal_backward=args.literal_backward, **extra)
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("n_colloc", "n_colloc"), ("n_mmd", "n_mmd"),
                      ("t_f", "t_f"), ("margin", "margin"), ("cost", "cost")):
        value = getattr(args, flag)
        if value is not None:
            over[key] = value
    if (args.lam is not None or args.hj_weight is not None) and "weights" not in extra:
        # an omitted flag keeps the preset's value
        base = preset(args.preset, dim)[0].weights
        hj = base.hj_forward if args.hj_weight is None else args.hj_weight
        lam = base.mmd_forward if args.lam is None else args.lam
        if math.isinf(lam):
            raise CliError("--lambda inf is only meaningful in ablate-lambda")
        over["weights"] = LossWeights(hj, hj, lam, lam)
    return preset(args.preset, dim, **over)


def _write_manifest(out: Path, command: str, argv, cfg=None, extra=None) -> None:
    manifest = {"command": command, "argv": list(argv), "version": __version__}
    if cfg is not None:
        manifest["config"] = cfg.to_dict()
        manifest["seed"] = cfg.seed
    manifest.update(extra or {})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _train(out: Path, src: SampleSet, tgt: SampleSet, cfg, model) -> History:
    model, history = fit(src, tgt, cfg, model)
    save_checkpoint(out / "model.ncf", model, src, tgt, cfg, history.final())
    history.write_csv(out / "loss.csv")
    return history


def _pooled(src_points, tgt_points, mode, src_labels=None, tgt_labels=None, n_classes=None):
    stats = fit_normalization(src_points, tgt_points, mode=mode)
    src = normalize(SampleSet(src_points, src_labels, n_classes=n_classes), stats=stats)
    tgt = normalize(SampleSet(tgt_points, tgt_labels, n_classes=n_classes), stats=stats)
    return src, tgt


def _map_metrics(model, cost, src: SampleSet, tgt: SampleSet, t_f: float, rng) -> list:
    """Held-out style MMD and round-trip metrics in the training frame."""
    xs = src.points[rng.permutation(len(src))[:N_EVAL]]
    ys = tgt.points[rng.permutation(len(tgt))[:N_EVAL]]
    return [
        ("mmd_sq", "forward", mmd_sq(forward_map(model, cost, xs, t_f), ys)),
        ("mmd_sq", "backward", mmd_sq(xs, backward_map(model, cost, ys, t_f))),
        ("round_trip", "forward", round_trip_error(model, cost, xs, t_f)),
    ]


def _maybe_svg(args, out: Path, model, cost, src: SampleSet, tgt: SampleSet, t_f: float) -> None:
    if args.svg and src.dim == 2:
        xs = src.points[:400]
        transport_svg(out / "transport.svg", src.to_raw(xs), src.to_raw(forward_map(model, cost, xs, t_f)),
                      tgt.to_raw(tgt.points[:400]))


# -- commands -----------------------------------------------------------------------

def cmd_train_2d(args, argv, class_conditional: bool = False) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    a = sample_2d(args.source, args.n_samples, derive_seed(args.seed, 1))
    b = sample_2d(args.target, args.n_samples, derive_seed(args.seed, 2))
    if class_conditional and (a.labels is None or b.labels is None):
        raise CliError("class-conditional training needs labeled distributions")
    k = max(a.n_classes or 0, b.n_classes or 0) or None
    src, tgt = _pooled(a.points, b.points, "cube", a.labels, b.labels, k)
    cfg, model = _resolve(args, 2, class_conditional=class_conditional)
    cost = get_cost(cfg.cost)
    init_rows = _class_rows(model, cost, src, tgt, cfg.t_f, k, "init") if class_conditional else []
    history = _train(out, src, tgt, cfg, model)
    rows = _map_metrics(model, cost, src, tgt, cfg.t_f, np.random.default_rng(derive_seed(args.seed, 3)))
    if class_conditional:
        rows += _class_rows(model, cost, src, tgt, cfg.t_f, k, "forward") + init_rows
        _write_centroids(out / "centroids.csv", model, cost, src, tgt, cfg.t_f, k)
    write_metrics_csv(out / "metrics.csv", rows)
    _maybe_svg(args, out, model, cost, src, tgt, cfg.t_f)
    _write_manifest(out, args.command, argv, cfg,
                    {"source": args.source, "target": args.target, "n_samples": args.n_samples,
                     "final_losses": history.final()})
    return 0


def _thin(s: SampleSet) -> SampleSet:
    return s.subset(np.arange(min(len(s), N_EVAL)))


def _write_centroids(path, model, cost, src: SampleSet, tgt: SampleSet, t_f: float, k: int) -> None:
    """Per-class centroids of the transported source and of the target, in raw coordinates."""
    moved = src.to_raw(forward_map(model, cost, src.points, t_f))
    raw_tgt = tgt.to_raw(tgt.points)
    with open(path, "w") as fh:
        fh.write("class,moved_x,moved_y,target_x,target_y\n")
        for c in range(k):
            mc, tc = moved[src.labels == c].mean(axis=0), raw_tgt[tgt.labels == c].mean(axis=0)
            fh.write(f"{c}," + ",".join(repr(float(v)) for v in (*mc, *tc)) + "\n")


def _class_rows(model, cost, src: SampleSet, tgt: SampleSet, t_f: float, k: int, direction: str) -> list:
    """Class-wise and per-class mmd_sq of forward-transported source vs target."""
    moved = src.with_points(forward_map(model, cost, src.points, t_f))
    rows = [("mmd_sq_classwise", direction, mmd_sq_classwise(_thin(moved), _thin(tgt), k))]
    for c in range(k):
        xs = moved.points[moved.labels == c][:N_EVAL]
        ys = tgt.points[tgt.labels == c][:N_EVAL]
        rows.append((f"mmd_sq_class{c}", direction, mmd_sq(xs, ys)))
    return rows


def cmd_train_gaussian(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gp = random_gaussian_pair(args.dim, args.seed)
    save_pair_csv(gp, out / PAIR_FILE)
    rng = np.random.default_rng(derive_seed(args.seed, 1))
    src, tgt = _pooled(gp.sample_mu(args.n_samples, rng), gp.sample_nu(args.n_samples, rng), "cube")
    cfg, model = _resolve(args, args.dim)
    history = _train(out, src, tgt, cfg, model)
    cost = get_cost(cfg.cost)
    value = _uvp(model, cost, src, gp, cfg.t_f, 100_000, derive_seed(args.seed, 2))
    rows = [("uvp", "forward", value)]
    rows += _map_metrics(model, cost, src, tgt, cfg.t_f, np.random.default_rng(derive_seed(args.seed, 3)))
    write_metrics_csv(out / "metrics.csv", rows)
    _maybe_svg(args, out, model, cost, src, tgt, cfg.t_f)
    _write_manifest(out, args.command, argv, cfg,
                    {"dim": args.dim, "n_samples": args.n_samples, "final_losses": history.final()})
    print(f"uvp={value!r}")
    return 0


def _uvp(model, cost, frame: SampleSet, gp, t_f: float, n: int, seed: int) -> float:
    def mapped(x):
        z = (x - frame.shift) / frame.scale
        return forward_map(model, cost, z, t_f) * frame.scale + frame.shift

    return uvp(mapped, gp, n, seed)


def cmd_color_transfer(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        a, b = load_ppm(args.source), load_ppm(args.target)
    except OSError as exc:
        raise CliError(f"cannot read image: {exc}") from exc
    src, tgt = _pooled(a.pixels, b.pixels, "cube")
    cfg, model = _resolve(args, 3, **({} if args.epochs is not None else {"epochs": COLOR_EPOCHS}))
    history = _train(out, src, tgt, cfg, model)
    cost = get_cost(cfg.cost)
    fwd = pushforward(SampleSet(a.pixels, shift=src.shift, scale=src.scale), model, cost, "forward", cfg.t_f)
    bwd = pushforward(SampleSet(b.pixels, shift=tgt.shift, scale=tgt.scale), model, cost, "backward", cfg.t_f)
    fwd_img, bwd_img = a.with_pixels(fwd.points), b.with_pixels(bwd.points)
    save_ppm(fwd_img, out / "forward.ppm")
    save_ppm(bwd_img, out / "backward.ppm")
    rows = color_metrics(a.pixels, b.pixels, fwd_img.pixels, bwd_img.pixels)
    write_metrics_csv(out / "metrics.csv", rows)
    _write_manifest(out, args.command, argv, cfg,
                    {"source": str(args.source), "target": str(args.target), "final_losses": history.final()})
    return 0


def color_metrics(src_px, tgt_px, fwd_px, bwd_px) -> list:
    """EMD and HI of both transported images against their targets, plus the untouched baselines."""
    hs, ht = ChannelHistogram.from_pixels(src_px), ChannelHistogram.from_pixels(tgt_px)
    hf, hb = ChannelHistogram.from_pixels(fwd_px), ChannelHistogram.from_pixels(bwd_px)
    return [
        ("emd", "forward", emd_1d(hf, ht)),
        ("hi", "forward", hist_intersection(hf, ht)),
        ("emd", "backward", emd_1d(hb, hs)),
        ("hi", "backward", hist_intersection(hb, hs)),
        ("emd", "baseline", emd_1d(hs, ht)),
        ("hi", "baseline", hist_intersection(hs, ht)),
    ]


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}") from exc


def _pair_path(args) -> Path:
    return Path(args.pair) if args.pair else Path(args.ckpt).parent / PAIR_FILE


def cmd_eval_uvp(args, argv) -> int:
    ck = _load_ckpt(args.ckpt)
    try:
        gp = load_pair_csv(_pair_path(args))
    except OSError as exc:
        raise CliError(f"cannot read Gaussian pair: {exc}") from exc
    src_frame, _ = ck.frames()
    value = _uvp(ck.model, ck.cost, src_frame, gp, ck.config.t_f, args.n_samples, args.seed)
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", [("uvp", "forward", value)])
    print(f"uvp={value!r}")
    return 0


def cmd_eval_roundtrip(args, argv) -> int:
    ck = _load_ckpt(args.ckpt)
    src_frame, _ = ck.frames()
    if args.points:
        raw = read_points_csv(args.points).points
    else:
        try:
            gp = load_pair_csv(_pair_path(args))
        except OSError as exc:
            raise CliError(f"need --points or a Gaussian pair file: {exc}") from exc
        raw = gp.sample_mu(args.n_samples, np.random.default_rng(args.seed))
    z = (raw - src_frame.shift) / src_frame.scale
    value = round_trip_error(ck.model, ck.cost, z, ck.config.t_f)
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics_roundtrip.csv", [("round_trip", "forward", value)])
    print(f"round_trip={value!r}")
    return 0


def cmd_export_points(args, argv) -> int:
    ck = _load_ckpt(args.ckpt)
    pts = read_points_csv(args.points)
    src_frame, tgt_frame = ck.frames()
    frame = src_frame if args.direction == "forward" else tgt_frame
    framed = SampleSet(pts.points, pts.labels, frame.shift, frame.scale, pts.n_classes)
    moved = pushforward(framed, ck.model, ck.cost, args.direction, ck.config.t_f)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_points_csv(out, SampleSet(moved.points, moved.labels))
    return 0


def cmd_ablate_lambda(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        lambdas = [_lambda(v.strip()) for v in args.lambdas.split(",") if v.strip()]
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise CliError(f"bad --lambdas: {exc}") from exc
    a = sample_2d(args.source, args.n_samples, derive_seed(args.seed, 1))
    b = sample_2d(args.target, args.n_samples, derive_seed(args.seed, 2))
    src, tgt = _pooled(a.points, b.points, "cube")
    rows = []
    for lam in lambdas:
        hj = 0.0 if math.isinf(lam) else 1.0 / lam
        sub_args = argparse.Namespace(**{**vars(args), "lam": None, "hj_weight": None})
        cfg, model = _resolve(sub_args, 2, weights=LossWeights(hj, hj, 1.0, 1.0))
        run = out / f"lambda_{lam:g}"
        run.mkdir(exist_ok=True)
        _train(run, src, tgt, cfg, model)
        cost = get_cost(cfg.cost)
        metrics = _map_metrics(model, cost, src, tgt, cfg.t_f, np.random.default_rng(derive_seed(args.seed, 3)))
        write_metrics_csv(run / "metrics.csv", metrics)
        _maybe_svg(args, run, model, cost, src, tgt, cfg.t_f)
        rows += [(f"{m}@lambda={lam:g}", d, v) for m, d, v in metrics]
    write_metrics_csv(out / "metrics.csv", rows)
    _write_manifest(out, args.command, argv, None,
                    {"lambdas": [repr(v) for v in lambdas], "seed": args.seed, "preset": args.preset,
                     "source": args.source, "target": args.target})
    return 0


COMMANDS = {
    "train-2d": cmd_train_2d,
    "train-gaussian": cmd_train_gaussian,
    "train-class": lambda a, v: cmd_train_2d(a, v, class_conditional=True),
    "color-transfer": cmd_color_transfer,
    "eval-uvp": cmd_eval_uvp,
    "eval-roundtrip": cmd_eval_roundtrip,
    "export-points": cmd_export_points,
    "ablate-lambda": cmd_ablate_lambda,
}


def _thread_limit():
    raw = os.environ.get("NCF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"NCF_THREADS must be an integer, got '{raw}'") from None
    if n < 1:
        raise CliError("NCF_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args, argv)
    except DivergenceError as exc:
        print(f"ncf {args.command}: {exc}", file=sys.stderr)
        return 1
    except (CliError, OSError, ValueError) as exc:
        print(f"ncf {args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
