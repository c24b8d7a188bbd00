"""Command-line entry points: stylize, inspect, benchmark, train, verify.

Exit codes: 0 success, 2 user/input error, 3 checkpoint incompatibility,
4 internal numeric failure.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import losses, verify
from .checkpoint import CheckpointError, CheckpointIncompatible
from .codec import load_image, save_image
from .config import ConfigError, load_train_config
from .model import load_model
from .trainer import Trainer, TrainingDiverged

EXIT_OK = 0
EXIT_USER = 2
EXIT_CHECKPOINT = 3
EXIT_NUMERIC = 4

# Table-style reference latencies reported for this method on a V100 GPU;
# hardware-specific context only, never an acceptance target.
REFERENCE_LATENCY_MS = {256: 8.527, 512: 9.871}

# anchor colors for interpolation-field heatmaps (low -> blue, high -> yellow)
HEATMAP_LOW = np.array([0.0, 0.0, 1.0])
HEATMAP_HIGH = np.array([1.0, 1.0, 0.0])


def _fail(msg: str, code: int) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_stylize(args) -> int:
    for name in ("content", "style", "checkpoint"):
        p = Path(getattr(args, name))
        if not p.exists():
            return _fail(f"{name} file not found: {p}", EXIT_USER)
    try:
        model, _ = load_model(args.checkpoint)
    except CheckpointIncompatible as e:
        return _fail(str(e), EXIT_CHECKPOINT)
    except CheckpointError as e:
        return _fail(str(e), EXIT_USER)
    if args.seed is not None:
        torch.manual_seed(args.seed)
    content = load_image(args.content)
    style = load_image(args.style)
    force = 1.0 if args.force_content else None
    try:
        if args.stages:
            images = model.stylize(content, style, all_stages=True,
                                   force_weight=force)
            out = Path(args.out)
            for i, img in enumerate(images, start=1):
                save_image(out.with_suffix(f".stage{i}{out.suffix}"), img)
            save_image(out, images[-1])
        else:
            save_image(args.out, model.stylize(content, style,
                                               force_weight=force))
    except (FloatingPointError, RuntimeError) as e:
        return _fail(f"numeric failure during stylization: {e}", EXIT_NUMERIC)
    return EXIT_OK


def weights_heatmap(weights: np.ndarray, upscale: int = 8) -> np.ndarray:
    """Affine blue->yellow colormap, upsampled nearest-neighbor."""
    w = np.clip(weights, 0.0, 1.0)[..., None]
    rgb = (1.0 - w) * HEATMAP_LOW + w * HEATMAP_HIGH
    return np.repeat(np.repeat(rgb, upscale, axis=0), upscale, axis=1)


def cmd_inspect(args) -> int:
    for name in ("content", "style", "checkpoint"):
        p = Path(getattr(args, name))
        if not p.exists():
            return _fail(f"{name} file not found: {p}", EXIT_USER)
    try:
        model, _ = load_model(args.checkpoint)
    except CheckpointIncompatible as e:
        return _fail(str(e), EXIT_CHECKPOINT)
    except CheckpointError as e:
        return _fail(str(e), EXIT_USER)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    content = load_image(args.content)
    style = load_image(args.style)
    for i, (rearranged, weights) in enumerate(model.inspect(content, style),
                                              start=1):
        save_image(out_dir / f"stage{i}_rearranged_style.png", rearranged)
        save_image(out_dir / f"stage{i}_weights.png", weights_heatmap(weights))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if args.trials < 10:
        return _fail("trials must be >= 10", EXIT_USER)
    if args.warmup < 0:
        return _fail("warmup must be >= 0", EXIT_USER)
    for r in args.resolutions:
        if r < 16:
            return _fail(f"resolution {r} below the 16px minimum", EXIT_USER)
    try:
        model, _ = load_model(args.checkpoint)
    except CheckpointIncompatible as e:
        return _fail(str(e), EXIT_CHECKPOINT)
    except CheckpointError as e:
        return _fail(str(e), EXIT_USER)
    device = f"cpu ({torch.get_num_threads()} threads)"
    rows = []
    rng = np.random.default_rng(args.seed or 0)
    for res in args.resolutions:
        content = rng.random((res, res, 3)).astype(np.float32)
        style = rng.random((res, res, 3)).astype(np.float32)
        for _ in range(args.warmup):
            model.stylize(content, style)
        times = []
        for _ in range(args.trials):
            t0 = time.perf_counter()
            model.stylize(content, style)
            times.append((time.perf_counter() - t0) * 1e3)
        mean = float(np.mean(times))
        std = float(np.std(times))
        rows.append((res, mean, std))
        ref = REFERENCE_LATENCY_MS.get(res)
        ref_txt = (f"  [published reference: {ref} ms on a V100 GPU; "
                   "hardware-specific, not a target]" if ref else "")
        print(f"{res}px: {mean:.3f} ms +/- {std:.3f} ms over "
              f"{args.trials} trials{ref_txt}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["resolution", "mean_ms", "std_ms", "trials",
                             "device"])
            for res, mean, std in rows:
                writer.writerow([res, repr(mean), repr(std), args.trials,
                                 device])
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        cfg = load_train_config(args.config)
    except (ConfigError, OSError) as e:
        return _fail(str(e), EXIT_USER)
    try:
        trainer = Trainer(cfg)
        if args.resume:
            trainer.load(args.resume)
        csv_path = trainer.run()
    except CheckpointIncompatible as e:
        return _fail(str(e), EXIT_CHECKPOINT)
    except ConfigError as e:
        return _fail(str(e), EXIT_USER)
    except TrainingDiverged as e:
        return _fail(str(e), EXIT_NUMERIC)
    print(f"finished at step {trainer.step}; loss log: {csv_path}")
    return EXIT_OK


def _verify_checks(seed: int):
    """Seeded oracle-equivalence and gradient checks; yields result dicts."""
    rng = np.random.default_rng(seed)

    worst = 0.0
    for _ in range(100):
        p, q = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        x = rng.normal(size=(p, 4))
        y = rng.normal(size=(q, 4))
        ours = float(losses.remd_loss(torch.tensor(x.T), torch.tensor(y.T)))
        worst = max(worst, abs(ours - verify.remd_oracle(x, y)))
    yield {"check": "remd_oracle_equivalence", "max_error": worst,
           "threshold": 1e-6, "passed": worst < 1e-6}

    worst = 0.0
    for _ in range(100):
        p = int(rng.integers(2, 9))
        c = rng.normal(size=(p, 4))
        cs = rng.normal(size=(p, 4))
        ours = float(losses.self_similarity_loss(torch.tensor(c.T),
                                                 torch.tensor(cs.T)))
        worst = max(worst, abs(ours - verify.self_similarity_oracle(c, cs)))
    yield {"check": "self_similarity_oracle_equivalence", "max_error": worst,
           "threshold": 1e-6, "passed": worst < 1e-6}

    from .losses import build_color_histogram
    worst = 0.0
    for _ in range(20):
        img = verify.bin_centered_chroma_image(rng, bins=9, size=8)
        soft = build_color_histogram(torch.tensor(img), bins=9,
                                     falloff=1e-4).numpy()
        hard = verify.hard_histogram_oracle(img, bins=9)
        worst = max(worst, float(np.abs(soft - hard).max()))
    yield {"check": "histogram_hard_limit", "max_error": worst,
           "threshold": 1e-3, "passed": worst < 1e-3}

    report = verify.grad_check(
        lambda a, b: losses.moment_loss(a, b), [
            torch.tensor(rng.normal(size=(4, 6))),
            torch.tensor(rng.normal(size=(4, 6)))],
        name="moment_loss")
    yield {"check": "moment_loss_gradients",
           "max_error": report.max_rel_error,
           "threshold": report.threshold, "passed": report.passed}


def cmd_verify(args) -> int:
    results = list(_verify_checks(args.seed or 0))
    width = max(len(r["check"]) for r in results)
    all_ok = True
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        all_ok &= r["passed"]
        print(f"{r['check']:<{width}}  max_err={r['max_error']:.3e}  "
              f"thr={r['threshold']:.0e}  {status}")
    if args.report:
        Path(args.report).write_text(json.dumps(results, indent=2))
    return EXIT_OK if all_ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pama",
        description="Progressive attentional manifold alignment style "
                    "transfer tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stylize", help="stylize a content image")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stages", action="store_true",
                   help="also write each stage's decoded output")
    p.add_argument("--force-content", action="store_true",
                   help="diagnostic: pin the interpolation field to 1")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("inspect",
                       help="write per-stage rearranged-style decodes and "
                            "interpolation-field heatmaps")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("benchmark", help="time the full tensor path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--resolutions", type=int, nargs="+", default=[256, 512])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("train", help="run the desk-scale trainer")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run oracle and gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="JSON report path")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
