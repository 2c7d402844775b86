"""Command-line interface: ``ampnet {train,reconstruct,eval,ablate}``.

Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .data import crop_blocks, load_corpus
from .errors import (AmpNetError, CheckpointError, DataError, DivergenceError, NumericError,
                     ParameterError, SingularityError)
from .imageio import list_images, read_image, write_image
from .metrics import mean_psnr, psnr
from .network import AmpNet
from .pipeline import make_method, reconstruct_image
from .sensing import RATIOS
from .training import TrainConfig, train

log = logging.getLogger("ampnet")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

ABLATION_VARIANTS = {
    # name: (model kind, ModelConfig overrides); None kind means classical AMP
    "amp": (None, {}),
    "cnn-only": ("amp-net", {"unrolled": False}),
    "amp-net-gaussian-phi": ("amp-net", {"learn_phi": False}),
    "amp-net": ("amp-net", {}),
    "ampa-net-a_q": ("ampa-net", {"init_attention": True, "spatial_attention": False, "channel_attention": False}),
    "ampa-net-a_s": ("ampa-net", {"init_attention": False, "spatial_attention": True, "channel_attention": False}),
    "ampa-net-a_c": ("ampa-net", {"init_attention": False, "spatial_attention": False, "channel_attention": True}),
    "ampa-net": ("ampa-net", {}),
}


class UsageError(AmpNetError):
    pass


def default_seed() -> int:
    return int(os.environ.get("AMP_SEED", "0"))


def ratio_arg(text: str) -> float:
    try:
        r = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < r <= 1:
        raise argparse.ArgumentTypeError(f"CS ratio must lie in (0, 1], got {r}")
    return r


def ratio_list(text: str) -> list[float]:
    return [ratio_arg(t) for t in text.split(",") if t.strip()]


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=positive_int, default=200)
    p.add_argument("--batch", type=positive_int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--stacks", type=positive_int, default=9, help="number of unrolled stages K")
    p.add_argument("--lambda-o", type=float, default=0.01)
    p.add_argument("--channels", type=positive_int, default=32)
    p.add_argument("--block-size", type=positive_int, default=33)
    p.add_argument("--blocks", type=positive_int, default=8912, help="random crops drawn from the corpus")
    p.add_argument("--seed", type=int, default=None, help="default: $AMP_SEED or 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ampnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train AMP-Net / AMPA-Net on a corpus of images")
    p.add_argument("--model", choices=["amp-net", "ampa-net"], required=True)
    p.add_argument("--ratio", type=ratio_arg, required=True)
    p.add_argument("--corpus", required=True)
    _add_train_flags(p)
    p.add_argument("--fixed-phi", action="store_true", help="freeze W_phi to the seeded Gaussian matrix")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", default=None, help="checkpoint path (default <model>-<ratio>.ampck)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="sense and reconstruct images")
    p.add_argument("--method", choices=["amp", "amp-net", "ampa-net"], required=True)
    p.add_argument("--ratio", type=ratio_arg, required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--iters", type=positive_int, default=100)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--block-size", type=positive_int, default=33)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fixed-phi", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="PSNR benchmark over a dataset and a ratio grid")
    p.add_argument("--method", choices=["amp", "amp-net", "ampa-net"], required=True)
    p.add_argument("--ratios", type=ratio_list, default=list(RATIOS))
    p.add_argument("--dataset", required=True)
    p.add_argument("--ckpt-dir", default=None)
    p.add_argument("--iters", type=positive_int, default=100)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--block-size", type=positive_int, default=33)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score the component ablation grid")
    p.add_argument("--ratio", type=float, choices=[0.10, 0.30, 0.50], required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dataset", required=True)
    _add_train_flags(p)
    p.add_argument("--iters", type=positive_int, default=100)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", default=None, help="CSV path")
    p.set_defaults(func=cmd_ablate)
    return parser


def _seed(args) -> int:
    return default_seed() if args.seed is None else args.seed


def _train_config(args, model: str, learn_phi: bool = True) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch, epochs=args.epochs, stages=args.stacks,
                       lambda_o=args.lambda_o, ratio=args.ratio, seed=_seed(args), corpus=str(args.corpus),
                       n_blocks=args.blocks, channels=args.channels, block_size=args.block_size,
                       model=model, learn_phi=learn_phi)


def _training_blocks(cfg: TrainConfig) -> np.ndarray:
    images = load_corpus(cfg.corpus)
    return crop_blocks(images, cfg.n_blocks, cfg.block_size, np.random.default_rng(cfg.seed))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)  # RFC 4180 CRLF rows; quotes embedded CR and LF
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# --- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _train_config(args, args.model, learn_phi=not args.fixed_phi)
    cfg.validate()
    out = Path(args.out or f"{args.model}-{args.ratio:g}.ampck")
    cfg.checkpoint_path = str(out)
    cfg.checkpoint_every = args.checkpoint_every
    blocks = _training_blocks(cfg)
    model = AmpNet(cfg.model_config())

    def report(rec):
        print(f"epoch {rec.epoch:4d}  L_total={rec.total:.6f}  L_R={rec.recon:.6f}  L_O={rec.ortho:.6f}", flush=True)

    result = train(model, cfg, blocks, on_epoch=report)
    save_checkpoint(result.checkpoint(cfg), out)
    csv_path = out.with_suffix(".csv")
    write_csv(csv_path, ["epoch", "L_total", "L_R", "L_O"],
              [[r.epoch, _fmt(r.total), _fmt(r.recon), _fmt(r.ortho)] for r in result.history])
    print(f"wrote {out} and {csv_path}")
    return 0


def _load_model(path, method: str, ratio: float, fixed_phi: bool = False) -> AmpNet:
    ckpt = load_checkpoint(path, expect_kind=method)
    cfg = ckpt.model_config
    if not math.isclose(cfg.ratio, ratio, rel_tol=0, abs_tol=1e-12):
        raise UsageError(f"checkpoint {path} was trained at ratio {cfg.ratio}, not {ratio}")
    if fixed_phi and cfg.learn_phi:
        raise UsageError(f"--fixed-phi needs a checkpoint trained with a fixed Gaussian W_phi; {path} learned it")
    return model_from_checkpoint(ckpt)


def cmd_reconstruct(args) -> int:
    seed = _seed(args)
    model = None
    if args.method != "amp":
        if not args.ckpt:
            raise UsageError(f"--method {args.method} needs --ckpt")
        model = _load_model(args.ckpt, args.method, args.ratio, args.fixed_phi)
    method = make_method(args.method, args.ratio, model, block_size=args.block_size, seed=seed,
                         iters=args.iters, alpha=args.alpha)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in map(Path, args.input):
        img = read_image(path)
        rec, fallbacks = reconstruct_image(img, method)
        suffix = ".pgm" if rec.ndim == 2 else ".ppm"
        write_image(out_dir / f"{path.stem}{suffix}", rec)
        if fallbacks:
            print(f"warning: {path.name}: {fallbacks} block(s) diverged, pseudo-inverse used", file=sys.stderr)
        rows.append([path.name, args.method, args.ratio, fallbacks])
        print(f"{path.name}: PSNR {psnr(img, rec):.4f} dB")
    write_csv(out_dir / "report.csv", ["image", "method", "ratio", "fallback_blocks"], rows)
    return 0


def _index_checkpoints(ckpt_dir) -> dict:
    index = {}
    for path in sorted(Path(ckpt_dir).glob("*.ampck")):
        try:
            ckpt = load_checkpoint(path)
        except CheckpointError as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        index.setdefault((ckpt.kind, round(ckpt.model_config.ratio, 12)), path)
    return index


def evaluate_dataset(method, images) -> list[tuple[str, float, float]]:
    rows = []
    for path, img in images:
        t0 = time.perf_counter()
        rec, _ = reconstruct_image(img, method)
        rows.append((path.name, psnr(img, rec), time.perf_counter() - t0))
    return rows


def cmd_eval(args) -> int:
    seed = _seed(args)
    images = [(p, read_image(p)) for p in list_images(args.dataset)]
    if not images:
        raise DataError(f"no images in {args.dataset}")
    index = _index_checkpoints(args.ckpt_dir) if args.ckpt_dir else {}
    if args.method != "amp" and not args.ckpt_dir:
        raise UsageError(f"--method {args.method} needs --ckpt-dir")

    rows, missing = [], []
    for ratio in args.ratios:
        model = None
        if args.method != "amp":
            path = index.get((args.method, round(ratio, 12)))
            if path is None:
                missing.append(ratio)
                continue
            model = _load_model(path, args.method, ratio)
        method = make_method(args.method, ratio, model, block_size=args.block_size, seed=seed,
                             iters=args.iters, alpha=args.alpha)
        per_image = evaluate_dataset(method, images)
        for name, db, secs in per_image:
            rows.append([name, ratio, db, secs])
        rows.append(["mean", ratio, mean_psnr(r[1] for r in per_image),
                     float(np.mean([r[2] for r in per_image]))])

    print(f"{'image':<24}{'ratio':>8}{'PSNR (dB)':>12}{'sec (wall)':>12}")
    for name, ratio, db, secs in rows:
        print(f"{name:<24}{ratio:>8.2f}{db:>12.4f}{secs:>12.4f}")
    if args.out:
        write_csv(args.out, ["image", "ratio", "psnr_db", "seconds"],
                  [[n, _fmt(r), _fmt(d), _fmt(s)] for n, r, d, s in rows])
    if missing:
        print("missing checkpoints for ratio(s): " + ", ".join(f"{r:g}" for r in missing), file=sys.stderr)
        return EXIT_DATA
    return 0


def cmd_ablate(args) -> int:
    seed = _seed(args)
    images = [(p, read_image(p)) for p in list_images(args.dataset)]
    if not images:
        raise DataError(f"no images in {args.dataset}")
    base = _train_config(args, "amp-net")
    base.validate()
    blocks = _training_blocks(base)

    rows = []
    for name in sorted(ABLATION_VARIANTS):
        kind, overrides = ABLATION_VARIANTS[name]
        if kind is None:
            method = make_method("amp", args.ratio, block_size=args.block_size, seed=seed,
                                 iters=args.iters, alpha=args.alpha)
        else:
            cfg = _train_config(args, kind)
            model = AmpNet(cfg.model_config(**overrides))
            train(model, cfg, blocks)
            method = make_method(kind, args.ratio, model)
        score = mean_psnr(db for _, db, _ in evaluate_dataset(method, images))
        print(f"{name:<24}{score:>10.4f} dB", flush=True)
        rows.append([name, args.ratio, score])

    if args.out:
        write_csv(args.out, ["variant", "ratio", "psnr_db"], [[n, _fmt(r), _fmt(d)] for n, r, d in rows])
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParameterError) as exc:
        parser.print_usage(sys.stderr)
        print(f"ampnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"ampnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, DivergenceError, SingularityError) as exc:
        print(f"ampnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
