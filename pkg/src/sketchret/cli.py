"""Command-line surface: gen-synth, train, retrieve, eval, gradcheck.

Exit codes: 0 success, 1 validation error (bad flags, inconsistent inputs),
2 IO or file-format error, 3 numerical failure (non-finite loss, gradient
check above tolerance).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import numerics as nm
from .data import (SyntheticSpec, apply_split, generate_synthetic, read_features,
                   read_split, write_features, write_split)
from .errors import FormatError, NumericalError, ValidationError
from .metrics import evaluate, format_report, write_report_csv
from .model import DisentangleModel, ModelDims
from .retrieval import SPACES, FusionWeights, rank_all, read_rankings, write_rankings
from .training import (TrainConfig, compute_batch_losses, load_checkpoint,
                       save_checkpoint, train)


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage as a validation error (exit 1)."""

    def error(self, message):
        raise ValidationError(message)


def _cmd_gen_synth(args) -> int:
    spec = SyntheticSpec(seen_categories=args.seen, unseen_categories=args.unseen,
                         samples_per_category=args.samples,
                         structure_dim=args.structure_dim,
                         appearance_dim=args.appearance_dim, image_dim=args.image_dim,
                         sketch_dim=args.sketch_dim, noise=args.noise, seed=args.seed)
    images, sketches, split = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_features(images, out / "images.sfv")
    write_features(sketches, out / "sketches.sfv")
    write_split(split, out / "split.txt")
    # pre-filtered unseen-category files so retrieve/eval are plain consumers
    _, queries, gallery = apply_split(images, sketches, split)
    write_features(queries, out / "queries.sfv")
    write_features(gallery, out / "gallery.sfv")
    print(f"wrote {images.rows} image rows, {sketches.rows} sketch rows, "
          f"{len(split.seen)}+{len(split.unseen)} categories, "
          f"{queries.rows} queries, {gallery.rows} gallery rows to {out}")
    return 0


def _read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, text = (part.strip() for part in line.split("=", 1))
            values[key] = TrainConfig.coerce(key, text)
    return values


_DERIVED_KEYS = ("image_dim", "sketch_dim", "n_categories")

# (flag dest, config field) pairs whose CLI value overrides the config file.
_TRAIN_OVERRIDES = [
    ("structure_dim", "structure_dim"), ("appearance_dim", "appearance_dim"),
    ("latent_dim", "latent_dim"), ("hidden_dim", "hidden_dim"), ("lr", "lr"),
    ("batch_size", "batch_size"), ("epochs", "epochs"), ("seed", "seed"),
    ("reduction", "reduction"),
]


def _cmd_train(args) -> int:
    images = read_features(args.images)
    sketches = read_features(args.sketches)
    split = read_split(args.split)
    pool, _, _ = apply_split(images, sketches, split)

    values = _read_config_file(args.config) if args.config else {}
    for key in _DERIVED_KEYS:
        if key in values:
            raise ValidationError(f"config key {key!r} is derived from the data files")
    for dest, key in _TRAIN_OVERRIDES:
        flag = getattr(args, dest)
        if flag is not None:
            values[key] = flag
    for name in ("classification", "orthogonality", "kl", "sketch_recon", "image_recon"):
        if getattr(args, f"no_{name}"):
            values[f"use_{name}"] = False
    if args.squared_recon:
        values["squared_recon"] = True

    config = TrainConfig(image_dim=pool.images.dim, sketch_dim=pool.sketches.dim,
                         n_categories=pool.n_categories, **values)

    interval = max(1, config.epochs // 10)

    def report(epoch, breakdown):
        if (epoch + 1) % interval == 0 or epoch == 0:
            print(f"epoch {epoch + 1:>4}/{config.epochs}  total {breakdown.total:.5f}")

    ckpt = train(config, pool, on_epoch=None if args.quiet else report)
    save_checkpoint(ckpt, args.out)
    terms = "  ".join(f"{k}={v:.5f}" for k, v in sorted(ckpt.final_losses.items()))
    print(f"saved {args.out}  ({terms})")
    return 0


def _cmd_retrieve(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    queries = read_features(args.queries)
    gallery = read_features(args.gallery)
    if queries.dim != model.dims.sketch_dim:
        raise ValidationError(
            f"query dim {queries.dim} != checkpoint sketch dim {model.dims.sketch_dim}")
    w = FusionWeights(lambda1=args.lambda1, lambda2=args.lambda2,
                      n_samples=args.n_samples)
    ranked = rank_all(model, queries, gallery, w, seed=args.seed, space=args.space,
                      threads=args.threads)
    write_rankings(ranked, args.out, top_k=args.k)
    print(f"ranked {queries.rows} queries against {gallery.rows} gallery items "
          f"-> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ranked = read_rankings(args.rankings)
    queries = read_features(args.queries)
    gallery = read_features(args.gallery)
    report = evaluate([(qi, order) for qi, order, _ in ranked], queries.labels,
                      gallery.labels, k=args.k, ap_variant=args.ap_variant)
    print(format_report(report))
    if args.out:
        write_report_csv(report, args.out)
    return 0


def gradcheck_problem(dims: ModelDims, batch: int, seed: int):
    """A full-objective loss closure at a random, generic evaluation point.

    Biases are re-drawn away from zero: with the zero-bias init, a dead
    upstream row puts downstream ReLU pre-activations exactly on the kink,
    where the subgradient and a central difference legitimately disagree.
    """
    rng = np.random.default_rng(seed)
    model = DisentangleModel(dims, seed=rng, dtype=np.float64)
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.data[...] = rng.uniform(-0.1, 0.1, p.data.shape)
    images = rng.random((batch, dims.image_dim))
    sketches = rng.random((batch, dims.sketch_dim))
    labels = rng.integers(0, dims.n_categories, size=batch)
    eps = rng.standard_normal((batch, dims.latent_dim))

    def loss_fn():
        return compute_batch_losses(model, images, sketches, labels, eps)[0]

    return model, loss_fn


def _cmd_gradcheck(args) -> int:
    dims = ModelDims(image_dim=args.feature_dim, sketch_dim=args.feature_dim,
                     n_categories=args.categories, structure_dim=args.structure_dim,
                     appearance_dim=args.appearance_dim, latent_dim=args.latent_dim,
                     hidden_dim=args.hidden)
    model, loss_fn = gradcheck_problem(dims, args.batch, args.seed)
    error = nm.finite_diff_check(loss_fn, model.params, h=args.h)
    ok = error <= args.tol
    print(f"max relative gradient error: {error:.3e}  "
          f"(tolerance {args.tol:.1e}): {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 3


def build_parser() -> _Parser:
    parser = _Parser(prog="sketchret",
                     description="Train and query the structure-aware retrieval engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic SFV1 corpus and split file")
    p.add_argument("--seen", type=int, default=15)
    p.add_argument("--unseen", type=int, default=5)
    p.add_argument("--samples", type=int, default=100,
                   help="samples per category per domain")
    p.add_argument("--structure-dim", type=int, default=8)
    p.add_argument("--appearance-dim", type=int, default=8)
    p.add_argument("--image-dim", type=int, default=64)
    p.add_argument("--sketch-dim", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train", help="train on seen categories and save a checkpoint")
    p.add_argument("--images", required=True)
    p.add_argument("--sketches", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value file with TrainConfig fields")
    p.add_argument("--structure-dim", type=int)
    p.add_argument("--appearance-dim", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reduction", choices=("mean", "sum"))
    for name in ("classification", "orthogonality", "kl", "sketch-recon", "image-recon"):
        p.add_argument(f"--no-{name}", action="store_true",
                       help=f"drop the {name.replace('-', ' ')} loss term")
    p.add_argument("--squared-recon", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("retrieve", help="rank a gallery for every query sketch")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--n-samples", type=int, default=16)
    p.add_argument("--k", type=int, default=200, help="entries written per query")
    p.add_argument("--space", choices=SPACES, default="fusion")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("eval", help="score a ranking file with P@K and mAP@K")
    p.add_argument("--rankings", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--k", type=int, default=200)
    p.add_argument("--ap-variant", choices=("retrieved", "total"), default="retrieved")
    p.add_argument("--out", help="write per-query CSV here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="compare analytic gradients with central differences")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--structure-dim", type=int, default=4)
    p.add_argument("--appearance-dim", type=int, default=4)
    p.add_argument("--latent-dim", type=int, default=2)
    p.add_argument("--categories", type=int, default=3)
    p.add_argument("--batch", type=int, default=4)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValidationError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))
