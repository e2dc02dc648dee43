"""Acceptance suite; prints one pass/fail line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the criterion lines.
"""

import itertools
import math
import time

import numpy as np
import pytest

from sketchret import cli, losses, metrics, numerics as nm, training
from sketchret.data import (FeatureSet, SyntheticSpec, generate_synthetic,
                            read_features, write_features)
from sketchret.model import DisentangleModel, ModelDims
from sketchret.retrieval import cosine_distance, read_rankings

TOY_DIMS = ModelDims(image_dim=8, sketch_dim=8, n_categories=3, structure_dim=4,
                     appearance_dim=4, latent_dim=2, hidden_dim=8)

SYNTH_FLAGS = ["--seen", "15", "--unseen", "5", "--samples", "100",
               "--structure-dim", "8", "--appearance-dim", "8",
               "--image-dim", "64", "--sketch-dim", "64",
               "--noise", "0.1", "--seed", "1"]

# synthetic-scale model dims; optimizer, batch size, and epochs stay at defaults
TRAIN_DIM_FLAGS = ["--structure-dim", "32", "--appearance-dim", "32",
                   "--latent-dim", "8", "--hidden-dim", "128"]

RETRIEVE_FLAGS = ["--lambda1", "1", "--lambda2", "1", "--n-samples", "16",
                  "--k", "10", "--seed", "1"]


def announce(number, ok, detail):
    print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {number}: {detail}"


def run_pipeline(root, threads=1):
    """The criterion-4 pipeline, entirely through the CLI."""
    data_dir = root / "data"
    ckpt = root / "model.sck"
    rankings = root / "rankings.tsv"
    report = root / "report.csv"
    assert cli.run(["gen-synth", "--out-dir", str(data_dir)] + SYNTH_FLAGS) == 0
    assert cli.run(["train", "--images", str(data_dir / "images.sfv"),
                    "--sketches", str(data_dir / "sketches.sfv"),
                    "--split", str(data_dir / "split.txt"),
                    "--out", str(ckpt), "--quiet"] + TRAIN_DIM_FLAGS) == 0
    assert cli.run(["retrieve", "--checkpoint", str(ckpt),
                    "--queries", str(data_dir / "queries.sfv"),
                    "--gallery", str(data_dir / "gallery.sfv"),
                    "--out", str(rankings), "--threads", str(threads)]
                   + RETRIEVE_FLAGS) == 0
    assert cli.run(["eval", "--rankings", str(rankings),
                    "--queries", str(data_dir / "queries.sfv"),
                    "--gallery", str(data_dir / "gallery.sfv"),
                    "--k", "10", "--out", str(report)]) == 0
    return {"data": data_dir, "ckpt": ckpt, "rankings": rankings, "report": report}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    start = time.time()
    paths = run_pipeline(root)
    paths["elapsed"] = time.time() - start
    return paths


def mean_p_at_10(paths, space):
    """P@10 for one retrieval space, via a fresh CLI retrieve + eval pass."""
    data_dir = paths["data"]
    out = paths["rankings"].parent / f"rankings_{space}.tsv"
    assert cli.run(["retrieve", "--checkpoint", str(paths["ckpt"]),
                    "--queries", str(data_dir / "queries.sfv"),
                    "--gallery", str(data_dir / "gallery.sfv"),
                    "--out", str(out), "--space", space] + RETRIEVE_FLAGS) == 0
    ranked = [(qi, order) for qi, order, _ in read_rankings(out)]
    report = metrics.evaluate(ranked, read_features(data_dir / "queries.sfv").labels,
                              read_features(data_dir / "gallery.sfv").labels, k=10)
    return report.mean_p


def test_criterion_1_gradient_integrity():
    start = time.time()
    worst = 0.0
    for seed in range(1, 21):
        model, loss_fn = cli.gradcheck_problem(TOY_DIMS, batch=4, seed=seed)
        worst = max(worst, nm.finite_diff_check(loss_fn, model.params, h=1e-5))
    elapsed = time.time() - start
    announce(1, worst <= 1e-5 and elapsed < 60,
             f"max relative gradient error {worst:.3e} over 20 seeds "
             f"(tol 1e-5), {elapsed:.1f}s")


def test_criterion_2_closed_form_losses():
    exact_zero = float(losses.kl_loss(np.zeros((1, 3)), np.ones((1, 3))).data) == 0.0
    half = float(losses.kl_loss(np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]])).data)

    # Monte-Carlo KL( N(0,4) || N(0,1) ) from the log-density ratio
    rng = np.random.default_rng(20240)
    x = rng.normal(0.0, 2.0, size=1_000_000)
    log_q = -0.5 * np.log(2 * np.pi * 4.0) - x ** 2 / 8.0
    log_p = -0.5 * np.log(2 * np.pi) - x ** 2 / 2.0
    mc = float(np.mean(log_q - log_p))
    closed = float(losses.kl_loss(np.array([[0.0]]), np.array([[2.0]])).data)

    worst_cos = 0.0
    pair_rng = np.random.default_rng(77)
    for _ in range(100):
        dim = int(pair_rng.integers(2, 24))
        a = pair_rng.random(dim)
        b = pair_rng.random(dim)
        got = float(losses.orthogonality_loss(a.reshape(1, -1), b.reshape(1, -1)).data)
        hand = math.fsum(x * y for x, y in zip(a, b)) / (
            math.sqrt(math.fsum(x * x for x in a)) * math.sqrt(math.fsum(y * y for y in b)))
        worst_cos = max(worst_cos, abs(got - hand))

    ok = (exact_zero and abs(half - 0.5) <= 1e-6
          and abs(closed - mc) / mc <= 0.01 and worst_cos <= 1e-5)
    announce(2, ok, f"kl(0,1)=0 exact; kl((1,0),(1,1))={half:.8f}; "
                    f"kl(0,2)={closed:.6f} vs MC {mc:.6f}; "
                    f"cosine max |err| {worst_cos:.2e} over 100 pairs")


def test_criterion_3_metric_oracle_equivalence():
    def oracle_p(rel, k):
        kk = min(k, len(rel))
        return sum(rel[:kk]) / kk

    def oracle_ap(rel, k):
        kk = min(k, len(rel))
        precisions = [sum(rel[:r]) / r for r in range(1, kk + 1) if rel[r - 1]]
        return sum(precisions) / len(precisions) if precisions else 0.0

    start = time.time()
    cases = 0
    for length in range(1, 11):
        for bits in itertools.product((0, 1), repeat=length):
            rel = list(bits)
            for k in range(1, 11):
                assert metrics.precision_at_k(rel, k) == oracle_p(rel, k)
                assert metrics.average_precision_at_k(rel, k) == oracle_ap(rel, k)
                cases += 1
    elapsed = time.time() - start
    announce(3, elapsed < 10,
             f"P@K and AP@K equal the exhaustive oracle on {cases} cases, "
             f"{elapsed:.1f}s")


def test_criterion_4_synthetic_end_to_end(pipeline):
    fused = mean_p_at_10(pipeline, "fusion")
    per_space = {s: mean_p_at_10(pipeline, s) for s in ("sketch", "image", "structure")}
    best = max(per_space.values())
    ok = (fused >= 0.60 and all(v >= 0.40 for v in per_space.values())
          and fused >= best - 0.02 and pipeline["elapsed"] <= 300)
    announce(4, ok, f"P@10 fused {fused:.3f} (>=0.60), "
                    + ", ".join(f"{s} {v:.3f}" for s, v in per_space.items())
                    + f" (each >=0.40), fused >= best-0.02 ({best - 0.02:.3f}), "
                    f"pipeline {pipeline['elapsed']:.0f}s (<=300s)")


def test_criterion_5_disentanglement(pipeline):
    ckpt = training.load_checkpoint(pipeline["ckpt"])
    model = ckpt.build_model()
    # extend every category's stream: rows past the first 100 are held out
    grown = SyntheticSpec(seen_categories=15, unseen_categories=5,
                          samples_per_category=120, structure_dim=8,
                          appearance_dim=8, image_dim=64, sketch_dim=64,
                          noise=0.1, seed=1)
    images, _, _ = generate_synthetic(grown)
    held = np.concatenate([images.values[c * 120 + 100:(c + 1) * 120]
                           for c in range(15)])
    st, ap = model.encode_image(held)
    cosines = [1.0 - cosine_distance(a, s) for a, s in zip(ap.data, st.data)]
    mean_cos = float(np.mean(cosines))
    announce(5, mean_cos <= 0.10,
             f"mean cos(appearance, structure) = {mean_cos:.5f} on "
             f"{held.shape[0]} held-out seen-category images (<=0.10)")


def test_criterion_6_determinism(pipeline, tmp_path_factory):
    rerun = run_pipeline(tmp_path_factory.mktemp("rerun"))
    same = {name: pipeline[name].read_bytes() == rerun[name].read_bytes()
            for name in ("ckpt", "rankings", "report")}

    threaded = pipeline["rankings"].parent / "rankings_t8.tsv"
    assert cli.run(["retrieve", "--checkpoint", str(pipeline["ckpt"]),
                    "--queries", str(pipeline["data"] / "queries.sfv"),
                    "--gallery", str(pipeline["data"] / "gallery.sfv"),
                    "--out", str(threaded), "--threads", "8"] + RETRIEVE_FLAGS) == 0
    same["threads"] = pipeline["rankings"].read_bytes() == threaded.read_bytes()
    announce(6, all(same.values()),
             "byte-identical across reruns and thread counts: "
             + ", ".join(f"{k}={v}" for k, v in same.items()))


def test_criterion_7_format_robustness(tmp_path):
    rng = np.random.default_rng(99)
    checked = 0
    for i in range(900):
        rows = [0, int(rng.integers(0, 7)), 1][i % 3]
        dim = [1, int(rng.integers(1, 13)), int(rng.integers(1, 13))][i % 3]
        n_cats = int(rng.integers(1, 4))
        fs = FeatureSet(values=rng.normal(size=(rows, dim)).astype(np.float32),
                        labels=rng.integers(0, n_cats, size=rows).astype(np.uint32),
                        names=[f"c{j}" for j in range(n_cats)])
        path = tmp_path / "probe.sfv"
        write_features(fs, path)
        first = path.read_bytes()
        back = read_features(path)
        assert back.values.tobytes() == fs.values.tobytes()
        assert back.labels.tobytes() == fs.labels.tobytes()
        assert back.names == fs.names
        write_features(back, path)
        assert path.read_bytes() == first
        checked += 1

    toy_cfg = training.TrainConfig(image_dim=4, sketch_dim=3, n_categories=2,
                                   structure_dim=2, appearance_dim=2, latent_dim=1,
                                   hidden_dim=3, epochs=1)
    for i in range(100):
        model = DisentangleModel(toy_cfg.model_dims(), seed=int(rng.integers(1 << 31)))
        ckpt = training.Checkpoint(
            params={k: p.data.copy() for k, p in model.params.items()},
            config=toy_cfg, final_losses={"total": float(rng.random())})
        path = tmp_path / "probe.sck"
        training.save_checkpoint(ckpt, path)
        first = path.read_bytes()
        back = training.load_checkpoint(path)
        assert back.config == ckpt.config and back.final_losses == ckpt.final_losses
        for name in ckpt.params:
            assert back.params[name].tobytes() == ckpt.params[name].tobytes()
        training.save_checkpoint(back, path)
        assert path.read_bytes() == first
        checked += 1

    # corrupted magic and truncation must surface as exit code 2
    good = tmp_path / "good"
    assert cli.run(["gen-synth", "--seen", "2", "--unseen", "1", "--samples", "2",
                    "--out-dir", str(good)]) == 0
    codes = []
    corrupt = tmp_path / "bad.sfv"
    blob = bytearray((good / "images.sfv").read_bytes())
    blob[:4] = b"????"
    corrupt.write_bytes(bytes(blob))
    codes.append(cli.run(["train", "--images", str(corrupt),
                          "--sketches", str(good / "sketches.sfv"),
                          "--split", str(good / "split.txt"),
                          "--out", str(tmp_path / "m.sck")]))
    truncated = tmp_path / "short.sfv"
    truncated.write_bytes((good / "images.sfv").read_bytes()[:25])
    codes.append(cli.run(["train", "--images", str(truncated),
                          "--sketches", str(good / "sketches.sfv"),
                          "--split", str(good / "split.txt"),
                          "--out", str(tmp_path / "m.sck")]))
    bad_ckpt = tmp_path / "bad.sck"
    bad_ckpt.write_bytes(b"NOSCK" + bytes(40))
    codes.append(cli.run(["retrieve", "--checkpoint", str(bad_ckpt),
                          "--queries", str(good / "queries.sfv"),
                          "--gallery", str(good / "gallery.sfv"),
                          "--out", str(tmp_path / "r.tsv")]))
    announce(7, checked == 1000 and all(c == 2 for c in codes),
             f"{checked} bit-exact round trips; corrupted/truncated inputs "
             f"exit with {codes}")


def test_criterion_8_ablation_wiring(tmp_path):
    spec = SyntheticSpec(seen_categories=4, unseen_categories=2,
                         samples_per_category=12, structure_dim=4, appearance_dim=3,
                         image_dim=12, sketch_dim=12, noise=0.1, seed=3)
    images, sketches, split = generate_synthetic(spec)
    from sketchret.data import apply_split
    pool, _, _ = apply_split(images, sketches, split)

    cls_only = training.TrainConfig(
        image_dim=12, sketch_dim=12, n_categories=4, structure_dim=6,
        appearance_dim=6, latent_dim=2, hidden_dim=8, batch_size=8, epochs=3,
        seed=2, use_orthogonality=False, use_kl=False, use_sketch_recon=False,
        use_image_recon=False)
    ckpt = training.train(cls_only, pool)
    init = training.initial_model(cls_only)
    generator_blocks = ("sketch_dec", "image_dec", "appear_var")
    untouched = all(np.array_equal(ckpt.params[name], init.params[name].data)
                    for name in ckpt.params
                    if name.split(".")[0] in generator_blocks)
    trained = any(not np.array_equal(ckpt.params[name], init.params[name].data)
                  for name in ckpt.params if name.startswith("classifier"))

    no_kl = training.TrainConfig(
        image_dim=12, sketch_dim=12, n_categories=4, structure_dim=6,
        appearance_dim=6, latent_dim=2, hidden_dim=8, batch_size=8, epochs=2,
        seed=2, use_kl=False)
    path = tmp_path / "nokl.sck"
    training.save_checkpoint(training.train(no_kl, pool), path)
    recorded = training.load_checkpoint(path).config.use_kl is False

    announce(8, untouched and trained and recorded,
             f"classification-only run leaves decoder/variational blocks at "
             f"init ({untouched}) while the classifier moves ({trained}); "
             f"kl-off run completes and records the toggle ({recorded})")
