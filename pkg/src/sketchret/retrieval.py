"""Three-space retrieval: structure, sketch, and image distances with fusion.

For a sketch query against an image gallery:

  structure: cosine distance between the two structure encodings;
  sketch:    cosine distance between the gallery image's decoded sketch
             feature and the raw query sketch feature;
  image:     cosine distance between the raw gallery image feature and an
             image feature generated from the query (mean of N decodes with
             appearance noise drawn from the standard normal prior);
  fusion:    lambda1 * (image + sketch) + lambda2 * structure.

Gallery-side encodings depend only on the gallery, so they are computed
once and shared across queries. Each query owns an rng stream derived from
(seed, query index), which keeps rankings identical however scoring is
parallelized.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .data import FeatureSet
from .errors import DimensionError, FormatError, ValidationError
from .model import DisentangleModel

SPACES = ("fusion", "structure", "sketch", "image")


@dataclass(frozen=True)
class FusionWeights:
    """Space weights and the sample count for generated image features."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    n_samples: int = 16

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError("fusion weights must be non-negative")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise ValidationError("at least one fusion weight must be positive")
        if self.n_samples < 1:
            raise ValidationError("n_samples must be at least 1")


@dataclass
class RankedList:
    """Gallery order for one query plus the per-space distances, aligned."""

    query_index: int
    order: np.ndarray          # gallery indices, best first
    structure_dist: np.ndarray
    sketch_dist: np.ndarray
    image_dist: np.ndarray
    fused_dist: np.ndarray


def cosine_distance(a, b) -> float:
    """1 - cos(a, b) with an epsilon guard; a zero vector gives distance 1."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_distance: shapes {a.shape} and {b.shape} differ")
    denom = np.linalg.norm(a) * np.linalg.norm(b) + nm.EPS_GUARD
    return float(1.0 - (a @ b) / denom)


def _rows_cosine_distance(rows: np.ndarray, v: np.ndarray) -> np.ndarray:
    rows = rows.astype(np.float64, copy=False)
    v = v.astype(np.float64, copy=False)
    dots = rows @ v
    denom = np.linalg.norm(rows, axis=1) * np.linalg.norm(v) + nm.EPS_GUARD
    return 1.0 - dots / denom


def _run(node) -> np.ndarray:
    return node.data


def _batch(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float32)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def generate_image_feature(model: DisentangleModel, f_sk_st, n_samples: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Mean of `n_samples` image decodes with prior-sampled appearance.

    The appearance inputs are drawn from N(0, 1), not from the variational
    estimator: at query time there is no image to condition on.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    st = _batch(f_sk_st)
    z = rng.standard_normal((n_samples, model.dims.latent_dim)).astype(np.float32)
    tiled = np.repeat(st, n_samples, axis=0)
    decoded = _run(model.decode_image(z, tiled))
    return decoded.mean(axis=0, dtype=np.float64)


def structure_distance(model: DisentangleModel, f_im, f_sk) -> float:
    """Distance between the image and sketch structure encodings."""
    st_im, _ = model.encode_image(_batch(f_im))
    st_sk = model.encode_sketch(_batch(f_sk))
    return cosine_distance(_run(st_im)[0], _run(st_sk)[0])


def sketch_space_distance(model: DisentangleModel, f_im, f_sk) -> float:
    """Distance between the image's decoded sketch feature and the query."""
    st_im, _ = model.encode_image(_batch(f_im))
    decoded = _run(model.decode_sketch(st_im))[0]
    return cosine_distance(decoded, np.asarray(f_sk, dtype=np.float64).reshape(-1))


def image_space_distance(model: DisentangleModel, f_im, f_sk, n_samples: int,
                         rng: np.random.Generator) -> float:
    """Distance between the raw image feature and the query's generated one."""
    st_sk = _run(model.encode_sketch(_batch(f_sk)))
    generated = generate_image_feature(model, st_sk[0], n_samples, rng)
    return cosine_distance(np.asarray(f_im, dtype=np.float64).reshape(-1), generated)


def fused_distance(image_dist, sketch_dist, structure_dist, w: FusionWeights):
    """lambda1 * (image + sketch) + lambda2 * structure; works elementwise."""
    return w.lambda1 * (image_dist + sketch_dist) + w.lambda2 * structure_dist


@dataclass
class GallerySide:
    """Query-independent encodings of every gallery image, computed once."""

    values: np.ndarray       # raw image features
    struct_enc: np.ndarray   # structure encodings
    sketch_dec: np.ndarray   # decoded sketch features


def prepare_gallery(model: DisentangleModel, gallery: FeatureSet) -> GallerySide:
    if gallery.rows == 0:
        raise ValidationError("gallery is empty")
    if gallery.dim != model.dims.image_dim:
        raise ValidationError(
            f"gallery dim {gallery.dim} != model image dim {model.dims.image_dim}")
    st, _ = model.encode_image(gallery.values)
    dec = model.decode_sketch(st)
    return GallerySide(values=gallery.values, struct_enc=_run(st), sketch_dec=_run(dec))


def rank_gallery(model: DisentangleModel, query, gallery: FeatureSet | GallerySide,
                 w: FusionWeights, rng: np.random.Generator, space: str = "fusion",
                 query_index: int = 0) -> RankedList:
    """Score one sketch query against every gallery item and sort.

    The query is encoded once and one generated image feature is shared
    across the whole gallery. Sorting is ascending by the selected space's
    distance with ties broken by gallery index.
    """
    if space not in SPACES:
        raise ValidationError(f"unknown retrieval space {space!r}, expected one of {SPACES}")
    side = gallery if isinstance(gallery, GallerySide) else prepare_gallery(model, gallery)
    query = np.asarray(query, dtype=np.float32).reshape(-1)
    if query.shape[0] != model.dims.sketch_dim:
        raise DimensionError(
            f"query dim {query.shape[0]} != model sketch dim {model.dims.sketch_dim}")

    q_st = _run(model.encode_sketch(_batch(query)))[0]
    generated = generate_image_feature(model, q_st, w.n_samples, rng)

    d_structure = _rows_cosine_distance(side.struct_enc, q_st)
    d_sketch = _rows_cosine_distance(side.sketch_dec, query)
    d_image = _rows_cosine_distance(side.values, generated)
    d_fused = fused_distance(d_image, d_sketch, d_structure, w)

    key = {"fusion": d_fused, "structure": d_structure,
           "sketch": d_sketch, "image": d_image}[space]
    order = np.argsort(key, kind="stable")
    return RankedList(query_index=query_index, order=order,
                      structure_dist=d_structure[order], sketch_dist=d_sketch[order],
                      image_dist=d_image[order], fused_dist=d_fused[order])


def rank_all(model: DisentangleModel, queries: FeatureSet, gallery: FeatureSet,
             w: FusionWeights, seed: int = 0, space: str = "fusion",
             threads: int = 1) -> list[RankedList]:
    """Rank the gallery for every query; result is independent of `threads`."""
    if queries.rows == 0:
        raise ValidationError("query set is empty")
    side = prepare_gallery(model, gallery)

    def one(i: int) -> RankedList:
        rng = np.random.default_rng([seed, i])
        return rank_gallery(model, queries.values[i], side, w, rng, space, query_index=i)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(queries.rows)))
    return [one(i) for i in range(queries.rows)]


# ---------------------------------------------------------------------------
# Ranking files
# ---------------------------------------------------------------------------

def write_rankings(ranked: list[RankedList], path, top_k: int | None = None) -> None:
    """One line per query: query index, then `index:fused_distance` pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in ranked:
            k = len(r.order) if top_k is None else min(top_k, len(r.order))
            cells = [str(r.query_index)]
            cells += [f"{int(g)}:{float(d)!r}" for g, d in zip(r.order[:k], r.fused_dist[:k])]
            fh.write("\t".join(cells) + "\n")


def read_rankings(path) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Parse a ranking file into (query index, gallery indices, distances)."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            try:
                qi = int(cells[0])
                pairs = [cell.split(":", 1) for cell in cells[1:]]
                idx = np.array([int(g) for g, _ in pairs], dtype=np.int64)
                dist = np.array([float(d) for _, d in pairs], dtype=np.float64)
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed ranking line: {exc}") from exc
            out.append((qi, idx, dist))
    return out
