"""Feature-set IO, zero-shot splits, pair sampling, and a synthetic corpus.

SFV1 binary layout (all integers little-endian u32, floats little-endian
IEEE-754 binary32):

    magic "SFV1" | dim | rows | reserved=0
    rows*dim floats, row-major
    rows label indices
    category count | per category: byte length + UTF-8 name

The float payload is copied verbatim in both directions, so a write/read
round trip is bit-exact.

Split files are UTF-8 text: "#" starts a comment, "[seen]" and "[unseen]"
open sections, one category name per line.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ValidationError

_MAGIC = b"SFV1"
_U32 = struct.Struct("<I")


@dataclass
class FeatureSet:
    """A matrix of embedding rows with per-row category labels.

    `names[labels[i]]` is the category of row i. Immutable after load by
    convention; readers may share one instance freely.
    """

    values: np.ndarray  # (rows, dim) float32
    labels: np.ndarray  # (rows,) uint32
    names: list[str]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
        if self.values.ndim != 2:
            raise ValidationError(f"feature values must be 2-D, got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ValidationError("feature dim must be at least 1")
        if self.labels.shape != (self.values.shape[0],):
            raise ValidationError(
                f"label count {self.labels.shape} does not match {self.values.shape[0]} rows"
            )
        if self.labels.size and self.labels.max() >= len(self.names):
            raise ValidationError(
                f"label {self.labels.max()} out of range for {len(self.names)} categories"
            )

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def rows(self) -> int:
        return self.values.shape[0]


def write_features(fs: FeatureSet, path) -> None:
    """Serialize to SFV1. Values must be finite; bytes round-trip exactly."""
    if not np.isfinite(fs.values).all():
        raise ValidationError("refusing to write non-finite feature values")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_U32.pack(fs.dim))
        fh.write(_U32.pack(fs.rows))
        fh.write(_U32.pack(0))
        fh.write(fs.values.astype("<f4", copy=False).tobytes())
        fh.write(fs.labels.astype("<u4", copy=False).tobytes())
        fh.write(_U32.pack(len(fs.names)))
        for name in fs.names:
            raw = name.encode("utf-8")
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)


class _Reader:
    """Byte cursor that reports the failing offset on truncation."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated while reading {what} at offset {self.pos} "
                f"(needed {n} bytes, {len(self.blob) - self.pos} left)"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def read_features(path) -> FeatureSet:
    """Parse an SFV1 file, validating structure and reporting offsets."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    magic = r.take(4, "magic")
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {_MAGIC!r}")
    dim = r.u32("dim")
    rows = r.u32("row count")
    reserved = r.u32("reserved field")
    if dim < 1:
        raise FormatError(f"{path}: dim {dim} invalid at offset 4")
    if reserved != 0:
        raise FormatError(f"{path}: reserved field {reserved} non-zero at offset 12")
    values = np.frombuffer(r.take(4 * dim * rows, "feature values"), dtype="<f4")
    values = values.reshape(rows, dim)
    labels = np.frombuffer(r.take(4 * rows, "labels"), dtype="<u4")
    count_offset = r.pos
    count = r.u32("category count")
    names = []
    for i in range(count):
        n = r.u32(f"name length {i}")
        raw = r.take(n, f"name {i}")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: name {i} is not UTF-8 at offset {r.pos - n}") from exc
    if r.pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - r.pos} trailing bytes at offset {r.pos}")
    if labels.size and labels.max() >= count:
        raise FormatError(
            f"{path}: label {labels.max()} exceeds category count {count} "
            f"(manifest at offset {count_offset})"
        )
    return FeatureSet(values=values.copy(), labels=labels.copy(), names=names)


# ---------------------------------------------------------------------------
# Zero-shot splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Disjoint seen/unseen category partition, by name."""

    seen: tuple[str, ...]
    unseen: tuple[str, ...]

    def __post_init__(self):
        if not self.seen or not self.unseen:
            raise ValidationError("both seen and unseen category sets must be non-empty")
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise ValidationError(f"categories in both seen and unseen: {sorted(overlap)}")


def write_split(split: SplitSpec, path) -> None:
    for name in (*split.seen, *split.unseen):
        if "#" in name or "\n" in name or name != name.strip():
            raise ValidationError(f"category name unsupported in split files: {name!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[seen]\n")
        for name in split.seen:
            fh.write(name + "\n")
        fh.write("[unseen]\n")
        for name in split.unseen:
            fh.write(name + "\n")


def read_split(path) -> SplitSpec:
    sections: dict[str, list[str]] = {"seen": [], "unseen": []}
    current: list[str] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                key = line.strip("[]").strip().lower()
                if key not in sections:
                    raise FormatError(f"{path}:{lineno}: unknown section {line!r}")
                current = sections[key]
                continue
            if current is None:
                raise FormatError(f"{path}:{lineno}: category name before any section header")
            if line not in current:
                current.append(line)
    return SplitSpec(seen=tuple(sections["seen"]), unseen=tuple(sections["unseen"]))


@dataclass
class TrainPool:
    """Seen-category rows of both domains, labels remapped to [0, n_seen).

    Categories are indexed by sorted seen-category name, identically for
    images and sketches, so a shared classifier sees consistent labels.
    """

    images: FeatureSet
    sketches: FeatureSet

    @property
    def n_categories(self) -> int:
        return len(self.images.names)


def _remap(fs: FeatureSet, wanted: list[str]) -> FeatureSet:
    """Rows of `fs` whose category is in `wanted`, relabeled by wanted order."""
    old_to_new = {}
    for new_idx, name in enumerate(wanted):
        try:
            old_to_new[fs.names.index(name)] = new_idx
        except ValueError:
            raise DataError(f"split references unknown category {name!r}") from None
    mask = np.isin(fs.labels, list(old_to_new))
    lut = np.zeros(len(fs.names), dtype=np.uint32)
    for old, new in old_to_new.items():
        lut[old] = new
    return FeatureSet(values=fs.values[mask], labels=lut[fs.labels[mask]], names=list(wanted))


def apply_split(images: FeatureSet, sketches: FeatureSet,
                split: SplitSpec) -> tuple[TrainPool, FeatureSet, FeatureSet]:
    """Partition both domains: (train pool, unseen sketch queries, unseen image gallery)."""
    seen = sorted(split.seen)
    unseen = sorted(split.unseen)
    pool = TrainPool(images=_remap(images, seen), sketches=_remap(sketches, seen))
    queries = _remap(sketches, unseen)
    gallery = _remap(images, unseen)
    for label, fs in (("train images", pool.images), ("train sketches", pool.sketches),
                      ("test queries", queries), ("test gallery", gallery)):
        if fs.rows == 0:
            raise DataError(f"split leaves no rows for {label}")
    return pool, queries, gallery


# ---------------------------------------------------------------------------
# Pair sampling
# ---------------------------------------------------------------------------

class PairSampler:
    """Same-category (image, sketch, label) batches for training.

    Each epoch shuffles all sketches once and pairs every sketch with a
    uniformly drawn image of the same category, so every sketch is visited
    exactly once per epoch. Single-owner stateful iterator; the sequence is
    fully determined by the generator passed in.
    """

    def __init__(self, pool: TrainPool, batch_size: int, rng: np.random.Generator):
        if batch_size < 1:
            raise ValidationError("batch size must be positive")
        self.pool = pool
        self.batch_size = batch_size
        self.rng = rng
        sk_cats = set(np.unique(pool.sketches.labels).tolist())
        im_cats = set(np.unique(pool.images.labels).tolist())
        missing = []
        for c in range(pool.n_categories):
            if c not in sk_cats or c not in im_cats:
                missing.append(pool.images.names[c])
        if missing:
            raise DataError(
                f"seen categories missing from one domain: {sorted(missing)}"
            )
        self._images_by_cat = [
            np.flatnonzero(pool.images.labels == c) for c in range(pool.n_categories)
        ]

    def epoch(self):
        """Yield (image batch, sketch batch, labels) covering every sketch once."""
        sketches = self.pool.sketches
        images = self.pool.images
        order = self.rng.permutation(sketches.rows)
        for start in range(0, sketches.rows, self.batch_size):
            idx = order[start:start + self.batch_size]
            labels = sketches.labels[idx]
            img_idx = np.array([
                self._images_by_cat[c][self.rng.integers(len(self._images_by_cat[c]))]
                for c in labels
            ])
            yield images.values[img_idx], sketches.values[idx], labels.astype(np.int64)


# ---------------------------------------------------------------------------
# Synthetic corpus with known structure/appearance factors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings; every sample count applies per category per domain."""

    seen_categories: int
    unseen_categories: int
    samples_per_category: int
    structure_dim: int = 8
    appearance_dim: int = 8
    image_dim: int = 64
    sketch_dim: int = 64
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for field in ("seen_categories", "unseen_categories", "samples_per_category",
                      "structure_dim", "appearance_dim", "image_dim", "sketch_dim"):
            if getattr(self, field) < 1:
                raise ValidationError(f"SyntheticSpec.{field} must be positive")
        if self.noise < 0:
            raise ValidationError("noise scale must be non-negative")


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureSet, FeatureSet, SplitSpec]:
    """Corpus where images mix structure and appearance but sketches carry
    structure only.

    Every category has one structure latent; each image sample draws its own
    appearance latent and structure noise, each sketch sample only structure
    noise, and both domains are projected through fixed random matrices and
    a ReLU. Per-category generator streams keep existing rows stable when
    `samples_per_category` grows, which gives held-out samples of the same
    categories for free.
    """
    n_cats = spec.seen_categories + spec.unseen_categories
    root = np.random.SeedSequence(spec.seed)
    mat_ss, *cat_ss = root.spawn(1 + n_cats)
    rng = np.random.default_rng(mat_ss)
    d_in = spec.structure_dim + spec.appearance_dim
    img_proj = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(spec.image_dim, d_in))
    sk_proj = rng.normal(0.0, 1.0 / np.sqrt(spec.structure_dim),
                         size=(spec.sketch_dim, spec.structure_dim))

    n = spec.samples_per_category
    img_values = np.zeros((n_cats * n, spec.image_dim), dtype=np.float32)
    sk_values = np.zeros((n_cats * n, spec.sketch_dim), dtype=np.float32)
    labels = np.repeat(np.arange(n_cats, dtype=np.uint32), n)
    for c in range(n_cats):
        crng = np.random.default_rng(cat_ss[c])
        s_c = crng.normal(size=spec.structure_dim)
        for i in range(n):
            row = c * n + i
            appearance = crng.normal(size=spec.appearance_dim)
            img_noise = spec.noise * crng.normal(size=spec.structure_dim)
            sk_noise = spec.noise * crng.normal(size=spec.structure_dim)
            img_latent = np.concatenate([s_c + img_noise, appearance])
            img_values[row] = np.maximum(img_proj @ img_latent, 0.0)
            sk_values[row] = np.maximum(sk_proj @ (s_c + sk_noise), 0.0)

    names = [f"cat{c:03d}" for c in range(n_cats)]
    split = SplitSpec(seen=tuple(names[:spec.seen_categories]),
                      unseen=tuple(names[spec.seen_categories:]))
    images = FeatureSet(values=img_values, labels=labels, names=names)
    sketches = FeatureSet(values=sk_values, labels=labels.copy(), names=names)
    return images, sketches, split
