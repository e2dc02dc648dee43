"""Joint optimization of all model components over same-category pairs.

Per batch: encode the image and the sketch, estimate the appearance
Gaussian, draw one noise sample per row, decode in both directions, sum the
enabled loss terms, and take one Adam step. Training is single-threaded by
contract so that a fixed (seed, config, data) triple reproduces checkpoints
byte for byte.

SCK1 checkpoint layout (little-endian u32 integers, binary32 floats):

    magic "SCK1" | parameter count
    per parameter, sorted by name:
        name byte length | UTF-8 name | rank | one u32 per dim | values
    config block byte length | UTF-8 JSON (config + final losses)
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from . import numerics as nm
from .data import TrainPool, PairSampler
from .errors import FormatError, NumericalError, ValidationError
from .losses import (LossBreakdown, LossToggles, LossWeights, classification_loss,
                     image_reconstruction_loss, kl_loss, orthogonality_loss,
                     sketch_reconstruction_loss, total_loss)
from .model import DisentangleModel, ModelDims, reparameterize
from .numerics import Adam, Tensor

_MAGIC = b"SCK1"
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run, data aside."""

    image_dim: int
    sketch_dim: int
    n_categories: int
    structure_dim: int = 256
    appearance_dim: int = 256
    latent_dim: int = 64
    hidden_dim: int = 512
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    seed: int = 1
    use_classification: bool = True
    use_orthogonality: bool = True
    use_kl: bool = True
    use_sketch_recon: bool = True
    use_image_recon: bool = True
    w_classification: float = 1.0
    w_orthogonality: float = 1.0
    w_kl: float = 1.0
    w_sketch_recon: float = 1.0
    w_image_recon: float = 1.0
    squared_recon: bool = False
    reduction: str = "mean"

    def __post_init__(self):
        for field in ("image_dim", "sketch_dim", "n_categories", "structure_dim",
                      "appearance_dim", "latent_dim", "hidden_dim", "batch_size",
                      "epochs"):
            if getattr(self, field) < 1:
                raise ValidationError(f"TrainConfig.{field} must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValidationError(f"unknown reduction {self.reduction!r}")
        if not self.use_classification:
            warnings.warn("training without the classification loss; structure "
                          "spaces of the two domains will not be pulled together",
                          stacklevel=2)

    def model_dims(self) -> ModelDims:
        return ModelDims(image_dim=self.image_dim, sketch_dim=self.sketch_dim,
                         n_categories=self.n_categories, structure_dim=self.structure_dim,
                         appearance_dim=self.appearance_dim, latent_dim=self.latent_dim,
                         hidden_dim=self.hidden_dim)

    def toggles(self) -> LossToggles:
        return LossToggles(classification=self.use_classification,
                           orthogonality=self.use_orthogonality, kl=self.use_kl,
                           sketch_recon=self.use_sketch_recon,
                           image_recon=self.use_image_recon)

    def weights(self) -> LossWeights:
        return LossWeights(classification=self.w_classification,
                           orthogonality=self.w_orthogonality, kl=self.w_kl,
                           sketch_recon=self.w_sketch_recon,
                           image_recon=self.w_image_recon)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValidationError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def coerce(cls, name: str, text: str):
        """Parse a config value from its key=value text form."""
        for f in fields(cls):
            if f.name != name:
                continue
            kind = f.type if isinstance(f.type, type) else {"int": int, "float": float,
                                                            "bool": bool, "str": str}[f.type]
            if kind is bool:
                low = text.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValidationError(f"cannot parse boolean {name}={text!r}")
            return kind(text)
        raise ValidationError(f"unknown TrainConfig key {name!r}")


def compute_batch_losses(model: DisentangleModel, images: np.ndarray,
                         sketches: np.ndarray, labels: np.ndarray, eps: np.ndarray,
                         toggles: LossToggles = LossToggles(),
                         weights: LossWeights = LossWeights(),
                         squared_recon: bool = False,
                         reduction: str = "mean") -> tuple[Tensor, LossBreakdown]:
    """Forward pass over one batch; returns the total-loss node and values.

    `eps` is the per-row noise for the reparameterization; passing it
    explicitly keeps the graph deterministic for gradient checks. Only the
    subgraphs of enabled terms are built, so disabled terms contribute
    exactly zero gradient.
    """
    x_im = nm.as_tensor(images)
    x_sk = nm.as_tensor(sketches)
    st_im, ap_im = model.encode_image(x_im)
    st_sk = model.encode_sketch(x_sk)
    terms: dict[str, Tensor] = {}
    if toggles.classification:
        terms["classification"] = classification_loss(
            st_im, st_sk, labels, model.classify_structure, reduction)
    if toggles.orthogonality:
        terms["orthogonality"] = orthogonality_loss(ap_im, st_im, reduction)
    if toggles.kl or toggles.image_recon:
        mu, sigma = model.estimate_appearance(ap_im)
        if toggles.kl:
            terms["kl"] = kl_loss(mu, sigma, reduction)
        if toggles.image_recon:
            z = reparameterize(mu, sigma, eps)
            f_hat_im = model.decode_image(z, st_sk)
            terms["image_recon"] = image_reconstruction_loss(
                x_im, f_hat_im, squared_recon, reduction)
    if toggles.sketch_recon:
        f_hat_sk = model.decode_sketch(st_im)
        terms["sketch_recon"] = sketch_reconstruction_loss(
            x_sk, f_hat_sk, squared_recon, reduction)
    return total_loss(terms, toggles, weights)


@dataclass
class Checkpoint:
    """Trained parameters plus the config and final per-term loss means."""

    params: dict[str, np.ndarray]
    config: TrainConfig
    final_losses: dict[str, float]

    def build_model(self) -> DisentangleModel:
        return DisentangleModel.from_params(self.config.model_dims(), self.params)


def initial_model(config: TrainConfig) -> DisentangleModel:
    """The model exactly as `train` initializes it for this config."""
    init_ss = np.random.SeedSequence(config.seed).spawn(3)[0]
    return DisentangleModel(config.model_dims(), seed=np.random.default_rng(init_ss))


def train(config: TrainConfig, pool: TrainPool,
          on_epoch: Callable[[int, LossBreakdown], None] | None = None) -> Checkpoint:
    """Run the full optimization; deterministic for a fixed (config, pool)."""
    if pool.images.dim != config.image_dim:
        raise ValidationError(
            f"pool image dim {pool.images.dim} != config image_dim {config.image_dim}")
    if pool.sketches.dim != config.sketch_dim:
        raise ValidationError(
            f"pool sketch dim {pool.sketches.dim} != config sketch_dim {config.sketch_dim}")
    if pool.n_categories != config.n_categories:
        raise ValidationError(
            f"pool has {pool.n_categories} categories, config expects {config.n_categories}")

    _, sampler_ss, eps_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = initial_model(config)
    optimizer = Adam(model.params, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.adam_eps)
    sampler = PairSampler(pool, config.batch_size, np.random.default_rng(sampler_ss))
    eps_rng = np.random.default_rng(eps_ss)
    toggles = config.toggles()
    weights = config.weights()

    epoch_means: dict[str, float] = {}
    for epoch in range(config.epochs):
        sums: dict[str, float] = {}
        batches = 0
        for batch_idx, (imgs, sks, labels) in enumerate(sampler.epoch()):
            eps = eps_rng.standard_normal((len(labels), config.latent_dim),
                                          dtype=np.float32)
            try:
                node, breakdown = compute_batch_losses(
                    model, imgs, sks, labels, eps, toggles, weights,
                    config.squared_recon, config.reduction)
            except NumericalError as exc:
                raise NumericalError(
                    f"{exc} at epoch {epoch} batch {batch_idx}") from exc
            for name, value in breakdown.as_dict().items():
                if not np.isfinite(value):
                    raise NumericalError(
                        f"loss term {name!r} is {value} at epoch {epoch} batch {batch_idx}")
                sums[name] = sums.get(name, 0.0) + value
            grads = nm.gradients(node, model.params)
            optimizer.step(grads)
            batches += 1
        epoch_means = {name: total / batches for name, total in sums.items()}
        if on_epoch is not None:
            on_epoch(epoch, LossBreakdown(**epoch_means))

    return Checkpoint(params={k: p.data.copy() for k, p in model.params.items()},
                      config=config, final_losses=epoch_means)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_U32.pack(len(ckpt.params)))
        for name in sorted(ckpt.params):
            arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(_U32.pack(len(raw)))
            fh.write(raw)
            fh.write(_U32.pack(arr.ndim))
            for d in arr.shape:
                fh.write(_U32.pack(d))
            fh.write(arr.tobytes())
        blob = json.dumps({"config": ckpt.config.to_dict(),
                           "final_losses": ckpt.final_losses},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
        fh.write(_U32.pack(len(blob)))
        fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what} at offset {pos}")
        out = blob[pos:pos + n]
        pos += n
        return out

    def u32(what: str) -> int:
        return _U32.unpack(take(4, what))[0]

    magic = take(4, "magic")
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {_MAGIC!r}")
    count = u32("parameter count")
    params: dict[str, np.ndarray] = {}
    for i in range(count):
        name = take(u32(f"name length {i}"), f"name {i}").decode("utf-8")
        rank = u32(f"rank of {name}")
        if rank > 8:
            raise FormatError(f"{path}: implausible rank {rank} for {name!r}")
        shape = tuple(u32(f"dim of {name}") for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(take(4 * size, f"values of {name}"), dtype="<f4")
        params[name] = arr.reshape(shape).copy()
    meta_raw = take(u32("config block length"), "config block")
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes at offset {pos}")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
        config = TrainConfig.from_dict(meta["config"])
        final_losses = {str(k): float(v) for k, v in meta["final_losses"].items()}
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed config block: {exc}") from exc
    ckpt = Checkpoint(params=params, config=config, final_losses=final_losses)
    try:
        ckpt.build_model()
    except ValidationError as exc:
        raise FormatError(f"{path}: parameters do not match embedded config: {exc}") from exc
    return ckpt
