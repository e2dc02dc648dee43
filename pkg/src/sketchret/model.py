"""Learnable components: asymmetric encoders, two decoders, a variational
appearance estimator, and the shared structure classifier.

Images are split into a structure feature and an appearance feature; sketches
are projected to the structure space only. Every encoder/decoder is a
two-layer dense network with ReLU on the hidden layer and on the output, so
structure and appearance features are always non-negative. The variational
estimator alone has a linear output: it emits a (mean, log-variance) pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ContractError, DimensionError, NumericalError
from .numerics import Tensor


@dataclass(frozen=True)
class ModelDims:
    """Layer widths; `n_categories` is the number of training categories."""

    image_dim: int
    sketch_dim: int
    n_categories: int
    structure_dim: int = 256
    appearance_dim: int = 256
    latent_dim: int = 64
    hidden_dim: int = 512

    def __post_init__(self):
        for field in ("image_dim", "sketch_dim", "n_categories", "structure_dim",
                      "appearance_dim", "latent_dim", "hidden_dim"):
            if getattr(self, field) < 1:
                raise ContractError(f"ModelDims.{field} must be positive")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class DisentangleModel:
    """All parameters of the disentanglement networks, keyed by stable names.

    Mutable only while a single owner trains it; once training finishes the
    parameter arrays are never written again and the model can be shared for
    read-only inference.
    """

    def __init__(self, dims: ModelDims, seed: int | np.random.Generator = 0,
                 dtype=np.float32):
        self.dims = dims
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        d = dims
        self.params: dict[str, Tensor] = {}
        for name, d_in, d_out in self._block_layout(d):
            w = _glorot(rng, d_in, d_out).astype(self.dtype)
            b = np.zeros(d_out, dtype=self.dtype)
            self.params[name + ".w"] = nm.parameter(w, name + ".w")
            self.params[name + ".b"] = nm.parameter(b, name + ".b")

    @staticmethod
    def _block_layout(d: ModelDims) -> list[tuple[str, int, int]]:
        # (layer name, fan_in, fan_out); order fixes the init draw sequence.
        return [
            ("img_struct_enc.l1", d.image_dim, d.hidden_dim),
            ("img_struct_enc.l2", d.hidden_dim, d.structure_dim),
            ("img_appear_enc.l1", d.image_dim, d.hidden_dim),
            ("img_appear_enc.l2", d.hidden_dim, d.appearance_dim),
            ("sk_struct_enc.l1", d.sketch_dim, d.hidden_dim),
            ("sk_struct_enc.l2", d.hidden_dim, d.structure_dim),
            ("appear_var.l1", d.appearance_dim, d.hidden_dim),
            ("appear_var.l2", d.hidden_dim, 2 * d.latent_dim),
            ("sketch_dec.l1", d.structure_dim, d.hidden_dim),
            ("sketch_dec.l2", d.hidden_dim, d.sketch_dim),
            ("image_dec.l1", d.latent_dim + d.structure_dim, d.hidden_dim),
            ("image_dec.l2", d.hidden_dim, d.image_dim),
            ("classifier.l", d.structure_dim, d.n_categories),
        ]

    @classmethod
    def from_params(cls, dims: ModelDims, arrays: dict[str, np.ndarray],
                    dtype=np.float32) -> "DisentangleModel":
        """Rebuild a model from named arrays, validating names and shapes."""
        model = cls.__new__(cls)
        model.dims = dims
        model.dtype = np.dtype(dtype)
        model.params = {}
        expected: dict[str, tuple[int, ...]] = {}
        for name, d_in, d_out in cls._block_layout(dims):
            expected[name + ".w"] = (d_in, d_out)
            expected[name + ".b"] = (d_out,)
        if set(arrays) != set(expected):
            raise ContractError(
                f"parameter names do not match model layout: "
                f"missing {sorted(set(expected) - set(arrays))}, "
                f"unexpected {sorted(set(arrays) - set(expected))}"
            )
        for name, shape in expected.items():
            arr = np.asarray(arrays[name], dtype=model.dtype)
            if arr.shape != shape:
                raise DimensionError(
                    f"parameter {name!r} has shape {arr.shape}, expected {shape}"
                )
            model.params[name] = nm.parameter(arr.copy(), name)
        return model

    def to_double(self) -> "DisentangleModel":
        """Same parameters cast to float64, for gradient checking."""
        arrays = {k: p.data.astype(np.float64) for k, p in self.params.items()}
        return DisentangleModel.from_params(self.dims, arrays, dtype=np.float64)

    # -- forward passes ----------------------------------------------------

    def _two_layer(self, block: str, x: Tensor, out_relu: bool = True) -> Tensor:
        p = self.params
        h = nm.relu(nm.dense(x, p[f"{block}.l1.w"], p[f"{block}.l1.b"]))
        y = nm.dense(h, p[f"{block}.l2.w"], p[f"{block}.l2.b"])
        return nm.relu(y) if out_relu else y

    def encode_image(self, f_im) -> tuple[Tensor, Tensor]:
        """Image feature batch -> (structure feature, appearance feature)."""
        x = nm.as_tensor(f_im)
        return self._two_layer("img_struct_enc", x), self._two_layer("img_appear_enc", x)

    def encode_sketch(self, f_sk) -> Tensor:
        """Sketch feature batch -> structure feature (same space as images)."""
        return self._two_layer("sk_struct_enc", nm.as_tensor(f_sk))

    def estimate_appearance(self, f_im_ap) -> tuple[Tensor, Tensor]:
        """Appearance feature batch -> (mu, sigma) of the variational Gaussian.

        The network emits log-variance; sigma = exp(log_var / 2) is therefore
        strictly positive for any finite input.
        """
        out = self._two_layer("appear_var", nm.as_tensor(f_im_ap), out_relu=False)
        d_z = self.dims.latent_dim
        mu = nm.slice_cols(out, 0, d_z)
        log_var = nm.slice_cols(out, d_z, 2 * d_z)
        sigma = nm.exp(nm.scale(log_var, 0.5))
        bad = (not np.isfinite(mu.data).all() or not np.isfinite(sigma.data).all()
               or (sigma.data == 0).any())  # exp underflow breaks the sigma > 0 contract
        if bad:
            raise NumericalError(
                "variational estimator produced non-finite or degenerate output "
                f"(max |log_var| = {np.abs(log_var.data).max():.3e})"
            )
        return mu, sigma

    def decode_sketch(self, f_im_st) -> Tensor:
        """Structure feature batch -> generated sketch feature."""
        return self._two_layer("sketch_dec", nm.as_tensor(f_im_st))

    def decode_image(self, z, f_sk_st) -> Tensor:
        """(sampled appearance, sketch structure) -> generated image feature.

        The decoder input is z concatenated with the structure feature, in
        that order.
        """
        joint = nm.concat_cols(nm.as_tensor(z), nm.as_tensor(f_sk_st))
        return self._two_layer("image_dec", joint)

    def classify_structure(self, f_st) -> Tensor:
        """Structure feature batch -> logits over the training categories.

        The same classifier weights serve image and sketch structure features.
        """
        return nm.dense(nm.as_tensor(f_st), self.params["classifier.l.w"],
                        self.params["classifier.l.b"])


def reparameterize(mu: Tensor, sigma: Tensor, eps) -> Tensor:
    """z = mu + eps * sigma; differentiable in mu and sigma, eps held fixed."""
    return nm.add(mu, nm.mul(sigma, nm.as_tensor(eps)))
