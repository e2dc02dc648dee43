"""The five training loss terms and their toggleable sum.

Every function returns a scalar graph node so gradients flow through the
numerics kernel. Reductions over the batch default to the mean; `sum` is
available for experiments. Reconstruction losses use the plain (unsquared)
Euclidean norm per sample; a squared variant exists behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

from . import numerics as nm
from .errors import ContractError
from .numerics import Tensor

TERM_NAMES = ("classification", "orthogonality", "kl", "sketch_recon", "image_recon")


def _reduce(per_row: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return nm.mean_all(per_row)
    if reduction == "sum":
        return nm.sum_all(per_row)
    raise ContractError(f"unknown reduction {reduction!r}")


def classification_loss(f_im_st, f_sk_st, labels, classify: Callable[[Tensor], Tensor],
                        reduction: str = "mean") -> Tensor:
    """Cross-entropy on image and sketch structure features, summed.

    `classify` maps a structure-feature batch to logits; the same classifier
    must be used for both domains so the two structure spaces align.
    """
    ce_im = nm.softmax_cross_entropy(classify(nm.as_tensor(f_im_st)), labels)
    ce_sk = nm.softmax_cross_entropy(classify(nm.as_tensor(f_sk_st)), labels)
    return _reduce(nm.add(ce_im, ce_sk), reduction)


def orthogonality_loss(f_im_ap, f_im_st, reduction: str = "mean") -> Tensor:
    """Mean cosine between appearance and structure features.

    Both inputs come out of ReLU layers, so the cosine lies in [0, 1] and
    minimizing it pushes the two features towards orthogonality. Zero rows
    contribute cosine 0 via the epsilon guard.
    """
    return _reduce(nm.row_cosine(nm.as_tensor(f_im_ap), nm.as_tensor(f_im_st)), reduction)


def sketch_reconstruction_loss(f_sk, f_hat_sk, squared: bool = False,
                               reduction: str = "mean") -> Tensor:
    """Euclidean distance between real and generated sketch features."""
    return _reduce(nm.row_l2_distance(nm.as_tensor(f_sk), nm.as_tensor(f_hat_sk),
                                      squared=squared), reduction)


def kl_loss(mu, sigma, reduction: str = "mean") -> Tensor:
    """KL( N(mu, diag(sigma^2)) || N(0, I) ), closed form per sample."""
    return _reduce(nm.row_gaussian_kl(nm.as_tensor(mu), nm.as_tensor(sigma)), reduction)


def image_reconstruction_loss(f_im, f_hat_im, squared: bool = False,
                              reduction: str = "mean") -> Tensor:
    """Euclidean distance between real and generated image features."""
    return _reduce(nm.row_l2_distance(nm.as_tensor(f_im), nm.as_tensor(f_hat_im),
                                      squared=squared), reduction)


@dataclass(frozen=True)
class LossToggles:
    """Which terms participate in the objective (for ablation runs)."""

    classification: bool = True
    orthogonality: bool = True
    kl: bool = True
    sketch_recon: bool = True
    image_recon: bool = True

    def enabled(self) -> tuple[str, ...]:
        return tuple(f.name for f in fields(self) if getattr(self, f.name))


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights; the default 1.0 everywhere matches the objective."""

    classification: float = 1.0
    orthogonality: float = 1.0
    kl: float = 1.0
    sketch_recon: float = 1.0
    image_recon: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar value of every term plus their enabled, weighted sum.

    Disabled terms are reported as 0 and contribute nothing to `total`
    (they are absent from the graph, so their gradients are exactly zero).
    """

    classification: float
    orthogonality: float
    kl: float
    sketch_recon: float
    image_recon: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def total_loss(terms: dict[str, Tensor | None], toggles: LossToggles,
               weights: LossWeights = LossWeights()) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the enabled term nodes.

    `terms` maps term name to its scalar node (None allowed when disabled).
    Returns the summed graph node and a float breakdown.
    """
    unknown = set(terms) - set(TERM_NAMES)
    if unknown:
        raise ContractError(f"unknown loss terms: {sorted(unknown)}")
    node = None
    values = {}
    for name in TERM_NAMES:
        term = terms.get(name)
        if not getattr(toggles, name):
            values[name] = 0.0
            continue
        if term is None:
            raise ContractError(f"loss term {name!r} is enabled but was not computed")
        values[name] = float(term.data)
        weighted = term if getattr(weights, name) == 1.0 else nm.scale(term, getattr(weights, name))
        node = weighted if node is None else nm.add(node, weighted)
    if node is None:
        raise ContractError("no loss terms enabled")
    return node, LossBreakdown(total=float(node.data), **values)
