"""Fixed convolutional backbones producing a post-ReLU fully-connected feature.

The emitted feature is the activation of a fully-connected classifier layer
after its ReLU, so every value is non-negative, matching what the retrieval
engine assumes about its inputs. "fc7" (the penultimate FC layer) is the
default; "fc6" is the earlier one.
"""

from __future__ import annotations

import torch
import torchvision

# classifier index of the ReLU whose output is the emitted feature
_LAYER_CUTS = {
    "vgg16": {"fc6": 1, "fc7": 4},
    "alexnet": {"fc6": 2, "fc7": 5},
}

BACKBONES = tuple(_LAYER_CUTS)
LAYERS = ("fc7", "fc6")


class BackboneError(RuntimeError):
    """The requested backbone or weights cannot be provided."""


class FeatureBackbone(torch.nn.Module):
    """Backbone truncated after the chosen ReLU; eval-mode, gradient-free."""

    def __init__(self, name: str, layer: str, weights):
        super().__init__()
        if name not in _LAYER_CUTS:
            raise BackboneError(f"unknown backbone {name!r}, expected one of {BACKBONES}")
        if layer not in _LAYER_CUTS[name]:
            raise BackboneError(f"unknown layer {layer!r}, expected one of {LAYERS}")
        base = getattr(torchvision.models, name)(weights=weights)
        cut = _LAYER_CUTS[name][layer] + 1
        self.features = base.features
        self.avgpool = base.avgpool
        self.classifier = torch.nn.Sequential(*list(base.classifier.children())[:cut])
        self.feature_dim = _linear_width(self.classifier)
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        x = self.avgpool(x)
        x = torch.flatten(x, 1)
        return self.classifier(x)


def _linear_width(module: torch.nn.Sequential) -> int:
    for layer in reversed(list(module.children())):
        if isinstance(layer, torch.nn.Linear):
            return layer.out_features
    raise BackboneError("no fully-connected layer in the classifier slice")


def load_backbone(name: str = "vgg16", layer: str = "fc7",
                  weights: str = "pretrained", seed: int = 0) -> FeatureBackbone:
    """Build a backbone from pretrained, untrained (seeded), or file weights.

    `weights` is "pretrained" (torchvision download/cache), "untrained"
    (random init from `seed`; only useful for plumbing tests), or a path to
    a state-dict file, e.g. fine-tuned weights exported elsewhere.
    """
    if weights == "pretrained":
        try:
            enum = torchvision.models.get_model_weights(name).DEFAULT
            return FeatureBackbone(name, layer, enum)
        except Exception as exc:  # urllib errors vary; surface one message
            raise BackboneError(
                f"could not load pretrained {name} weights ({exc}); pass "
                f"--weights FILE with a local state dict instead") from exc
    if weights == "untrained":
        torch.manual_seed(seed)
        return FeatureBackbone(name, layer, None)
    model = FeatureBackbone(name, layer, None)
    try:
        state = torch.load(weights, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise BackboneError(f"could not read weights file {weights}: {exc}") from exc
    missing, unexpected = model.load_state_dict(_strip_prefix(state), strict=False)
    if missing:
        raise BackboneError(f"weights file {weights} is missing tensors: {missing[:3]}...")
    return model


def _strip_prefix(state: dict) -> dict:
    # tolerate checkpoints saved as {"state_dict": ...} or with "module." names
    if "state_dict" in state and isinstance(state["state_dict"], dict):
        state = state["state_dict"]
    return {k.removeprefix("module."): v for k, v in state.items()}
