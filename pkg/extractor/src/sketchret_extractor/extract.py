"""Batched feature extraction from a corpus directory to an SFV1 file.

Preprocessing is deterministic (resize, center crop, fixed normalization,
no augmentation) and the backbone runs in eval mode, so extracting the same
corpus twice yields byte-identical output. Row order follows the manifest
(categories sorted by name, files sorted within each category) regardless
of batch size.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision import transforms

from .backbone import FeatureBackbone
from .corpus import CorpusError, CorpusManifest
from .sfv import write_sfv

log = logging.getLogger("sketchret_extractor")

INPUT_SIZE = 224

_PREPROCESS = transforms.Compose([
    transforms.Resize(256, interpolation=transforms.InterpolationMode.BILINEAR),
    transforms.CenterCrop(INPUT_SIZE),
    transforms.ToTensor(),
    transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
])


def load_image(path) -> torch.Tensor | None:
    """Decode and preprocess one file; None (with a warning) if unreadable."""
    try:
        with Image.open(path) as img:
            return _PREPROCESS(img.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        log.warning("skipping unreadable file %s: %s", path, exc)
        return None


def extract(manifest: CorpusManifest, backbone: FeatureBackbone, out_path,
            batch_size: int = 16) -> tuple[int, int]:
    """Run the corpus through the backbone and write SFV1.

    Returns (rows written, files skipped). Unreadable files are skipped with
    a warning; a category whose files are all unreadable is an error.
    """
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    rows: list[np.ndarray] = []
    labels: list[int] = []
    skipped = 0
    pending: list[torch.Tensor] = []
    pending_labels: list[int] = []

    def flush():
        if not pending:
            return
        batch = torch.stack(pending)
        with torch.no_grad():
            feats = backbone(batch)
        rows.extend(feats.cpu().numpy().astype(np.float32, copy=False))
        labels.extend(pending_labels)
        pending.clear()
        pending_labels.clear()

    for path, label in manifest.files:
        tensor = load_image(path)
        if tensor is None:
            skipped += 1
            continue
        pending.append(tensor)
        pending_labels.append(label)
        if len(pending) == batch_size:
            flush()
    flush()

    present = set(labels)
    empty = [manifest.categories[c] for c in range(len(manifest.categories))
             if c not in present]
    if empty:
        raise CorpusError(f"no readable files left in categories: {empty}")

    values = np.stack(rows).astype(np.float32, copy=False)
    write_sfv(values, np.asarray(labels, dtype=np.uint32),
              list(manifest.categories), out_path)
    log.info("wrote %d rows of dim %d to %s (%d skipped)",
             values.shape[0], values.shape[1], out_path, skipped)
    return values.shape[0], skipped
