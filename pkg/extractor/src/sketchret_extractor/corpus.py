"""Corpus discovery: one subdirectory per category, raster files inside."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

SUPPORTED_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff"}


class CorpusError(ValueError):
    """The corpus directory layout is unusable."""


@dataclass(frozen=True)
class CorpusManifest:
    """Category names (sorted) and their image files, in emission order.

    Category indices are a pure function of the sorted category names, so
    separately extracted corpora of the same categories line up.
    """

    root: Path
    domain: str  # "image" or "sketch"; bookkeeping only
    categories: tuple[str, ...]
    files: tuple[tuple[Path, int], ...]  # (path, label) in output row order


def scan_corpus(root, domain: str) -> CorpusManifest:
    root = Path(root)
    if domain not in ("image", "sketch"):
        raise CorpusError(f"domain must be 'image' or 'sketch', got {domain!r}")
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    category_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not category_dirs:
        raise CorpusError(f"no category subdirectories under {root}")
    categories = []
    files: list[tuple[Path, int]] = []
    for label, cdir in enumerate(category_dirs):
        members = sorted(p for p in cdir.iterdir()
                         if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES)
        if not members:
            raise CorpusError(f"category directory {cdir} has no supported raster files")
        categories.append(cdir.name)
        files.extend((p, label) for p in members)
    return CorpusManifest(root=root, domain=domain, categories=tuple(categories),
                          files=tuple(files))
