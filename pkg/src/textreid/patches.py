"""Pixel part masks -> per-patch labels by majority vote.

Each non-overlapping P x P block takes the most frequent pixel label; ties
go to the smallest class id. Background votes like any other class.
"""

from __future__ import annotations

import numpy as np


class PatchLabelError(Exception):
    pass


def label_patches(parse_map: np.ndarray, patch_size: int,
                  num_classes: int | None = None) -> np.ndarray:
    parse_map = np.asarray(parse_map)
    if parse_map.ndim != 2:
        raise PatchLabelError(f"parse map must be 2-D, got shape {parse_map.shape}")
    if not np.issubdtype(parse_map.dtype, np.integer):
        raise PatchLabelError(f"parse map must be integer, got {parse_map.dtype}")
    h, w = parse_map.shape
    p = int(patch_size)
    if p <= 0 or h % p or w % p:
        raise PatchLabelError(f"image {h}x{w} not divisible by patch size {p}")
    if parse_map.min() < 0:
        raise PatchLabelError("negative class label")
    max_label = int(parse_map.max())
    if num_classes is not None and max_label >= num_classes:
        raise PatchLabelError(f"label {max_label} out of range for {num_classes} classes")

    n_rows, n_cols = h // p, w // p
    blocks = parse_map.reshape(n_rows, p, n_cols, p).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(n_rows * n_cols, p * p)
    n_bins = max_label + 1
    offsets = np.arange(blocks.shape[0])[:, None] * n_bins
    counts = np.bincount((blocks + offsets).ravel(),
                         minlength=blocks.shape[0] * n_bins)
    counts = counts.reshape(blocks.shape[0], n_bins)
    # argmax returns the first maximum, which is the smallest class id.
    return counts.argmax(axis=1).reshape(n_rows, n_cols).astype(np.int64)
