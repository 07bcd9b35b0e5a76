"""Bidirectional token masking and the training-only cross-modal encoder.

Text masking happens at the token-id level (content positions swap to the
MASK id and get re-encoded); image masking happens at the embedding level
(non-CLS encoder outputs swap to one shared learnable embedding). Each
direction runs its own pass through shared transformer blocks: images with
masked text for word prediction, text with masked images for patch-label
prediction. At least one position is always masked so the masked-token
averages are defined. The whole module is dropped at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import LayerNorm, Linear, TransformerStack


class FusionError(Exception):
    pass


MIM_OUTPUTS = ("semantic", "pixel", "patch", "feature")


@dataclass
class TextMask:
    """Masked text positions with their original word ids, batch-flat."""

    sample_idx: np.ndarray
    positions: np.ndarray
    true_ids: np.ndarray
    rate: float


@dataclass
class ImageMask:
    """Masked image token positions (CLS excluded) with patch class labels."""

    sample_idx: np.ndarray
    positions: np.ndarray      # index into the (CLS + patches) sequence, >= 1
    true_classes: np.ndarray
    rate: float


@dataclass
class MaskPlan:
    text: TextMask | None = None
    image: ImageMask | None = None


def _draw_mask(maskable: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(rate) over maskable slots, with one forced pick
    per row whose draw came up empty."""
    if not 0.0 <= rate <= 1.0:
        raise FusionError(f"mask rate {rate} outside [0, 1]")
    if not maskable.any(axis=1).all():
        raise FusionError("a sequence has no maskable positions")
    drawn = (rng.random(maskable.shape) < rate) & maskable
    for row in np.flatnonzero(~drawn.any(axis=1)):
        candidates = np.flatnonzero(maskable[row])
        drawn[row, candidates[rng.integers(len(candidates))]] = True
    return drawn


def mask_text(token_ids: np.ndarray, rate: float, rng: np.random.Generator,
              pad_id: int, sos_id: int, eos_id: int, mask_id: int) -> tuple:
    """Returns (masked_ids, TextMask); SOS/EOS/PAD are never masked."""
    ids = np.asarray(token_ids, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    maskable = ~np.isin(ids, (pad_id, sos_id, eos_id))
    drawn = _draw_mask(maskable, rate, rng)
    sample_idx, positions = np.nonzero(drawn)
    true_ids = ids[sample_idx, positions].copy()
    masked = ids.copy()
    masked[drawn] = mask_id
    if squeeze:
        masked = masked[0]
    return masked, TextMask(sample_idx=sample_idx, positions=positions,
                            true_ids=true_ids, rate=rate)


def restore_text(masked_ids: np.ndarray, plan: TextMask) -> np.ndarray:
    """Write the stored true ids back; inverse of mask_text."""
    ids = np.asarray(masked_ids, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :].copy()
    else:
        ids = ids.copy()
    ids[plan.sample_idx, plan.positions] = plan.true_ids
    return ids[0] if squeeze else ids


def mask_image(img_tokens: Tensor, rate: float, rng: np.random.Generator,
               mask_embedding: Tensor, patch_labels: np.ndarray) -> tuple:
    """Replace non-CLS tokens by the shared mask embedding with prob `rate`.

    patch_labels is (B, num_patches) of class ids aligned with token
    positions 1..num_patches; returns (masked_tokens, ImageMask).
    """
    b, t, d = img_tokens.shape
    labels = np.asarray(patch_labels)
    if labels.shape != (b, t - 1):
        raise FusionError(f"patch labels {labels.shape} do not match {b} x {t - 1} tokens")
    maskable = np.ones((b, t), dtype=bool)
    maskable[:, 0] = False  # CLS stays
    drawn = _draw_mask(maskable, rate, rng)
    sample_idx, positions = np.nonzero(drawn)
    true_classes = labels[sample_idx, positions - 1].copy()

    keep = (~drawn).astype(np.float64)[:, :, None]
    memb = ad.broadcast_to(ad.reshape(mask_embedding, (1, 1, d)), (b, t, d))
    masked = ad.add(ad.mul_const(img_tokens, keep), ad.mul_const(memb, 1.0 - keep))
    return masked, ImageMask(sample_idx=sample_idx, positions=positions,
                             true_classes=true_classes, rate=rate)


class PredictionHead:
    """Two-layer MLP: hidden -> hidden with GELU and layer norm, then logits."""

    def __init__(self, rng, dim, out_dim, std=0.02):
        self.fc1 = Linear(rng, dim, dim, std)
        self.ln = LayerNorm(dim)
        self.fc2 = Linear(rng, dim, out_dim, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.ln(ad.gelu(self.fc1(x))))

    def params(self, prefix):
        out = {}
        out.update(self.fc1.params(f"{prefix}.fc1"))
        out.update(self.ln.params(f"{prefix}.ln"))
        out.update(self.fc2.params(f"{prefix}.fc2"))
        return out


@dataclass
class CmeConfig:
    hidden_dim: int
    vocab_size: int
    num_classes: int
    patch_size: int
    num_layers: int = 4
    num_heads: int = 4
    mlp_ratio: int = 4
    max_seq_len: int = 256
    mim_output: str = "semantic"
    init_std: float = 0.02

    def __post_init__(self):
        if self.mim_output not in MIM_OUTPUTS:
            raise FusionError(f"mim_output must be one of {MIM_OUTPUTS}, "
                              f"got {self.mim_output!r}")
        if self.hidden_dim % self.num_heads:
            raise FusionError(f"hidden_dim {self.hidden_dim} not divisible by "
                              f"{self.num_heads} heads")

    @property
    def mim_out_dim(self) -> int:
        if self.mim_output == "semantic":
            return self.num_classes
        if self.mim_output == "pixel":
            return 3 * self.patch_size * self.patch_size
        if self.mim_output == "patch":
            return 1
        return self.hidden_dim  # feature


class CrossModalEncoder:
    """Shared transformer over a concatenated two-modality sequence, with
    word and patch-label prediction heads applied at masked positions."""

    def __init__(self, cfg: CmeConfig, rng):
        self.cfg = cfg
        d = cfg.hidden_dim
        self.stack = TransformerStack(rng, d, cfg.num_layers, cfg.num_heads,
                                      cfg.mlp_ratio, cfg.init_std)
        self.mlm_head = PredictionHead(rng, d, cfg.vocab_size, cfg.init_std)
        self.mim_head = PredictionHead(rng, d, cfg.mim_out_dim, cfg.init_std)
        self.mask_embedding = ad.parameter((d,), rng=rng, std=cfg.init_std)
        self.call_count = 0

    def __call__(self, tokens: Tensor) -> Tensor:
        if tokens.ndim != 3 or tokens.shape[2] != self.cfg.hidden_dim:
            raise FusionError(f"expected (B, T, {self.cfg.hidden_dim}), got {tokens.shape}")
        if tokens.shape[1] > self.cfg.max_seq_len:
            raise FusionError(f"sequence length {tokens.shape[1]} exceeds "
                              f"configured maximum {self.cfg.max_seq_len}")
        self.call_count += 1
        return self.stack(tokens)

    def _gather_positions(self, cme_out: Tensor, sample_idx: np.ndarray,
                          seq_positions: np.ndarray) -> Tensor:
        b, t, d = cme_out.shape
        if seq_positions.size and (seq_positions.min() < 0 or seq_positions.max() >= t):
            raise FusionError("masked position outside the concatenated sequence")
        flat = ad.reshape(cme_out, (b * t, d))
        return ad.gather(flat, sample_idx * t + seq_positions, axis=0)

    def mlm_logits(self, cme_out: Tensor, plan: TextMask, text_offset: int) -> Tensor:
        """Word logits at masked text positions; text tokens sit at
        [text_offset, text_offset + max_text_len) of the concatenation."""
        picked = self._gather_positions(cme_out, plan.sample_idx,
                                        text_offset + plan.positions)
        return self.mlm_head(picked)

    def mim_logits(self, cme_out: Tensor, plan: ImageMask, image_offset: int) -> Tensor:
        picked = self._gather_positions(cme_out, plan.sample_idx,
                                        image_offset + plan.positions)
        return self.mim_head(picked)

    def params(self, prefix="cme"):
        out = {f"{prefix}.mask_embedding": self.mask_embedding}
        out.update(self.stack.params(f"{prefix}.stack"))
        out.update(self.mlm_head.params(f"{prefix}.mlm_head"))
        out.update(self.mim_head.params(f"{prefix}.mim_head"))
        return out
