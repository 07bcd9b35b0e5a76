"""Dual transformer encoders producing token sequences for both modalities.

The image side linearly projects non-overlapping P x P x 3 patches, prepends
a learnable CLS embedding and adds learnable positions; the text side looks
up token embeddings, adds positions and masks PAD keys out of attention.
Both use pre-norm blocks with GELU MLPs and a final layer norm. Global
features are the normalized CLS embedding and the text embedding at the
start-of-sequence position (end-of-sequence selectable).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KEY_MASK_BIAS = -1e9  # large finite penalty; exp() underflows to exactly 0


class EncoderError(Exception):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    patch_size: int = 8
    max_text_len: int = 32
    image_size: tuple = (64, 32)
    mlp_ratio: int = 4
    text_global: str = "sos"
    init_std: float = 0.02

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise EncoderError(f"hidden_dim {self.hidden_dim} not divisible by "
                               f"{self.num_heads} heads")
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise EncoderError(f"image {h}x{w} not divisible by patch size {self.patch_size}")
        if self.text_global not in ("sos", "eos"):
            raise EncoderError(f"text_global must be 'sos' or 'eos', got {self.text_global!r}")

    @property
    def grid_shape(self) -> tuple:
        return (self.image_size[0] // self.patch_size,
                self.image_size[1] // self.patch_size)

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid_shape
        return gh * gw


@dataclass
class EncoderOutput:
    tokens: Tensor                      # (B, T, hidden_dim)
    cls_index: int | None = None
    sos_index: int | None = None
    eos_positions: np.ndarray | None = None  # (B,)


class Linear:
    def __init__(self, rng, d_in, d_out, std=0.02):
        self.w = ad.parameter((d_in, d_out), rng=rng, std=std)
        self.b = Tensor(np.zeros(d_out), requires_grad=True, validate=False)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add_bias(ad.matmul(x, self.w), self.b)

    def params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, dim):
        self.gain = Tensor(np.ones(dim), requires_grad=True, validate=False)
        self.bias = Tensor(np.zeros(dim), requires_grad=True, validate=False)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add_bias(ad.mul_vec(ad.layernorm(x), self.gain), self.bias)

    def params(self, prefix):
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class MultiHeadAttention:
    def __init__(self, rng, dim, num_heads, std=0.02):
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.wq = Linear(rng, dim, dim, std)
        self.wk = Linear(rng, dim, dim, std)
        self.wv = Linear(rng, dim, dim, std)
        self.wo = Linear(rng, dim, dim, std)

    def __call__(self, x: Tensor, key_bias: np.ndarray | None = None) -> Tensor:
        b, t, d = x.shape
        h, hd = self.num_heads, self.head_dim

        def split_heads(y):
            return ad.transpose(ad.reshape(y, (b, t, h, hd)), (0, 2, 1, 3))

        q = split_heads(self.wq(x))
        k = split_heads(self.wk(x))
        v = split_heads(self.wv(x))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        if key_bias is not None:
            scores = ad.add_const(scores, key_bias)
        attn = ad.softmax(scores)
        out = ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3))
        return self.wo(ad.reshape(out, (b, t, d)))

    def params(self, prefix):
        out = {}
        for name, lin in (("q", self.wq), ("k", self.wk), ("v", self.wv), ("o", self.wo)):
            out.update(lin.params(f"{prefix}.{name}"))
        return out


class TransformerBlock:
    def __init__(self, rng, dim, num_heads, mlp_ratio=4, std=0.02):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, num_heads, std)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(rng, dim, dim * mlp_ratio, std)
        self.fc2 = Linear(rng, dim * mlp_ratio, dim, std)

    def __call__(self, x: Tensor, key_bias: np.ndarray | None = None) -> Tensor:
        x = ad.add(x, self.attn(self.ln1(x), key_bias))
        return ad.add(x, self.fc2(ad.gelu(self.fc1(self.ln2(x)))))

    def params(self, prefix):
        out = {}
        out.update(self.ln1.params(f"{prefix}.ln1"))
        out.update(self.attn.params(f"{prefix}.attn"))
        out.update(self.ln2.params(f"{prefix}.ln2"))
        out.update(self.fc1.params(f"{prefix}.fc1"))
        out.update(self.fc2.params(f"{prefix}.fc2"))
        return out


class TransformerStack:
    def __init__(self, rng, dim, num_layers, num_heads, mlp_ratio=4, std=0.02):
        self.blocks = [TransformerBlock(rng, dim, num_heads, mlp_ratio, std)
                       for _ in range(num_layers)]
        self.ln_out = LayerNorm(dim)

    def __call__(self, x: Tensor, key_bias: np.ndarray | None = None) -> Tensor:
        for block in self.blocks:
            x = block(x, key_bias)
        return self.ln_out(x)

    def params(self, prefix):
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"{prefix}.block{i}"))
        out.update(self.ln_out.params(f"{prefix}.ln_out"))
        return out


def patchify(images: Tensor, patch_size: int) -> Tensor:
    """(B, H, W, 3) -> (B, num_patches, P*P*3), patches in row-major order."""
    b, h, w, c = images.shape
    p = patch_size
    if h % p or w % p:
        raise EncoderError(f"image {h}x{w} not divisible by patch size {p}")
    x = ad.reshape(images, (b, h // p, p, w // p, p, c))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, (h // p) * (w // p), p * p * c))


def patchify_array(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Numpy twin of patchify, for constant targets."""
    b, h, w, c = images.shape
    p = patch_size
    x = images.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // p) * (w // p), p * p * c)


class ImageEncoder:
    def __init__(self, cfg: EncoderConfig, rng):
        self.cfg = cfg
        d, p = cfg.hidden_dim, cfg.patch_size
        self.patch_proj = Linear(rng, p * p * 3, d, cfg.init_std)
        self.cls = ad.parameter((d,), rng=rng, std=cfg.init_std)
        self.pos = ad.parameter((cfg.num_patches + 1, d), rng=rng, std=cfg.init_std)
        self.stack = TransformerStack(rng, d, cfg.num_layers, cfg.num_heads,
                                      cfg.mlp_ratio, cfg.init_std)

    def __call__(self, images) -> EncoderOutput:
        if not isinstance(images, Tensor):
            images = Tensor(images)
        if images.ndim != 4 or images.shape[1:] != (*self.cfg.image_size, 3):
            raise EncoderError(f"expected (B, {self.cfg.image_size[0]}, "
                               f"{self.cfg.image_size[1]}, 3), got {images.shape}")
        b = images.shape[0]
        d = self.cfg.hidden_dim
        tokens = self.patch_proj(patchify(images, self.cfg.patch_size))
        cls = ad.broadcast_to(ad.reshape(self.cls, (1, 1, d)), (b, 1, d))
        x = ad.concatenate([cls, tokens], axis=1)
        pos = ad.broadcast_to(ad.reshape(self.pos, (1, self.cfg.num_patches + 1, d)),
                              (b, self.cfg.num_patches + 1, d))
        x = ad.add(x, pos)
        return EncoderOutput(tokens=self.stack(x), cls_index=0)

    def params(self, prefix="image"):
        out = {f"{prefix}.cls": self.cls, f"{prefix}.pos": self.pos}
        out.update(self.patch_proj.params(f"{prefix}.patch_proj"))
        out.update(self.stack.params(f"{prefix}.stack"))
        return out


class TextEncoder:
    def __init__(self, cfg: EncoderConfig, rng, pad_id: int, sos_id: int, eos_id: int):
        self.cfg = cfg
        self.pad_id, self.sos_id, self.eos_id = pad_id, sos_id, eos_id
        d = cfg.hidden_dim
        self.tok_emb = ad.parameter((cfg.vocab_size, d), rng=rng, std=cfg.init_std)
        self.pos = ad.parameter((cfg.max_text_len, d), rng=rng, std=cfg.init_std)
        self.stack = TransformerStack(rng, d, cfg.num_layers, cfg.num_heads,
                                      cfg.mlp_ratio, cfg.init_std)

    def _validate(self, ids: np.ndarray) -> np.ndarray:
        if ids.ndim != 2:
            raise EncoderError(f"token ids must be (B, T), got {ids.shape}")
        t = ids.shape[1]
        if t > self.cfg.max_text_len:
            raise EncoderError(f"sequence length {t} exceeds max {self.cfg.max_text_len}")
        if t < self.cfg.max_text_len:
            pad = np.full((ids.shape[0], self.cfg.max_text_len - t), self.pad_id,
                          dtype=ids.dtype)
            ids = np.concatenate([ids, pad], axis=1)
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise EncoderError("token id out of vocabulary range")
        if np.any(ids[:, 0] != self.sos_id):
            raise EncoderError("sequences must start with SOS")
        if np.any((ids == self.eos_id).sum(axis=1) != 1):
            raise EncoderError("sequences must contain exactly one EOS")
        return ids

    def __call__(self, token_ids: np.ndarray) -> EncoderOutput:
        ids = self._validate(np.asarray(token_ids, dtype=np.int64))
        b, t = ids.shape
        d = self.cfg.hidden_dim
        emb = ad.reshape(ad.gather(self.tok_emb, ids.reshape(-1), axis=0), (b, t, d))
        pos = ad.broadcast_to(ad.reshape(self.pos, (1, t, d)), (b, t, d))
        x = ad.add(emb, pos)
        # Mask keys by position (everything after EOS), so the padding
        # region's ids can never influence the content positions.
        eos_positions = (ids == self.eos_id).argmax(axis=1)
        padding = np.arange(t)[None, :] > eos_positions[:, None]
        key_bias = np.where(padding, KEY_MASK_BIAS, 0.0)[:, None, None, :]
        return EncoderOutput(tokens=self.stack(x, key_bias), sos_index=0,
                             eos_positions=eos_positions)

    def params(self, prefix="text"):
        out = {f"{prefix}.tok_emb": self.tok_emb, f"{prefix}.pos": self.pos}
        out.update(self.stack.params(f"{prefix}.stack"))
        return out


def global_features(img_out: EncoderOutput, txt_out: EncoderOutput,
                    text_global: str = "sos") -> tuple[Tensor, Tensor]:
    """L2-normalized (image CLS, text SOS-or-EOS) embeddings, (B, d) each."""
    b, t_img, d = img_out.tokens.shape
    cls = ad.reshape(ad.gather(img_out.tokens, np.array([img_out.cls_index]), axis=1),
                     (b, d))
    if text_global == "sos":
        txt = ad.reshape(ad.gather(txt_out.tokens, np.array([txt_out.sos_index]), axis=1),
                         (txt_out.tokens.shape[0], d))
    elif text_global == "eos":
        bt, t_txt, _ = txt_out.tokens.shape
        flat = ad.reshape(txt_out.tokens, (bt * t_txt, d))
        idx = np.arange(bt) * t_txt + txt_out.eos_positions
        txt = ad.gather(flat, idx, axis=0)
    else:
        raise EncoderError(f"unknown text_global {text_global!r}")
    return ad.l2_normalize(cls), ad.l2_normalize(txt)
