"""Training objectives.

Masked-token cross entropies average over masked positions and are further
divided by the label-set size (vocabulary for text, classes for patches);
set normalize_by_classes=False for the conventional per-token scaling.
The similarity-distribution loss is a row-wise KL between the temperature
softmax of cross-modal cosine similarities and the normalized identity-match
indicator, summed over both retrieval directions. The identity loss pushes
both global features through one shared classifier matrix. Reconstruction
variants for masked patches (raw pixels, per-patch mean, encoder features)
are provided for comparison against label prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class LossError(Exception):
    pass


@dataclass
class SdmConfig:
    temperature: float = 0.02
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.temperature <= 0 or self.epsilon <= 0:
            raise LossError("temperature and epsilon must be positive")


@dataclass
class LossBundle:
    """Named components plus the weighted total, all scalar tensors."""

    id: Tensor
    sdm: Tensor
    mlm: Tensor
    mim: Tensor
    total: Tensor
    mlm_weight: float
    mim_weight: float

    def floats(self) -> dict:
        return {"id": self.id.item(), "sdm": self.sdm.item(),
                "mlm": self.mlm.item(), "mim": self.mim.item(),
                "total": self.total.item()}


def zero_scalar() -> Tensor:
    return Tensor(np.zeros(()))


def _class_cross_entropy(logits: Tensor, true_labels: np.ndarray, num_classes: int,
                         normalize_by_classes: bool, what: str) -> Tensor:
    labels = np.asarray(true_labels, dtype=np.intp).reshape(-1)
    if labels.size == 0:
        raise LossError(f"{what}: empty masked set")
    m, k = logits.shape
    if m != labels.size:
        raise LossError(f"{what}: {m} logit rows vs {labels.size} labels")
    if k != num_classes:
        raise LossError(f"{what}: logits width {k} != {num_classes} classes")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LossError(f"{what}: label outside [0, {num_classes})")
    logp = ad.log(ad.softmax(logits))
    picked = ad.gather(ad.reshape(logp, (m * k,)), np.arange(m) * k + labels)
    loss = ad.scale(ad.mean_all(picked), -1.0)
    if normalize_by_classes:
        loss = ad.scale(loss, 1.0 / num_classes)
    return loss


def mlm_loss(logits: Tensor, true_ids: np.ndarray, vocab_size: int,
             normalize_by_classes: bool = True) -> Tensor:
    """Mean cross entropy over masked words, divided by the vocabulary size."""
    return _class_cross_entropy(logits, true_ids, vocab_size,
                                normalize_by_classes, "mlm_loss")


def semmim_loss(logits: Tensor, true_classes: np.ndarray, num_classes: int,
                normalize_by_classes: bool = True) -> Tensor:
    """Mean cross entropy over masked patches, divided by the class count."""
    return _class_cross_entropy(logits, true_classes, num_classes,
                                normalize_by_classes, "semmim_loss")


def _as_constant(x) -> Tensor:
    return x.detach() if isinstance(x, Tensor) else Tensor(x)


def pixel_mim_loss(pred: Tensor, targets) -> Tensor:
    """MSE against the masked patches' raw RGB values (3 P^2 per patch)."""
    targets = _as_constant(targets)
    if pred.shape != targets.shape:
        raise LossError(f"pixel_mim_loss: pred {pred.shape} vs targets {targets.shape}")
    diff = ad.sub(pred, targets)
    return ad.mean_all(ad.mul(diff, diff))


def patch_mim_loss(pred: Tensor, targets) -> Tensor:
    """MSE against one value per masked patch: its mean over pixels and channels."""
    targets = _as_constant(targets)
    if targets.ndim == 1:
        targets = ad.reshape(targets, (targets.shape[0], 1))
    if pred.shape != targets.shape or pred.ndim != 2 or pred.shape[1] != 1:
        raise LossError(f"patch_mim_loss: pred {pred.shape} vs targets {targets.shape}")
    diff = ad.sub(pred, targets)
    return ad.mean_all(ad.mul(diff, diff))


def feature_mim_loss(pred: Tensor, target_embeddings) -> Tensor:
    """Mean KL(softmax(target) || softmax(pred)) over masked patches.

    Targets are the pre-masking encoder embeddings, treated as constants.
    """
    target = target_embeddings.data if isinstance(target_embeddings, Tensor) \
        else np.asarray(target_embeddings, dtype=np.float64)
    if pred.shape != target.shape:
        raise LossError(f"feature_mim_loss: pred {pred.shape} vs targets {target.shape}")
    shifted = target - target.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    pt = e / e.sum(axis=-1, keepdims=True)
    entropy_term = float((pt * np.log(pt)).sum(axis=-1).mean())
    logp_pred = ad.log(ad.softmax(pred))
    cross = ad.mean_all(ad.sum_axis(ad.mul_const(logp_pred, pt), 1))
    return ad.add_scalar(ad.scale(cross, -1.0), entropy_term)


def _match_matrix(row_ids: np.ndarray, col_ids: np.ndarray, what: str) -> np.ndarray:
    match = (row_ids[:, None] == col_ids[None, :]).astype(np.float64)
    row_sums = match.sum(axis=1)
    if np.any(row_sums == 0):
        raise LossError(f"{what}: a row has no identity match in the batch")
    return match / row_sums[:, None]


def sdm_loss(v_globals: Tensor, t_globals: Tensor, identity_ids: np.ndarray,
             cfg: SdmConfig) -> Tensor:
    """KL(similarity softmax || identity-match distribution), both directions."""
    ids = np.asarray(identity_ids).reshape(-1)
    n = ids.size
    if n == 0:
        raise LossError("sdm_loss: empty batch")
    if v_globals.shape[0] != n or t_globals.shape[0] != n:
        raise LossError("sdm_loss: batch size mismatch with identity ids")
    sims = ad.cosine_similarity(v_globals, t_globals)

    def direction(sim_matrix: Tensor) -> Tensor:
        q = _match_matrix(ids, ids, "sdm_loss")
        p = ad.softmax(ad.scale(sim_matrix, 1.0 / cfg.temperature))
        ratio = ad.add_const(ad.log(p), -np.log(q + cfg.epsilon))
        return ad.scale(ad.sum_all(ad.mul(p, ratio)), 1.0 / n)

    i2t = direction(sims)
    t2i = direction(ad.transpose(sims, (1, 0)))
    return ad.add(i2t, t2i)


def id_loss(v_globals: Tensor, t_globals: Tensor, identity_ids: np.ndarray,
            w_id: Tensor) -> Tensor:
    """Identity cross entropy of both modalities through one shared matrix,
    summed per sample and averaged over the batch."""
    ids = np.asarray(identity_ids, dtype=np.intp).reshape(-1)
    num_identities = w_id.shape[0]
    if ids.size == 0:
        raise LossError("id_loss: empty batch")
    if ids.min() < 0 or ids.max() >= num_identities:
        raise LossError(f"id_loss: identity outside [0, {num_identities})")
    wt = ad.transpose(w_id, (1, 0))

    def ce(feats: Tensor) -> Tensor:
        logits = ad.matmul(feats, wt)
        m, k = logits.shape
        logp = ad.log(ad.softmax(logits))
        picked = ad.gather(ad.reshape(logp, (m * k,)), np.arange(m) * k + ids)
        return ad.scale(ad.mean_all(picked), -1.0)

    return ad.add(ce(v_globals), ce(t_globals))


def total_loss(id_term: Tensor, sdm_term: Tensor, mlm_term: Tensor, mim_term: Tensor,
               mlm_weight: float, mim_weight: float) -> LossBundle:
    total = ad.add(ad.add(ad.add(id_term, sdm_term), ad.scale(mlm_term, mlm_weight)),
                   ad.scale(mim_term, mim_weight))
    return LossBundle(id=id_term, sdm=sdm_term, mlm=mlm_term, mim=mim_term,
                      total=total, mlm_weight=mlm_weight, mim_weight=mim_weight)
