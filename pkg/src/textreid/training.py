"""Model assembly, the training loop, and retrieval evaluation.

Per batch: encode both modalities; identity and similarity-distribution
losses on the global features; if word masking is enabled, re-encode the
masked caption and run the cross-modal pass over [image tokens, masked text
tokens]; if patch masking is enabled, run the opposite pass over [text
tokens, masked image tokens] with the configured prediction target. One
backward covers the weighted total, then a bias-corrected Adam step at the
warmup/cosine rate. Evaluation never touches the cross-modal encoder or the
identity classifier, so re-randomizing them cannot change retrieval output.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError
from .checkpoint import save_checkpoint
from .config import TrainConfig, config_hash, serialize_config
from .encoders import (EncoderConfig, ImageEncoder, TextEncoder, global_features,
                       patchify_array)
from .fusion import CmeConfig, CrossModalEncoder, mask_image, mask_text
from .losses import (LossBundle, SdmConfig, feature_mim_loss, id_loss, mlm_loss,
                     patch_mim_loss, pixel_mim_loss, sdm_loss, semmim_loss,
                     total_loss, zero_scalar)
from .metrics import RetrievalResult, csv_header, csv_row, evaluate
from .optim import LrSchedule, adam_step, init_adam, lr_at
from .patches import label_patches
from .sprites import Dataset, flip_horizontal, split_by_identity
from .storage import read_dataset


class TrainingError(Exception):
    pass


@dataclass
class RunReport:
    config_echo: str
    effective_config: str
    config_hash: str
    epoch_losses: list
    final_metrics: RetrievalResult
    wall_clock_sec: float
    num_train_samples: int
    num_test_queries: int
    gallery_size: int

    def deterministic_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "config_echo": self.config_echo,
            "effective_config": self.effective_config,
            "epoch_losses": self.epoch_losses,
            "metrics": self.final_metrics.to_dict(),
            "num_train_samples": self.num_train_samples,
            "num_test_queries": self.num_test_queries,
            "gallery_size": self.gallery_size,
        }

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps(self.deterministic_dict(), indent=1, sort_keys=True) + "\n",
            encoding="utf-8")
        (out_dir / "timing.json").write_text(
            json.dumps({"wall_clock_sec": self.wall_clock_sec}) + "\n",
            encoding="utf-8")


def _rng(seed: int, *salt: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *salt])))


class Model:
    """Dual encoders plus the training-only parts: the cross-modal encoder
    and the shared identity classifier matrix."""

    def __init__(self, cfg: TrainConfig, dataset: Dataset, num_train_identities: int):
        self.cfg = cfg
        self.vocab = dataset.vocab
        self.num_classes = dataset.num_classes
        enc_cfg = EncoderConfig(
            vocab_size=dataset.vocab.size,
            hidden_dim=cfg.hidden_size,
            num_layers=cfg.encoder_layers,
            num_heads=cfg.encoder_heads,
            patch_size=cfg.patch_size,
            max_text_len=dataset.max_len,
            image_size=tuple(dataset.image_size),
            mlp_ratio=cfg.mlp_ratio,
            text_global=cfg.text_global,
        )
        self.encoder_config = enc_cfg
        self.image_encoder = ImageEncoder(enc_cfg, _rng(cfg.seed, 10))
        self.text_encoder = TextEncoder(enc_cfg, _rng(cfg.seed, 11),
                                        dataset.vocab.pad_id, dataset.vocab.sos_id,
                                        dataset.vocab.eos_id)
        cme_cfg = CmeConfig(
            hidden_dim=cfg.hidden_size,
            vocab_size=dataset.vocab.size,
            num_classes=dataset.num_classes,
            patch_size=cfg.patch_size,
            num_layers=cfg.cme_layers,
            num_heads=cfg.cme_heads,
            mlp_ratio=cfg.mlp_ratio,
            max_seq_len=enc_cfg.num_patches + 1 + dataset.max_len,
            mim_output=cfg.mim_method if cfg.mim_method != "none" else "semantic",
        )
        self.cme = CrossModalEncoder(cme_cfg, _rng(cfg.seed, 12))
        self.w_id = ad.parameter((num_train_identities, cfg.hidden_size),
                                 rng=_rng(cfg.seed, 13), std=0.02)

    def retrieval_params(self) -> dict:
        out = {}
        out.update(self.image_encoder.params("image"))
        out.update(self.text_encoder.params("text"))
        return out

    def training_only_params(self) -> dict:
        out = self.cme.params("cme")
        out["w_id"] = self.w_id
        return out

    def all_params(self) -> dict:
        out = self.retrieval_params()
        out.update(self.training_only_params())
        return out

    def randomize_training_only(self, rng: np.random.Generator) -> None:
        """Overwrite the inference-irrelevant parameters with fresh noise."""
        for tensor in self.training_only_params().values():
            tensor.data[...] = rng.normal(0.0, 0.05, size=tensor.data.shape)


def attach_patch_labels(dataset: Dataset, patch_size: int) -> None:
    """Fill each sample's patch-label grid from its parse map (cached per image)."""
    cache: dict[int, np.ndarray] = {}
    for s in dataset.samples:
        if s.image_index not in cache:
            cache[s.image_index] = label_patches(s.parse_map, patch_size,
                                                 dataset.num_classes)
        s.patch_labels = cache[s.image_index]


def _batch_arrays(samples, flips):
    images, grids = [], []
    for s, flip in zip(samples, flips):
        if flip:
            img, _ = flip_horizontal(s.image, s.parse_map)
            images.append(img)
            grids.append(np.fliplr(s.patch_labels))
        else:
            images.append(s.image)
            grids.append(s.patch_labels)
    token_ids = np.stack([s.token_ids for s in samples])
    identities = np.array([s.identity_id for s in samples])
    return np.stack(images), token_ids, identities, np.stack(grids)


def train_step(model: Model, cfg: TrainConfig, images: np.ndarray,
               token_ids: np.ndarray, identities: np.ndarray, mapped_ids: np.ndarray,
               patch_grids: np.ndarray, mask_rng: np.random.Generator) -> LossBundle:
    vocab = model.vocab
    img_out = model.image_encoder(images)
    txt_out = model.text_encoder(token_ids)
    v_glob, t_glob = global_features(img_out, txt_out, cfg.text_global)

    id_term = id_loss(v_glob, t_glob, mapped_ids, model.w_id)
    sdm_term = sdm_loss(v_glob, t_glob, identities,
                        SdmConfig(cfg.sdm_temperature, cfg.sdm_epsilon))

    # Build both cross-modal sequences first. When word and patch masking
    # are both on, the two passes ride one stacked forward along the batch
    # axis: attention never crosses sequences, so the results are identical
    # to two separate calls through the same shared blocks.
    batch_n = token_ids.shape[0]
    mlm_seq = text_plan = None
    if cfg.mlm_enabled:
        masked_ids, text_plan = mask_text(token_ids, cfg.text_mask_rate, mask_rng,
                                          pad_id=vocab.pad_id, sos_id=vocab.sos_id,
                                          eos_id=vocab.eos_id, mask_id=vocab.mask_id)
        masked_txt = model.text_encoder(masked_ids)
        mlm_seq = ad.concatenate([img_out.tokens, masked_txt.tokens], axis=1)

    mim_seq = image_plan = None
    if cfg.mim_method != "none":
        flat_grids = patch_grids.reshape(patch_grids.shape[0], -1)
        masked_img, image_plan = mask_image(img_out.tokens, cfg.patch_mask_rate,
                                            mask_rng, model.cme.mask_embedding,
                                            flat_grids)
        mim_seq = ad.concatenate([txt_out.tokens, masked_img], axis=1)

    mlm_cme_out = mim_cme_out = None
    if mlm_seq is not None and mim_seq is not None and \
            mlm_seq.shape[1] == mim_seq.shape[1]:
        stacked = model.cme(ad.concatenate([mlm_seq, mim_seq], axis=0))
        mlm_cme_out = ad.gather(stacked, np.arange(batch_n), axis=0)
        mim_cme_out = ad.gather(stacked, np.arange(batch_n, 2 * batch_n), axis=0)
    else:
        if mlm_seq is not None:
            mlm_cme_out = model.cme(mlm_seq)
        if mim_seq is not None:
            mim_cme_out = model.cme(mim_seq)

    mlm_term = zero_scalar()
    if mlm_cme_out is not None:
        logits = model.cme.mlm_logits(mlm_cme_out, text_plan,
                                      text_offset=img_out.tokens.shape[1])
        mlm_term = mlm_loss(logits, text_plan.true_ids, vocab.size,
                            cfg.normalize_ce_by_classes)

    mim_term = zero_scalar()
    if mim_cme_out is not None:
        logits = model.cme.mim_logits(mim_cme_out, image_plan,
                                      image_offset=txt_out.tokens.shape[1])
        if cfg.mim_method == "semantic":
            mim_term = semmim_loss(logits, image_plan.true_classes, model.num_classes,
                                   cfg.normalize_ce_by_classes)
        elif cfg.mim_method == "pixel":
            pixels = patchify_array(images, cfg.patch_size)
            targets = pixels[image_plan.sample_idx, image_plan.positions - 1]
            mim_term = pixel_mim_loss(logits, targets)
        elif cfg.mim_method == "patch":
            pixels = patchify_array(images, cfg.patch_size)
            targets = pixels[image_plan.sample_idx, image_plan.positions - 1].mean(axis=1)
            mim_term = patch_mim_loss(logits, targets)
        else:  # feature
            targets = img_out.tokens.data[image_plan.sample_idx, image_plan.positions]
            mim_term = feature_mim_loss(logits, targets)

    return total_loss(id_term, sdm_term, mlm_term, mim_term,
                      cfg.mlm_weight, cfg.mim_weight)


def _unique_gallery(samples):
    seen = {}
    for s in samples:
        if s.image_index not in seen:
            seen[s.image_index] = s
    ordered = [seen[k] for k in sorted(seen)]
    images = np.stack([s.image for s in ordered])
    ids = np.array([s.identity_id for s in ordered])
    return images, ids


def evaluate_retrieval(model: Model, test_samples, batch_size: int = 64):
    """Caption-to-image retrieval over the held-out identities; uses only the
    two encoders, never the cross-modal parts."""
    gallery_images, gallery_ids = _unique_gallery(test_samples)
    query_ids = np.array([s.identity_id for s in test_samples])
    with ad.no_grad():
        v_parts = []
        for start in range(0, len(gallery_images), batch_size):
            out = model.image_encoder(gallery_images[start:start + batch_size])
            b, _, d = out.tokens.shape
            cls = ad.reshape(ad.gather(out.tokens, np.array([0]), axis=1), (b, d))
            v_parts.append(ad.l2_normalize(cls).data)
        v_glob = np.concatenate(v_parts, axis=0)
        t_parts = []
        token_matrix = np.stack([s.token_ids for s in test_samples])
        for start in range(0, len(token_matrix), batch_size):
            out = model.text_encoder(token_matrix[start:start + batch_size])
            b, t, d = out.tokens.shape
            if model.cfg.text_global == "sos":
                tok = ad.reshape(ad.gather(out.tokens, np.array([0]), axis=1), (b, d))
            else:
                flat = ad.reshape(out.tokens, (b * t, d))
                tok = ad.gather(flat, np.arange(b) * t + out.eos_positions, axis=0)
            t_parts.append(ad.l2_normalize(tok).data)
        t_glob = np.concatenate(t_parts, axis=0)
    sims = t_glob @ v_glob.T
    result = evaluate(sims, query_ids, gallery_ids)
    return result, sims, query_ids, gallery_ids


def train(cfg: TrainConfig, dataset: Dataset | None = None,
          config_echo: str | None = None, log=None) -> tuple[RunReport, Model]:
    cfg.validate()
    t_start = time.perf_counter()
    if dataset is None:
        dataset = read_dataset(cfg.dataset_dir)
    h, w = dataset.image_size
    if h % cfg.patch_size or w % cfg.patch_size:
        raise TrainingError(f"dataset images {h}x{w} not divisible by patch "
                            f"size {cfg.patch_size}")
    attach_patch_labels(dataset, cfg.patch_size)
    train_samples, test_samples = split_by_identity(dataset, cfg.test_fraction)

    train_identities = sorted({s.identity_id for s in train_samples})
    id_remap = {identity: i for i, identity in enumerate(train_identities)}
    model = Model(cfg, dataset, num_train_identities=len(train_identities))

    params_by_name = model.all_params()
    params = list(params_by_name.values())
    state = init_adam(params, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                      eps=cfg.adam_eps)

    n_train = len(train_samples)
    batches_per_epoch = max(1, n_train // cfg.batch_size)
    sched = LrSchedule(base_lr=cfg.learning_rate, warmup_start_lr=cfg.warmup_start_lr,
                       warmup_epochs=cfg.warmup_epochs, total_epochs=cfg.epochs,
                       steps_per_epoch=batches_per_epoch)

    epoch_losses = []
    global_step = 0
    for epoch in range(cfg.epochs):
        order = _rng(cfg.seed, 20, epoch).permutation(n_train)
        if cfg.flip_augmentation:
            flips = _rng(cfg.seed, 21, epoch).random(n_train) < 0.5
        else:
            flips = np.zeros(n_train, dtype=bool)
        sums = {"id": 0.0, "sdm": 0.0, "mlm": 0.0, "mim": 0.0, "total": 0.0}
        for b_idx in range(batches_per_epoch):
            sel = order[b_idx * cfg.batch_size:(b_idx + 1) * cfg.batch_size]
            batch = [train_samples[i] for i in sel]
            images, token_ids, identities, grids = _batch_arrays(batch, flips[sel])
            mapped = np.array([id_remap[i] for i in identities])
            mask_rng = _rng(cfg.seed, 22, epoch, b_idx)
            try:
                bundle = train_step(model, cfg, images, token_ids, identities,
                                    mapped, grids, mask_rng)
                ad.zero_grads(params)
                ad.backward(bundle.total)
            except NonFiniteError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b_idx}: {exc}") from exc
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in params]
            adam_step(params, grads, state, lr_at(global_step, sched))
            global_step += 1
            values = bundle.floats()
            for key in sums:
                sums[key] += values[key]
        means = {key: value / batches_per_epoch for key, value in sums.items()}
        epoch_losses.append(means)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}: " +
                " ".join(f"{k}={v:.6f}" for k, v in means.items()) +
                f" lr={lr_at(global_step - 1, sched):.2e}")

    final_metrics, _, _, _ = evaluate_retrieval(model, test_samples)
    report = RunReport(
        config_echo=config_echo if config_echo is not None else serialize_config(cfg),
        effective_config=serialize_config(cfg),
        config_hash=config_hash(cfg),
        epoch_losses=epoch_losses,
        final_metrics=final_metrics,
        wall_clock_sec=time.perf_counter() - t_start,
        num_train_samples=n_train,
        num_test_queries=len(test_samples),
        gallery_size=len({s.image_index for s in test_samples}),
    )
    return report, model


def save_run(out_dir, report: RunReport, model: Model) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir)
    save_checkpoint(out_dir / "checkpoint.bin", model.all_params())
    (out_dir / "metrics.json").write_text(report.final_metrics.to_json() + "\n",
                                          encoding="utf-8")
    (out_dir / "metrics.csv").write_text(
        csv_header() + ",config_hash\n"
        + csv_row(report.final_metrics) + f",{report.config_hash}\n",
        encoding="utf-8")
