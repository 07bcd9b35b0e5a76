"""Central finite-difference verification of analytic gradients.

The numeric side only ever calls the forward pass, so it stays independent
of the backward implementation it is checking.
"""

from __future__ import annotations

import time
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of a scalar function, element by element."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.copy().reshape(-1)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + h
        up = f(base.reshape(x.shape))
        base[i] = orig - h
        down = f(base.reshape(x.shape))
        base[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1.0) -> float:
    """Worst-case |a - n| / max(floor, |a|, |n|) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def compare_gradients(fn: Callable[..., "ad.Tensor"], args: Sequence[np.ndarray],
                      h: float = DEFAULT_STEP, floor: float = 1.0) -> float:
    """Max relative error between backward() and finite differences.

    `fn` maps one Tensor per entry of `args` to a scalar Tensor; every arg
    is treated as differentiable.
    """
    leaves = [ad.Tensor(a, requires_grad=True) for a in args]
    loss = fn(*leaves)
    ad.backward(loss)

    worst = 0.0
    for k, leaf in enumerate(leaves):
        def forward_at(x: np.ndarray, k: int = k) -> float:
            probe = [ad.Tensor(a.data, validate=False) for a in leaves]
            probe[k] = ad.Tensor(x, validate=False)
            with ad.no_grad():
                return fn(*probe).item()

        numeric = numeric_gradient(forward_at, leaf.data, h=h)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        worst = max(worst, max_rel_error(analytic, numeric, floor=floor))
    return worst


def params_vs_finite_differences(params: dict, forward: Callable[[], "ad.Tensor"],
                                 h: float = DEFAULT_STEP, floor: float = 1.0) -> float:
    """Check backward() against central differences for every named
    parameter of a model, perturbing parameter storage in place."""
    for p in params.values():
        p.zero_grad()
    loss = forward()
    ad.backward(loss)
    worst = 0.0
    for p in params.values():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)

        def probe(x: np.ndarray, p=p) -> float:
            saved = p.data.copy()
            p.data[...] = x
            with ad.no_grad():
                value = forward().item()
            p.data[...] = saved
            return value

        numeric = numeric_gradient(probe, p.data, h=h)
        worst = max(worst, max_rel_error(analytic, numeric, floor=floor))
    return worst


class CheckFailure(Exception):
    pass


def run_named_checks(checks: Sequence[tuple[str, Callable[[], float]]],
                     tol: float = DEFAULT_TOL, printer=print) -> list[tuple[str, float, bool]]:
    """Run (name, fn) pairs where fn returns a max relative error.

    Prints one line per check and returns the results; raises CheckFailure
    if anything exceeds `tol`.
    """
    results = []
    failures = []
    for name, fn in checks:
        t0 = time.perf_counter()
        err = fn()
        dt = time.perf_counter() - t0
        ok = err < tol
        results.append((name, err, ok))
        printer(f"[{'PASS' if ok else 'FAIL'}] {name}: max rel err {err:.3e} ({dt:.2f}s)")
        if not ok:
            failures.append(name)
    if failures:
        raise CheckFailure(f"gradient checks failed: {', '.join(failures)}")
    return results


# ---------------------------------------------------------------------------
# Named suite over ops, losses and transformer components (CLI: grad-check)
# ---------------------------------------------------------------------------


def _repeat(fn: Callable[[np.random.Generator], float], instances: int,
            base_seed: int) -> float:
    worst = 0.0
    for i in range(instances):
        worst = max(worst, fn(np.random.default_rng(base_seed + i)))
    return worst


def loss_checks(instances: int = 10) -> list:
    from .losses import (SdmConfig, feature_mim_loss, id_loss, mlm_loss,
                         patch_mim_loss, pixel_mim_loss, sdm_loss, semmim_loss)

    def unit_rows(rng, n, d):
        x = rng.normal(size=(n, d))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def word_ce(rng):
        labels = rng.integers(0, 7, size=5)
        return compare_gradients(lambda x: mlm_loss(x, labels, 7),
                                 [rng.normal(size=(5, 7))])

    def patch_ce(rng):
        labels = rng.integers(0, 8, size=4)
        return compare_gradients(lambda x: semmim_loss(x, labels, 8),
                                 [rng.normal(size=(4, 8))])

    def pixel_mse(rng):
        targets = rng.normal(size=(3, 12))
        return compare_gradients(lambda x: pixel_mim_loss(x, targets),
                                 [rng.normal(size=(3, 12))])

    def patch_mse(rng):
        targets = rng.normal(size=4)
        return compare_gradients(lambda x: patch_mim_loss(x, targets),
                                 [rng.normal(size=(4, 1))])

    def feature_kl(rng):
        targets = rng.normal(size=(3, 6))
        return compare_gradients(lambda x: feature_mim_loss(x, targets),
                                 [rng.normal(size=(3, 6))])

    def similarity_match(rng):
        ids = rng.integers(0, 3, size=4)
        ids[0] = ids[1]  # guarantee at least one shared identity
        cfg = SdmConfig()
        return compare_gradients(lambda v, t: sdm_loss(v, t, ids, cfg),
                                 [unit_rows(rng, 4, 5), unit_rows(rng, 4, 5)])

    def identity_ce(rng):
        ids = rng.integers(0, 3, size=4)
        return compare_gradients(lambda v, t, w: id_loss(v, t, ids, w),
                                 [rng.normal(size=(4, 5)), rng.normal(size=(4, 5)),
                                  rng.normal(size=(3, 5))])

    named = [("loss/word-ce", word_ce), ("loss/patch-ce", patch_ce),
             ("loss/pixel-mse", pixel_mse), ("loss/patch-mse", patch_mse),
             ("loss/feature-kl", feature_kl), ("loss/similarity-match", similarity_match),
             ("loss/identity-ce", identity_ce)]
    return [(name, lambda fn=fn: _repeat(fn, instances, 5000)) for name, fn in named]


def component_checks(instances: int = 10) -> list:
    from .encoders import EncoderConfig, ImageEncoder, TextEncoder, TransformerBlock
    from .fusion import CmeConfig, CrossModalEncoder
    from .sprites import build_vocab, tokenize

    vocab = build_vocab()

    def transformer_block(rng):
        block = TransformerBlock(rng, dim=8, num_heads=2, mlp_ratio=2)
        x = rng.normal(size=(1, 4, 8))
        weights = rng.normal(size=(1, 4, 8))
        params = block.params("block")
        return params_vs_finite_differences(
            params, lambda: ad.sum_all(ad.mul_const(block(ad.Tensor(x)), weights)))

    def image_encoder(rng):
        cfg = EncoderConfig(vocab_size=vocab.size, hidden_dim=8, num_layers=1,
                            num_heads=2, patch_size=8, max_text_len=8,
                            image_size=(16, 8), mlp_ratio=2)
        enc = ImageEncoder(cfg, rng)
        image = rng.random((1, 16, 8, 3))
        weights = rng.normal(size=(1, 3, 8))
        return params_vs_finite_differences(
            enc.params(), lambda: ad.sum_all(ad.mul_const(enc(image).tokens, weights)))

    def text_encoder(rng):
        cfg = EncoderConfig(vocab_size=vocab.size, hidden_dim=8, num_layers=1,
                            num_heads=2, patch_size=8, max_text_len=8,
                            image_size=(16, 8), mlp_ratio=2)
        enc = TextEncoder(cfg, rng, vocab.pad_id, vocab.sos_id, vocab.eos_id)
        ids = tokenize("a red shirt", vocab, 8)[None, :]
        weights = rng.normal(size=(1, 8, 8))
        return params_vs_finite_differences(
            enc.params(), lambda: ad.sum_all(ad.mul_const(enc(ids).tokens, weights)))

    def cross_modal(rng):
        cfg = CmeConfig(hidden_dim=8, vocab_size=vocab.size, num_classes=8,
                        patch_size=4, num_layers=2, num_heads=2, mlp_ratio=2,
                        max_seq_len=32)
        cme = CrossModalEncoder(cfg, rng)
        x = rng.normal(size=(1, 5, 8))
        weights = rng.normal(size=(1, 5, 8))
        err = params_vs_finite_differences(
            cme.stack.params("stack"),
            lambda: ad.sum_all(ad.mul_const(cme(ad.Tensor(x)), weights)))
        err = max(err, compare_gradients(
            lambda v: ad.sum_all(ad.mul_const(cme(v), weights)), [x]))
        return err

    def prediction_heads(rng):
        cfg = CmeConfig(hidden_dim=8, vocab_size=vocab.size, num_classes=8,
                        patch_size=4, num_layers=1, num_heads=2, mlp_ratio=2)
        cme = CrossModalEncoder(cfg, rng)
        x = rng.normal(size=(3, 8))
        w1 = rng.normal(size=(3, vocab.size))
        w2 = rng.normal(size=(3, 8))
        params = {}
        params.update(cme.mlm_head.params("mlm_head"))
        params.update(cme.mim_head.params("mim_head"))
        return params_vs_finite_differences(
            params,
            lambda: ad.add(
                ad.sum_all(ad.mul_const(cme.mlm_head(ad.Tensor(x)), w1)),
                ad.sum_all(ad.mul_const(cme.mim_head(ad.Tensor(x)), w2))))

    named = [("component/transformer-block", transformer_block),
             ("component/image-encoder", image_encoder),
             ("component/text-encoder", text_encoder),
             ("component/cross-modal-encoder", cross_modal),
             ("component/prediction-heads", prediction_heads)]
    return [(name, lambda fn=fn: _repeat(fn, instances, 6000)) for name, fn in named]


def op_checks(instances: int = 10) -> list:
    def composite(rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 5))
        bias = rng.normal(size=5)
        weights = rng.normal(size=(3, 5))

        def fn(x, y, z):
            return ad.sum_all(ad.mul_const(
                ad.gelu(ad.layernorm(ad.add_bias(ad.matmul(x, y), z))), weights))

        return compare_gradients(fn, [a, b, bias])

    def softmax_log(rng):
        x = rng.normal(size=(3, 6))
        weights = rng.normal(size=(3, 6))
        return compare_gradients(
            lambda v: ad.sum_all(ad.mul_const(ad.log(ad.softmax(v)), weights)), [x])

    def normalize_gather(rng):
        x = rng.normal(size=(5, 4)) + 0.2
        idx = rng.integers(0, 5, size=6)
        weights = rng.normal(size=(6, 4))
        return compare_gradients(
            lambda v: ad.sum_all(ad.mul_const(ad.gather(ad.l2_normalize(v), idx), weights)),
            [x])

    named = [("ops/linear-layernorm-gelu", composite),
             ("ops/softmax-log", softmax_log),
             ("ops/normalize-gather", normalize_gather)]
    return [(name, lambda fn=fn: _repeat(fn, instances, 7000)) for name, fn in named]


def full_suite(instances: int = 10) -> list:
    return op_checks(instances) + loss_checks(instances) + component_checks(instances)
