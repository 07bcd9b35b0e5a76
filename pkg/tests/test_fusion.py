"""Masking statistics, cross-modal encoder behavior, sensitivity probes."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textreid import autodiff as ad
from textreid.fusion import (CmeConfig, CrossModalEncoder, FusionError, mask_image,
                             mask_text, restore_text)
from textreid.gradcheck import compare_gradients
from textreid.sprites import build_vocab, tokenize

VOCAB = build_vocab()
SPECIALS = dict(pad_id=VOCAB.pad_id, sos_id=VOCAB.sos_id, eos_id=VOCAB.eos_id,
                mask_id=VOCAB.mask_id)


def caption_ids(text="a person with long red hair wearing a blue shirt", max_len=16):
    return tokenize(text, VOCAB, max_len)


def test_zero_rate_forces_exactly_one_mask():
    rng = np.random.default_rng(0)
    ids = caption_ids()
    masked, plan = mask_text(ids, 0.0, rng, **SPECIALS)
    assert len(plan.positions) == 1
    assert masked[plan.positions[0]] == VOCAB.mask_id
    unchanged = np.delete(np.arange(len(ids)), plan.positions)
    np.testing.assert_array_equal(masked[unchanged], ids[unchanged])


def test_full_rate_masks_every_content_token():
    rng = np.random.default_rng(1)
    ids = caption_ids()
    masked, plan = mask_text(ids, 1.0, rng, **SPECIALS)
    content = ~np.isin(ids, [VOCAB.pad_id, VOCAB.sos_id, VOCAB.eos_id])
    assert set(plan.positions.tolist()) == set(np.flatnonzero(content).tolist())
    np.testing.assert_array_equal(masked[content], VOCAB.mask_id)
    np.testing.assert_array_equal(masked[~content], ids[~content])


def test_specials_never_masked_at_any_rate():
    rng = np.random.default_rng(2)
    ids = caption_ids()
    for rate in (0.0, 0.3, 1.0):
        _, plan = mask_text(ids, rate, rng, **SPECIALS)
        for pos in plan.positions:
            assert ids[pos] not in (VOCAB.pad_id, VOCAB.sos_id, VOCAB.eos_id)


def test_text_mask_rate_concentrates():
    """10,000 draws at rate 0.15 on a 20-content-token caption."""
    words = "a person with long red hair wearing a blue shirt and black pants and white sneakers carrying a gray backpack"
    ids = tokenize(words, VOCAB, max_len=32)
    content = int((~np.isin(ids, [VOCAB.pad_id, VOCAB.sos_id, VOCAB.eos_id])).sum())
    assert content >= 20
    rng = np.random.default_rng(3)
    batch = np.tile(ids, (10000, 1))
    _, plan = mask_text(batch, 0.15, rng, **SPECIALS)
    empirical = len(plan.positions) / (10000 * content)
    assert abs(empirical - 0.15) < 0.01


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 1.0))
@settings(max_examples=40, deadline=None)
def test_mask_plan_restores_original(seed, rate):
    rng = np.random.default_rng(seed)
    ids = caption_ids()
    masked, plan = mask_text(ids, rate, rng, **SPECIALS)
    np.testing.assert_array_equal(restore_text(masked, plan), ids)


def _image_tokens(rng, b=2, t=9, d=8):
    return ad.Tensor(rng.normal(size=(b, t, d)), requires_grad=True)


def test_image_mask_zero_rate_replaces_exactly_one():
    rng = np.random.default_rng(4)
    tokens = _image_tokens(rng)
    memb = ad.parameter((8,), rng=rng, std=0.1)
    labels = rng.integers(0, 8, size=(2, 8))
    masked, plan = mask_image(tokens, 0.0, rng, memb, labels)
    assert len(plan.positions) == 2  # one per batch row
    assert (plan.positions >= 1).all()
    for b in range(2):
        pos = plan.positions[plan.sample_idx == b]
        np.testing.assert_allclose(masked.data[b, pos[0]], memb.data, atol=0)


def test_image_mask_full_rate_replaces_all_but_cls():
    rng = np.random.default_rng(5)
    tokens = _image_tokens(rng)
    memb = ad.parameter((8,), rng=rng, std=0.1)
    labels = rng.integers(0, 8, size=(2, 8))
    masked, plan = mask_image(tokens, 1.0, rng, memb, labels)
    assert len(plan.positions) == 16
    np.testing.assert_array_equal(masked.data[:, 0], tokens.data[:, 0])
    for b in range(2):
        for pos in range(1, 9):
            np.testing.assert_array_equal(masked.data[b, pos], memb.data)


def test_image_mask_rate_concentrates():
    rng = np.random.default_rng(6)
    tokens = ad.Tensor(rng.normal(size=(10000, 21, 4)), requires_grad=False)
    memb = ad.parameter((4,), rng=rng, std=0.1)
    labels = rng.integers(0, 8, size=(10000, 20))
    _, plan = mask_image(tokens, 0.15, rng, memb, labels)
    empirical = len(plan.positions) / (10000 * 20)
    assert abs(empirical - 0.15) < 0.01


def test_image_mask_stores_true_patch_classes():
    rng = np.random.default_rng(7)
    tokens = _image_tokens(rng)
    memb = ad.parameter((8,), rng=rng, std=0.1)
    labels = rng.integers(0, 8, size=(2, 8))
    _, plan = mask_image(tokens, 0.5, rng, memb, labels)
    np.testing.assert_array_equal(plan.true_classes,
                                  labels[plan.sample_idx, plan.positions - 1])


def test_mask_embedding_sensitivity():
    """Masked outputs track the embedding parameter; unmasked ones track
    only the original tokens."""
    rng = np.random.default_rng(8)
    tokens = _image_tokens(rng)
    memb = ad.parameter((8,), rng=rng, std=0.1)
    labels = rng.integers(0, 8, size=(2, 8))
    masked1, plan = mask_image(tokens, 0.5, np.random.default_rng(99), memb, labels)
    memb.data += 1.0
    masked2, _ = mask_image(tokens, 0.5, np.random.default_rng(99), memb, labels)
    drawn = np.zeros((2, 9), dtype=bool)
    drawn[plan.sample_idx, plan.positions] = True
    assert not np.array_equal(masked1.data[drawn], masked2.data[drawn])
    np.testing.assert_array_equal(masked1.data[~drawn], masked2.data[~drawn])


def make_cme(seed=0, **kw):
    defaults = dict(hidden_dim=8, vocab_size=VOCAB.size, num_classes=8, patch_size=4,
                    num_layers=2, num_heads=2, mlp_ratio=2, max_seq_len=64)
    defaults.update(kw)
    return CrossModalEncoder(CmeConfig(**defaults), np.random.default_rng(seed))


def test_cme_preserves_shape_and_counts_calls():
    cme = make_cme()
    rng = np.random.default_rng(9)
    x = ad.Tensor(rng.normal(size=(2, 12, 8)))
    before = cme.call_count
    out = cme(x)
    assert out.shape == (2, 12, 8)
    assert cme.call_count == before + 1


def test_cme_length_overflow_rejected():
    cme = make_cme(max_seq_len=10)
    with pytest.raises(FusionError, match="exceeds"):
        cme(ad.Tensor(np.zeros((1, 11, 8))))


def test_both_passes_share_parameters():
    cme = make_cme(seed=1)
    rng = np.random.default_rng(10)
    pass_a = ad.Tensor(rng.normal(size=(1, 10, 8)))
    pass_b = ad.Tensor(rng.normal(size=(1, 12, 8)))
    out_a1, out_b1 = cme(pass_a).data.copy(), cme(pass_b).data.copy()
    cme.stack.blocks[0].attn.wq.w.data[0, 0] += 0.5
    out_a2, out_b2 = cme(pass_a).data, cme(pass_b).data
    assert not np.array_equal(out_a1, out_a2)
    assert not np.array_equal(out_b1, out_b2)


def test_cme_gradient_wrt_input_embedding():
    cme = make_cme(seed=2)
    rng = np.random.default_rng(11)
    weights = rng.normal(size=(1, 6, 8))

    def fn(x):
        return ad.sum_all(ad.mul_const(cme(x), weights))

    err = compare_gradients(fn, [rng.normal(size=(1, 6, 8))])
    assert err < 1e-4


def test_mlm_logits_shape_and_uniformity():
    cme = make_cme(seed=3)
    rng = np.random.default_rng(12)
    ids = caption_ids()
    masked, plan = mask_text(ids, 0.0, rng, **SPECIALS)
    assert len(plan.positions) == 1
    x = ad.Tensor(rng.normal(size=(1, 16 + 5, 8)))
    out = cme(x)
    logits = cme.mlm_logits(out, plan, text_offset=5)
    assert logits.shape == (1, VOCAB.size)

    cme.mlm_head.fc2.w.data[:] = 0.0
    cme.mlm_head.fc2.b.data[:] = 0.0
    logits = cme.mlm_logits(cme(x), plan, text_offset=5)
    np.testing.assert_array_equal(logits.data, 0.0)
    probs = ad.softmax(logits).data
    np.testing.assert_allclose(probs, 1.0 / VOCAB.size, atol=1e-15)


def test_mim_logits_respond_to_text_context():
    """Cross-modal flow: patch-label logits at masked image positions change
    when an unmasked text token embedding changes."""
    cme = make_cme(seed=4)
    rng = np.random.default_rng(13)
    d = 8
    text_len, img_len = 6, 5
    text_tokens = rng.normal(size=(1, text_len, d))
    img_tokens = ad.Tensor(rng.normal(size=(1, img_len, d)), requires_grad=True)
    memb = cme.mask_embedding
    labels = rng.integers(0, 8, size=(1, img_len - 1))
    masked_img, plan = mask_image(img_tokens, 0.5, np.random.default_rng(5), memb, labels)

    def run(text_arr):
        seq = ad.concatenate([ad.Tensor(text_arr), masked_img], axis=1)
        return cme.mim_logits(cme(seq), plan, image_offset=text_len).data.copy()

    base = run(text_tokens)
    bumped = text_tokens.copy()
    bumped[0, 2] += 0.5
    assert not np.array_equal(run(bumped), base)


def test_pass_order_independence():
    cme = make_cme(seed=6)
    rng = np.random.default_rng(14)
    a = ad.Tensor(rng.normal(size=(1, 7, 8)))
    b = ad.Tensor(rng.normal(size=(1, 9, 8)))
    ab = (cme(a).data.copy(), cme(b).data.copy())
    ba = (cme(b).data.copy(), cme(a).data.copy())
    np.testing.assert_array_equal(ab[0], ba[1])
    np.testing.assert_array_equal(ab[1], ba[0])


def test_mim_out_dims_per_head_kind():
    for kind, dim in (("semantic", 8), ("pixel", 48), ("patch", 1), ("feature", 8)):
        cme = make_cme(mim_output=kind)
        assert cme.cfg.mim_out_dim == dim
    with pytest.raises(FusionError):
        make_cme(mim_output="nonsense")


def test_no_maskable_positions_is_error():
    rng = np.random.default_rng(15)
    ids = tokenize("", VOCAB, max_len=8)  # SOS EOS PAD...
    with pytest.raises(FusionError, match="no maskable"):
        mask_text(ids, 0.5, rng, **SPECIALS)
