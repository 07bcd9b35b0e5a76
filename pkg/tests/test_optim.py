"""Adam trajectory and learning-rate schedule checks."""

import math

import numpy as np
import pytest

from textreid.autodiff import NonFiniteError, ShapeError, Tensor
from textreid.optim import LrSchedule, adam_step, init_adam, lr_at


def _params(values):
    return [Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for v in values]


def test_zero_gradient_leaves_params_unchanged():
    params = _params([np.array([1.0, -2.0]), np.array(3.0)])
    before = [p.data.copy() for p in params]
    state = init_adam(params)
    adam_step(params, [np.zeros(2), np.zeros(())], state, lr=1e-3)
    for p, b in zip(params, before):
        np.testing.assert_array_equal(p.data, b)
    for m, v in zip(state.first_moment, state.second_moment):
        assert not m.any() and not v.any()
    assert state.step_count == 1


def test_first_step_moves_by_lr_over_one_plus_eps():
    params = _params([np.array(0.0)])
    state = init_adam(params, eps=1e-8)
    adam_step(params, [np.asarray(1.0)], state, lr=1e-5)
    expected = -1e-5 * (1.0 / (1.0 + 1e-8))
    assert params[0].data == pytest.approx(expected, rel=1e-12)


def reference_adam(x0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Hand-coded scalar Adam, written directly from the update rule."""
    x, m, v = x0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(x)
    return out


def test_ten_steps_match_reference_adam():
    rng = np.random.default_rng(11)
    grads = rng.normal(size=10)
    params = _params([np.array(0.7)])
    state = init_adam(params)
    trajectory = []
    for g in grads:
        adam_step(params, [np.asarray(g)], state, lr=3e-3)
        trajectory.append(float(params[0].data))
    expected = reference_adam(0.7, grads, lr=3e-3)
    np.testing.assert_allclose(trajectory, expected, rtol=0, atol=1e-12)


def test_adam_rejects_bad_inputs():
    params = _params([np.zeros(3)])
    state = init_adam(params)
    with pytest.raises(ShapeError):
        adam_step(params, [np.zeros(4)], state, lr=1e-3)
    with pytest.raises(NonFiniteError):
        adam_step(params, [np.array([1.0, np.nan, 0.0])], state, lr=1e-3)
    with pytest.raises(ValueError):
        adam_step(params, [np.zeros(3)], state, lr=0.0)


def test_step_count_increments():
    params = _params([np.array(0.0)])
    state = init_adam(params)
    for expected in range(1, 6):
        adam_step(params, [np.asarray(0.1)], state, lr=1e-4)
        assert state.step_count == expected


DESK_SCHED = LrSchedule(base_lr=1e-5, warmup_start_lr=1e-6, warmup_epochs=5,
                        total_epochs=60, steps_per_epoch=10)


def test_lr_starts_at_warmup_start():
    assert lr_at(0, DESK_SCHED) == pytest.approx(1e-6, rel=0, abs=0)


def test_lr_first_post_warmup_step_is_base():
    assert lr_at(DESK_SCHED.warmup_steps, DESK_SCHED) == pytest.approx(1e-5, rel=1e-15)


def test_lr_post_warmup_midpoint_is_half_base():
    w = DESK_SCHED.warmup_steps
    mid = w + (DESK_SCHED.total_steps - w) // 2
    assert lr_at(mid, DESK_SCHED) == pytest.approx(5e-6, rel=1e-12)


def test_lr_continuous_at_boundary():
    w = DESK_SCHED.warmup_steps
    just_before = lr_at(w - 1, DESK_SCHED)
    at = lr_at(w, DESK_SCHED)
    assert just_before < at
    assert at - just_before < (1e-5 - 1e-6) / DESK_SCHED.warmup_steps + 1e-12


def test_lr_non_increasing_after_warmup():
    values = [lr_at(s, DESK_SCHED) for s in range(DESK_SCHED.warmup_steps,
                                                  DESK_SCHED.total_steps)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_out_of_range_rejected():
    with pytest.raises(ValueError):
        lr_at(-1, DESK_SCHED)
    with pytest.raises(ValueError):
        lr_at(DESK_SCHED.total_steps, DESK_SCHED)
