from __future__ import annotations

import numpy as np
import pytest

from stegadapt.errors import NumericError
from stegadapt.head import (
    AdamState,
    HeadConfig,
    HeadParams,
    adam_step,
    backward,
    backward_batch,
    batch_loss_ce,
    forward,
    forward_batch,
    init_params,
    loss_ce,
)
from oracles import central_difference_grads, max_gradient_mismatch


def _pad(feature_list):
    lengths = np.array([f.shape[0] for f in feature_list])
    width = lengths.max()
    out = np.zeros((len(feature_list), width, feature_list[0].shape[1]))
    for i, f in enumerate(feature_list):
        out[i, : f.shape[0]] = f
    return out, lengths


def _random_instance(seed, d_h=8, hidden=4, n=3, max_len=5, layers=1):
    rng = np.random.default_rng(seed)
    params = init_params(d_h, hidden, seed=seed + 1, layers=layers)
    feats = [rng.normal(size=(int(rng.integers(1, max_len + 1)), d_h)) for _ in range(n)]
    labels = rng.integers(0, 2, n).tolist()
    return params, feats, labels


# ---------------------------------------------------------------------------
# init_params
# ---------------------------------------------------------------------------


def test_init_deterministic_by_seed():
    a = init_params(8, 4, seed=3)
    b = init_params(8, 4, seed=3)
    assert a.tensors.keys() == b.tensors.keys()
    for k in a.tensors:
        np.testing.assert_array_equal(a.tensors[k], b.tensors[k])


def test_init_forget_bias_is_one():
    params = init_params(8, 4, seed=0)
    bias = params.tensors["lstm0.fwd.b"]
    np.testing.assert_array_equal(bias[4:8], 1.0)
    np.testing.assert_array_equal(bias[:4], 0.0)
    np.testing.assert_array_equal(bias[8:], 0.0)


def test_init_input_matrix_bound():
    d_h, h = 8, 4
    params = init_params(d_h, h, seed=0)
    bound = np.sqrt(6.0 / (d_h + h))
    wx = params.tensors["lstm0.fwd.wx"]
    assert np.all(np.abs(wx) <= bound)


# ---------------------------------------------------------------------------
# forward trivial cases
# ---------------------------------------------------------------------------


def test_zero_gate_weights_halve_states():
    params = init_params(6, 3, seed=1)
    params.tensors["gate.w"][:] = 0.0
    params.tensors["gate.b"][:] = 0.0
    feats = np.random.default_rng(0).normal(size=(4, 6))
    trace = forward(feats, params)
    np.testing.assert_allclose(trace.gate, 0.5)
    np.testing.assert_allclose(trace.gated, 0.5 * trace.states)


def test_zero_classifier_gives_uniform_prediction():
    params = init_params(6, 3, seed=1)
    params.tensors["cls.w"][:] = 0.0
    params.tensors["cls.b"][:] = 0.0
    trace = forward(np.ones((2, 6)), params)
    np.testing.assert_allclose(trace.probs, [0.5, 0.5])


def test_zero_dynamics_give_zero_states():
    params = init_params(6, 3, seed=1)
    for key, tensor in params.tensors.items():
        if key.startswith("lstm"):
            tensor[:] = 0.0
    trace = forward(np.ones((1, 6)), params)
    np.testing.assert_array_equal(trace.states, 0.0)
    np.testing.assert_array_equal(trace.pooled, 0.0)


def test_forward_trace_invariants():
    params, feats, _ = _random_instance(5)
    trace = forward(feats[0], params)
    assert abs(trace.probs.sum() - 1.0) < 1e-9
    assert np.all((trace.gate > 0) & (trace.gate < 1))
    assert np.all(np.abs(trace.gated) <= np.abs(trace.states) + 1e-15)
    assert trace.states.shape == (feats[0].shape[0], 2 * params.config.hidden)


def test_forward_rejects_wrong_width():
    params = init_params(6, 3, seed=1)
    with pytest.raises(ValueError):
        forward(np.ones((2, 5)), params)


def test_forward_raises_numeric_error_on_nonfinite():
    params = init_params(4, 2, seed=1)
    with pytest.raises(NumericError):
        forward(np.full((2, 4), np.nan), params)


def test_batch_matches_per_sample_forward():
    params, feats, _ = _random_instance(7, n=4)
    padded, lengths = _pad(feats)
    batch = forward_batch(padded, lengths, params)
    for i, f in enumerate(feats):
        single = forward(f, params)
        np.testing.assert_allclose(batch.probs[i], single.probs, atol=1e-12)
        np.testing.assert_allclose(batch.pooled[i], single.pooled, atol=1e-12)
        np.testing.assert_allclose(batch.states[i, : f.shape[0]], single.states, atol=1e-12)


def test_gate_bypass_equals_forced_ones_bit_exact():
    base = init_params(6, 3, seed=2)
    bypass = HeadParams(HeadConfig(d_h=6, hidden=3, gate_bypass=True), {k: v.copy() for k, v in base.tensors.items()})
    forced = base.clone()
    forced.tensors["gate.w"][:] = 0.0
    forced.tensors["gate.b"][:] = 1e9  # sigmoid saturates to exactly 1.0 in float64
    feats = np.random.default_rng(3).normal(size=(5, 6))
    a = forward(feats, bypass)
    b = forward(feats, forced)
    assert a.probs.tobytes() == b.probs.tobytes()
    assert a.gated.tobytes() == b.gated.tobytes()


def test_permutation_sensitivity_sanity():
    # Generic weights notice token order; all-zero LSTM weights cannot.
    params, feats, _ = _random_instance(23, n=1, max_len=6)
    f = feats[0]
    if f.shape[0] < 2:
        f = np.vstack([f, f + 1.0])
    permuted = f[::-1].copy()
    assert not np.allclose(forward(f, params).probs, forward(permuted, params).probs)

    zeroed = params.clone()
    for key, tensor in zeroed.tensors.items():
        if key.startswith("lstm"):
            tensor[:] = 0.0
    np.testing.assert_array_equal(
        forward(f, zeroed).probs, forward(permuted, zeroed).probs
    )


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_loss_uniform_prediction_is_ln2():
    assert loss_ce([0.5, 0.5], 1) == pytest.approx(np.log(2.0), abs=1e-12)


def test_loss_perfect_prediction_is_near_zero():
    assert loss_ce([0.0, 1.0], 1) == pytest.approx(0.0, abs=1e-9)


def test_loss_confident_mistake():
    assert loss_ce([0.9, 0.1], 1) == pytest.approx(-np.log(0.1), abs=1e-12)
    assert loss_ce([0.9, 0.1], 1) == pytest.approx(2.302585, abs=1e-6)


def test_loss_floor_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.random()
        for y in (0, 1):
            assert loss_ce([1 - p, p], y) >= 0.0


def test_batch_loss_is_mean():
    probs = np.array([[0.5, 0.5], [0.1, 0.9]])
    expected = (loss_ce(probs[0], 1) + loss_ce(probs[1], 0)) / 2
    assert batch_loss_ce(probs, [1, 0]) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_logit_gradient_closed_form():
    params, feats, _ = _random_instance(11, n=1)
    padded, lengths = _pad(feats[:1])
    trace = forward_batch(padded, lengths, params)
    grads, _ = backward_batch(trace, [1], params)
    # cls.b gradient equals dloss/dlogits for a single sample.
    expected = trace.probs[0] - np.array([0.0, 1.0])
    np.testing.assert_allclose(grads["cls.b"], expected, atol=1e-12)


def test_gradients_match_finite_differences():
    for seed in (0, 1, 2):
        params, feats, labels = _random_instance(seed, n=2, max_len=5)
        padded, lengths = _pad(feats)

        def loss_fn():
            trace = forward_batch(padded, lengths, params, mode="eval")
            return batch_loss_ce(trace.probs, labels)

        trace = forward_batch(padded, lengths, params, mode="eval")
        analytic, d_feats = backward_batch(trace, labels, params)
        numeric = central_difference_grads(loss_fn, params.tensors)
        assert max_gradient_mismatch(analytic, numeric) < 1e-4
        numeric_feats = central_difference_grads(loss_fn, {"features": padded})
        assert max_gradient_mismatch({"features": d_feats}, numeric_feats) < 1e-4


def test_gradients_match_finite_differences_two_layers():
    params, feats, labels = _random_instance(4, n=2, max_len=4, layers=2)
    padded, lengths = _pad(feats)

    def loss_fn():
        trace = forward_batch(padded, lengths, params, mode="eval")
        return batch_loss_ce(trace.probs, labels)

    trace = forward_batch(padded, lengths, params, mode="eval")
    analytic, _ = backward_batch(trace, labels, params)
    numeric = central_difference_grads(loss_fn, params.tensors)
    assert max_gradient_mismatch(analytic, numeric) < 1e-4


def test_gate_bypass_gradients_are_zero_for_gate():
    params, feats, labels = _random_instance(6, n=2)
    bypass = HeadParams(HeadConfig(d_h=8, hidden=4, gate_bypass=True), params.tensors)
    padded, lengths = _pad(feats)
    trace = forward_batch(padded, lengths, bypass)
    grads, _ = backward_batch(trace, labels, bypass)
    np.testing.assert_array_equal(grads["gate.w"], 0.0)
    np.testing.assert_array_equal(grads["gate.b"], 0.0)


def test_single_sample_backward_wrapper():
    params, feats, labels = _random_instance(9, n=1)
    grads = backward(forward(feats[0], params), feats[0], params, labels[0])
    padded, lengths = _pad(feats[:1])
    trace = forward_batch(padded, lengths, params)
    expected, _ = backward_batch(trace, labels[:1], params)
    for key in expected:
        np.testing.assert_allclose(grads[key], expected[key], atol=1e-12)


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------


def test_eval_forward_is_dropout_free_and_deterministic():
    params, feats, _ = _random_instance(13, n=1)
    a = forward(feats[0], params, mode="eval")
    b = forward(feats[0], params, mode="eval")
    assert a.pooled.tobytes() == b.pooled.tobytes()


def test_train_dropout_preserves_expectation():
    params, feats, _ = _random_instance(17, n=1)
    eval_pooled = forward(feats[0], params, mode="eval").pooled
    padded, lengths = _pad(feats[:1])
    rng = np.random.default_rng(99)
    total = np.zeros_like(eval_pooled)
    n = 10_000
    for _ in range(n):
        trace = forward_batch(padded, lengths, params, mode="train", dropout_rng=rng)
        total += trace.pooled[0]
    mean = total / n
    sigma = np.abs(eval_pooled) / np.sqrt(n)
    assert np.all(np.abs(mean - eval_pooled) <= 3.0 * sigma + 1e-12)


def test_train_mode_requires_rng():
    params, feats, _ = _random_instance(19, n=1)
    padded, lengths = _pad(feats[:1])
    with pytest.raises(ValueError):
        forward_batch(padded, lengths, params, mode="train")


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------


def test_adam_first_step_magnitude():
    params = {"x": np.array([1.0])}
    state = AdamState()
    adam_step(params, {"x": np.array([1.0])}, state, lr=0.1)
    assert params["x"][0] == pytest.approx(1.0 - 0.1, abs=1e-6)
    assert state.step == 1


def test_adam_zero_gradient_is_noop():
    params = {"x": np.arange(4.0)}
    before = params["x"].copy()
    state = AdamState()
    adam_step(params, {"x": np.zeros(4)}, state, lr=0.5)
    np.testing.assert_array_equal(params["x"], before)


def test_adam_trajectories_deterministic():
    def run():
        params = {"x": np.array([0.3, -0.7])}
        state = AdamState()
        rng = np.random.default_rng(5)
        for _ in range(20):
            adam_step(params, {"x": rng.normal(size=2)}, state, lr=0.01)
        return params["x"]

    np.testing.assert_array_equal(run(), run())
