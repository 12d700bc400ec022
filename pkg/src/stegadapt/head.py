"""Detector head: Bi-LSTM, sigmoid feature gate, mean pooling, linear classifier.

Everything is plain numpy in double precision. The forward pass keeps the
per-stage activations it needs so :func:`backward_batch` can produce exact
analytic gradients for every parameter plus the gradient with respect to the
input features (used to train the builtin encoder's embedding table while it
is unfrozen).

Sequences inside a batch may have different lengths. Padded positions feed
zeros forward and receive zero gradient: the forward direction never reads
beyond a sample's length, and the backward direction runs over per-sample
reversed sequences so padding stays behind the data in both passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NumericError

LOG_EPS = 1e-12


@dataclass(frozen=True)
class HeadConfig:
    d_h: int = 64
    hidden: int = 32
    layers: int = 1
    gate_bypass: bool = False
    dropout_keep: float = 0.5

    def __post_init__(self):
        if self.d_h < 1 or self.hidden < 1:
            raise ValueError("d_h and hidden must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "d_h": self.d_h,
            "hidden": self.hidden,
            "layers": self.layers,
            "gate_bypass": self.gate_bypass,
            "dropout_keep": self.dropout_keep,
        }


@dataclass
class HeadParams:
    """All trainable head tensors, keyed by name.

    LSTM matrices stack the input, forget, output, and cell-candidate blocks
    along the first axis, in that order (the three sigmoid gates first, so
    one activation call covers them); forget biases start at 1.
    """

    config: HeadConfig
    tensors: dict[str, np.ndarray]

    def clone(self) -> "HeadParams":
        return HeadParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def lstm_keys(self, layer: int, direction: str) -> tuple[str, str, str]:
        stem = f"lstm{layer}.{direction}"
        return f"{stem}.wx", f"{stem}.wh", f"{stem}.b"


def init_params(d_h: int, hidden: int, seed, layers: int = 1, config: HeadConfig | None = None) -> HeadParams:
    """Glorot-uniform matrices, zero biases except forget-gate biases at 1."""
    if config is None:
        config = HeadConfig(d_h=d_h, hidden=hidden, layers=layers)
    rng = np.random.default_rng(seed)
    h = hidden
    tensors: dict[str, np.ndarray] = {}

    def glorot(rows, cols, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(rows, cols))

    for layer in range(layers):
        d_in = d_h if layer == 0 else 2 * h
        for direction in ("fwd", "bwd"):
            stem = f"lstm{layer}.{direction}"
            tensors[f"{stem}.wx"] = glorot(4 * h, d_in, d_in, h)
            tensors[f"{stem}.wh"] = glorot(4 * h, h, h, h)
            bias = np.zeros(4 * h)
            bias[h : 2 * h] = 1.0
            tensors[f"{stem}.b"] = bias
    tensors["gate.w"] = glorot(2 * h, 2 * h, 2 * h, 2 * h)
    tensors["gate.b"] = np.zeros(2 * h)
    tensors["cls.w"] = glorot(2, 2 * h, 2 * h, 2)
    tensors["cls.b"] = np.zeros(2)
    return HeadParams(config, tensors)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: cannot overflow, saturates to exactly 0.0 / 1.0.
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def _reverse_padded(x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each row within its true length; padding stays at the tail."""
    b, t = x.shape[:2]
    src = lengths[:, None] - 1 - np.arange(t)[None, :]
    valid = src >= 0
    out = x[np.arange(b)[:, None], np.where(valid, src, 0)]
    out[~valid] = 0.0
    return out


@dataclass
class _PairCache:
    """Forward and reversed-direction activations, both directions stacked.

    Index 0 of the leading axis is the pass over the input as-is, index 1
    the pass over per-sample reversed sequences; stacking lets one matmul or
    ufunc call serve both directions each timestep. Per-timestep activations
    stay as lists of (2, B, .) arrays so the recurrence never copies into
    strided slices; ``hidden`` is stacked to (2, B, T, h) for the layer
    output and the weight-gradient closures.
    """

    x: np.ndarray
    sig: list            # per t: (2, B, 3h) input/forget/output activations
    cand: list           # per t: (2, B, h) tanh cell candidate
    cell: list
    tanh_cell: list
    hidden: np.ndarray   # (2, B, T, h)


def _run_directions(x_pair: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray) -> _PairCache:
    _, batch, t_max, _ = x_pair.shape
    h = wh.shape[2]
    zx = np.matmul(x_pair, wx.transpose(0, 2, 1)[:, None]) + b[:, None, None, :]
    sig, cand, cell, tanh_cell, hidden = [], [], [], [], []
    wh_t = np.ascontiguousarray(wh.transpose(0, 2, 1))
    h_prev = np.zeros((2, batch, h))
    c_prev = np.zeros((2, batch, h))
    for t in range(t_max):
        z = zx[:, :, t] + np.matmul(h_prev, wh_t)
        sig_t = _sigmoid(z[:, :, : 3 * h])
        cand_t = np.tanh(z[:, :, 3 * h :])
        cell_t = sig_t[:, :, h : 2 * h] * c_prev + sig_t[:, :, :h] * cand_t
        tanh_t = np.tanh(cell_t)
        h_t = sig_t[:, :, 2 * h :] * tanh_t
        sig.append(sig_t)
        cand.append(cand_t)
        cell.append(cell_t)
        tanh_cell.append(tanh_t)
        hidden.append(h_t)
        h_prev, c_prev = h_t, cell_t
    return _PairCache(x_pair, sig, cand, cell, tanh_cell, np.stack(hidden, axis=2))


def _stacked_lstm(params: "HeadParams", layer: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tensors = params.tensors
    kf = params.lstm_keys(layer, "fwd")
    kb = params.lstm_keys(layer, "bwd")
    return (
        np.stack([tensors[kf[0]], tensors[kb[0]]]),
        np.stack([tensors[kf[1]], tensors[kb[1]]]),
        np.stack([tensors[kf[2]], tensors[kb[2]]]),
    )


@dataclass
class BatchTrace:
    """Activations for one forward pass over a padded batch."""

    mode: str
    lengths: np.ndarray
    mask: np.ndarray
    layer_inputs: list
    pair_caches: list
    states: np.ndarray       # Bi-LSTM outputs, (B, T, 2h)
    gate: np.ndarray         # sigmoid gate activations
    gated: np.ndarray        # gate * states
    pooled_raw: np.ndarray   # mean over valid steps, (B, 2h)
    dropout_mask: np.ndarray | None
    pooled: np.ndarray       # classifier input (post dropout in train mode)
    logits: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class ForwardTrace:
    """Single-sample view of a forward pass (spec-level trace)."""

    states: np.ndarray
    gate: np.ndarray
    gated: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def forward_batch(
    features: np.ndarray,
    lengths: np.ndarray,
    params: HeadParams,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
) -> BatchTrace:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    if features.ndim != 3 or features.shape[2] != cfg.d_h:
        raise ValueError(f"features must be (B, T, {cfg.d_h}), got {features.shape}")
    lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths < 1) or np.any(lengths > features.shape[1]):
        raise ValueError("lengths must be in 1..T")
    batch, t_max = features.shape[:2]
    mask = np.arange(t_max)[None, :] < lengths[:, None]

    x = np.asarray(features, dtype=np.float64)
    layer_inputs = []
    pair_caches = []
    for layer in range(cfg.layers):
        layer_inputs.append(x)
        wx, wh, b = _stacked_lstm(params, layer)
        x_pair = np.stack([x, _reverse_padded(x, lengths)])
        cache = _run_directions(x_pair, wx, wh, b)
        pair_caches.append(cache)
        x = np.concatenate(
            [cache.hidden[0], _reverse_padded(cache.hidden[1], lengths)], axis=-1
        )
    states = x
    if not np.isfinite(states[mask]).all():
        raise NumericError("bilstm")

    if cfg.gate_bypass:
        gate = np.ones_like(states)
    else:
        pre = states @ params.tensors["gate.w"].T + params.tensors["gate.b"]
        gate = _sigmoid(pre)
    gated = gate * states
    if not np.isfinite(gated[mask]).all():
        raise NumericError("gate")

    pooled_raw = (gated * mask[..., None]).sum(axis=1) / lengths[:, None]
    dropout_mask = None
    pooled = pooled_raw
    if mode == "train" and cfg.dropout_keep < 1.0:
        if dropout_rng is None:
            raise ValueError("train mode needs a dropout rng")
        keep = dropout_rng.random(pooled_raw.shape) < cfg.dropout_keep
        dropout_mask = keep / cfg.dropout_keep
        pooled = pooled_raw * dropout_mask

    logits = pooled @ params.tensors["cls.w"].T + params.tensors["cls.b"]
    probs = _softmax(logits)
    if not np.isfinite(probs).all():
        raise NumericError("classifier")
    return BatchTrace(
        mode=mode,
        lengths=lengths,
        mask=mask,
        layer_inputs=layer_inputs,
        pair_caches=pair_caches,
        states=states,
        gate=gate,
        gated=gated,
        pooled_raw=pooled_raw,
        dropout_mask=dropout_mask,
        pooled=pooled,
        logits=logits,
        probs=probs,
    )


def forward(
    features: np.ndarray,
    params: HeadParams,
    mode: str = "eval",
    dropout_seed=None,
) -> ForwardTrace:
    """Run one sample; see :func:`forward_batch` for the batched version."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("forward expects a (len, d_h) feature matrix")
    rng = None
    if mode == "train" and params.config.dropout_keep < 1.0:
        rng = np.random.default_rng(dropout_seed)
    trace = forward_batch(features[None], np.array([features.shape[0]]), params, mode, rng)
    return ForwardTrace(
        states=trace.states[0],
        gate=trace.gate[0],
        gated=trace.gated[0],
        pooled=trace.pooled[0],
        logits=trace.logits[0],
        probs=trace.probs[0],
    )


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def loss_ce(pred: Sequence[float], label: int) -> float:
    """Binary cross-entropy with the stego probability, clamped before logs."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    p = float(np.clip(pred[1], LOG_EPS, 1.0 - LOG_EPS))
    return -(label * np.log(p) + (1 - label) * np.log(1.0 - p))


def batch_loss_ce(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean cross-entropy over a batch."""
    labels = np.asarray(labels)
    if probs.shape[0] != labels.shape[0] or probs.shape[0] == 0:
        raise ValueError("probs and labels must be nonempty and aligned")
    p = np.clip(probs[:, 1], LOG_EPS, 1.0 - LOG_EPS)
    return float(np.mean(-(labels * np.log(p) + (1 - labels) * np.log(1.0 - p))))


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _bptt_directions(cache: _PairCache, dh_out: np.ndarray, wx: np.ndarray, wh: np.ndarray):
    """Backprop through both stacked directions at once.

    ``dh_out`` is (2, B, T, h) with the reversed direction's output gradient
    already mapped into its reversed frame. Returns weight gradients stacked
    per direction on the leading axis and input gradients in the same frames.
    """
    _, batch, t_max, h = cache.hidden.shape
    dz_list: list = [None] * t_max
    dh_carry = np.zeros((2, batch, h))
    dc_carry = np.zeros((2, batch, h))
    zeros = np.zeros((2, batch, h))
    for t in range(t_max - 1, -1, -1):
        sig_t = cache.sig[t]
        tanh_t = cache.tanh_cell[t]
        cand_t = cache.cand[t]
        dh = dh_out[:, :, t] + dh_carry
        dc = dc_carry + dh * sig_t[:, :, 2 * h :] * (1.0 - tanh_t * tanh_t)
        d_pre = np.empty((2, batch, 3 * h))
        d_pre[:, :, :h] = dc * cand_t
        d_pre[:, :, h : 2 * h] = dc * (cache.cell[t - 1] if t > 0 else zeros)
        d_pre[:, :, 2 * h :] = dh * tanh_t
        dz = np.empty((2, batch, 4 * h))
        dz[:, :, : 3 * h] = d_pre * sig_t * (1.0 - sig_t)
        dz[:, :, 3 * h :] = dc * sig_t[:, :, :h] * (1.0 - cand_t * cand_t)
        dz_list[t] = dz
        dh_carry = np.matmul(dz, wh)
        dc_carry = dc * sig_t[:, :, h : 2 * h]
    dz_all = np.stack(dz_list, axis=2)
    h_prev = np.zeros_like(cache.hidden)
    h_prev[:, :, 1:] = cache.hidden[:, :, :-1]
    flat_dz = np.ascontiguousarray(dz_all.reshape(2, batch * t_max, 4 * h))
    dwx = np.matmul(flat_dz.transpose(0, 2, 1), cache.x.reshape(2, batch * t_max, -1))
    dwh = np.matmul(flat_dz.transpose(0, 2, 1), h_prev.reshape(2, batch * t_max, h))
    db = dz_all.sum(axis=(1, 2))
    dx = np.matmul(dz_all, wx[:, None])
    return dwx, dwh, db, dx


def backward_batch(
    trace: BatchTrace, labels: Sequence[int], params: HeadParams
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the batch-mean cross-entropy for every head tensor.

    Also returns the gradient with respect to the input features, zeroed on
    padded positions, for an unfrozen encoder to consume.
    """
    cfg = params.config
    labels = np.asarray(labels)
    batch = trace.probs.shape[0]
    if labels.shape[0] != batch:
        raise ValueError("labels must align with the traced batch")
    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}

    onehot = np.zeros_like(trace.probs)
    onehot[np.arange(batch), labels] = 1.0
    dlogits = (trace.probs - onehot) / batch

    grads["cls.w"][:] = dlogits.T @ trace.pooled
    grads["cls.b"][:] = dlogits.sum(axis=0)
    dpooled = dlogits @ params.tensors["cls.w"]
    if trace.dropout_mask is not None:
        dpooled = dpooled * trace.dropout_mask

    scale = np.where(trace.mask, 1.0 / trace.lengths[:, None], 0.0)
    dgated = dpooled[:, None, :] * scale[..., None]

    if cfg.gate_bypass:
        dstates = dgated
    else:
        dw = dgated * trace.states
        dpre = dw * trace.gate * (1.0 - trace.gate)
        flat_dpre = dpre.reshape(-1, dpre.shape[-1])
        flat_states = trace.states.reshape(-1, trace.states.shape[-1])
        grads["gate.w"][:] = flat_dpre.T @ flat_states
        grads["gate.b"][:] = dpre.sum(axis=(0, 1))
        dstates = dgated * trace.gate + dpre @ params.tensors["gate.w"]

    h = cfg.hidden
    d_upper = dstates
    for layer in range(cfg.layers - 1, -1, -1):
        dh_pair = np.stack([d_upper[..., :h], _reverse_padded(d_upper[..., h:], trace.lengths)])
        wx, wh, _ = _stacked_lstm(params, layer)
        dwx, dwh, db, dx = _bptt_directions(trace.pair_caches[layer], dh_pair, wx, wh)
        for d, direction in enumerate(("fwd", "bwd")):
            keys = params.lstm_keys(layer, direction)
            grads[keys[0]][:] = dwx[d]
            grads[keys[1]][:] = dwh[d]
            grads[keys[2]][:] = db[d]
        d_upper = dx[0] + _reverse_padded(dx[1], trace.lengths)
    d_features = d_upper * trace.mask[..., None]
    return grads, d_features


def backward(
    trace: ForwardTrace | BatchTrace,
    features: np.ndarray,
    params: HeadParams,
    label,
) -> dict[str, np.ndarray]:
    """Single-sample convenience wrapper.

    A :class:`ForwardTrace` carries no recurrence caches, so the batched
    trace is recomputed in eval mode (dropout free); pass a
    :class:`BatchTrace` to differentiate an actual training-mode pass.
    """
    if isinstance(trace, BatchTrace):
        grads, _ = backward_batch(trace, label, params)
        return grads
    features = np.asarray(features, dtype=np.float64)
    batch_trace = forward_batch(features[None], np.array([features.shape[0]]), params, mode="eval")
    grads, _ = backward_batch(batch_trace, [label], params)
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def clone(self) -> "AdamState":
        return AdamState(
            step=self.step,
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[Mapping[str, np.ndarray], AdamState]:
    """Bias-corrected Adam, updating the parameter arrays in place."""
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, grad in grads.items():
        tensor = params[name]
        m = state.m.setdefault(name, np.zeros_like(tensor))
        v = state.v.setdefault(name, np.zeros_like(tensor))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * np.square(grad)
        tensor -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return params, state
