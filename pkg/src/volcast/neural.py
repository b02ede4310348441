"""A small deterministic LSTM engine built on numpy.

Everything runs in float64 on the CPU.  The network is a stack of LSTM
layers followed by a one-unit dense head (rectified by default so that
predictions stay non-negative).  Gates use the logistic sigmoid; the
configured layer activation is applied both to the candidate cell state
and to the cell state on its way into the hidden state, matching the
usual recurrent-layer convention.

Dropout comes in two flavours controlled by :class:`NetworkConfig`:
inverted dropout on layer outputs between layers, and a variational
(per-sequence, fixed across timesteps) mask on the previous hidden state
entering the gates.  Masks are materialized explicitly through
:func:`make_masks` so that gradients can be checked against finite
differences with the noise held fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericError

GATES = ("f", "i", "o", "c")
FORMAT_VERSION = 1

__all__ = [
    "GATES",
    "LstmLayerParams",
    "NetworkConfig",
    "LstmNetwork",
    "DropoutMasks",
    "TrainingHistory",
    "AdamState",
    "SearchSpace",
    "SearchResult",
    "cell_forward",
    "forward",
    "predict",
    "make_masks",
    "loss",
    "backward",
    "adam_step",
    "train",
    "random_search",
    "save_network",
    "load_network",
]


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise DataError(f"unknown activation {kind!r}")


def _deriv_from_output(kind: str, out: np.ndarray) -> np.ndarray:
    """Derivative of the activation expressed through its output value."""
    if kind == "tanh":
        return 1.0 - out * out
    return (out > 0.0).astype(np.float64)


@dataclass
class LstmLayerParams:
    """Weights of one LSTM layer, stored per gate.

    ``U[g]`` maps the layer input (shape hidden x input width), ``V[g]``
    the previous hidden state (hidden x hidden), and ``b[g]`` is the
    gate bias, for g in ``GATES`` order f, i, o, c.
    """

    hidden_size: int
    U: dict
    V: dict
    b: dict

    def __post_init__(self) -> None:
        h = self.hidden_size
        if h <= 0:
            raise DataError("hidden_size must be positive")
        widths = {self.U[g].shape[1] for g in GATES}
        if len(widths) != 1:
            raise DataError("gate input widths disagree")
        for g in GATES:
            if self.U[g].shape != (h, self.input_size):
                raise DataError(f"U_{g} has shape {self.U[g].shape}")
            if self.V[g].shape != (h, h):
                raise DataError(f"V_{g} has shape {self.V[g].shape}")
            if self.b[g].shape != (h,):
                raise DataError(f"b_{g} has shape {self.b[g].shape}")
            for arr in (self.U[g], self.V[g], self.b[g]):
                if not np.all(np.isfinite(arr)):
                    raise NumericError(f"non-finite entries in gate {g}")

    @property
    def input_size(self) -> int:
        return self.U["f"].shape[1]

    def stacked(self):
        """Gate matrices concatenated in f,i,o,c order for fast batched steps."""
        u = np.concatenate([self.U[g] for g in GATES], axis=0)
        v = np.concatenate([self.V[g] for g in GATES], axis=0)
        bias = np.concatenate([self.b[g] for g in GATES])
        return u, v, bias


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture and training settings for an :class:`LstmNetwork`."""

    input_size: int
    hidden_sizes: tuple = (128, 128)
    activations: tuple = ("tanh", "tanh")
    dropout: tuple = (0.1, 0.1)
    recurrent_dropout: float = 0.1
    learning_rate: float = 0.001
    loss: str = "mse"
    epochs: int = 100
    batch_size: int = 64
    patience: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "dropout", tuple(float(d) for d in self.dropout))
        object.__setattr__(self, "loss", str(self.loss).lower())
        if self.input_size <= 0:
            raise DataError("input_size must be positive")
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise DataError("hidden sizes must be positive")
        n = len(self.hidden_sizes)
        if len(self.activations) != n or len(self.dropout) != n:
            raise DataError("need one activation and one dropout rate per layer")
        for a in self.activations:
            if a not in ("tanh", "relu"):
                raise DataError(f"unknown activation {a!r}")
        for d in self.dropout:
            if not 0.0 <= d < 1.0:
                raise DataError("dropout rates must lie in [0, 1)")
        if not 0.0 <= self.recurrent_dropout < 1.0:
            raise DataError("recurrent dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise DataError("learning rate must be positive")
        if self.loss not in ("mse", "mae"):
            raise DataError(f"unknown loss {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch size must be at least 1")
        if self.patience < 0:
            raise DataError("patience must be non-negative")


@dataclass
class LstmNetwork:
    """Stacked LSTM layers plus a one-unit dense head."""

    config: NetworkConfig
    layers: list
    dense_w: np.ndarray
    dense_b: np.ndarray
    output_activation: str = "relu"

    def __post_init__(self) -> None:
        if self.output_activation not in ("relu", "linear"):
            raise DataError(f"unknown output activation {self.output_activation!r}")
        last = self.config.hidden_sizes[-1]
        if self.dense_w.shape != (last,) or self.dense_b.shape != (1,):
            raise DataError("dense head shapes inconsistent with the last layer")

    @classmethod
    def initialize(cls, config: NetworkConfig, seed=None) -> "LstmNetwork":
        """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per matrix.

        Forget-gate biases start at 1.0 so early training does not flush
        the cell state.  The dense bias starts at 0.01 so a rectified
        output head is open from the first step (with a zero bias the
        head can start saturated at zero for every sample, where its
        gradient vanishes and training never moves).  All other biases
        start at zero.
        """
        rng = np.random.default_rng(config.seed if seed is None else seed)
        layers = []
        width = config.input_size
        for h in config.hidden_sizes:
            u_lim = 1.0 / np.sqrt(width)
            v_lim = 1.0 / np.sqrt(h)
            U, V, b = {}, {}, {}
            for g in GATES:
                U[g] = rng.uniform(-u_lim, u_lim, size=(h, width))
                V[g] = rng.uniform(-v_lim, v_lim, size=(h, h))
                b[g] = np.ones(h) if g == "f" else np.zeros(h)
            layers.append(LstmLayerParams(hidden_size=h, U=U, V=V, b=b))
            width = h
        d_lim = 1.0 / np.sqrt(width)
        dense_w = rng.uniform(-d_lim, d_lim, size=width)
        return cls(config=config, layers=layers, dense_w=dense_w, dense_b=np.full(1, 0.01))

    def parameters(self) -> dict:
        """Live parameter arrays keyed by name, in serialization order.

        Order: for each layer, for each gate f,i,o,c: U, V, b; then the
        dense weights and bias.  Mutating the returned arrays mutates
        the network.
        """
        out = {}
        for k, layer in enumerate(self.layers):
            for g in GATES:
                out[f"layer{k}.U_{g}"] = layer.U[g]
                out[f"layer{k}.V_{g}"] = layer.V[g]
                out[f"layer{k}.b_{g}"] = layer.b[g]
        out["dense.w"] = self.dense_w
        out["dense.b"] = self.dense_b
        return out

    def copy(self) -> "LstmNetwork":
        layers = [
            LstmLayerParams(
                hidden_size=l.hidden_size,
                U={g: l.U[g].copy() for g in GATES},
                V={g: l.V[g].copy() for g in GATES},
                b={g: l.b[g].copy() for g in GATES},
            )
            for l in self.layers
        ]
        return LstmNetwork(
            config=self.config,
            layers=layers,
            dense_w=self.dense_w.copy(),
            dense_b=self.dense_b.copy(),
            output_activation=self.output_activation,
        )


def cell_forward(layer: LstmLayerParams, x_t, h_prev, c_prev, activation: str = "tanh"):
    """One LSTM cell step for a single sample.

    Computes f = sigmoid(U_f x + V_f h + b_f) and likewise for i and o,
    candidate = act(U_c x + V_c h + b_c), C = f * C_prev + i * candidate,
    h = o * act(C).  Returns (h, C).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    h = layer.hidden_size
    if x_t.shape != (layer.input_size,):
        raise DataError(f"input has shape {x_t.shape}, expected ({layer.input_size},)")
    if h_prev.shape != (h,) or c_prev.shape != (h,):
        raise DataError("state vectors do not match hidden_size")
    u, v, bias = layer.stacked()
    z = u @ x_t + v @ h_prev + bias
    f_g = expit(z[:h])
    i_g = expit(z[h : 2 * h])
    o_g = expit(z[2 * h : 3 * h])
    cand = _activate(activation, z[3 * h :])
    c_t = f_g * c_prev + i_g * cand
    h_t = o_g * _activate(activation, c_t)
    return h_t, c_t


@dataclass
class DropoutMasks:
    """Materialized inverted-dropout masks for one batch.

    ``out[k]`` multiplies layer k's output (per element for layers that
    return sequences, per final hidden vector for the last layer) and
    ``rec[k]`` multiplies h_{t-1} entering the gates, fixed across the
    timesteps of a sequence.  ``None`` means no dropout at that spot.
    """

    out: list
    rec: list


def make_masks(net: LstmNetwork, n: int, lookback: int, seed: int) -> DropoutMasks:
    """Draw inverted (scaled) dropout masks for a batch of n sequences."""
    cfg = net.config
    rng = np.random.default_rng(seed)
    out, rec = [], []
    last = len(cfg.hidden_sizes) - 1
    for k, h in enumerate(cfg.hidden_sizes):
        if cfg.recurrent_dropout > 0.0:
            keep = 1.0 - cfg.recurrent_dropout
            rec.append((rng.random((n, h)) < keep).astype(np.float64) / keep)
        else:
            rec.append(None)
        rate = cfg.dropout[k]
        if rate > 0.0:
            keep = 1.0 - rate
            shape = (n, h) if k == last else (n, lookback, h)
            out.append((rng.random(shape) < keep).astype(np.float64) / keep)
        else:
            out.append(None)
    return DropoutMasks(out=out, rec=rec)


@dataclass
class _LayerCache:
    x: np.ndarray  # (n, T, input width), the layer's input sequence
    hu: np.ndarray  # (T, n, h), masked h_{t-1} as seen by the gates
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    cand: np.ndarray
    c: np.ndarray
    act_c: np.ndarray
    rec_mask: object


def _run_layer(layer, activation, x, rec_mask):
    """Forward one layer over a batch; returns (h sequence, cache)."""
    n, steps, _ = x.shape
    h_size = layer.hidden_size
    u, v, bias = layer.stacked()
    shape = (steps, n, h_size)
    cache = _LayerCache(
        x=x,
        hu=np.zeros(shape),
        f=np.empty(shape),
        i=np.empty(shape),
        o=np.empty(shape),
        cand=np.empty(shape),
        c=np.empty(shape),
        act_c=np.empty(shape),
        rec_mask=rec_mask,
    )
    seq = np.empty((n, steps, h_size))
    h_t = np.zeros((n, h_size))
    c_t = np.zeros((n, h_size))
    for t in range(steps):
        h_used = h_t if rec_mask is None else h_t * rec_mask
        cache.hu[t] = h_used
        z = x[:, t] @ u.T + h_used @ v.T + bias
        f_g = expit(z[:, :h_size])
        i_g = expit(z[:, h_size : 2 * h_size])
        o_g = expit(z[:, 2 * h_size : 3 * h_size])
        cand = _activate(activation, z[:, 3 * h_size :])
        c_t = f_g * c_t + i_g * cand
        act_c = _activate(activation, c_t)
        h_t = o_g * act_c
        cache.f[t] = f_g
        cache.i[t] = i_g
        cache.o[t] = o_g
        cache.cand[t] = cand
        cache.c[t] = c_t
        cache.act_c[t] = act_c
        seq[:, t] = h_t
    return seq, cache


def _forward_batch(net: LstmNetwork, x, masks=None):
    """Full forward pass; returns (predictions, layer caches, dense cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DataError("expected a batch shaped (n, lookback, features)")
    if x.shape[2] != net.config.input_size:
        raise DataError(
            f"sequence width {x.shape[2]} does not match input_size {net.config.input_size}"
        )
    caches = []
    current = x
    last = len(net.layers) - 1
    h_final = None
    for k, layer in enumerate(net.layers):
        rec = masks.rec[k] if masks is not None else None
        seq, cache = _run_layer(layer, net.config.activations[k], current, rec)
        caches.append(cache)
        if k == last:
            h_final = seq[:, -1]
            if masks is not None and masks.out[k] is not None:
                h_final = h_final * masks.out[k]
        else:
            if masks is not None and masks.out[k] is not None:
                seq = seq * masks.out[k]
            current = seq
    pre = h_final @ net.dense_w + net.dense_b[0]
    if net.output_activation == "relu":
        preds = np.maximum(pre, 0.0)
    else:
        preds = pre
    if not np.all(np.isfinite(preds)):
        raise NumericError("non-finite activation in forward pass")
    return preds, caches, (h_final, pre)


def forward(net: LstmNetwork, sequence, train_mode: bool = False, seed: int = 0) -> float:
    """Predict a single scalar from one (lookback x features) sequence.

    With ``train_mode`` the configured dropout masks are drawn from
    ``seed`` and applied; otherwise the pass is deterministic.
    """
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2:
        raise DataError("expected a (lookback, features) matrix")
    batch = sequence[np.newaxis]
    masks = make_masks(net, 1, sequence.shape[0], seed) if train_mode else None
    preds, _, _ = _forward_batch(net, batch, masks)
    return float(preds[0])


def predict(net: LstmNetwork, x) -> np.ndarray:
    """Deterministic predictions for a batch shaped (n, lookback, features)."""
    preds, _, _ = _forward_batch(net, x, masks=None)
    return preds


def loss(kind: str, preds, targets) -> float:
    """Mean squared or mean absolute error between two equal-length vectors."""
    preds = np.asarray(preds, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if preds.size == 0:
        raise DataError("empty prediction vector")
    if preds.shape != targets.shape:
        raise DataError("predictions and targets differ in length")
    diff = preds - targets
    kind = kind.lower()
    if kind == "mse":
        return float(np.mean(diff * diff))
    if kind == "mae":
        return float(np.mean(np.abs(diff)))
    raise DataError(f"unknown loss {kind!r}")


def _loss_grad(kind: str, preds, targets):
    n = preds.size
    diff = preds - targets
    if kind == "mse":
        return 2.0 * diff / n
    return np.sign(diff) / n


def _layer_backward(layer, activation, cache, d_seq, d_last):
    """BPTT through one layer.

    ``d_seq`` is the per-step gradient on the raw hidden outputs (already
    routed through any output-dropout mask), ``d_last`` an extra gradient
    on the final step only.  Returns (gradient on the layer input, dU,
    dV, db) with the gate blocks stacked in f,i,o,c order.
    """
    n, steps, width = cache.x.shape
    h_size = layer.hidden_size
    u, v, _ = layer.stacked()
    d_u = np.zeros_like(u)
    d_v = np.zeros_like(v)
    d_b = np.zeros(4 * h_size)
    d_x = np.empty((n, steps, width))
    dh_rec = np.zeros((n, h_size))
    dc_rec = np.zeros((n, h_size))
    for t in range(steps - 1, -1, -1):
        dh = dh_rec.copy()
        if d_seq is not None:
            dh += d_seq[:, t]
        if d_last is not None and t == steps - 1:
            dh += d_last
        o_g = cache.o[t]
        act_c = cache.act_c[t]
        f_g = cache.f[t]
        i_g = cache.i[t]
        cand = cache.cand[t]
        c_prev = cache.c[t - 1] if t > 0 else np.zeros((n, h_size))
        d_o = dh * act_c
        d_c = dh * o_g * _deriv_from_output(activation, act_c) + dc_rec
        dz = np.concatenate(
            [
                d_c * c_prev * f_g * (1.0 - f_g),
                d_c * cand * i_g * (1.0 - i_g),
                d_o * o_g * (1.0 - o_g),
                d_c * i_g * _deriv_from_output(activation, cand),
            ],
            axis=1,
        )
        d_u += dz.T @ cache.x[:, t]
        d_v += dz.T @ cache.hu[t]
        d_b += dz.sum(axis=0)
        d_x[:, t] = dz @ u
        dh_prev = dz @ v
        dh_rec = dh_prev if cache.rec_mask is None else dh_prev * cache.rec_mask
        dc_rec = d_c * f_g
    return d_x, d_u, d_v, d_b


def backward(net: LstmNetwork, x, y, loss_kind=None, masks=None):
    """Gradient of the mean loss over a batch for every parameter.

    Returns (loss value, gradients keyed like ``net.parameters()``).
    Pass ``masks`` to differentiate through fixed dropout noise.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise DataError("empty batch")
    kind = (loss_kind or net.config.loss).lower()
    preds, caches, (h_final, pre) = _forward_batch(net, x, masks)
    if preds.shape != y.shape:
        raise DataError("batch targets do not match predictions")
    value = loss(kind, preds, y)
    d_pred = _loss_grad(kind, preds, y)
    if net.output_activation == "relu":
        d_pre = d_pred * (pre > 0.0)
    else:
        d_pre = d_pred
    grads = {}
    grads["dense.w"] = h_final.T @ d_pre
    grads["dense.b"] = np.array([d_pre.sum()])
    d_h = np.outer(d_pre, net.dense_w)
    last = len(net.layers) - 1
    d_seq, d_last = None, d_h
    if masks is not None and masks.out[last] is not None:
        d_last = d_last * masks.out[last]
    for k in range(last, -1, -1):
        layer = net.layers[k]
        d_x, d_u, d_v, d_b = _layer_backward(
            layer, net.config.activations[k], caches[k], d_seq, d_last
        )
        h_size = layer.hidden_size
        for j, g in enumerate(GATES):
            grads[f"layer{k}.U_{g}"] = d_u[j * h_size : (j + 1) * h_size]
            grads[f"layer{k}.V_{g}"] = d_v[j * h_size : (j + 1) * h_size]
            grads[f"layer{k}.b_{g}"] = d_b[j * h_size : (j + 1) * h_size]
        if k > 0:
            d_seq, d_last = d_x, None
            if masks is not None and masks.out[k - 1] is not None:
                d_seq = d_seq * masks.out[k - 1]
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return value, grads


@dataclass
class AdamState:
    """First and second moment accumulators for every parameter."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: LstmNetwork) -> "AdamState":
        params = net.parameters()
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(state: AdamState, params: dict, grads: dict, learning_rate: float) -> dict:
    """One bias-corrected Adam update, applied to the parameters in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        p -= learning_rate * (state.m[name] / c1) / (np.sqrt(state.v[name] / c2) + state.eps)
    return params


@dataclass
class TrainingHistory:
    train_loss: list
    val_loss: list
    best_epoch: int
    best_val_loss: float
    stopped_epoch: object = None  # set when early stopping fired


def train(net: LstmNetwork, train_set, val_set):
    """Mini-batch training with early stopping on validation loss.

    Batches are drawn in a seeded order reshuffled each epoch; dropout
    masks are redrawn per batch from the same stream.  After each epoch
    the validation loss is computed with dropout off.  Training stops
    once the validation loss has failed to improve for ``patience``
    consecutive epochs (at the first flat epoch when patience is 0) and
    the best-epoch weights are restored.  Returns (net, history).
    """
    x_tr, y_tr = train_set
    x_val, y_val = val_set
    x_tr = np.asarray(x_tr, dtype=np.float64)
    y_tr = np.asarray(y_tr, dtype=np.float64).ravel()
    x_val = np.asarray(x_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64).ravel()
    if len(x_tr) == 0 or len(x_val) == 0:
        raise DataError("training and validation sets must be nonempty")
    cfg = net.config
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_network(net)
    params = net.parameters()
    use_dropout = cfg.recurrent_dropout > 0.0 or any(r > 0.0 for r in cfg.dropout)
    lookback = x_tr.shape[1]
    n = len(x_tr)
    history = TrainingHistory(train_loss=[], val_loss=[], best_epoch=-1, best_val_loss=np.inf)
    best_params = {k: p.copy() for k, p in params.items()}
    streak = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            masks = None
            if use_dropout:
                masks = make_masks(net, len(idx), lookback, int(rng.integers(2**63)))
            try:
                value, grads = backward(net, x_tr[idx], y_tr[idx], masks=masks)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
            if not np.isfinite(value):
                raise NumericError(f"training diverged at epoch {epoch}")
            adam_step(state, params, grads, cfg.learning_rate)
            running += value * len(idx)
        history.train_loss.append(running / n)
        try:
            val_value = loss(cfg.loss, predict(net, x_val), y_val)
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        if not np.isfinite(val_value):
            raise NumericError(f"training diverged at epoch {epoch}")
        history.val_loss.append(val_value)
        if val_value < history.best_val_loss:
            history.best_val_loss = val_value
            history.best_epoch = epoch
            for k, p in params.items():
                best_params[k][...] = p
            streak = 0
        else:
            streak += 1
            if streak >= max(1, cfg.patience):
                history.stopped_epoch = epoch
                break
    for k, p in params.items():
        p[...] = best_params[k]
    return net, history


@dataclass(frozen=True)
class SearchSpace:
    """Discrete hyperparameter grid sampled by :func:`random_search`.

    The sampled dropout rate is applied to every layer and reused as the
    recurrent dropout rate.
    """

    layers: tuple = (1, 2, 3)
    neurons: tuple = (32, 64, 128)
    activations: tuple = ("tanh", "relu")
    dropout: tuple = (0.0, 0.1, 0.2, 0.3)
    learning_rate: tuple = (0.01, 0.001, 0.0001)
    loss: tuple = ("mse", "mae")
    epochs: int = 50
    batch_size: int = 64
    patience: int = 10


@dataclass
class SearchResult:
    config: NetworkConfig
    score: float
    trials: list  # (NetworkConfig, mean best validation loss) per trial


def random_search(
    space: SearchSpace,
    train_set,
    val_set,
    trials: int = 50,
    executions_per_trial: int = 3,
    seed: int = 0,
) -> SearchResult:
    """Uniform random search over the space, scored on validation loss.

    Each trial samples one configuration and trains it from
    ``executions_per_trial`` independent initializations; its score is
    the mean best validation loss.  Diverging executions poison their
    trial with an infinite score; the search fails only if every trial
    diverged.  Deterministic for a fixed seed.
    """
    if trials < 1:
        raise DataError("need at least one trial")
    x_tr = np.asarray(train_set[0], dtype=np.float64)
    if x_tr.ndim != 3:
        raise DataError("expected training sequences shaped (n, lookback, features)")
    rng = np.random.default_rng(seed)
    scored = []
    for _ in range(trials):
        n_layers = int(rng.choice(space.layers))
        neurons = int(rng.choice(space.neurons))
        act = str(rng.choice(space.activations))
        rate = float(rng.choice(space.dropout))
        lr = float(rng.choice(space.learning_rate))
        loss_kind = str(rng.choice(space.loss))
        exec_seeds = [int(rng.integers(2**63)) for _ in range(executions_per_trial)]
        config = NetworkConfig(
            input_size=x_tr.shape[2],
            hidden_sizes=(neurons,) * n_layers,
            activations=(act,) * n_layers,
            dropout=(rate,) * n_layers,
            recurrent_dropout=rate,
            learning_rate=lr,
            loss=loss_kind,
            epochs=space.epochs,
            batch_size=space.batch_size,
            patience=space.patience,
        )
        bests = []
        for exec_seed in exec_seeds:
            run_cfg = NetworkConfig(**{**asdict(config), "seed": exec_seed})
            net = LstmNetwork.initialize(run_cfg)
            try:
                _, hist = train(net, train_set, val_set)
                bests.append(hist.best_val_loss)
            except NumericError:
                bests.append(np.inf)
        scored.append((config, float(np.mean(bests))))
    best_config, best_score = min(scored, key=lambda item: item[1])
    if not np.isfinite(best_score):
        raise NumericError("all search trials diverged")
    return SearchResult(config=best_config, score=best_score, trials=scored)


def save_network(net: LstmNetwork, path) -> None:
    """Write the network to a versioned .npz archive.

    Layout: per layer, per gate in f,i,o,c order, the U, V, b arrays
    under their parameter names, then the dense weights and bias, plus
    the configuration as JSON.
    """
    payload = {k: np.asarray(v) for k, v in net.parameters().items()}
    payload["format_version"] = np.array(FORMAT_VERSION)
    payload["config_json"] = np.array(json.dumps(asdict(net.config)))
    payload["output_activation"] = np.array(net.output_activation)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_network(path) -> LstmNetwork:
    """Rebuild a network saved by :func:`save_network`."""
    with np.load(path, allow_pickle=False) as archive:
        version = int(archive["format_version"])
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported network format version {version}")
        config = NetworkConfig(**json.loads(str(archive["config_json"])))
        layers = []
        for k, h in enumerate(config.hidden_sizes):
            U = {g: archive[f"layer{k}.U_{g}"] for g in GATES}
            V = {g: archive[f"layer{k}.V_{g}"] for g in GATES}
            b = {g: archive[f"layer{k}.b_{g}"] for g in GATES}
            layers.append(LstmLayerParams(hidden_size=h, U=U, V=V, b=b))
        return LstmNetwork(
            config=config,
            layers=layers,
            dense_w=archive["dense.w"],
            dense_b=archive["dense.b"],
            output_activation=str(archive["output_activation"]),
        )
