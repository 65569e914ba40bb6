"""The three fixed sequence-regression graphs and their exact gradients.

* ``uni_lstm``: stacked LSTM, last hidden state -> dense(ReLU) -> linear.
* ``lstm_attention``: stacked LSTM, additive attention context -> dense -> linear.
* ``bilstm``: stacked bidirectional LSTM, last concatenated state -> dense -> linear.

Dropout sits between recurrent layers and on the read-out vector before the
dense head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import layers
from .layers import ShapeError

VARIANTS = ("uni_lstm", "lstm_attention", "bilstm")

DEFAULT_HIDDEN = {
    "uni_lstm": (32, 32),
    "lstm_attention": (64, 32),
    "bilstm": (32, 32),
}


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    n_features: int
    lookback: int
    hidden: tuple = ()
    dense: int = 32
    attention_dim: int | None = None
    dropout: float = 0.2

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        hidden = tuple(int(h) for h in (self.hidden or DEFAULT_HIDDEN[self.variant]))
        object.__setattr__(self, "hidden", hidden)
        if self.variant == "lstm_attention" and self.attention_dim is None:
            object.__setattr__(self, "attention_dim", hidden[-1])
        if self.variant != "lstm_attention":
            object.__setattr__(self, "attention_dim", None)
        if min(hidden) < 1 or self.dense < 1 or self.n_features < 1 or self.lookback < 1:
            raise ValueError("widths, n_features and lookback must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def readout_width(self) -> int:
        return 2 * self.hidden[-1] if self.variant == "bilstm" else self.hidden[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> ModelSpec:
        doc = dict(doc)
        doc["hidden"] = tuple(doc.get("hidden", ()))
        return cls(**doc)


def param_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) table; the flat parameter vector follows this order."""
    out: list[tuple[str, tuple[int, ...]]] = []
    width = spec.n_features
    for k, d in enumerate(spec.hidden):
        dirs = ("fwd", "bwd") if spec.variant == "bilstm" else ("",)
        for direction in dirs:
            pre = f"lstm{k}.{direction}." if direction else f"lstm{k}."
            out += [(pre + "W", (width, 4 * d)), (pre + "U", (d, 4 * d)), (pre + "b", (4 * d,))]
        width = d * len(dirs)
    if spec.variant == "lstm_attention":
        out += [("attn.W", (spec.attention_dim, width)), ("attn.v", (spec.attention_dim,))]
    out += [
        ("dense.W", (spec.readout_width, spec.dense)),
        ("dense.b", (spec.dense,)),
        ("out.W", (spec.dense,)),
        ("out.b", (1,)),
    ]
    return out


def count_parameters(spec: ModelSpec) -> int:
    return int(sum(np.prod(shape) for _, shape in param_layout(spec)))


def init_params(spec: ModelSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget bias 1."""
    params: dict[str, np.ndarray] = {}
    for name, shape in param_layout(spec):
        if name.endswith(".b"):
            b = np.zeros(shape)
            if name.startswith("lstm"):
                d = shape[0] // 4
                b[d : 2 * d] = 1.0
            params[name] = b
        else:
            fan_in = shape[0] if len(shape) == 2 and not name.startswith("attn") else shape[-1]
            k = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-k, k, size=shape)
    return params


def zero_params(spec: ModelSpec) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_layout(spec)}


def flatten(params: dict[str, np.ndarray], spec: ModelSpec) -> np.ndarray:
    return np.concatenate([params[name].ravel() for name, _ in param_layout(spec)])


def unflatten(vector: np.ndarray, spec: ModelSpec) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in param_layout(spec):
        size = int(np.prod(shape))
        out[name] = np.array(vector[pos : pos + size], dtype=np.float64).reshape(shape)
        pos += size
    if pos != len(vector):
        raise ShapeError(f"flat vector has {len(vector)} entries, layout needs {pos}")
    return out


@dataclass
class ForwardCache:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    recurrent: list[Any] = field(default_factory=list)
    seq_masks: list[np.ndarray | None] = field(default_factory=list)
    attn: layers.AttentionCache | None = None
    seq_len: int = 0
    readout: np.ndarray | None = None  # after dropout
    head_mask: np.ndarray | None = None
    dense_pre: np.ndarray | None = None
    dense_act: np.ndarray | None = None


def forward(
    spec: ModelSpec,
    params: dict[str, np.ndarray],
    X: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Predictions (B,) for a batch ``X`` of shape (B, lookback, n_features)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != spec.n_features:
        raise ShapeError(f"batch shape {X.shape} does not match (B, L, {spec.n_features})")
    rate = spec.dropout if train else 0.0
    if rate > 0.0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    cache = ForwardCache(spec=spec, params=params, seq_len=X.shape[1])
    h = X
    n_layers = len(spec.hidden)
    for k in range(n_layers):
        if spec.variant == "bilstm":
            fwd = tuple(params[f"lstm{k}.fwd.{p}"] for p in "WUb")
            bwd = tuple(params[f"lstm{k}.bwd.{p}"] for p in "WUb")
            h, c = layers.bilstm_forward(h, fwd, bwd, last_only=k == n_layers - 1)
        else:
            h, c = layers.lstm_forward(h, *(params[f"lstm{k}.{p}"] for p in "WUb"))
        cache.recurrent.append(c)
        if k < n_layers - 1:
            mask = layers.dropout_mask(rng, h.shape, rate) if rate > 0 else None
            cache.seq_masks.append(mask)
            if mask is not None:
                h = h * mask
    if spec.variant == "lstm_attention":
        readout, _, cache.attn = layers.additive_attention(h, params["attn.W"], params["attn.v"])
    else:
        readout = h[:, -1, :]
    if rate > 0:
        cache.head_mask = layers.dropout_mask(rng, readout.shape, rate)
        readout = readout * cache.head_mask
    cache.readout = readout
    pre = readout @ params["dense.W"] + params["dense.b"]
    act = np.maximum(pre, 0.0)
    cache.dense_pre, cache.dense_act = pre, act
    pred = act @ params["out.W"] + params["out.b"][0]
    return pred, cache


def predict(spec: ModelSpec, params: dict[str, np.ndarray], X: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Eval-mode predictions in chunks."""
    if len(X) == 0:
        return np.zeros(0)
    return np.concatenate([forward(spec, params, X[i : i + batch_size])[0] for i in range(0, len(X), batch_size)])


def backward(cache: ForwardCache, dpred: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter the variant uses."""
    spec, params = cache.spec, cache.params
    grads: dict[str, np.ndarray] = {}
    grads["out.W"] = cache.dense_act.T @ dpred
    grads["out.b"] = np.array([dpred.sum()])
    dact = np.outer(dpred, params["out.W"])
    dpre = dact * (cache.dense_pre > 0.0)
    grads["dense.W"] = cache.readout.T @ dpre
    grads["dense.b"] = dpre.sum(axis=0)
    dread = dpre @ params["dense.W"].T
    if cache.head_mask is not None:
        dread = dread * cache.head_mask

    if spec.variant == "lstm_attention":
        dh, grads["attn.W"], grads["attn.v"] = layers.additive_attention_backward(dread, cache.attn)
    elif spec.variant == "bilstm":
        dh = dread[:, None, :]
    else:
        dh = np.zeros((dread.shape[0], cache.seq_len, spec.hidden[-1]))
        dh[:, -1, :] = dread

    for k in range(len(spec.hidden) - 1, -1, -1):
        if k < len(spec.hidden) - 1:
            mask = cache.seq_masks[k]
            if mask is not None:
                dh = dh * mask
        if spec.variant == "bilstm":
            dh, gf, gb = layers.bilstm_backward(dh, cache.recurrent[k], last_only=k == len(spec.hidden) - 1)
            for p, gval in zip("WUb", gf):
                grads[f"lstm{k}.fwd.{p}"] = gval
            for p, gval in zip("WUb", gb):
                grads[f"lstm{k}.bwd.{p}"] = gval
        else:
            dh, *g = layers.lstm_backward(dh, cache.recurrent[k])
            for p, gval in zip("WUb", g):
                grads[f"lstm{k}.{p}"] = gval
    return grads


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("mse_loss needs at least one value")
    r = target - pred
    return float(np.mean(r * r))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size


def loss_and_grads(
    spec: ModelSpec,
    params: dict[str, np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    pred, cache = forward(spec, params, X, train=train, rng=rng)
    return mse_loss(pred, y), backward(cache, mse_grad(pred, y))
