"""Mini-batch training loop with validation checkpointing, and checkpoint I/O."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..dataset import Scaler, SequenceSet
from .model import (
    ModelSpec,
    flatten,
    init_params,
    loss_and_grads,
    param_layout,
    predict,
    unflatten,
)
from .optim import AdamState, EarlyStopping, NonFiniteError, ReduceLROnPlateau, adam_step

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "burstcast-checkpoint"
CHECKPOINT_VERSION = 1

DEFAULT_PATIENCE = {"bilstm": 15, "lstm_attention": 10, "uni_lstm": 15}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int | None = None
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-6
    min_lr: float = 1e-6
    dropout: float = 0.2
    seed: int = 42

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.plateau_patience < 1 or (self.early_stop_patience is not None and self.early_stop_patience < 1):
            raise ValueError("patience values must be positive")

    def patience_for(self, variant: str) -> int:
        if self.early_stop_patience is not None:
            return self.early_stop_patience
        return DEFAULT_PATIENCE[variant]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    optimizer: AdamState | None = None
    final_lr: float | None = None
    scaler: Scaler | None = None

    @property
    def epochs_ran(self) -> int:
        return len(self.history)

    def predict_scaled(self, inputs: np.ndarray) -> np.ndarray:
        return predict(self.spec, self.params, inputs)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """Predictions in raw count units (requires a scaler)."""
        if self.scaler is None:
            raise TrainingError("model has no target scaler attached")
        return self.scaler.unscale_target(self.predict_scaled(inputs))


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def train(
    spec: ModelSpec,
    train_seq: SequenceSet,
    val_seq: SequenceSet,
    config: TrainConfig,
    scaler: Scaler,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainedModel:
    """Fit ``spec`` on standardized targets; keep the best-validation-RMSE weights.

    Each epoch reshuffles with a seeded stream, steps Adam on batches of
    ``batch_size`` (the last partial batch included), then scores the
    validation set in raw count units. Only train and validation data reach
    this function.
    """
    if len(train_seq) == 0 or len(val_seq) == 0:
        raise TrainingError("training and validation partitions must be non-empty")
    if train_seq.n_features != spec.n_features or train_seq.lookback != spec.lookback:
        raise TrainingError(
            f"sequences are (L={train_seq.lookback}, F={train_seq.n_features}); "
            f"spec expects (L={spec.lookback}, F={spec.n_features})"
        )
    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(spec, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    state = AdamState()
    plateau = ReduceLROnPlateau(
        lr=config.learning_rate,
        factor=config.plateau_factor,
        patience=config.plateau_patience,
        min_delta=config.plateau_min_delta,
        min_lr=config.min_lr,
    )
    stopper = EarlyStopping(patience=config.patience_for(spec.variant))
    best_params = {k: v.copy() for k, v in params.items()}
    history: list[dict] = []

    X, y = train_seq.inputs, train_seq.targets_scaled
    n = len(train_seq)
    bs = config.batch_size
    for epoch in range(1, config.max_epochs + 1):
        lr = plateau.lr
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss, grads = loss_and_grads(spec, params, X[idx], y[idx], train=True, rng=dropout_rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch starting {start}")
            try:
                adam_step(params, grads, state, lr)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from exc
            total += loss * len(idx)
        train_loss = total / n

        val_scaled = predict(spec, params, val_seq.inputs)
        val_loss = float(np.mean((val_scaled - val_seq.targets_scaled) ** 2))
        val_rmse = _rmse(scaler.unscale_target(val_scaled), val_seq.targets)
        if not math.isfinite(val_rmse):
            raise TrainingError(f"non-finite validation RMSE at epoch {epoch}")
        if stopper.update(epoch, val_rmse):
            best_params = {k: v.copy() for k, v in params.items()}
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_rmse": val_rmse,
            "lr": lr,
        }
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        log.debug("epoch %d train %.5f val_rmse %.4f lr %.2e", epoch, train_loss, val_rmse, lr)
        plateau.step(val_loss)
        if stopper.should_stop:
            break

    return TrainedModel(
        spec=spec,
        params=best_params,
        history=history,
        best_epoch=stopper.best_epoch,
        optimizer=state,
        final_lr=plateau.lr,
        scaler=scaler,
    )


def save_checkpoint(model: TrainedModel, path: str | Path, extra: dict | None = None) -> None:
    """JSON checkpoint; floats are written with ``repr`` so reloading is bit-exact."""
    spec = model.spec
    layout = []
    offset = 0
    for name, shape in param_layout(spec):
        layout.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(np.prod(shape))
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "layout": layout,
        "params": flatten(model.params, spec).tolist(),
        "best_epoch": model.best_epoch,
        "history": model.history,
        "final_lr": model.final_lr,
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "optimizer": None,
    }
    if model.optimizer is not None and model.optimizer.m:
        doc["optimizer"] = {
            "step": model.optimizer.step,
            "m": flatten(model.optimizer.m, spec).tolist(),
            "v": flatten(model.optimizer.v, spec).tolist(),
        }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"{path} is not a burstcast checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {doc.get('version')}")
    spec = ModelSpec.from_dict(doc["spec"])
    expected = [(e["name"], tuple(e["shape"])) for e in doc["layout"]]
    if expected != param_layout(spec):
        raise TrainingError("checkpoint layout does not match its spec")
    optimizer = None
    if doc.get("optimizer"):
        opt = doc["optimizer"]
        optimizer = AdamState(
            m=unflatten(np.asarray(opt["m"]), spec),
            v=unflatten(np.asarray(opt["v"]), spec),
            step=int(opt["step"]),
        )
    return TrainedModel(
        spec=spec,
        params=unflatten(np.asarray(doc["params"], dtype=np.float64), spec),
        history=doc["history"],
        best_epoch=int(doc["best_epoch"]),
        optimizer=optimizer,
        final_lr=doc.get("final_lr"),
        scaler=Scaler.from_dict(doc["scaler"]) if doc.get("scaler") else None,
    )
