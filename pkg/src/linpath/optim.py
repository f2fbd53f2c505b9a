"""SGD with momentum, Adam, per-group hyperparameters and the training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .datasets import AugmentSpec, Dataset, augment
from .nn import Key, LayerSelector, ModelSpec, ParamState

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GroupOverride:
    selector: LayerSelector
    lr: float | None = None
    weight_decay: float | None = None


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "adam"  # "adam" | "sgd"
    lr: float = 5e-4
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # (epoch, multiplier): from that epoch on the lr is multiplied by ``multiplier`` (cumulative)
    schedule: tuple[tuple[int, float], ...] = ()
    group_overrides: tuple[GroupOverride, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple((int(e), float(m)) for e, m in self.schedule))
        object.__setattr__(self, "group_overrides", tuple(self.group_overrides))
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("schedule epochs must be strictly increasing")
        if any(m <= 0 for _, m in self.schedule):
            raise ValueError("schedule multipliers must be > 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "lr": self.lr, "weight_decay": self.weight_decay,
            "momentum": self.momentum, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "schedule": [list(s) for s in self.schedule],
            "group_overrides": [
                {"selector": g.selector.label(), "lr": g.lr, "weight_decay": g.weight_decay}
                for g in self.group_overrides
            ],
        }


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 500
    shuffle_seed: int = 0
    eval_every: int = 1
    checkpoint_epochs: tuple[int, ...] = ()
    augment: AugmentSpec = AugmentSpec()
    # stop early once full-train accuracy reaches this value (used for memorization phases)
    stop_at_train_acc: float | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs must be >= 0, batch_size and eval_every >= 1")
        object.__setattr__(self, "checkpoint_epochs", tuple(int(e) for e in self.checkpoint_epochs))

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "shuffle_seed": self.shuffle_seed,
            "eval_every": self.eval_every, "checkpoint_epochs": list(self.checkpoint_epochs),
            "augment_sigma": self.augment.sigma, "stop_at_train_acc": self.stop_at_train_acc,
        }


@dataclass
class OptimState:
    """Auxiliary buffers keyed like the parameters; ``step`` counts Adam updates."""

    buffers: dict[str, dict[Key, np.ndarray]]
    step: int = 0

    @classmethod
    def zeros(cls, params: ParamState, kind: str) -> "OptimState":
        names = ("m", "v") if kind == "adam" else ("v",)
        return cls({n: {k: np.zeros_like(a) for k, a in params.arrays.items()} for n in names})

    def copy(self) -> "OptimState":
        return OptimState({n: {k: a.copy() for k, a in b.items()} for n, b in self.buffers.items()}, self.step)


def lr_at(schedule: Sequence[tuple[int, float]], base_lr: float, epoch: int) -> float:
    lr = base_lr
    for start, mult in schedule:
        if epoch >= start:
            lr *= mult
    return lr


def _check_finite(key: Key, grad: np.ndarray) -> None:
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite gradient in layer {key[0]} {key[1]}")


def _sgd_update(theta, grad, v, lr, momentum, wd):
    g = grad + wd * theta if wd else grad
    v *= momentum
    v += g
    theta -= lr * v


def _adam_update(theta, grad, m, v, step, lr, beta1, beta2, eps, wd):
    g = grad + wd * theta if wd else grad
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_momentum_step(params: ParamState, grads: ParamState, state: OptimState, lr: float,
                      momentum: float, weight_decay: float) -> tuple[ParamState, OptimState]:
    """``g = grad + wd*theta; v = momentum*v + g; theta -= lr*v`` for every entry."""
    new_state = state.copy()
    out = {}
    for key, theta in params.arrays.items():
        _check_finite(key, grads[key])
        t = theta.copy()
        _sgd_update(t, grads[key], new_state.buffers["v"][key], lr, momentum, weight_decay)
        out[key] = t
    new_state.step += 1
    return ParamState(params.spec, out), new_state


def adam_step(params: ParamState, grads: ParamState, state: OptimState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> tuple[ParamState, OptimState]:
    """Bias-corrected Adam with coupled L2 decay."""
    new_state = state.copy()
    new_state.step += 1
    out = {}
    for key, theta in params.arrays.items():
        _check_finite(key, grads[key])
        t = theta.copy()
        _adam_update(t, grads[key], new_state.buffers["m"][key], new_state.buffers["v"][key],
                     new_state.step, lr, beta1, beta2, eps, weight_decay)
        out[key] = t
    return ParamState(params.spec, out), new_state


def group_hyperparams(spec: ModelSpec, cfg: OptimConfig) -> dict[Key, tuple[float, float]]:
    """Per-entry (base lr, weight decay) after applying group overrides."""
    table = {k: (cfg.lr, cfg.weight_decay) for k in spec.shapes()}
    claimed: dict[Key, int] = {}
    for i, ov in enumerate(cfg.group_overrides):
        for key in ov.selector.keys(spec):
            if key in claimed:
                raise ValueError(f"group overrides {claimed[key]} and {i} both select layer {key[0]} {key[1]}")
            claimed[key] = i
            lr, wd = table[key]
            table[key] = (lr if ov.lr is None else ov.lr, wd if ov.weight_decay is None else ov.weight_decay)
    return table


@dataclass
class RunRecord:
    """One training run. ``history`` holds one dict per epoch (epoch 0 = before training)."""

    spec: ModelSpec
    optim: OptimConfig
    train: TrainConfig
    init: ParamState
    final: ParamState
    history: list[dict] = field(default_factory=list)
    checkpoints: dict[int, ParamState] = field(default_factory=dict)
    status: str = "ok"
    message: str = ""
    data_provenance: dict = field(default_factory=dict)
    seed: int | None = None
    tag: str = ""
    extras: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)  # label -> InterpPath
    shapes: dict = field(default_factory=dict)  # label -> PathShape

    @property
    def final_metrics(self) -> dict:
        return self.history[-1] if self.history else {}

    @property
    def test_acc(self) -> float:
        return self.final_metrics.get("test_acc", float("nan"))

    @property
    def train_loss(self) -> float:
        return self.final_metrics.get("train_loss", float("nan"))

    @property
    def epochs_run(self) -> int:
        return self.final_metrics.get("epoch", 0)

    def epochs_to_train_loss(self, threshold: float) -> int | None:
        """First evaluated epoch whose full-train loss is <= threshold."""
        for row in self.history:
            if row.get("train_loss", float("inf")) <= threshold:
                return row["epoch"]
        return None


def _metrics(params_spec, arrays, data: Dataset) -> dict:
    state = ParamState(params_spec, arrays)
    tr_loss, tr_acc = nn.evaluate(state, data.x_train, data.y_train)
    te_loss, te_acc = nn.evaluate(state, data.x_test, data.y_test)
    return {"train_loss": tr_loss, "train_acc": tr_acc, "test_loss": te_loss, "test_acc": te_acc}


def epoch_rng(shuffle_seed: int, epoch: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(shuffle_seed), int(epoch), stream]))


def train(spec: ModelSpec, init: ParamState, data: Dataset, optim: OptimConfig, tc: TrainConfig) -> RunRecord:
    """Train from ``init`` and return the full run record.

    Deterministic in (init, data, optim, tc). A non-finite loss or gradient
    ends the run with ``status="diverged"``; the trace up to that point is kept.
    """
    if init.spec_hash != spec.digest():
        raise ValueError("initial state was built for a different model spec")
    if data.dim != spec.input_dim:
        raise nn.ShapeError(f"layer 0 weight expects width {spec.input_dim}, dataset has {data.dim}")
    if tc.batch_size > data.n_train:
        raise ValueError(f"batch_size {tc.batch_size} exceeds {data.n_train} training points")
    hyper = group_hyperparams(spec, optim)
    arrays = {k: np.array(a) for k, a in init.arrays.items()}
    state = OptimState.zeros(init, optim.kind)
    x_all, y_all = data.x_train, data.y_train
    n = x_all.shape[0]
    rec = RunRecord(spec, optim, tc, init, init, data_provenance=dict(data.provenance))
    rec.history.append({"epoch": 0, "lr": lr_at(optim.schedule, optim.lr, 0), "batch_loss": None,
                        **_metrics(spec, arrays, data)})
    if 0 in tc.checkpoint_epochs:
        rec.checkpoints[0] = init
    for epoch in range(1, tc.epochs + 1):
        scale = lr_at(optim.schedule, 1.0, epoch - 1)
        order = epoch_rng(tc.shuffle_seed, epoch).permutation(n)
        jitter_rng = epoch_rng(tc.shuffle_seed, epoch, 1)
        batch_losses = []
        try:
            for s in range(0, n, tc.batch_size):
                idx = order[s:s + tc.batch_size]
                xb = augment(x_all[idx], tc.augment, jitter_rng)
                # overflow is caught by the finiteness checks below
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, _, grads = nn.raw_loss_and_grad(spec, arrays, xb, y_all[idx])
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                batch_losses.append(loss)
                state.step += 1
                for key, theta in arrays.items():
                    _check_finite(key, grads[key])
                    lr, wd = hyper[key]
                    lr *= scale
                    if optim.kind == "sgd":
                        _sgd_update(theta, grads[key], state.buffers["v"][key], lr, optim.momentum, wd)
                    else:
                        _adam_update(theta, grads[key], state.buffers["m"][key], state.buffers["v"][key],
                                     state.step, lr, optim.beta1, optim.beta2, optim.eps, wd)
        except DivergenceError as exc:
            log.warning("run diverged: %s", exc)
            rec.status, rec.message = "diverged", str(exc)
            break
        row = {"epoch": epoch, "lr": optim.lr * scale, "batch_loss": float(np.mean(batch_losses))}
        last = epoch == tc.epochs
        if epoch % tc.eval_every == 0 or last or tc.stop_at_train_acc is not None:
            row.update(_metrics(spec, arrays, data))
        rec.history.append(row)
        if epoch in tc.checkpoint_epochs:
            rec.checkpoints[epoch] = ParamState(spec, arrays)
        if tc.stop_at_train_acc is not None and row["train_acc"] >= tc.stop_at_train_acc:
            break
    if rec.status == "ok" and "train_loss" not in rec.history[-1]:
        rec.history[-1].update(_metrics(spec, arrays, data))
    rec.final = ParamState(spec, arrays) if rec.status == "ok" else rec.final
    if rec.status != "ok":
        # keep the last finite state we can vouch for: the most recent checkpoint or the init
        rec.final = rec.checkpoints[max(rec.checkpoints)] if rec.checkpoints else init
    return rec
