"""Dense ReLU networks in float64 with exact reverse-mode gradients.

Parameters live in an immutable :class:`ParamState`: an ordered mapping from
``(layer, "weight" | "bias")`` to arrays. Layer ``l`` has a weight of shape
``(widths[l + 1], widths[l])`` and a bias of shape ``(widths[l + 1],)``, so a
forward step is ``z = a @ W.T + b``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

BCE = "bce"
SOFTMAX_CE = "softmax_ce"
LOSS_KINDS = (BCE, SOFTMAX_CE)
ACTIVATIONS = ("relu",)
PARAM_NAMES = ("weight", "bias")

Key = tuple[int, str]


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    loss: str = BCE

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.hidden_widths) < 1:
            raise ValueError(f"all layer widths must be >= 1, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}, expected one of {LOSS_KINDS}")
        if self.loss == BCE and self.output_dim != 1:
            raise ValueError("bce loss requires output_dim == 1")
        if self.loss == SOFTMAX_CE and self.output_dim < 2:
            raise ValueError("softmax_ce loss requires output_dim >= 2")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_widths) + 1

    @property
    def n_classes(self) -> int:
        return 2 if self.loss == BCE else self.output_dim

    def shapes(self) -> dict[Key, tuple[int, ...]]:
        w = self.widths
        out: dict[Key, tuple[int, ...]] = {}
        for layer in range(self.n_layers):
            out[(layer, "weight")] = (w[layer + 1], w[layer])
            out[(layer, "bias")] = (w[layer + 1],)
        return out

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_widths=tuple(d["hidden_widths"]),
            output_dim=int(d["output_dim"]),
            activation=d.get("activation", "relu"),
            loss=d.get("loss", BCE),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ParamState:
    """Immutable, ordered collection of a model's parameter arrays."""

    spec: ModelSpec
    arrays: Mapping[Key, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = self.spec.shapes()
        if set(self.arrays) != set(expected):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ShapeError(f"parameter keys mismatch: missing={missing} extra={extra}")
        frozen: dict[Key, np.ndarray] = {}
        for key, shape in expected.items():  # canonical order
            arr = np.array(self.arrays[key], dtype=np.float64, copy=True)
            if arr.shape != shape:
                raise ShapeError(f"layer {key[0]} {key[1]}: expected shape {shape}, got {arr.shape}")
            arr.flags.writeable = False
            frozen[key] = arr
        object.__setattr__(self, "arrays", frozen)

    @property
    def spec_hash(self) -> str:
        return self.spec.digest()

    def __getitem__(self, key: Key) -> np.ndarray:
        return self.arrays[key]

    def keys(self) -> Iterator[Key]:
        return iter(self.arrays)

    def entries(self) -> Iterator[tuple[int, str, np.ndarray]]:
        for (layer, name), arr in self.arrays.items():
            yield layer, name, arr

    def weight(self, layer: int) -> np.ndarray:
        return self.arrays[(layer, "weight")]

    def bias(self, layer: int) -> np.ndarray:
        return self.arrays[(layer, "bias")]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def replace(self, updates: Mapping[Key, np.ndarray]) -> "ParamState":
        merged = dict(self.arrays)
        merged.update(updates)
        return ParamState(self.spec, merged)

    def map(self, fn) -> "ParamState":
        return ParamState(self.spec, {k: fn(k, a) for k, a in self.arrays.items()})

    def digest(self) -> str:
        h = hashlib.sha256(self.spec_hash.encode())
        for (layer, name), arr in self.arrays.items():
            h.update(f"{layer}:{name}:{arr.shape}".encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def compatible_with(self, other: "ParamState") -> bool:
        return self.spec_hash == other.spec_hash

    def equal(self, other: "ParamState") -> bool:
        """Bitwise equality of all entries."""
        return self.compatible_with(other) and all(
            np.array_equal(a, other.arrays[k]) for k, a in self.arrays.items()
        )


# Gradients share the parameter layout exactly.
GradState = ParamState


@dataclass(frozen=True)
class LayerSelector:
    """Chooses a subset of parameter entries.

    ``mode`` is ``"all"``, ``"layers"`` (``items`` are layer indices) or
    ``"groups"`` (``items`` are parameter names such as ``"bias"``, or
    ``"<layer>.<name>"`` for a single entry).
    """

    mode: str = "all"
    items: frozenset = frozenset()

    def __post_init__(self):
        if self.mode not in ("all", "layers", "groups"):
            raise ValueError(f"unknown selector mode {self.mode!r}")
        object.__setattr__(self, "items", frozenset(self.items))

    @classmethod
    def all(cls) -> "LayerSelector":
        return cls("all")

    @classmethod
    def layers(cls, layers: Iterable[int]) -> "LayerSelector":
        return cls("layers", frozenset(int(i) for i in layers))

    @classmethod
    def groups(cls, groups: Iterable[str]) -> "LayerSelector":
        return cls("groups", frozenset(groups))

    def validate(self, spec: ModelSpec) -> None:
        if self.mode == "layers":
            bad = sorted(i for i in self.items if not 0 <= i < spec.n_layers)
            if bad:
                raise ValueError(f"unknown layer index {bad} for a {spec.n_layers}-layer model")
        elif self.mode == "groups":
            for g in self.items:
                if g in PARAM_NAMES:
                    continue
                layer, _, name = str(g).partition(".")
                if name not in PARAM_NAMES or not layer.isdigit() or int(layer) >= spec.n_layers:
                    raise ValueError(f"unknown parameter group {g!r}")

    def contains(self, key: Key) -> bool:
        layer, name = key
        if self.mode == "all":
            return True
        if self.mode == "layers":
            return layer in self.items
        return name in self.items or f"{layer}.{name}" in self.items

    def keys(self, spec: ModelSpec) -> list[Key]:
        self.validate(spec)
        return [k for k in spec.shapes() if self.contains(k)]

    def label(self) -> str:
        if self.mode == "all":
            return "all"
        if not self.items:
            return "none"
        return f"{self.mode}:" + ",".join(str(i) for i in sorted(self.items, key=str))

    @classmethod
    def parse(cls, text: str) -> "LayerSelector":
        """Inverse of :meth:`label`; also accepts ``"layer:3"`` / ``"none"``."""
        text = text.strip()
        if text == "all":
            return cls.all()
        if text in ("none", "layers:"):
            return cls.layers(())
        mode, _, rest = text.partition(":")
        parts = [p for p in rest.split(",") if p]
        if mode in ("layers", "layer"):
            return cls.layers(int(p) for p in parts)
        if mode == "groups":
            return cls.groups(parts)
        raise ValueError(f"cannot parse selector {text!r}")


def select(params: ParamState, sel: LayerSelector) -> tuple[dict[Key, np.ndarray], dict[Key, np.ndarray]]:
    """Split entries into (selected, complement) dictionaries."""
    sel.validate(params.spec)
    chosen: dict[Key, np.ndarray] = {}
    rest: dict[Key, np.ndarray] = {}
    for key, arr in params.arrays.items():
        (chosen if sel.contains(key) else rest)[key] = arr
    return chosen, rest


def init_params(spec: ModelSpec, seed: int, stream: int = 0) -> ParamState:
    """Fan-in scaled uniform weights on ``[-sqrt(3/fan_in), sqrt(3/fan_in)]``; zero biases.

    ``stream`` selects an independent draw for the same seed (used when
    re-initializing part of an existing model).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417, int(stream)]))
    arrays: dict[Key, np.ndarray] = {}
    for (layer, name), shape in spec.shapes().items():
        if name == "bias":
            arrays[(layer, name)] = np.zeros(shape)
        else:
            bound = init_bound(shape[1])
            arrays[(layer, name)] = rng.uniform(-bound, bound, size=shape)
    return ParamState(spec, arrays)


def init_bound(fan_in: int) -> float:
    return float(np.sqrt(3.0) * np.sqrt(1.0 / fan_in))


def zeros_like(params: ParamState) -> ParamState:
    return params.map(lambda _k, a: np.zeros_like(a))


def _check_inputs(params: ParamState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ShapeError(
            f"layer 0 weight expects inputs of width {params.spec.input_dim}, got array of shape {x.shape}"
        )
    return x


def _check_labels(spec: ModelSpec, y: np.ndarray, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= spec.n_classes):
        raise ValueError(f"labels must lie in [0, {spec.n_classes})")
    return y.astype(np.int64)


def _forward_cache(spec: ModelSpec, arrays: Mapping[Key, np.ndarray], x: np.ndarray):
    acts = [x]
    a = x
    last = spec.n_layers - 1
    for layer in range(spec.n_layers):
        z = a @ arrays[(layer, "weight")].T + arrays[(layer, "bias")]
        a = z if layer == last else np.maximum(z, 0.0)
        acts.append(a)
    return a, acts


def logits(params: ParamState, x: np.ndarray) -> np.ndarray:
    x = _check_inputs(params, x)
    return _forward_cache(params.spec, params.arrays, x)[0]


def _loss_and_dlogits(spec: ModelSpec, z: np.ndarray, y: np.ndarray, want_grad: bool):
    n = z.shape[0]
    if spec.loss == BCE:
        z1 = z[:, 0]
        t = y.astype(np.float64)
        # softplus(z) - t*z, computed without overflow
        per = np.maximum(z1, 0.0) - t * z1 + np.log1p(np.exp(-np.abs(z1)))
        correct = (z1 > 0.0).astype(np.int64) == y
        grad = None
        if want_grad:
            prob = np.empty_like(z1)
            pos = z1 >= 0
            prob[pos] = 1.0 / (1.0 + np.exp(-z1[pos]))
            ez = np.exp(z1[~pos])
            prob[~pos] = ez / (1.0 + ez)
            grad = ((prob - t) / n)[:, None]
    else:
        m = z.max(axis=1, keepdims=True)
        shifted = z - m
        lse = np.log(np.exp(shifted).sum(axis=1))
        per = lse - shifted[np.arange(n), y]
        correct = np.argmax(z, axis=1) == y
        grad = None
        if want_grad:
            p = np.exp(shifted - lse[:, None])
            p[np.arange(n), y] -= 1.0
            grad = p / n
    loss = float(np.maximum(per, 0.0).mean()) if n else 0.0
    acc = float(correct.mean()) if n else 0.0
    return loss, acc, grad


def predict(params: ParamState, x: np.ndarray) -> np.ndarray:
    z = logits(params, x)
    if params.spec.loss == BCE:
        return (z[:, 0] > 0.0).astype(np.int64)
    return np.argmax(z, axis=1)


def forward(params: ParamState, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Return ``(logits, mean loss, accuracy)`` on a labelled batch."""
    x = _check_inputs(params, x)
    y = _check_labels(params.spec, y, x.shape[0])
    z = _forward_cache(params.spec, params.arrays, x)[0]
    loss, acc, _ = _loss_and_dlogits(params.spec, z, y, want_grad=False)
    return z, loss, acc


def evaluate(params: ParamState, x: np.ndarray, y: np.ndarray, chunk: int = 8192) -> tuple[float, float]:
    """Mean loss and accuracy over a (possibly large) dataset, in fixed-size chunks."""
    x = _check_inputs(params, x)
    y = _check_labels(params.spec, y, x.shape[0])
    n = x.shape[0]
    if n <= chunk:
        z = _forward_cache(params.spec, params.arrays, x)[0]
        loss, acc, _ = _loss_and_dlogits(params.spec, z, y, want_grad=False)
        return loss, acc
    loss_sum = 0.0
    hits = 0.0
    for s in range(0, n, chunk):
        z = _forward_cache(params.spec, params.arrays, x[s:s + chunk])[0]
        l, a, _ = _loss_and_dlogits(params.spec, z, y[s:s + chunk], want_grad=False)
        m = z.shape[0]
        loss_sum += l * m
        hits += a * m
    return loss_sum / n, hits / n


def loss_and_grad(params: ParamState, x: np.ndarray, y: np.ndarray) -> tuple[float, float, dict[Key, np.ndarray]]:
    """Mean loss, accuracy and the raw gradient dictionary (no ParamState wrapping)."""
    x = _check_inputs(params, x)
    y = _check_labels(params.spec, y, x.shape[0])
    return raw_loss_and_grad(params.spec, params.arrays, x, y)


def raw_loss_and_grad(spec: ModelSpec, arrays: Mapping[Key, np.ndarray], x: np.ndarray, y: np.ndarray):
    """Unchecked gradient kernel used by the training loop on mutable arrays."""
    z, acts = _forward_cache(spec, arrays, x)
    loss, acc, delta = _loss_and_dlogits(spec, z, y, want_grad=True)
    grads: dict[Key, np.ndarray] = {}
    for layer in range(spec.n_layers - 1, -1, -1):
        a_in = acts[layer]
        grads[(layer, "weight")] = delta.T @ a_in
        grads[(layer, "bias")] = delta.sum(axis=0)
        if layer:
            # ReLU subgradient at 0 is 0
            delta = (delta @ arrays[(layer, "weight")]) * (acts[layer] > 0.0)
    return loss, acc, grads


def backward(params: ParamState, x: np.ndarray, y: np.ndarray) -> GradState:
    """Exact mean-batch gradient of the loss with respect to every parameter."""
    _, _, grads = loss_and_grad(params, x, y)
    return ParamState(params.spec, grads)
