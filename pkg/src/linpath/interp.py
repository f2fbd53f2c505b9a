"""Linear paths between parameter states and the shape of the loss along them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .datasets import Dataset
from .nn import LayerSelector, ModelSpec, ParamState

DEFAULT_POINTS = 51


class IncompatibleStates(ValueError):
    pass


class NoSummit(ValueError):
    pass


def _check_compatible(a: ParamState, b: ParamState) -> None:
    if a.spec_hash != b.spec_hash:
        raise IncompatibleStates(f"states come from different model specs ({a.spec_hash} vs {b.spec_hash})")


def _mix(theta_i: ParamState, theta_f: ParamState, w_i: float, w_f: float, keys=None) -> ParamState:
    keys = theta_i.arrays.keys() if keys is None else keys
    updates = {k: w_i * theta_i[k] + w_f * theta_f[k] for k in keys}
    base = {k: theta_f[k] for k in theta_f.keys()}
    base.update(updates)
    return ParamState(theta_f.spec, base)


def interpolate(theta_i: ParamState, theta_f: ParamState, alpha: float) -> ParamState:
    """``(1 - alpha) * theta_i + alpha * theta_f``; exact at both endpoints."""
    return layer_interpolate(theta_i, theta_f, LayerSelector.all(), alpha)


def layer_interpolate(theta_i: ParamState, theta_f: ParamState, sel: LayerSelector, alpha: float,
                      complement: float | None = None) -> ParamState:
    """Interpolate the selected entries; everything else stays at ``theta_f``.

    ``complement`` overrides the weight on ``theta_i`` (default ``1 - alpha``)
    so grid callers can pass an exactly computed value.
    """
    _check_compatible(theta_i, theta_f)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    keys = sel.keys(theta_f.spec)
    if alpha == 0.0:
        return theta_f.replace({k: theta_i[k] for k in keys})
    if alpha == 1.0:
        return theta_f
    w_i = 1.0 - alpha if complement is None else complement
    return _mix(theta_i, theta_f, w_i, alpha, keys)


def alpha_grid(points: int = DEFAULT_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Uniform grid on [0, 1] and its exact mirror weights ``(K-1-k)/(K-1)``."""
    if points < 3:
        raise ValueError(f"need at least 3 grid points, got {points}")
    k = np.arange(points)
    return k / (points - 1), (points - 1 - k) / (points - 1)


@dataclass
class InterpPath:
    alphas: list[float]
    losses: list[float]
    accuracies: list[float]
    varied: LayerSelector = field(default_factory=LayerSelector.all)
    endpoints: tuple[str, str] = ("", "")
    split: str = "test"

    def __post_init__(self):
        if not (len(self.alphas) == len(self.losses) == len(self.accuracies)) or len(self.alphas) < 3:
            raise ValueError("a path needs equally long alpha/loss/accuracy lists of length >= 3")
        if self.alphas[0] != 0.0 or self.alphas[-1] != 1.0:
            raise ValueError("path alphas must start at 0 and end at 1")

    @property
    def points(self) -> int:
        return len(self.alphas)


def evaluate_path(spec: ModelSpec, theta_i: ParamState, theta_f: ParamState, data: Dataset,
                  sel: LayerSelector | None = None, split: str = "test",
                  points: int = DEFAULT_POINTS) -> InterpPath:
    """Loss and accuracy on the full ``split`` at each grid point between the two states."""
    _check_compatible(theta_i, theta_f)
    if theta_f.spec_hash != spec.digest():
        raise IncompatibleStates("states do not match the given model spec")
    sel = LayerSelector.all() if sel is None else sel
    x, y = data.split(split)
    alphas, comps = alpha_grid(points)
    losses, accs = [], []
    for a, c in zip(alphas, comps):
        state = layer_interpolate(theta_i, theta_f, sel, float(a), complement=float(c))
        loss, acc = nn.evaluate(state, x, y)
        losses.append(loss)
        accs.append(acc)
    return InterpPath([float(a) for a in alphas], losses, accs, sel,
                      (theta_i.digest(), theta_f.digest()), split)


@dataclass(frozen=True)
class ShapeTolerances:
    rise: float = 0.05
    plateau: float = 0.05
    plateau_span: float = 0.6

    def __post_init__(self):
        for name in ("rise", "plateau", "plateau_span"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"tolerance {name} must lie in (0, 1), got {v}")

    def to_dict(self) -> dict:
        return {"rise": self.rise, "plateau": self.plateau, "plateau_span": self.plateau_span}

    @classmethod
    def parse(cls, text: str) -> "ShapeTolerances":
        """Parse ``"rise=0.05,plateau=0.05,span=0.6"``; omitted keys keep defaults."""
        vals = {}
        names = {"rise": "rise", "plateau": "plateau", "span": "plateau_span", "plateau_span": "plateau_span"}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, _, val = part.partition("=")
            if key not in names:
                raise ValueError(f"unknown tolerance {key!r}")
            vals[names[key]] = float(val)
        return cls(**vals)


NO_BARRIER = "NoBarrier"
BARRIER = "Barrier"
PLATEAU = "Plateau"


@dataclass(frozen=True)
class PathShape:
    tag: str
    summit_index: int | None = None
    summit_alpha: float | None = None
    height: float | None = None
    drop_index: int | None = None
    drop_alpha: float | None = None
    tolerances: ShapeTolerances = ShapeTolerances()

    def to_dict(self) -> dict:
        d = {"tag": self.tag, "tolerances": self.tolerances.to_dict()}
        if self.tag == BARRIER:
            d.update(summit_index=self.summit_index, summit_alpha=self.summit_alpha, height=self.height)
        elif self.tag == PLATEAU:
            d.update(drop_index=self.drop_index, drop_alpha=self.drop_alpha)
        return d


def plateau_length(points: int, span: float) -> int:
    return math.ceil(round(span * points, 9))


def classify(path: InterpPath, tol: ShapeTolerances = ShapeTolerances()) -> PathShape:
    """Label a path Barrier, Plateau or NoBarrier.

    Barrier: the maximum exceeds ``(1 + rise)`` times the larger endpoint loss and
    is reached by a strict increase. Plateau: the first ``ceil(span * K)`` points
    stay within ``plateau * L0`` of the start and the end loss is below
    ``(1 - plateau) * L0``. Anything else is NoBarrier.
    """
    losses = np.asarray(path.losses, dtype=np.float64)
    if not np.all(np.isfinite(losses)):
        raise ValueError("cannot classify a path with non-finite losses")
    k = losses.size
    start, end = losses[0], losses[-1]
    summit = int(np.argmax(losses))
    top = losses[summit]
    if top > (1.0 + tol.rise) * max(start, end) and summit > 0 and losses[summit - 1] < top:
        return PathShape(BARRIER, summit_index=summit, summit_alpha=path.alphas[summit],
                         height=float(top - start), tolerances=tol)
    band = tol.plateau * start
    inside = np.abs(losses - start) <= band
    head = plateau_length(k, tol.plateau_span)
    if inside[:head].all() and end < (1.0 - tol.plateau) * start:
        drop = int(np.argmin(inside))
        return PathShape(PLATEAU, drop_index=drop, drop_alpha=path.alphas[drop], tolerances=tol)
    return PathShape(NO_BARRIER, tolerances=tol)


def barrier_summit(path: InterpPath, tol: ShapeTolerances = ShapeTolerances(), offset: int = 5) -> dict:
    """Summit of a Barrier path and the grid points ``offset`` steps before and after it.

    Offsets are clamped to the open interval, i.e. indices 1 .. K-2.
    """
    shape = classify(path, tol)
    if shape.tag != BARRIER:
        raise NoSummit(f"path classifies {shape.tag}; there is no barrier summit")
    i = shape.summit_index
    lo, hi = 1, path.points - 2
    before = min(max(i - offset, lo), hi)
    after = min(max(i + offset, lo), hi)
    return {
        "summit_index": i, "summit_alpha": path.alphas[i],
        "before_index": before, "before_alpha": path.alphas[before],
        "after_index": after, "after_alpha": path.alphas[after],
    }


def state_at_offset(theta_i: ParamState, theta_f: ParamState, path: InterpPath, offset_points: int,
                    tol: ShapeTolerances = ShapeTolerances()) -> tuple[float, ParamState]:
    """Reconstruct the parameter state at the summit shifted by ``offset_points`` grid steps."""
    info = barrier_summit(path, tol, abs(offset_points))
    if offset_points == 0:
        idx = info["summit_index"]
    else:
        idx = info["before_index"] if offset_points < 0 else info["after_index"]
    k = path.points - 1
    alpha = idx / k
    state = layer_interpolate(theta_i, theta_f, path.varied, alpha, complement=(k - idx) / k)
    return alpha, state


def relative_distance(theta_f: ParamState, theta_i: ParamState) -> float:
    """``||theta_f - theta_i|| / ||theta_i||`` over all entries concatenated."""
    _check_compatible(theta_i, theta_f)
    ref = np.linalg.norm(theta_i.flat())
    if ref == 0.0:
        raise ValueError("relative distance is undefined for an all-zero reference state")
    return float(np.linalg.norm(theta_f.flat() - theta_i.flat()) / ref)
