"""Synthetic datasets, label corruption, stratified subsets and jitter augmentation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    train_idx: np.ndarray = field(repr=False)
    test_idx: np.ndarray = field(repr=False)
    n_classes: int = 2
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        tr = np.array(self.train_idx, dtype=np.int64)
        te = np.array(self.test_idx, dtype=np.int64)
        if feats.ndim != 2 or labels.shape != (feats.shape[0],):
            raise ValueError(f"features {feats.shape} and labels {labels.shape} disagree")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        n = feats.shape[0]
        both = np.concatenate([tr, te])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ValueError("train/test split must be disjoint and exhaustive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        for name, arr in (("features", feats), ("labels", labels), ("train_idx", tr), ("test_idx", te)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_train(self) -> int:
        return self.train_idx.size

    @property
    def n_test(self) -> int:
        return self.test_idx.size

    @property
    def x_train(self) -> np.ndarray:
        return self.features[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.labels[self.train_idx]

    @property
    def x_test(self) -> np.ndarray:
        return self.features[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.labels[self.test_idx]

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.x_train, self.y_train
        if which == "test":
            return self.x_test, self.y_test
        raise ValueError(f"unknown split {which!r}, expected 'train' or 'test'")

    def class_counts(self, which: str = "train") -> list[int]:
        _, y = self.split(which)
        return np.bincount(y, minlength=self.n_classes).tolist()


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def _balanced_counts(n: int, n_classes: int = 2) -> list[int]:
    base = n // n_classes
    counts = [base] * n_classes
    counts[0] += n - base * n_classes
    return counts


def spiral_points(t: np.ndarray, label: np.ndarray, noise: float = 0.0, rng=None) -> np.ndarray:
    """Two interleaved spirals: radius 2*sqrt(t), angle 8*sqrt(t)*pi (+pi for class 1)."""
    s = np.sqrt(t)
    angle = 8.0 * s * np.pi + np.pi * label
    x = 2.0 * s * np.cos(angle)
    y = 2.0 * s * np.sin(angle)
    pts = np.stack([x, y], axis=1)
    if noise:
        pts = pts + noise * rng.standard_normal(pts.shape)
    return pts


def _assemble(parts_train, parts_test, n_classes, provenance, rng) -> Dataset:
    feats_tr = np.concatenate([p[0] for p in parts_train])
    lab_tr = np.concatenate([p[1] for p in parts_train])
    feats_te = np.concatenate([p[0] for p in parts_test])
    lab_te = np.concatenate([p[1] for p in parts_test])
    order_tr = rng.permutation(lab_tr.size)
    order_te = rng.permutation(lab_te.size)
    feats = np.concatenate([feats_tr[order_tr], feats_te[order_te]])
    labels = np.concatenate([lab_tr[order_tr], lab_te[order_te]])
    n_tr = lab_tr.size
    return Dataset(
        feats, labels, np.arange(n_tr), np.arange(n_tr, labels.size),
        n_classes=n_classes, provenance=provenance,
    )


def spiral(n_train: int = 10000, n_test: int = 5000, noise: float = 0.02, seed: int = 0,
           rotation: float = 0.0) -> Dataset:
    """Binary spiral data; ``rotation`` (radians) rotates the whole set, for related source tasks."""
    if n_train <= 0 or n_test <= 0:
        raise ValueError("n_train and n_test must be positive")
    rng = _rng(seed, 101)

    def draw(n):
        parts = []
        for cls, count in enumerate(_balanced_counts(n)):
            t = rng.uniform(0.0, 1.0, size=count)
            pts = spiral_points(t, np.full(count, cls), noise, rng)
            if rotation:
                c, s = math.cos(rotation), math.sin(rotation)
                pts = pts @ np.array([[c, s], [-s, c]])
            parts.append((pts, np.full(count, cls)))
        return parts

    train = draw(n_train)
    test = draw(n_test)
    prov = {"generator": "spiral", "seed": int(seed), "n_train": n_train, "n_test": n_test,
            "noise": noise, "rotation": rotation}
    return _assemble(train, test, 2, prov, rng)


def blobs(n_train: int = 10000, n_test: int = 5000, separation: float = 8.0, sigma: float = 1.0,
          seed: int = 0, dim: int = 2) -> Dataset:
    """Two isotropic Gaussian classes whose means are ``separation`` apart along the first axis."""
    if n_train <= 0 or n_test <= 0:
        raise ValueError("n_train and n_test must be positive")
    rng = _rng(seed, 202)
    means = np.zeros((2, dim))
    means[0, 0] = -separation / 2.0
    means[1, 0] = separation / 2.0

    def draw(n):
        parts = []
        for cls, count in enumerate(_balanced_counts(n)):
            pts = means[cls] + sigma * rng.standard_normal((count, dim))
            parts.append((pts, np.full(count, cls)))
        return parts

    train = draw(n_train)
    test = draw(n_test)
    prov = {"generator": "blobs", "seed": int(seed), "n_train": n_train, "n_test": n_test,
            "separation": separation, "sigma": sigma, "dim": dim}
    return _assemble(train, test, 2, prov, rng)


def corrupt_labels(data: Dataset, fraction: float, seed: int) -> Dataset:
    """Resample the labels of ``ceil(fraction * n_train)`` training points uniformly over all classes.

    Resampled labels may coincide with the originals.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0:
        return data
    rng = _rng(seed, 303)
    count = min(data.n_train, math.ceil(round(fraction * data.n_train, 9)))
    picked = rng.choice(data.train_idx, size=count, replace=False)
    labels = np.array(data.labels)
    labels[picked] = rng.integers(0, data.n_classes, size=count)
    prov = dict(data.provenance, corrupt_fraction=fraction, corrupt_seed=int(seed))
    return replace(data, labels=labels, provenance=prov)


def subset(data: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep a class-stratified ``ceil(fraction * n_train)`` training points; the test split is untouched."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return data
    target = math.ceil(round(fraction * data.n_train, 9))
    rng = _rng(seed, 404)
    y = data.y_train
    counts = np.bincount(y, minlength=data.n_classes)
    # largest-remainder allocation keeps every class within one sample of its share
    exact = counts * target / data.n_train
    take = np.floor(exact).astype(int)
    for c in np.argsort(-(exact - take), kind="stable")[: target - take.sum()]:
        take[c] += 1
    keep = []
    for c in range(data.n_classes):
        members = data.train_idx[y == c]
        keep.append(np.sort(rng.choice(members, size=take[c], replace=False)))
    kept = np.sort(np.concatenate(keep))
    # re-index so the split stays exhaustive
    idx = np.concatenate([kept, data.test_idx])
    n_kept = kept.size
    prov = dict(data.provenance, subset_fraction=fraction, subset_seed=int(seed))
    return Dataset(
        data.features[idx], data.labels[idx], np.arange(n_kept), np.arange(n_kept, idx.size),
        n_classes=data.n_classes, provenance=prov,
    )


@dataclass(frozen=True)
class AugmentSpec:
    sigma: float = 0.0  # 0 means no augmentation

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"jitter sigma must be finite and >= 0, got {self.sigma}")

    @property
    def kind(self) -> str:
        return "gaussian_jitter" if self.sigma > 0 else "none"

    def label(self) -> str:
        return f"jitter{self.sigma:g}" if self.sigma > 0 else "none"


def augment(batch: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Add fresh N(0, sigma^2) noise to every feature of the batch."""
    if spec.sigma == 0:
        return batch
    return batch + spec.sigma * rng.standard_normal(batch.shape)


def dataset_from_config(cfg: dict) -> Dataset:
    kind = cfg.get("kind", "spiral")
    params = {k: v for k, v in cfg.items() if k != "kind"}
    if kind == "spiral":
        return spiral(**params)
    if kind == "blobs":
        return blobs(**params)
    raise ValueError(f"unknown dataset kind {kind!r}")


def to_csv(data: Dataset, path: str | Path) -> None:
    """Columns ``x0..x{d-1}, label, split``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(data.dim)] + ["label", "split"])
    split = np.empty(data.labels.size, dtype=object)
    split[data.train_idx] = "train"
    split[data.test_idx] = "test"
    for row, lab, sp in zip(data.features, data.labels, split):
        w.writerow([repr(float(v)) for v in row] + [int(lab), sp])
    Path(path).write_text(buf.getvalue())


def from_csv(path: str | Path, n_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if "label" not in header:
        raise ValueError(f"{path}: missing 'label' column")
    li = header.index("label")
    si = header.index("split") if "split" in header else None
    feat_cols = [i for i, h in enumerate(header) if i not in (li, si)]
    feats = np.array([[float(r[i]) for i in feat_cols] for r in body]).reshape(len(body), len(feat_cols))
    labels = np.array([int(r[li]) for r in body], dtype=np.int64)
    if si is None:
        is_train = np.ones(len(body), dtype=bool)
    else:
        is_train = np.array([r[si] == "train" for r in body])
    k = n_classes or (int(labels.max()) + 1 if labels.size else 2)
    return Dataset(feats, labels, np.flatnonzero(is_train), np.flatnonzero(~is_train),
                   n_classes=max(k, 2), provenance={"generator": "csv", "path": str(path)})
