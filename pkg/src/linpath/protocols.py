"""Seed-swept experiment recipes built from training runs and path probes.

Each ``run_*`` function returns a :class:`ProtocolResult` whose ``records``
map an intervention name to one :class:`~linpath.optim.RunRecord` per used
seed (in seed order). Seeds that a protocol cannot use are listed in
``skipped`` with the reason, so used + skipped always equals the seeds asked for.

Desk-scale stand-ins are labelled in ``notes``: blobs for the easy image task,
Gaussian jitter for image augmentation, a related synthetic task for
large-scale pre-training.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import interp
from .datasets import AugmentSpec, Dataset, corrupt_labels, subset
from .interp import BARRIER, NO_BARRIER, PLATEAU, ShapeTolerances
from .nn import LayerSelector, ModelSpec, ParamState, init_params
from .optim import GroupOverride, OptimConfig, RunRecord, TrainConfig, train

log = logging.getLogger(__name__)

ANALOG_NOTE = (
    "desk-scale analogs: blobs stand in for the easy image task, Gaussian jitter for "
    "flip/crop augmentation, a related synthetic task for large-scale pre-training"
)

# independent init streams for the same seed
RESET_STREAM = 1
SHUFFLE_STRIDE = 1_000_003


class ProtocolError(RuntimeError):
    pass


class MemorizationError(ProtocolError):
    pass


@dataclass(frozen=True)
class Base:
    """Everything a protocol needs besides its own fields and the seed list."""

    spec: ModelSpec
    data: Dataset
    optim: OptimConfig
    train: TrainConfig
    tolerances: ShapeTolerances = ShapeTolerances()
    points: int = interp.DEFAULT_POINTS
    split: str = "test"
    layer_paths: bool = True
    workers: int = 1

    def train_for(self, seed: int) -> TrainConfig:
        return replace(self.train, shuffle_seed=self.train.shuffle_seed * SHUFFLE_STRIDE + int(seed))


@dataclass
class ProtocolResult:
    name: str
    baseline: str
    records: dict[str, list[RunRecord]] = field(default_factory=dict)
    skipped: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    phase_a: dict[str, list[RunRecord]] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)

    def add(self, tag: str, rec: RunRecord) -> None:
        if tag not in self.records:
            self.records[tag] = []
            self.order.append(tag)
        rec.tag = tag
        self.records[tag].append(rec)

    def skip(self, seed: int, reason: str, intervention: str | None = None) -> None:
        self.skipped.append({"seed": int(seed), "intervention": intervention or self.name, "reason": reason})

    def rows(self) -> list["ComparisonRow"]:
        return summarize([r for recs in self.records.values() for r in recs], self.baseline, self.order)


# -- single runs ------------------------------------------------------------

def probe(base: Base, rec: RunRecord, spec: ModelSpec | None = None, data: Dataset | None = None) -> RunRecord:
    """Attach the full-model path and (optionally) one path per layer, all classified."""
    spec = spec or rec.spec
    data = data or base.data
    if rec.status != "ok":
        return rec
    sels = {"full": LayerSelector.all()}
    if base.layer_paths:
        sels.update({f"layer{l}": LayerSelector.layers([l]) for l in range(spec.n_layers)})
    for label, sel in sels.items():
        path = interp.evaluate_path(spec, rec.init, rec.final, data, sel, base.split, base.points)
        rec.paths[label] = path
        rec.shapes[label] = interp.classify(path, base.tolerances)
    rec.extras["relative_distance"] = interp.relative_distance(rec.final, rec.init)
    return rec


def train_and_probe(base: Base, init: ParamState, seed: int, optim: OptimConfig | None = None,
                    data: Dataset | None = None, tc: TrainConfig | None = None,
                    do_probe: bool = True) -> RunRecord:
    data = data or base.data
    rec = train(init.spec, init, data, optim or base.optim, tc or base.train_for(seed))
    rec.seed = int(seed)
    if do_probe:
        probe(base, rec, init.spec, data)
    return rec


def scratch_run(base: Base, seed: int) -> RunRecord:
    return train_and_probe(base, init_params(base.spec, seed), seed)


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _scratch_records(base: Base, seeds: Sequence[int], scratch: ProtocolResult | None) -> dict[int, RunRecord]:
    have = {}
    if scratch is not None:
        have = {r.seed: r for r in scratch.records.get("scratch", [])}
    todo = [s for s in seeds if s not in have]
    for s, rec in zip(todo, _map(partial(scratch_run, base), todo, base.workers)):
        have[s] = rec
    return have


def _attach_scratch(result: ProtocolResult, base: Base, seeds, scratch) -> dict[int, RunRecord]:
    recs = _scratch_records(base, seeds, scratch)
    for s in seeds:
        result.add("scratch", recs[s])
    return recs


# -- protocols --------------------------------------------------------------

def run_scratch(base: Base, seeds: Sequence[int]) -> ProtocolResult:
    result = ProtocolResult("scratch", "scratch")
    for rec in _map(partial(scratch_run, base), list(seeds), base.workers):
        result.add("scratch", rec)
    return result


def _adversarial_seed(base: Base, cap_epochs: int, memorize_acc: float, seed: int):
    noisy = corrupt_labels(base.data, 1.0, seed)
    tc = replace(base.train_for(seed), epochs=cap_epochs, stop_at_train_acc=memorize_acc)
    phase_a = train(base.spec, init_params(base.spec, seed), noisy, base.optim, tc)
    phase_a.seed = seed
    reached = phase_a.final_metrics.get("train_acc", 0.0)
    if phase_a.status != "ok" or reached < memorize_acc:
        raise MemorizationError(
            f"seed {seed}: random-label training reached train accuracy {reached:.4f} < {memorize_acc} "
            f"within the cap of {cap_epochs} epochs; widen the model or raise the cap"
        )
    phase_b = train_and_probe(base, phase_a.final, seed)
    phase_b.extras.update(phase_a_digest=phase_a.final.digest(), phase_a_epochs=phase_a.epochs_run,
                          phase_a_train_acc=reached)
    return phase_a, phase_b


def run_adversarial_init(base: Base, seeds: Sequence[int], cap_epochs: int = 2000,
                         memorize_acc: float = 0.999, scratch: ProtocolResult | None = None) -> ProtocolResult:
    """Memorize fully random labels (phase A), then train on the true labels from there (phase B)."""
    result = ProtocolResult("adversarial_init", "scratch")
    _attach_scratch(result, base, seeds, scratch)
    pairs = _map(partial(_adversarial_seed, base, cap_epochs, memorize_acc), list(seeds), base.workers)
    for phase_a, phase_b in pairs:
        result.phase_a.setdefault("adversarial", []).append(phase_a)
        result.add("adversarial", phase_b)
    return result


def offset_tag(offset: int) -> str:
    return f"height_of_barrier[{offset:+d}]"


def run_height_of_barrier(base: Base, seeds: Sequence[int], offsets: Iterable[int] = (0,),
                          scratch: ProtocolResult | None = None) -> ProtocolResult:
    """Restart training from the summit of each seed's barrier (shifted by ``offset`` grid points).

    Seeds whose scratch path is not a Barrier under ``base.tolerances`` are skipped.
    """
    result = ProtocolResult("height_of_barrier", "scratch")
    result.notes.append(f"barrier qualification uses tolerances {base.tolerances.to_dict()}")
    recs = _scratch_records(base, seeds, scratch)
    for s in seeds:
        result.add("scratch", recs[s])
    offsets = list(offsets)
    for seed in seeds:
        sc = recs[seed]
        shape = sc.shapes.get("full")
        if shape is None or shape.tag != BARRIER:
            result.skip(seed, f"scratch path is {shape.tag if shape else 'missing'}, not Barrier")
            continue
        threshold = sc.train_loss
        for off in offsets:
            alpha, start = interp.state_at_offset(sc.init, sc.final, sc.paths["full"], off, base.tolerances)
            rec = train_and_probe(base, start, seed)
            rec.extras.update(
                offset=off, start_alpha=alpha, scratch_init_digest=sc.init.digest(),
                threshold=threshold, epochs_to_threshold=rec.epochs_to_train_loss(threshold),
                scratch_epochs_to_threshold=sc.epochs_to_train_loss(threshold),
            )
            result.add(offset_tag(off), rec)
    return result


def reset_layers(state: ParamState, sel: LayerSelector, seed: int) -> ParamState:
    """Replace the selected entries with a fresh draw from the initialization scheme."""
    fresh = init_params(state.spec, seed, stream=RESET_STREAM)
    return state.replace({k: fresh[k] for k in sel.keys(state.spec)})


def run_pretrain_transfer(base: Base, source: Dataset, seeds: Sequence[int], lr_divisor: float = 100.0,
                          scratch: ProtocolResult | None = None) -> ProtocolResult:
    """Train on ``source`` (phase A), then fine-tune on the target with lr/100 and one 10x drop halfway."""
    result = ProtocolResult("pretrain_transfer", "scratch")
    result.notes.append(ANALOG_NOTE)
    _attach_scratch(result, base, seeds, scratch)
    fine = replace(base.optim, lr=base.optim.lr / lr_divisor, schedule=((max(1, base.train.epochs // 2), 0.1),))
    for seed in seeds:
        phase_a = train(base.spec, init_params(base.spec, seed), source, base.optim, base.train_for(seed))
        phase_a.seed = seed
        result.phase_a.setdefault("pretrained", []).append(phase_a)
        rec = train_and_probe(base, phase_a.final, seed, optim=fine)
        rec.extras.update(phase_a_digest=phase_a.final.digest(), source=dict(source.provenance))
        result.add("pretrained", rec)
    return result


def run_partial_reset(base: Base, seeds: Sequence[int], sel: LayerSelector, source: str = "trained",
                      scratch: ProtocolResult | None = None, pretrained: ProtocolResult | None = None,
                      optim: OptimConfig | None = None) -> ProtocolResult:
    """Start from a trained (or pre-trained) state with the selected layers re-drawn, then retrain."""
    if source not in ("trained", "pretrained"):
        raise ValueError(f"source must be 'trained' or 'pretrained', got {source!r}")
    sel.validate(base.spec)
    result = ProtocolResult("partial_reset", "scratch")
    recs = _attach_scratch(result, base, seeds, scratch)
    if source == "pretrained":
        if pretrained is None:
            raise ProtocolError("source='pretrained' needs the result of run_pretrain_transfer")
        sources = {r.seed: r for r in pretrained.phase_a.get("pretrained", [])}
    else:
        sources = recs
    tag = f"reset[{sel.label()}]/{source}"
    for seed in seeds:
        if seed not in sources:
            result.skip(seed, f"no {source} source state for this seed", tag)
            continue
        src = sources[seed].final
        start = reset_layers(src, sel, seed)
        rec = train_and_probe(base, start, seed, optim=optim)
        rec.extras.update(source_digest=src.digest(), reset=sel.label(), source=source)
        result.add(tag, rec)
    return result


@dataclass(frozen=True)
class GroupRule:
    """lr / weight-decay multipliers for layers whose own path is Barrier vs not."""

    barrier: tuple[float, float] = (1.0, 1.0)
    no_barrier: tuple[float, float] = (1.0, 1.0)

    def overrides(self, base: OptimConfig, barrier_layers: set[int], n_layers: int) -> tuple[GroupOverride, ...]:
        out = []
        nb_layers = set(range(n_layers)) - barrier_layers
        for layers, (lr_m, wd_m) in ((barrier_layers, self.barrier), (nb_layers, self.no_barrier)):
            if layers and (lr_m, wd_m) != (1.0, 1.0):
                out.append(GroupOverride(LayerSelector.layers(layers), base.lr * lr_m, base.weight_decay * wd_m))
        return tuple(out)


def table_a2_rules(factor: float = 0.1, with_weight_decay: bool = False) -> dict[str, GroupRule]:
    rules = {
        "low_lr_NB": GroupRule(no_barrier=(factor, 1.0)),
        "low_lr_B": GroupRule(barrier=(factor, 1.0)),
        "low_lr_all": GroupRule(barrier=(factor, 1.0), no_barrier=(factor, 1.0)),
    }
    if with_weight_decay:
        rules.update({
            "no_wd_NB": GroupRule(no_barrier=(1.0, 0.0)),
            "no_wd_B": GroupRule(barrier=(1.0, 0.0)),
            "no_wd_all": GroupRule(barrier=(1.0, 0.0), no_barrier=(1.0, 0.0)),
        })
    return rules


def barrier_layers(rec: RunRecord) -> set[int]:
    return {int(label[5:]) for label, shape in rec.shapes.items()
            if label.startswith("layer") and shape.tag == BARRIER}


def run_per_group_hyper(base: Base, seeds: Sequence[int], rules: Mapping[str, GroupRule] | None = None,
                        scratch: ProtocolResult | None = None) -> ProtocolResult:
    """Retrain with hyperparameters chosen per layer from that layer's scratch path shape."""
    if not base.layer_paths:
        raise ProtocolError("per-group hyperparameters need layer-wise paths (layer_paths=True)")
    rules = table_a2_rules() if rules is None else rules
    result = ProtocolResult("per_group_hyper", "scratch")
    recs = _attach_scratch(result, base, seeds, scratch)
    for name, rule in rules.items():
        for seed in seeds:
            sc = recs[seed]
            b_layers = barrier_layers(sc)
            overrides = rule.overrides(base.optim, b_layers, base.spec.n_layers)
            rec = train_and_probe(base, sc.init, seed, optim=replace(base.optim, group_overrides=overrides))
            rec.extras.update(barrier_layers=sorted(b_layers), rule=name)
            result.add(name, rec)
    return result


def barriers_removed(result: ProtocolResult, regime: str = "low_lr_B") -> tuple[int, int]:
    """(seeds whose scratch barrier layers are all non-Barrier in ``regime``, seeds with any barrier layer)."""
    scratch = {r.seed: r for r in result.records.get("scratch", [])}
    removed = eligible = 0
    for rec in result.records.get(regime, []):
        layers = barrier_layers(scratch[rec.seed])
        if not layers:
            continue
        eligible += 1
        if all(rec.shapes[f"layer{l}"].tag != BARRIER for l in layers):
            removed += 1
    return removed, eligible


WIDTH_PLANS = {
    "all50": (50,) * 6,
    "all500": (500,) * 6,
    "mixed500_25": (500, 500, 500, 25, 25, 25),
}
# Layers are counted over nodes (input = 1, output = 8); a parameter layer belongs to the
# node layer it feeds, so parameter layers 0-2 feed node layers 2-4.
EARLY_LAYERS = (0, 1, 2)
LATE_LAYERS = (3, 4, 5, 6)


def run_width_sweep(base: Base, seeds: Sequence[int], plans: Mapping[str, Sequence[int]] | None = None,
                    epochs: Mapping[str, int] | None = None) -> ProtocolResult:
    """Scratch runs for each hidden-width plan; ``epochs`` optionally sets the length per plan."""
    plans = WIDTH_PLANS if plans is None else plans
    result = ProtocolResult("width_sweep", next(iter(plans)))
    for name, widths in plans.items():
        spec = replace(base.spec, hidden_widths=tuple(widths))
        tc = base.train if not epochs or name not in epochs else replace(base.train, epochs=epochs[name])
        plan_base = replace(base, spec=spec, train=tc)
        for rec in _map(partial(scratch_run, plan_base), list(seeds), base.workers):
            rec.extras["plan"] = name
            result.add(name, rec)
    return result


def layer_barrier_frequency(records: Sequence[RunRecord], layers: Iterable[int]) -> float:
    """Fraction of (seed, layer) pairs among ``layers`` whose layer-wise path is a Barrier."""
    hits = total = 0
    for rec in records:
        for l in layers:
            shape = rec.shapes.get(f"layer{l}")
            if shape is not None:
                total += 1
                hits += shape.tag == BARRIER
    return hits / total if total else float("nan")


def data_tag(fraction: float, aug: AugmentSpec) -> str:
    return f"data{fraction:g}/{aug.label()}"


def _data_seed(base: Base, fraction: float, aug: AugmentSpec, seed: int) -> RunRecord:
    data = subset(base.data, fraction, seed)
    tc = replace(base.train_for(seed), augment=aug, batch_size=min(base.train.batch_size, data.n_train))
    return train_and_probe(base, init_params(base.spec, seed), seed, data=data, tc=tc)


def run_data_sweep(base: Base, fractions: Sequence[float], augments: Sequence[AugmentSpec],
                   seeds: Sequence[int]) -> ProtocolResult:
    result = ProtocolResult("data_sweep", data_tag(max(fractions), augments[0]) if fractions else "")
    result.notes.append(ANALOG_NOTE)
    for f in fractions:
        for aug in augments:
            for rec in _map(partial(_data_seed, base, f, aug), list(seeds), base.workers):
                result.add(data_tag(f, aug), rec)
    return result


# -- summaries --------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    intervention: str
    n_seeds: int
    shapes: dict
    acc_mean: float
    acc_std: float | None
    delta_mean: float
    delta_std: float | None
    distance_mean: float
    height_mean: float | None
    tolerances: dict
    seeds: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "intervention": self.intervention, "n_seeds": self.n_seeds,
            "shape_NoBarrier": self.shapes.get(NO_BARRIER, 0), "shape_Barrier": self.shapes.get(BARRIER, 0),
            "shape_Plateau": self.shapes.get(PLATEAU, 0), "acc_mean": self.acc_mean, "acc_std": self.acc_std,
            "delta_acc_mean": self.delta_mean, "delta_acc_std": self.delta_std,
            "distance_mean": self.distance_mean, "barrier_height_mean": self.height_mean,
            "tolerances": ",".join(f"{k}={v!r}" for k, v in self.tolerances.items()),
        }


ROW_COLUMNS = ["intervention", "n_seeds", "shape_NoBarrier", "shape_Barrier", "shape_Plateau", "acc_mean",
               "acc_std", "delta_acc_mean", "delta_acc_std", "distance_mean", "barrier_height_mean",
               "tolerances"]


def mean_std(values: Sequence[float]) -> tuple[float, float | None]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return float("nan"), None
    std = float(arr.std(ddof=1)) if arr.size >= 2 else None
    return float(arr.mean()), std


def summarize(records: Iterable[RunRecord], baseline: str, order: Sequence[str] = ()) -> list[ComparisonRow]:
    """One row per intervention tag; accuracy deltas are paired by seed against ``baseline``."""
    groups: dict[str, list[RunRecord]] = {}
    for rec in records:
        groups.setdefault(rec.tag, []).append(rec)
    if not groups:
        return []
    for recs in groups.values():
        recs.sort(key=lambda r: (r.seed is None, r.seed))
    base_acc = {r.seed: r.test_acc for r in groups.get(baseline, [])}
    base_mean = mean_std(list(base_acc.values()))[0] if base_acc else float("nan")
    ranked = [t for t in order if t in groups]
    names = ([baseline] if baseline in groups else []) + [t for t in ranked if t != baseline]
    names += sorted(t for t in groups if t not in names)
    rows = []
    for name in names:
        recs = groups[name]
        accs = [r.test_acc for r in recs]
        deltas = [r.test_acc - base_acc.get(r.seed, base_mean) for r in recs]
        shapes: dict[str, int] = {}
        heights = []
        tol = {}
        for r in recs:
            sh = r.shapes.get("full")
            if sh is None:
                continue
            tol = sh.tolerances.to_dict()
            shapes[sh.tag] = shapes.get(sh.tag, 0) + 1
            if sh.tag == BARRIER:
                heights.append(sh.height)
        dists = [r.extras["relative_distance"] for r in recs if "relative_distance" in r.extras]
        am, asd = mean_std(accs)
        dm, dsd = mean_std(deltas)
        rows.append(ComparisonRow(
            name, len(recs), shapes, am, asd, dm, dsd,
            float(np.mean(dists)) if dists else float("nan"),
            float(np.mean(heights)) if heights else None, tol,
            tuple(r.seed for r in recs),
        ))
    return rows


def shape_count(records: Sequence[RunRecord], tag: str, label: str = "full") -> int:
    return sum(1 for r in records if label in r.shapes and r.shapes[label].tag == tag)


def majority(count: int, total: int) -> bool:
    return total > 0 and count * 2 > total


def epochs_faster(records: Sequence[RunRecord]) -> tuple[int, int]:
    """(runs that hit the scratch final train loss sooner than scratch did, runs considered)."""
    faster = 0
    for r in records:
        mine = r.extras.get("epochs_to_threshold")
        theirs = r.extras.get("scratch_epochs_to_threshold")
        if mine is not None and (theirs is None or mine < theirs):
            faster += 1
    return faster, len(records)


def fraction(n: int, d: int) -> float:
    return n / d if d else math.nan
