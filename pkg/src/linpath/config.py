"""Declarative experiment configuration (JSON), validated before any compute."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import datasets, interp, protocols
from .datasets import AugmentSpec
from .nn import LayerSelector, ModelSpec
from .optim import GroupOverride, OptimConfig, TrainConfig


class ConfigError(ValueError):
    pass


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelCfg(Strict):
    input_dim: int = Field(2, ge=1)
    hidden_widths: list[Annotated[int, Field(ge=1)]] = Field(default_factory=lambda: [50, 50], min_length=1)
    output_dim: int = Field(1, ge=1)
    activation: Literal["relu"] = "relu"
    loss: Literal["bce", "softmax_ce"] = "bce"

    @model_validator(mode="after")
    def _loss_matches_output(self):
        if self.loss == "bce" and self.output_dim != 1:
            raise ValueError("loss 'bce' requires output_dim == 1")
        if self.loss == "softmax_ce" and self.output_dim < 2:
            raise ValueError("loss 'softmax_ce' requires output_dim >= 2")
        return self

    def build(self) -> ModelSpec:
        return ModelSpec(self.input_dim, tuple(self.hidden_widths), self.output_dim, self.activation, self.loss)


class SpiralCfg(Strict):
    kind: Literal["spiral"] = "spiral"
    n_train: int = Field(10000, ge=1)
    n_test: int = Field(5000, ge=1)
    noise: float = Field(0.02, ge=0)
    seed: int = 0
    rotation: float = 0.0

    def build(self) -> datasets.Dataset:
        return datasets.spiral(self.n_train, self.n_test, self.noise, self.seed, self.rotation)


class BlobsCfg(Strict):
    kind: Literal["blobs"]
    n_train: int = Field(10000, ge=1)
    n_test: int = Field(5000, ge=1)
    separation: float = Field(8.0, ge=0)
    sigma: float = Field(1.0, ge=0)
    seed: int = 0
    dim: int = Field(2, ge=1)

    def build(self) -> datasets.Dataset:
        return datasets.blobs(self.n_train, self.n_test, self.separation, self.sigma, self.seed, self.dim)


class CsvDataCfg(Strict):
    kind: Literal["csv"]
    path: str
    n_classes: Optional[int] = None

    def build(self) -> datasets.Dataset:
        return datasets.from_csv(self.path, self.n_classes)


DatasetCfg = Annotated[Union[SpiralCfg, BlobsCfg, CsvDataCfg], Field(discriminator="kind")]


class OverrideCfg(Strict):
    selector: str
    lr: Optional[float] = Field(None, ge=0)
    weight_decay: Optional[float] = Field(None, ge=0)

    @field_validator("selector")
    @classmethod
    def _parses(cls, v):
        LayerSelector.parse(v)
        return v


class OptimizerCfg(Strict):
    kind: Literal["adam", "sgd"] = "adam"
    lr: float = Field(5e-4, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    schedule: list[tuple[int, Annotated[float, Field(gt=0)]]] = Field(default_factory=list)
    group_overrides: list[OverrideCfg] = Field(default_factory=list)

    @field_validator("schedule")
    @classmethod
    def _increasing(cls, v):
        epochs = [e for e, _ in v]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("schedule epochs must be strictly increasing")
        return v

    def build(self) -> OptimConfig:
        return OptimConfig(
            self.kind, self.lr, self.weight_decay, self.momentum, self.beta1, self.beta2, self.eps,
            tuple(tuple(s) for s in self.schedule),
            tuple(GroupOverride(LayerSelector.parse(g.selector), g.lr, g.weight_decay) for g in self.group_overrides),
        )


class TrainingCfg(Strict):
    epochs: int = Field(2000, ge=0)
    batch_size: int = Field(500, ge=1)
    shuffle_seed: int = 0
    eval_every: int = Field(10, ge=1)
    checkpoint_epochs: list[int] = Field(default_factory=list)
    augment_sigma: float = Field(0.0, ge=0)

    def build(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.shuffle_seed, self.eval_every,
                           tuple(self.checkpoint_epochs), AugmentSpec(self.augment_sigma))


class TolerancesCfg(Strict):
    rise: float = Field(0.05, gt=0, lt=1)
    plateau: float = Field(0.05, gt=0, lt=1)
    plateau_span: float = Field(0.6, gt=0, lt=1)

    def build(self) -> interp.ShapeTolerances:
        return interp.ShapeTolerances(self.rise, self.plateau, self.plateau_span)


class ScratchP(Strict):
    kind: Literal["scratch"] = "scratch"


class AdversarialP(Strict):
    kind: Literal["adversarial_init"]
    cap_epochs: int = Field(2000, ge=1)
    memorize_acc: float = Field(0.999, gt=0, le=1)


class HeightOfBarrierP(Strict):
    kind: Literal["height_of_barrier"]
    offsets: list[int] = Field(default_factory=lambda: [0])


class PretrainP(Strict):
    kind: Literal["pretrain_transfer"]
    source_task: DatasetCfg
    lr_divisor: float = Field(100.0, gt=0)


class PartialResetP(Strict):
    kind: Literal["partial_reset"]
    selector: str = "layers:0"
    source: Literal["trained", "pretrained"] = "trained"
    source_task: Optional[DatasetCfg] = None

    @model_validator(mode="after")
    def _source_needs_task(self):
        LayerSelector.parse(self.selector)
        if self.source == "pretrained" and self.source_task is None:
            raise ValueError("source 'pretrained' requires source_task")
        return self


class PerGroupP(Strict):
    kind: Literal["per_group_hyper"]
    lr_factor: float = Field(0.1, gt=0)
    weight_decay_regimes: bool = False


class WidthSweepP(Strict):
    kind: Literal["width_sweep"]
    plans: dict[str, list[Annotated[int, Field(ge=1)]]] = Field(
        default_factory=lambda: {k: list(v) for k, v in protocols.WIDTH_PLANS.items()})
    epochs: dict[str, int] = Field(default_factory=dict)


class DataSweepP(Strict):
    kind: Literal["data_sweep"]
    fractions: list[Annotated[float, Field(gt=0, le=1)]] = Field(default_factory=lambda: [1.0, 0.05])
    jitter_sigmas: list[Annotated[float, Field(ge=0)]] = Field(default_factory=lambda: [0.0])


ProtocolCfg = Annotated[
    Union[ScratchP, AdversarialP, HeightOfBarrierP, PretrainP, PartialResetP, PerGroupP, WidthSweepP, DataSweepP],
    Field(discriminator="kind"),
]


class ExperimentConfig(Strict):
    model: ModelCfg = ModelCfg()
    dataset: DatasetCfg = SpiralCfg()
    optimizer: OptimizerCfg = OptimizerCfg()
    training: TrainingCfg = TrainingCfg()
    protocol: ProtocolCfg = ScratchP()
    seeds: list[int] = Field(default_factory=lambda: [0])
    tolerances: TolerancesCfg = TolerancesCfg()
    points: int = Field(interp.DEFAULT_POINTS, ge=3)
    split: Literal["train", "test"] = "test"
    layer_paths: bool = True
    output_dir: Optional[str] = None
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _cross_checks(self):
        spec = self.model.build()
        for g in self.optimizer.group_overrides:
            LayerSelector.parse(g.selector).validate(spec)
        if isinstance(self.protocol, PartialResetP):
            LayerSelector.parse(self.protocol.selector).validate(spec)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        return self

    def digest(self) -> str:
        """Hash of everything that affects results (``output_dir`` and ``workers`` excluded)."""
        payload = self.model_dump(mode="json", exclude={"output_dir", "workers"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def base(self) -> protocols.Base:
        data = self.dataset.build()
        spec = self.model.build()
        if data.dim != spec.input_dim:
            raise ConfigError(f"model.input_dim is {spec.input_dim} but the dataset has {data.dim} features")
        return protocols.Base(spec, data, self.optimizer.build(), self.training.build(), self.tolerances.build(),
                              self.points, self.split, self.layer_paths, self.workers)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_errors(exc)}") from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(doc)
