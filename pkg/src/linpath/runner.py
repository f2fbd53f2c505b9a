"""Execute configs and persist results.

Output layout under ``<out>``::

    config.json                      normalized config + digest
    runs/<tag>/seed<k>/record.json   one run record
    runs/<tag>/seed<k>/init.json     checkpoints (also ckpt_e<epoch>.json, final.json)
    runs/<tag>/seed<k>/path_<label>.csv
    comparison.csv / comparison.txt  one row per intervention
    summary.json                     rows, skipped seeds, notes
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from . import __version__, protocols, store
from .config import (AdversarialP, DataSweepP, ExperimentConfig, HeightOfBarrierP, PartialResetP, PerGroupP,
                     PretrainP, ScratchP, WidthSweepP)
from .datasets import AugmentSpec
from .nn import LayerSelector
from .optim import RunRecord


def safe_name(tag: str) -> str:
    return re.sub(r"[^A-Za-z0-9._+-]+", "_", tag).strip("_") or "run"


def record_dict(rec: RunRecord, config_digest: str, path_files: dict[str, str]) -> dict:
    return {
        "format": store.RECORD_FORMAT,
        "version": store.RECORD_VERSION,
        "tool_version": __version__,
        "config_digest": config_digest,
        "seed": rec.seed,
        "tag": rec.tag,
        "status": rec.status,
        "message": rec.message,
        "model": rec.spec.to_dict(),
        "optimizer": rec.optim.to_dict(),
        "training": rec.train.to_dict(),
        "data": rec.data_provenance,
        "init_digest": rec.init.digest(),
        "final_digest": rec.final.digest(),
        "final_metrics": rec.final_metrics,
        "shapes": {k: v.to_dict() for k, v in rec.shapes.items()},
        "paths": path_files,
        "extras": rec.extras,
        "history": rec.history,
    }


def save_record(run_dir: Path, rec: RunRecord, config_digest: str) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config_digest": config_digest, "seed": rec.seed}
    store.save_checkpoint(run_dir / "init.json", rec.init, epoch=0, **meta)
    store.save_checkpoint(run_dir / "final.json", rec.final, epoch=rec.epochs_run, **meta)
    for epoch, state in sorted(rec.checkpoints.items()):
        store.save_checkpoint(run_dir / f"ckpt_e{epoch}.json", state, epoch=epoch, **meta)
    files = {}
    for label, path in rec.paths.items():
        name = f"path_{safe_name(label)}.csv"
        store.save_path_csv(run_dir / name, path, rec.shapes.get(label), label=label, **meta)
        files[label] = name
    return store.save_json(run_dir / "record.json", record_dict(rec, config_digest, files))


def run_protocol(cfg: ExperimentConfig) -> protocols.ProtocolResult:
    base = cfg.base()
    seeds = list(cfg.seeds)
    p = cfg.protocol
    if isinstance(p, ScratchP):
        return protocols.run_scratch(base, seeds)
    if isinstance(p, AdversarialP):
        return protocols.run_adversarial_init(base, seeds, p.cap_epochs, p.memorize_acc)
    if isinstance(p, HeightOfBarrierP):
        return protocols.run_height_of_barrier(base, seeds, p.offsets)
    if isinstance(p, PretrainP):
        return protocols.run_pretrain_transfer(base, p.source_task.build(), seeds, p.lr_divisor)
    if isinstance(p, PartialResetP):
        pre = None
        if p.source == "pretrained":
            pre = protocols.run_pretrain_transfer(base, p.source_task.build(), seeds)
        return protocols.run_partial_reset(base, seeds, LayerSelector.parse(p.selector), p.source, pretrained=pre)
    if isinstance(p, PerGroupP):
        rules = protocols.table_a2_rules(p.lr_factor, p.weight_decay_regimes)
        return protocols.run_per_group_hyper(base, seeds, rules)
    if isinstance(p, WidthSweepP):
        return protocols.run_width_sweep(base, seeds, p.plans, p.epochs)
    if isinstance(p, DataSweepP):
        return protocols.run_data_sweep(base, p.fractions, [AugmentSpec(s) for s in p.jitter_sigmas], seeds)
    raise ValueError(f"unknown protocol kind {p.kind!r}")


def write_config(out: Path, cfg: ExperimentConfig) -> None:
    doc = {"tool_version": __version__, "config_digest": cfg.digest(),
           "config": cfg.model_dump(mode="json", exclude={"output_dir", "workers"})}
    store.save_json(out / "config.json", doc)


def write_result(out: Path, cfg: ExperimentConfig, result: protocols.ProtocolResult) -> list[dict]:
    digest = cfg.digest()
    write_config(out, cfg)
    for tag, recs in result.records.items():
        for rec in recs:
            save_record(out / "runs" / safe_name(tag) / f"seed{rec.seed}", rec, digest)
    for tag, recs in result.phase_a.items():
        for rec in recs:
            rec.tag = f"{tag}:phase_a"
            save_record(out / "runs" / safe_name(rec.tag) / f"seed{rec.seed}", rec, digest)
    rows = [r.to_dict() for r in result.rows()]
    meta = {"tool": f"linpath {__version__}", "config_digest": digest, "protocol": result.name,
            "baseline": result.baseline, "seeds": ",".join(str(s) for s in cfg.seeds)}
    store.atomic_write(out / "comparison.csv", store.table_csv(rows, protocols.ROW_COLUMNS, meta))
    text = "".join(f"# {k}: {v}\n" for k, v in meta.items())
    text += store.text_table(rows, protocols.ROW_COLUMNS[:-1])
    for note in result.notes:
        text += f"note: {note}\n"
    for s in result.skipped:
        text += f"skipped: seed {s['seed']} ({s['intervention']}): {s['reason']}\n"
    store.atomic_write(out / "comparison.txt", text)
    store.save_json(out / "summary.json", {
        "tool_version": __version__, "config_digest": digest, "protocol": result.name,
        "baseline": result.baseline, "seeds": list(cfg.seeds),
        "used": {t: [r.seed for r in recs] for t, recs in result.records.items()},
        "skipped": result.skipped, "notes": result.notes, "rows": rows,
    })
    return rows


def train_only(cfg: ExperimentConfig, out: Path) -> list[RunRecord]:
    result = protocols.run_scratch(cfg.base(), list(cfg.seeds))
    digest = cfg.digest()
    write_config(out, cfg)
    recs = result.records.get("scratch", [])
    for rec in recs:
        save_record(out / "runs" / "scratch" / f"seed{rec.seed}", rec, digest)
    return recs


def find_records(roots) -> list[tuple[Path, dict]]:
    found = []
    for root in roots:
        root = Path(root)
        files = [root] if root.is_file() else sorted(root.rglob("record.json"))
        for f in files:
            doc = json.loads(f.read_text())
            if doc.get("format") == store.RECORD_FORMAT:
                found.append((f, doc))
    return found


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, tolerances=None, points=None,
                   split=None) -> ExperimentConfig:
    """Apply CLI flags on top of a parsed config (re-validated)."""
    doc = cfg.model_dump(mode="json")
    if seed is not None:
        doc["seeds"] = [seed]
    if tolerances is not None:
        doc["tolerances"] = tolerances.to_dict()
    if points is not None:
        doc["points"] = points
    if split is not None:
        doc["split"] = split
    return type(cfg).model_validate(doc)

