"""Command-line entry point: ``linpath {train,interp,protocol,plot,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, interp, plot, protocols, runner, store
from .config import ConfigError, load_config
from .datasets import from_csv
from .interp import ShapeTolerances
from .nn import LayerSelector

log = logging.getLogger("linpath")

OUT_ENV = "LINPATH_OUT"
EXIT_CONFIG = 2


def default_out(cfg=None, sub: str = "") -> Path:
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    root = Path(os.environ.get(OUT_ENV, "linpath-out"))
    return root / (cfg.digest() if cfg is not None else sub)


def _config(args):
    cfg = load_config(args.config)
    tol = ShapeTolerances.parse(args.tolerance) if getattr(args, "tolerance", None) else None
    return runner.with_overrides(cfg, seed=args.seed, tolerances=tol,
                                 points=getattr(args, "points", None), split=getattr(args, "split", None))


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else default_out(cfg)
    recs = runner.train_only(cfg, out)
    for rec in recs:
        shape = rec.shapes.get("full")
        print(f"seed {rec.seed}: status={rec.status} test_acc={rec.test_acc:.4f} "
              f"path={shape.tag if shape else '-'}")
    print(f"wrote {out}")
    return 0 if all(r.status == "ok" for r in recs) else 1


def cmd_interp(args) -> int:
    a, meta_a = store.load_checkpoint(args.checkpoint_a)
    b, _ = store.load_checkpoint(args.checkpoint_b)
    if not a.compatible_with(b):
        raise interp.IncompatibleStates(f"{args.checkpoint_a} and {args.checkpoint_b} come from different models")
    if args.data:
        data = from_csv(args.data)
    elif args.config:
        data = load_config(args.config).dataset.build()
    else:
        raise ConfigError("interp needs --config (for its dataset section) or --data <csv>")
    tol = ShapeTolerances.parse(args.tolerance) if args.tolerance else ShapeTolerances()
    sel = LayerSelector.parse(args.selector)
    path = interp.evaluate_path(a.spec, a, b, data, sel, args.split, args.points)
    shape = interp.classify(path, tol)
    out = Path(args.out) if args.out else default_out(sub="interp")
    stem = f"path_{runner.safe_name(sel.label())}"
    digest = meta_a.get("config_digest") or ""
    store.save_path_csv(out / f"{stem}.csv", path, shape, config_digest=digest, seed=meta_a.get("seed"),
                        label=sel.label())
    store.save_json(out / f"{stem}.shape.json",
                    store.shape_dict(shape, config_digest=digest, seed=meta_a.get("seed"),
                                     selector=sel.label(), split=args.split, points=args.points,
                                     endpoints=list(path.endpoints)))
    print(f"{shape.tag} ({len(path.alphas)} points) -> {out / (stem + '.csv')}")
    return 0


def cmd_protocol(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else default_out(cfg)
    result = runner.run_protocol(cfg)
    rows = runner.write_result(out, cfg, result)
    print((out / "comparison.txt").read_text(), end="")
    print(f"{len(rows)} rows -> {out}")
    return 0


def cmd_plot(args) -> int:
    if not args.paths:
        raise ConfigError("plot needs at least one path CSV")
    series = []
    for f in args.paths:
        path, meta = store.read_path_csv(f)
        label = meta.get("label") or Path(f).stem
        if meta.get("seed"):
            label = f"{label} s{meta['seed']}"
        series.append((label, path.alphas, path.losses))
    if not plot.grids_match(series):
        print("warning: input paths use different alpha grids", file=sys.stderr)
    svg = plot.line_chart(series, title=args.title or "loss along linear path",
                          ylabel=f"{args.metric}")
    out = Path(args.out) if args.out else Path(args.paths[0]).with_suffix(".svg")
    store.atomic_write(out, svg)
    print(f"wrote {out}")
    return 0


REPORT_METRICS = ("test_acc", "test_loss", "train_acc", "train_loss", "relative_distance")


def aggregate(found) -> list[dict]:
    """Mean and std (ddof=1) per (config digest, tag) over seeds."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for _, doc in found:
        groups.setdefault((doc.get("config_digest", ""), doc.get("tag", "")), []).append(doc)
    rows = []
    for (digest, tag), docs in sorted(groups.items()):
        docs.sort(key=lambda d: (d.get("seed") is None, d.get("seed")))
        row = {"config_digest": digest, "tag": tag, "n_seeds": len(docs),
               "seeds": ",".join(str(d.get("seed")) for d in docs)}
        for m in REPORT_METRICS:
            vals = [d["final_metrics"].get(m, d["extras"].get(m)) for d in docs]
            vals = [v for v in vals if v is not None]
            mean, std = protocols.mean_std(vals)
            row[f"{m}_mean"] = mean
            row[f"{m}_std"] = std
        tags = [d["shapes"].get("full", {}).get("tag") for d in docs]
        for t in (interp.NO_BARRIER, interp.BARRIER, interp.PLATEAU):
            row[f"shape_{t}"] = tags.count(t)
        row["note"] = "single seed: std omitted" if len(docs) < 2 else ""
        rows.append(row)
    return rows


def cmd_report(args) -> int:
    found = runner.find_records(args.dirs)
    rows = aggregate(found)
    cols = ["config_digest", "tag", "n_seeds"] + [f"{m}_{s}" for m in REPORT_METRICS for s in ("mean", "std")]
    cols += [f"shape_{t}" for t in (interp.NO_BARRIER, interp.BARRIER, interp.PLATEAU)] + ["note"]
    text = store.text_table(rows, cols)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        store.atomic_write(out / "report.csv", store.table_csv(rows, cols + ["seeds"], {"tool": f"linpath {__version__}"}))
        store.atomic_write(out / "report.txt", text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linpath", description=__doc__)
    p.add_argument("--version", action="version", version=f"linpath {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<config digest>)")
        sp.add_argument("--tolerance", help="shape tolerances, e.g. rise=0.05,plateau=0.05,span=0.6")
        sp.add_argument("--split", choices=("train", "test"))
        sp.add_argument("--points", type=int, help="grid points on [0, 1] (default 51)")

    sp = sub.add_parser("train", help="train the configured seeds from scratch")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("interp", help="loss along the linear path between two checkpoints")
    sp.add_argument("checkpoint_a")
    sp.add_argument("checkpoint_b")
    sp.add_argument("--selector", default="all", help="all | layers:0,1 | groups:bias")
    sp.add_argument("--points", type=int, default=interp.DEFAULT_POINTS)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument("--config", help="config whose dataset section defines the evaluation data")
    sp.add_argument("--data", help="dataset CSV (x0..,label,split)")
    sp.add_argument("--tolerance")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_interp)

    sp = sub.add_parser("protocol", help="run the configured protocol and write a comparison table")
    common(sp)
    sp.set_defaults(func=cmd_protocol)

    sp = sub.add_parser("plot", help="render path CSVs as an SVG line chart")
    sp.add_argument("paths", nargs="*")
    sp.add_argument("--out", help="SVG file (default: first CSV with .svg suffix)")
    sp.add_argument("--title")
    sp.add_argument("--metric", default="loss")
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("report", help="aggregate run records over seeds")
    sp.add_argument("dirs", nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError, json.JSONDecodeError, protocols.ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
