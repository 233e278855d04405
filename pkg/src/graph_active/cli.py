"""Command-line front end.

    graph-active run <config> [--jobs N] [--output PATH]
    graph-active stats <dataset>
    graph-active score-dump <config> [--output PATH] [--epoch T]

Config files are flat ``key = value`` text; ``#`` starts a comment. Relative
paths are resolved against the config file's directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .errors import ConfigError, GraphActiveError, UndefinedStatisticError
from .graph import homophily_ratio, load_dataset
from .loop import ExperimentConfig, MetricsReport, run_experiment, run_seed

log = logging.getLogger("graph_active")

CONFIG_KEYS = {
    "dataset_path": str,
    "backbone": str,
    "active_scores": "names",
    "seeds": "ints",
    "schedule_constant": float,
    "output_path": str,
    "learning_rate": float,
    "weight_decay": float,
    "dropout": float,
    "max_epochs": int,
    "hidden_dim": int,
    "patience": int,
    "sgc_k": int,
    "per_class": int,
    "val_size": int,
    "test_fraction": float,
    "budget_per_class": int,
    "damping": float,
    "num_clusters": int,
}
PATH_KEYS = ("dataset_path", "output_path")


def _convert(key, raw):
    kind = CONFIG_KEYS[key]
    try:
        if kind == "names":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if kind == "ints":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    values = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {line_no}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}; valid keys: {', '.join(CONFIG_KEYS)}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        values[key] = _convert(key, raw.strip())
    for key in ("dataset_path", "seeds"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    if base_dir is not None:
        for key in PATH_KEYS:
            if key in values and not Path(values[key]).is_absolute():
                values[key] = str(base_dir / values[key])
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def report_paths(output: Path) -> dict[str, Path]:
    stem = output.with_suffix("") if output.suffix == ".json" else output
    return {
        "report": output,
        "seeds": stem.with_name(stem.name + ".seeds.jsonl"),
        "queries": stem.with_name(stem.name + ".seed{seed}.queries.tsv"),
        "scores": stem.with_name(stem.name + ".scores.tsv"),
    }


def write_report(report: MetricsReport, output: Path) -> None:
    paths = report_paths(output)
    output.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    with paths["seeds"].open("w", encoding="utf-8") as fh:
        for entry in report.to_dict()["per_seed"]:
            fh.write(json.dumps(entry) + "\n")
    for r in report.per_seed:
        with Path(str(paths["queries"]).format(seed=r.seed)).open("w", encoding="utf-8") as fh:
            fh.write("epoch\tnode_id\tlabel\tcombined_score\n")
            for q in r.query_log:
                fh.write(f"{q.epoch}\t{q.node}\t{q.label}\t{q.combined_score!r}\n")


def summary_line(report: MetricsReport) -> str:
    return f"{report.dataset} {report.backbone} {'+'.join(report.scores)} {report.mean_macro!r} {report.mean_micro!r}"


def _output_path(cfg: ExperimentConfig, override) -> Path:
    out = override or cfg.output_path
    if not out:
        raise ConfigError("no output path: set output_path in the config or pass --output")
    return Path(out)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    output = _output_path(cfg, args.output)
    if not output.parent.is_dir():
        raise OSError(f"output directory does not exist: {output.parent}")
    report = run_experiment(cfg, jobs=args.jobs)
    write_report(report, output)
    print(summary_line(report))
    return 0 if not report.failed else 1


def cmd_stats(args) -> int:
    g = load_dataset(args.dataset)
    try:
        h = f"{homophily_ratio(g):.4f}"
    except UndefinedStatisticError:
        h = "undefined"
    print(f"{g.name}: {g.num_nodes} nodes, {g.num_edges} edges, {g.num_classes} classes, "
          f"{g.num_features} features, homophily {h}")
    if g.dropped_edges:
        print(f"edge records in file: {g.num_edges + g.dropped_edges} "
              f"({g.dropped_edges} duplicate or self-loop records dropped)")
    return 0


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def cmd_score_dump(args) -> int:
    cfg = load_config(args.config)
    if len(cfg.seeds) != 1:
        raise ConfigError("score-dump needs a config with exactly one seed")
    output = Path(args.output) if args.output else report_paths(_output_path(cfg, None))["scores"]
    if not output.parent.is_dir():
        raise OSError(f"output directory does not exist: {output.parent}")
    g = load_dataset(cfg.dataset_path)
    rows = []

    def on_query(epoch, raw, ranks, selected):
        if args.epoch is not None and epoch != args.epoch:
            return
        for name in raw:
            cand = raw[name].candidates
            idx = range(len(cand)) if args.epoch is not None else [int((cand == selected).argmax())]
            for i in idx:
                rows.append(f"{cand[i]}\t{name}\t{_fmt(raw[name].values[i])}\t{_fmt(ranks[name].values[i])}")

    run_seed(g, cfg, cfg.seeds[0], on_query=on_query)
    if args.epoch is not None and not rows:
        raise ConfigError(f"no query step happened at epoch {args.epoch}")
    with output.open("w", encoding="utf-8") as fh:
        fh.write("node_id\tscore_name\traw\tpercentile\n")
        fh.writelines(r + "\n" for r in rows)
    print(f"wrote {len(rows)} rows to {output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="graph-active", description="Dissimilarity-augmented active learning on graphs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a multi-seed experiment")
    run.add_argument("config")
    run.add_argument("--jobs", type=int, default=None, help="parallel seeds (default: number of seeds)")
    run.add_argument("--output", default=None, help="report JSON path (overrides output_path)")
    run.set_defaults(func=cmd_run)

    stats = sub.add_parser("stats", help="print dataset statistics")
    stats.add_argument("dataset")
    stats.set_defaults(func=cmd_stats)

    dump = sub.add_parser("score-dump", help="write per-step raw scores and percentiles for one seed")
    dump.add_argument("config")
    dump.add_argument("--output", default=None)
    dump.add_argument("--epoch", type=int, default=None,
                      help="dump every candidate at this query epoch instead of the selected node per step")
    dump.set_defaults(func=cmd_score_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GraphActiveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
