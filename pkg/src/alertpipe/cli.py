"""Command line entry point: normalize, score, filter, aggregate, graph, report.

Each subcommand reads the artifacts of the previous one from the output
directory and writes its own, so stages can be re-run independently.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from alertpipe import aggregation, filtering, graph, ingest, scoring
from alertpipe.model import DEFAULT_TEST_DURATION, LabelError, load_labels, taxonomy_abbreviations

log = logging.getLogger("alertpipe")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_PROCESSING = 4

DATA_ROOT_ENV = "ALERTPIPE_DATA_ROOT"

ALERTS = "alerts.ndjson"
INGEST_STATS = "ingest_stats.json"
SCORES = "scores.csv"
RATES = "rates.csv"
FILTERED = "filtered.ndjson"
FILTER_CSV = "filter_report.csv"
FILTER_TXT = "filter_report.txt"
FILTER_JSON = "filter_report.json"
META = "meta_alerts.ndjson"
META_SUMMARY = "meta_summary.txt"
GROUPS = "groups.csv"
AGG_STATS = "aggregate_stats.json"
GRAPH_DIR = "graphs"
DEDUPE = "dedupe_counts.csv"
REPORT = "report.json"

# values reported for the published data set, shown next to ours in the run report
REFERENCE = {"groups": 150, "meta_alerts": 42, "distinct_alerts": 167}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    input_root: str | None = None
    labels: str | None = None
    signatures: str | None = None
    dialects: str | None = None
    stage_mapping: str | None = None
    ip_map: str | None = None
    out: str = "out"
    jobs: int = 1
    score_threshold: float = 0.7
    interval_time: float = 2.0
    group_threshold: float = 0.55
    alert_threshold: float = 0.5
    dedupe_window: float = 2.0
    episode_gap: float = 7_200.0
    test_window_duration: float = DEFAULT_TEST_DURATION
    min_support: int = 1

    def validate(self) -> None:
        for name in ("score_threshold", "group_threshold", "alert_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("interval_time", "dedupe_window", "episode_gap", "test_window_duration"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.jobs < 1 or self.min_support < 1:
            raise ConfigError("jobs and min_support must be at least 1")
        for name in ("labels", "signatures", "dialects", "stage_mapping", "ip_map"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name} file not found: {p}")

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(f"missing setting: {name.replace('_', '-')}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def load_config(path: str | None, overrides: dict[str, Any]) -> PipelineConfig:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = set(doc) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(doc)
    env_root = os.environ.get(DATA_ROOT_ENV)
    if env_root:
        values["input_root"] = env_root
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump_json(path: Path, doc: Any) -> None:
    _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _labels(cfg: PipelineConfig):
    cfg.require("labels")
    return load_labels(cfg.labels, cfg.test_window_duration)


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run '{stage}' first")
    return path


def cmd_normalize(cfg: PipelineConfig) -> dict[str, Any]:
    cfg.require("input_root")
    table = ingest.SignatureTable.load(cfg.signatures)
    scenarios = ingest.list_scenarios(cfg.input_root)
    stats_total = ingest.IngestStats()
    per_scenario: dict[str, Any] = {}

    def stream():
        for name in scenarios:
            alerts, stats = ingest.load_scenario(
                cfg.input_root, name, table, manifest_path=cfg.dialects, jobs=cfg.jobs
            )
            yield from alerts
            per_scenario[name] = stats.to_dict()
            stats_total.merge(stats)

    n = ingest.write_alerts(cfg.out_dir / ALERTS, stream())
    summary = {**stats_total.to_dict(), "scenarios": per_scenario}
    _dump_json(cfg.out_dir / INGEST_STATS, summary)
    log.info("normalized %d alerts from %d scenarios", n, len(scenarios))
    return summary


def cmd_score(cfg: PipelineConfig) -> list[scoring.ScoreRow]:
    labels = _labels(cfg)
    alerts = ingest.read_alerts(_need(cfg.out_dir / ALERTS, "normalize"))
    t = scoring.tally(alerts, labels)  # streams; the store is never held in memory
    ranked = scoring.rank_detectors(scoring.score_tally(t, labels))
    _write(cfg.out_dir / SCORES, scoring.score_csv(ranked))
    _write(cfg.out_dir / RATES, scoring.rate_csv(scoring.rate_table(t, labels)))
    log.info("scored detectors: %d with non-zero score", len(ranked))
    return ranked


def cmd_filter(cfg: PipelineConfig) -> filtering.FilterReport:
    labels = _labels(cfg)
    scores = scoring.read_score_csv(_need(cfg.out_dir / SCORES, "score"))
    kept: list = []
    report = filtering.build_filter_report(
        ingest.read_alerts(_need(cfg.out_dir / ALERTS, "normalize")), scores, labels, cfg.score_threshold, kept=kept
    )
    ingest.write_alerts(cfg.out_dir / FILTERED, kept)
    _write(cfg.out_dir / FILTER_CSV, report.to_csv())
    _write(cfg.out_dir / FILTER_TXT, report.to_text())
    _dump_json(
        cfg.out_dir / FILTER_JSON,
        {
            "threshold": cfg.score_threshold,
            "selected_detectors": sorted(d.rendered for d in filtering.selected_detectors(scores, cfg.score_threshold)),
            "scenarios": {s.scenario: s.counts for s in report.scenarios},
            "average_reduction_rate": {st: report.average_rate(st) for st in filtering.STAGES[1:]},
        },
    )
    return report


def cmd_aggregate(cfg: PipelineConfig) -> list[aggregation.MetaAlert]:
    alerts = ingest.read_alerts(_need(cfg.out_dir / FILTERED, "filter"), keep_raw=False)
    groups = aggregation.group_alerts(alerts, cfg.interval_time)
    metas = aggregation.merge_into_meta_alerts(groups, cfg.group_threshold, cfg.alert_threshold)
    _write(cfg.out_dir / META, aggregation.dump_meta_alerts(metas))
    _write(cfg.out_dir / META_SUMMARY, aggregation.render_summary(metas, groups))
    lines = ["group,scenario,start,end,alerts"]
    lines += [f"{g.id},{g.scenario},{g.start!r},{g.end!r},{len(g.alerts)}" for g in groups]
    _write(cfg.out_dir / GROUPS, "\n".join(lines) + "\n")
    _dump_json(
        cfg.out_dir / AGG_STATS,
        {
            "groups": len(groups),
            "meta_alerts": len(metas),
            "distinct_alerts": aggregation.distinct_alert_count(metas),
            "interval_time": cfg.interval_time,
            "group_threshold": cfg.group_threshold,
            "alert_threshold": cfg.alert_threshold,
        },
    )
    return metas


def cmd_graph(cfg: PipelineConfig) -> dict[str, graph.AttackGraph]:
    mapping = graph.StageMapping.load(cfg.stage_mapping)
    mapping.check_total(taxonomy_abbreviations())
    ip_map = graph.load_ip_map(cfg.ip_map) if cfg.ip_map else {}
    alerts = list(ingest.read_alerts(_need(cfg.out_dir / FILTERED, "filter"), keep_raw=False))
    alerts = graph.remap_victims(alerts, ip_map)
    alerts.sort(key=lambda a: a.timestamp)
    deduped = graph.dedupe_window(alerts, cfg.dedupe_window)
    episodes = graph.build_episodes(deduped, mapping, cfg.episode_gap)
    graphs = graph.build_graphs(episodes, cfg.min_support)
    gdir = cfg.out_dir / GRAPH_DIR
    gdir.mkdir(parents=True, exist_ok=True)
    for old in gdir.glob("*.dot"):
        old.unlink()
    for v, g in graphs.items():
        _write(gdir / graph.victim_filename(v), graph.export_dot(g))
    _write(gdir / "index.csv", graph.graph_index_csv(graphs))
    before: dict[str, int] = {}
    after: dict[str, int] = {}
    for a in alerts:
        before[a.scenario] = before.get(a.scenario, 0) + 1
    for a in deduped:
        after[a.scenario] = after.get(a.scenario, 0) + 1
    rows = ["scenario,filtered,deduped,episodes"]
    ep_counts: dict[str, int] = {}
    for e in episodes:
        ep_counts[e.attacker] = ep_counts.get(e.attacker, 0) + 1
    rows += [f"{s},{before[s]},{after.get(s, 0)},{ep_counts.get(s, 0)}" for s in sorted(before)]
    _write(gdir / DEDUPE, "\n".join(rows) + "\n")
    return graphs


def _read_json(path: Path) -> Any:
    return json.loads(path.read_text("utf-8")) if path.exists() else None


def cmd_report(cfg: PipelineConfig) -> dict[str, Any]:
    out = cfg.out_dir
    ingest_stats = _read_json(out / INGEST_STATS) or {}
    filt = _read_json(out / FILTER_JSON) or {}
    agg = _read_json(out / AGG_STATS) or {}
    scenarios: dict[str, dict[str, Any]] = {}
    for name, counts in sorted(filt.get("scenarios", {}).items()):
        row: dict[str, Any] = dict(counts)
        total = counts.get("all", 0)
        for st in filtering.STAGES[1:]:
            row[f"{st}_rate"] = filtering.reduction_rate(total, counts[st]) if total else None
        scenarios[name] = row
    dedupe_path = out / GRAPH_DIR / DEDUPE
    if dedupe_path.exists():
        with open(dedupe_path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                row = scenarios.setdefault(r["scenario"], {})
                row["deduped"] = int(r["deduped"])
                row["episodes"] = int(r["episodes"])
    distinct = agg.get("distinct_alerts")
    for row in scenarios.values():
        base = row.get("filtered_and_in_attack_phases")
        if base:
            if "deduped" in row:
                row["deduped_rate"] = filtering.reduction_rate(base, row["deduped"])
            if distinct is not None:
                row["meta_alert_rate"] = filtering.reduction_rate(base, distinct)
    averages = {}
    for key in ("filtered_by_prioritization_rate", "in_attack_phases_rate", "filtered_and_in_attack_phases_rate",
                "deduped_rate", "meta_alert_rate"):
        vals = [r[key] for r in scenarios.values() if r.get(key) is not None]
        averages[key] = sum(vals) / len(vals) if vals else None
    graphs = []
    index = out / GRAPH_DIR / "index.csv"
    if index.exists():
        with open(index, newline="", encoding="utf-8") as fh:
            graphs = [{k: (int(v) if k in ("nodes", "edges", "attackers") else v) for k, v in r.items()}
                      for r in csv.DictReader(fh)]
    summary = {
        "alerts": ingest_stats.get("total", 0),
        "per_dialect": ingest_stats.get("per_dialect", {}),
        "parse_errors": ingest_stats.get("parse_errors", 0),
        "unknown_signatures": ingest_stats.get("unknown_signatures", 0),
        "selected_detectors": len(filt.get("selected_detectors", [])),
        "scenarios": scenarios,
        "average_reduction_rates": averages,
        "aggregation": {
            "groups": agg.get("groups", 0),
            "meta_alerts": agg.get("meta_alerts", 0),
            "distinct_alerts": agg.get("distinct_alerts", 0),
            "reference": REFERENCE,
        },
        "graphs": graphs,
    }
    _dump_json(out / REPORT, summary)
    return summary


def cmd_run(cfg: PipelineConfig) -> None:
    for step in (cmd_normalize, cmd_score, cmd_filter, cmd_aggregate, cmd_graph, cmd_report):
        step(cfg)


HELP = {
    "normalize": "parse raw IDS output into the normalized alert store",
    "score": "compute detection scores and alert rates per detector",
    "filter": "keep alerts of high-scoring detectors inside attack phases",
    "aggregate": "group filtered alerts and merge groups into meta-alerts",
    "graph": "build per-victim attack graphs as DOT files",
    "report": "summarize all stages into report.json",
    "run": "run every stage in order",
}

COMMANDS = {
    "normalize": cmd_normalize,
    "score": cmd_score,
    "filter": cmd_filter,
    "aggregate": cmd_aggregate,
    "graph": cmd_graph,
    "report": cmd_report,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--input", dest="input_root", help=f"alert data root (env {DATA_ROOT_ENV})")
    common.add_argument("--labels", help="scenario label file (JSON)")
    common.add_argument("--signatures", help="signature table (JSON); bundled table by default")
    common.add_argument("--dialects", help="dialect field manifest (JSON); bundled by default")
    common.add_argument("--stage-mapping", dest="stage_mapping", help="detector to attack stage map (JSON)")
    common.add_argument("--ip-map", dest="ip_map", help="per-scenario address map (JSON)")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--jobs", type=int, help="worker processes for ingest")
    common.add_argument("--threshold", dest="score_threshold", type=float, help="detection score cutoff (0.7)")
    common.add_argument("--interval-time", dest="interval_time", type=float, help="grouping gap in seconds (2)")
    common.add_argument("--group-threshold", dest="group_threshold", type=float, help="group merge similarity (0.55)")
    common.add_argument("--alert-threshold", dest="alert_threshold", type=float, help="alert match similarity (0.5)")
    common.add_argument("--dedupe-window", dest="dedupe_window", type=float, help="duplicate window in seconds (2)")
    common.add_argument("--episode-gap", dest="episode_gap", type=float, help="episode gap in seconds (7200)")
    common.add_argument("--test-window", dest="test_window_duration", type=float, help="test window length in seconds (18000)")
    common.add_argument("--min-support", dest="min_support", type=int, help="prune graph nodes seen by fewer attackers")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="alertpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {k: v for k, v in vars(args).items() if k in _FIELDS}
    try:
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg)
    except (ConfigError, LabelError, graph.MappingError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ingest.IngestError as exc:
        log.error("%s", exc)
        return EXIT_INGEST
    except (ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_PROCESSING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
