"""Per-victim attack graphs from filtered alerts.

Pipeline: rewrite victim addresses so scenarios share victims, drop
repeated alerts within a short window, map detectors to attack stages,
cut per (attacker, victim) runs of one stage into episodes, and join each
attacker's episode chain into a graph whose nodes are (stage, service set).
Nodes are merged deterministically on that key; no automaton is learned.
The attacker of an alert is its scenario name.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import re
import zlib
from collections import defaultdict
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from alertpipe import kernels
from alertpipe.model import Alert, DetectorId, detector

log = logging.getLogger(__name__)

DEFAULT_DEDUPE_WINDOW = 2.0
DEFAULT_EPISODE_GAP = 7_200.0


class MappingError(ValueError):
    """Stage mapping or address map is inconsistent."""


IpMap = Mapping[str, Mapping[str, str]]


def load_ip_map(path: str | Path) -> dict[str, dict[str, str]]:
    """``{scenario: {address: canonical}}``; the ``"*"`` entry applies to every scenario."""
    doc = json.loads(Path(path).read_text("utf-8"))
    if not isinstance(doc, dict) or not all(isinstance(v, dict) for v in doc.values()):
        raise MappingError(f"{path}: expected an object of per-scenario address maps")
    return {k: {str(a): str(b) for a, b in v.items()} for k, v in doc.items()}


def remap_victims(alerts: Iterable[Alert], ip_map: IpMap) -> list[Alert]:
    """Rewrite addresses (ip fields and attribute values equal to an address) to canonical ones."""
    common = ip_map.get("*", {})
    merged: dict[str, Mapping[str, str]] = {}
    unmapped: set[str] = set()
    out = []
    for a in alerts:
        table = merged.get(a.scenario)
        if table is None:
            table = merged[a.scenario] = {**common, **ip_map.get(a.scenario, {})}
        if not table:
            out.append(a)
            continue
        changes: dict[str, Any] = {}
        for name in ("src_ip", "dst_ip"):
            ip = getattr(a, name)
            if ip is None:
                continue
            if ip in table:
                changes[name] = table[ip]
            elif ip not in unmapped:
                unmapped.add(ip)
                log.debug("address %s of scenario %s has no mapping", ip, a.scenario)
        if any(v in table for v in a.attributes.values()):
            changes["attributes"] = {k: table.get(v, v) for k, v in a.attributes.items()}
        out.append(replace(a, **changes) if changes else a)
    return out


def _key_codes(alerts: Sequence[Alert]) -> list[int]:
    codes: dict[tuple, int] = {}
    return [codes.setdefault((a.detector, a.victim, a.scenario), len(codes)) for a in alerts]


def dedupe_window(alerts: Sequence[Alert], window_seconds: float = DEFAULT_DEDUPE_WINDOW) -> list[Alert]:
    """Keep an alert only if its (detector, victim, attacker) key was last kept ``window_seconds`` ago or more."""
    alerts = list(alerts)
    kept = kernels.dedupe_keep([a.timestamp for a in alerts], _key_codes(alerts), window_seconds)
    return [alerts[i] for i in kept]


@dataclass(frozen=True)
class StageMapping:
    stages: Mapping[DetectorId, str]
    drop: frozenset[DetectorId]

    def __post_init__(self) -> None:
        both = set(self.stages) & self.drop
        if both:
            raise MappingError(f"detectors both mapped and dropped: {sorted(d.rendered for d in both)}")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "StageMapping":
        return cls(
            {detector(k): str(v) for k, v in doc.get("stages", {}).items()},
            frozenset(detector(k) for k in doc.get("drop", [])),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "StageMapping":
        if path is None:
            text = resources.files("alertpipe.data").joinpath("stage_mapping.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls.from_dict(json.loads(text))

    def stage_of(self, det: DetectorId) -> str | None:
        return self.stages.get(det)

    def check_total(self, detectors: Iterable[DetectorId | str]) -> None:
        """Every detector must be mapped or explicitly dropped."""
        missing = sorted(
            d for d in (x if isinstance(x, str) else x.rendered for x in detectors)
            if detector(d) not in self.stages and detector(d) not in self.drop
        )
        if missing:
            raise MappingError(f"detectors neither mapped nor dropped: {', '.join(missing)}")


@dataclass(frozen=True)
class Episode:
    attacker: str
    victim: str
    stage: str
    start: float
    end: float
    services: frozenset[int]
    alert_count: int


def build_episodes(
    alerts: Iterable[Alert], mapping: StageMapping, gap_seconds: float = DEFAULT_EPISODE_GAP
) -> list[Episode]:
    """Cut each (attacker, victim) alert stream into same-stage runs.

    A run ends on a stage change or a gap longer than ``gap_seconds``.
    Alerts whose detector has no stage are ignored.
    """
    streams: dict[tuple[str, str], list[tuple[Alert, str]]] = defaultdict(list)
    for a in alerts:
        stage = mapping.stage_of(a.detector)
        if stage is not None:
            streams[(a.scenario, a.victim)].append((a, stage))
    episodes = []
    for (attacker, victim) in sorted(streams):
        seq = sorted(streams[(attacker, victim)], key=lambda p: p[0].timestamp)
        stage_codes: dict[str, int] = {}
        codes = [stage_codes.setdefault(s, len(stage_codes)) for _, s in seq]
        starts = kernels.segment_starts([a.timestamp for a, _ in seq], codes, gap_seconds)
        for s, e in zip(starts, starts[1:] + [len(seq)]):
            run = seq[s:e]
            episodes.append(
                Episode(
                    attacker, victim, run[0][1], run[0][0].timestamp, run[-1][0].timestamp,
                    frozenset(a.dst_port for a, _ in run if a.dst_port is not None), len(run),
                )
            )
    return episodes


class Node(NamedTuple):
    stage: str
    services: tuple[int, ...]

    @property
    def label(self) -> str:
        if not self.services:
            return self.stage
        return f"{self.stage}\n{','.join(map(str, self.services))}"


class Edge(NamedTuple):
    source: Node
    target: Node
    attacker: str


def episode_node(ep: Episode) -> Node:
    return Node(ep.stage, tuple(sorted(ep.services)))


@dataclass(frozen=True)
class AttackGraph:
    victim: str
    nodes: frozenset[Node]
    edges: frozenset[Edge]
    terminals: frozenset[Node]
    chains: Mapping[str, tuple[Node, ...]]


def build_graph(episodes: Iterable[Episode], victim: str, min_support: int = 1) -> AttackGraph:
    """Join each attacker's episodes (in time order) into a shared node graph.

    Consecutive episodes on the same node are collapsed. Nodes reached by
    fewer than ``min_support`` attackers are pruned and the chains bridged
    around them (1 disables pruning).
    """
    per: dict[str, list[Episode]] = defaultdict(list)
    for ep in episodes:
        if ep.victim == victim:
            per[ep.attacker].append(ep)
    raw_chains = {
        att: [episode_node(e) for e in sorted(eps, key=lambda e: (e.start, e.end, e.stage))]
        for att, eps in per.items()
    }
    support: dict[Node, int] = defaultdict(int)
    for chain in raw_chains.values():
        for n in set(chain):
            support[n] += 1
    chains: dict[str, tuple[Node, ...]] = {}
    for att in sorted(raw_chains):
        collapsed: list[Node] = []
        for n in raw_chains[att]:
            if support[n] >= min_support and (not collapsed or collapsed[-1] != n):
                collapsed.append(n)
        if collapsed:
            chains[att] = tuple(collapsed)
    nodes = frozenset(n for c in chains.values() for n in c)
    edges = frozenset(Edge(u, v, att) for att, c in chains.items() for u, v in zip(c, c[1:]))
    terminals = frozenset(c[-1] for c in chains.values())
    return AttackGraph(victim, nodes, edges, terminals, chains)


def build_graphs(episodes: Sequence[Episode], min_support: int = 1) -> dict[str, AttackGraph]:
    return {v: build_graph(episodes, v, min_support) for v in sorted({e.victim for e in episodes})}


SCENARIO_COLORS = {
    "fox": "#800000",
    "harrison": "#ff69b4",
    "russellmitchell": "#d4a017",
    "santos": "#8b4513",
    "shaw": "#800080",
    "wardbeck": "#228b22",
    "wheeler": "#ff8c00",
    "wilson": "#1f4fff",
}
_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")


def attacker_color(name: str) -> str:
    return SCENARIO_COLORS.get(name) or _PALETTE[zlib.crc32(name.encode("utf-8")) % len(_PALETTE)]


def _q(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def export_dot(graph: AttackGraph) -> str:
    order = sorted(graph.nodes)
    ids = {n: f"n{i}" for i, n in enumerate(order)}
    lines = [f"digraph {_q(graph.victim)} {{", "  rankdir=LR;", "  node [shape=box];"]
    for n in order:
        extra = ", peripheries=2" if n in graph.terminals else ""
        lines.append(f"  {ids[n]} [label={_q(n.label)}{extra}];")
    for e in sorted(graph.edges, key=lambda e: (ids[e.source], ids[e.target], e.attacker)):
        lines.append(
            f"  {ids[e.source]} -> {ids[e.target]} [label={_q(e.attacker)}, color={_q(attacker_color(e.attacker))}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def victim_filename(victim: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", victim) + ".dot"


def graph_index_csv(graphs: Mapping[str, AttackGraph]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["victim", "file", "nodes", "edges", "attackers"])
    for v in sorted(graphs):
        g = graphs[v]
        w.writerow([v, victim_filename(v), len(g.nodes), len(g.edges), len(g.chains)])
    return buf.getvalue()
