"""Gap-based alert grouping, group similarity, and incremental meta-alert merging."""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

from alertpipe import kernels
from alertpipe.model import Alert, DetectorId, SourceIds, detector

DEFAULT_WEIGHTS = (0.4, 0.4, 0.2)


class _Wildcard:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "*"

    def __reduce__(self):
        return (_Wildcard, ())


WILDCARD = _Wildcard()


@dataclass(frozen=True)
class AlertGroup:
    id: str
    scenario: str
    alerts: tuple[Alert, ...]

    def __post_init__(self) -> None:
        if not self.alerts:
            raise ValueError("alert group must not be empty")

    @property
    def start(self) -> float:
        return self.alerts[0].timestamp

    @property
    def end(self) -> float:
        return self.alerts[-1].timestamp

    @property
    def sequence(self) -> tuple[DetectorId, ...]:
        return tuple(a.detector for a in self.alerts)

    @property
    def detector_bag(self) -> Counter:
        return Counter(a.detector for a in self.alerts)


def group_by_gap(
    alerts: Sequence[Alert], interval_seconds: float, scenario: str | None = None
) -> list[AlertGroup]:
    """Split time-ordered alerts wherever the gap exceeds ``interval_seconds``."""
    if not alerts:
        return []
    scenario = alerts[0].scenario if scenario is None else scenario
    starts = kernels.gap_starts([a.timestamp for a in alerts], interval_seconds)
    bounds = zip(starts, starts[1:] + [len(alerts)])
    return [AlertGroup(f"{scenario}/g{i}", scenario, tuple(alerts[s:e])) for i, (s, e) in enumerate(bounds)]


def group_alerts(alerts: Iterable[Alert], interval_seconds: float) -> list[AlertGroup]:
    """Group per scenario after a stable sort by timestamp; groups in global time order."""
    by_scenario: dict[str, list[Alert]] = defaultdict(list)
    for a in alerts:
        by_scenario[a.scenario].append(a)
    groups = []
    for name in sorted(by_scenario):
        seq = sorted(by_scenario[name], key=lambda a: a.timestamp)
        groups.extend(group_by_gap(seq, interval_seconds, name))
    return sorted(groups, key=lambda g: (g.start, g.scenario))


def _codes(*seqs: Sequence[DetectorId]) -> list[list[int]]:
    table: dict[DetectorId, int] = {}
    return [[table.setdefault(d, len(table)) for d in s] for s in seqs]


def _similarity(
    bag1: Mapping[DetectorId, int],
    seq1: Sequence[DetectorId],
    bag2: Mapping[DetectorId, int],
    seq2: Sequence[DetectorId],
    weights: tuple[float, float, float],
) -> float:
    k1 = {d for d, c in bag1.items() if c > 0}
    k2 = {d for d, c in bag2.items() if c > 0}
    union = k1 | k2
    if not union:
        return 1.0
    shared = k1 & k2
    jaccard = len(shared) / len(union)
    # fsum is exactly rounded, so the result does not depend on set iteration order
    freq = math.fsum(min(bag1[d], bag2[d]) / max(bag1[d], bag2[d]) for d in shared) / len(shared) if shared else 0.0
    longer = max(len(seq1), len(seq2))
    c1, c2 = _codes(seq1, seq2)
    seq = kernels.lcs_length(c1, c2) / longer if longer else 1.0
    w_attr, w_freq, w_seq = weights
    return (w_attr * jaccard + w_freq * freq + w_seq * seq) / (w_attr + w_freq + w_seq)


def group_similarity(
    g1: AlertGroup, g2: AlertGroup, weights: tuple[float, float, float] = DEFAULT_WEIGHTS
) -> float:
    """Weighted mean of detector-set Jaccard, shared-detector count ratio and LCS ratio."""
    return _similarity(g1.detector_bag, g1.sequence, g2.detector_bag, g2.sequence, weights)


def _attribute_similarity(x: Mapping[str, Any], y: Mapping[str, Any]) -> float:
    shared = x.keys() & y.keys()
    if not shared:
        return 1.0
    same = sum(1 for k in shared if x[k] is WILDCARD or y[k] is WILDCARD or x[k] == y[k])
    return same / len(shared)


def alert_similarity(a1: Alert | "AlertTemplate", a2: Alert | "AlertTemplate") -> float:
    """0 across detectors, else the share of common attribute keys with equal values."""
    if a1.detector != a2.detector:
        return 0.0
    return _attribute_similarity(a1.attributes, a2.attributes)


@dataclass(frozen=True)
class AlertTemplate:
    detector: DetectorId
    attributes: Mapping[str, Any]
    frequency_range: tuple[int, int]

    def __post_init__(self) -> None:
        lo, hi = self.frequency_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad frequency range {self.frequency_range}")


def _representative(templates: Iterable[Any]) -> tuple[Counter, list[DetectorId]]:
    """Bag and sequence of a virtual group at maximum frequencies.

    Templates of one detector are coalesced at that detector's first
    template, so the result depends only on per-detector totals and order.
    """
    bag: Counter = Counter()
    for t in templates:
        hi = t.frequency_range[1] if isinstance(t, AlertTemplate) else t.hi
        bag[t.detector] += hi
    seq: list[DetectorId] = []
    for d, n in bag.items():
        seq.extend([d] * n)
    return bag, seq


@dataclass(frozen=True)
class MetaAlert:
    """Merged abstraction of similar groups.

    A template's frequency range spans its per-group alert counts over all
    member groups, so a template missing from some member has minimum 0.
    """

    id: str
    templates: tuple[AlertTemplate, ...]
    members: tuple[str, ...]
    scenarios: tuple[str, ...] = ()

    def representative(self) -> tuple[Counter, list[DetectorId]]:
        return _representative(self.templates)


@dataclass
class _Template:
    detector: DetectorId
    attributes: dict[str, Any]
    lo: int = 0
    hi: int = 0


@dataclass
class _Builder:
    templates: list[_Template] = field(default_factory=list)
    members: list[tuple[float, str]] = field(default_factory=list)
    scenarios: list[str] = field(default_factory=list)
    _rep: tuple[Counter, list[DetectorId]] | None = None
    _by_detector: dict[DetectorId, list[int]] = field(default_factory=dict)

    def representative(self) -> tuple[Counter, list[DetectorId]]:
        if self._rep is None:
            self._rep = _representative(self.templates)
        return self._rep

    def _match(self, det: DetectorId, attrs: Mapping[str, Any], threshold: float, skip: set[int] = frozenset()) -> int | None:
        best, best_sim = None, -1.0
        for i in self._by_detector.get(det, ()):
            if i in skip:
                continue
            sim = _attribute_similarity(self.templates[i].attributes, attrs)
            if sim >= threshold and sim > best_sim:
                best, best_sim = i, sim
        return best

    def _add(self, t: _Template) -> int:
        self.templates.append(t)
        i = len(self.templates) - 1
        self._by_detector.setdefault(t.detector, []).append(i)
        return i

    def absorb(self, group: AlertGroup, alert_threshold: float) -> None:
        first = not self.members
        n_old = len(self.templates)
        hits: Counter = Counter()
        for a in group.alerts:
            best = self._match(a.detector, a.attributes, alert_threshold)
            if best is None:
                best = self._add(_Template(a.detector, dict(a.attributes)))
            else:
                _generalize(self.templates[best].attributes, a.attributes)
            hits[best] += 1
        for i, t in enumerate(self.templates):
            h = hits.get(i, 0)
            if first:
                t.lo = t.hi = h
            elif i >= n_old:
                t.lo, t.hi = 0, h
            else:
                t.lo, t.hi = min(t.lo, h), max(t.hi, h)
        self.members.append((group.start, group.id))
        if group.scenario not in self.scenarios:
            self.scenarios.append(group.scenario)
        self._rep = None

    def absorb_meta(self, other: "_Builder", alert_threshold: float) -> None:
        """Fold another meta-alert in, pairing templates one-to-one."""
        used: set[int] = set()
        n_old = len(self.templates)
        for t in other.templates:
            i = self._match(t.detector, t.attributes, alert_threshold, used)
            if i is None or i >= n_old:
                used.add(self._add(_Template(t.detector, dict(t.attributes), 0, t.hi)))
                continue
            used.add(i)
            mine = self.templates[i]
            _generalize(mine.attributes, t.attributes)
            mine.lo, mine.hi = min(mine.lo, t.lo), max(mine.hi, t.hi)
        for i in range(n_old):
            if i not in used:
                self.templates[i].lo = 0
        self.members = sorted(self.members + other.members)
        self.scenarios += [s for s in other.scenarios if s not in self.scenarios]
        self._rep = None

    def freeze(self, mid: str) -> MetaAlert:
        return MetaAlert(
            mid,
            tuple(AlertTemplate(t.detector, dict(t.attributes), (t.lo, t.hi)) for t in self.templates),
            tuple(gid for _, gid in self.members),
            tuple(self.scenarios),
        )


def _generalize(template: dict[str, Any], attrs: Mapping[str, Any]) -> None:
    for k in list(template):
        if k not in attrs:
            del template[k]
        elif template[k] is not WILDCARD and template[k] != attrs[k]:
            template[k] = WILDCARD


def _rep_similarity(a: _Builder, b: _Builder, weights: tuple[float, float, float]) -> float:
    bag1, seq1 = a.representative()
    bag2, seq2 = b.representative()
    return _similarity(bag1, seq1, bag2, seq2, weights)


def _consolidate(metas: list[_Builder], threshold: float, alert_threshold: float, weights) -> list[_Builder]:
    """Merge meta-alert pairs whose representatives reach ``threshold`` until none do."""
    metas = list(metas)
    cache: dict[tuple[int, int], float] = {}
    while True:
        best, best_sim = None, -1.0
        for i in range(len(metas)):
            for j in range(i + 1, len(metas)):
                key = (id(metas[i]), id(metas[j]))
                if key not in cache:
                    cache[key] = _rep_similarity(metas[i], metas[j], weights)
                if cache[key] >= threshold and cache[key] > best_sim:
                    best, best_sim = (i, j), cache[key]
        if best is None:
            return metas
        i, j = best
        changed = metas[i]
        changed.absorb_meta(metas.pop(j), alert_threshold)
        cache = {k: v for k, v in cache.items() if id(changed) not in k}


def merge_into_meta_alerts(
    groups: Iterable[AlertGroup],
    group_threshold: float = 0.55,
    alert_threshold: float = 0.5,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
) -> list[MetaAlert]:
    """Incrementally merge groups (in time order) into meta-alerts.

    Each group joins the most similar existing meta-alert if that similarity
    reaches ``group_threshold``; otherwise it founds a new one. Within a
    merge, each alert is paired with the most similar same-detector template
    scoring at least ``alert_threshold``, or becomes a new template. Since
    meta-alerts drift as they absorb groups, a final pass merges any two
    whose representatives became similar; the output is then a fixed point:
    re-merging :func:`representative_groups` of it gives the same partition.
    """
    for name, value in (("group_threshold", group_threshold), ("alert_threshold", alert_threshold)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    metas: list[_Builder] = []
    for g in sorted(groups, key=lambda g: (g.start, g.scenario)):
        bag, seq = g.detector_bag, g.sequence
        best, best_sim = None, -1.0
        for m in metas:
            rbag, rseq = m.representative()
            sim = _similarity(bag, seq, rbag, rseq, weights)
            if sim > best_sim:
                best, best_sim = m, sim
        if best is None or best_sim < group_threshold:
            best = _Builder()
            metas.append(best)
        best.absorb(g, alert_threshold)
    metas = _consolidate(metas, group_threshold, alert_threshold, weights)
    return [m.freeze(f"m{i}") for i, m in enumerate(metas)]


def representative_groups(metas: Iterable[MetaAlert]) -> list[AlertGroup]:
    """One synthetic group per meta-alert, alerts at maximum template frequency.

    Alerts come out detector by detector in the representative's order.
    """
    out = []
    for k, m in enumerate(metas):
        order = list(dict.fromkeys(t.detector for t in m.templates))
        alerts = []
        for d in order:
            for t in m.templates:
                if t.detector != d:
                    continue
                attrs = {a: v for a, v in t.attributes.items() if v is not WILDCARD}
                for _ in range(t.frequency_range[1]):
                    alerts.append(
                        Alert(f"{m.id}:{len(alerts)}", float(k), t.detector.ids or SourceIds.WAZUH, t.detector,
                              t.detector.rendered, "", scenario=m.id, attributes=attrs)
                    )
        if alerts:
            out.append(AlertGroup(f"{m.id}/rep", m.id, tuple(alerts)))
    return out


def distinct_alert_count(metas: Iterable[MetaAlert]) -> int:
    return sum(len(m.templates) for m in metas)


# persistence and rendering


def meta_to_dict(m: MetaAlert) -> dict[str, Any]:
    return {
        "id": m.id,
        "templates": [
            {
                "detector": t.detector.rendered,
                "attributes": {k: (None if v is WILDCARD else v) for k, v in sorted(t.attributes.items())},
                "frequency_range": list(t.frequency_range),
            }
            for t in m.templates
        ],
        "members": list(m.members),
        "scenarios": list(m.scenarios),
    }


def meta_from_dict(doc: Mapping[str, Any]) -> MetaAlert:
    return MetaAlert(
        doc["id"],
        tuple(
            AlertTemplate(
                detector(t["detector"]),
                {k: (WILDCARD if v is None else v) for k, v in t["attributes"].items()},
                tuple(t["frequency_range"]),
            )
            for t in doc["templates"]
        ),
        tuple(doc["members"]),
        tuple(doc.get("scenarios", ())),
    )


def dump_meta_alerts(metas: Iterable[MetaAlert]) -> str:
    return "".join(json.dumps(meta_to_dict(m), sort_keys=True) + "\n" for m in metas)


def load_meta_alerts(lines: Iterable[str]) -> Iterator[MetaAlert]:
    for line in lines:
        if line.strip():
            yield meta_from_dict(json.loads(line))


def _alert_list(items: Iterable[tuple[str, str]], limit: int) -> str:
    items = list(items)
    text = ", ".join(f"{d} {n}" for d, n in items[:limit])
    return text + (", ..." if len(items) > limit else "")


def render_summary(
    metas: Sequence[MetaAlert], groups: Sequence[AlertGroup], *, min_groups: int = 1, limit: int = 4
) -> str:
    """Text overview: each meta-alert with its member groups and truncated alert lists."""
    by_id = {g.id: g for g in groups}
    lines = []
    for m in metas:
        if len(m.members) < min_groups:
            continue
        tmpl = ((t.detector.rendered, "{}-{}".format(*t.frequency_range) if t.frequency_range[0] != t.frequency_range[1]
                 else str(t.frequency_range[0])) for t in m.templates)
        lines.append(f"{m.id} [{len(m.members)} groups, {len(m.templates)} alerts]: {_alert_list(tmpl, limit)}")
        for gid in m.members:
            g = by_id.get(gid)
            if g is None:
                lines.append(f"  {gid}")
                continue
            ranked = sorted(g.detector_bag.items(), key=lambda kv: (-kv[1], kv[0].rendered))
            bag = ((d.rendered, str(c)) for d, c in ranked)
            lines.append(f"  {g.scenario} {gid}: {_alert_list(bag, limit)}")
    return "\n".join(lines) + ("\n" if lines else "")
