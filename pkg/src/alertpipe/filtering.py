"""Score-threshold and attack-window filters, and reduction-rate reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, Union

from alertpipe.model import Alert, DetectorId, ScenarioLabels, assign_phase
from alertpipe.scoring import ScoreRow

Scores = Union[Mapping[DetectorId, float], Sequence[ScoreRow]]

STAGES = ("all", "filtered_by_prioritization", "in_attack_phases", "filtered_and_in_attack_phases")
STAGE_TITLES = {
    "all": "All",
    "filtered_by_prioritization": "Filtered by prioritization",
    "in_attack_phases": "In attack phases",
    "filtered_and_in_attack_phases": "Filtered and in attack phases",
}


def score_map(rows: Scores) -> dict[DetectorId, float]:
    if isinstance(rows, Mapping):
        return dict(rows)
    return {r.detector: r.detection_score for r in rows}


def selected_detectors(rows: Scores, threshold: float) -> frozenset[DetectorId]:
    return frozenset(d for d, s in score_map(rows).items() if s > threshold and not d.is_unknown)


def _keeps_score(alert: Alert, scores: Mapping[DetectorId, float], threshold: float) -> bool:
    return not alert.detector.is_unknown and scores.get(alert.detector, 0.0) > threshold


def _in_phase(alert: Alert, labels: Mapping[str, ScenarioLabels]) -> bool:
    lab = labels.get(alert.scenario)
    return lab is not None and assign_phase(alert, lab) is not None


def filter_by_detection_score(alerts: Iterable[Alert], rows: Scores, threshold: float) -> Iterator[Alert]:
    """Keep alerts whose detector scores strictly above ``threshold``.

    Detectors missing from ``rows`` count as score 0; ``unknown`` is always dropped.
    """
    scores = score_map(rows)
    return (a for a in alerts if _keeps_score(a, scores, threshold))


def filter_to_attack_phases(alerts: Iterable[Alert], labels: Mapping[str, ScenarioLabels]) -> Iterator[Alert]:
    return (a for a in alerts if _in_phase(a, labels))


def reduction_rate(before: int, after: int) -> float:
    if before <= 0:
        raise ValueError("reduction rate needs a positive 'before' count")
    return (1.0 - after / before) * 100.0


@dataclass
class ScenarioReduction:
    scenario: str
    counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(STAGES, 0))

    def rate(self, stage: str) -> float | None:
        total = self.counts["all"]
        return reduction_rate(total, self.counts[stage]) if total else None


@dataclass
class FilterReport:
    scenarios: list[ScenarioReduction]

    def average_rate(self, stage: str) -> float | None:
        """Unweighted mean of per-scenario rates (scenarios without alerts are skipped)."""
        rates = [r for r in (s.rate(stage) for s in self.scenarios) if r is not None]
        return sum(rates) / len(rates) if rates else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", *(s.scenario for s in self.scenarios), "avg_reduction_rate"])
        for stage in STAGES:
            w.writerow([stage, *(s.counts[stage] for s in self.scenarios), _fmt_rate(self.average_rate(stage)) if stage != "all" else ""])
            if stage != "all":
                w.writerow([f"{stage}_rate", *(_fmt_rate(s.rate(stage)) for s in self.scenarios), ""])
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["Alerts", *(s.scenario for s in self.scenarios), "Avg. reduction rate"]
        body = []
        for stage in STAGES:
            cells = [STAGE_TITLES[stage]]
            for s in self.scenarios:
                n = f"{s.counts[stage]:,}"
                r = s.rate(stage)
                cells.append(n if stage == "all" or r is None else f"{n} ({r:.2f}%)")
            avg = self.average_rate(stage)
            cells.append("-" if stage == "all" or avg is None else f"{avg:.2f}%")
            body.append(cells)
        widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header, *body]]
        return "\n".join(lines) + "\n"


def _fmt_rate(rate: float | None) -> str:
    return "" if rate is None else f"{rate:.2f}"


def build_filter_report(
    alerts: Iterable[Alert],
    rows: Scores,
    labels: Mapping[str, ScenarioLabels],
    threshold: float,
    *,
    kept: list[Alert] | None = None,
) -> FilterReport:
    """Count the four filter stages per scenario in one pass.

    When ``kept`` is given, alerts passing both filters are appended to it.
    """
    scores = score_map(rows)
    per: dict[str, ScenarioReduction] = {name: ScenarioReduction(name) for name in labels}
    for a in alerts:
        rec = per.get(a.scenario)
        if rec is None:
            rec = per[a.scenario] = ScenarioReduction(a.scenario)
        c = rec.counts
        c["all"] += 1
        s = _keeps_score(a, scores, threshold)
        p = _in_phase(a, labels)
        c["filtered_by_prioritization"] += s
        c["in_attack_phases"] += p
        if s and p:
            c["filtered_and_in_attack_phases"] += 1
            if kept is not None:
                kept.append(a)
    return FilterReport([per[k] for k in sorted(per)])
