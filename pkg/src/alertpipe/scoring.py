"""Alert rates, robustness and detection scores, and the ranked detector table.

Counting is a single streaming pass over alerts (:func:`tally`). An alert is
counted for every phase window of its scenario that contains its timestamp,
so the long exfiltration window and the multi-step phases are counted
independently of each other.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from alertpipe.model import (
    PHASES,
    Alert,
    AttackPhaseWindow,
    DetectorId,
    PhaseName,
    ScenarioLabels,
    TestWindow,
    detector,
)

NORMAL = "normal"
RATE_LABELS: tuple[str, ...] = tuple(p.value for p in PHASES) + (NORMAL,)


def count_in_interval(
    alerts: Iterable[Alert], det: DetectorId, interval: AttackPhaseWindow | TestWindow | tuple[float, float]
) -> int:
    start, end = interval if isinstance(interval, tuple) else (interval.start, interval.end)
    return sum(1 for a in alerts if a.detector == det and start <= a.timestamp < end)


def alert_rate(count: int, duration_seconds: float) -> float:
    """Alerts per minute."""
    if not duration_seconds > 0:
        raise ValueError(f"duration must be positive, got {duration_seconds}")
    return count * 60.0 / duration_seconds


def render_rate(rate: float) -> str:
    if rate == 0:
        return ""
    if rate < 0.01:
        return ">0"
    return f"{rate:.2f}"


def format_score(value: float) -> str:
    """Two-decimal rendering with trailing zeros trimmed: 0.80 -> '0.8', 1.00 -> '1.0'."""
    s = f"{value:.2f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


@dataclass(frozen=True)
class PhaseObservation:
    """Counts and window lengths of one detector for one phase in one scenario."""

    n_attack: int
    n_test: int
    attack_duration: float
    test_duration: float

    def __post_init__(self) -> None:
        if not (self.attack_duration > 0 and self.test_duration > 0):
            raise ValueError("window durations must be positive")


def robustness_term(obs: PhaseObservation) -> float | None:
    """Per-scenario robustness; ``None`` when the detector was silent in the phase."""
    if obs.n_attack == 0:
        return None
    ratio = (obs.n_test / obs.n_attack) * (obs.attack_duration / obs.test_duration)
    return 1.0 - min(1.0, ratio)


def robustness_score(observations: Iterable[PhaseObservation]) -> float:
    """Mean per-scenario robustness over the scenarios where the detector fired.

    Scenarios without alerts in the phase window are left out of the mean;
    they are penalized by the detection ratio instead. Returns 0 when the
    detector never fired in the phase.
    """
    terms = [t for t in map(robustness_term, observations) if t is not None]
    return math.fsum(terms) / len(terms) if terms else 0.0


@dataclass
class Tally:
    """Raw counts from one pass: per (scenario, detector, phase) and per test window."""

    phase_counts: Counter = field(default_factory=Counter)
    test_counts: Counter = field(default_factory=Counter)
    detectors: set = field(default_factory=set)
    alerts: int = 0

    def add(self, alert: Alert, labels: ScenarioLabels) -> None:
        ts = alert.timestamp
        det = alert.detector
        self.detectors.add(det)
        self.alerts += 1
        for w in labels.phases:
            if w.start <= ts < w.end:
                self.phase_counts[(labels.name, det, w.phase)] += 1
        t = labels.test
        if t is not None and t.start <= ts < t.end:
            self.test_counts[(labels.name, det)] += 1


def tally(alerts: Iterable[Alert], labels: Mapping[str, ScenarioLabels]) -> Tally:
    """Count alerts per window; alerts of scenarios without labels are skipped."""
    out = Tally()
    for a in alerts:
        lab = labels.get(a.scenario)
        if lab is not None:
            out.add(a, lab)
    return out


@dataclass(frozen=True)
class DetectionMatrix:
    """Scenario counts with at least one alert, per detector and phase.

    ``phase_occurrences`` holds the number of scenarios that contain each phase.
    """

    cells: Mapping[tuple[DetectorId, PhaseName], int]
    false_positives: Mapping[DetectorId, int]
    phase_occurrences: Mapping[PhaseName, int]
    detectors: tuple[DetectorId, ...]

    def cell(self, det: DetectorId, phase: PhaseName) -> int:
        return self.cells.get((det, phase), 0)


def _matrix_from_tally(t: Tally, labels: Mapping[str, ScenarioLabels]) -> DetectionMatrix:
    cells: Counter = Counter()
    for (_, det, phase), n in t.phase_counts.items():
        if n > 0:
            cells[(det, phase)] += 1
    fps: Counter = Counter()
    for (_, det), n in t.test_counts.items():
        if n > 0:
            fps[det] += 1
    occ = Counter(w.phase for lab in labels.values() for w in lab.phases)
    return DetectionMatrix(
        dict(cells), dict(fps), {p: occ.get(p, 0) for p in PHASES}, tuple(sorted(t.detectors))
    )


def detection_matrix(alerts: Iterable[Alert], labels: Mapping[str, ScenarioLabels]) -> DetectionMatrix:
    return _matrix_from_tally(tally(alerts, labels), labels)


def detection_score(
    robustness: Mapping[PhaseName, float], matrix: DetectionMatrix, det: DetectorId
) -> float:
    return _best_phase(robustness, matrix, det)[1]


def _best_phase(
    robustness: Mapping[PhaseName, float], matrix: DetectionMatrix, det: DetectorId
) -> tuple[PhaseName | None, float]:
    best: PhaseName | None = None
    best_key = (0.0, 0.0)
    for phase in PHASES:
        occ = matrix.phase_occurrences.get(phase, 0)
        if occ == 0:
            continue
        rob = robustness.get(phase, 0.0)
        value = rob * matrix.cell(det, phase) / occ
        if value > 0 and (value, rob) > best_key:
            best, best_key = phase, (value, rob)
    return best, best_key[0]


@dataclass(frozen=True)
class ScoreRow:
    detector: DetectorId
    robustness: Mapping[PhaseName, float]
    detection_score: float
    best_phase: PhaseName | None
    phase_counts: Mapping[PhaseName, int]
    false_positives: int

    @property
    def best_robustness(self) -> float:
        """Robustness of the phase that attains the detection score."""
        return 0.0 if self.best_phase is None else self.robustness.get(self.best_phase, 0.0)


def observations(
    t: Tally, labels: Mapping[str, ScenarioLabels], det: DetectorId, phase: PhaseName
) -> list[PhaseObservation]:
    out = []
    for name in sorted(labels):
        lab = labels[name]
        w = lab.window(phase)
        if w is None or lab.test is None:
            continue
        out.append(
            PhaseObservation(
                t.phase_counts.get((name, det, phase), 0),
                t.test_counts.get((name, det), 0),
                w.duration,
                lab.test.duration,
            )
        )
    return out


def score_tally(t: Tally, labels: Mapping[str, ScenarioLabels]) -> list[ScoreRow]:
    matrix = _matrix_from_tally(t, labels)
    rows = []
    for det in matrix.detectors:
        rob = {p: robustness_score(observations(t, labels, det, p)) for p in PHASES}
        best, score = _best_phase(rob, matrix, det)
        rows.append(
            ScoreRow(
                detector=det,
                robustness=rob,
                detection_score=score,
                best_phase=best,
                phase_counts={p: matrix.cell(det, p) for p in PHASES},
                false_positives=matrix.false_positives.get(det, 0),
            )
        )
    return rows


def score_detectors(alerts: Iterable[Alert], labels: Mapping[str, ScenarioLabels]) -> list[ScoreRow]:
    """One row per detector seen in ``alerts`` (unranked, zero scores included)."""
    return score_tally(tally(alerts, labels), labels)


def rank_detectors(rows: Iterable[ScoreRow]) -> list[ScoreRow]:
    """Descending detection score; zero and ``unknown`` rows dropped; ties by robustness then id."""
    kept = [r for r in rows if r.detection_score > 0 and not r.detector.is_unknown]
    return sorted(kept, key=lambda r: (-r.detection_score, -r.best_robustness, r.detector.rendered))


@dataclass(frozen=True)
class RateTable:
    """Alerts per minute per (detector, interval label), pooled over scenarios."""

    rates: Mapping[tuple[DetectorId, str], float]
    detectors: tuple[DetectorId, ...]

    def rate(self, det: DetectorId, label: str) -> float:
        return self.rates.get((det, label), 0.0)


def rate_table(t: Tally, labels: Mapping[str, ScenarioLabels]) -> RateTable:
    """Pooled rate = total alerts in the interval / total interval minutes over scenarios."""
    durations: Counter = Counter()
    for lab in labels.values():
        for w in lab.phases:
            durations[w.phase.value] += w.duration
        if lab.test is not None:
            durations[NORMAL] += lab.test.duration
    counts: Counter = Counter()
    for (_, det, phase), n in t.phase_counts.items():
        counts[(det, phase.value)] += n
    for (_, det), n in t.test_counts.items():
        counts[(det, NORMAL)] += n
    rates = {
        (det, label): alert_rate(n, durations[label]) for (det, label), n in counts.items() if n
    }
    return RateTable(rates, tuple(sorted(t.detectors)))


# CSV surfaces

SCORE_COLUMNS = (
    ["detector"]
    + [p.value for p in PHASES]
    + ["false_positives", "robustness", "detection_score", "best_phase", "robustness_exact", "detection_score_exact"]
)


def score_csv(rows: Sequence[ScoreRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for r in rows:
        w.writerow(
            [r.detector.rendered]
            + [r.phase_counts.get(p, 0) for p in PHASES]
            + [
                r.false_positives,
                format_score(r.best_robustness),
                format_score(r.detection_score),
                "" if r.best_phase is None else r.best_phase.value,
                repr(r.best_robustness),
                repr(r.detection_score),
            ]
        )
    return buf.getvalue()


def read_score_csv(path: str | Path) -> dict[DetectorId, float]:
    """Full-precision detection scores keyed by detector."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "detection_score_exact" not in reader.fieldnames:
            raise ValueError(f"{path}: not a score table")
        return {detector(r["detector"]): float(r["detection_score_exact"]) for r in reader}


def rate_csv(table: RateTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["detector", *RATE_LABELS])
    for det in table.detectors:
        w.writerow([det.rendered, *(render_rate(table.rate(det, lab)) for lab in RATE_LABELS)])
    return buf.getvalue()


def group_by_scenario(alerts: Iterable[Alert]) -> dict[str, list[Alert]]:
    out: dict[str, list[Alert]] = defaultdict(list)
    for a in alerts:
        out[a.scenario].append(a)
    return dict(out)
