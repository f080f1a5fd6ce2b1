"""Shared domain types, the detector taxonomy, and time-window labeling."""
from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from dateutil.parser import isoparse

DAY_SECONDS = 86_400.0
DEFAULT_TEST_DURATION = 18_000.0


class LabelError(ValueError):
    """Raised for inconsistent scenario labels or test windows."""


class SourceIds(str, enum.Enum):
    WAZUH = "wazuh"
    SURICATA = "suricata"
    AMINER = "aminer"

    @property
    def token(self) -> str:
        return _IDS_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "SourceIds":
        for ids, tok in _IDS_TOKENS.items():
            if tok == token:
                return ids
        raise ValueError(f"unknown IDS token {token!r}")


_IDS_TOKENS = {SourceIds.WAZUH: "W", SourceIds.SURICATA: "S", SourceIds.AMINER: "A"}
_DETECTOR_RE = re.compile(r"^([ASW])-([A-Z][a-z]{2})-([A-Za-z0-9]+)$")
UNKNOWN = "unknown"


@dataclass(frozen=True, order=True)
class DetectorId:
    """Three-token detector abbreviation such as ``W-Acc-Att``.

    The sentinel returned by :meth:`unknown` renders as ``"unknown"`` and
    has no IDS. Ordering follows the rendered text.
    """

    rendered: str
    ids: SourceIds | None = field(compare=False, default=None)
    source: str = field(compare=False, default="")
    event: str = field(compare=False, default="")

    @classmethod
    def parse(cls, text: str) -> "DetectorId":
        if text == UNKNOWN:
            return cls.unknown()
        m = _DETECTOR_RE.match(text)
        if m is None:
            raise ValueError(f"malformed detector abbreviation {text!r}")
        return cls(text, SourceIds.from_token(m.group(1)), m.group(2), m.group(3))

    @classmethod
    def unknown(cls) -> "DetectorId":
        return _UNKNOWN_ID

    @property
    def is_unknown(self) -> bool:
        return self.rendered == UNKNOWN

    def __str__(self) -> str:
        return self.rendered


_UNKNOWN_ID = DetectorId(UNKNOWN)


@lru_cache(maxsize=None)
def detector(text: str) -> DetectorId:
    """Cached :meth:`DetectorId.parse`; detector ids repeat millions of times."""
    return DetectorId.parse(text)


@lru_cache(maxsize=1)
def taxonomy_entries() -> tuple[tuple[SourceIds, str, str], ...]:
    """The bundled signature table as ``(ids, signature, abbreviation)`` rows."""
    text = resources.files("alertpipe.data").joinpath("signatures.json").read_text("utf-8")
    doc = json.loads(text)
    return tuple((SourceIds(e["ids"]), e["signature"], e["detector"]) for e in doc["entries"])


def taxonomy_abbreviations() -> frozenset[str]:
    return frozenset(abbr for _, _, abbr in taxonomy_entries())


@dataclass(frozen=True)
class Alert:
    id: str
    timestamp: float
    ids: SourceIds
    detector: DetectorId
    signature: str
    host: str
    scenario: str = ""
    src_ip: str | None = None
    dst_ip: str | None = None
    src_port: int | None = None
    dst_port: int | None = None
    attributes: Mapping[str, str] = field(default_factory=dict)
    raw: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp):
            raise ValueError(f"alert {self.id}: non-finite timestamp")
        if not self.signature:
            raise ValueError(f"alert {self.id}: empty signature")

    @property
    def victim(self) -> str:
        """Target of the alert: destination address if known, else the reporting host."""
        return self.dst_ip or self.host


class PhaseName(str, enum.Enum):
    NETWORK_SCANS = "network_scans"
    SERVICE_SCANS = "service_scans"
    WORDPRESS_SCAN = "wordpress_scan"
    DIRB_SCAN = "dirb_scan"
    WEBSHELL_UPLOAD = "webshell_upload"
    PASSWORD_CRACKING = "password_cracking"
    REVERSE_SHELL = "reverse_shell"
    PRIVILEGE_ESCALATION = "privilege_escalation"
    SERVICE_STOP = "service_stop"
    DATA_EXFILTRATION = "data_exfiltration"

    @property
    def is_multi_step(self) -> bool:
        return self in MULTI_STEP_PHASES

    @property
    def order(self) -> int:
        return _PHASE_ORDER[self]


PHASES: tuple[PhaseName, ...] = tuple(PhaseName)
MULTI_STEP_PHASES: frozenset[PhaseName] = frozenset(PHASES[:8])
_PHASE_ORDER = {p: i for i, p in enumerate(PHASES)}


@dataclass(frozen=True)
class AttackPhaseWindow:
    phase: PhaseName
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise LabelError(f"{self.phase.value}: start must precede end")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def contains(self, ts: float) -> bool:
        return self.start <= ts < self.end

    def overlaps(self, start: float, end: float) -> bool:
        return self.start < end and start < self.end


@dataclass(frozen=True)
class TestWindow:
    start: float
    end: float

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise LabelError("test window start must precede end")

    @property
    def duration(self) -> float:
        return self.end - self.start

    def contains(self, ts: float) -> bool:
        return self.start <= ts < self.end


@dataclass(frozen=True)
class ScenarioLabels:
    """Attack-phase windows and the normal-operation test window of one scenario.

    ``test`` may be left as ``None`` at construction and filled later with
    :func:`derive_default_test_window` (see :func:`with_default_test_window`).
    """

    name: str
    phases: tuple[AttackPhaseWindow, ...]
    data_start: float
    data_end: float
    test: TestWindow | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.data_start < self.data_end:
            raise LabelError(f"{self.name}: data_start must precede data_end")
        seen: set[PhaseName] = set()
        for w in self.phases:
            if w.phase in seen:
                raise LabelError(f"{self.name}: duplicate window for {w.phase.value}")
            seen.add(w.phase)
            if w.start < self.data_start or w.end > self.data_end:
                raise LabelError(f"{self.name}: {w.phase.value} lies outside the capture")
        steps = sorted((w for w in self.phases if w.phase.is_multi_step), key=lambda w: w.start)
        for a, b in zip(steps, steps[1:]):
            if a.overlaps(b.start, b.end):
                raise LabelError(
                    f"{self.name}: {a.phase.value} and {b.phase.value} overlap"
                )
        if self.test is not None:
            _check_test_window(self, self.test)

    def window(self, phase: PhaseName) -> AttackPhaseWindow | None:
        for w in self.phases:
            if w.phase is phase:
                return w
        return None

    def has_phase(self, phase: PhaseName) -> bool:
        return self.window(phase) is not None


def _check_test_window(labels: ScenarioLabels, test: TestWindow) -> None:
    if test.start < labels.data_start or test.end > labels.data_end:
        raise LabelError(f"{labels.name}: test window lies outside the capture")
    for w in labels.phases:
        if w.overlaps(test.start, test.end):
            raise LabelError(f"{labels.name}: test window overlaps {w.phase.value}")


def assign_phase(alert: Alert | float, labels: ScenarioLabels) -> PhaseName | None:
    """Phase whose half-open window holds the alert; latest start wins on overlap."""
    ts = alert if isinstance(alert, (int, float)) else alert.timestamp
    best: AttackPhaseWindow | None = None
    for w in labels.phases:
        if w.start <= ts < w.end:
            if best is None or (w.start, -w.phase.order) > (best.start, -best.phase.order):
                best = w
    return None if best is None else best.phase


def in_test_window(alert: Alert | float, labels: ScenarioLabels) -> bool:
    ts = alert if isinstance(alert, (int, float)) else alert.timestamp
    return labels.test is not None and labels.test.start <= ts < labels.test.end


def derive_default_test_window(
    labels: ScenarioLabels, duration: float = DEFAULT_TEST_DURATION
) -> TestWindow:
    """Normal-operation window one day before the first multi-step phase.

    An explicit ``labels.test`` is returned untouched.
    """
    if labels.test is not None:
        return labels.test
    starts = [w.start for w in labels.phases if w.phase.is_multi_step]
    if not starts:
        raise LabelError(f"{labels.name}: no multi-step phase to anchor a test window")
    start = min(starts) - DAY_SECONDS
    test = TestWindow(start, start + duration)
    if start < labels.data_start:
        raise LabelError(f"{labels.name}: derived test window precedes the capture; set one")
    _check_test_window(labels, test)
    return test


def with_default_test_window(
    labels: ScenarioLabels, duration: float = DEFAULT_TEST_DURATION
) -> ScenarioLabels:
    if labels.test is not None:
        return labels
    return ScenarioLabels(
        labels.name, labels.phases, labels.data_start, labels.data_end,
        derive_default_test_window(labels, duration),
    )


def parse_timestamp(value: Any) -> float:
    """UTC epoch seconds from a number or an ISO-8601 string (naive means UTC)."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a timestamp")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
        dt = isoparse(value)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.timestamp()
    raise ValueError(f"cannot interpret {value!r} as a timestamp")


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat()


def labels_from_dict(name: str, doc: Mapping[str, Any]) -> ScenarioLabels:
    phases = tuple(
        AttackPhaseWindow(PhaseName(p["phase"]), parse_timestamp(p["start"]), parse_timestamp(p["end"]))
        for p in doc["phases"]
    )
    test = None
    if doc.get("test"):
        test = TestWindow(parse_timestamp(doc["test"]["start"]), parse_timestamp(doc["test"]["end"]))
    return ScenarioLabels(
        name, phases, parse_timestamp(doc["data_start"]), parse_timestamp(doc["data_end"]), test
    )


def labels_to_dict(labels: ScenarioLabels) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "data_start": format_timestamp(labels.data_start),
        "data_end": format_timestamp(labels.data_end),
        "phases": [
            {"phase": w.phase.value, "start": format_timestamp(w.start), "end": format_timestamp(w.end)}
            for w in labels.phases
        ],
    }
    if labels.test is not None:
        doc["test"] = {"start": format_timestamp(labels.test.start), "end": format_timestamp(labels.test.end)}
    return doc


def load_labels(
    path: str | Path, test_duration: float = DEFAULT_TEST_DURATION
) -> dict[str, ScenarioLabels]:
    """Read a label file ``{"scenarios": {name: {...}}}``.

    Scenarios without an explicit ``test`` block get the derived default.
    """
    doc = json.loads(Path(path).read_text("utf-8"))
    try:
        scenarios = doc["scenarios"]
    except (KeyError, TypeError):
        raise LabelError(f"{path}: missing 'scenarios' object") from None
    out = {}
    for name in sorted(scenarios):
        try:
            labels = labels_from_dict(name, scenarios[name])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, LabelError):
                raise
            raise LabelError(f"{path}: scenario {name}: {exc}") from exc
        out[name] = with_default_test_window(labels, test_duration)
    return out


def dump_labels(labels: Iterable[ScenarioLabels]) -> str:
    doc = {"scenarios": {lab.name: labels_to_dict(lab) for lab in labels}}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
