"""Parsing of Wazuh, Suricata and AMiner alert records into normalized alerts.

Input layout is ``root/<scenario>/<ids>/<host file>`` with one JSON record
per line, plain or gzip-compressed. Which record fields carry timestamp,
host, signature and addresses is declared per dialect in a mapping manifest
(``data/dialects.json``) so field names can be corrected without code edits.
"""
from __future__ import annotations

import gzip
import json
import logging
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import IO, Any, Iterable, Iterator, Mapping

from alertpipe.model import Alert, DetectorId, SourceIds, detector, parse_timestamp

log = logging.getLogger(__name__)

STORE_FORMAT = "alertpipe-alerts"
STORE_VERSION = 1


class ParseError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


class IngestError(RuntimeError):
    """Hard ingest failure: missing directory, unreadable file, bad store header."""


@dataclass(frozen=True)
class DialectRecord:
    dialect: SourceIds
    line_number: int
    text: str


@dataclass(frozen=True)
class SignatureEntry:
    ids: SourceIds
    signature: str
    detector: DetectorId
    prefix: bool = False


class SignatureTable:
    """Ordered signature -> detector rules; the first matching entry wins."""

    def __init__(self, entries: Iterable[SignatureEntry]):
        self.entries: tuple[SignatureEntry, ...] = tuple(entries)
        self._exact: dict[tuple[SourceIds, str], tuple[int, DetectorId]] = {}
        self._prefix: list[tuple[int, SignatureEntry]] = []
        for i, e in enumerate(self.entries):
            if e.prefix:
                self._prefix.append((i, e))
            else:
                self._exact.setdefault((e.ids, e.signature), (i, e.detector))
        self._cache: dict[tuple[SourceIds, str], DetectorId] = {}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "SignatureTable":
        return cls(
            SignatureEntry(
                SourceIds(e["ids"]),
                e["signature"],
                DetectorId.parse(e["detector"]),
                e.get("match", "exact") == "prefix",
            )
            for e in doc["entries"]
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "SignatureTable":
        if path is None:
            return default_signature_table()
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def detectors(self) -> frozenset[DetectorId]:
        return frozenset(e.detector for e in self.entries)

    def lookup(self, ids: SourceIds, signature: str) -> DetectorId:
        key = (ids, signature)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        best = self._exact.get((ids, signature.strip()))
        for i, e in self._prefix:
            if best is not None and i > best[0]:
                break
            if e.ids is ids and signature.startswith(e.signature):
                best = (i, e.detector)
                break
        result = DetectorId.unknown() if best is None or not signature else best[1]
        if len(self._cache) < 100_000:
            self._cache[key] = result
        return result


@lru_cache(maxsize=1)
def default_signature_table() -> SignatureTable:
    text = resources.files("alertpipe.data").joinpath("signatures.json").read_text("utf-8")
    return SignatureTable.from_dict(json.loads(text))


def map_signature(ids: SourceIds, signature: str, table: SignatureTable | None = None) -> DetectorId:
    return (table or default_signature_table()).lookup(ids, signature)


@lru_cache(maxsize=8)
def load_manifest(path: str | None = None) -> dict[SourceIds, dict[str, list[str]]]:
    if path is None:
        text = resources.files("alertpipe.data").joinpath("dialects.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    doc = json.loads(text)
    return {SourceIds(k): v for k, v in doc["dialects"].items()}


_MISSING = object()


def _get(record: Mapping[str, Any], path: str) -> Any:
    node: Any = record
    for part in path.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return _MISSING
        node = node[part]
    return node


def _first(record: Mapping[str, Any], paths: list[str]) -> Any:
    for p in paths:
        v = _get(record, p)
        if isinstance(v, list):
            v = v[0] if v else _MISSING
        if v is not _MISSING and v is not None and v != "":
            return v
    return None


def _scalar(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def _flatten(prefix: str, value: Any, out: dict[str, str]) -> None:
    if isinstance(value, Mapping):
        for k in value:
            _flatten(f"{prefix}.{k}", value[k], out)
    elif value is not None:
        out[prefix] = _scalar(value)


def _port(value: Any, line_number: int) -> int | None:
    if value is None:
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ParseError(f"bad port {value!r}", line_number) from None


def parse_record(
    rec: DialectRecord,
    table: SignatureTable | None = None,
    *,
    scenario: str = "",
    host: str | None = None,
    source: str = "",
    manifest: Mapping[SourceIds, Mapping[str, list[str]]] | None = None,
) -> Alert:
    """Normalize one alert line.

    ``host`` is the fallback host name (usually the file name) for records
    that do not carry one. Unknown signatures yield detector ``unknown``.
    """
    table = table or default_signature_table()
    fields = (manifest or load_manifest())[rec.dialect]
    try:
        record = json.loads(rec.text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", rec.line_number) from None
    if not isinstance(record, dict):
        raise ParseError("record is not a JSON object", rec.line_number)

    raw_ts = _first(record, fields["timestamp"])
    if raw_ts is None:
        raise ParseError("missing timestamp", rec.line_number)
    try:
        ts = parse_timestamp(raw_ts)
    except (ValueError, OverflowError) as exc:
        raise ParseError(f"bad timestamp {raw_ts!r}: {exc}", rec.line_number) from None

    sig = _first(record, fields["signature"])
    if sig is None:
        raise ParseError("missing signature", rec.line_number)
    sig = str(sig).strip()
    det = table.lookup(rec.dialect, sig)

    attributes: dict[str, str] = {}
    for path in fields["attributes"]:
        v = _get(record, path)
        if v is not _MISSING:
            _flatten(path, v, attributes)
    context = _first(record, fields.get("signature_context", []))
    if context is not None:
        attributes["log_source"] = _scalar(context)

    rec_host = _first(record, fields["host"])
    host_name = str(rec_host) if rec_host is not None else (host or "")
    src_ip = _first(record, fields["src_ip"])
    dst_ip = _first(record, fields["dst_ip"])
    return Alert(
        id=f"{source or scenario}:{rec.line_number}",
        timestamp=ts,
        ids=rec.dialect,
        detector=det,
        signature=sig,
        host=host_name,
        scenario=scenario,
        src_ip=None if src_ip is None else str(src_ip),
        dst_ip=None if dst_ip is None else str(dst_ip),
        src_port=_port(_first(record, fields["src_port"]), rec.line_number),
        dst_port=_port(_first(record, fields["dst_port"]), rec.line_number),
        attributes=attributes,
        raw=rec.text,
    )


@dataclass
class IngestStats:
    per_dialect: Counter = field(default_factory=Counter)
    parse_errors: int = 0
    unknown_signatures: int = 0
    files: int = 0

    @property
    def total(self) -> int:
        return sum(self.per_dialect.values())

    def merge(self, other: "IngestStats") -> None:
        self.per_dialect.update(other.per_dialect)
        self.parse_errors += other.parse_errors
        self.unknown_signatures += other.unknown_signatures
        self.files += other.files

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "per_dialect": {ids.value: self.per_dialect.get(ids, 0) for ids in SourceIds},
            "parse_errors": self.parse_errors,
            "unknown_signatures": self.unknown_signatures,
            "files": self.files,
        }


def open_text(path: Path) -> IO[str]:
    """Open plain or gzip text, sniffing the gzip magic rather than trusting the suffix."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def _host_from_file(path: Path) -> str:
    name = path.name
    for suffix in (".gz", ".json", ".jsonl", ".ndjson", ".log"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


def scenario_files(root: str | Path, scenario: str) -> list[tuple[SourceIds, Path]]:
    base = Path(root) / scenario
    if not base.is_dir():
        raise IngestError(f"scenario directory not found: {base}")
    out = []
    for ids_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        try:
            ids = SourceIds(ids_dir.name)
        except ValueError:
            log.warning("ignoring directory %s: not an IDS name", ids_dir)
            continue
        out.extend((ids, f) for f in sorted(p for p in ids_dir.iterdir() if p.is_file()))
    return out


def _iter_file(
    ids: SourceIds,
    path: Path,
    scenario: str,
    table: SignatureTable,
    stats: IngestStats,
    manifest_path: str | None,
) -> Iterator[Alert]:
    manifest = load_manifest(manifest_path)
    host = _host_from_file(path)
    source = f"{scenario}/{ids.value}/{path.name}"
    stats.files += 1
    try:
        fh = open_text(path)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with fh:
        try:
            for n, line in enumerate(fh, start=1):
                text = line[:-1] if line.endswith("\n") else line
                if not text.strip():
                    continue
                try:
                    alert = parse_record(
                        DialectRecord(ids, n, text), table,
                        scenario=scenario, host=host, source=source, manifest=manifest,
                    )
                except ParseError as exc:
                    stats.parse_errors += 1
                    log.warning("%s: %s", path, exc)
                    continue
                stats.per_dialect[ids] += 1
                if alert.detector.is_unknown:
                    stats.unknown_signatures += 1
                yield alert
        except (OSError, EOFError, UnicodeDecodeError) as exc:
            raise IngestError(f"cannot read {path}: {exc}") from exc


def _parse_file_job(args: tuple) -> tuple[list[Alert], IngestStats]:
    ids, path, scenario, table, manifest_path = args
    stats = IngestStats()
    alerts = list(_iter_file(ids, path, scenario, table, stats, manifest_path))
    return alerts, stats


def load_scenario(
    root: str | Path,
    scenario: str,
    table: SignatureTable | None = None,
    *,
    manifest_path: str | None = None,
    jobs: int = 1,
) -> tuple[Iterator[Alert], IngestStats]:
    """Stream a scenario's alerts in (ids dir, file name, line) order.

    The returned stats object fills in as the iterator is consumed. With
    ``jobs > 1`` files are parsed in worker processes; output order is the
    same as the sequential path.
    """
    table = table or default_signature_table()
    files = scenario_files(root, scenario)
    stats = IngestStats()

    def sequential() -> Iterator[Alert]:
        for ids, path in files:
            yield from _iter_file(ids, path, scenario, table, stats, manifest_path)

    def parallel() -> Iterator[Alert]:
        jobs_args = [(ids, path, scenario, table, manifest_path) for ids, path in files]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for alerts, file_stats in pool.map(_parse_file_job, jobs_args):
                stats.merge(file_stats)
                yield from alerts

    return (parallel() if jobs > 1 and len(files) > 1 else sequential()), stats


def list_scenarios(root: str | Path) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"input root not found: {root}")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def count_by_scenario(alerts: Iterable[Alert]) -> dict[str, dict[str, int]]:
    counts: dict[str, Counter] = defaultdict(Counter)
    for a in alerts:
        counts[a.scenario][a.ids.value] += 1
    return {s: dict(sorted(counts[s].items())) for s in sorted(counts)}


# normalized store


def alert_to_dict(alert: Alert) -> dict[str, Any]:
    return {
        "id": alert.id,
        "scenario": alert.scenario,
        "timestamp": alert.timestamp,
        "ids": alert.ids.value,
        "detector": alert.detector.rendered,
        "signature": alert.signature,
        "host": alert.host,
        "src_ip": alert.src_ip,
        "dst_ip": alert.dst_ip,
        "src_port": alert.src_port,
        "dst_port": alert.dst_port,
        "attributes": dict(alert.attributes),
        "raw": alert.raw,
    }


def alert_from_dict(doc: Mapping[str, Any], keep_raw: bool = True) -> Alert:
    return Alert(
        id=doc["id"],
        timestamp=float(doc["timestamp"]),
        ids=SourceIds(doc["ids"]),
        detector=detector(doc["detector"]),
        signature=doc["signature"],
        host=doc["host"],
        scenario=doc.get("scenario", ""),
        src_ip=doc.get("src_ip"),
        dst_ip=doc.get("dst_ip"),
        src_port=doc.get("src_port"),
        dst_port=doc.get("dst_port"),
        attributes=doc.get("attributes") or {},
        raw=doc.get("raw", "") if keep_raw else "",
    )


class _ClosingGzip(gzip.GzipFile):
    """GzipFile that also closes the file object it was given."""

    def close(self) -> None:
        fileobj = self.fileobj
        super().close()
        if fileobj is not None:
            fileobj.close()


def _open_write(path: Path) -> IO[str]:
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        # no name and mtime=0 in the header keep compressed output byte-identical
        return _ClosingGzip(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)  # type: ignore[return-value]
    return open(path, "w", encoding="utf-8", newline="\n")


def write_alerts(path: str | Path, alerts: Iterable[Alert]) -> int:
    path = Path(path)
    header = json.dumps({"format": STORE_FORMAT, "version": STORE_VERSION})
    n = 0
    with _open_write(path) as fh:
        binary = isinstance(fh, gzip.GzipFile)
        write = (lambda s: fh.write(s.encode("utf-8"))) if binary else fh.write
        write(header + "\n")
        for a in alerts:
            write(json.dumps(alert_to_dict(a), ensure_ascii=False, separators=(",", ":")) + "\n")
            n += 1
    return n


def read_alerts(path: str | Path, *, keep_raw: bool = True) -> Iterator[Alert]:
    """Stream a normalized store; ``keep_raw=False`` drops the original lines to save memory."""
    path = Path(path)
    try:
        fh = open_text(path)
    except OSError as exc:
        raise IngestError(f"cannot read alert store {path}: {exc}") from exc
    with fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError:
            header = None
        if not isinstance(header, dict) or header.get("format") != STORE_FORMAT:
            raise IngestError(f"{path}: not a normalized alert store")
        if header.get("version") != STORE_VERSION:
            raise IngestError(f"{path}: unsupported store version {header.get('version')}")
        for line in fh:
            if line.strip():
                yield alert_from_dict(json.loads(line), keep_raw)
