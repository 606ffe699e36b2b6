"""Registry record ingest: parsing, corpus snapshots and review link sets."""

from __future__ import annotations

import csv
import datetime as dt
import html
import io
import json
import logging
import re
import xml.etree.ElementTree as ET
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .container import atomic_write_bytes, canonical_json, sha256_bytes
from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

TEXT_FIELDS = (
    "brief_title",
    "official_title",
    "detailed_description",
    "inclusion_criteria",
    "intervention_names",
)
RECORD_FIELDS = ("id",) + TEXT_FIELDS + ("completion_date", "status")

SNAPSHOT_FORMAT = "trialrank-corpus"
SNAPSHOT_VERSION = 1

_TAG_RE = re.compile(r"<[^<>]*>")
_DATE_RE = re.compile(r"^(\d{4})(?:-(\d{2})(?:-(\d{2}))?)?$")
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def strip_markup(text: str) -> str:
    """Replace tags with a space and decode character entities.

    Text without markup comes back unchanged.
    """
    if "<" not in text and "&" not in text:
        return text
    return html.unescape(_TAG_RE.sub(" ", text))


def normalise_date(value: Any, *, source=None) -> str | None:
    """Validate a partial ISO date (``YYYY``, ``YYYY-MM`` or ``YYYY-MM-DD``)."""
    if value is None or value == "":
        return None
    if not isinstance(value, str):
        raise ParseError("expected a date string", source=source, field="completion_date")
    m = _DATE_RE.match(value.strip())
    if not m:
        raise ParseError(f"unrecognised date {value!r}", source=source, field="completion_date")
    year, month, day = m.groups()
    try:
        dt.date(int(year), int(month or 1), int(day or 1))
    except ValueError as exc:
        raise ParseError(f"invalid date {value!r}: {exc}", source=source, field="completion_date") from exc
    return value.strip()


def date_sort_key(value: str | None) -> tuple:
    """Sort key placing undated values after every dated one."""
    if value is None:
        return (1, 0, 0, 0)
    parts = [int(p) for p in value.split("-")]
    parts += [0] * (3 - len(parts))
    return (0, *parts)


@dataclass(frozen=True)
class RegistryRecord:
    id: str
    brief_title: str = ""
    official_title: str = ""
    detailed_description: str = ""
    inclusion_criteria: str = ""
    intervention_names: tuple[str, ...] = ()
    completion_date: str | None = None
    status: str = ""

    def text(self) -> str:
        """Featurization text: the five text fields in fixed order, space-joined."""
        parts = [
            self.brief_title,
            self.official_title,
            self.detailed_description,
            self.inclusion_criteria,
            *self.intervention_names,
        ]
        return " ".join(p for p in parts if p)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "brief_title": self.brief_title,
            "official_title": self.official_title,
            "detailed_description": self.detailed_description,
            "inclusion_criteria": self.inclusion_criteria,
            "intervention_names": list(self.intervention_names),
            "completion_date": self.completion_date,
            "status": self.status,
        }


def _text_field(raw: Mapping, name: str, source) -> str:
    value = raw.get(name)
    if value is None:
        return ""
    if not isinstance(value, str):
        raise ParseError(f"expected text, got {type(value).__name__}", source=source, field=name)
    return value


def parse_record(raw: Mapping[str, Any], *, source=None, markup: bool = True) -> RegistryRecord:
    """Build a :class:`RegistryRecord` from a flat mapping of named fields.

    Missing optional fields become empty strings. With ``markup=True`` tags
    are stripped from the text fields.
    """
    if not isinstance(raw, Mapping):
        raise ParseError("record document must be an object with named fields", source=source)
    unknown = set(raw) - set(RECORD_FIELDS)
    if unknown:
        raise ParseError(f"unknown field(s) {sorted(unknown)}", source=source, field=sorted(unknown)[0])
    rid = raw.get("id")
    if rid is None or (isinstance(rid, str) and not rid.strip()):
        raise ParseError("missing id", source=source, field="id")
    if not isinstance(rid, str):
        raise ParseError("id must be a string", source=source, field="id")

    fields = {name: _text_field(raw, name, source) for name in TEXT_FIELDS[:-1]}
    interventions = raw.get("intervention_names") or []
    if isinstance(interventions, str):
        interventions = [interventions]
    if not isinstance(interventions, list) or not all(isinstance(x, str) for x in interventions):
        raise ParseError("expected a list of strings", source=source, field="intervention_names")
    status = raw.get("status") or ""
    if not isinstance(status, str):
        raise ParseError("expected text", source=source, field="status")

    if markup:
        fields = {k: strip_markup(v) for k, v in fields.items()}
        interventions = [strip_markup(x) for x in interventions]

    record = RegistryRecord(
        id=rid.strip(),
        intervention_names=tuple(interventions),
        completion_date=normalise_date(raw.get("completion_date"), source=source),
        status=status,
        **fields,
    )
    if not any(getattr(record, f) for f in TEXT_FIELDS):
        raise ParseError(f"record {record.id} has no text in any of the five text fields", source=source)
    return record


# ---------------------------------------------------------------------------
# ClinicalTrials.gov XML export adapter

_CTGOV_DATE_FORMATS = ("%B %d, %Y", "%B %Y", "%Y-%m-%d", "%Y-%m")
_INCLUSION_RE = re.compile(r"inclusion\s+criteria\s*:?", re.I)
_EXCLUSION_RE = re.compile(r"exclusion\s+criteria\s*:?", re.I)


def _ctgov_date(text: str | None) -> str | None:
    if not text:
        return None
    text = text.strip()
    for fmt in _CTGOV_DATE_FORMATS:
        try:
            parsed = dt.datetime.strptime(text, fmt)
        except ValueError:
            continue
        if "%d" in fmt:
            return parsed.strftime("%Y-%m-%d")
        return parsed.strftime("%Y-%m")
    return None


def _inclusion_part(criteria: str) -> str:
    start = _INCLUSION_RE.search(criteria)
    body = criteria[start.end() :] if start else criteria
    end = _EXCLUSION_RE.search(body)
    if end:
        body = body[: end.start()]
    return body.strip()


def _squash(text: str | None) -> str:
    return " ".join((text or "").split())


def parse_ctgov_xml(data: bytes | str, *, source=None, markup: bool = True) -> RegistryRecord:
    """Adapter for the public ClinicalTrials.gov ``clinical_study`` XML export."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}", source=source) from exc
    if root.tag != "clinical_study":
        raise ParseError(f"expected <clinical_study>, found <{root.tag}>", source=source)
    criteria = _squash(root.findtext("eligibility/criteria/textblock"))
    raw = {
        "id": _squash(root.findtext("id_info/nct_id")),
        "brief_title": _squash(root.findtext("brief_title")),
        "official_title": _squash(root.findtext("official_title")),
        "detailed_description": _squash(root.findtext("detailed_description/textblock")),
        "inclusion_criteria": _inclusion_part(criteria) if criteria else "",
        "intervention_names": [_squash(el.text) for el in root.findall("intervention/intervention_name") if el.text],
        "completion_date": _ctgov_date(root.findtext("completion_date")),
        "status": _squash(root.findtext("overall_status")),
    }
    return parse_record(raw, source=source, markup=markup)


def parse_record_file(path: str | Path, *, markup: bool = True) -> RegistryRecord:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if path.suffix.lower() == ".xml":
        return parse_ctgov_xml(data, source=path, markup=markup)
    try:
        raw = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed record document: {exc}", source=path) from exc
    return parse_record(raw, source=path, markup=markup)


# ---------------------------------------------------------------------------
# Corpus


@dataclass(frozen=True)
class Corpus:
    records: tuple[RegistryRecord, ...]
    snapshot_date: str | None = None
    source_note: str = ""
    markup_stripped: bool = True
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(sorted(self.records, key=lambda r: r.id))
        index = {}
        for i, rec in enumerate(records):
            if rec.id in index:
                raise ValidationError(f"duplicate record id {rec.id}")
            index[rec.id] = i
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, trial_id) -> bool:
        return trial_id in self._index

    def __getitem__(self, trial_id: str) -> RegistryRecord:
        return self.records[self._index[trial_id]]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    def index_of(self, trial_id: str) -> int:
        return self._index[trial_id]

    def records_jsonl(self) -> bytes:
        return "".join(canonical_json(r.to_dict()) + "\n" for r in self.records).encode("utf-8")

    def digest(self) -> str:
        """Content hash of the record sequence (ids and field bytes)."""
        return sha256_bytes(self.records_jsonl())

    def filter_status(self, status: str) -> "Corpus":
        wanted = status.strip().lower()
        kept = tuple(r for r in self.records if r.status.strip().lower() == wanted)
        note = f"{self.source_note}; status={wanted}" if self.source_note else f"status={wanted}"
        return Corpus(kept, self.snapshot_date, note, self.markup_stripped)

    def manifest(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "format_version": SNAPSHOT_VERSION,
            "snapshot_date": self.snapshot_date,
            "record_count": len(self.records),
            "source_note": self.source_note,
            "markup_stripped": self.markup_stripped,
            "records_sha256": self.digest(),
        }


def snapshot_bytes(corpus: Corpus) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, payload in (
            ("manifest.json", (json.dumps(corpus.manifest(), sort_keys=True, indent=2) + "\n").encode()),
            ("records.jsonl", corpus.records_jsonl()),
        ):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, payload)
    return buf.getvalue()


def save_snapshot(corpus: Corpus, path: str | Path) -> str:
    data = snapshot_bytes(corpus)
    atomic_write_bytes(path, data)
    return sha256_bytes(data)


def load_snapshot(path: str | Path) -> Corpus:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            lines = zf.read("records.jsonl").decode("utf-8").splitlines()
    except (OSError, KeyError, zipfile.BadZipFile) as exc:
        raise ValidationError(f"cannot read corpus snapshot {path}: {exc}") from exc
    if manifest.get("format") != SNAPSHOT_FORMAT or manifest.get("format_version") != SNAPSHOT_VERSION:
        raise ValidationError(f"{path}: unsupported snapshot format {manifest.get('format')!r} "
                              f"v{manifest.get('format_version')}")
    records = [
        parse_record(json.loads(line), source=f"{path}:{n}", markup=False)
        for n, line in enumerate(lines, 1)
    ]
    corpus = Corpus(tuple(records), manifest.get("snapshot_date"), manifest.get("source_note", ""),
                    manifest.get("markup_stripped", True))
    if len(corpus) != manifest.get("record_count") or corpus.digest() != manifest.get("records_sha256"):
        raise ValidationError(f"{path}: snapshot contents do not match its manifest")
    return corpus


def load_corpus(
    path: str | Path,
    *,
    markup: bool = True,
    status: str | None = None,
    snapshot_date: str | None = None,
    source_note: str | None = None,
) -> Corpus:
    """Load a directory of record files (``*.json``, ``*.xml``) or a snapshot archive."""
    path = Path(path)
    if path.is_file():
        corpus = load_snapshot(path)
    elif path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".json", ".xml") and p.is_file())
        seen: dict[str, Path] = {}
        records = []
        for f in files:
            rec = parse_record_file(f, markup=markup)
            if rec.id in seen:
                raise ValidationError(f"duplicate id {rec.id} in {seen[rec.id]} and {f}")
            seen[rec.id] = f
            records.append(rec)
        corpus = Corpus(tuple(records), normalise_date(snapshot_date), source_note or "", markup)
        log.info("loaded %d records from %s", len(corpus), path)
    else:
        raise ValidationError(f"corpus path {path} is neither a directory nor a snapshot file")
    if status:
        corpus = corpus.filter_status(status)
    return corpus


# ---------------------------------------------------------------------------
# Review links


@dataclass(frozen=True)
class ReviewLinkSet:
    review_id: str
    included_trial_ids: tuple[str, ...]
    # per-trial completion date used for ordering; None falls back to the record
    completion_dates: tuple[str | None, ...] = ()

    def __post_init__(self):
        if len(set(self.included_trial_ids)) != len(self.included_trial_ids):
            raise ValidationError(f"review {self.review_id} lists a trial more than once")
        if not self.completion_dates:
            object.__setattr__(self, "completion_dates", (None,) * len(self.included_trial_ids))
        elif len(self.completion_dates) != len(self.included_trial_ids):
            raise ValidationError(f"review {self.review_id}: completion_dates length mismatch")

    def __len__(self) -> int:
        return len(self.included_trial_ids)


def read_links(path: str | Path, corpus: Corpus) -> tuple[list[ReviewLinkSet], int]:
    """Parse a link file; returns the link sets and the number of duplicate pairs dropped."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read link file {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"review_id", "trial_id"} <= set(reader.fieldnames):
        raise ParseError("header row with review_id and trial_id columns is required", source=path)
    has_dates = "completion_date" in reader.fieldnames

    per_review: dict[str, dict[str, str | None]] = {}
    duplicates = 0
    for lineno, row in enumerate(reader, 2):
        review = (row.get("review_id") or "").strip()
        trial = (row.get("trial_id") or "").strip()
        if not review:
            raise ParseError(f"line {lineno}: empty review_id", source=path, field="review_id")
        bucket = per_review.setdefault(review, {})
        if not trial:
            continue
        if trial in bucket:
            duplicates += 1
            continue
        date = normalise_date(row.get("completion_date"), source=f"{path}:{lineno}") if has_dates else None
        bucket[trial] = date

    unresolved = [(r, t) for r in sorted(per_review) for t in sorted(per_review[r]) if t not in corpus]
    if unresolved:
        listing = ", ".join(f"{r}/{t}" for r, t in unresolved[:20])
        more = f" (+{len(unresolved) - 20} more)" if len(unresolved) > 20 else ""
        raise ValidationError(f"{path}: {len(unresolved)} unresolved trial id(s): {listing}{more}")
    empty = [r for r, trials in per_review.items() if not trials]
    if empty:
        raise ValidationError(f"{path}: review(s) with no resolvable links: {', '.join(sorted(empty))}")

    sets = []
    for review in sorted(per_review):
        trials = sorted(per_review[review])
        sets.append(ReviewLinkSet(review, tuple(trials), tuple(per_review[review][t] for t in trials)))
    return sets, duplicates


def load_links(path: str | Path, corpus: Corpus) -> list[ReviewLinkSet]:
    sets, duplicates = read_links(path, corpus)
    if duplicates:
        log.warning("%s: dropped %d duplicate (review, trial) pair(s)", path, duplicates)
    return sets


def write_records(records: Iterable[RegistryRecord], directory: str | Path) -> None:
    """Write records in the flat one-record-per-file JSON format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in records:
        payload = json.dumps(rec.to_dict(), indent=2, ensure_ascii=False) + "\n"
        (directory / f"{rec.id}.json").write_text(payload, encoding="utf-8")


def write_links(links: Sequence[ReviewLinkSet], path: str | Path, *, dates: bool = False) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["review_id", "trial_id"] + (["completion_date"] if dates else []))
    for ls in links:
        for tid, date in zip(ls.included_trial_ids, ls.completion_dates):
            writer.writerow([ls.review_id, tid] + ([date or ""] if dates else []))
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
