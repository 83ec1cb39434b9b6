"""File-backed append-only record store and the CSV/JSONL ingestion formats.

Each record kind lives in its own newline-delimited JSON log next to a
manifest. A record is durable once its full line (including the newline) is
on disk; on open, a torn trailing line is truncated away, so readers only
ever see fully written records. All mutations funnel through one lock, which
is the single-writer path; reads work on immutable snapshots.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

from .core import MoodResponse, Observation, Participant
from .sampling import ANSWERED, EXPIRED, PENDING, Poll, record_response

log = logging.getLogger(__name__)

KINDS = ("participants", "observations", "responses", "polls")

OBSERVATION_COLUMNS = (
    "participant_id",
    "timestamp",
    "bpm",
    "light_level",
    "acceleration",
    "vmc",
    "latitude",
    "longitude",
    "altitude",
)
PARTICIPANT_COLUMNS = (
    "id",
    "age",
    "gender",
    "weight",
    "sportiness",
    "neuroticism",
    "extraversion",
    "openness",
    "agreeableness",
    "conscientiousness",
    "tz",
)
RESPONSE_COLUMNS = ("participant_id", "timestamp", "happiness", "activation", "mood_state")


class StoreError(RuntimeError):
    """Corruption or constraint violation inside the store."""


class SchemaError(ValueError):
    """A whole ingestion file does not match its declared schema."""


def format_ts(ts: datetime) -> str:
    """RFC 3339 in UTC with a Z suffix."""
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_ts(text: str) -> datetime:
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp must carry an explicit offset: {text!r}")
    return ts.astimezone(timezone.utc)


def _num(text: str) -> float:
    return float(text)


def _opt_num(text: str) -> Optional[float]:
    return None if text is None or text == "" else float(text)


# --- record (de)serialization -------------------------------------------------

def observation_to_record(o: Observation) -> dict:
    rec = {
        "participant_id": o.participant_id,
        "timestamp": format_ts(o.timestamp),
        "bpm": o.bpm,
        "light_level": o.light_level,
        "acceleration": o.acceleration,
        "vmc": o.vmc,
    }
    if o.gps_present:
        rec.update(latitude=o.latitude, longitude=o.longitude, altitude=o.altitude)
    return rec


def record_to_observation(rec: dict) -> Observation:
    return Observation(
        participant_id=str(rec["participant_id"]),
        timestamp=parse_ts(rec["timestamp"]),
        bpm=float(rec["bpm"]),
        light_level=float(rec["light_level"]),
        acceleration=float(rec["acceleration"]),
        vmc=float(rec["vmc"]),
        latitude=_opt_none(rec.get("latitude")),
        longitude=_opt_none(rec.get("longitude")),
        altitude=_opt_none(rec.get("altitude")),
    )


def _opt_none(v):
    return None if v is None or v == "" else float(v)


def participant_to_record(p: Participant) -> dict:
    return {
        "id": p.id,
        "age": p.age,
        "gender": p.gender,
        "weight": p.weight,
        "sportiness": p.sportiness,
        "neuroticism": p.neuroticism,
        "extraversion": p.extraversion,
        "openness": p.openness,
        "agreeableness": p.agreeableness,
        "conscientiousness": p.conscientiousness,
        "tz": p.tz,
    }


def record_to_participant(rec: dict) -> Participant:
    return Participant(
        id=str(rec["id"]),
        age=int(rec["age"]),
        gender=str(rec["gender"]),
        weight=float(rec["weight"]),
        sportiness=int(rec["sportiness"]),
        neuroticism=_opt_none(rec.get("neuroticism")),
        extraversion=_opt_none(rec.get("extraversion")),
        openness=_opt_none(rec.get("openness")),
        agreeableness=_opt_none(rec.get("agreeableness")),
        conscientiousness=_opt_none(rec.get("conscientiousness")),
        tz=str(rec.get("tz", "UTC")),
    )


def response_to_record(r: MoodResponse) -> dict:
    return {
        "participant_id": r.participant_id,
        "timestamp": format_ts(r.timestamp),
        "happiness": r.happiness,
        "activation": r.activation,
        "mood_state": r.mood_state,
    }


def record_to_response(rec: dict) -> MoodResponse:
    mood_state = rec.get("mood_state")
    return MoodResponse(
        participant_id=str(rec["participant_id"]),
        timestamp=parse_ts(rec["timestamp"]),
        happiness=int(rec["happiness"]),
        activation=int(rec["activation"]),
        mood_state=None if mood_state in (None, "") else int(mood_state),
    )


def poll_to_record(p: Poll) -> dict:
    rec = {
        "id": p.id,
        "participant_id": p.participant_id,
        "issued_at": format_ts(p.issued_at),
        "status": p.status,
    }
    if p.response is not None:
        rec["answered_at"] = format_ts(p.response.timestamp)
        rec["happiness"] = p.response.happiness
        rec["activation"] = p.response.activation
    return rec


def record_to_poll(rec: dict) -> Poll:
    response = None
    if rec.get("status") == ANSWERED:
        response = MoodResponse(
            participant_id=str(rec["participant_id"]),
            timestamp=parse_ts(rec["answered_at"]),
            happiness=int(rec["happiness"]),
            activation=int(rec["activation"]),
        )
    return Poll(
        id=str(rec["id"]),
        participant_id=str(rec["participant_id"]),
        issued_at=parse_ts(rec["issued_at"]),
        status=str(rec["status"]),
        response=response,
    )


# --- the store -----------------------------------------------------------------

_MANIFEST = {"format": "moodsense-log-store", "version": 1, "kinds": list(KINDS)}


class Store:
    """Append-only log store; one writer, many readers."""

    def __init__(self, root: str | Path, create: bool = True):
        self.root = Path(root)
        self._lock = threading.RLock()
        manifest = self.root / "manifest.json"
        if not manifest.exists():
            if not create:
                raise StoreError(f"no store at {self.root}")
            self.root.mkdir(parents=True, exist_ok=True)
            manifest.write_text(json.dumps(_MANIFEST, indent=2) + "\n")
        else:
            meta = json.loads(manifest.read_text())
            if meta.get("format") != _MANIFEST["format"]:
                raise StoreError(f"{manifest} is not a moodsense store manifest")

        self.participants: dict[str, Participant] = {}
        self.observations: list[Observation] = []
        self.responses: list[MoodResponse] = []
        self.polls: dict[str, Poll] = {}
        self._obs_keys: set = set()
        self._resp_keys: set = set()
        self._files = {}
        for kind in KINDS:
            for rec in self._read_log(kind):
                self._apply(kind, rec, replaying=True)
            self._files[kind] = open(self._log_path(kind), "ab")

    def close(self) -> None:
        for f in self._files.values():
            f.close()
        self._files = {}

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _log_path(self, kind: str) -> Path:
        return self.root / f"{kind}.log"

    def _read_log(self, kind: str):
        path = self._log_path(kind)
        if not path.exists():
            return
        data = path.read_bytes()
        end = data.rfind(b"\n") + 1
        if end != len(data):
            # torn trailing write: drop it so the next append starts clean
            log.warning("%s: truncating %d torn trailing bytes", path, len(data) - end)
            with open(path, "r+b") as f:
                f.truncate(end)
            data = data[:end]
        for lineno, line in enumerate(data.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise StoreError(f"{path}:{lineno}: corrupt record: {exc}") from exc

    def _append(self, kind: str, rec: dict) -> None:
        line = json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
        f = self._files[kind]
        f.write(line.encode("utf-8"))
        f.flush()

    def _apply(self, kind: str, rec: dict, replaying: bool = False):
        """Validate a record against current state and index it."""
        if kind == "participants":
            p = record_to_participant(rec)
            if p.id in self.participants:
                raise StoreError(f"duplicate participant id {p.id!r}")
            self.participants[p.id] = p
            return p
        if kind == "observations":
            o = record_to_observation(rec)
            key = (o.participant_id, o.timestamp)
            if key in self._obs_keys:
                raise StoreError(f"duplicate observation for {key[0]} at {format_ts(key[1])}")
            self._obs_keys.add(key)
            self.observations.append(o)
            return o
        if kind == "responses":
            r = record_to_response(rec)
            key = (r.participant_id, r.timestamp)
            if key in self._resp_keys:
                raise StoreError(f"duplicate response for {key[0]} at {format_ts(key[1])}")
            self._resp_keys.add(key)
            self.responses.append(r)
            return r
        if kind == "polls":
            poll = record_to_poll(rec)
            old = self.polls.get(poll.id)
            if old is None:
                if poll.status != PENDING:
                    raise StoreError(f"poll {poll.id} first event must be pending")
            elif not (old.status == PENDING and poll.status in (ANSWERED, EXPIRED)):
                raise StoreError(
                    f"illegal poll transition {old.status} -> {poll.status} for {poll.id}"
                )
            self.polls[poll.id] = poll
            return poll
        raise StoreError(f"unknown record kind {kind!r}")

    def _put(self, kind: str, rec: dict):
        with self._lock:
            obj = self._apply(kind, rec)
            self._append(kind, rec)
            return obj

    def add_participant(self, p: Participant) -> Participant:
        return self._put("participants", participant_to_record(p))

    def add_observation(self, o: Observation) -> Observation:
        return self._put("observations", observation_to_record(o))

    def add_response(self, r: MoodResponse) -> MoodResponse:
        return self._put("responses", response_to_record(r))

    def put_poll(self, poll: Poll) -> Poll:
        return self._put("polls", poll_to_record(poll))

    def answer_poll(self, poll_id: str, quadrant: str, answered_at: datetime) -> Poll:
        """Answer atomically: the poll event and its mood response append together."""
        with self._lock:
            poll = self.polls.get(poll_id)
            if poll is None:
                raise KeyError(poll_id)
            answered = record_response(poll, quadrant, answered_at)
            self._put("polls", poll_to_record(answered))
            if (answered.response.participant_id, answered.response.timestamp) not in self._resp_keys:
                self.add_response(answered.response)
            return answered

    def snapshot(self):
        """Immutable view for analyses; safe under concurrent appends."""
        with self._lock:
            return (
                dict(self.participants),
                list(self.observations),
                list(self.responses),
                dict(self.polls),
            )


# --- file ingestion and export --------------------------------------------------

@dataclass(frozen=True)
class IngestResult:
    accepted: int
    rejected: tuple  # (line_number, reason)


_CSV_COLUMNS = {
    "observations": OBSERVATION_COLUMNS,
    "participants": PARTICIPANT_COLUMNS,
    "responses": RESPONSE_COLUMNS,
}


def _csv_row_to_record(kind: str, row: dict) -> dict:
    if kind == "observations":
        return {
            "participant_id": row["participant_id"],
            "timestamp": row["timestamp"],
            "bpm": _num(row["bpm"]),
            "light_level": _num(row["light_level"]),
            "acceleration": _num(row["acceleration"]),
            "vmc": _num(row["vmc"]),
            "latitude": _opt_num(row["latitude"]),
            "longitude": _opt_num(row["longitude"]),
            "altitude": _opt_num(row["altitude"]),
        }
    if kind == "participants":
        return {
            "id": row["id"],
            "age": int(row["age"]),
            "gender": row["gender"],
            "weight": _num(row["weight"]),
            "sportiness": int(row["sportiness"]),
            "neuroticism": _opt_num(row["neuroticism"]),
            "extraversion": _opt_num(row["extraversion"]),
            "openness": _opt_num(row["openness"]),
            "agreeableness": _opt_num(row["agreeableness"]),
            "conscientiousness": _opt_num(row["conscientiousness"]),
            "tz": row.get("tz") or "UTC",
        }
    if kind == "responses":
        return {
            "participant_id": row["participant_id"],
            "timestamp": row["timestamp"],
            "happiness": int(row["happiness"]),
            "activation": int(row["activation"]),
            "mood_state": None if row.get("mood_state", "") == "" else int(row["mood_state"]),
        }
    raise SchemaError(f"unknown ingestion kind {kind!r}")


def ingest_file(store: Store, path: str | Path, kind: str) -> IngestResult:
    """Append every valid record of a CSV/JSONL file; reject rows with reasons.

    A malformed header rejects the whole file; a malformed row is skipped
    with a line-numbered diagnostic.
    """
    path = Path(path)
    if kind not in _CSV_COLUMNS:
        raise SchemaError(f"kind must be one of {tuple(_CSV_COLUMNS)}, got {kind!r}")
    records: list[tuple[int, Optional[dict], Optional[str]]] = []
    if path.suffix.lower() == ".jsonl":
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append((lineno, json.loads(line), None))
                except json.JSONDecodeError as exc:
                    records.append((lineno, None, f"invalid JSON: {exc}"))
    else:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            expected = list(_CSV_COLUMNS[kind])
            if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != expected:
                raise SchemaError(
                    f"{path}: header {reader.fieldnames} does not match {expected}"
                )
            for lineno, row in enumerate(reader, start=2):
                try:
                    records.append((lineno, _csv_row_to_record(kind, row), None))
                except (KeyError, ValueError) as exc:
                    records.append((lineno, None, f"unparseable row: {exc}"))

    accepted = 0
    rejected = []
    for lineno, rec, err in records:
        if err is not None:
            rejected.append((lineno, err))
            continue
        try:
            store._put(kind, rec)
            accepted += 1
        except (ValueError, StoreError) as exc:
            rejected.append((lineno, str(exc)))
    for lineno, reason in rejected:
        log.warning("%s:%d rejected: %s", path, lineno, reason)
    return IngestResult(accepted, tuple(rejected))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_observations_csv(path: str | Path, observations: Iterable[Observation]) -> int:
    rows = sorted(observations, key=lambda o: (o.participant_id, o.timestamp))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(OBSERVATION_COLUMNS)
        for o in rows:
            w.writerow(
                [
                    o.participant_id,
                    format_ts(o.timestamp),
                    _fmt(o.bpm),
                    _fmt(o.light_level),
                    _fmt(o.acceleration),
                    _fmt(o.vmc),
                    _fmt(o.latitude),
                    _fmt(o.longitude),
                    _fmt(o.altitude),
                ]
            )
    return len(rows)


def write_participants_csv(path: str | Path, participants: Iterable[Participant]) -> int:
    rows = sorted(participants, key=lambda p: p.id)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(PARTICIPANT_COLUMNS)
        for p in rows:
            w.writerow(
                [
                    p.id,
                    p.age,
                    p.gender,
                    _fmt(p.weight),
                    p.sportiness,
                    _fmt(p.neuroticism),
                    _fmt(p.extraversion),
                    _fmt(p.openness),
                    _fmt(p.agreeableness),
                    _fmt(p.conscientiousness),
                    p.tz,
                ]
            )
    return len(rows)


def write_responses_csv(path: str | Path, responses: Iterable[MoodResponse]) -> int:
    rows = sorted(responses, key=lambda r: (r.participant_id, r.timestamp))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(RESPONSE_COLUMNS)
        for r in rows:
            w.writerow(
                [r.participant_id, format_ts(r.timestamp), r.happiness, r.activation, r.mood_state]
            )
    return len(rows)
