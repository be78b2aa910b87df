"""Event ingestion, per-user window aggregation and feature scaling."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import NonFiniteError, SchemaError

DEFAULT_WINDOW = 3600
EMBEDDING_DIM = 64
IQR_EPS = 1e-9


class EventKind(str, Enum):
    PROCESS_START = "process_start"
    LOGIN_OK = "login_ok"
    LOGIN_FAIL = "login_fail"
    ANTIVIRUS_ALERT = "antivirus_alert"
    FIREWALL_ALERT = "firewall_alert"
    EMAIL_SENT = "email_sent"
    EMAIL_RECEIVED = "email_received"
    EMAIL_INCIDENT = "email_incident"
    PS_4100 = "ps_4100"
    PS_4104 = "ps_4104"


class Role(str, Enum):
    CM = "CM"
    EP = "EP"


NUMERIC_FEATURES = (
    "num_new_process",
    "num_logins",
    "avg_sec_bet_logins",
    "num_f_logins",
    "avg_sec_bet_f_logins",
    "num_antivirus_alerts",
    "num_firewall_alerts",
    "sent_emails",
    "received_emails",
    "incident_emails",
    "sent_emails_size",
    "received_emails_size",
    "sent_email_files",
    "received_email_files",
    "sent_email_links",
    "received_email_links",
    "events_4100",
    "events_4104",
    "workstation_count",
)
EMBEDDING_COLUMNS = tuple(f"e{i}" for i in range(EMBEDDING_DIM))
INPUT_COLUMNS = NUMERIC_FEATURES + EMBEDDING_COLUMNS
INPUT_DIM = len(INPUT_COLUMNS)  # 83
KEY_COLUMNS = ("user", "role", "window_start", "duration")

_COUNTERS = {
    EventKind.PROCESS_START: "num_new_process",
    EventKind.LOGIN_OK: "num_logins",
    EventKind.LOGIN_FAIL: "num_f_logins",
    EventKind.ANTIVIRUS_ALERT: "num_antivirus_alerts",
    EventKind.FIREWALL_ALERT: "num_firewall_alerts",
    EventKind.EMAIL_SENT: "sent_emails",
    EventKind.EMAIL_RECEIVED: "received_emails",
    EventKind.EMAIL_INCIDENT: "incident_emails",
    EventKind.PS_4100: "events_4100",
    EventKind.PS_4104: "events_4104",
}
_EMAIL_PAYLOAD = {
    EventKind.EMAIL_SENT: ("sent_emails_size", "sent_email_files", "sent_email_links"),
    EventKind.EMAIL_RECEIVED: ("received_emails_size", "received_email_files", "received_email_links"),
}


@dataclass(frozen=True)
class RawEvent:
    time: float  # UTC epoch seconds
    user: str
    workstation: str
    kind: EventKind
    payload: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if not math.isfinite(self.time):
            raise SchemaError("event time must be finite")
        if not self.user:
            raise SchemaError("event user must be non-empty")
        for key, value in self.payload.items():
            if isinstance(value, (int, float)) and value < 0:
                raise SchemaError(f"payload field {key!r} is negative", field=key)

    def sort_key(self):
        return (self.time, self.user, self.kind.value, self.workstation, json.dumps(dict(self.payload), sort_keys=True))

    def to_json(self) -> str:
        stamp = datetime.fromtimestamp(self.time, tz=timezone.utc).isoformat()
        return json.dumps(
            {
                "time": stamp,
                "user": self.user,
                "workstation": self.workstation,
                "kind": self.kind.value,
                "payload": dict(self.payload),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "RawEvent":
        try:
            obj = json.loads(line)
            stamp = datetime.fromisoformat(obj["time"])
            if stamp.tzinfo is None:
                stamp = stamp.replace(tzinfo=timezone.utc)
            return cls(
                time=stamp.timestamp(),
                user=obj["user"],
                workstation=obj.get("workstation", ""),
                kind=obj["kind"],
                payload=obj.get("payload") or {},
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"malformed event line: {exc}") from exc


def write_events(events: Iterable[RawEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json() + "\n")


def read_events(path) -> list[RawEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(RawEvent.from_json(line))
            except SchemaError as exc:
                exc.context.update(file=str(path), line=lineno)
                raise
    return events


@dataclass(frozen=True)
class WindowKey:
    user: str
    role: Role
    start: int
    duration: int


@dataclass(frozen=True)
class FeatureRecord:
    key: WindowKey
    values: tuple[float, ...]  # ordered as NUMERIC_FEATURES
    process_list: tuple[str, ...]

    def __getitem__(self, name: str) -> float:
        return self.values[NUMERIC_FEATURES.index(name)]

    def as_dict(self) -> dict:
        return dict(zip(NUMERIC_FEATURES, self.values))


def _mean_gap(times: list[float], duration: int) -> float:
    if len(times) < 2:
        return float(duration)
    return float(np.mean(np.diff(sorted(times))))


def aggregate(
    events: Iterable[RawEvent],
    duration: int = DEFAULT_WINDOW,
    role_map: Mapping[str, str] | None = None,
    default_role: str | None = None,
    on_unmapped: str = "skip",
) -> list[FeatureRecord]:
    """Fold events into per-user fixed windows.

    Every window between a user's first and last active window is emitted,
    including empty ones. Counts default to 0; mean inter-login gaps with
    fewer than two logins default to ``duration``. Records are sorted by
    ``(user, window_start)``.
    """
    if duration <= 0:
        raise ValueError("window duration must be positive")
    if on_unmapped not in ("skip", "fail"):
        raise ValueError("on_unmapped must be 'skip' or 'fail'")
    role_map = role_map or {}

    buckets: dict[str, dict[int, list[RawEvent]]] = defaultdict(lambda: defaultdict(list))
    for event in events:
        role = role_map.get(event.user, default_role)
        if role is None:
            if on_unmapped == "fail":
                raise SchemaError(f"user {event.user!r} has no role", user=event.user)
            continue
        start = int(math.floor(event.time / duration) * duration)
        buckets[event.user][start].append(event)

    records = []
    for user in sorted(buckets):
        role = Role(role_map.get(user, default_role))
        windows = buckets[user]
        first, last = min(windows), max(windows)
        for start in range(first, last + duration, duration):
            evs = sorted(windows.get(start, ()), key=RawEvent.sort_key)
            records.append(_summarise(WindowKey(user, role, start, duration), evs))
    return records


def _summarise(key: WindowKey, events: list[RawEvent]) -> FeatureRecord:
    feats = dict.fromkeys(NUMERIC_FEATURES, 0.0)
    logins, fails, procs, stations = [], [], [], set()
    for ev in events:
        feats[_COUNTERS[ev.kind]] += 1
        if ev.workstation:
            stations.add(ev.workstation)
        if ev.kind is EventKind.LOGIN_OK:
            logins.append(ev.time)
        elif ev.kind is EventKind.LOGIN_FAIL:
            fails.append(ev.time)
        elif ev.kind is EventKind.PROCESS_START:
            path = str(ev.payload.get("path", "")).strip().lower()
            if path:
                procs.append(path)
        elif ev.kind in _EMAIL_PAYLOAD:
            size_f, files_f, links_f = _EMAIL_PAYLOAD[ev.kind]
            feats[size_f] += float(ev.payload.get("size", 0))
            feats[files_f] += float(ev.payload.get("attachments", 0))
            feats[links_f] += float(ev.payload.get("links", 0))
    feats["avg_sec_bet_logins"] = _mean_gap(logins, key.duration)
    feats["avg_sec_bet_f_logins"] = _mean_gap(fails, key.duration)
    feats["workstation_count"] = float(len(stations))
    return FeatureRecord(key, tuple(feats[n] for n in NUMERIC_FEATURES), tuple(procs))


def numeric_matrix(records: list[FeatureRecord]) -> np.ndarray:
    if not records:
        return np.zeros((0, len(NUMERIC_FEATURES)))
    return np.array([r.values for r in records], dtype=np.float64)


# ---------------------------------------------------------------------------
# CSV i/o; process lists are stored as a JSON array so paths may contain anything


def write_features(records: list[FeatureRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KEY_COLUMNS + NUMERIC_FEATURES + ("process_list",))
        for r in records:
            writer.writerow(
                [r.key.user, r.key.role.value, r.key.start, r.key.duration]
                + [repr(float(v)) for v in r.values]
                + [json.dumps(list(r.process_list))]
            )


def read_features(path) -> list[FeatureRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(KEY_COLUMNS + NUMERIC_FEATURES + ("process_list",)) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"feature CSV lacks columns {sorted(missing)}", file=str(path))
        out = []
        for row in reader:
            key = WindowKey(row["user"], Role(row["role"]), int(row["window_start"]), int(row["duration"]))
            out.append(
                FeatureRecord(
                    key,
                    tuple(float(row[n]) for n in NUMERIC_FEATURES),
                    tuple(json.loads(row["process_list"])),
                )
            )
    return out


def write_input_matrix(keys: list[WindowKey], X: np.ndarray, path) -> None:
    """Model-input CSV: key columns, then the 83 columns in INPUT_COLUMNS order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KEY_COLUMNS + INPUT_COLUMNS)
        for key, row in zip(keys, X):
            writer.writerow([key.user, key.role.value, key.start, key.duration] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# robust + min-max scaling


@dataclass(frozen=True)
class ScalerParams:
    median: np.ndarray
    iqr: np.ndarray
    min: np.ndarray  # of the robust-scaled training data
    max: np.ndarray

    @property
    def divisor(self) -> np.ndarray:
        return np.maximum(self.iqr, IQR_EPS)

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in ("median", "iqr", "min", "max")}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ScalerParams":
        return cls(*(np.asarray(obj[k], dtype=np.float64) for k in ("median", "iqr", "min", "max")))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_scaler(X) -> ScalerParams:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("fit_scaler needs a matrix with at least two rows")
    if not np.all(np.isfinite(X)):
        bad = int(np.argwhere(~np.isfinite(X))[0][0])
        raise NonFiniteError("non-finite value in scaler training data", row=bad)
    q25, median, q75 = np.percentile(X, [25, 50, 75], axis=0)
    iqr = q75 - q25
    u = (X - median) / np.maximum(iqr, IQR_EPS)
    return ScalerParams(median, iqr, u.min(axis=0), u.max(axis=0))


def apply_scaler(params: ScalerParams, X) -> np.ndarray:
    """Robust then min-max transform. Not clamped: unseen inputs may leave [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    u = (X - params.median) / params.divisor
    span = params.max - params.min
    ok = span > 0
    out = np.full_like(u, 0.5)
    out[..., ok] = (u[..., ok] - params.min[ok]) / span[ok]
    return out


def invert_scaler(params: ScalerParams, X) -> np.ndarray:
    """Inverse of :func:`apply_scaler` on non-degenerate coordinates (degenerate ones map to the median)."""
    X = np.asarray(X, dtype=np.float64)
    span = params.max - params.min
    u = np.where(span > 0, X * span + params.min, 0.0)
    return np.where(span > 0, u * params.divisor + params.median, params.median)


def save_scaler(params: ScalerParams, path) -> None:
    Path(path).write_text(params.dumps())


def load_scaler(path) -> ScalerParams:
    return ScalerParams.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# text embedding


def attach_embedding(record: FeatureRecord, model) -> tuple[np.ndarray, bool]:
    """``[19 numerics ; 64-dim process embedding]`` and whether the embedding is degenerate."""
    X, degenerate = embed_records([record], model)
    return X[0], bool(degenerate[0])


def embed_records(records: list[FeatureRecord], model) -> tuple[np.ndarray, np.ndarray]:
    """Unscaled 83-column input matrix for ``records`` plus a degenerate-embedding mask."""
    from .doc2vec import infer_vectors

    vecs, degenerate = infer_vectors(model, [r.process_list for r in records])
    return np.hstack([numeric_matrix(records), vecs]), degenerate
