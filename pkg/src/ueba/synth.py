"""Synthetic role-based activity logs and interpolated anomaly test sets.

The generator stands in for confidential enterprise logs: each user of a
role emits Poisson-distributed events per hourly window, with an
active-hours pattern, a personal preference over the role's process
vocabulary and log-normal email sizes.

Anomaly templates are points in the scaled 83-dim input space: a typical
window with some named features pushed many training ranges beyond the
normal maximum, optionally with the embedding of an unusual process
list. Test rows blend them with normal rows as ``z * (1 - lam) + lam * a``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .features import (
    DEFAULT_WINDOW,
    INPUT_COLUMNS,
    NUMERIC_FEATURES,
    EventKind,
    RawEvent,
    apply_scaler,
)
from .seeds import rng_for

# 2024-01-01T00:00:00Z, a Monday
DEFAULT_START = 1704067200

COMMON_PROCESSES = {
    "c:\\windows\\explorer.exe": 6.0,
    "c:\\windows\\system32\\svchost.exe": 5.0,
    "c:\\windows\\system32\\conhost.exe": 2.0,
    "c:\\windows\\system32\\taskhostw.exe": 2.0,
    "c:\\windows\\system32\\searchprotocolhost.exe": 1.5,
    "c:\\program files\\microsoft office\\root\\office16\\outlook.exe": 4.0,
    "c:\\program files\\google\\chrome\\application\\chrome.exe": 5.0,
    "c:\\program files\\microsoft office\\root\\office16\\excel.exe": 3.0,
    "c:\\program files\\microsoft office\\root\\office16\\winword.exe": 3.0,
    "c:\\program files\\microsoft\\teams\\current\\teams.exe": 3.0,
    "c:\\windows\\system32\\notepad.exe": 0.8,
    "c:\\program files\\adobe\\acrobat dc\\acrobat\\acrobat.exe": 1.2,
    # rare administrative tools that normal users occasionally launch
    "c:\\windows\\system32\\cmd.exe": 0.15,
    "c:\\windows\\system32\\windowspowershell\\v1.0\\powershell.exe": 0.1,
    "c:\\windows\\system32\\certutil.exe": 0.02,
    "c:\\windows\\system32\\rundll32.exe": 0.05,
    "c:\\windows\\system32\\whoami.exe": 0.02,
    "c:\\windows\\system32\\net.exe": 0.04,
}

SUSPICIOUS_PROCESSES = [
    "c:\\windows\\system32\\cmd.exe",
    "c:\\windows\\system32\\windowspowershell\\v1.0\\powershell.exe",
    "c:\\windows\\system32\\certutil.exe",
    "c:\\windows\\system32\\rundll32.exe",
    "c:\\windows\\system32\\whoami.exe",
    "c:\\windows\\system32\\net.exe",
]


@dataclass
class RoleProfile:
    """Per-window event means during active hours, plus payload distributions."""

    role: str
    rates: dict[str, float]
    processes: dict[str, float]
    active_hours: tuple[int, int] = (8, 18)
    weekdays_only: bool = True
    off_hours_factor: float = 0.02
    user_concentration: float = 2.0  # gamma shape of per-user process preference
    burst_shape: float | None = 1.5  # gamma shape of a per-window activity level shared by all kinds
    second_workstation_p: float = 0.05
    sent_size_lognormal: tuple[float, float] = (10.5, 1.0)
    received_size_lognormal: tuple[float, float] = (10.8, 1.1)
    sent_attachments: float = 0.3
    received_attachments: float = 0.5
    sent_links: float = 1.0
    received_links: float = 2.0

    def __post_init__(self):
        unknown = set(self.rates) - {k.value for k in EventKind}
        if unknown:
            raise ConfigError(f"unknown event kinds in profile: {sorted(unknown)}")
        if any(r < 0 for r in self.rates.values()):
            raise ConfigError("event rates must be non-negative")
        if not self.processes or any(w <= 0 for w in self.processes.values()):
            raise ConfigError("process vocabulary must be non-empty with positive weights")
        if self.burst_shape is not None and self.burst_shape <= 0:
            raise ConfigError("burst_shape must be positive")
        if not 0 <= self.off_hours_factor <= 1 or self.user_concentration <= 0:
            raise ConfigError("invalid activity parameters")
        self.active_hours = tuple(self.active_hours)
        self.sent_size_lognormal = tuple(self.sent_size_lognormal)
        self.received_size_lognormal = tuple(self.received_size_lognormal)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RoleProfile":
        return cls(**obj)


def default_profile(role: str) -> RoleProfile:
    role = role.upper()
    if role == "CM":
        return RoleProfile(
            role="CM",
            rates={
                "process_start": 6.0,
                "login_ok": 1.5,
                "login_fail": 0.15,
                "antivirus_alert": 0.02,
                "firewall_alert": 0.1,
                "email_sent": 3.0,
                "email_received": 6.0,
                "email_incident": 0.05,
                "ps_4100": 0.05,
                "ps_4104": 0.1,
            },
            processes=dict(COMMON_PROCESSES, **{"c:\\program files\\crm\\crmclient.exe": 5.0}),
        )
    if role == "EP":
        return RoleProfile(
            role="EP",
            rates={
                "process_start": 4.0,
                "login_ok": 1.0,
                "login_fail": 0.1,
                "antivirus_alert": 0.01,
                "firewall_alert": 0.05,
                "email_sent": 4.0,
                "email_received": 10.0,
                "email_incident": 0.08,
                "ps_4100": 0.02,
                "ps_4104": 0.03,
            },
            processes=dict(COMMON_PROCESSES, **{"c:\\program files\\boardroom\\portal.exe": 3.0}),
            active_hours=(7, 20),
            sent_size_lognormal=(11.0, 1.2),
            received_size_lognormal=(11.2, 1.2),
            sent_attachments=0.6,
            received_attachments=0.8,
        )
    raise ConfigError(f"no default profile for role {role!r}")


def generate_logs(
    profile: RoleProfile,
    num_users: int,
    num_days: int,
    seed: int,
    start: int = DEFAULT_START,
    window: int = DEFAULT_WINDOW,
) -> list[RawEvent]:
    """Events for ``num_users`` users over ``num_days`` days, sorted by time.

    Per user and per window, the count of each kind is Poisson with the
    profile rate (scaled by ``off_hours_factor`` outside active hours) and
    event times are uniform integer seconds inside the window. A user's
    process preference depends only on ``seed`` and the user index, while
    event draws also depend on ``start``: a later period of the same users
    is generated by moving ``start``, and adding users leaves others
    unchanged.
    """
    if num_users < 1 or num_days < 1:
        raise ConfigError("num_users and num_days must be positive")
    kinds = [k for k in EventKind if profile.rates.get(k.value, 0) > 0]
    rates = np.array([profile.rates[k.value] for k in kinds])
    n_windows = num_days * 86400 // window
    starts = start + window * np.arange(n_windows)
    hours = (starts // 3600) % 24
    weekday = ((starts - DEFAULT_START) // 86400) % 7  # 0 = Monday relative to the default origin
    active = (hours >= profile.active_hours[0]) & (hours < profile.active_hours[1])
    if profile.weekdays_only:
        active &= weekday < 5
    mult = np.where(active, 1.0, profile.off_hours_factor)

    tokens = list(profile.processes)
    base_w = np.array([profile.processes[t] for t in tokens])
    events: list[RawEvent] = []
    prefix = profile.role.lower()
    for u in range(num_users):
        rng = rng_for(seed, "user-profile", profile.role, u)
        pref = base_w * rng.gamma(profile.user_concentration, 1.0 / profile.user_concentration, size=len(tokens))
        pref /= pref.sum()
        rng = rng_for(seed, "user-events", profile.role, u, start)
        user = f"{prefix}_user{u:03d}"
        home = f"{profile.role}-WS{u:03d}"
        other = f"{profile.role}-SHARED{u % 4:02d}"
        if not kinds:
            continue
        level = mult
        if profile.burst_shape:
            level = mult * rng.gamma(profile.burst_shape, 1.0 / profile.burst_shape, size=n_windows)
        counts = rng.poisson(level[:, None] * rates[None, :])
        for w_idx, w_start in enumerate(starts):
            row = counts[w_idx]
            total = int(row.sum())
            if total == 0:
                continue
            times = w_start + rng.integers(0, window, size=total)
            stations = np.where(rng.random(total) < profile.second_workstation_p, other, home)
            pos = 0
            for k_idx, kind in enumerate(kinds):
                for _ in range(int(row[k_idx])):
                    payload = _payload(rng, profile, kind, tokens, pref)
                    events.append(RawEvent(float(times[pos]), user, str(stations[pos]), kind, payload))
                    pos += 1
    events.sort(key=RawEvent.sort_key)
    return events


def _payload(rng, profile: RoleProfile, kind: EventKind, tokens, pref) -> dict:
    if kind is EventKind.PROCESS_START:
        return {"path": tokens[int(rng.choice(len(tokens), p=pref))]}
    if kind is EventKind.EMAIL_SENT:
        mu, sigma = profile.sent_size_lognormal
        return {
            "size": int(rng.lognormal(mu, sigma)),
            "attachments": int(rng.poisson(profile.sent_attachments)),
            "links": int(rng.poisson(profile.sent_links)),
        }
    if kind is EventKind.EMAIL_RECEIVED:
        mu, sigma = profile.received_size_lognormal
        return {
            "size": int(rng.lognormal(mu, sigma)),
            "attachments": int(rng.poisson(profile.received_attachments)),
            "links": int(rng.poisson(profile.received_links)),
        }
    return {}


# ---------------------------------------------------------------------------
# anomaly templates


ANOMALY_TYPES = ("login", "antivirus", "email", "process")


@dataclass(frozen=True)
class TemplateSpec:
    """An attack window described by overrides of named features.

    Override values are in scaled units: 0 is the training minimum of the
    feature and 1 its training maximum, so 30 means thirty times the
    normal range above the minimum. An optional process list replaces
    the embedding of the base window.
    """

    id: int
    type: str
    features: Mapping[str, float]
    process_list: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.type not in ANOMALY_TYPES:
            raise ConfigError(f"unknown anomaly type {self.type!r}")
        unknown = set(self.features) - set(NUMERIC_FEATURES)
        if unknown:
            raise ConfigError(f"unknown features in template {self.id}: {sorted(unknown)}")
        if not all(np.isfinite(v) for v in self.features.values()):
            raise ConfigError(f"template {self.id} has non-finite overrides")
        if self.process_list is not None:
            object.__setattr__(self, "process_list", tuple(self.process_list))

    def to_dict(self) -> dict:
        out = {"id": self.id, "type": self.type, "features": dict(self.features)}
        if self.process_list is not None:
            out["process_list"] = list(self.process_list)
        return out


@dataclass(frozen=True)
class AnomalyTemplate:
    id: int
    type: str
    point: np.ndarray  # scaled 83-dim input


_EVERYDAY = [
    "c:\\windows\\explorer.exe",
    "c:\\program files\\google\\chrome\\application\\chrome.exe",
    "c:\\program files\\microsoft office\\root\\office16\\outlook.exe",
]


def _blend(rare: Sequence[str], k: int, common: Sequence[str], m: int) -> tuple[str, ...]:
    return tuple(list(rare) * k + list(common) * m)


def default_template_specs() -> list[TemplateSpec]:
    """Four login, two antivirus, two email and two process attack windows.

    Login and antivirus signatures sit 35-40 training ranges away from the
    base window, email ones about 16. Process ones pair a modest count excess
    with administrative tools mixed into an otherwise ordinary process list.
    """
    return [
        # brute force from one workstation
        TemplateSpec(1, "login", {"num_f_logins": 40, "avg_sec_bet_f_logins": 0.01}),
        # lateral movement across many workstations
        TemplateSpec(2, "login", {"num_logins": 20, "avg_sec_bet_logins": 0.01, "workstation_count": 15}),
        # password spraying with a few successes
        TemplateSpec(3, "login", {"num_f_logins": 25, "num_logins": 8, "workstation_count": 6}),
        TemplateSpec(4, "login", {"num_f_logins": 35, "num_antivirus_alerts": 3}),
        TemplateSpec(5, "antivirus", {"num_antivirus_alerts": 25, "num_firewall_alerts": 15}),
        TemplateSpec(6, "antivirus", {"num_antivirus_alerts": 35, "events_4100": 4}),
        # bulk exfiltration by email
        TemplateSpec(7, "email", {"sent_emails": 4, "sent_emails_size": 7, "sent_email_files": 5}),
        TemplateSpec(8, "email", {"sent_emails": 3, "sent_emails_size": 5, "sent_email_files": 4, "sent_email_links": 4}),
        # scripted tool execution
        TemplateSpec(9, "process", {"num_new_process": 4, "events_4104": 4}, _blend(SUSPICIOUS_PROCESSES, 3, _EVERYDAY, 6)),
        TemplateSpec(10, "process", {"num_new_process": 4, "events_4100": 4}, _blend(SUSPICIOUS_PROCESSES[:4], 3, _EVERYDAY[:2], 6)),
    ]


def typical_window(X_raw) -> np.ndarray:
    """Coordinate-wise median of the unscaled rows that contain at least one event."""
    X_raw = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
    counts = [i for i, name in enumerate(NUMERIC_FEATURES) if not name.startswith("avg_sec") and name != "workstation_count"]
    active = X_raw[:, counts].sum(axis=1) > 0
    return np.median(X_raw[active] if active.any() else X_raw, axis=0)


def save_template_specs(specs: Sequence[TemplateSpec], path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in specs], indent=1, sort_keys=True))


def load_template_specs(path) -> list[TemplateSpec]:
    return [TemplateSpec(**obj) for obj in json.loads(Path(path).read_text())]


def materialize_templates(
    specs: Sequence[TemplateSpec],
    base_raw: np.ndarray,
    scaler,
    doc2vec_model=None,
) -> list[AnomalyTemplate]:
    """Scaled template points: ``base_raw`` scaled, then each template's overrides applied.

    ``base_raw`` is a typical unscaled 83-dim normal window. A spec's
    process list is embedded with ``doc2vec_model`` and scaled in place of
    the base embedding.
    """
    from .doc2vec import infer_vector

    out = []
    n_num = len(NUMERIC_FEATURES)
    for spec in specs:
        raw = np.array(base_raw, dtype=np.float64)
        if spec.process_list is not None:
            if doc2vec_model is None:
                raise ConfigError(f"template {spec.id} needs a doc2vec model for its process list")
            raw[n_num:] = infer_vector(doc2vec_model, spec.process_list)[0]
        point = apply_scaler(scaler, raw)
        for name, value in spec.features.items():
            point[NUMERIC_FEATURES.index(name)] = value
        out.append(AnomalyTemplate(spec.id, spec.type, point))
    return out


# ---------------------------------------------------------------------------
# convex interpolation


def intensity_grid(steps: int = 100) -> np.ndarray:
    """``k / steps`` for k = 1..steps."""
    if steps < 1:
        raise ConfigError("grid needs at least one step")
    return np.arange(1, steps + 1) / steps


def interpolate(z, a, lam: float) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    z = np.asarray(z, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if z.shape != a.shape:
        raise ValueError("z and a differ in shape")
    if lam == 0.0:
        return z.copy()
    if lam == 1.0:
        return a.copy()
    return z * (1.0 - lam) + lam * a


@dataclass
class StressSet:
    X: np.ndarray
    template_id: np.ndarray
    type: np.ndarray
    lam: np.ndarray
    normal_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.X.shape[0]


def build_test_set(
    normals,
    templates: Sequence[AnomalyTemplate],
    grid: Sequence[float] | None = None,
    seed: int = 0,
    resample_normal: bool = True,
) -> StressSet:
    """One row per (template, lambda). ``z`` is redrawn for every row unless ``resample_normal`` is off."""
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    if normals.shape[0] == 0 or normals.size == 0:
        raise ValueError("need at least one normal row")
    grid = intensity_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    rng = np.random.default_rng(seed)
    rows, ids, types, lams, picks = [], [], [], [], []
    for t in templates:
        fixed = int(rng.integers(normals.shape[0]))
        for lam in grid:
            j = int(rng.integers(normals.shape[0])) if resample_normal else fixed
            rows.append(interpolate(normals[j], t.point, float(lam)))
            ids.append(t.id)
            types.append(t.type)
            lams.append(float(lam))
            picks.append(j)
    return StressSet(
        np.array(rows),
        np.array(ids, dtype=np.int64),
        np.array(types),
        np.array(lams),
        np.array(picks, dtype=np.int64),
    )


def write_stress_set(stress: StressSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("template_id", "type", "lambda") + INPUT_COLUMNS)
        for i in range(len(stress)):
            writer.writerow(
                [int(stress.template_id[i]), stress.type[i], f"{stress.lam[i]:.2f}"]
                + [repr(float(v)) for v in stress.X[i]]
            )


def read_stress_set(path) -> StressSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows or not {"template_id", "type", "lambda"} <= set(rows[0]):
        raise ValueError(f"{path} is not a labelled stress set")
    return StressSet(
        np.array([[float(r[c]) for c in INPUT_COLUMNS] for r in rows]),
        np.array([int(r["template_id"]) for r in rows], dtype=np.int64),
        np.array([r["type"] for r in rows]),
        np.array([float(r["lambda"]) for r in rows]),
    )
