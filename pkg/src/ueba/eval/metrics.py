"""Detection curves, per-feature residual explanations and positive-rate summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..features import EMBEDDING_COLUMNS, NUMERIC_FEATURES

LOG_EPS = 1e-12
EMBEDDING_GROUP = "process_embedding"

FEATURE_GROUPS = {
    "process": ("num_new_process", "events_4100", "events_4104"),
    "login_antivirus": (
        "num_logins",
        "avg_sec_bet_logins",
        "num_f_logins",
        "avg_sec_bet_f_logins",
        "num_antivirus_alerts",
        "num_firewall_alerts",
        "workstation_count",
    ),
    "sent_email": ("sent_emails", "sent_emails_size", "sent_email_files", "sent_email_links"),
    "received_email": (
        "received_emails",
        "incident_emails",
        "received_emails_size",
        "received_email_files",
        "received_email_links",
    ),
}


def feature_group(name: str) -> str:
    for group, members in FEATURE_GROUPS.items():
        if name in members:
            return group
    if name in EMBEDDING_COLUMNS or name == EMBEDDING_GROUP:
        return EMBEDDING_GROUP
    raise KeyError(name)


@dataclass
class DetectionCurve:
    type: str
    lam: np.ndarray
    rate: np.ndarray
    n: np.ndarray

    def mean_rate(self, lo: float = 0.0, hi: float = 1.0, open_low: bool = False) -> float:
        """Mean detection rate over grid points in ``[lo, hi]`` (``(lo, hi]`` with ``open_low``)."""
        keep = (self.lam > lo + 1e-9 if open_low else self.lam >= lo - 1e-9) & (self.lam <= hi + 1e-9)
        if not keep.any():
            raise ValueError(f"no grid points in [{lo}, {hi}]")
        return float(self.rate[keep].mean())

    def at(self, lam: float) -> float:
        idx = np.flatnonzero(np.isclose(self.lam, lam, atol=1e-9))
        if idx.size == 0:
            raise KeyError(lam)
        return float(self.rate[idx[0]])


def detection_curve(model, stress) -> dict[str, DetectionCurve]:
    """Fraction of rows with ``s >= tau`` per anomaly type and intensity."""
    n = len(stress.X)
    if n == 0 or not (len(stress.type) == len(stress.lam) == n):
        raise ValueError("stress set rows and labels do not line up")
    flagged = model.decisions(model.scores(stress.X))
    lam_key = np.round(np.asarray(stress.lam, dtype=np.float64), 9)
    curves = {}
    for t in sorted(set(stress.type.tolist())):
        rows = stress.type == t
        grid = np.unique(lam_key[rows])
        counts = np.array([np.sum(rows & (lam_key == g)) for g in grid])
        hits = np.array([np.sum(flagged[rows & (lam_key == g)]) for g in grid])
        curves[t] = DetectionCurve(t, grid, hits / counts, counts)
    return curves


@dataclass
class FeatureErrorReport:
    mean_abs: np.ndarray  # per input coordinate
    n_rows: int

    @property
    def log_error(self) -> np.ndarray:
        return np.log(self.mean_abs + LOG_EPS)

    @property
    def embedding_mean(self) -> float:
        return float(self.mean_abs[len(NUMERIC_FEATURES) :].mean())

    def named(self) -> dict[str, float]:
        """The 19 named features plus the embedding group mean."""
        out = dict(zip(NUMERIC_FEATURES, map(float, self.mean_abs[: len(NUMERIC_FEATURES)])))
        out[EMBEDDING_GROUP] = self.embedding_mean
        return out

    def top_named(self) -> str:
        """Named feature with the largest mean |residual| (embedding excluded)."""
        return NUMERIC_FEATURES[int(np.argmax(self.mean_abs[: len(NUMERIC_FEATURES)]))]


def per_feature_error(model, rows) -> FeatureErrorReport:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[0] == 0:
        raise ValueError("no rows to explain")
    R = np.abs(model.residuals(rows))
    return FeatureErrorReport(R.mean(axis=0), rows.shape[0])


def positive_rate_summary(model, datasets: Mapping[str, np.ndarray]) -> dict:
    out = {"threshold": float(model.threshold), "sets": {}}
    for name, X in datasets.items():
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        flagged = model.decisions(model.scores(X))
        out["sets"][name] = {"n": int(X.shape[0]), "positive_rate": float(flagged.mean()) if len(X) else 0.0}
    return out
