"""End-to-end stages shared by the CLI and the acceptance tests.

Every stage takes its randomness from ``child_seed(config.seed, stage)``;
the ``seed`` fields inside the nested component configs are ignored, so
a single global seed reproduces any stage on its own.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autoencoder import ROLE_TRAIN_DEFAULTS, AutoencoderSpec, TrainConfig, build, train
from .doc2vec import Doc2VecParams, train_dbow
from .errors import ConfigError
from .eval import detection_curve, per_feature_error, positive_rate_summary, tsne
from .eval.metrics import EMBEDDING_GROUP
from .eval.tsne import TsneConfig
from .features import (
    DEFAULT_WINDOW,
    NUMERIC_FEATURES,
    FeatureRecord,
    Role,
    aggregate,
    apply_scaler,
    embed_records,
    fit_scaler,
)
from .seeds import MAX_SEED, child_seed
from .store import StoreEntry
from .synth import (
    DEFAULT_START,
    RoleProfile,
    StressSet,
    TemplateSpec,
    build_test_set,
    default_profile,
    default_template_specs,
    generate_logs,
    intensity_grid,
    materialize_templates,
    typical_window,
)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    role: str = "CM"
    seed: int = 0
    window: int = DEFAULT_WINDOW
    num_users: int = 20
    num_days: int = 28
    start: int = DEFAULT_START
    profile: RoleProfile | None = None  # None: the role's default profile
    doc2vec: Doc2VecParams = field(default_factory=Doc2VecParams)
    train: TrainConfig | None = None  # None: role defaults for learning rate and batch size
    tsne: TsneConfig = field(default_factory=TsneConfig)
    templates: list[TemplateSpec] | None = None
    grid_steps: int = 100
    resample_normal: bool = True
    diagnose_points: int = 600

    def __post_init__(self):
        self.role = self.role.upper()
        if self.role not in {r.value for r in Role}:
            raise ConfigError(f"unknown role {self.role!r}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.window <= 0 or self.num_users < 1 or self.num_days < 1:
            raise ConfigError("window, num_users and num_days must be positive")

    def stage_seed(self, stage: str) -> int:
        return child_seed(self.seed, stage)

    def role_profile(self) -> RoleProfile:
        return self.profile if self.profile is not None else default_profile(self.role)

    def train_config(self) -> TrainConfig:
        base = self.train if self.train is not None else TrainConfig(**ROLE_TRAIN_DEFAULTS[self.role])
        return replace(base, seed=self.stage_seed("train"))

    def doc2vec_params(self) -> Doc2VecParams:
        return replace(self.doc2vec, seed=self.stage_seed("doc2vec"))

    def template_specs(self) -> list[TemplateSpec]:
        return list(self.templates) if self.templates is not None else default_template_specs()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["templates"] = None if self.templates is None else [t.to_dict() for t in self.templates]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        obj = dict(obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if obj.get("profile") is not None:
                obj["profile"] = RoleProfile.from_dict(obj["profile"])
            if "doc2vec" in obj:
                obj["doc2vec"] = Doc2VecParams(**obj["doc2vec"])
            if obj.get("train") is not None:
                obj["train"] = TrainConfig(**obj["train"])
            if "tsne" in obj:
                obj["tsne"] = TsneConfig(**obj["tsne"])
            if obj.get("templates") is not None:
                obj["templates"] = [TemplateSpec(**t) for t in obj["templates"]]
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", path=str(path)) from exc


# ---------------------------------------------------------------------------
# stages


def synthesize(cfg: PipelineConfig, start: int | None = None):
    return generate_logs(
        cfg.role_profile(),
        cfg.num_users,
        cfg.num_days,
        cfg.stage_seed("synth"),
        start=cfg.start if start is None else start,
        window=cfg.window,
    )


def featurize(events, cfg: PipelineConfig) -> list[FeatureRecord]:
    return aggregate(events, cfg.window, default_role=cfg.role)


def fit(records: Sequence[FeatureRecord], cfg: PipelineConfig) -> StoreEntry:
    """Doc2Vec on process lists, embed, scale, train the autoencoder and calibrate tau."""
    if len(records) < 10:
        raise ConfigError(f"need at least 10 windows to train, got {len(records)}")
    d2v = train_dbow([list(r.process_list) for r in records], cfg.doc2vec_params())
    X_raw, degenerate = embed_records(list(records), d2v)
    scaler = fit_scaler(X_raw)
    X = apply_scaler(scaler, X_raw)
    model = build(AutoencoderSpec(), seed=cfg.stage_seed("init"))
    model.scaler = scaler
    model.metadata["role"] = cfg.role
    rep = train(model, X, cfg.train_config())
    log.info("trained on %d windows: best epoch %d, tau %.6g", len(records), rep.best_epoch, rep.threshold)
    report = rep.to_dict()
    report["n_windows"] = len(records)
    report["degenerate_embeddings"] = int(degenerate.sum())
    report["val_index"] = rep.val_index.tolist()
    return StoreEntry(model, d2v, cfg.role, cfg.to_dict(), typical_window(X_raw), report)


def model_inputs(records: Sequence[FeatureRecord], entry: StoreEntry) -> tuple[np.ndarray, np.ndarray]:
    """Scaled 83-dim rows and the degenerate-embedding mask."""
    X_raw, degenerate = embed_records(list(records), entry.doc2vec)
    return apply_scaler(entry.model.scaler, X_raw), degenerate


def score_rows(records: Sequence[FeatureRecord], entry: StoreEntry, top: int = 3) -> list[dict]:
    """One JSON-ready score report per window."""
    if not records:
        return []
    model = entry.model
    X, degenerate = model_inputs(records, entry)
    R = X - model.reconstruct(X)
    scores = np.abs(R).sum(axis=1)
    flags = model.decisions(scores)
    n_num = len(NUMERIC_FEATURES)
    out = []
    for rec, r, s, flag, deg in zip(records, R, scores, flags, degenerate):
        named = {name: float(v) for name, v in zip(NUMERIC_FEATURES, r[:n_num])}
        named[EMBEDDING_GROUP] = float(np.abs(r[n_num:]).sum())
        ranked = sorted(named, key=lambda k: (-abs(named[k]), k))[:top]
        out.append(
            {
                "user": rec.key.user,
                "role": rec.key.role,
                "window_start": rec.key.start,
                "duration": rec.key.duration,
                "score": float(s),
                "threshold": float(model.threshold),
                "decision": "anomaly" if flag else "normal",
                "degenerate_embedding": bool(deg),
                "top_features": ranked,
                "residual": named,
            }
        )
    return out


@dataclass
class StressResult:
    stress: StressSet
    curves: dict
    explanations: dict  # anomaly type -> FeatureErrorReport at lambda = 1


def stress_test(entry: StoreEntry, normals: np.ndarray, cfg: PipelineConfig) -> StressResult:
    if entry.reference is None:
        raise ConfigError("store has no reference window for materialising templates")
    templates = materialize_templates(cfg.template_specs(), entry.reference, entry.model.scaler, entry.doc2vec)
    ts = build_test_set(
        normals,
        templates,
        intensity_grid(cfg.grid_steps),
        seed=cfg.stage_seed("stress"),
        resample_normal=cfg.resample_normal,
    )
    curves = detection_curve(entry.model, ts)
    full = np.isclose(ts.lam, 1.0)
    explanations = {t: per_feature_error(entry.model, ts.X[full & (ts.type == t)]) for t in sorted(set(ts.type.tolist()))}
    return StressResult(ts, curves, explanations)


@dataclass
class Diagnosis:
    data_map: object
    residual_map: object
    labels: np.ndarray
    feature_errors: dict
    summary: dict


def diagnose(entry: StoreEntry, X: np.ndarray, cfg: PipelineConfig, labels=None) -> Diagnosis:
    """t-SNE of a subsample in data and residual space, per-feature errors and positive rates.

    The maps use distinct rows only: exact duplicates (e.g. many empty
    windows) would make the per-point perplexity unreachable.
    """
    model = entry.model
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(cfg.stage_seed("diagnose"))
    _, first = np.unique(X, axis=0, return_index=True)
    first = np.sort(first)
    n = min(len(first), cfg.diagnose_points)
    pick = np.sort(rng.choice(first, size=n, replace=False))
    sub = X[pick]
    flagged = model.decisions(model.scores(sub))
    labels = np.where(flagged, "anomaly", "normal") if labels is None else np.asarray(labels)[pick]
    tcfg = replace(cfg.tsne, seed=cfg.stage_seed("tsne"))
    if n < 3 * tcfg.perplexity + 1:
        tcfg = replace(tcfg, perplexity=max(1.0, (n - 1) / 3.0 - 1e-6))
    data_map = tsne(sub, tcfg)
    residual_map = tsne(model.residuals(sub), tcfg)
    all_flags = model.decisions(model.scores(X))
    errors = {"all": per_feature_error(model, X)}
    if all_flags.any():
        errors["flagged"] = per_feature_error(model, X[all_flags])
    summary = positive_rate_summary(model, {"input": X})
    return Diagnosis(data_map, residual_map, labels, errors, summary)
