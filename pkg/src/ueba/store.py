"""Directory-based model store with content hashes.

Layout::

    MANIFEST.json            role, threshold, architecture, config snapshot, sha256 per file
    encoder.json/.bin        layer dims + activation tags, flat little-endian float64 params
    decoder.json/.bin
    scaler.json
    doc2vec.json, doc2vec_docs.bin, doc2vec_words.bin, doc2vec_vocab.txt
    reference.json           unscaled typical window used to materialise templates
    train_report.json

A store is written into a sibling temp directory and renamed into place,
so readers never see a half-written store. Nothing time-dependent is
recorded, so identical inputs give byte-identical stores.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import AutoencoderModel, AutoencoderSpec
from .doc2vec import Doc2VecModel, load_model, save_model
from .errors import DimensionError, StoreError
from .features import INPUT_DIM, NUMERIC_FEATURES, ScalerParams
from .nn_core import dumps_manifest, net_from_bytes, net_to_bytes

MANIFEST = "MANIFEST.json"
FORMAT_VERSION = 1


@dataclass
class StoreEntry:
    model: AutoencoderModel
    doc2vec: Doc2VecModel
    role: str
    config: dict = field(default_factory=dict)
    reference: np.ndarray | None = None
    report: dict = field(default_factory=dict)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def save_store(entry: StoreEntry, path) -> Path:
    model = entry.model
    if model.threshold is None or model.scaler is None:
        raise StoreError("only calibrated models with a scaler can be stored")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}-", dir=path.parent))
    try:
        (tmp / "encoder.json").write_text(dumps_manifest(model.encoder) + "\n")
        (tmp / "encoder.bin").write_bytes(net_to_bytes(model.encoder))
        (tmp / "decoder.json").write_text(dumps_manifest(model.decoder) + "\n")
        (tmp / "decoder.bin").write_bytes(net_to_bytes(model.decoder))
        (tmp / "scaler.json").write_text(model.scaler.dumps() + "\n")
        save_model(entry.doc2vec, tmp)
        ref = None if entry.reference is None else [float(v) for v in entry.reference]
        (tmp / "reference.json").write_text(_dump({"typical_window": ref}))
        (tmp / "train_report.json").write_text(_dump(entry.report))
        files = {p.name: _sha256(p) for p in sorted(tmp.iterdir())}
        manifest = {
            "format": FORMAT_VERSION,
            "package_version": __version__,
            "role": entry.role,
            "threshold": float(model.threshold),
            "spec": {
                "input_dim": model.spec.input_dim,
                "hidden": list(model.spec.hidden),
                "latent_dim": model.spec.latent_dim,
            },
            "metadata": model.metadata,
            "config": entry.config,
            "files": files,
        }
        (tmp / MANIFEST).write_text(_dump(manifest))
        if path.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{path.name}-old-", dir=path.parent))
            os.replace(path, old / "store")
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        return json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise StoreError(f"no model store at {path}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise StoreError(f"corrupt manifest in {path}", path=str(path)) from exc


def verify_hashes(path) -> dict:
    """Raise :class:`StoreError` unless every listed file exists and matches its hash."""
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("format") != FORMAT_VERSION:
        raise StoreError(f"unsupported store format {manifest.get('format')!r}", path=str(path))
    for name, digest in manifest["files"].items():
        f = path / name
        if not f.is_file():
            raise StoreError(f"store file {name} is missing", path=str(path), file=name)
        actual = _sha256(f)
        if actual != digest:
            raise StoreError(f"hash mismatch for {name}", path=str(path), file=name, expected=digest, actual=actual)
    return manifest


def load_store(path, verify: bool = True) -> StoreEntry:
    path = Path(path)
    manifest = verify_hashes(path) if verify else read_manifest(path)
    try:
        enc = net_from_bytes((path / "encoder.bin").read_bytes(), json.loads((path / "encoder.json").read_text()))
        dec = net_from_bytes((path / "decoder.bin").read_bytes(), json.loads((path / "decoder.json").read_text()))
        scaler = ScalerParams.from_dict(json.loads((path / "scaler.json").read_text()))
        d2v = load_model(path)
        ref = json.loads((path / "reference.json").read_text())["typical_window"]
        report = json.loads((path / "train_report.json").read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise StoreError(f"cannot load store {path}: {exc}", path=str(path)) from exc
    s = manifest["spec"]
    spec = AutoencoderSpec(s["input_dim"], tuple(s["hidden"]), s["latent_dim"])
    if enc.dims != spec.encoder_dims or dec.dims != spec.decoder_dims:
        raise DimensionError("stored networks do not match the stored architecture", path=str(path))
    model = AutoencoderModel(enc, dec, spec, scaler, manifest["threshold"], dict(manifest.get("metadata", {})))
    return StoreEntry(
        model,
        d2v,
        manifest["role"],
        manifest.get("config", {}),
        None if ref is None else np.asarray(ref, dtype=np.float64),
        report,
    )


def self_check(path) -> dict:
    """Integrity plus invariant checks used by ``ueba verify``."""
    manifest = verify_hashes(path)
    entry = load_store(path, verify=False)
    model = entry.model
    checks = {"hashes": True}
    checks["undercomplete"] = model.spec.latent_dim < model.spec.input_dim
    checks["threshold_finite"] = bool(np.isfinite(model.threshold) and model.threshold >= 0)
    checks["scaler_width"] = model.scaler.median.size == INPUT_DIM == model.spec.input_dim
    checks["embedding_width"] = entry.doc2vec.dim == INPUT_DIM - len(NUMERIC_FEATURES)
    probe = np.full((1, model.spec.input_dim), 0.5)
    s = model.scores(probe)
    checks["score_finite"] = bool(np.all(np.isfinite(s)))
    checks["decision_rule"] = bool(model.decisions(np.array([model.threshold]))[0])
    return {"store": str(path), "role": manifest["role"], "threshold": manifest["threshold"], "checks": checks}
