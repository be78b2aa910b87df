"""``ueba`` command line: synth, featurize, train, score, stress, diagnose, verify.

Every failure is reported as one JSON object on stderr with a nonzero
exit status. ``UEBA_SEED`` and ``UEBA_STORE`` supply defaults for
``--seed`` and ``--store``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, UebaError
from .eval.report import write_detection, write_feature_errors, write_json, write_tsne
from .features import read_events, read_features, write_events, write_features
from .pipeline import PipelineConfig, diagnose, featurize, fit, model_inputs, score_rows, stress_test, synthesize
from .store import load_store, save_store, self_check
from .synth import load_template_specs, save_template_specs, write_stress_set

log = logging.getLogger("ueba")


def _config(args, base: dict | None = None) -> PipelineConfig:
    """Layer --config, --role, --seed/UEBA_SEED and size flags over ``base``."""
    merged = dict(base or {})
    if args.config:
        merged.update(json.loads(json.dumps(PipelineConfig.load(args.config).to_dict())))
    if args.role:
        merged["role"] = args.role.upper()
    seed = args.seed if args.seed is not None else os.environ.get("UEBA_SEED")
    if seed is not None:
        try:
            merged["seed"] = int(seed)
        except ValueError as exc:
            raise ConfigError(f"seed {seed!r} is not an integer") from exc
    for key in ("users", "days"):
        value = getattr(args, key, None)
        if value is not None:
            merged[f"num_{key}"] = value
    return PipelineConfig.from_dict(merged)


def _store(args) -> Path:
    store = args.store or os.environ.get("UEBA_STORE")
    if not store:
        raise ConfigError("no model store given (use --store or UEBA_STORE)")
    return Path(store)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _records(args, cfg):
    if getattr(args, "features", None):
        return read_features(args.features)
    if getattr(args, "events", None):
        return featurize(read_events(args.events), cfg)
    raise ConfigError("give --features or --events")


def cmd_synth(args) -> dict:
    cfg = _config(args)
    out = _out(args)
    events = synthesize(cfg, start=args.start)
    write_events(events, out / "events.jsonl")
    write_json(cfg.role_profile().to_dict(), out / "profile.json")
    save_template_specs(cfg.template_specs(), out / "templates.json")
    return {"events": len(events), "path": str(out / "events.jsonl")}


def cmd_featurize(args) -> dict:
    cfg = _config(args)
    out = _out(args)
    records = featurize(read_events(args.events), cfg)
    write_features(records, out / "features.csv")
    return {"windows": len(records), "path": str(out / "features.csv")}


def cmd_train(args) -> dict:
    cfg = _config(args)
    records = _records(args, cfg)
    entry = fit(records, cfg)
    path = save_store(entry, _store(args))
    rep = entry.report
    return {
        "store": str(path),
        "threshold": entry.model.threshold,
        "best_epoch": rep["best_epoch"],
        "stopped_epoch": rep["stopped_epoch"],
        "windows": rep["n_windows"],
    }


def _store_config(entry, args) -> PipelineConfig:
    """The training config recorded in the store, with CLI overrides on top."""
    cfg = _config(args, entry.config)
    if cfg.role != entry.role:
        raise ConfigError(f"store was trained for role {entry.role}, not {cfg.role}")
    return cfg


def cmd_score(args) -> dict:
    entry = load_store(_store(args))
    cfg = _store_config(entry, args)
    rows = score_rows(_records(args, cfg), entry)
    out = _out(args)
    with open(out / "scores.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    flagged = sum(r["decision"] == "anomaly" for r in rows)
    return {"rows": len(rows), "anomalies": flagged, "positive_rate": flagged / len(rows) if rows else 0.0}


def cmd_stress(args) -> dict:
    entry = load_store(_store(args))
    cfg = _store_config(entry, args)
    if args.templates:
        cfg.templates = load_template_specs(args.templates)
    normals, _ = model_inputs(_records(args, cfg), entry)
    result = stress_test(entry, normals, cfg)
    out = _out(args)
    write_stress_set(result.stress, out / "stress_set.csv")
    write_detection(result.curves, out)
    write_feature_errors(result.explanations, out, stem="explanations")
    summary = {
        t: {
            "low": c.mean_rate(0.0, 0.1),
            "high": c.mean_rate(0.8, 1.0),
            "at_1": c.at(1.0),
            "above_0.2": c.mean_rate(0.2, 1.0, open_low=True),
            "above_0.7": c.mean_rate(0.7, 1.0, open_low=True),
            "top_feature": result.explanations[t].top_named(),
        }
        for t, c in result.curves.items()
    }
    write_json(summary, out / "stress_summary.json")
    return {"rows": len(result.stress), "types": summary}


def cmd_diagnose(args) -> dict:
    entry = load_store(_store(args))
    cfg = _store_config(entry, args)
    X, _ = model_inputs(_records(args, cfg), entry)
    d = diagnose(entry, X, cfg)
    out = _out(args)
    write_tsne(d.data_map.points, d.labels, out, stem="tsne_data")
    write_tsne(d.residual_map.points, d.labels, out, stem="tsne_residual")
    write_feature_errors(d.feature_errors, out)
    summary = dict(d.summary, tsne_kl={"data": d.data_map.kl, "residual": d.residual_map.kl})
    write_json(summary, out / "summary.json")
    return summary


def cmd_verify(args) -> dict:
    report = self_check(_store(args))
    failed = [k for k, ok in report["checks"].items() if not ok]
    if failed:
        raise UebaError(f"store checks failed: {', '.join(failed)}", **report)
    return report


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "score": cmd_score,
    "stress": cmd_stress,
    "diagnose": cmd_diagnose,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="global seed (default: UEBA_SEED or the config)")
    common.add_argument("--role", choices=["cm", "ep", "CM", "EP"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ueba", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic role logs")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--start", type=int, help="first window start, unix seconds")

    p = sub.add_parser("featurize", parents=[common], help="aggregate events into windows")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)

    for name, needs_out in [("train", False), ("score", True), ("stress", True), ("diagnose", True), ("verify", False)]:
        if name == "train":
            p = sub.add_parser(name, parents=[common], help="fit Doc2Vec, scaler, autoencoder and threshold")
        else:
            p = sub.add_parser(name, parents=[common], help=f"{name} against a model store")
        p.add_argument("--store")
        if name != "verify":
            src = p.add_mutually_exclusive_group(required=True)
            src.add_argument("--features")
            src.add_argument("--events")
        if needs_out:
            p.add_argument("--out", required=True)
        if name == "stress":
            p.add_argument("--templates", help="template spec JSON (default: built-in set)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = COMMANDS[args.command](args)
    except UebaError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True, default=str), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "filename", None):
            err["path"] = str(exc.filename)
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=_jsonable))
    return 0


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


if __name__ == "__main__":
    sys.exit(main())
