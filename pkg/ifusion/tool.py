"""Public tool interfaces for ifusion. Each returns a JSON-serialisable response dict."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import pandas as pd

from . import events
from .config import RunConfig, load_config
from .data import (
    SPLITS,
    Dataset,
    SyntheticSpec,
    generate_synthetic_dataset,
    generate_synthetic_splits,
    load_feature_archive,
    write_feature_archive,
)
from .evaluation import (
    case_report,
    compare_to_reference,
    compute_metrics,
    evaluate_plan,
    mode_evaluation,
    modes_frame,
    predict_dataset,
    sweep_drop_rates,
    write_frame,
    write_scatter,
    write_sweep,
)
from .event_store import EventStore
from .exceptions import ConfigError
from .missingness import MissingPlan, mode_plan, sample_missing_plan, unknown_vector
from .model import IFusionModel
from .provenance import derive_seed
from .training import load_checkpoint, restore_model, train

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def load_splits(config: RunConfig) -> Dict[str, Dataset]:
    """Synthetic splits from the generator, or archive_dir/{train,valid,test}."""
    if config.data.source == "synthetic":
        return generate_synthetic_splits(config.data.synthetic)
    assert config.data.archive_dir is not None
    root = Path(config.data.archive_dir)
    return {split: load_feature_archive(root / split) for split in SPLITS}


def simulate(
    *,
    n: int,
    drop_rate: float,
    seed: int,
    steps: Tuple[int, int, int],
    intra_ratio: Optional[float] = None,
    out: Optional[PathLike] = None,
    archive_out: Optional[PathLike] = None,
    config: Optional[RunConfig] = None,
) -> Dict[str, Any]:
    """
    Draw a missingness plan (written as JSON to `out`) and optionally write the
    configured synthetic splits as feature archives under `archive_out`.

    config.json goes into the archive root, or next to the plan when only `out` is given.
    """
    cfg = config or load_config()
    config_dir: Optional[Path] = None
    plan = sample_missing_plan(n, steps, drop_rate, seed, intra_ratio=intra_ratio)
    doc = plan.to_dict()
    response: Dict[str, Any] = {
        "n": n,
        "seed": seed,
        "drop_rate": drop_rate,
        "inter_dropped_samples": int(plan.inter_drop.any(axis=1).sum()),
        "mean_integrity": dict(zip(("l", "a", "v"), plan.integrity.mean(axis=0).tolist())),
    }
    if out is not None:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(doc) + "\n", encoding="utf-8")
        response["plan_path"] = str(p)
        config_dir = p.parent
    if archive_out is not None:
        root = Path(archive_out)
        for split, dataset in generate_synthetic_splits(cfg.data.synthetic).items():
            write_feature_archive(dataset, root / split)
        response["archive_dir"] = str(root)
        config_dir = root
    if config_dir is not None:
        cfg.dump(config_dir / "config.json")
        response["config_hash"] = cfg.config_hash
    return response


def load_plan(path: PathLike) -> MissingPlan:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read plan {p}: {e}", details={"path": str(p)}) from e
    return MissingPlan.from_dict(doc)


def train_run(
    config: RunConfig, *, db_path: str = ":memory:", resume: Optional[PathLike] = None
) -> Dict[str, Any]:
    splits = load_splits(config)
    with EventStore(db_path) as store:
        result = train(config, splits, store=store, resume=resume)
    return {
        "run_id": result.run_id,
        "config_hash": config.config_hash,
        "output_dir": config.output_dir,
        "best_checkpoint": str(result.best_path),
        "last_checkpoint": str(result.last_path),
        "best_valid_mae": result.best_metric,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "stopped_early": result.stopped_early,
    }


def _load_for_eval(
    checkpoint: PathLike, archive: Optional[PathLike]
) -> Tuple[RunConfig, IFusionModel, Dataset]:
    ckpt = load_checkpoint(checkpoint)
    config = ckpt.run_config
    model = restore_model(ckpt)
    if archive is not None:
        dataset = load_feature_archive(archive)
    elif config.data.source == "archive":
        assert config.data.archive_dir is not None
        dataset = load_feature_archive(Path(config.data.archive_dir) / "test")
    else:
        dataset = generate_synthetic_dataset(
            SyntheticSpec.from_config(config.data.synthetic), "test"
        )
    if dataset.steps != tuple(ckpt.steps) or tuple(d for _, d in dataset.dims.values()) != tuple(
        ckpt.dims
    ):
        raise ConfigError(
            "dataset shapes do not match the checkpoint",
            error_code="CONFIG_INVALID",
            details={"steps": list(dataset.steps), "checkpoint_steps": ckpt.steps},
        )
    return config, model, dataset


def _record_eval(
    db_path: str, config: RunConfig, command: str, payload: Dict[str, Any]
) -> str:
    with EventStore(db_path) as store:
        run_id = store.create_run(command=command, config_hash=config.config_hash)
        store.append(run_id, events.EVAL_COMPLETED, payload)
        store.set_run_status(run_id, "COMPLETED")
    return run_id


def evaluate(
    checkpoint: PathLike,
    *,
    out: PathLike,
    archive: Optional[PathLike] = None,
    drop_rate: Optional[float] = None,
    mode: Optional[int] = None,
    seed: Optional[int] = None,
    db_path: str = ":memory:",
) -> Dict[str, Any]:
    """
    Score a checkpoint under one drop rate or one retention mode.

    Writes metrics.csv, predictions.csv, scatter_{l,a,v}.csv and config.json into `out`.
    """
    if drop_rate is not None and mode is not None:
        raise ConfigError("drop_rate and mode are mutually exclusive")
    config, model, dataset = _load_for_eval(checkpoint, archive)
    seed = config.training.seed if seed is None else seed
    unknown = unknown_vector(model.dims[0], config.missingness.unknown_fill)
    if mode is not None:
        plan = mode_plan(mode, len(dataset), dataset.steps)
        setting: Dict[str, Any] = {"mode": mode}
    else:
        rate = config.missingness.drop_rate if drop_rate is None else drop_rate
        plan = sample_missing_plan(
            len(dataset),
            dataset.steps,
            rate,
            derive_seed(seed, "eval", f"{rate:.6g}"),
            intra_ratio=config.missingness.intra_ratio,
        )
        setting = {"drop_rate": rate}
    report, preds = evaluate_plan(
        model,
        dataset,
        plan,
        unknown,
        f1=config.evaluation.f1,
        batch_size=config.training.batch_size,
    )
    out_dir = Path(out)
    write_frame(pd.DataFrame([{**setting, **report.to_dict()}]), out_dir / "metrics.csv")
    write_frame(preds.to_frame(), out_dir / "predictions.csv")
    stats = write_scatter(
        preds.integrity_true, preds.integrity_pred, out_dir, plots=config.evaluation.plots
    )
    config.dump(out_dir / "config.json")
    payload = {
        **setting,
        "seed": seed,
        "metrics": report.to_dict(),
        "integrity": {m: asdict(s) for m, s in stats.items()},
    }
    run_id = _record_eval(db_path, config, "eval", payload)
    return {"run_id": run_id, "config_hash": config.config_hash, "out": str(out_dir), **payload}


def sweep(
    checkpoint: PathLike,
    *,
    out: PathLike,
    archive: Optional[PathLike] = None,
    seed: Optional[int] = None,
    db_path: str = ":memory:",
) -> Dict[str, Any]:
    """Drop-rate sweep (sweep.csv, sweep.png) plus the six retention modes (modes.csv)."""
    config, model, dataset = _load_for_eval(checkpoint, archive)
    seed = config.training.seed if seed is None else seed
    unknown = unknown_vector(model.dims[0], config.missingness.unknown_fill)
    batch_size = config.training.batch_size
    result = sweep_drop_rates(
        model,
        dataset,
        seed,
        unknown=unknown,
        intra_ratio=config.missingness.intra_ratio,
        f1=config.evaluation.f1,
        batch_size=batch_size,
    )
    out_dir = Path(out)
    write_sweep(result, out_dir, plots=config.evaluation.plots)
    modes = mode_evaluation(
        model, dataset, unknown=unknown, f1=config.evaluation.f1, batch_size=batch_size
    )
    write_frame(modes_frame(modes), out_dir / "modes.csv")
    config.dump(out_dir / "config.json")
    payload = {
        "seed": seed,
        "sweep": [{"drop_rate": r, **m.to_dict()} for r, m in result.rows],
        "modes": [{"mode": row.mode, **row.report.to_dict()} for row in modes],
    }
    run_id = _record_eval(db_path, config, "sweep", payload)
    return {"run_id": run_id, "config_hash": config.config_hash, "out": str(out_dir), **payload}


def estimate(
    checkpoint: PathLike,
    *,
    out: PathLike,
    archive: Optional[PathLike] = None,
    drop_rate: Optional[float] = None,
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    """
    Integrity scatter: (modality, true, predicted) rows in `out` plus OLS statistics.

    The checkpoint's config goes to config.json next to `out`.
    """
    config, model, dataset = _load_for_eval(checkpoint, archive)
    seed = config.training.seed if seed is None else seed
    rate = config.missingness.drop_rate if drop_rate is None else drop_rate
    plan = sample_missing_plan(
        len(dataset),
        dataset.steps,
        rate,
        derive_seed(seed, "estimate", f"{rate:.6g}"),
        intra_ratio=config.missingness.intra_ratio,
    )
    unknown = unknown_vector(model.dims[0], config.missingness.unknown_fill)
    preds = predict_dataset(model, dataset, plan, unknown, batch_size=config.training.batch_size)
    out_path = Path(out)
    rows = [
        {"modality": m, "true": float(t), "predicted": float(p)}
        for j, m in enumerate(("l", "a", "v"))
        for t, p in zip(preds.integrity_true[:, j], preds.integrity_pred[:, j])
    ]
    write_frame(pd.DataFrame(rows), out_path)
    stats = write_scatter(
        preds.integrity_true,
        preds.integrity_pred,
        out_path.parent,
        prefix=out_path.stem,
        plots=config.evaluation.plots,
    )
    config.dump(out_path.parent / "config.json")
    return {
        "config_hash": config.config_hash,
        "out": str(out_path),
        "drop_rate": rate,
        "integrity": {m: asdict(s) for m, s in stats.items()},
    }


REPORT_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "predictions": ("id", "prediction", "label"),
    "baseline": ("id", "prediction"),
    "metrics": ("mae",),
}


def read_table(path: PathLike, table: str) -> pd.DataFrame:
    """
    Read one report input CSV and check it carries REPORT_COLUMNS[table].

    Raises:
        ConfigError: FILE_NOT_FOUND, TABLE_INVALID (unparseable or no rows) or
            MISSING_COLUMNS (details["missing"] lists them).
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(
            f"{table} file not found: {p}",
            error_code="FILE_NOT_FOUND",
            details={"table": table, "path": str(p)},
        )
    try:
        frame = pd.read_csv(p, dtype={"id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ConfigError(
            f"Cannot parse {table} file {p}: {e}",
            error_code="TABLE_INVALID",
            details={"table": table, "path": str(p)},
        ) from e
    missing = [c for c in REPORT_COLUMNS[table] if c not in frame.columns]
    if missing:
        raise ConfigError(
            f"{table} file {p} lacks columns {missing}",
            error_code="MISSING_COLUMNS",
            details={"table": table, "path": str(p), "missing": missing},
        )
    if frame.empty:
        raise ConfigError(
            f"{table} file {p} has no rows",
            error_code="TABLE_INVALID",
            details={"table": table, "path": str(p)},
        )
    return frame


def report(
    predictions: PathLike,
    *,
    out: PathLike,
    baseline: Optional[PathLike] = None,
    metrics: Optional[PathLike] = None,
    own_tol: float = 0.25,
    base_tol: float = 1.0,
) -> Dict[str, Any]:
    """
    Case filter of our predictions against a baseline CSV (cases.csv), and an optional
    non-gated comparison of a metrics.csv with the published reference (reference.csv).

    Every input is read before anything is written. The resolved inputs and tolerances go
    to config.json in `out`.
    """
    ours = read_table(predictions, "predictions")
    base = read_table(baseline, "baseline") if baseline is not None else None
    row = read_table(metrics, "metrics").iloc[0].to_dict() if metrics is not None else None

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = {
        "predictions": str(predictions),
        "baseline": None if baseline is None else str(baseline),
        "metrics": None if metrics is None else str(metrics),
        "own_tol": own_tol,
        "base_tol": base_tol,
    }
    (out_dir / "config.json").write_text(
        json.dumps(settings, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    response: Dict[str, Any] = {
        "out": str(out_dir),
        "metrics": compute_metrics(ours["prediction"], ours["label"]).to_dict(),
    }
    if base is not None:
        cases = case_report(ours, base, own_tol=own_tol, base_tol=base_tol)
        write_frame(cases, out_dir / "cases.csv")
        response["cases"] = cases["id"].tolist()
    if row is not None:
        table = compare_to_reference({k: row.get(k) for k in row})
        write_frame(table, out_dir / "reference.csv")
        response["reference"] = table.to_dict(orient="records")
    return response
