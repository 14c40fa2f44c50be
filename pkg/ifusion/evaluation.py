"""
Metric suite, robustness sweeps, retention modes and integrity diagnostics.

Predictions are scored after the model has run; every report here is a pure function
of (model state, dataset, seed) and writes plain CSV plus optional static plots.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from sklearn.linear_model import LinearRegression
from sklearn.metrics import accuracy_score, f1_score

from .config import MODALITIES
from .data import Dataset, batch_iterator
from .exceptions import ConfigError, NonFinitePredictionError, ShapeMismatchError
from .missingness import (
    MODE_RETAINED,
    MissingPlan,
    apply_missingness,
    mode_plan,
    sample_missing_plan,
)
from .model import IFusionModel, to_tensors
from .provenance import derive_seed

logger = logging.getLogger(__name__)

SWEEP_RATES: Tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))

# Published MOSI test results at drop_rate 0.5, for non-gated comparison only.
REFERENCE_MOSI_DROP_0_5: Dict[str, float] = {
    "mae": 1.1595,
    "acc7": 0.3047,
    "acc5": 0.3324,
    "acc2_nonzero": 0.6784,
    "f1_nonzero": 0.6842,
}

METRIC_COLUMNS = ("mae", "acc7", "acc5", "acc2_nonzero", "f1_nonzero")


@dataclass(frozen=True)
class MetricReport:
    """acc2_nonzero and f1_nonzero are None when no label is nonzero."""

    mae: float
    acc7: float
    acc5: float
    acc2_nonzero: Optional[float]
    f1_nonzero: Optional[float]
    n: int
    n_nonzero: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = int(np.count_nonzero(~np.isfinite(values)))
    if bad:
        raise NonFinitePredictionError(what, count=bad)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def bin_scores(scores: np.ndarray, bound: int) -> np.ndarray:
    """Clamp to [-bound, bound], round half away from zero: 2 * bound + 1 classes."""
    arr = np.asarray(scores, dtype=np.float64)
    _check_finite(arr, "scores to bin")
    return round_half_away(np.clip(arr, -bound, bound)).astype(np.int64)


def compute_metrics(
    predictions: Sequence[float], labels: Sequence[float], *, f1: str = "binary"
) -> MetricReport:
    """MAE, Acc-7, Acc-5 and the nonzero-label Acc-2 / F1 pair."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape or p.size == 0:
        raise ShapeMismatchError(
            "predictions and labels must be equal-length and nonempty",
            predictions=p.shape,
            labels=y.shape,
        )
    if f1 not in ("binary", "weighted"):
        raise ConfigError(
            f"f1 must be 'binary' or 'weighted', got {f1!r}", error_code="OUT_OF_RANGE"
        )
    _check_finite(p, "predictions")
    _check_finite(y, "labels")

    nonzero = y != 0
    acc2: Optional[float] = None
    f1_value: Optional[float] = None
    if nonzero.any():
        y_pos = (y[nonzero] > 0).astype(np.int64)
        p_pos = (p[nonzero] > 0).astype(np.int64)
        acc2 = float(accuracy_score(y_pos, p_pos))
        f1_value = float(f1_score(y_pos, p_pos, average=f1, zero_division=0))
    return MetricReport(
        mae=float(np.mean(np.abs(p - y))),
        acc7=float(accuracy_score(bin_scores(y, 3), bin_scores(p, 3))),
        acc5=float(accuracy_score(bin_scores(y, 2), bin_scores(p, 2))),
        acc2_nonzero=acc2,
        f1_nonzero=f1_value,
        n=int(p.size),
        n_nonzero=int(nonzero.sum()),
    )


@dataclass(frozen=True)
class PredictionSet:
    ids: Tuple[str, ...]
    y_hat: np.ndarray
    labels: np.ndarray
    integrity_pred: np.ndarray
    integrity_true: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"id": list(self.ids), "prediction": self.y_hat, "label": self.labels})


def predict_dataset(
    model: IFusionModel,
    dataset: Dataset,
    plan: MissingPlan,
    unknown: np.ndarray,
    *,
    batch_size: int = 64,
) -> PredictionSet:
    """Eval-mode forward over the dataset in order; dominant selection is per batch."""
    if plan.n != len(dataset):
        raise ShapeMismatchError(
            "plan does not cover the dataset", plan=plan.n, dataset=len(dataset)
        )
    dtype = next(model.parameters()).dtype
    y_hat: List[np.ndarray] = []
    integrity: List[np.ndarray] = []
    model.eval()
    with torch.no_grad():
        for batch in batch_iterator(dataset, batch_size, seed=0, shuffle=False):
            corrupted = apply_missingness(batch, plan.take(batch.indices), unknown)
            out = model(to_tensors(corrupted.features, dtype))
            assert out.prediction is not None
            y_hat.append(out.prediction.y_hat.double().numpy())
            integrity.append(out.integrity_raw.double().numpy())
    return PredictionSet(
        ids=dataset.ids,
        y_hat=np.concatenate(y_hat),
        labels=np.asarray(dataset.labels),
        integrity_pred=np.concatenate(integrity),
        integrity_true=plan.integrity,
    )


def evaluate_plan(
    model: IFusionModel,
    dataset: Dataset,
    plan: MissingPlan,
    unknown: np.ndarray,
    *,
    f1: str = "binary",
    batch_size: int = 64,
) -> Tuple[MetricReport, PredictionSet]:
    preds = predict_dataset(model, dataset, plan, unknown, batch_size=batch_size)
    return compute_metrics(preds.y_hat, preds.labels, f1=f1), preds


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[Tuple[float, MetricReport], ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"drop_rate": rate, **report.to_dict()} for rate, report in self.rows]
        )


def sweep_seed(seed: int, rate: float) -> int:
    return derive_seed(seed, "sweep", f"{rate:.1f}")


def sweep_drop_rates(
    model: IFusionModel,
    dataset: Dataset,
    seed: int,
    *,
    unknown: np.ndarray,
    intra_ratio: Optional[float] = None,
    f1: str = "binary",
    batch_size: int = 64,
    rates: Sequence[float] = SWEEP_RATES,
) -> SweepResult:
    """One MissingPlan per rate, each from its own rate-derived sub-seed."""
    rows: List[Tuple[float, MetricReport]] = []
    for rate in rates:
        plan = sample_missing_plan(
            len(dataset), dataset.steps, rate, sweep_seed(seed, rate), intra_ratio=intra_ratio
        )
        report, _ = evaluate_plan(model, dataset, plan, unknown, f1=f1, batch_size=batch_size)
        logger.info("drop_rate=%.1f mae=%.4f", rate, report.mae)
        rows.append((float(rate), report))
    return SweepResult(rows=tuple(rows))


@dataclass(frozen=True)
class ModeRow:
    mode: int
    retained: Tuple[str, ...]
    report: MetricReport


def mode_evaluation(
    model: IFusionModel,
    dataset: Dataset,
    *,
    unknown: np.ndarray,
    f1: str = "binary",
    batch_size: int = 64,
) -> List[ModeRow]:
    rows = []
    for mode in sorted(MODE_RETAINED):
        plan = mode_plan(mode, len(dataset), dataset.steps)
        report, _ = evaluate_plan(model, dataset, plan, unknown, f1=f1, batch_size=batch_size)
        rows.append(ModeRow(mode=mode, retained=MODE_RETAINED[mode], report=report))
    return rows


def modes_frame(rows: Sequence[ModeRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"mode": r.mode, "retained": "".join(r.retained), **r.report.to_dict()}
            for r in rows
        ]
    )


@dataclass(frozen=True)
class ScatterStats:
    """OLS of predicted on true integrity. None when the true column is constant."""

    modality: str
    r2: Optional[float]
    slope: Optional[float]
    intercept: Optional[float]
    n: int


def integrity_scatter_report(
    integrity_true: np.ndarray, integrity_pred: np.ndarray
) -> Dict[str, ScatterStats]:
    t = np.asarray(integrity_true, dtype=np.float64)
    p = np.asarray(integrity_pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 2 or t.shape[1] != 3:
        raise ShapeMismatchError("integrity arrays must both be [N, 3]", true=t.shape, pred=p.shape)
    stats: Dict[str, ScatterStats] = {}
    for j, m in enumerate(MODALITIES):
        x = t[:, j].reshape(-1, 1)
        y = p[:, j]
        if t.shape[0] < 2 or np.ptp(x) == 0.0:
            stats[m] = ScatterStats(modality=m, r2=None, slope=None, intercept=None, n=len(y))
            continue
        fit = LinearRegression().fit(x, y)
        stats[m] = ScatterStats(
            modality=m,
            r2=float(fit.score(x, y)),
            slope=float(fit.coef_[0]),
            intercept=float(fit.intercept_),
            n=len(y),
        )
    return stats


def case_filter(
    ids: Sequence[str],
    pred_ours: Sequence[float],
    pred_base: Sequence[float],
    labels: Sequence[float],
    own_tol: float = 0.25,
    base_tol: float = 1.0,
) -> List[str]:
    """Ids where our error is below own_tol while the baseline's exceeds base_tol."""
    ours = np.asarray(pred_ours, dtype=np.float64)
    base = np.asarray(pred_base, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not (len(ids) == ours.size == base.size == y.size):
        raise ShapeMismatchError(
            "case filter inputs must be aligned",
            ids=len(ids),
            ours=ours.size,
            base=base.size,
            labels=y.size,
        )
    keep = (np.abs(ours - y) < own_tol) & (np.abs(base - y) > base_tol)
    return [ids[i] for i in np.flatnonzero(keep)]


def case_report(
    ours: pd.DataFrame, baseline: pd.DataFrame, *, own_tol: float, base_tol: float
) -> pd.DataFrame:
    """
    Join our predictions (id, prediction, label) with a baseline (id, prediction) on id
    and keep the rows case_filter selects.
    """
    for name, frame, cols in (
        ("ours", ours, {"id", "prediction", "label"}),
        ("baseline", baseline, {"id", "prediction"}),
    ):
        missing = cols - set(frame.columns)
        if missing:
            raise ConfigError(
                f"{name} predictions lack columns {sorted(missing)}",
                error_code="MISSING_COLUMNS",
                details={"table": name, "missing": sorted(missing)},
            )
    merged = ours.merge(
        baseline[["id", "prediction"]], on="id", suffixes=("_ours", "_base"), validate="1:1"
    )
    selected = set(
        case_filter(
            merged["id"].astype(str).tolist(),
            merged["prediction_ours"],
            merged["prediction_base"],
            merged["label"],
            own_tol=own_tol,
            base_tol=base_tol,
        )
    )
    return merged[merged["id"].astype(str).isin(selected)].reset_index(drop=True)


def compare_to_reference(
    metrics: Mapping[str, Optional[float]],
    reference: Mapping[str, float] = REFERENCE_MOSI_DROP_0_5,
) -> pd.DataFrame:
    """Side-by-side table; reported only, never a pass/fail gate."""
    rows = []
    for key in METRIC_COLUMNS:
        ours = metrics.get(key)
        ref = reference[key]
        delta = None if ours is None or not math.isfinite(ours) else float(ours) - ref
        rows.append({"metric": key, "ours": ours, "reference": ref, "delta": delta})
    return pd.DataFrame(rows)


# Output files


def _pyplot() -> Any:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(p, index=False, float_format="%.10g", lineterminator="\n")
    return p


def write_sweep(result: SweepResult, out_dir: Union[str, Path], *, plots: bool = True) -> Path:
    out = Path(out_dir)
    frame = result.to_frame()
    path = write_frame(frame, out / "sweep.csv")
    if plots:
        plt = _pyplot()
        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        for ax, col, title in zip(
            axes, ("mae", "acc5", "f1_nonzero"), ("MAE", "Acc-5", "Non0-F1")
        ):
            ax.plot(frame["drop_rate"], frame[col].astype(float), marker="o")
            ax.set_xlabel("drop rate")
            ax.set_title(title)
            ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out / "sweep.png", dpi=120)
        plt.close(fig)
    return path


def write_scatter(
    integrity_true: np.ndarray,
    integrity_pred: np.ndarray,
    out_dir: Union[str, Path],
    *,
    prefix: str = "scatter",
    plots: bool = True,
) -> Dict[str, ScatterStats]:
    """Write <prefix>_{l,a,v}.csv point files and <prefix>_stats.csv."""
    out = Path(out_dir)
    stats = integrity_scatter_report(integrity_true, integrity_pred)
    for j, m in enumerate(MODALITIES):
        write_frame(
            pd.DataFrame(
                {
                    "modality": m,
                    "true": np.asarray(integrity_true)[:, j],
                    "predicted": np.asarray(integrity_pred)[:, j],
                }
            ),
            out / f"{prefix}_{m}.csv",
        )
    write_frame(pd.DataFrame([asdict(s) for s in stats.values()]), out / f"{prefix}_stats.csv")
    if plots:
        plt = _pyplot()
        fig, axes = plt.subplots(1, 3, figsize=(12, 4))
        for j, (ax, m) in enumerate(zip(axes, MODALITIES)):
            ax.scatter(np.asarray(integrity_true)[:, j], np.asarray(integrity_pred)[:, j], s=6)
            ax.plot([0, 1], [0, 1], color="grey", linestyle="--", linewidth=1)
            s = stats[m]
            if s.slope is not None and s.intercept is not None:
                xs = np.linspace(0, 1, 2)
                ax.plot(xs, s.slope * xs + s.intercept, color="red", linewidth=1)
            ax.set_title(f"{m}: R2={s.r2:.2f}" if s.r2 is not None else f"{m}: R2 undefined")
            ax.set_xlabel("true integrity")
            ax.set_ylabel("predicted integrity")
        fig.tight_layout()
        fig.savefig(out / f"{prefix}.png", dpi=120)
        plt.close(fig)
    return stats
