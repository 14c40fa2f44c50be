"""
Convergence on the default synthetic generator. Minutes of CPU each.

Run with: pytest -m slow
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from ifusion.config import RunConfig, parse_config
from ifusion.data import generate_synthetic_splits
from ifusion.evaluation import evaluate_plan, integrity_scatter_report, predict_dataset
from ifusion.event_store import EventStore
from ifusion.missingness import sample_missing_plan, unknown_vector
from ifusion.provenance import derive_seed
from ifusion.training import load_checkpoint, restore_model, train, valid_plan

pytestmark = pytest.mark.slow


def _config(output_dir: Path, **sections: Dict[str, Any]) -> RunConfig:
    """Library defaults; only the output directory, plots and the given sections change."""
    doc: Dict[str, Any] = {
        "evaluation": {"plots": False},
        "output_dir": str(output_dir),
        **sections,
    }
    return parse_config(doc)


def test_integrity_estimator_converges_in_stage_one(tmp_path: Path) -> None:
    cfg = _config(tmp_path / "run", training={"epochs": 40, "stage1_epochs": 40})
    splits = generate_synthetic_splits(cfg.data.synthetic)
    assert len(splits["train"]) == 512 and len(splits["valid"]) == 128

    result = train(cfg, splits, store=EventStore())
    model = restore_model(load_checkpoint(result.last_path))
    valid = splits["valid"]
    preds = predict_dataset(model, valid, valid_plan(cfg, valid), unknown_vector(32))
    stats = integrity_scatter_report(preds.integrity_true, preds.integrity_pred)
    for m, s in stats.items():
        assert s.r2 is not None and s.r2 >= 0.8, (m, s)


def test_end_to_end_gain_and_integrity_weighting(tmp_path: Path) -> None:
    maes = {}
    for weighting in (True, False):
        cfg = _config(tmp_path / str(weighting), model={"integrity_weighting": weighting})
        assert cfg.missingness.drop_rate == 0.5
        splits = generate_synthetic_splits(cfg.data.synthetic)
        result = train(cfg, splits, store=EventStore())
        model = restore_model(load_checkpoint(result.best_path))
        test = splits["test"]
        plan = sample_missing_plan(
            len(test), test.steps, 0.5, derive_seed(cfg.training.seed, "acceptance")
        )
        report, _ = evaluate_plan(model, test, plan, unknown_vector(32))
        maes[weighting] = report.mae

        if weighting:
            baseline = float(np.mean(np.abs(test.labels - splits["train"].labels.mean())))
            assert report.mae <= 0.9 * baseline

    assert maes[False] > maes[True]
