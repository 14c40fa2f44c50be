"""Staged objective and loss report bookkeeping."""

from __future__ import annotations

import math

import pytest
import torch

from ifusion.config import TrainingConfig
from ifusion.exceptions import ConfigError, MissingLossTermError
from ifusion.losses import LossReport, LossWeights, total_loss


def _report(**overrides: float) -> LossReport:
    values = {
        "integrity": 0.7,
        "similarity": 0.2,
        "difference": 0.05,
        "mse_global": 1.3,
        "mi_global": -0.4,
        "mse_semantic": 0.6,
        "mi_semantic": -0.1,
        "prediction": 2.2,
    }
    values.update(overrides)
    t = {k: torch.tensor(v, dtype=torch.float64) for k, v in values.items()}
    rec_enc = t["similarity"] + t["difference"]
    rec_dec = (
        0.5 * t["mse_global"]
        + 0.4 * t["mi_global"]
        + 0.3 * t["mse_semantic"]
        + 0.2 * t["mi_semantic"]
    )
    return LossReport(rec_enc=rec_enc, rec_dec=rec_dec, **t)


class TestTotalLoss:
    def test_stage_one(self) -> None:
        parts = _report()
        rec = (0.2 + 0.05) + (0.5 * 1.3 + 0.4 * -0.4 + 0.3 * 0.6 + 0.2 * -0.1)
        expected = 0.9 * 0.7 + 0.4 * rec
        assert abs(total_loss(1, parts).item() - expected) < 1e-10

    def test_stage_two_adds_prediction(self) -> None:
        parts = _report()
        weights = LossWeights(alpha=0.9, beta=0.4, sigma=1.0)
        diff = total_loss(2, parts, weights).item() - total_loss(1, parts, weights).item()
        assert abs(diff - 2.2) < 1e-10

    def test_custom_weights(self) -> None:
        parts = _report()
        weights = LossWeights(alpha=0.1, beta=2.0, sigma=0.5)
        rec = float(parts.rec_enc + parts.rec_dec)  # type: ignore[operator]
        expected = 0.1 * 0.7 + 2.0 * rec + 0.5 * 2.2
        assert abs(total_loss(2, parts, weights).item() - expected) < 1e-10

    def test_disabled_terms_contribute_zero(self) -> None:
        parts = _report()
        only_pred = LossWeights(
            use_integrity_loss=False, use_encoder_rec_loss=False, use_decoder_rec_loss=False
        )
        assert total_loss(1, parts, only_pred).item() == 0.0
        assert abs(total_loss(2, parts, only_pred).item() - 2.2) < 1e-12

        no_dec = LossWeights(use_decoder_rec_loss=False)
        expected = 0.9 * 0.7 + 0.4 * 0.25
        assert abs(total_loss(1, parts, no_dec).item() - expected) < 1e-10

    def test_weights_from_training_config(self) -> None:
        cfg = TrainingConfig(alpha=0.3, use_integrity_loss=False)
        weights = LossWeights.from_training(cfg)
        assert weights.alpha == 0.3
        assert not weights.use_integrity_loss
        assert weights.beta == 0.4 and weights.sigma == 1.0

    def test_missing_term(self) -> None:
        with pytest.raises(MissingLossTermError) as exc:
            total_loss(1, LossReport(integrity=torch.tensor(1.0)))
        assert exc.value.error_code == "MISSING_LOSS_TERM"
        assert exc.value.details["stage"] == 1

    def test_stage_two_requires_prediction(self) -> None:
        parts = _report()
        without = LossReport(**{k: v for k, v in parts.items() if k != "prediction"})
        assert total_loss(1, without).item() == total_loss(1, parts).item()
        with pytest.raises(MissingLossTermError):
            total_loss(2, without)

    @pytest.mark.parametrize("stage", [0, 3])
    def test_unknown_stage(self, stage: int) -> None:
        with pytest.raises(ConfigError) as exc:
            total_loss(stage, _report())
        assert exc.value.error_code == "OUT_OF_RANGE"
        assert exc.value.details["stage"] == stage

    def test_gradients_follow_weights(self) -> None:
        ie = torch.tensor(0.5, requires_grad=True)
        pred = torch.tensor(1.5, requires_grad=True)
        zero = torch.tensor(0.0)
        parts = LossReport(integrity=ie, rec_enc=zero, rec_dec=zero, prediction=pred)
        total_loss(2, parts, LossWeights(alpha=0.25, sigma=3.0)).backward()
        assert ie.grad is not None and pred.grad is not None
        assert ie.grad.item() == 0.25
        assert pred.grad.item() == 3.0


class TestLossReport:
    def test_items_skip_missing_terms(self) -> None:
        report = LossReport(integrity=torch.tensor(1.0), prediction=torch.tensor(2.0))
        assert [name for name, _ in report.items()] == ["integrity", "prediction"]
        assert report.to_dict() == {"integrity": 1.0, "prediction": 2.0}

    def test_first_non_finite(self) -> None:
        assert _report().first_non_finite() is None
        bad = _report(mi_global=math.inf)
        name, value = bad.first_non_finite()  # type: ignore[misc]
        assert name == "mi_global"
        assert value == math.inf

    def test_first_non_finite_reports_earliest(self) -> None:
        report = LossReport(
            integrity=torch.tensor(float("nan")), prediction=torch.tensor(float("nan"))
        )
        found = report.first_non_finite()
        assert found is not None and found[0] == "integrity"
