"""Embedding shape contract, integrity estimator and its loss."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from ifusion.exceptions import ShapeMismatchError
from ifusion.integrity import (
    IntegrityEstimator,
    ModalityEmbedding,
    embed_modality,
    estimate_integrity,
    integrity_loss,
    pooling_weights,
)
from ifusion.layers import EncoderBlockSpec

SPEC = EncoderBlockSpec(depth=1, width=8, heads=2, ff_width=16, dropout=0.0)


class TestModalityEmbedding:
    def test_output_shape(self) -> None:
        torch.manual_seed(0)
        emb = ModalityEmbedding(in_steps=7, in_dim=5, seq_len=4, spec=SPEC)
        out = embed_modality(emb, torch.randn(3, 7, 5), "a")
        assert out.values.shape == (3, 4, 8)
        assert out.modality == "a"

    def test_extra_token_starts_at_zero(self) -> None:
        emb = ModalityEmbedding(in_steps=7, in_dim=5, seq_len=4, spec=SPEC)
        assert torch.count_nonzero(emb.extra_token) == 0

    def test_wrong_input_shape(self) -> None:
        emb = ModalityEmbedding(in_steps=7, in_dim=5, seq_len=4, spec=SPEC)
        with pytest.raises(ShapeMismatchError) as exc:
            emb(torch.randn(3, 6, 5))
        assert exc.value.details["expected"] == [7, 5]

    def test_seq_len_needs_token_room(self) -> None:
        with pytest.raises(ShapeMismatchError):
            ModalityEmbedding(in_steps=7, in_dim=5, seq_len=1, spec=SPEC)

    def test_time_map_starts_as_average_pooling(self) -> None:
        emb = ModalityEmbedding(in_steps=7, in_dim=5, seq_len=4, spec=SPEC)
        torch.testing.assert_close(emb.temporal.weight.detach(), pooling_weights(7, 3))
        assert torch.count_nonzero(emb.temporal.bias) == 0


class TestPoolingWeights:
    @pytest.mark.parametrize("in_steps, out_steps", [(7, 3), (12, 7), (10, 7), (4, 4), (3, 5)])
    def test_rows_are_convex_mixtures(self, in_steps: int, out_steps: int) -> None:
        w = pooling_weights(in_steps, out_steps)
        assert w.shape == (out_steps, in_steps)
        assert (w >= 0).all()
        torch.testing.assert_close(w.sum(dim=1), torch.ones(out_steps))

    def test_equal_lengths_is_identity(self) -> None:
        torch.testing.assert_close(pooling_weights(5, 5), torch.eye(5))

    def test_mean_of_constant_rows_tracks_kept_fraction(self) -> None:
        x = torch.zeros(8, 1)
        x[:6] = 1.0
        pooled = pooling_weights(8, 2) @ x
        torch.testing.assert_close(pooled.mean(), torch.tensor(0.75))


class TestIntegrityEstimator:
    def test_one_score_per_sample(self) -> None:
        torch.manual_seed(0)
        emb = ModalityEmbedding(in_steps=6, in_dim=3, seq_len=4, spec=SPEC)
        est = IntegrityEstimator(SPEC)
        scores = estimate_integrity(est, embed_modality(emb, torch.randn(5, 6, 3), "l"))
        assert scores.shape == (5,)
        assert torch.isfinite(scores).all()

    def test_scores_start_at_one_half(self) -> None:
        torch.manual_seed(4)
        est = IntegrityEstimator(SPEC).eval()
        with torch.no_grad():
            scores = est(torch.randn(6, 4, 8) * 5.0)
        torch.testing.assert_close(scores, torch.full((6,), 0.5))

    def test_eval_is_deterministic(self) -> None:
        torch.manual_seed(1)
        est = IntegrityEstimator(SPEC).eval()
        x = torch.randn(2, 4, 8)
        with torch.no_grad():
            assert torch.equal(est(x), est(x))


class TestIntegrityLoss:
    """Mean over samples of the squared distance between score rows."""

    def test_exact_prediction(self) -> None:
        label = torch.tensor([[1.0, 0.4, 0.0]])
        assert integrity_loss(label.clone(), label).item() == 0.0

    def test_hand_value(self) -> None:
        pred = torch.tensor([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        label = torch.tensor([[0.5, 1.0, 1.0], [0.0, 0.0, 1.0]])
        assert integrity_loss(pred, label).item() == pytest.approx((0.25 + 1.0) / 2)

    def test_matches_double_loop(self) -> None:
        rng = np.random.default_rng(16)
        pred = rng.uniform(-0.5, 1.5, (16, 3))
        label = rng.uniform(0, 1, (16, 3))
        total = 0.0
        for i in range(16):
            for j in range(3):
                total += (pred[i, j] - label[i, j]) ** 2
        value = integrity_loss(torch.from_numpy(pred), torch.from_numpy(label)).item()
        assert abs(value - total / 16) < 1e-12

    def test_gradient_closed_form(self) -> None:
        torch.manual_seed(2)
        pred = torch.rand(4, 3, dtype=torch.float64, requires_grad=True)
        label = torch.rand(4, 3, dtype=torch.float64)
        integrity_loss(pred, label).backward()
        assert pred.grad is not None
        torch.testing.assert_close(pred.grad, 2.0 / 4 * (pred.detach() - label))

    def test_gradcheck(self) -> None:
        torch.manual_seed(3)
        pred = torch.rand(4, 3, dtype=torch.float64, requires_grad=True)
        label = torch.rand(4, 3, dtype=torch.float64)
        assert torch.autograd.gradcheck(lambda p: integrity_loss(p, label), (pred,))

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ShapeMismatchError):
            integrity_loss(torch.zeros(2, 3), torch.zeros(3, 3))
