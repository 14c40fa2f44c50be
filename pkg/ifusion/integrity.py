"""Per-modality embedding and integrity estimation."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .exceptions import ShapeMismatchError
from .layers import EncoderBlockSpec, build_encoder


@dataclass(frozen=True)
class EmbeddedModality:
    """values: [N, T, d]."""

    values: Tensor
    modality: str


def pooling_weights(in_steps: int, out_steps: int) -> Tensor:
    """[out_steps, in_steps] adaptive average pooling as a matrix; every row sums to 1."""
    eye = torch.eye(in_steps).unsqueeze(0)
    return F.adaptive_avg_pool1d(eye, out_steps)[0].T.contiguous()


class ModalityEmbedding(nn.Module):
    """
    Unify one modality to [T, d].

    Each step goes through a two-layer projection to width d ending in a LayerNorm, so a
    replaced step and a kept step differ in direction rather than only in scale. The time
    axis is then mapped T_m -> T - 1 by a learned linear map that starts as average pooling,
    a learnable zero-initialised token is prepended and the T rows are encoded by a
    self-attention stack.
    """

    def __init__(
        self, in_steps: int, in_dim: int, seq_len: int, spec: EncoderBlockSpec
    ) -> None:
        super().__init__()
        if seq_len < 2:
            raise ShapeMismatchError("seq_len must leave room for the extra token", seq_len=seq_len)
        self.in_steps = in_steps
        self.in_dim = in_dim
        self.proj = nn.Sequential(
            nn.Linear(in_dim, spec.width),
            nn.GELU(),
            nn.Linear(spec.width, spec.width),
            nn.LayerNorm(spec.width),
        )
        self.temporal = nn.Linear(in_steps, seq_len - 1)
        with torch.no_grad():
            self.temporal.weight.copy_(pooling_weights(in_steps, seq_len - 1))
            self.temporal.bias.zero_()
        self.extra_token = nn.Parameter(torch.zeros(1, 1, spec.width))
        self.encoder = build_encoder(spec)

    def forward(self, x: Tensor) -> Tensor:
        if x.dim() != 3 or tuple(x.shape[1:]) != (self.in_steps, self.in_dim):
            raise ShapeMismatchError(
                "modality input does not match the configured [T_m, d_m]",
                expected=(self.in_steps, self.in_dim),
                actual=tuple(x.shape[1:]),
            )
        h = self.proj(x)
        h = self.temporal(h.transpose(1, 2)).transpose(1, 2)
        token = self.extra_token.expand(h.shape[0], -1, -1)
        out: Tensor = self.encoder(torch.cat([token, h], dim=1))
        return out


class IntegrityEstimator(nn.Module):
    """Prepends the integrity token, encodes, reads the token position through a linear head."""

    def __init__(self, spec: EncoderBlockSpec) -> None:
        super().__init__()
        self.token = nn.Parameter(torch.zeros(1, 1, spec.width))
        self.encoder = build_encoder(spec)
        self.head = nn.Linear(spec.width, 1)
        # Every score starts at 0.5, independent of the input.
        nn.init.zeros_(self.head.weight)
        nn.init.constant_(self.head.bias, 0.5)

    def forward(self, embedded: Tensor) -> Tensor:
        token = self.token.expand(embedded.shape[0], -1, -1)
        h = self.encoder(torch.cat([token, embedded], dim=1))
        out: Tensor = self.head(h[:, 0]).squeeze(-1)
        return out


def embed_modality(
    embedding: ModalityEmbedding, corrupted: Tensor, modality: str
) -> EmbeddedModality:
    return EmbeddedModality(values=embedding(corrupted), modality=modality)


def estimate_integrity(estimator: IntegrityEstimator, embedded: EmbeddedModality) -> Tensor:
    """Raw (unclamped) scores, shape [N]."""
    return estimator(embedded.values)


def integrity_loss(pred: Tensor, label: Tensor) -> Tensor:
    """Mean over samples of the squared L2 distance between [N, 3] score rows."""
    if pred.shape != label.shape:
        raise ShapeMismatchError(
            "integrity predictions and labels differ in shape",
            pred=tuple(pred.shape),
            label=tuple(label.shape),
        )
    return ((pred - label) ** 2).sum(dim=1).mean()
