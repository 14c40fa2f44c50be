"""Dominant-modality selection, integrity-guided attention fusion, regression head."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import torch
from torch import Tensor, nn

from .completion import other_modalities
from .config import MODALITIES
from .exceptions import ShapeMismatchError
from .layers import EncoderBlockSpec, build_encoder, cross_attention_layer


@dataclass(frozen=True)
class FusionState:
    """
    h_dom[i - 1] is h_dom^i (i = 1..depth + 1); h_fuse[j] is h_fuse^j (j = 0..layers).
    attention[j - 1] maps each auxiliary modality to its [N, heads, T, T] weights.
    """

    dominant: str
    h_dom: Tuple[Tensor, ...]
    h_fuse: Tuple[Tensor, ...]
    attention: Tuple[Dict[str, Tensor], ...]


@dataclass(frozen=True)
class PredictionOutput:
    h_pred: Tensor
    y_hat: Tensor


def per_sample_dominant(scores: Union[Tensor, np.ndarray]) -> np.ndarray:
    """argmax over clamped [N, 3] scores; ties resolve to the earlier of l, a, v."""
    arr = scores.detach().cpu().numpy() if isinstance(scores, Tensor) else np.asarray(scores)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
        raise ShapeMismatchError("scores must be [N, 3] with N >= 1", scores=arr.shape)
    return np.argmax(np.clip(arr, 0.0, 1.0), axis=1)


def select_dominant(scores: Union[Tensor, np.ndarray]) -> str:
    """Batch majority of the per-sample dominants, ties resolved l > a > v."""
    counts = np.bincount(per_sample_dominant(scores), minlength=3)
    return MODALITIES[int(np.argmax(counts))]


class DominantRefiner(nn.Module):
    """Successive single-layer encoders over the dominant stream, shared by all modalities."""

    def __init__(self, spec: EncoderBlockSpec, depth: int) -> None:
        super().__init__()
        layer_spec = EncoderBlockSpec(
            depth=1,
            width=spec.width,
            heads=spec.heads,
            ff_width=spec.ff_width,
            dropout=spec.dropout,
        )
        self.layers = nn.ModuleList([build_encoder(layer_spec) for _ in range(depth)])

    def forward(self, h1: Tensor) -> Tuple[Tensor, ...]:
        outs: List[Tensor] = []
        h = h1
        for layer in self.layers:
            h = layer(h)
            outs.append(h)
        return tuple(outs)


def refine_dominant(refiner: DominantRefiner, h1: Tensor) -> Tuple[Tensor, ...]:
    """(h_dom^2, h_dom^3, ...) from h_dom^1."""
    return refiner(h1)


class FusionLayer(nn.Module):
    """
    One attention step: Q from the dominant stream, K and V per auxiliary modality.

    No output projection and no biases, so zero value weights leave h_fuse unchanged.
    """

    def __init__(self, width: int, heads: int) -> None:
        super().__init__()
        if width % heads != 0:
            raise ShapeMismatchError("width must be divisible by heads", width=width, heads=heads)
        self.heads = heads
        self.d_k = width // heads
        self.query = nn.Linear(width, width, bias=False)
        self.key_proj = nn.ModuleDict(
            {m: nn.Linear(width, width, bias=False) for m in MODALITIES}
        )
        self.value_proj = nn.ModuleDict(
            {m: nn.Linear(width, width, bias=False) for m in MODALITIES}
        )

    def _split(self, x: Tensor) -> Tensor:
        n, t, _ = x.shape
        return x.reshape(n, t, self.heads, self.d_k).transpose(1, 2)

    def forward(
        self, h_fuse_prev: Tensor, h_dom: Tensor, aux: Mapping[str, Tensor]
    ) -> Tuple[Tensor, Dict[str, Tensor]]:
        n, t, d = h_dom.shape
        q = self._split(self.query(h_dom))
        out = h_fuse_prev
        gammas: Dict[str, Tensor] = {}
        for m, a in aux.items():
            k = self._split(self.key_proj[m](a))
            v = self._split(self.value_proj[m](a))
            gamma = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.d_k), dim=-1)
            gammas[m] = gamma
            out = out + (gamma @ v).transpose(1, 2).reshape(n, t, d)
        return out, gammas


def fuse_step(
    layer: FusionLayer, h_fuse_prev: Tensor, h_dom: Tensor, aux: Mapping[str, Tensor]
) -> Tuple[Tensor, Dict[str, Tensor]]:
    """h_fuse^j = h_fuse^{j-1} + sum over auxiliaries of softmax(Q K_m^T / sqrt(d_k)) V_m."""
    return layer(h_fuse_prev, h_dom, aux)


def integrity_fusion(
    refiner: DominantRefiner,
    layers: Sequence[FusionLayer],
    h_fuse0: Tensor,
    surrogates: Mapping[str, Tensor],
    dominant: str,
) -> FusionState:
    """Dominant surrogate as h_dom^1, the other two surrogates as auxiliaries."""
    if len(layers) != len(refiner.layers) + 1:
        raise ShapeMismatchError(
            "need one fusion layer per dominant representation",
            fusion_layers=len(layers),
            dominant_layers=len(refiner.layers) + 1,
        )
    h1 = surrogates[dominant]
    h_dom = (h1, *refine_dominant(refiner, h1))
    aux = {m: surrogates[m] for m in other_modalities(dominant)}
    h_fuse = [h_fuse0.unsqueeze(0).expand(h1.shape[0], -1, -1)]
    attention: List[Dict[str, Tensor]] = []
    for j, layer in enumerate(layers):
        h, gammas = fuse_step(layer, h_fuse[-1], h_dom[j], aux)
        h_fuse.append(h)
        attention.append(gammas)
    return FusionState(
        dominant=dominant, h_dom=h_dom, h_fuse=tuple(h_fuse), attention=tuple(attention)
    )


class FusionBlock(nn.Module):
    """Dominant refiner, fusion layers and the learnable h_fuse^0 (zero-initialised)."""

    def __init__(self, spec: EncoderBlockSpec, seq_len: int, dominant_depth: int) -> None:
        super().__init__()
        self.refiner = DominantRefiner(spec, dominant_depth)
        self.layers = nn.ModuleList(
            [FusionLayer(spec.width, spec.heads) for _ in range(dominant_depth + 1)]
        )
        self.h_fuse0 = nn.Parameter(torch.zeros(seq_len, spec.width))

    def forward(self, surrogates: Mapping[str, Tensor], dominant: str) -> FusionState:
        layers: List[FusionLayer] = list(self.layers)  # type: ignore[arg-type]
        return integrity_fusion(self.refiner, layers, self.h_fuse0, surrogates, dominant)


def average_fusion(surrogates: Mapping[str, Tensor]) -> Tensor:
    """Mean of the three surrogates; stands in for both streams without guided attention."""
    return torch.stack([surrogates[m] for m in MODALITIES]).mean(dim=0)


class PredictionHead(nn.Module):
    """Cross-attention stack with H_dom as query and H_fuse as memory, read at X_dom."""

    def __init__(self, spec: EncoderBlockSpec) -> None:
        super().__init__()
        self.dom_token = nn.Parameter(torch.zeros(1, 1, spec.width))
        self.fuse_token = nn.Parameter(torch.zeros(1, 1, spec.width))
        self.layers = nn.ModuleList([cross_attention_layer(spec) for _ in range(spec.depth)])
        self.norm = nn.LayerNorm(spec.width)
        self.head = nn.Linear(spec.width, 1)

    def forward(self, h_dom: Tensor, h_fuse: Tensor) -> PredictionOutput:
        if h_dom.shape != h_fuse.shape:
            raise ShapeMismatchError(
                "dominant and fused streams differ in shape",
                h_dom=tuple(h_dom.shape),
                h_fuse=tuple(h_fuse.shape),
            )
        n = h_dom.shape[0]
        query = torch.cat([self.dom_token.expand(n, -1, -1), h_dom], dim=1)
        memory = torch.cat([self.fuse_token.expand(n, -1, -1), h_fuse], dim=1)
        for layer in self.layers:
            query = layer(query, memory)
        h_pred = self.norm(query[:, 0])
        return PredictionOutput(h_pred=h_pred, y_hat=self.head(h_pred).squeeze(-1))


def predict(head: PredictionHead, h_dom: Tensor, h_fuse: Tensor) -> PredictionOutput:
    return head(h_dom, h_fuse)


def prediction_loss(y_hat: Tensor, y: Tensor) -> Tensor:
    if y_hat.shape != y.shape:
        raise ShapeMismatchError(
            "predictions and labels differ in length", y_hat=tuple(y_hat.shape), y=tuple(y.shape)
        )
    return ((y_hat - y) ** 2).mean()
