"""
Integrity-weighted cross-modal completion.

Each embedding is split into a shared and a private part, every modality gets a
surrogate blended from its own embedding and the other modalities' shared parts, and
the surrogates are decoded and checked against a clean pass at two depths: the
embedding itself (global) and its re-encoded semantics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import MODALITIES
from .exceptions import (
    BatchTooSmallError,
    ConfigError,
    MissingTargetsError,
    ShapeMismatchError,
)
from .integrity import EmbeddedModality
from .layers import EncoderBlockSpec, build_encoder
from .prng import DOMAIN_NEGATIVES, CounterRNG

PAIRS: Tuple[Tuple[str, str], ...] = (("l", "a"), ("l", "v"), ("a", "v"))
NORM_EPS = 1e-8


def other_modalities(modality: str) -> Tuple[str, str]:
    o1, o2 = (m for m in MODALITIES if m != modality)
    return o1, o2


@dataclass(frozen=True)
class DisentangledPair:
    shared: Tensor
    private: Tensor
    modality: str


@dataclass(frozen=True)
class SurrogateRepresentation:
    values: Tensor
    integrity_used: Tensor


@dataclass(frozen=True)
class ReconstructionBundle:
    reconstructed: Tensor
    re_encoded_semantics: Tensor
    clean_target: Tensor
    clean_semantics: Tensor


@dataclass(frozen=True)
class EncoderCompletionLoss:
    similarity: Tensor
    difference: Tensor

    @property
    def total(self) -> Tensor:
        return self.similarity + self.difference


@dataclass(frozen=True)
class DecoderLossWeights:
    mse_global: float = 0.5
    mi_global: float = 0.4
    mse_semantic: float = 0.3
    mi_semantic: float = 0.2


@dataclass(frozen=True)
class DecoderCompletionLoss:
    mse_global: Tensor
    mi_global: Tensor
    mse_semantic: Tensor
    mi_semantic: Tensor
    weights: DecoderLossWeights

    @property
    def total(self) -> Tensor:
        w = self.weights
        return (
            w.mse_global * self.mse_global
            + w.mi_global * self.mi_global
            + w.mse_semantic * self.mse_semantic
            + w.mi_semantic * self.mi_semantic
        )


class SharedPrivateEncoder(nn.Module):
    """One self-attention stack, used once as E^s and once as E^p per modality."""

    def __init__(self, spec: EncoderBlockSpec) -> None:
        super().__init__()
        self.encoder = build_encoder(spec)

    def forward(self, x: Tensor) -> Tensor:
        out: Tensor = self.encoder(x)
        return out


class ModalityDecoder(nn.Module):
    """Self-attention stack without a causal mask, [N, T, d] -> [N, T, d]."""

    def __init__(self, spec: EncoderBlockSpec) -> None:
        super().__init__()
        self.stack = build_encoder(spec)

    def forward(self, x: Tensor) -> Tensor:
        out: Tensor = self.stack(x)
        return out


class MIDiscriminator(nn.Module):
    """T(x, y): mean-pool both [N, T, d] inputs, concatenate, two hidden layers, scalar."""

    def __init__(self, width: int) -> None:
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * width, width),
            nn.ReLU(),
            nn.Linear(width, width),
            nn.ReLU(),
            nn.Linear(width, 1),
        )

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        z = torch.cat([x.mean(dim=1), y.mean(dim=1)], dim=-1)
        out: Tensor = self.net(z).squeeze(-1)
        return out


def disentangle(
    shared_encoder: SharedPrivateEncoder,
    private_encoder: SharedPrivateEncoder,
    embedded: EmbeddedModality,
) -> DisentangledPair:
    return DisentangledPair(
        shared=shared_encoder(embedded.values),
        private=private_encoder(embedded.values),
        modality=embedded.modality,
    )


def _check_same_shape(**tensors: Tensor) -> None:
    shapes = {k: tuple(v.shape) for k, v in tensors.items()}
    if len(set(shapes.values())) > 1:
        raise ShapeMismatchError("inputs must share one shape", **shapes)


def similarity_loss(shared_l: Tensor, shared_a: Tensor, shared_v: Tensor) -> Tensor:
    """Sum over (l,a), (l,v), (a,v) of the batch-mean squared Frobenius distance."""
    _check_same_shape(l=shared_l, a=shared_a, v=shared_v)
    shared = {"l": shared_l, "a": shared_a, "v": shared_v}
    total = shared_l.new_zeros(())
    for x, y in PAIRS:
        total = total + ((shared[x] - shared[y]) ** 2).sum(dim=(1, 2)).mean()
    return total


def three_way_similarity_loss(shared_l: Tensor, shared_a: Tensor, shared_v: Tensor) -> Tensor:
    """Pull each shared representation toward the mean of the three."""
    _check_same_shape(l=shared_l, a=shared_a, v=shared_v)
    centre = (shared_l + shared_a + shared_v) / 3.0
    total = shared_l.new_zeros(())
    for h in (shared_l, shared_a, shared_v):
        total = total + ((h - centre) ** 2).sum(dim=(1, 2)).mean()
    return total


def mi_similarity_loss(
    shared: Mapping[str, Tensor],
    discriminators: Mapping[str, MIDiscriminator],
    perm: Optional[Tensor] = None,
) -> Tensor:
    """Negated MI bound for each shared pair; discriminators keyed "la", "lv", "av"."""
    total = shared["l"].new_zeros(())
    for x, y in PAIRS:
        total = total - mi_lower_bound(shared[x], shared[y], discriminators[x + y], perm=perm)
    return total


def _normalise_columns(h: Tensor) -> Tensor:
    centred = h - h.mean(dim=-2, keepdim=True)
    return centred / (centred.norm(dim=-2, keepdim=True) + NORM_EPS)


def difference_loss(pair: DisentangledPair) -> Tensor:
    """
    Orthogonality penalty for one modality, averaged over the batch.

    Both [T, d] matrices are zero-meaned over time and column-normalised; the value is
    (1/d^2) * ||S^T P||_F^2.
    """
    _check_same_shape(shared=pair.shared, private=pair.private)
    s = _normalise_columns(pair.shared)
    p = _normalise_columns(pair.private)
    d = s.shape[-1]
    cross = s.transpose(-1, -2) @ p
    return (cross**2).sum(dim=(-1, -2)).mean() / float(d * d)


def encoder_completion_loss(
    pairs: Mapping[str, DisentangledPair],
    *,
    similarity: str = "pairwise-mse",
    mi_discriminators: Optional[Mapping[str, MIDiscriminator]] = None,
    perm: Optional[Tensor] = None,
) -> EncoderCompletionLoss:
    """Similarity over the shared parts plus the modality-averaged difference loss."""
    shared = {m: pairs[m].shared for m in MODALITIES}
    if similarity == "pairwise-mse":
        sim = similarity_loss(shared["l"], shared["a"], shared["v"])
    elif similarity == "three-way":
        sim = three_way_similarity_loss(shared["l"], shared["a"], shared["v"])
    elif similarity == "pairwise-mi":
        if mi_discriminators is None:
            raise MissingTargetsError("pairwise-mi similarity needs pair discriminators")
        sim = mi_similarity_loss(shared, mi_discriminators, perm=perm)
    else:
        raise ConfigError(
            f"unknown similarity constraint: {similarity}",
            error_code="OUT_OF_RANGE",
            details={"path": "model.similarity"},
        )
    diff = sum((difference_loss(pairs[m]) for m in MODALITIES), shared["l"].new_zeros(()))
    return EncoderCompletionLoss(similarity=sim, difference=diff / len(MODALITIES))


def build_surrogate(
    embedded: Tensor, integrity: Tensor, shared_other1: Tensor, shared_other2: Tensor
) -> SurrogateRepresentation:
    """I * u + (1 - I) * (s1 + s2), integrity of shape [N] broadcast over [T, d]."""
    i = integrity.clamp(0.0, 1.0).to(embedded.dtype)
    w = i.reshape(-1, *([1] * (embedded.dim() - 1)))
    values = w * embedded + (1.0 - w) * (shared_other1 + shared_other2)
    return SurrogateRepresentation(values=values, integrity_used=i)


def negative_permutation(n: int, *, seed: int, stream: int, attempts: int = 16) -> np.ndarray:
    """
    Batch shuffle without fixed points for product-of-marginals pairs.

    Rejection-samples permutations from the counter generator; falls back to a rotation
    by one when every attempt has a fixed point.
    """
    if n < 2:
        raise BatchTooSmallError(n)
    rng = CounterRNG(seed, DOMAIN_NEGATIVES)
    identity = np.arange(n)
    for attempt in range(attempts):
        perm = rng.permutation(n, stream=(stream << 4) | attempt)
        if not np.any(perm == identity):
            return perm.astype(np.int64)
    return np.roll(identity, -1).astype(np.int64)


def mi_lower_bound(
    x: Tensor, y: Tensor, disc: MIDiscriminator, *, perm: Optional[Tensor] = None
) -> Tensor:
    """
    Jensen-Shannon style bound:

        E_joint[-softplus(-T(x, y))] + E_marginal[-softplus(T(x, y_perm))]

    perm defaults to a rotation by one.
    """
    n = x.shape[0]
    if n < 2:
        raise BatchTooSmallError(n)
    if y.shape[0] != n:
        raise ShapeMismatchError("x and y batch sizes differ", x=tuple(x.shape), y=tuple(y.shape))
    if perm is None:
        perm = torch.roll(torch.arange(n, device=x.device), -1)
    joint = disc(x, y)
    marginal = disc(x, y[perm])
    return -F.softplus(-joint).mean() - F.softplus(marginal).mean()


def _sq_frobenius(a: Tensor, b: Tensor) -> Tensor:
    return ((a - b) ** 2).sum(dim=(1, 2)).mean()


def decode_and_validate(
    surrogates: Mapping[str, Tensor],
    clean_embeddings: Optional[Mapping[str, Tensor]],
    clean_semantics: Optional[Mapping[str, Tensor]],
    decoders: Mapping[str, ModalityDecoder],
    shared_encoders: Mapping[str, SharedPrivateEncoder],
    discriminators: Mapping[str, MIDiscriminator],
    *,
    weights: DecoderLossWeights = DecoderLossWeights(),
    perm: Optional[Tensor] = None,
) -> Tuple[Dict[str, ReconstructionBundle], DecoderCompletionLoss]:
    """
    Decode every surrogate and validate it against the gradient-stopped clean pass.

    discriminators are keyed "<m>_g" (decoded embedding vs clean embedding) and "<m>_s"
    (re-encoded semantics vs clean semantics).
    """
    if clean_embeddings is None or clean_semantics is None:
        raise MissingTargetsError(
            "reconstruction losses need the clean pass (clean embeddings and semantics)"
        )
    missing = [m for m in MODALITIES if m not in clean_embeddings or m not in clean_semantics]
    if missing:
        raise MissingTargetsError(f"clean targets missing for modalities {missing}")

    bundles: Dict[str, ReconstructionBundle] = {}
    mse_g: List[Tensor] = []
    mse_s: List[Tensor] = []
    mi_g = surrogates["l"].new_zeros(())
    mi_s = surrogates["l"].new_zeros(())
    for m in MODALITIES:
        target = clean_embeddings[m].detach()
        target_sem = clean_semantics[m].detach()
        recon = decoders[m](surrogates[m])
        re_sem = shared_encoders[m](recon)
        bundles[m] = ReconstructionBundle(
            reconstructed=recon,
            re_encoded_semantics=re_sem,
            clean_target=target,
            clean_semantics=target_sem,
        )
        mse_g.append(_sq_frobenius(recon, target))
        mse_s.append(_sq_frobenius(re_sem, target_sem))
        mi_g = mi_g - mi_lower_bound(recon, target, discriminators[f"{m}_g"], perm=perm)
        mi_s = mi_s - mi_lower_bound(re_sem, target_sem, discriminators[f"{m}_s"], perm=perm)

    parts = DecoderCompletionLoss(
        mse_global=torch.stack(mse_g).mean(),
        mi_global=mi_g,
        mse_semantic=torch.stack(mse_s).mean(),
        mi_semantic=mi_s,
        weights=weights,
    )
    return bundles, parts
