"""The full network: parameter groups, corrupted pass, clean pass and loss terms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch
from torch import Tensor, nn

from .completion import (
    PAIRS,
    DecoderLossWeights,
    DisentangledPair,
    MIDiscriminator,
    ModalityDecoder,
    ReconstructionBundle,
    SharedPrivateEncoder,
    build_surrogate,
    decode_and_validate,
    disentangle,
    encoder_completion_loss,
    other_modalities,
)
from .config import MODALITIES, ModelConfig, TrainingConfig
from .fusion import (
    FusionBlock,
    FusionState,
    PredictionHead,
    PredictionOutput,
    average_fusion,
    predict,
    prediction_loss,
    select_dominant,
)
from .integrity import (
    EmbeddedModality,
    IntegrityEstimator,
    ModalityEmbedding,
    embed_modality,
    estimate_integrity,
    integrity_loss,
)
from .layers import EncoderBlockSpec
from .losses import LossReport

PARAMETER_GROUPS: Tuple[str, ...] = (
    "embedding",
    "integrity",
    "shared_encoders",
    "private_encoders",
    "decoders",
    "discriminators",
    "fusion",
    "prediction",
)


@dataclass(frozen=True)
class ForwardOutput:
    integrity_raw: Tensor
    integrity_used: Tensor
    embedded: Dict[str, Tensor]
    pairs: Dict[str, DisentangledPair]
    surrogates: Dict[str, Tensor]
    losses: LossReport
    bundles: Optional[Dict[str, ReconstructionBundle]] = None
    dominant: Optional[str] = None
    fusion: Optional[FusionState] = None
    prediction: Optional[PredictionOutput] = None


class IFusionModel(nn.Module):
    """
    Integrity-aware multimodal regressor.

    Submodules are grouped so that training stages can freeze whole groups; see
    PARAMETER_GROUPS.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        steps: Tuple[int, int, int],
        dims: Tuple[int, int, int],
        decoder_weights: DecoderLossWeights = DecoderLossWeights(),
    ) -> None:
        super().__init__()
        self.cfg = cfg
        self.steps = tuple(steps)
        self.dims = tuple(dims)
        self.decoder_weights = decoder_weights

        def spec(depth: int) -> EncoderBlockSpec:
            return EncoderBlockSpec.from_model_config(cfg, depth)

        self.embedding = nn.ModuleDict(
            {
                m: ModalityEmbedding(steps[j], dims[j], cfg.seq_len, spec(cfg.embed_depth))
                for j, m in enumerate(MODALITIES)
            }
        )
        self.integrity = nn.ModuleDict(
            {m: IntegrityEstimator(spec(cfg.integrity_depth)) for m in MODALITIES}
        )
        self.shared_encoders = nn.ModuleDict(
            {m: SharedPrivateEncoder(spec(cfg.encoder_depth)) for m in MODALITIES}
        )
        self.private_encoders = nn.ModuleDict(
            {m: SharedPrivateEncoder(spec(cfg.encoder_depth)) for m in MODALITIES}
        )
        self.decoders = nn.ModuleDict(
            {m: ModalityDecoder(spec(cfg.decoder_depth)) for m in MODALITIES}
        )
        disc_keys = [f"{m}_{level}" for m in MODALITIES for level in ("g", "s")]
        if cfg.similarity == "pairwise-mi":
            disc_keys += [x + y for x, y in PAIRS]
        self.discriminators = nn.ModuleDict({k: MIDiscriminator(cfg.hidden) for k in disc_keys})
        self.fusion = FusionBlock(spec(1), cfg.seq_len, cfg.dominant_depth)
        self.prediction = PredictionHead(spec(cfg.predict_depth))

    @classmethod
    def from_configs(
        cls,
        model_cfg: ModelConfig,
        training_cfg: TrainingConfig,
        steps: Tuple[int, int, int],
        dims: Tuple[int, int, int],
    ) -> "IFusionModel":
        return cls(
            model_cfg,
            steps,
            dims,
            DecoderLossWeights(
                mse_global=training_cfg.lambda_mse_global,
                mi_global=training_cfg.lambda_mi_global,
                mse_semantic=training_cfg.lambda_mse_semantic,
                mi_semantic=training_cfg.lambda_mi_semantic,
            ),
        )

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        return {name: list(getattr(self, name).parameters()) for name in PARAMETER_GROUPS}

    def parameter_counts(self) -> Dict[str, int]:
        return {
            name: sum(p.numel() for p in params)
            for name, params in self.parameter_groups().items()
        }

    def clean_targets(
        self, clean: Mapping[str, Tensor]
    ) -> Tuple[Dict[str, Tensor], Dict[str, Tensor]]:
        """Gradient-stopped embeddings and shared semantics of the complete inputs."""
        with torch.no_grad():
            emb = {m: self.embedding[m](clean[m]) for m in MODALITIES}
            sem = {m: self.shared_encoders[m](emb[m]) for m in MODALITIES}
        return emb, sem

    def forward(
        self,
        corrupted: Mapping[str, Tensor],
        clean: Optional[Mapping[str, Tensor]] = None,
        *,
        integrity_labels: Optional[Tensor] = None,
        labels: Optional[Tensor] = None,
        with_prediction: bool = True,
        perm: Optional[Tensor] = None,
        detach_completion: bool = False,
    ) -> ForwardOutput:
        """
        Run the corrupted pass.

        Reconstruction terms are computed when `clean` is given, the integrity term when
        `integrity_labels` is given and the prediction term when `labels` is given and
        `with_prediction` is set.

        With `detach_completion` the completion branch reads detached embeddings: its terms
        keep their values but send no gradient into the embedding. Stage 1 uses this, so
        only the integrity term shapes the embedding while completion is frozen.
        """
        embedded = {m: embed_modality(self.embedding[m], corrupted[m], m) for m in MODALITIES}
        raw = torch.stack(
            [estimate_integrity(self.integrity[m], embedded[m]) for m in MODALITIES], dim=1
        )
        clamped = raw.detach().clamp(0.0, 1.0)
        used = clamped if self.cfg.integrity_weighting else torch.ones_like(clamped)

        source = embedded
        if detach_completion:
            source = {m: EmbeddedModality(e.values.detach(), m) for m, e in embedded.items()}
        pairs = {
            m: disentangle(self.shared_encoders[m], self.private_encoders[m], source[m])
            for m in MODALITIES
        }
        surrogates: Dict[str, Tensor] = {}
        for j, m in enumerate(MODALITIES):
            o1, o2 = other_modalities(m)
            surrogates[m] = build_surrogate(
                source[m].values, used[:, j], pairs[o1].shared, pairs[o2].shared
            ).values

        terms: Dict[str, Tensor] = {}
        bundles: Optional[Dict[str, ReconstructionBundle]] = None
        if integrity_labels is not None:
            terms["integrity"] = integrity_loss(raw, integrity_labels.to(raw.dtype))
        if clean is not None:
            enc = encoder_completion_loss(
                pairs,
                similarity=self.cfg.similarity,
                mi_discriminators=self.discriminators,  # type: ignore[arg-type]
                perm=perm,
            )
            clean_emb, clean_sem = self.clean_targets(clean)
            bundles, dec = decode_and_validate(
                surrogates,
                clean_emb,
                clean_sem,
                self.decoders,  # type: ignore[arg-type]
                self.shared_encoders,  # type: ignore[arg-type]
                self.discriminators,  # type: ignore[arg-type]
                weights=self.decoder_weights,
                perm=perm,
            )
            terms.update(
                similarity=enc.similarity,
                difference=enc.difference,
                rec_enc=enc.total,
                mse_global=dec.mse_global,
                mi_global=dec.mi_global,
                mse_semantic=dec.mse_semantic,
                mi_semantic=dec.mi_semantic,
                rec_dec=dec.total,
            )

        dominant: Optional[str] = None
        fusion_state: Optional[FusionState] = None
        prediction: Optional[PredictionOutput] = None
        if with_prediction:
            dominant = select_dominant(clamped)
            if self.cfg.fusion == "average":
                h = average_fusion(surrogates)
                prediction = predict(self.prediction, h, h)
            else:
                fusion_state = self.fusion(surrogates, dominant)
                prediction = predict(
                    self.prediction, fusion_state.h_dom[-1], fusion_state.h_fuse[-1]
                )
            if labels is not None:
                terms["prediction"] = prediction_loss(prediction.y_hat, labels.to(raw.dtype))

        return ForwardOutput(
            integrity_raw=raw,
            integrity_used=used,
            embedded={m: embedded[m].values for m in MODALITIES},
            pairs=pairs,
            surrogates=surrogates,
            losses=LossReport(**terms),
            bundles=bundles,
            dominant=dominant,
            fusion=fusion_state,
            prediction=prediction,
        )


def to_tensors(
    features: Mapping[str, np.ndarray], dtype: torch.dtype = torch.float32
) -> Dict[str, Tensor]:
    return {m: torch.as_tensor(np.ascontiguousarray(features[m]), dtype=dtype) for m in MODALITIES}
