"""Loss bookkeeping and the staged total objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Dict, Iterator, Optional, Tuple

from torch import Tensor

from .config import TrainingConfig
from .exceptions import ConfigError, MissingLossTermError


@dataclass(frozen=True)
class LossReport:
    """
    Every term of one forward pass. Terms that were not computed stay None.

    rec_enc = similarity + difference; rec_dec is the weighted sum of the four
    reconstruction terms.
    """

    integrity: Optional[Tensor] = None
    similarity: Optional[Tensor] = None
    difference: Optional[Tensor] = None
    rec_enc: Optional[Tensor] = None
    mse_global: Optional[Tensor] = None
    mi_global: Optional[Tensor] = None
    mse_semantic: Optional[Tensor] = None
    mi_semantic: Optional[Tensor] = None
    rec_dec: Optional[Tensor] = None
    prediction: Optional[Tensor] = None

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        """Computed terms in declaration order."""
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value

    def first_non_finite(self) -> Optional[Tuple[str, float]]:
        for name, value in self.items():
            v = float(value.detach())
            if not math.isfinite(v):
                return name, v
        return None

    def to_dict(self) -> Dict[str, float]:
        return {name: float(value.detach()) for name, value in self.items()}


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.9
    beta: float = 0.4
    sigma: float = 1.0
    use_integrity_loss: bool = True
    use_encoder_rec_loss: bool = True
    use_decoder_rec_loss: bool = True

    @classmethod
    def from_training(cls, cfg: TrainingConfig) -> "LossWeights":
        return cls(
            alpha=cfg.alpha,
            beta=cfg.beta,
            sigma=cfg.sigma,
            use_integrity_loss=cfg.use_integrity_loss,
            use_encoder_rec_loss=cfg.use_encoder_rec_loss,
            use_decoder_rec_loss=cfg.use_decoder_rec_loss,
        )


def _require(parts: LossReport, name: str, stage: int) -> Tensor:
    value = getattr(parts, name)
    if value is None:
        raise MissingLossTermError(name, stage=stage)
    assert isinstance(value, Tensor)
    return value


def total_loss(stage: int, parts: LossReport, weights: LossWeights = LossWeights()) -> Tensor:
    """
    Stage 1: alpha * L_ie + beta * L_rec.
    Stage 2: alpha * L_ie + beta * L_rec + sigma * L_pred.

    L_rec = L_rec^enc + L_rec^dec. Disabled terms contribute zero but must still be present.
    """
    if stage not in (1, 2):
        raise ConfigError(
            f"stage must be 1 or 2, got {stage}",
            error_code="OUT_OF_RANGE",
            details={"stage": stage},
        )
    ie = _require(parts, "integrity", stage)
    rec_enc = _require(parts, "rec_enc", stage)
    rec_dec = _require(parts, "rec_dec", stage)
    rec = ie.new_zeros(())
    if weights.use_encoder_rec_loss:
        rec = rec + rec_enc
    if weights.use_decoder_rec_loss:
        rec = rec + rec_dec
    total = weights.beta * rec
    if weights.use_integrity_loss:
        total = weights.alpha * ie + total
    if stage == 2:
        total = total + weights.sigma * _require(parts, "prediction", stage)
    return total
