"""Transformer building blocks shared by every stage of the model."""

from __future__ import annotations

from dataclasses import dataclass

from torch import nn

from .config import ModelConfig
from .exceptions import ConfigError


@dataclass(frozen=True)
class EncoderBlockSpec:
    depth: int
    width: int
    heads: int
    ff_width: int
    dropout: float

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ConfigError("encoder depth must be >= 1", details={"depth": self.depth})
        if self.width % self.heads != 0:
            raise ConfigError(
                f"width {self.width} is not divisible by heads {self.heads}",
                error_code="OUT_OF_RANGE",
                details={"width": self.width, "heads": self.heads},
            )

    @classmethod
    def from_model_config(cls, cfg: ModelConfig, depth: int) -> "EncoderBlockSpec":
        return cls(
            depth=depth,
            width=cfg.hidden,
            heads=cfg.heads,
            ff_width=cfg.ff_mult * cfg.hidden,
            dropout=cfg.dropout,
        )


def encoder_layer(spec: EncoderBlockSpec) -> nn.TransformerEncoderLayer:
    # Pre-norm: with every parameter zero the layer is the identity on its residual path.
    return nn.TransformerEncoderLayer(
        d_model=spec.width,
        nhead=spec.heads,
        dim_feedforward=spec.ff_width,
        dropout=spec.dropout,
        activation="gelu",
        batch_first=True,
        norm_first=True,
    )


def build_encoder(spec: EncoderBlockSpec) -> nn.TransformerEncoder:
    """Self-attention stack of spec.depth layers, [N, T, d] -> [N, T, d]."""
    return nn.TransformerEncoder(
        encoder_layer(spec), num_layers=spec.depth, enable_nested_tensor=False
    )


def cross_attention_layer(spec: EncoderBlockSpec) -> nn.TransformerDecoderLayer:
    """Pre-norm block: self-attention on the query stream, then attention into memory."""
    return nn.TransformerDecoderLayer(
        d_model=spec.width,
        nhead=spec.heads,
        dim_feedforward=spec.ff_width,
        dropout=spec.dropout,
        activation="gelu",
        batch_first=True,
        norm_first=True,
    )


def zero_parameters(module: nn.Module) -> None:
    for p in module.parameters():
        nn.init.zeros_(p)
