"""Run configuration: one JSON document, schema-validated, hash-stamped."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from .exceptions import ConfigError
from .provenance import sha256_canonical
from .schema import CONFIG_SCHEMA, validate

MODALITIES: Tuple[str, str, str] = ("l", "a", "v")

PerModality = Tuple[int, int, int]


def _per_modality(values: Dict[str, Any]) -> Tuple[Any, Any, Any]:
    return (values["l"], values["a"], values["v"])


def _as_dict(values: Tuple[Any, ...]) -> Dict[str, Any]:
    return dict(zip(MODALITIES, values))


@dataclass(frozen=True)
class SyntheticConfig:
    n_train: int = 512
    n_valid: int = 128
    n_test: int = 128
    latent_dim: int = 4
    steps: PerModality = (12, 10, 10)
    dims: PerModality = (32, 5, 20)
    # Scale of the shared latent inside each modality; language carries the most.
    signal: Tuple[float, float, float] = (1.0, 0.7, 0.7)
    label_scale: float = 1.5
    noise_scale: float = 0.1
    private_scale: float = 0.5
    smooth: bool = False
    seed: Optional[int] = None

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "SyntheticConfig":
        kwargs = dict(doc)
        for key in ("steps", "dims", "signal"):
            if key in kwargs:
                kwargs[key] = _per_modality(kwargs[key])
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key in ("steps", "dims", "signal"):
            out[key] = _as_dict(getattr(self, key))
        return out


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    archive_dir: Optional[str] = None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "DataConfig":
        kwargs = dict(doc)
        kwargs["synthetic"] = SyntheticConfig.from_dict(kwargs.get("synthetic", {}))
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source,
            "archive_dir": self.archive_dir,
            "synthetic": self.synthetic.to_dict(),
        }


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 8
    hidden: int = 128
    heads: int = 4
    ff_mult: int = 4
    dropout: float = 0.1
    embed_depth: int = 2
    integrity_depth: int = 2
    encoder_depth: int = 2
    decoder_depth: int = 2
    dominant_depth: int = 2
    fusion_layers: int = 3
    predict_depth: int = 2
    similarity: str = "pairwise-mse"
    integrity_weighting: bool = True
    fusion: str = "integrity"


@dataclass(frozen=True)
class MissingnessConfig:
    drop_rate: float = 0.5
    # None: every surviving modality draws its ratio uniformly in [0, 1].
    intra_ratio: Optional[float] = None
    resample_per_epoch: bool = False
    unknown_fill: float = 0.0


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 1112
    batch_size: int = 64
    epochs: int = 150
    stage1_epochs: int = 40
    lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_epochs: int = 5
    early_stop_patience: int = 20
    alpha: float = 0.9
    beta: float = 0.4
    sigma: float = 1.0
    lambda_mse_global: float = 0.5
    lambda_mi_global: float = 0.4
    lambda_mse_semantic: float = 0.3
    lambda_mi_semantic: float = 0.2
    use_integrity_loss: bool = True
    use_encoder_rec_loss: bool = True
    use_decoder_rec_loss: bool = True
    two_stage: bool = True
    scatter_epochs: Tuple[int, ...] = ()

    @property
    def effective_stage1_epochs(self) -> int:
        return self.stage1_epochs if self.two_stage else 0

    def stage_of(self, epoch: int) -> int:
        return 1 if epoch < self.effective_stage1_epochs else 2

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "TrainingConfig":
        kwargs = dict(doc)
        if "scatter_epochs" in kwargs:
            kwargs["scatter_epochs"] = tuple(sorted(kwargs["scatter_epochs"]))
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["scatter_epochs"] = list(self.scatter_epochs)
        return out


@dataclass(frozen=True)
class EvaluationConfig:
    f1: str = "binary"
    own_tol: float = 0.25
    base_tol: float = 1.0
    plots: bool = True


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    missingness: MissingnessConfig = field(default_factory=MissingnessConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str = "runs/ifusion"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "data": self.data.to_dict(),
            "model": asdict(self.model),
            "missingness": asdict(self.missingness),
            "training": self.training.to_dict(),
            "evaluation": asdict(self.evaluation),
            "output_dir": self.output_dir,
        }

    @property
    def config_hash(self) -> str:
        return sha256_canonical(self.to_dict())

    def with_output_dir(self, output_dir: Union[str, Path]) -> "RunConfig":
        return replace(self, output_dir=str(output_dir))

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def parse_config(document: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Validate a config document and return the fully-defaulted RunConfig.

    Args:
        document: Parsed JSON object. None or {} yields all defaults.

    Raises:
        ConfigError: UNKNOWN_KEY, OUT_OF_RANGE, CONFIG_INVALID or MISSING_DATA_SOURCE.
    """
    doc = document or {}
    if not isinstance(doc, dict):
        raise ConfigError("Config document must be a JSON object", details={"path": "<root>"})
    validate(doc, CONFIG_SCHEMA)

    training = TrainingConfig.from_dict(doc.get("training", {}))
    data = DataConfig.from_dict(doc.get("data", {}))
    if data.synthetic.seed is None:
        data = replace(data, synthetic=replace(data.synthetic, seed=training.seed))

    config = RunConfig(
        data=data,
        model=ModelConfig(**doc.get("model", {})),
        missingness=MissingnessConfig(**doc.get("missingness", {})),
        training=training,
        evaluation=EvaluationConfig(**doc.get("evaluation", {})),
        output_dir=doc.get("output_dir", RunConfig.output_dir),
    )
    _check_cross_fields(config)
    return config


def _check_cross_fields(config: RunConfig) -> None:
    t = config.training
    if t.stage1_epochs > t.epochs:
        raise ConfigError(
            f"training.stage1_epochs ({t.stage1_epochs}) exceeds training.epochs ({t.epochs})",
            error_code="OUT_OF_RANGE",
            details={"path": "training.stage1_epochs"},
        )
    m = config.model
    if m.hidden % m.heads != 0:
        raise ConfigError(
            f"model.hidden ({m.hidden}) must be divisible by model.heads ({m.heads})",
            error_code="OUT_OF_RANGE",
            details={"path": "model.heads"},
        )
    if m.fusion_layers != m.dominant_depth + 1:
        raise ConfigError(
            f"model.fusion_layers ({m.fusion_layers}) must be model.dominant_depth + 1 "
            f"({m.dominant_depth + 1}): one fusion step per dominant representation",
            error_code="OUT_OF_RANGE",
            details={"path": "model.fusion_layers"},
        )
    if config.data.source == "archive" and not config.data.archive_dir:
        raise ConfigError(
            "data.source is 'archive' but data.archive_dir is not set",
            error_code="MISSING_DATA_SOURCE",
            details={"path": "data.archive_dir"},
        )


def apply_overrides(document: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """
    Apply dotted-key overrides such as "training.lr=2e-4".

    Values are parsed as JSON literals, falling back to plain strings.
    """
    doc = copy.deepcopy(document)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(
                f"Override '{item}' is not of the form key=value",
                details={"override": item},
            )
        key, raw = item.split("=", 1)
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(
                    f"Override '{key}' descends into a non-object value",
                    details={"path": key},
                )
            node = child
        node[parts[-1]] = value
    return doc


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
) -> RunConfig:
    document: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"Config file not found: {p}", details={"path": str(p)})
        try:
            document = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"Config file is not valid JSON: {e}", details={"path": str(p)}
            ) from e
    return parse_config(apply_overrides(document, overrides))
