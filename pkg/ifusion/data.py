"""Utterance datasets: synthetic generation, feature archives, batching."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import MODALITIES, SyntheticConfig
from .exceptions import ArchiveLoadError, ConfigError
from .prng import DOMAIN_SHUFFLE, CounterRNG
from .schema import MANIFEST_SCHEMA, validate

logger = logging.getLogger(__name__)

SPLITS: Tuple[str, str, str] = ("train", "valid", "test")
LABEL_RANGE = 3.0
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class UtteranceSample:
    features_l: np.ndarray
    features_a: np.ndarray
    features_v: np.ndarray
    label: float
    id: str

    def features(self, modality: str) -> np.ndarray:
        return {"l": self.features_l, "a": self.features_a, "v": self.features_v}[modality]


@dataclass(frozen=True)
class Dataset:
    """
    One split of utterances, stored modality-major.

    features[m] has shape [N, T_m, d_m] (float32), labels has shape [N] (float64).
    Arrays are made read-only on construction.
    """

    split: str
    features: Mapping[str, np.ndarray]
    labels: np.ndarray
    ids: Tuple[str, ...]

    def __post_init__(self) -> None:
        n = len(self.ids)
        if n == 0:
            raise ConfigError(f"Dataset split '{self.split}' is empty")
        if len(set(self.ids)) != n:
            raise ConfigError(f"Dataset split '{self.split}' has duplicate ids")
        if self.labels.shape != (n,):
            raise ConfigError(
                f"labels shape {self.labels.shape} does not match {n} ids",
                details={"split": self.split},
            )
        if np.any(np.abs(self.labels) > LABEL_RANGE) or not np.all(np.isfinite(self.labels)):
            raise ConfigError(
                "labels must be finite and lie in [-3, 3]", details={"split": self.split}
            )
        for m in MODALITIES:
            arr = self.features[m]
            if arr.ndim != 3 or arr.shape[0] != n:
                raise ConfigError(
                    f"features[{m}] must have shape [N, T, d] with N={n}, got {arr.shape}",
                    details={"split": self.split, "modality": m},
                )
            if not np.all(np.isfinite(arr)):
                raise ConfigError(
                    f"features[{m}] contains non-finite values",
                    details={"split": self.split, "modality": m},
                )
            arr.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, index: int) -> UtteranceSample:
        return UtteranceSample(
            features_l=self.features["l"][index],
            features_a=self.features["a"][index],
            features_v=self.features["v"][index],
            label=float(self.labels[index]),
            id=self.ids[index],
        )

    @property
    def dims(self) -> Dict[str, Tuple[int, int]]:
        return {m: (self.features[m].shape[1], self.features[m].shape[2]) for m in MODALITIES}

    @property
    def steps(self) -> Tuple[int, int, int]:
        d = self.dims
        return (d["l"][0], d["a"][0], d["v"][0])


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Generator parameters with known latent structure.

    Per sample: shared latent z_s ~ N(0, I_k), private latents z_m ~ N(0, I_k),
    label = clamp(w . z_s, -3, 3), step t of modality m = A_m z_s + B_m z_m + noise * eps_t.
    """

    n_samples: Mapping[str, int]
    latent_dim: int
    weights: np.ndarray
    shared_maps: Mapping[str, np.ndarray]
    private_maps: Mapping[str, np.ndarray]
    steps: Tuple[int, int, int]
    noise_scale: float
    seed: int
    smooth: bool = False

    def __post_init__(self) -> None:
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1", details={"latent_dim": self.latent_dim})
        if self.noise_scale < 0:
            raise ConfigError(
                "noise_scale must be >= 0", details={"noise_scale": self.noise_scale}
            )
        if self.weights.shape != (self.latent_dim,):
            raise ConfigError(
                f"weights must have shape ({self.latent_dim},), got {self.weights.shape}"
            )
        for i, m in enumerate(MODALITIES):
            if self.steps[i] < 1:
                raise ConfigError(f"steps[{m}] must be >= 1")
            maps_by_name = (("shared_maps", self.shared_maps), ("private_maps", self.private_maps))
            for name, maps in maps_by_name:
                a = maps[m]
                if a.ndim != 2 or a.shape[1] != self.latent_dim or a.shape[0] < 1:
                    raise ConfigError(
                        f"{name}[{m}] must have shape [d_m, {self.latent_dim}], got {a.shape}",
                        details={"modality": m},
                    )

    @classmethod
    def from_config(cls, cfg: SyntheticConfig) -> "SyntheticSpec":
        """Draw w, A_m and B_m from the config seed."""
        seed = 0 if cfg.seed is None else cfg.seed
        k = cfg.latent_dim
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(k)
        w = w * (cfg.label_scale / max(float(np.linalg.norm(w)), 1e-12))
        shared: Dict[str, np.ndarray] = {}
        private: Dict[str, np.ndarray] = {}
        for i, m in enumerate(MODALITIES):
            d = cfg.dims[i]
            shared[m] = cfg.signal[i] * rng.standard_normal((d, k)) / np.sqrt(k)
            private[m] = cfg.private_scale * rng.standard_normal((d, k)) / np.sqrt(k)
        return cls(
            n_samples={"train": cfg.n_train, "valid": cfg.n_valid, "test": cfg.n_test},
            latent_dim=k,
            weights=w,
            shared_maps=shared,
            private_maps=private,
            steps=cfg.steps,
            noise_scale=cfg.noise_scale,
            seed=seed,
            smooth=cfg.smooth,
        )


def _moving_average3(eps: np.ndarray) -> np.ndarray:
    padded = np.pad(eps, ((0, 0), (1, 1), (0, 0)), mode="edge")
    return (padded[:, :-2] + padded[:, 1:-1] + padded[:, 2:]) / 3.0


def generate_synthetic_dataset(spec: SyntheticSpec, split: str = "train") -> Dataset:
    """
    Generate one split. Deterministic in (spec.seed, split).

    Draw order from default_rng([seed, split_index]): z_s [N, k]; then for l, a, v in
    turn: z_m [N, k] and eps_m [N, T_m, d_m].
    """
    if split not in SPLITS:
        raise ConfigError(f"Unknown split '{split}'", details={"split": split})
    n = spec.n_samples[split]
    if n < 1:
        raise ConfigError(f"n_samples[{split}] must be >= 1", details={"split": split})

    rng = np.random.default_rng([spec.seed, SPLITS.index(split)])
    z_shared = rng.standard_normal((n, spec.latent_dim))
    labels = np.clip(z_shared @ spec.weights, -LABEL_RANGE, LABEL_RANGE)

    features: Dict[str, np.ndarray] = {}
    for i, m in enumerate(MODALITIES):
        a_m = spec.shared_maps[m]
        b_m = spec.private_maps[m]
        z_private = rng.standard_normal((n, spec.latent_dim))
        eps = rng.standard_normal((n, spec.steps[i], a_m.shape[0]))
        if spec.smooth:
            eps = _moving_average3(eps)
        base = z_shared @ a_m.T + z_private @ b_m.T
        features[m] = (base[:, None, :] + spec.noise_scale * eps).astype(np.float32)

    ids = tuple(f"{split}_{i:06d}" for i in range(n))
    return Dataset(split=split, features=features, labels=labels.astype(np.float64), ids=ids)


def generate_synthetic_splits(cfg: SyntheticConfig) -> Dict[str, Dataset]:
    spec = SyntheticSpec.from_config(cfg)
    return {split: generate_synthetic_dataset(spec, split) for split in SPLITS}


def write_feature_archive(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write a dataset as manifest.json plus l.bin, a.bin, v.bin (little-endian float32)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest: Dict[str, Any] = {
        "split": dataset.split,
        "count": len(dataset),
        "dims": {m: {"T": t, "d": d} for m, (t, d) in dataset.dims.items()},
        "samples": [
            {"id": sid, "label": float(label)} for sid, label in zip(dataset.ids, dataset.labels)
        ],
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    for m in MODALITIES:
        np.ascontiguousarray(dataset.features[m], dtype="<f4").tofile(root / f"{m}.bin")
    return root


def load_feature_archive(path: Union[str, Path]) -> Dataset:
    """
    Read a feature archive directory.

    Raises:
        ArchiveLoadError: MANIFEST_MISSING, MANIFEST_INVALID, DIM_MISMATCH or NON_FINITE,
            with details naming the offending file (and sample id for NON_FINITE).
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise ArchiveLoadError(
            f"Archive manifest not found: {manifest_path}",
            error_code="MANIFEST_MISSING",
            file=str(manifest_path),
        )
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArchiveLoadError(
            f"Archive manifest is not valid JSON: {e}",
            error_code="MANIFEST_INVALID",
            file=str(manifest_path),
        ) from e
    validate(manifest, MANIFEST_SCHEMA, error_cls=_ManifestError)

    samples: List[Dict[str, Any]] = manifest["samples"]
    count = int(manifest["count"])
    if len(samples) != count:
        raise ArchiveLoadError(
            f"Manifest count {count} does not match {len(samples)} sample entries",
            error_code="MANIFEST_INVALID",
            file=str(manifest_path),
        )
    ids = tuple(str(s["id"]) for s in samples)

    features: Dict[str, np.ndarray] = {}
    for m in MODALITIES:
        t, d = int(manifest["dims"][m]["T"]), int(manifest["dims"][m]["d"])
        bin_path = root / f"{m}.bin"
        if not bin_path.exists():
            raise ArchiveLoadError(
                f"Archive binary missing: {bin_path}", error_code="DIM_MISMATCH", file=str(bin_path)
            )
        raw = np.fromfile(bin_path, dtype="<f4")
        expected = count * t * d
        if raw.size != expected:
            raise ArchiveLoadError(
                f"{bin_path.name} holds {raw.size} floats, manifest implies "
                f"{count} x {t} x {d} = {expected}",
                error_code="DIM_MISMATCH",
                file=str(bin_path),
                expected=expected,
                actual=int(raw.size),
            )
        arr = raw.reshape(count, t, d).astype(np.float32, copy=False)
        finite = np.isfinite(arr).reshape(count, -1).all(axis=1)
        if not finite.all():
            bad = int(np.argmin(finite))
            raise ArchiveLoadError(
                f"{bin_path.name} has non-finite values in sample '{ids[bad]}'",
                error_code="NON_FINITE",
                file=str(bin_path),
                sample_id=ids[bad],
            )
        features[m] = arr

    labels = np.array([float(s["label"]) for s in samples], dtype=np.float64)
    logger.info("loaded %s archive from %s (%d samples)", manifest["split"], root, count)
    return Dataset(split=str(manifest["split"]), features=features, labels=labels, ids=ids)


class _ManifestError(ArchiveLoadError):
    """Adapter so schema.validate can raise an ArchiveLoadError."""

    def __init__(
        self, message: str, *, error_code: str, details: Optional[Dict[str, Any]] = None
    ) -> None:
        super().__init__(
            message, error_code="MANIFEST_INVALID", file=MANIFEST_NAME, **(details or {})
        )


@dataclass(frozen=True)
class Batch:
    """Rows of a dataset selected by `indices`, in iteration order."""

    indices: np.ndarray
    ids: Tuple[str, ...]
    features: Mapping[str, np.ndarray]
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def take_batch(dataset: Dataset, indices: Sequence[int]) -> Batch:
    idx = np.asarray(indices, dtype=np.int64)
    return Batch(
        indices=idx,
        ids=tuple(dataset.ids[i] for i in idx),
        features={m: dataset.features[m][idx] for m in MODALITIES},
        labels=dataset.labels[idx],
    )


def epoch_order(n: int, *, seed: int, epoch: int, shuffle: bool) -> np.ndarray:
    if not shuffle:
        return np.arange(n, dtype=np.int64)
    return CounterRNG(seed, DOMAIN_SHUFFLE).permutation(n, stream=epoch).astype(np.int64)


def batch_iterator(
    dataset: Dataset,
    batch_size: int,
    seed: int,
    shuffle: bool,
    epoch: int = 0,
) -> Iterator[Batch]:
    """
    Yield batches covering every sample exactly once; the final partial batch is kept.

    The order depends only on (seed, epoch) when shuffling.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1", details={"batch_size": batch_size})
    order = epoch_order(len(dataset), seed=seed, epoch=epoch, shuffle=shuffle)
    for start in range(0, len(order), batch_size):
        yield take_batch(dataset, order[start : start + batch_size])
