"""Inter- and intra-modality missingness simulation with exact integrity labels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import MODALITIES
from .data import Batch
from .exceptions import ConfigError, ShapeMismatchError
from .prng import DOMAIN_PLAN, CounterRNG
from .schema import PLAN_SCHEMA, validate

# Nonempty proper subsets of (l, a, v) that an inter-modality drop removes.
DROP_SUBSETS: Tuple[Tuple[int, ...], ...] = ((0,), (1,), (2,), (0, 1), (0, 2), (1, 2))

# Retained modalities per retention mode.
MODE_RETAINED: Dict[int, Tuple[str, ...]] = {
    0: ("a", "v"),
    1: ("l", "v"),
    2: ("l", "a"),
    3: ("v",),
    4: ("a",),
    5: ("l",),
}

# Counter layout of one sample's stream.
_CTR_DROP = 0
_CTR_SUBSET = 1
_CTR_RATIO = 2  # + modality index
_CTR_STEPS = 1 << 20  # + modality index << 16 + step


def masked_count(ratio: np.ndarray, steps: int) -> np.ndarray:
    """round(ratio * steps), half away from zero, clipped to [0, steps]."""
    scaled = np.asarray(ratio, dtype=np.float64) * steps
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, 0, steps).astype(np.int64)


@dataclass(frozen=True)
class MissingPlan:
    """
    Per-sample missingness.

    inter_drop: [N, 3] bool, column order l, a, v.
    intra_mask: modality -> [N, T_m] bool, True = step kept.
    integrity: [N, 3] float, kept steps / T_m.
    """

    inter_drop: np.ndarray
    intra_mask: Mapping[str, np.ndarray]
    integrity: np.ndarray
    steps: Tuple[int, int, int]
    seed: Optional[int] = None
    drop_rate: Optional[float] = None
    mode: Optional[int] = None

    def __post_init__(self) -> None:
        n = self.inter_drop.shape[0]
        if self.inter_drop.shape != (n, 3) or self.integrity.shape != (n, 3):
            raise ShapeMismatchError(
                "inter_drop and integrity must both be [N, 3]",
                inter_drop=self.inter_drop.shape,
                integrity=self.integrity.shape,
            )
        for j, m in enumerate(MODALITIES):
            if self.intra_mask[m].shape != (n, self.steps[j]):
                raise ShapeMismatchError(
                    f"intra_mask[{m}] must be [N, T_{m}]",
                    expected=(n, self.steps[j]),
                    actual=self.intra_mask[m].shape,
                )
        if n and self.inter_drop.all(axis=1).any():
            raise ConfigError("Every sample must keep at least one modality")

    @property
    def n(self) -> int:
        return int(self.inter_drop.shape[0])

    @property
    def kept_steps(self) -> np.ndarray:
        return np.stack([self.intra_mask[m].sum(axis=1) for m in MODALITIES], axis=1)

    def take(self, indices: Sequence[int]) -> "MissingPlan":
        idx = np.asarray(indices, dtype=np.int64)
        return MissingPlan(
            inter_drop=self.inter_drop[idx],
            intra_mask={m: self.intra_mask[m][idx] for m in MODALITIES},
            integrity=self.integrity[idx],
            steps=self.steps,
            seed=self.seed,
            drop_rate=self.drop_rate,
            mode=self.mode,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "seed": self.seed,
            "drop_rate": self.drop_rate,
            "mode": self.mode,
            "steps": dict(zip(MODALITIES, self.steps)),
            "inter_drop": self.inter_drop.tolist(),
            "intra_mask": {m: self.intra_mask[m].tolist() for m in MODALITIES},
            "integrity": self.integrity.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "MissingPlan":
        validate(doc, PLAN_SCHEMA)
        steps = (doc["steps"]["l"], doc["steps"]["a"], doc["steps"]["v"])
        n = int(doc["n"])
        return cls(
            inter_drop=np.array(doc["inter_drop"], dtype=bool).reshape(n, 3),
            intra_mask={
                m: np.array(doc["intra_mask"][m], dtype=bool).reshape(n, steps[j])
                for j, m in enumerate(MODALITIES)
            },
            integrity=np.array(doc["integrity"], dtype=np.float64).reshape(n, 3),
            steps=steps,
            seed=doc.get("seed"),
            drop_rate=doc.get("drop_rate"),
            mode=doc.get("mode"),
        )


def _integrity_from_masks(masks: Mapping[str, np.ndarray], steps: Sequence[int]) -> np.ndarray:
    return np.stack(
        [masks[m].sum(axis=1) / float(steps[j]) for j, m in enumerate(MODALITIES)], axis=1
    )


def sample_missing_plan(
    n: int,
    steps_per_modality: Tuple[int, int, int],
    drop_rate: float,
    seed: int,
    *,
    intra_ratio: Optional[float] = None,
    offset: int = 0,
) -> MissingPlan:
    """
    Draw a reproducible plan for n samples.

    With probability drop_rate a sample drops one of the six nonempty proper subsets of
    modalities (uniformly). Every surviving modality masks round(r * T_m) steps chosen
    uniformly at random, r ~ U[0, 1] unless intra_ratio fixes it.

    Sample i uses counter stream offset + i, so a sample's plan does not depend on n.
    """
    if not 0.0 <= drop_rate <= 1.0:
        raise ConfigError(
            f"drop_rate must be in [0, 1], got {drop_rate}",
            error_code="OUT_OF_RANGE",
            details={"drop_rate": drop_rate},
        )
    if intra_ratio is not None and not 0.0 <= intra_ratio <= 1.0:
        raise ConfigError(
            f"intra_ratio must be in [0, 1], got {intra_ratio}",
            error_code="OUT_OF_RANGE",
            details={"intra_ratio": intra_ratio},
        )
    rng = CounterRNG(seed, DOMAIN_PLAN)
    streams = np.arange(offset, offset + n, dtype=np.uint64)

    dropped = rng.uniform(streams, _CTR_DROP) < drop_rate
    subset = np.minimum(
        np.floor(rng.uniform(streams, _CTR_SUBSET) * len(DROP_SUBSETS)).astype(np.int64),
        len(DROP_SUBSETS) - 1,
    )
    inter_drop = np.zeros((n, 3), dtype=bool)
    for s, cols in enumerate(DROP_SUBSETS):
        rows = dropped & (subset == s)
        for c in cols:
            inter_drop[rows, c] = True

    masks: Dict[str, np.ndarray] = {}
    for j, m in enumerate(MODALITIES):
        t = steps_per_modality[j]
        if intra_ratio is None:
            ratio = rng.uniform(streams, _CTR_RATIO + j)
        else:
            ratio = np.full(n, intra_ratio)
        n_masked = masked_count(ratio, t)
        counters = np.uint64(_CTR_STEPS + (j << 16)) + np.arange(t, dtype=np.uint64)
        keys = rng.bits(streams[:, None], counters[None, :])
        order = np.argsort(keys, axis=1, kind="stable")
        rank = np.argsort(order, axis=1, kind="stable")
        kept = rank >= n_masked[:, None]
        kept[inter_drop[:, j]] = False
        masks[m] = kept

    return MissingPlan(
        inter_drop=inter_drop,
        intra_mask=masks,
        integrity=_integrity_from_masks(masks, steps_per_modality),
        steps=tuple(steps_per_modality),  # type: ignore[arg-type]
        seed=seed,
        drop_rate=drop_rate,
    )


def mode_plan(mode_id: int, n: int, steps: Tuple[int, int, int]) -> MissingPlan:
    """Keep exactly the modalities of a retention mode, complete; drop the others."""
    if mode_id not in MODE_RETAINED:
        raise ConfigError(
            f"Unknown retention mode {mode_id}; expected 0..5",
            error_code="OUT_OF_RANGE",
            details={"mode": mode_id},
        )
    retained = MODE_RETAINED[mode_id]
    inter_drop = np.tile(np.array([m not in retained for m in MODALITIES]), (n, 1))
    masks = {
        m: np.full((n, steps[j]), m in retained, dtype=bool) for j, m in enumerate(MODALITIES)
    }
    return MissingPlan(
        inter_drop=inter_drop,
        intra_mask=masks,
        integrity=_integrity_from_masks(masks, steps),
        steps=steps,
        mode=mode_id,
    )


@dataclass(frozen=True)
class CorruptedBatch:
    features: Mapping[str, np.ndarray]
    plan: MissingPlan
    labels: np.ndarray


def apply_missingness(
    batch: Batch,
    plan: MissingPlan,
    unknown_vector: np.ndarray,
) -> CorruptedBatch:
    """
    Replace masked steps: zeros for acoustic/visual, unknown_vector for language.

    plan rows must be aligned with batch rows. Kept steps are copied bit for bit.
    """
    if plan.n != len(batch):
        raise ShapeMismatchError(
            "plan and batch have different sample counts", plan=plan.n, batch=len(batch)
        )
    d_l = batch.features["l"].shape[2]
    unknown = np.asarray(unknown_vector, dtype=np.float32)
    if unknown.shape != (d_l,):
        raise ShapeMismatchError(
            "unknown_vector must have shape [d_l]", expected=(d_l,), actual=unknown.shape
        )
    out: Dict[str, np.ndarray] = {}
    for j, m in enumerate(MODALITIES):
        x = batch.features[m]
        if x.shape[1] != plan.steps[j]:
            raise ShapeMismatchError(
                f"plan steps for {m} do not match the batch",
                plan=plan.steps[j],
                batch=x.shape[1],
            )
        fill = unknown[None, None, :] if m == "l" else np.zeros((1, 1, x.shape[2]), np.float32)
        out[m] = np.where(plan.intra_mask[m][:, :, None], x, fill).astype(np.float32)
    return CorruptedBatch(features=out, plan=plan, labels=batch.labels)


def unknown_vector(d_l: int, fill: float = 0.0) -> np.ndarray:
    return np.full(d_l, fill, dtype=np.float32)
