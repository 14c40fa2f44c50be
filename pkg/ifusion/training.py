"""Two-stage training loop with warm-up, cosine decay, early stopping and checkpoints."""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from torch.optim import AdamW

from . import events
from .completion import negative_permutation
from .config import RunConfig, TrainingConfig, parse_config
from .data import Dataset, batch_iterator
from .evaluation import METRIC_COLUMNS, compute_metrics, predict_dataset, write_scatter
from .event_store import EventStore
from .exceptions import CheckpointError, ConfigError, DivergenceError, IFusionError
from .losses import LossWeights, total_loss
from .missingness import MissingPlan, apply_missingness, sample_missing_plan, unknown_vector
from .model import PARAMETER_GROUPS, IFusionModel, to_tensors
from .provenance import derive_seed

logger = logging.getLogger(__name__)

STAGE1_GROUPS: FrozenSet[str] = frozenset({"embedding", "integrity"})
BEST_NAME = "best.pt"
LAST_NAME = "last.pt"
TRAIN_LOG_NAME = "train_log.jsonl"


def stage_parameter_mask(stage: int) -> FrozenSet[str]:
    """Trainable parameter groups: projections and integrity estimation in stage 1, all in 2."""
    if stage == 1:
        return STAGE1_GROUPS
    if stage == 2:
        return frozenset(PARAMETER_GROUPS)
    raise ConfigError(f"stage must be 1 or 2, got {stage}", error_code="OUT_OF_RANGE")


def apply_stage(model: IFusionModel, stage: int) -> Dict[str, int]:
    """Set requires_grad per group. Returns trainable parameter counts per group."""
    mask = stage_parameter_mask(stage)
    counts: Dict[str, int] = {}
    for name, params in model.parameter_groups().items():
        for p in params:
            p.requires_grad_(name in mask)
        counts[name] = sum(p.numel() for p in params) if name in mask else 0
    return counts


def scheduled_lr(epoch: int, *, base_lr: float, warmup_epochs: int, epochs: int) -> float:
    """Linear warm-up to base_lr over warmup_epochs, then cosine decay reaching 0 at epochs."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    span = epochs - warmup_epochs
    if span <= 0:
        return base_lr
    progress = (epoch - warmup_epochs) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class Checkpoint:
    model_state: Dict[str, torch.Tensor]
    optimizer_state: Dict[str, Any]
    epoch: int
    best_metric: Optional[float]
    config: Dict[str, Any]
    config_hash: str
    steps: List[int]
    dims: List[int]
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def run_config(self) -> RunConfig:
        return parse_config(self.config)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "model": ckpt.model_state,
            "optimizer": ckpt.optimizer_state,
            "epoch": ckpt.epoch,
            "best_metric": ckpt.best_metric,
            "config": ckpt.config,
            "config_hash": ckpt.config_hash,
            "steps": list(ckpt.steps),
            "dims": list(ckpt.dims),
            "extra": ckpt.extra,
        },
        p,
    )
    return p


def load_checkpoint(
    path: Union[str, Path], *, expected_hash: Optional[str] = None
) -> Checkpoint:
    """
    Raises:
        CheckpointError: CHECKPOINT_MISSING, or CONFIG_HASH_MISMATCH when the embedded
            config does not hash to the stored value or differs from expected_hash.
    """
    p = Path(path)
    if not p.exists():
        raise CheckpointError(
            f"Checkpoint not found: {p}", error_code="CHECKPOINT_MISSING", details={"path": str(p)}
        )
    raw = torch.load(p, map_location="cpu", weights_only=True)
    ckpt = Checkpoint(
        model_state=raw["model"],
        optimizer_state=raw["optimizer"],
        epoch=int(raw["epoch"]),
        best_metric=raw["best_metric"],
        config=raw["config"],
        config_hash=raw["config_hash"],
        steps=list(raw["steps"]),
        dims=list(raw["dims"]),
        extra=raw.get("extra", {}),
    )
    actual = ckpt.run_config.config_hash
    if actual != ckpt.config_hash or (expected_hash is not None and expected_hash != actual):
        raise CheckpointError(
            "Checkpoint config hash does not match",
            error_code="CONFIG_HASH_MISMATCH",
            details={
                "path": str(p),
                "stored": ckpt.config_hash,
                "actual": actual,
                "expected": expected_hash,
            },
        )
    return ckpt


def restore_model(ckpt: Checkpoint) -> IFusionModel:
    cfg = ckpt.run_config
    model = IFusionModel.from_configs(
        cfg.model, cfg.training, tuple(ckpt.steps), tuple(ckpt.dims)  # type: ignore[arg-type]
    )
    model.load_state_dict(ckpt.model_state)
    model.eval()
    return model


def dataset_dims(dataset: Dataset) -> Tuple[int, int, int]:
    d = dataset.dims
    return (d["l"][1], d["a"][1], d["v"][1])


@dataclass(frozen=True)
class TrainResult:
    run_id: str
    best_path: Path
    last_path: Path
    best_metric: Optional[float]
    best_epoch: Optional[int]
    epochs_run: int
    stopped_early: bool
    log: List[Dict[str, Any]]


class _PlanSource:
    """Training plans: one fixed plan, or a fresh one per epoch when resampling."""

    def __init__(self, config: RunConfig, n: int, steps: Tuple[int, int, int]) -> None:
        self.config = config
        self.n = n
        self.steps = steps
        self._fixed: Optional[MissingPlan] = None

    def for_epoch(self, epoch: int) -> MissingPlan:
        miss = self.config.missingness
        seed = self.config.training.seed
        if miss.resample_per_epoch:
            return sample_missing_plan(
                self.n,
                self.steps,
                miss.drop_rate,
                derive_seed(seed, "train-plan", epoch),
                intra_ratio=miss.intra_ratio,
            )
        if self._fixed is None:
            self._fixed = sample_missing_plan(
                self.n, self.steps, miss.drop_rate, seed, intra_ratio=miss.intra_ratio
            )
        return self._fixed


def valid_plan(config: RunConfig, dataset: Dataset) -> MissingPlan:
    miss = config.missingness
    return sample_missing_plan(
        len(dataset),
        dataset.steps,
        miss.drop_rate,
        derive_seed(config.training.seed, "valid-plan"),
        intra_ratio=miss.intra_ratio,
    )


def run_epoch(
    model: IFusionModel,
    optimizer: torch.optim.Optimizer,
    dataset: Dataset,
    plan: MissingPlan,
    unknown: np.ndarray,
    *,
    cfg: TrainingConfig,
    weights: LossWeights,
    stage: int,
    epoch: int,
) -> Dict[str, float]:
    """One pass over the training split. Returns batch-size-weighted mean loss terms."""
    model.train()
    dtype = next(model.parameters()).dtype
    sums: Dict[str, float] = {}
    seen = 0
    for step, batch in enumerate(
        batch_iterator(dataset, cfg.batch_size, cfg.seed, shuffle=True, epoch=epoch)
    ):
        n = len(batch)
        if n < 2:
            logger.debug("epoch %d: skipping trailing batch of one sample", epoch)
            continue
        sub = plan.take(batch.indices)
        corrupted = apply_missingness(batch, sub, unknown)
        perm = torch.as_tensor(
            negative_permutation(n, seed=cfg.seed, stream=epoch * 100_000 + step)
        )
        out = model(
            to_tensors(corrupted.features, dtype),
            to_tensors(batch.features, dtype),
            integrity_labels=torch.as_tensor(sub.integrity, dtype=dtype),
            labels=torch.as_tensor(batch.labels, dtype=dtype),
            with_prediction=stage == 2,
            perm=perm,
            detach_completion=stage == 1,
        )
        bad = out.losses.first_non_finite()
        if bad is not None:
            raise DivergenceError(bad[0], epoch=epoch, step=step, value=bad[1])
        loss = total_loss(stage, out.losses, weights)
        if not torch.isfinite(loss):
            raise DivergenceError("total", epoch=epoch, step=step, value=float(loss))

        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        for name, value in (("total", float(loss.detach())), *out.losses.to_dict().items()):
            sums[name] = sums.get(name, 0.0) + value * n
        seen += n
    return {name: value / max(seen, 1) for name, value in sums.items()}


def train(
    config: RunConfig,
    splits: Mapping[str, Dataset],
    *,
    store: EventStore,
    resume: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    Train on splits["train"], monitor validation MAE on splits["valid"].

    Writes best.pt, last.pt, config.json and train_log.jsonl into config.output_dir and
    records the run in the event store.

    Raises:
        DivergenceError: a loss term became non-finite; details name the term.
        CheckpointError: resume checkpoint missing or from another config.
    """
    t = config.training
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.dump(out_dir / "config.json")
    train_ds, valid_ds = splits["train"], splits["valid"]
    steps = train_ds.steps
    dims = dataset_dims(train_ds)

    torch.manual_seed(t.seed)
    model = IFusionModel.from_configs(config.model, t, steps, dims)  # type: ignore[arg-type]
    optimizer = AdamW(model.parameters(), lr=t.lr, weight_decay=t.weight_decay)
    weights = LossWeights.from_training(t)
    unknown = unknown_vector(dims[0], config.missingness.unknown_fill)
    plans = _PlanSource(config, len(train_ds), steps)
    v_plan = valid_plan(config, valid_ds)

    start_epoch = 0
    best: Optional[float] = None
    best_epoch: Optional[int] = None
    stale = 0
    if resume is not None:
        ckpt = load_checkpoint(resume, expected_hash=config.config_hash)
        model.load_state_dict(ckpt.model_state)
        start_epoch = ckpt.epoch + 1
        best = ckpt.best_metric
        best_epoch = ckpt.extra.get("best_epoch")
        stale = int(ckpt.extra.get("stale", 0))
        optimizer.load_state_dict(ckpt.optimizer_state)
        if "torch_rng" in ckpt.extra:
            torch.set_rng_state(ckpt.extra["torch_rng"])
        logger.info("resuming from %s at epoch %d", resume, start_epoch)

    run_id = store.create_run(command="train", config_hash=config.config_hash)
    store.append(
        run_id,
        events.RUN_STARTED,
        {
            "config_hash": config.config_hash,
            "parameters": model.parameter_counts(),
            "start_epoch": start_epoch,
            "n_train": len(train_ds),
            "n_valid": len(valid_ds),
        },
    )

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(
            model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
            optimizer_state=optimizer.state_dict(),
            epoch=epoch,
            best_metric=best,
            config=config.to_dict(),
            config_hash=config.config_hash,
            steps=list(steps),
            dims=list(dims),
            extra={"best_epoch": best_epoch, "stale": stale, "torch_rng": torch.get_rng_state()},
        )

    best_path = out_dir / BEST_NAME
    last_path = out_dir / LAST_NAME
    log: List[Dict[str, Any]] = []
    stage: Optional[int] = None
    stopped_early = False
    epochs_run = 0
    try:
        for epoch in range(start_epoch, t.epochs):
            s = t.stage_of(epoch)
            if s != stage:
                trainable = apply_stage(model, s)
                payload = {"stage": s, "epoch": epoch, "trainable": trainable}
                store.append(run_id, events.STAGE_STARTED, payload)
                logger.info("stage %d from epoch %d", s, epoch)
                stage = s
            lr = scheduled_lr(epoch, base_lr=t.lr, warmup_epochs=t.warmup_epochs, epochs=t.epochs)
            for group in optimizer.param_groups:
                group["lr"] = lr

            terms = run_epoch(
                model,
                optimizer,
                train_ds,
                plans.for_epoch(epoch),
                unknown,
                cfg=t,
                weights=weights,
                stage=s,
                epoch=epoch,
            )
            preds = predict_dataset(model, valid_ds, v_plan, unknown, batch_size=t.batch_size)
            report = compute_metrics(preds.y_hat, preds.labels, f1=config.evaluation.f1)
            valid_mae = report.mae
            valid_ie = float(
                np.mean(np.sum((preds.integrity_pred - preds.integrity_true) ** 2, axis=1))
            )
            row = {
                "epoch": epoch,
                "stage": s,
                "lr": lr,
                **terms,
                **{f"valid_{k}": getattr(report, k) for k in METRIC_COLUMNS},
                "valid_integrity": valid_ie,
            }
            store.append(run_id, events.EPOCH_COMPLETED, row)
            log.append(row)
            epochs_run += 1
            logger.info(
                "epoch %d stage %d lr=%.3g loss=%.4f valid_mae=%.4f valid_acc7=%.4f",
                epoch, s, lr, terms.get("total", float("nan")), valid_mae, report.acc7,
            )

            if epoch in t.scatter_epochs:
                stats = write_scatter(
                    preds.integrity_true,
                    preds.integrity_pred,
                    out_dir,
                    prefix=f"scatter_epoch{epoch}",
                    plots=False,
                )
                store.append(
                    run_id,
                    events.SCATTER_EMITTED,
                    {"epoch": epoch, "r2": {m: st.r2 for m, st in stats.items()}},
                )

            if s == 2:
                if best is None or valid_mae < best:
                    best, best_epoch, stale = valid_mae, epoch, 0
                    save_checkpoint(best_path, snapshot(epoch))
                    store.append(
                        run_id,
                        events.CHECKPOINT_SAVED,
                        {"epoch": epoch, "path": str(best_path), "valid_mae": valid_mae},
                    )
                else:
                    stale += 1
            save_checkpoint(last_path, snapshot(epoch))

            if s == 2 and stale >= t.early_stop_patience:
                stopped_early = True
                store.append(
                    run_id,
                    events.EARLY_STOPPED,
                    {"epoch": epoch, "best_epoch": best_epoch, "best_valid_mae": best},
                )
                logger.info("early stop at epoch %d (best %s)", epoch, best_epoch)
                break

        if not best_path.exists() and last_path.exists():
            # No stage-2 epoch ran: the last state is the only candidate.
            shutil.copyfile(last_path, best_path)
        store.append(
            run_id,
            events.RUN_COMPLETED,
            {"epochs_run": epochs_run, "best_epoch": best_epoch, "best_valid_mae": best},
        )
        store.set_run_status(run_id, "COMPLETED")
    except IFusionError as e:
        store.append(run_id, events.RUN_FAILED, e.to_dict())
        store.set_run_status(run_id, "FAILED")
        raise
    finally:
        store.export_jsonl(run_id, events.EPOCH_COMPLETED, out_dir / TRAIN_LOG_NAME)

    return TrainResult(
        run_id=run_id,
        best_path=best_path,
        last_path=last_path,
        best_metric=best,
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        stopped_early=stopped_early,
        log=log,
    )
