"""
RMSE regression training: Adam updates, per-epoch re-augmentation, min-validation checkpointing,
and three-member ensemble prediction.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

import preprocess as pp
from errors import NumericFaultError, ShapeMismatchError
from nn.checkpoint import Checkpoint, save_checkpoint, snapshot
from nn.layers import Network
from nn.vgg import VGGConfig, build_vgg
from services.tables import write_rows

log = logging.getLogger(__name__)

ENSEMBLE_SIZE = 3
HISTORY_COLUMNS = ("epoch", "train_rmse_ml", "val_rmse_ml")


class TrainConfig(BaseModel):
    learning_rate: float = Field(default=1e-4, gt=0.0, le=1.0)
    batch_size: int = Field(default=64, ge=1, le=4096)
    epochs: int = Field(default=1000, ge=1, le=100_000)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    augment: bool = True
    augment_params: pp.AugmentParams = Field(default_factory=pp.AugmentParams)
    seed: int = Field(default=0, ge=0)
    target: Literal["edv", "esv"] = "edv"
    init_output_bias: bool = True


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.inputs.ndim != 4:
            raise ShapeMismatchError(f"dataset inputs must be (N, C, H, W), got {self.inputs.shape}")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeMismatchError("dataset inputs and targets differ in length")

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @classmethod
    def from_samples(cls, samples: Sequence) -> Dataset:
        if not samples:
            return cls(np.zeros((0, 1, 1, 1)), np.zeros(0))
        return cls(
            np.stack([s.inputs for s in samples]),
            np.array([s.target_ml for s in samples], dtype=np.float64),
            tuple(s.study_id for s in samples),
        )


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_rmse_ml: float
    val_rmse_ml: float


@dataclass(frozen=True, eq=False)
class TrainResult:
    best: Checkpoint
    history: tuple[EpochRecord, ...]
    fault: str | None = None


def rmse_loss(preds: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("rmse_loss needs a non-empty batch")
    if p.shape != t.shape:
        raise ShapeMismatchError(f"predictions {p.shape} and targets {t.shape} differ")
    diff = p - t
    loss = float(np.sqrt(np.mean(diff**2)))
    if loss == 0.0:
        return 0.0, np.zeros_like(diff)
    return loss, diff / (p.size * loss)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    t = state.t + 1
    new_params: dict[str, np.ndarray] = {}
    m_out: dict[str, np.ndarray] = {}
    v_out: dict[str, np.ndarray] = {}
    for key, theta in params.items():
        g = grads.get(key)
        if g is None:
            raise KeyError(f"no gradient for parameter {key}")
        if g.shape != theta.shape:
            raise ShapeMismatchError(f"{key}: gradient shape {g.shape} != parameter shape {theta.shape}")
        m = beta1 * state.m.get(key, np.zeros_like(theta)) + (1 - beta1) * g
        v = beta2 * state.v.get(key, np.zeros_like(theta)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_params[key] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_out[key] = m
        v_out[key] = v
    return new_params, AdamState(m_out, v_out, t)


def predict_batch(net: Network, inputs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    x = np.asarray(inputs)
    if x.ndim == 3:
        x = x[None]
    out = [net.forward(x[i : i + batch_size], train=False)[:, 0] for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def _augmented(inputs: np.ndarray, rng: np.random.Generator, params: pp.AugmentParams) -> np.ndarray:
    out = np.empty_like(inputs)
    for i, sample in enumerate(inputs):
        seed = int(rng.integers(2**63 - 1))
        # one draw per sample, applied to every view channel
        for c, channel in enumerate(sample):
            out[i, c] = pp.augment(channel, seed, params)
    return out


def _write_history(path: Path, history: Sequence[EpochRecord]) -> None:
    write_rows(path, HISTORY_COLUMNS, [(r.epoch, r.train_rmse_ml, r.val_rmse_ml) for r in history])


def train(
    train_set: Dataset,
    val_set: Dataset,
    net: Network,
    config: TrainConfig,
    history_path: Path | None = None,
    checkpoint_path: Path | None = None,
) -> TrainResult:
    """Fit `net` in place; returns the min-validation checkpoint and per-epoch RMSE history."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if config.init_output_bias:
        net.output_layer.params["bias"][...] = float(np.mean(train_set.targets))
    state = AdamState()
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    fault: str | None = None
    n = len(train_set)
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        inputs = _augmented(train_set.inputs, rng, config.augment_params) if config.augment else train_set.inputs
        order = rng.permutation(n)
        sq_sum = 0.0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                net.seed_dropout(int(rng.integers(2**31 - 1)))
                preds = net.forward(inputs[idx], train=True)[:, 0]
                _, grad = rmse_loss(preds, train_set.targets[idx])
                sq_sum += float(np.sum((preds - train_set.targets[idx]) ** 2))
                net.backward(grad[:, None])
                params, state = adam_step(
                    net.parameters(), net.gradients(), state, config.learning_rate, config.beta1, config.beta2, config.eps
                )
                net.set_parameters(params)
            val_loss, _ = rmse_loss(predict_batch(net, val_set.inputs, config.batch_size), val_set.targets)
        except NumericFaultError as e:
            if best is None:
                raise
            fault = f"epoch {epoch}: {e}"
            log.error("trainer: numeric fault at epoch=%d; keeping checkpoint from epoch=%d (%s)", epoch, best.epoch, e)
            break
        record = EpochRecord(epoch, float(np.sqrt(sq_sum / n)), val_loss)
        history.append(record)
        if best is None or val_loss < best.validation_loss:
            best = snapshot(net, epoch, val_loss, config.seed, {"target": config.target})
            if checkpoint_path is not None:
                save_checkpoint(best, checkpoint_path)
        if history_path is not None:
            _write_history(history_path, history)
        log.debug("trainer: epoch=%d train=%.4f val=%.4f", epoch, record.train_rmse_ml, val_loss)
    if best is None:
        raise NumericFaultError("training produced no checkpoint")
    log.info(
        "trainer: target=%s seed=%d best epoch=%d val_rmse=%.4f", config.target, config.seed, best.epoch, best.validation_loss
    )
    return TrainResult(best, tuple(history), fault)


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle split; both parts keep ascending index order and are non-empty when n >= 2."""
    if n < 2:
        raise ValueError(f"need at least two studies to split, got {n}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def ensemble_seeds(seed: int) -> tuple[int, ...]:
    return tuple(seed + i for i in range(ENSEMBLE_SIZE))


def train_ensemble(
    train_set: Dataset,
    val_set: Dataset,
    vgg_config: VGGConfig,
    config: TrainConfig,
    out_dir: Path | None = None,
    prefix: str = "",
) -> list[TrainResult]:
    """Three members differing only in seed (initialization, augmentation, batch order, dropout)."""
    results: list[TrainResult] = []
    for k, seed in enumerate(ensemble_seeds(config.seed)):
        member_cfg = config.model_copy(update={"seed": seed})
        net = build_vgg(vgg_config, seed=seed)
        name = f"{prefix}{config.target}_m{k}"
        results.append(
            train(
                train_set,
                val_set,
                net,
                member_cfg,
                history_path=None if out_dir is None else out_dir / f"{name}_history.csv",
                checkpoint_path=None if out_dir is None else out_dir / f"{name}.ckpt",
            )
        )
    return results


def predict_ensemble(models: Sequence[Checkpoint | Network], inputs: np.ndarray) -> np.ndarray:
    """Mean of the three members' infer-mode predictions; accepts one (C, H, W) input or a batch."""
    if len(models) != ENSEMBLE_SIZE:
        raise ValueError(f"ensemble needs exactly {ENSEMBLE_SIZE} models, got {len(models)}")
    nets = [m.to_network() if isinstance(m, Checkpoint) else m for m in models]
    reference = nets[0].spec.model_dump()
    if any(net.spec.model_dump() != reference for net in nets[1:]):
        raise ShapeMismatchError("ensemble members must share one network spec")
    preds = np.stack([predict_batch(net, inputs) for net in nets])
    return preds.mean(axis=0)
