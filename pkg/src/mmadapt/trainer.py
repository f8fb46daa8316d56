"""Training loop: gradient accumulation, per-iteration scheduling, checkpoints, metrics log.

The learning rate steps per optimizer update with the epoch position expressed
in fractional epochs. Each sample's augmentation RNG derives from
(seed, epoch, sample index), so results do not depend on how loading is
parallelized. A non-finite loss aborts with a diagnostic snapshot.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .archive import load_archive, save_archive
from .augment import augment
from .config import RunConfig, config_to_dict, save_config
from .data import Normalizer, SegmentationFolder
from .errors import CheckpointError, TrainingAborted
from .inference import Predictor, collate
from .losses import ohem_cross_entropy
from .metrics import evaluate_split
from .model import MultimodalSegmenter
from .schedule import make_optimizer, set_lr

log = logging.getLogger(__name__)


def model_state_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    out = {}
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        out[f"model.{name}"] = arr.astype(np.float32 if arr.dtype.kind == "f" else np.int64)
    return out


def optimizer_state_arrays(optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    arrays = {}
    for group in optimizer.param_groups:
        for name, param in zip(group.get("names", []), group["params"]):
            state = optimizer.state.get(param)
            if not state:
                continue
            for key, value in state.items():
                if isinstance(value, torch.Tensor):
                    arrays[f"optimizer.{name}.{key}"] = value.detach().cpu().numpy().astype(np.float32)
    return arrays


def save_checkpoint(path: str | Path, model: torch.nn.Module, normalizer: Normalizer,
                    cfg: RunConfig, optimizer: torch.optim.Optimizer | None = None,
                    extra_meta: dict | None = None):
    arrays = model_state_arrays(model)
    if optimizer is not None:
        arrays.update(optimizer_state_arrays(optimizer))
    arrays["rng.torch_state"] = torch.get_rng_state().numpy().astype(np.uint8)
    meta = {"normalizer": normalizer.to_dict(), "config": config_to_dict(cfg)}
    meta.update(extra_meta or {})
    save_archive(path, arrays, meta)


def load_model_checkpoint(path: str | Path, model: torch.nn.Module) -> dict:
    """Load model arrays from a checkpoint into the given model; returns the meta dict."""
    arrays, meta = load_archive(path)
    state = model.state_dict()
    new_state = {}
    for name, tensor in state.items():
        key = f"model.{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint is missing required array {key!r}")
        value = torch.from_numpy(np.array(arrays[key]))
        if tuple(value.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"array {key!r} has shape {tuple(value.shape)}, expected {tuple(tensor.shape)}"
            )
        new_state[name] = value.to(tensor.dtype)
    model.load_state_dict(new_state)
    return meta


def apply_update(model, optimizer, micro_batches, loss_fn) -> float:
    """One optimizer update accumulated over micro-batches; returns the mean loss.

    Each micro-batch loss is scaled by 1/len(micro_batches) before backward,
    so the update equals the one a single combined batch would produce.
    """
    optimizer.zero_grad(set_to_none=True)
    total = 0.0
    for batch in micro_batches:
        loss = loss_fn(batch) / len(micro_batches)
        if not torch.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        loss.backward()
        total += float(loss.detach())
    optimizer.step()
    return total


@dataclass
class TrainResult:
    run_dir: Path
    final_checkpoint: Path
    best_checkpoint: Path | None
    metrics_path: Path
    best_val_miou: float | None


class Trainer:
    def __init__(self, cfg: RunConfig, device: str = "cpu", run_dir: str | Path | None = None):
        cfg.validate()
        self.cfg = cfg
        self.device = device
        self.run_dir = Path(run_dir or cfg.output.run_dir or "runs/default")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        torch.manual_seed(cfg.training.seed)
        self.train_set = SegmentationFolder(cfg.data.root, cfg.data.train_split)
        if len(self.train_set) == 0:
            raise TrainingAborted(f"training split {cfg.data.train_split!r} is empty")
        self.val_set = None
        if cfg.data.val_split:
            candidate = SegmentationFolder(cfg.data.root, cfg.data.val_split)
            if len(candidate):
                self.val_set = candidate
        self.normalizer = Normalizer.from_dataset(self.train_set)
        self.model = MultimodalSegmenter(cfg.model).to(device)
        self.optimizer = make_optimizer(self.model, cfg.training.schedule)
        self.min_kept = cfg.resolved_min_kept()
        self.global_step = 0

    def _loss_fn(self, batch):
        rgb, aux, labels = batch
        with torch.autocast("cpu", dtype=torch.bfloat16, enabled=self.cfg.training.mixed_precision):
            logits = self.model(rgb, aux)
            return ohem_cross_entropy(logits, labels, self.cfg.training.ohem, min_kept=self.min_kept)

    def _micro_batches(self, epoch: int):
        t = self.cfg.training
        order = np.random.default_rng([t.seed, epoch]).permutation(len(self.train_set))
        batch = []
        for position, index in enumerate(order.tolist()):
            sample = self.train_set[index]
            sample = augment(
                sample, t.augment, [t.seed, epoch, int(index)],
                ignore_index=t.ohem.ignore_index,
            )
            batch.append(sample)
            if len(batch) == t.micro_batch or position == len(order) - 1:
                yield collate(batch, self.normalizer, self.device)
                batch = []

    def _validate(self) -> float | None:
        if self.val_set is None:
            return None
        predictor = Predictor(self.model, self.normalizer, self.device)
        reports = evaluate_split(
            predictor, self.val_set, manifest=None,
            num_classes=self.cfg.model.head.num_classes,
            ignore_index=self.cfg.model.head.ignore_index,
        )
        self.model.train()
        return reports["all"].miou

    def _snapshot_and_abort(self, message: str, epoch: int):
        snapshot = self.run_dir / "abort_snapshot.ckpt"
        save_checkpoint(
            snapshot, self.model, self.normalizer, self.cfg, self.optimizer,
            {"epoch": epoch, "global_step": self.global_step, "reason": message},
        )
        raise TrainingAborted(f"{message} at epoch {epoch}, step {self.global_step}", str(snapshot))

    def train(self) -> TrainResult:
        cfg = self.cfg
        epochs = cfg.epochs
        save_config(cfg, self.run_dir / "config.yaml")
        metrics_path = self.run_dir / "metrics.ndjson"
        backbone_before = {
            name: param.detach().clone()
            for name, param in self.model.backbone.named_parameters()
        }
        best_miou, best_path = None, None
        restore_deterministic = torch.are_deterministic_algorithms_enabled()
        if cfg.training.deterministic:
            torch.use_deterministic_algorithms(True)
        self.model.train()
        try:
            with open(metrics_path, "w") as metrics_file:
                micro_per_epoch = math.ceil(len(self.train_set) / cfg.training.micro_batch)
                updates_per_epoch = math.ceil(micro_per_epoch / cfg.training.accumulation)
                loss, lr = float("nan"), cfg.training.schedule.eta_base
                for epoch in range(epochs):
                    update_index = 0

                    def run_update(group, epoch=epoch):
                        nonlocal loss, lr, update_index
                        p = min(epoch + update_index / updates_per_epoch,
                                cfg.training.schedule.total_epochs)
                        lr = set_lr(self.optimizer, p, cfg.training.schedule)
                        try:
                            loss = apply_update(self.model, self.optimizer, group, self._loss_fn)
                        except FloatingPointError:
                            self._snapshot_and_abort("non-finite loss", epoch)
                        self.global_step += 1
                        update_index += 1
                        metrics_file.write(json.dumps(
                            {"epoch": epoch, "step": self.global_step, "lr": lr, "loss": loss}
                        ) + "\n")

                    group = []
                    for micro in self._micro_batches(epoch):
                        group.append(micro)
                        if len(group) == cfg.training.accumulation:
                            run_update(group)
                            group = []
                    if group:
                        run_update(group)
                    if (epoch + 1) % cfg.training.val_interval == 0 or epoch == epochs - 1:
                        val = self._validate()
                        if val is not None:
                            metrics_file.write(json.dumps(
                                {"epoch": epoch, "step": self.global_step, "lr": lr,
                                 "loss": loss, "val_miou": val}
                            ) + "\n")
                            if best_miou is None or val > best_miou:
                                best_miou = val
                                best_path = self.run_dir / "best.ckpt"
                                save_checkpoint(
                                    best_path, self.model, self.normalizer, cfg, self.optimizer,
                                    {"epoch": epoch, "global_step": self.global_step, "val_miou": val},
                                )
                    log.info("epoch %d done (step %d)", epoch, self.global_step)
        finally:
            torch.use_deterministic_algorithms(restore_deterministic)
        if not cfg.model.backbone.finetune:
            for name, param in self.model.backbone.named_parameters():
                if not torch.equal(param.detach(), backbone_before[name]):
                    raise RuntimeError(f"frozen backbone parameter {name} changed during training")
        final_path = self.run_dir / "final.ckpt"
        save_checkpoint(
            final_path, self.model, self.normalizer, cfg, self.optimizer,
            {"epoch": epochs - 1, "global_step": self.global_step, "val_miou": best_miou},
        )
        return TrainResult(self.run_dir, final_path, best_path, metrics_path, best_miou)


def train(cfg: RunConfig, device: str = "cpu", run_dir: str | Path | None = None) -> TrainResult:
    return Trainer(cfg, device=device, run_dir=run_dir).train()

