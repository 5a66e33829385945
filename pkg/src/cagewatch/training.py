"""Training regimens, the early-stopping controller, and checkpointing.

The schedule controller is separated from the torch specifics so the
stopping and phase logic can be driven by scripted losses in tests.
"""

from __future__ import annotations

import copy
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn

from .augment import AugmentationPolicy, apply, derive_seed, eval_policy
from .datasets import DatasetManifest
from .models import ModelSpec, build_model, set_trainable
from .records import Label
from .storage import ImageStore

REGIMEN_KINDS = ("fine_tune", "scratch", "combi")

MAX_EPOCHS_CAP = 200  # safety bound; stopping normally comes from patience


@dataclass
class TrainingRegimen:
    kind: str
    seed: int = 0
    learning_rate_head: float = 1e-3
    learning_rate_full: float = 1e-4
    batch_size_head: int = 75
    batch_size_full: int = 15
    head_only_epochs: int = 10
    patience: int = 15
    max_epochs: int = MAX_EPOCHS_CAP
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in REGIMEN_KINDS:
            raise ValueError(f"unknown regimen kind {self.kind!r}")
        if self.kind == "combi":
            if self.learning_rate_full >= self.learning_rate_head:
                raise ValueError("combi requires learning_rate_full < learning_rate_head")
            if self.batch_size_full >= self.batch_size_head:
                raise ValueError("combi requires batch_size_full < batch_size_head")

    @classmethod
    def make(cls, kind: str, seed: int = 0, **overrides) -> "TrainingRegimen":
        defaults: dict = {"patience": 15}
        if kind == "combi":
            defaults["patience"] = 35
        if kind == "scratch":
            # whole model trains from random init at the head learning rate
            defaults["learning_rate_full"] = 1e-3
            defaults["batch_size_full"] = 75
        return cls(kind=kind, seed=seed, **{**defaults, **overrides})

    def phase_for_epoch(self, epoch: int) -> str:
        if self.kind == "fine_tune":
            return "head_only"
        if self.kind == "scratch":
            return "full"
        return "head_only" if epoch <= self.head_only_epochs else "full"


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainingResult:
    history: list[EpochRecord]
    best_epoch: int
    stopped_early: bool
    best_checkpoint: Optional[dict] = None

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch - 1].val_loss


def early_stop_check(val_losses: list[float], patience: int) -> bool:
    """True once ``patience`` epochs have passed without strict improvement."""
    if not val_losses:
        raise ValueError("history is empty")
    best_idx = 0
    for i, loss in enumerate(val_losses):
        if loss < val_losses[best_idx]:
            best_idx = i
    return (len(val_losses) - 1 - best_idx) >= patience


def run_schedule(
    regimen: TrainingRegimen,
    train_epoch: Callable[[int, str], float],
    validate: Callable[[int], tuple[float, float]],
    configure_phase: Optional[Callable[[str], None]] = None,
    snapshot: Optional[Callable[[], dict]] = None,
    on_epoch_end: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainingResult:
    """Drive epochs until the patience criterion fires or max_epochs is hit.

    ``configure_phase`` runs before epoch 1 and again at the single combi
    phase boundary; ``snapshot`` captures the model whenever validation loss
    strictly improves.
    """
    history: list[EpochRecord] = []
    best_epoch = 0
    best_loss = float("inf")
    best_state: Optional[dict] = None
    current_phase: Optional[str] = None
    stopped_early = False

    for epoch in range(1, regimen.max_epochs + 1):
        phase = regimen.phase_for_epoch(epoch)
        if phase != current_phase:
            if configure_phase is not None:
                configure_phase(phase)
            current_phase = phase

        train_loss = train_epoch(epoch, phase)
        val_loss, val_acc = validate(epoch)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise RuntimeError(
                f"non-finite loss at epoch {epoch} (train={train_loss}, val={val_loss}); aborting"
            )
        record = EpochRecord(epoch=epoch, phase=phase, train_loss=float(train_loss),
                             val_loss=float(val_loss), val_accuracy=float(val_acc))
        history.append(record)

        if val_loss < best_loss:
            best_loss = val_loss
            best_epoch = epoch
            if snapshot is not None:
                best_state = snapshot()
        if on_epoch_end is not None:
            on_epoch_end(record)

        if early_stop_check([r.val_loss for r in history], regimen.patience):
            stopped_early = True
            break

    return TrainingResult(history=history, best_epoch=best_epoch,
                          stopped_early=stopped_early, best_checkpoint=best_state)


class ManifestData:
    """Decoded images plus integer labels for one manifest, kept in memory."""

    LABEL_INDEX = {Label.NEGATIVE: 0, Label.POSITIVE: 1}

    def __init__(self, manifest: DatasetManifest, store: ImageStore):
        self.manifest = manifest
        self.images: list[np.ndarray] = []
        self.labels: list[int] = []
        self.record_ids: list[str] = []
        for row in manifest.rows:
            self.images.append(np.asarray(store.open(row.checksum)))
            self.labels.append(self.LABEL_INDEX[row.label])
            self.record_ids.append(row.record_id)
        self.row_labels = [row.label for row in manifest.rows]

    def __len__(self) -> int:
        return len(self.images)


def _augmented_batch(
    data: ManifestData,
    indices: list[int],
    policies: dict[Label, AugmentationPolicy],
    global_seed: int,
    epoch: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    xs = []
    for i in indices:
        seed = derive_seed(global_seed, data.record_ids[i], epoch)
        arr = apply(data.images[i], policies[data.row_labels[i]], seed)
        xs.append(np.transpose(arr, (2, 0, 1)))
    x = torch.from_numpy(np.stack(xs))
    y = torch.tensor([data.labels[i] for i in indices], dtype=torch.long)
    return x, y


def preprocess_batch(data: ManifestData, indices: list[int], policy: AugmentationPolicy) -> tuple[torch.Tensor, torch.Tensor]:
    """Deterministic evaluation preprocessing (resize + normalize)."""
    xs = [np.transpose(apply(data.images[i], policy, seed=0), (2, 0, 1)) for i in indices]
    y = torch.tensor([data.labels[i] for i in indices], dtype=torch.long)
    return torch.from_numpy(np.stack(xs)), y


def evaluate_loss(
    model: nn.Module, data: ManifestData, policy: AugmentationPolicy,
    batch_size: int = 64, device: str = "cpu",
) -> tuple[float, float]:
    criterion = nn.CrossEntropyLoss(reduction="sum")
    model.eval()
    total_loss = 0.0
    correct = 0
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            idx = list(range(start, min(start + batch_size, len(data))))
            x, y = preprocess_batch(data, idx, policy)
            logits = model(x.to(device))
            total_loss += float(criterion(logits, y.to(device)))
            correct += int((logits.argmax(dim=1).cpu() == y).sum())
    n = len(data)
    return total_loss / n, correct / n


def train(
    model: nn.Module,
    regimen: TrainingRegimen,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    store: ImageStore,
    policies: dict[Label, AugmentationPolicy],
    device: str = "cpu",
    on_epoch_end: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainingResult:
    """Run one regimen; the best checkpoint is the lowest-val-loss snapshot."""
    if not train_manifest.rows:
        raise ValueError("train manifest is empty")
    torch.manual_seed(regimen.seed)
    model.to(device)

    train_data = ManifestData(train_manifest, store)
    val_data = ManifestData(val_manifest, store)
    target_size = next(iter(policies.values())).target_size
    normalization = next(iter(policies.values())).normalization
    val_policy = eval_policy(target_size=target_size, normalization=normalization)

    criterion = nn.CrossEntropyLoss()
    state: dict = {"optimizer": None, "batch_size": regimen.batch_size_head}

    def configure_phase(phase: str) -> None:
        if regimen.kind == "scratch":
            scope, lr, bs = "all", regimen.learning_rate_full, regimen.batch_size_full
        elif phase == "head_only":
            scope, lr, bs = "head_only", regimen.learning_rate_head, regimen.batch_size_head
        else:
            scope, lr, bs = "all", regimen.learning_rate_full, regimen.batch_size_full
        set_trainable(model, scope)
        params = [p for p in model.parameters() if p.requires_grad]
        state["optimizer"] = torch.optim.SGD(params, lr=lr, momentum=regimen.momentum)
        state["batch_size"] = bs

    def train_epoch(epoch: int, phase: str) -> float:
        model.train()
        order = list(range(len(train_data)))
        random.Random(f"{regimen.seed}:{epoch}").shuffle(order)
        total = 0.0
        bs = state["batch_size"]
        opt = state["optimizer"]
        for start in range(0, len(order), bs):
            idx = order[start: start + bs]
            x, y = _augmented_batch(train_data, idx, policies, regimen.seed, epoch)
            opt.zero_grad()
            logits = model(x.to(device))
            loss = criterion(logits, y.to(device))
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        return total / len(order)

    def validate(epoch: int) -> tuple[float, float]:
        return evaluate_loss(model, val_data, val_policy, device=device)

    def snapshot() -> dict:
        return copy.deepcopy({k: v.cpu() for k, v in model.state_dict().items()})

    return run_schedule(
        regimen, train_epoch, validate,
        configure_phase=configure_phase, snapshot=snapshot, on_epoch_end=on_epoch_end,
    )


def save_checkpoint(
    path: str | Path,
    result: TrainingResult,
    spec: ModelSpec,
    regimen: TrainingRegimen,
    train_manifest: str,
    val_manifest: str,
    policies: dict[Label, AugmentationPolicy],
) -> None:
    torch.save(
        {
            "state_dict": result.best_checkpoint,
            "spec": asdict(spec),
            "regimen": asdict(regimen),
            "train_manifest": train_manifest,
            "val_manifest": val_manifest,
            "policies": {label.value: p.echo() for label, p in policies.items()},
            "history": [asdict(r) for r in result.history],
            "best_epoch": result.best_epoch,
            "stopped_early": result.stopped_early,
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    spec = ModelSpec(
        architecture=payload["spec"]["architecture"],
        pretrained=False,
        num_outputs=payload["spec"]["num_outputs"],
    )
    model = build_model(spec)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def save_history(path: str | Path, result: TrainingResult) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for r in result.history:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
