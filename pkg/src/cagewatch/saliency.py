"""Input-gradient saliency maps and activation rankings.

Both the ranking and the gradients use the pre-softmax class score; the
per-pixel saliency value is the max-over-channels absolute gradient,
normalized so the strongest pixel is 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .augment import AugmentationPolicy, apply, denormalize, eval_policy
from .datasets import DatasetManifest
from .records import Label
from .storage import ImageStore

CLASS_INDEX = {Label.NEGATIVE: 0, Label.POSITIVE: 1}


@dataclass
class SaliencyMap:
    values: np.ndarray  # HxW, >= 0
    record_id: str
    target_class: Label
    normalized: bool

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"saliency map must be HxW, got shape {self.values.shape}")
        if (self.values < 0).any():
            raise ValueError("saliency values must be non-negative")


@dataclass
class ActivationRanking:
    target_class: Label
    entries: list[tuple[str, float]]  # (record_id, pre-softmax score), descending
    k: int


def top_k_by_activation(
    model: nn.Module,
    test_set: DatasetManifest,
    store: ImageStore,
    target_class: Label,
    k: int = 10,
    policy: Optional[AugmentationPolicy] = None,
    batch_size: int = 64,
) -> ActivationRanking:
    """Records with the highest pre-softmax score for the target class.

    Ties break by record_id ascending.
    """
    policy = policy or eval_policy()
    cls_idx = CLASS_INDEX[target_class]
    model.eval()
    scores: list[tuple[str, float]] = []
    rows = test_set.rows
    with torch.no_grad():
        for start in range(0, len(rows), batch_size):
            chunk = rows[start: start + batch_size]
            xs = [
                np.transpose(apply(np.asarray(store.open(r.checksum)), policy, seed=0), (2, 0, 1))
                for r in chunk
            ]
            logits = model(torch.from_numpy(np.stack(xs)))
            for row, score in zip(chunk, logits[:, cls_idx].tolist()):
                scores.append((row.record_id, float(score)))
    scores.sort(key=lambda e: (-e[1], e[0]))
    return ActivationRanking(target_class=target_class, entries=scores[: min(k, len(scores))], k=k)


def saliency_map(
    model: nn.Module,
    image: np.ndarray,
    record_id: str,
    target_class: Label,
    policy: Optional[AugmentationPolicy] = None,
) -> SaliencyMap:
    """Gradient of the target-class score w.r.t. the preprocessed input."""
    policy = policy or eval_policy()
    arr = apply(image, policy, seed=0)
    x = torch.from_numpy(np.transpose(arr, (2, 0, 1))[None]).requires_grad_(True)
    model.eval()
    logits = model(x)
    score = logits[0, CLASS_INDEX[target_class]]
    if not score.requires_grad:
        raise RuntimeError("model output does not carry gradients; checkpoint not differentiable")
    score.backward()
    if x.grad is None:
        # model output does not depend on the input at all
        grad = np.zeros_like(np.transpose(arr, (2, 0, 1)))
    else:
        grad = x.grad[0].detach().numpy()  # CxHxW
    values = np.abs(grad).max(axis=0)
    peak = values.max()
    normalized = bool(peak > 0)
    if normalized:
        values = values / peak
    return SaliencyMap(values=values, record_id=record_id, target_class=target_class, normalized=normalized)


def _heat_colormap(values: np.ndarray) -> np.ndarray:
    """Black->red->yellow ramp; deterministic, no plotting dependency."""
    v = np.clip(values, 0.0, 1.0)
    r = np.clip(v * 2.0, 0, 1)
    g = np.clip(v * 2.0 - 1.0, 0, 1)
    b = np.zeros_like(v)
    return (np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def render_overlay(
    image: np.ndarray,
    sal: SaliencyMap,
    output_path: str | Path,
    policy: Optional[AugmentationPolicy] = None,
    alpha: float = 0.55,
) -> Path:
    """Write a side-by-side (original | heat overlay) PNG; bytes are stable."""
    from PIL import Image

    policy = policy or eval_policy()
    arr = apply(image, policy, seed=0)
    base = np.clip(denormalize(arr, policy.normalization), 0, 255).astype(np.uint8)
    if sal.values.shape != base.shape[:2]:
        raise ValueError(
            f"saliency shape {sal.values.shape} does not match preprocessed image {base.shape[:2]}"
        )
    heat = _heat_colormap(sal.values)
    weight = (alpha * sal.values)[..., None]
    overlay = np.clip(base * (1 - weight) + heat * weight, 0, 255).astype(np.uint8)
    combined = np.concatenate([base, overlay], axis=1)
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(combined).save(output_path, format="PNG")
    return output_path


def render_ranking(
    model: nn.Module,
    test_set: DatasetManifest,
    store: ImageStore,
    target_class: Label,
    out_dir: str | Path,
    k: int = 10,
    policy: Optional[AugmentationPolicy] = None,
) -> Path:
    """Top-k saliency overlays plus a JSON index of the ranking."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = policy or eval_policy()
    ranking = top_k_by_activation(model, test_set, store, target_class, k=k, policy=policy)
    checksum_by_id = {r.record_id: r.checksum for r in test_set.rows}
    index = []
    for rank, (record_id, score) in enumerate(ranking.entries, start=1):
        image = np.asarray(store.open(checksum_by_id[record_id]))
        sal = saliency_map(model, image, record_id, target_class, policy=policy)
        name = f"{target_class.value}_{rank:02d}_{record_id}.png"
        render_overlay(image, sal, out_dir / name, policy=policy)
        index.append({"rank": rank, "record_id": record_id, "score": score, "file": name})
    index_path = out_dir / f"ranking_{target_class.value}.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True))
    return index_path
