"""Class-conditional, seeded image augmentation.

The two classes get slightly different pipelines: each has its own fixed
crop band that excises the watermark region typical of its source, while
random crop, flip, rotation, resize and normalization are shared. ``apply``
is a pure function of (image, policy, seed).
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from PIL import Image

from .records import Label

log = logging.getLogger(__name__)

MIN_SIDE = 32  # below this, inputs are upscaled before cropping

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DEFAULT_AUGMENT_CONFIG: dict = {
    "watermark_removal": True,
    # fraction of image height removed from the bottom, per class
    "positive_crop_bottom": 0.08,
    "negative_crop_bottom": 0.05,
    "random_crop_scale": (0.7, 1.0),
    "flip_p": 0.5,
    "rotation_degrees": 15.0,
    "target_size": (224, 224),
    "normalization": {"mean": IMAGENET_MEAN, "std": IMAGENET_STD},
}


class StepKind(str, Enum):
    FIXED_CROP = "fixed_crop"
    RANDOM_CROP = "random_crop"
    HORIZONTAL_FLIP = "horizontal_flip"
    ROTATION = "rotation"
    RESIZE = "resize"
    NORMALIZE = "normalize"


@dataclass(frozen=True)
class TransformStep:
    kind: StepKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.kind is StepKind.FIXED_CROP:
            box = p["box"]  # (top, left, bottom, right) keep-fractions
            if not all(0.0 <= v <= 1.0 for v in box):
                raise ValueError(f"fixed_crop fractions out of [0,1]: {box}")
            if box[2] <= box[0] or box[3] <= box[1]:
                raise ValueError(f"fixed_crop box is degenerate: {box}")
        elif self.kind is StepKind.HORIZONTAL_FLIP:
            if not 0.0 <= p["p"] <= 1.0:
                raise ValueError(f"flip probability out of [0,1]: {p['p']}")
        elif self.kind is StepKind.ROTATION:
            if not 0.0 <= p["degrees"] <= 180.0:
                raise ValueError(f"rotation degrees out of [0,180]: {p['degrees']}")
        elif self.kind is StepKind.RANDOM_CROP:
            lo, hi = p["scale"]
            if not 0.0 < lo <= hi <= 1.0:
                raise ValueError(f"random_crop scale range invalid: {p['scale']}")


@dataclass
class AugmentationPolicy:
    class_label: Label
    steps: list[TransformStep]
    target_size: tuple[int, int]
    normalization: tuple[tuple[float, float, float], tuple[float, float, float]]

    def __post_init__(self):
        mean, std = self.normalization
        if any(s <= 0 for s in std):
            raise ValueError(f"normalization std must be positive: {std}")
        kinds = [s.kind for s in self.steps]
        if kinds[-2:] != [StepKind.RESIZE, StepKind.NORMALIZE]:
            raise ValueError("policy must end with resize then normalize")

    def echo(self) -> dict:
        """JSON-serializable snapshot for run metadata."""
        return {
            "class_label": self.class_label.value,
            "steps": [{"kind": s.kind.value, "params": _jsonable(s.params)} for s in self.steps],
            "target_size": list(self.target_size),
            "normalization": {"mean": list(self.normalization[0]), "std": list(self.normalization[1])},
        }


def _jsonable(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def compile_policy(class_label: Label, config: Optional[dict] = None) -> AugmentationPolicy:
    cfg = copy.deepcopy(DEFAULT_AUGMENT_CONFIG)
    cfg.update(config or {})
    target = tuple(cfg["target_size"])
    mean = tuple(cfg["normalization"]["mean"])
    std = tuple(cfg["normalization"]["std"])

    steps: list[TransformStep] = []
    if cfg["watermark_removal"]:
        key = "positive_crop_bottom" if class_label is Label.POSITIVE else "negative_crop_bottom"
        if cfg.get(key) is None:
            raise ValueError(f"watermark removal enabled but {key} is not configured")
        steps.append(
            TransformStep(StepKind.FIXED_CROP, {"box": (0.0, 0.0, 1.0 - float(cfg[key]), 1.0)})
        )
    if cfg.get("random_crop_scale"):
        steps.append(TransformStep(StepKind.RANDOM_CROP, {"scale": tuple(cfg["random_crop_scale"])}))
    if cfg.get("flip_p", 0) > 0:
        steps.append(TransformStep(StepKind.HORIZONTAL_FLIP, {"p": float(cfg["flip_p"])}))
    if cfg.get("rotation_degrees", 0) > 0:
        steps.append(TransformStep(StepKind.ROTATION, {"degrees": float(cfg["rotation_degrees"])}))
    steps.append(TransformStep(StepKind.RESIZE, {"size": target}))
    steps.append(TransformStep(StepKind.NORMALIZE, {"mean": mean, "std": std}))
    return AugmentationPolicy(class_label=class_label, steps=steps, target_size=target, normalization=(mean, std))


def eval_policy(
    target_size: tuple[int, int] = (224, 224),
    normalization=None,
    class_label: Label = Label.POSITIVE,
) -> AugmentationPolicy:
    """Deterministic evaluation preprocessing: resize + normalize only."""
    mean, std = normalization or (IMAGENET_MEAN, IMAGENET_STD)
    steps = [
        TransformStep(StepKind.RESIZE, {"size": tuple(target_size)}),
        TransformStep(StepKind.NORMALIZE, {"mean": tuple(mean), "std": tuple(std)}),
    ]
    return AugmentationPolicy(
        class_label=class_label, steps=steps, target_size=tuple(target_size),
        normalization=(tuple(mean), tuple(std)),
    )


def derive_seed(global_seed: int, record_id: str, epoch: int) -> int:
    """Per-image augmentation seed; stable across worker scheduling."""
    digest = hashlib.sha256(f"{global_seed}:{record_id}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _resize(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    im = Image.fromarray(arr.astype(np.uint8))
    return np.asarray(im.resize((w, h), Image.BILINEAR))


def apply(image: np.ndarray, policy: AugmentationPolicy, seed: int) -> np.ndarray:
    """Run the policy over an HxWx3 uint8 array; returns float32 HxWx3."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    arr = np.asarray(image, dtype=np.uint8)
    rng = np.random.default_rng(seed)

    if min(arr.shape[:2]) < MIN_SIDE:
        scale = MIN_SIDE / min(arr.shape[:2])
        new_hw = (max(MIN_SIDE, round(arr.shape[0] * scale)), max(MIN_SIDE, round(arr.shape[1] * scale)))
        log.warning("input %s smaller than minimum side %d; upscaling to %s", arr.shape[:2], MIN_SIDE, new_hw)
        arr = _resize(arr, new_hw)

    out: Optional[np.ndarray] = None
    for step in policy.steps:
        if step.kind is StepKind.FIXED_CROP:
            top_f, left_f, bottom_f, right_f = step.params["box"]
            h, w = arr.shape[:2]
            arr = arr[int(top_f * h): max(int(top_f * h) + 1, int(round(bottom_f * h))),
                      int(left_f * w): max(int(left_f * w) + 1, int(round(right_f * w)))]
        elif step.kind is StepKind.RANDOM_CROP:
            lo, hi = step.params["scale"]
            s = rng.uniform(lo, hi)
            h, w = arr.shape[:2]
            ch, cw = max(1, round(h * s)), max(1, round(w * s))
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            arr = arr[y0: y0 + ch, x0: x0 + cw]
        elif step.kind is StepKind.HORIZONTAL_FLIP:
            if rng.random() < step.params["p"]:
                arr = arr[:, ::-1]
        elif step.kind is StepKind.ROTATION:
            angle = float(rng.uniform(-step.params["degrees"], step.params["degrees"]))
            im = Image.fromarray(np.ascontiguousarray(arr))
            arr = np.asarray(im.rotate(angle, resample=Image.BILINEAR))
        elif step.kind is StepKind.RESIZE:
            arr = _resize(arr, step.params["size"])
        elif step.kind is StepKind.NORMALIZE:
            mean = np.asarray(step.params["mean"], dtype=np.float32)
            std = np.asarray(step.params["std"], dtype=np.float32)
            out = (arr.astype(np.float32) / 255.0 - mean) / std
    assert out is not None, "policy did not end in a normalize step"
    return out


def denormalize(arr: np.ndarray, normalization) -> np.ndarray:
    mean = np.asarray(normalization[0], dtype=np.float32)
    std = np.asarray(normalization[1], dtype=np.float32)
    return (arr * std + mean) * 255.0
