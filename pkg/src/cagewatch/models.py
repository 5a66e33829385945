"""Architecture zoo with two-output heads and trainability scoping.

The eight published backbones come from torchvision; the VGG names map to
their batch-norm variants (the configuration whose parameter counts match
the published model sizes). ``tinynet`` is a small fixed-feature CNN for
desk-scale experiments on the synthetic corpus, where downloading ImageNet
weights is neither possible nor useful.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import torch
import torch.nn as nn
from torchvision import models as tv_models


class UnknownArchitectureError(ValueError):
    pass


class WeightsUnavailableError(RuntimeError):
    pass


ARCHITECTURES = (
    "alexnet",
    "densenet121",
    "densenet201",
    "resnet18",
    "resnet152",
    "squeezenet",
    "vgg11",
    "vgg19",
    "tinynet",
)


@dataclass
class ModelSpec:
    architecture: str
    pretrained: bool = True
    num_outputs: int = 2
    parameter_count: int = field(default=0)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise UnknownArchitectureError(
                f"unknown architecture {self.architecture!r}; supported: {ARCHITECTURES}"
            )


class TinyNet(nn.Module):
    """Three-conv feature extractor with a linear head, for 64x64-ish inputs.

    The backbone initialization is deterministic (fixed seed) so that
    "pretrained" tinynet means the same frozen feature bank on every machine.
    """

    INIT_SEED = 0x7A3F

    def __init__(self, num_outputs: int = 2, pretrained: bool = False):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d((4, 4)),
        )
        self.classifier = nn.Linear(64 * 4 * 4, num_outputs)
        if pretrained:
            # deterministic He-scaled random feature bank; keeps activations
            # O(1) so a fresh head starts near the ln 2 coin-flip loss
            gen = torch.Generator().manual_seed(self.INIT_SEED)
            with torch.no_grad():
                for m in self.features.modules():
                    if isinstance(m, nn.Conv2d):
                        fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                        std = (2.0 / fan_in) ** 0.5
                        m.weight.copy_(torch.empty_like(m.weight).normal_(0.0, std, generator=gen))
                        m.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.features(x)
        return self.classifier(torch.flatten(feats, 1))


def _tv_weights(name: str, pretrained: bool):
    if not pretrained:
        return None
    try:
        return tv_models.get_model_weights(name).IMAGENET1K_V1
    except Exception as exc:
        raise WeightsUnavailableError(f"pretrained weights for {name} unavailable: {exc}") from exc


def _build_tv(name: str, pretrained: bool) -> nn.Module:
    try:
        return tv_models.get_model(name, weights=_tv_weights(name, pretrained))
    except WeightsUnavailableError:
        raise
    except Exception as exc:
        raise WeightsUnavailableError(f"could not instantiate {name}: {exc}") from exc


def _replace_head(arch: str, model: nn.Module, num_outputs: int) -> None:
    if arch == "alexnet" or arch.startswith("vgg"):
        model.classifier[6] = nn.Linear(model.classifier[6].in_features, num_outputs)
    elif arch.startswith("densenet"):
        model.classifier = nn.Linear(model.classifier.in_features, num_outputs)
    elif arch.startswith("resnet"):
        model.fc = nn.Linear(model.fc.in_features, num_outputs)
    elif arch == "squeezenet":
        model.classifier[1] = nn.Conv2d(512, num_outputs, kernel_size=1)
        model.num_classes = num_outputs


_TV_NAMES = {
    "alexnet": "alexnet",
    "densenet121": "densenet121",
    "densenet201": "densenet201",
    "resnet18": "resnet18",
    "resnet152": "resnet152",
    "squeezenet": "squeezenet1_0",
    "vgg11": "vgg11_bn",
    "vgg19": "vgg19_bn",
}


def build_model(spec: ModelSpec) -> nn.Module:
    """Instantiate the architecture with a freshly initialized 2-output head.

    Fills ``spec.parameter_count`` in place. The new head starts with small
    weights so an untrained model scores near the coin-flip cross-entropy.
    """
    if spec.architecture == "tinynet":
        model = TinyNet(num_outputs=spec.num_outputs, pretrained=spec.pretrained)
    else:
        model = _build_tv(_TV_NAMES[spec.architecture], spec.pretrained)
        _replace_head(spec.architecture, model, spec.num_outputs)
    head = head_module(model)
    with torch.no_grad():
        for name, p in head.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            else:
                p.normal_(0.0, 0.01)
    spec.parameter_count = count_parameters(model)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def head_module(model: nn.Module) -> nn.Module:
    """The classification head that fine-tuning trains."""
    if isinstance(model, TinyNet):
        return model.classifier
    if isinstance(model, (tv_models.AlexNet, tv_models.VGG)):
        return model.classifier[6]
    if isinstance(model, tv_models.DenseNet):
        return model.classifier
    if isinstance(model, tv_models.ResNet):
        return model.fc
    if isinstance(model, tv_models.SqueezeNet):
        return model.classifier[1]
    raise UnknownArchitectureError(f"cannot locate head of {type(model).__name__}")


def set_trainable(model: nn.Module, scope: str) -> None:
    """``head_only`` freezes everything except the head; ``all`` unfreezes."""
    if scope not in ("head_only", "all"):
        raise ValueError(f"scope must be 'head_only' or 'all', got {scope!r}")
    if scope == "all":
        for p in model.parameters():
            p.requires_grad_(True)
        return
    for p in model.parameters():
        p.requires_grad_(False)
    for p in head_module(model).parameters():
        p.requires_grad_(True)


def backbone_hash(model: nn.Module) -> str:
    """Hash of all non-head parameters; invariant under head-only training."""
    head_params = {id(p) for p in head_module(model).parameters()}
    digest = hashlib.sha256()
    for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        if id(p) in head_params:
            continue
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def parameters_hash(model: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
