"""Experiment configuration: one YAML file drives a whole grid run."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .models import ARCHITECTURES
from .training import REGIMEN_KINDS

DEFAULT_SYNTHETIC = {
    "n_per_class": 100,
    "n_background": 60,
    "n_test": 40,
    "image_size": 64,
}


@dataclass(frozen=True)
class GridCell:
    dataset: str
    architecture: str
    regimen: str

    @property
    def cell_id(self) -> str:
        return f"{self.dataset}__{self.architecture}__{self.regimen}"


@dataclass
class ExperimentConfig:
    run_name: str
    seed: int = 0
    output_root: str = "runs"
    synthetic: dict = field(default_factory=lambda: dict(DEFAULT_SYNTHETIC))
    augment: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    grid: list[dict] = field(default_factory=list)
    sources: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.run_name:
            raise ValueError("run_name is required")
        if isinstance(self.grid, dict):
            self.grid = [self.grid]
        merged = dict(DEFAULT_SYNTHETIC)
        merged.update(self.synthetic)
        self.synthetic = merged
        for cell in self.cells():
            if cell.architecture not in ARCHITECTURES:
                raise ValueError(f"unknown architecture in grid: {cell.architecture}")
            if cell.regimen not in REGIMEN_KINDS:
                raise ValueError(f"unknown regimen in grid: {cell.regimen}")

    def cells(self) -> list[GridCell]:
        """Union of all grid blocks, deduplicated, in lexicographic order."""
        seen = set()
        out = []
        for block in self.grid:
            for dataset in block.get("datasets", []):
                for arch in block.get("architectures", []):
                    for regimen in block.get("regimens", []):
                        cell = GridCell(dataset=dataset, architecture=arch, regimen=regimen)
                        if cell not in seen:
                            seen.add(cell)
                            out.append(cell)
        return sorted(out, key=lambda c: (c.dataset, c.architecture, c.regimen))

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        obj = yaml.safe_load(Path(path).read_text())
        if not isinstance(obj, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return {
            "run_name": self.run_name,
            "seed": self.seed,
            "output_root": self.output_root,
            "synthetic": self.synthetic,
            "augment": self.augment,
            "training": self.training,
            "grid": self.grid,
            "sources": self.sources,
        }


def derive_cell_seed(root_seed: int, cell_id: str) -> int:
    """All cell randomness flows from the root seed through this derivation."""
    import hashlib

    digest = hashlib.sha256(f"{root_seed}:{cell_id}".encode()).digest()
    return int.from_bytes(digest[:4], "big")
