"""Species saturation check over a random sample of positive-class records.

The original procedure read species names out of the sale posts by hand;
here an annotation sidecar (record_id -> species names) stands in for the
manual pass so the sampling curve is repeatable.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..records import ImageRecord, Label, SpeciesInventory


def load_species_annotations(path: str | Path) -> dict[str, list[str]]:
    return json.loads(Path(path).read_text())


def extract_species_inventory(
    records: Sequence[ImageRecord],
    annotations: Mapping[str, Sequence[str]],
    sample_size: int,
    seed: int,
) -> SpeciesInventory:
    """Sample ``sample_size`` records and track when new species stop appearing.

    ``saturation_index`` is the 1-based index of the last sampled record that
    contributed a species not seen earlier in the sample.
    """
    non_positive = [r.record_id for r in records if r.label is not Label.POSITIVE]
    if non_positive:
        raise ValueError(f"records not in the positive class: {non_positive[:5]}")
    if sample_size > len(records):
        raise ValueError(f"sample_size {sample_size} exceeds record count {len(records)}")
    if sample_size == 0:
        return SpeciesInventory(species=[], saturation_index=0, sample_size=0)

    rng = random.Random(seed)
    sample = rng.sample(list(records), sample_size)

    missing = [r.record_id for r in sample if r.record_id not in annotations]
    if missing:
        raise ValueError(f"missing species annotations for records: {missing}")

    species: list[str] = []
    seen = set()
    saturation_index = 0
    for i, rec in enumerate(sample, start=1):
        for name in annotations[rec.record_id]:
            if name not in seen:
                seen.add(name)
                species.append(name)
                saturation_index = i
    return SpeciesInventory(species=species, saturation_index=saturation_index, sample_size=sample_size)
