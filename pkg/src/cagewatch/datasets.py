"""Dataset manifests: assembly, stratified splitting, OOD test-set construction.

Manifests are immutable, named, and serialized as a JSON header line followed
by one JSON row per image. Serialization is canonical (sorted keys, fixed
separators) so serialize -> parse -> serialize is byte-identical.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .ingest.taxonomy import LexicalTaxonomy, filter_captioned_corpus
from .records import ImageRecord, Label, SourceKind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestRow:
    record_id: str
    label: Label
    source: SourceKind
    checksum: str
    background_marker: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "record_id": self.record_id,
                "label": self.label.value,
                "source": self.source.value,
                "checksum": self.checksum,
                "background_marker": self.background_marker,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "ManifestRow":
        obj = json.loads(line)
        return cls(
            record_id=obj["record_id"],
            label=Label(obj["label"]),
            source=SourceKind(obj["source"]),
            checksum=obj["checksum"],
            background_marker=obj["background_marker"],
        )

    @classmethod
    def from_record(cls, record: ImageRecord, label: Optional[Label] = None) -> "ManifestRow":
        eff = label or record.label
        if eff is None:
            raise ValueError(f"record {record.record_id} has no label")
        return cls(
            record_id=record.record_id,
            label=eff,
            source=record.source,
            checksum=record.checksum,
            background_marker=record.background_marker,
        )


@dataclass
class DatasetManifest:
    name: str
    rows: list[ManifestRow]
    created_at: str
    seed: int = 0
    parent: Optional[str] = None

    def __post_init__(self):
        ids = [r.record_id for r in self.rows]
        if len(set(ids)) != len(ids):
            dupes = [i for i, c in Counter(ids).items() if c > 1]
            raise ValueError(f"duplicate record_ids in manifest {self.name}: {dupes[:5]}")

    @classmethod
    def create(
        cls,
        name: str,
        rows: Iterable[ManifestRow],
        seed: int = 0,
        parent: Optional[str] = None,
        created_at: Optional[str] = None,
    ) -> "DatasetManifest":
        # Callers that need byte-exact reruns (the grid runner) pass a fixed
        # created_at; interactive use records wall-clock time.
        stamp = created_at or datetime.now(timezone.utc).isoformat()
        return cls(name=name, rows=list(rows), created_at=stamp, seed=seed, parent=parent)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def class_counts(self) -> dict[str, int]:
        counts = Counter(r.label.value for r in self.rows)
        return {Label.POSITIVE.value: counts.get("positive", 0), Label.NEGATIVE.value: counts.get("negative", 0)}

    @property
    def record_ids(self) -> list[str]:
        return [r.record_id for r in self.rows]

    def background_count(self) -> int:
        return sum(1 for r in self.rows if r.background_marker)

    def serialize(self) -> str:
        header = json.dumps(
            {
                "name": self.name,
                "parent": self.parent,
                "seed": self.seed,
                "created_at": self.created_at,
                "class_counts": self.class_counts,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return "\n".join([header] + [r.to_json() for r in self.rows]) + "\n"

    @classmethod
    def parse(cls, text: str) -> "DatasetManifest":
        lines = text.splitlines()
        if not lines:
            raise ValueError("empty manifest file")
        header = json.loads(lines[0])
        rows = [ManifestRow.from_json(line) for line in lines[1:] if line.strip()]
        manifest = cls(
            name=header["name"],
            rows=rows,
            created_at=header["created_at"],
            seed=header["seed"],
            parent=header["parent"],
        )
        if header["class_counts"] != manifest.class_counts:
            raise ValueError(f"manifest {header['name']}: header class_counts disagree with rows")
        return manifest

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.parse(Path(path).read_text())


@dataclass
class SplitAssignment:
    train: DatasetManifest
    test_in: DatasetManifest
    ratio: float
    seed: int


def dedupe(records: Sequence[ImageRecord]) -> list[ImageRecord]:
    """First occurrence per checksum wins; input order preserved."""
    seen = set()
    kept = []
    for r in records:
        if r.checksum in seen:
            log.info("dedupe: dropping %s (checksum %s already present)", r.record_id, r.checksum[:12])
            continue
        seen.add(r.checksum)
        kept.append(r)
    return kept


def assemble_corpus(
    positive: Sequence[ImageRecord],
    negative_wild: Sequence[ImageRecord],
    negative_background: Optional[Sequence[ImageRecord]] = None,
    name: str = "corpus",
    seed: int = 0,
    created_at: Optional[str] = None,
) -> DatasetManifest:
    """Combine class groups into one manifest.

    Background negatives keep the negative label but carry a marker so their
    share can be reported separately.
    """
    if not positive:
        raise ValueError("corpus must contain positive-class records")
    if not negative_wild and not negative_background:
        raise ValueError("corpus must contain negative-class records")
    for r in positive:
        if r.label is not Label.POSITIVE:
            raise ValueError(f"record {r.record_id} in the positive group is not labeled positive")
    for r in list(negative_wild) + list(negative_background or []):
        if r.label is not Label.NEGATIVE:
            raise ValueError(f"record {r.record_id} in a negative group is not labeled negative")

    groups = [("positive", positive), ("negative_wild", negative_wild)]
    if negative_background:
        groups.append(("negative_background", negative_background))
    by_checksum: dict[str, str] = {}
    collisions = []
    for gname, group in groups:
        for r in group:
            prior = by_checksum.get(r.checksum)
            if prior is not None and prior != gname:
                collisions.append(r.record_id)
            by_checksum.setdefault(r.checksum, gname)
    if collisions:
        raise ValueError(f"checksum duplicates across groups: {collisions}")

    rows = [ManifestRow.from_record(r) for r in positive]
    rows += [ManifestRow.from_record(r) for r in negative_wild]
    if negative_background:
        rows += [
            ManifestRow(
                record_id=r.record_id,
                label=Label.NEGATIVE,
                source=r.source,
                checksum=r.checksum,
                background_marker=True,
            )
            for r in negative_background
        ]
    return DatasetManifest.create(name, rows, seed=seed, created_at=created_at)


def split_train_test(
    manifest: DatasetManifest, ratio: float, seed: int, created_at: Optional[str] = None
) -> SplitAssignment:
    """Deterministic stratified split: per class, floor(ratio * n) to train."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0,1), got {ratio}")
    if not manifest.rows:
        raise ValueError("cannot split an empty manifest")

    by_label: dict[Label, list[ManifestRow]] = {}
    for row in manifest.rows:
        by_label.setdefault(row.label, []).append(row)
    for label, rows in by_label.items():
        if len(rows) < 2:
            raise ValueError(f"class {label.value} has fewer than 2 records; cannot stratify")

    rng = random.Random(seed)
    train_rows, test_rows = [], []
    for label in sorted(by_label, key=lambda l: l.value):
        rows = sorted(by_label[label], key=lambda r: r.record_id)
        rng.shuffle(rows)
        n_train = int(ratio * len(rows))
        train_rows += rows[:n_train]
        test_rows += rows[n_train:]

    train = DatasetManifest.create(
        f"{manifest.name}_train", train_rows, seed=seed, parent=manifest.name, created_at=created_at
    )
    test = DatasetManifest.create(
        f"{manifest.name}_test_in", test_rows, seed=seed, parent=manifest.name, created_at=created_at
    )
    return SplitAssignment(train=train, test_in=test, ratio=ratio, seed=seed)


def build_ood_testsets(
    marketplace_holdout: Sequence[ImageRecord],
    general_corpus: Sequence[ImageRecord],
    taxon_root: str,
    taxonomy: LexicalTaxonomy,
    training_manifests: Sequence[DatasetManifest] = (),
    seed: int = 0,
    created_at: Optional[str] = None,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Two out-of-distribution test sets sharing one positive subset.

    ``test_out_pet`` pairs the marketplace holdout with the full captioned
    corpus as negatives; ``test_out_nopet`` uses only the captioned images
    whose descriptions never mention the taxon class.
    """
    train_checksums = {
        row.checksum for m in training_manifests for row in m.rows
    }
    overlaps = [r.record_id for r in marketplace_holdout if r.checksum in train_checksums]
    if overlaps:
        raise ValueError(f"holdout records overlap training manifests: {overlaps}")

    if not general_corpus:
        log.warning("general corpus is empty; OOD test sets contain no negatives")

    pos_rows = [ManifestRow.from_record(r, label=Label.POSITIVE) for r in marketplace_holdout]
    neg_rows_all = [ManifestRow.from_record(r, label=Label.NEGATIVE) for r in general_corpus]
    filtered = filter_captioned_corpus(general_corpus, taxon_root, taxonomy) if general_corpus else []
    neg_rows_nopet = [ManifestRow.from_record(r, label=Label.NEGATIVE) for r in filtered]

    test_out_pet = DatasetManifest.create(
        "test_out_pet", pos_rows + neg_rows_all, seed=seed, created_at=created_at
    )
    test_out_nopet = DatasetManifest.create(
        "test_out_nopet", pos_rows + neg_rows_nopet, seed=seed, created_at=created_at
    )
    return test_out_pet, test_out_nopet
