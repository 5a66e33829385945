"""Core record types shared across ingestion and dataset assembly."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Optional


class SourceKind(str, Enum):
    """Where an image came from."""

    MARKETPLACE = "marketplace"
    TAXON_OBSERVATION = "taxon_observation"
    WEB_SEARCH = "web_search"
    CAPTIONED_CORPUS = "captioned_corpus"
    SYNTHETIC = "synthetic"


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class ListingRecord:
    """One marketplace listing: its text plus the image URLs it carries."""

    listing_id: str
    post_text: str
    image_urls: tuple[str, ...]
    posted_at: datetime

    def __post_init__(self):
        if not self.image_urls:
            raise ValueError(f"listing {self.listing_id} has no image URLs")
        if self.posted_at.tzinfo is None:
            raise ValueError(f"listing {self.listing_id}: posted_at must be timezone-aware")


def make_record_id(source: SourceKind, uri: str) -> str:
    """Stable id for an image: depends only on (source, uri), never on fetch order."""
    digest = hashlib.sha256(f"{source.value}:{uri}".encode("utf-8")).hexdigest()
    return digest[:16]


@dataclass
class ImageRecord:
    """A sourced image with provenance. ``checksum`` is SHA-256 of the stored bytes."""

    record_id: str
    source: SourceKind
    uri: str
    checksum: str
    bytes_path: str
    fetched_at: datetime
    caption: Optional[str] = None
    species_tag: Optional[str] = None
    label: Optional[Label] = None
    background_marker: bool = False

    @classmethod
    def build(
        cls,
        source: SourceKind,
        uri: str,
        checksum: str,
        bytes_path: str,
        fetched_at: Optional[datetime] = None,
        **kwargs,
    ) -> "ImageRecord":
        return cls(
            record_id=make_record_id(source, uri),
            source=source,
            uri=uri,
            checksum=checksum,
            bytes_path=bytes_path,
            fetched_at=fetched_at or datetime.now(timezone.utc),
            **kwargs,
        )


@dataclass
class SpeciesInventory:
    """Unique species seen in a sample, in first-appearance order."""

    species: list[str] = field(default_factory=list)
    saturation_index: int = 0
    sample_size: int = 0

    def __post_init__(self):
        if len(set(self.species)) != len(self.species):
            raise ValueError("species list contains duplicates")
        if self.saturation_index > self.sample_size:
            raise ValueError("saturation_index exceeds sample_size")


def save_records(path, records: Iterable["ImageRecord"]) -> None:
    """Newline-delimited JSON, one ImageRecord per line."""
    import json
    from pathlib import Path

    with open(Path(path), "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "record_id": r.record_id,
                "source": r.source.value,
                "uri": r.uri,
                "caption": r.caption,
                "species_tag": r.species_tag,
                "label": r.label.value if r.label else None,
                "checksum": r.checksum,
                "bytes_path": r.bytes_path,
                "fetched_at": r.fetched_at.isoformat(),
                "background_marker": r.background_marker,
            }, sort_keys=True) + "\n")


def load_records(path) -> list["ImageRecord"]:
    import json
    from pathlib import Path

    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append(ImageRecord(
                record_id=obj["record_id"],
                source=SourceKind(obj["source"]),
                uri=obj["uri"],
                caption=obj.get("caption"),
                species_tag=obj.get("species_tag"),
                label=Label(obj["label"]) if obj.get("label") else None,
                checksum=obj["checksum"],
                bytes_path=obj["bytes_path"],
                fetched_at=datetime.fromisoformat(obj["fetched_at"]),
                background_marker=obj.get("background_marker", False),
            ))
    return out


@dataclass(frozen=True)
class FetchFailure:
    """One URL that could not be turned into an ImageRecord."""

    uri: str
    reason: str
    attempts: int
