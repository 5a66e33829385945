"""Source adapters.

The marketplace the positive class comes from is deliberately not named, so
marketplace access goes through the ``ListingSource`` protocol; production
deployments plug in their own adapter, tests and fixtures use the
deterministic mocks below. The observation and search sources follow the
same pattern, with thin HTTP-backed implementations for real use.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Protocol, runtime_checkable

import requests

from ..records import ListingRecord


@runtime_checkable
class ListingSource(Protocol):
    def list_listings(self, since: Optional[datetime] = None) -> list[dict]:
        """Raw listing payloads, oldest first. May raise on network trouble."""
        ...


@runtime_checkable
class ObservationSource(Protocol):
    def observations(self, species: str, quality_grade: str) -> list[dict]:
        """Raw observation payloads: {"photo_url": ..., "quality_grade": ...}."""
        ...


@runtime_checkable
class SearchEngine(Protocol):
    def search(self, query: str, max_results: int) -> list[str]:
        """Image URLs for a query."""
        ...


class MockListingSource:
    """Frozen listing source backed by an in-memory list or a JSON fixture file.

    Payload shape: {"listing_id", "post_text", "image_urls", "posted_at"}
    with posted_at as an ISO-8601 string.
    """

    def __init__(self, payloads: list[dict]):
        self.payloads = payloads

    @classmethod
    def from_file(cls, path: str | Path) -> "MockListingSource":
        return cls(json.loads(Path(path).read_text()))

    def list_listings(self, since: Optional[datetime] = None) -> list[dict]:
        if since is None:
            return list(self.payloads)
        out = []
        for p in self.payloads:
            posted = datetime.fromisoformat(p["posted_at"])
            if posted.tzinfo is None:
                posted = posted.replace(tzinfo=timezone.utc)
            if posted > since:
                out.append(p)
        return out


class MockObservationSource:
    """Observations keyed by species name."""

    def __init__(self, by_species: dict[str, list[dict]]):
        self.by_species = by_species

    def observations(self, species: str, quality_grade: str) -> list[dict]:
        if species not in self.by_species:
            raise KeyError(f"unknown species: {species}")
        return [o for o in self.by_species[species] if o.get("quality_grade") == quality_grade]


class MockSearchEngine:
    def __init__(self, results_by_query: dict[str, list[str]]):
        self.results_by_query = results_by_query

    def search(self, query: str, max_results: int) -> list[str]:
        return self.results_by_query.get(query, [])[:max_results]


@dataclass
class HttpObservationSource:
    """Minimal client for an iNaturalist-style observations endpoint."""

    base_url: str
    per_page: int = 200
    session: requests.Session = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.session is None:
            self.session = requests.Session()

    def observations(self, species: str, quality_grade: str) -> list[dict]:
        resp = self.session.get(
            f"{self.base_url.rstrip('/')}/observations",
            params={"taxon_name": species, "quality_grade": quality_grade, "per_page": self.per_page},
            timeout=30,
        )
        resp.raise_for_status()
        results = resp.json().get("results", [])
        out = []
        for obs in results:
            for photo in obs.get("photos", []):
                url = photo.get("url")
                if url:
                    out.append({"photo_url": url, "quality_grade": obs.get("quality_grade")})
        return out


def parse_listing(payload: dict) -> ListingRecord:
    """Raises ValueError / KeyError on malformed payloads; callers skip those."""
    posted = datetime.fromisoformat(payload["posted_at"])
    if posted.tzinfo is None:
        posted = posted.replace(tzinfo=timezone.utc)
    return ListingRecord(
        listing_id=str(payload["listing_id"]),
        post_text=payload.get("post_text", ""),
        image_urls=tuple(payload["image_urls"]),
        posted_at=posted,
    )
