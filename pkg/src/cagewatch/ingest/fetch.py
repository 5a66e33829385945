"""Fetch operations that turn external sources into ImageRecords."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Callable, Optional

import requests

from ..records import FetchFailure, ImageRecord, Label, ListingRecord, SourceKind, make_record_id
from ..storage import ImageStore, NotAnImageError
from .adapters import ListingSource, ObservationSource, SearchEngine, parse_listing
from .ratelimit import MAX_RETRIES, RateLimiter, with_retries

log = logging.getLogger(__name__)

# A fetcher maps a URL to raw bytes; tests inject fixtures, production uses HTTP.
Fetcher = Callable[[str], bytes]


class RetriableFetchError(RuntimeError):
    """Transient source failure; carries how many attempts were made."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


def default_fetcher(session: Optional[requests.Session] = None, timeout: float = 30.0) -> Fetcher:
    """HTTP(S) via requests; file:// URIs and bare paths read from disk."""
    http = http_fetcher(session=session, timeout=timeout)

    def fetch(url: str) -> bytes:
        if url.startswith("file://"):
            from pathlib import Path

            return Path(url[len("file://"):]).read_bytes()
        if "://" not in url:
            from pathlib import Path

            return Path(url).read_bytes()
        return http(url)

    return fetch


def http_fetcher(session: Optional[requests.Session] = None, timeout: float = 30.0) -> Fetcher:
    sess = session or requests.Session()

    def fetch(url: str) -> bytes:
        resp = sess.get(url, timeout=timeout)
        resp.raise_for_status()
        return resp.content

    return fetch


def fetch_listing_batch(
    adapter: ListingSource,
    since: Optional[datetime] = None,
    limiter: Optional[RateLimiter] = None,
    sleep=None,
) -> list[ListingRecord]:
    """Pull listings newer than ``since`` (all listings when absent).

    Malformed listing payloads are skipped and logged; source-level failures
    are retried with backoff and surface as RetriableFetchError.
    """
    if limiter is not None:
        limiter.acquire()
    kwargs = {"sleep": sleep} if sleep is not None else {}
    try:
        payloads = with_retries(lambda: adapter.list_listings(since), **kwargs)
    except Exception as exc:
        attempts = getattr(exc, "attempts", 1)
        raise RetriableFetchError(f"listing source failed: {exc}", attempts=attempts) from exc

    records = []
    for payload in payloads:
        try:
            records.append(parse_listing(payload))
        except Exception as exc:
            log.warning("skipping malformed listing payload %r: %s", payload, exc)
    return records


def _download_one(
    uri: str,
    fetcher: Fetcher,
    store: ImageStore,
    limiter: Optional[RateLimiter],
    sleep,
) -> tuple[Optional[tuple[str, str]], Optional[FetchFailure]]:
    attempts_seen = 0

    def attempt() -> bytes:
        nonlocal attempts_seen
        attempts_seen += 1
        if limiter is not None:
            limiter.acquire()
        return fetcher(uri)

    kwargs = {"sleep": sleep} if sleep is not None else {}
    try:
        data = with_retries(attempt, **kwargs)
    except Exception as exc:
        return None, FetchFailure(uri=uri, reason=f"fetch failed: {exc}", attempts=attempts_seen)
    try:
        return store.put(data), None
    except NotAnImageError as exc:
        return None, FetchFailure(uri=uri, reason=str(exc), attempts=attempts_seen)


def download_listing_images(
    listings: list[ListingRecord],
    store: ImageStore,
    fetcher: Optional[Fetcher] = None,
    limiter: Optional[RateLimiter] = None,
    workers: int = 1,
    sleep=None,
) -> tuple[list[ImageRecord], list[FetchFailure]]:
    """Download every image URL from the listings into the store.

    Returns (records, failures). Record ids derive from (source, uri), so the
    output order and ids are stable regardless of download completion order.
    """
    fetcher = fetcher or http_fetcher()
    uris: list[tuple[str, ListingRecord]] = []
    seen = set()
    for listing in listings:
        for uri in listing.image_urls:
            if uri not in seen:
                seen.add(uri)
                uris.append((uri, listing))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: _download_one(t[0], fetcher, store, limiter, sleep), uris))
    else:
        results = [_download_one(uri, fetcher, store, limiter, sleep) for uri, _ in uris]

    records, failures = [], []
    fetched_at = datetime.now(timezone.utc)
    for (uri, listing), (stored, failure) in zip(uris, results):
        if failure is not None:
            failures.append(failure)
            continue
        checksum, key = stored
        records.append(
            ImageRecord(
                record_id=make_record_id(SourceKind.MARKETPLACE, uri),
                source=SourceKind.MARKETPLACE,
                uri=uri,
                caption=listing.post_text or None,
                label=Label.POSITIVE,
                checksum=checksum,
                bytes_path=key,
                fetched_at=fetched_at,
            )
        )
    return records, failures


def fetch_taxon_observations(
    adapter: ObservationSource,
    store: ImageStore,
    species: list[str],
    quality_grade: str = "research",
    max_per_species: int = 100,
    fetcher: Optional[Fetcher] = None,
    limiter: Optional[RateLimiter] = None,
    sleep=None,
) -> tuple[list[ImageRecord], list[FetchFailure]]:
    """Wild-animal images for each species, restricted to ``quality_grade``.

    Unknown species get a warning and are skipped; others proceed.
    """
    fetcher = fetcher or http_fetcher()
    records, failures = [], []
    fetched_at = datetime.now(timezone.utc)
    for name in species:
        kwargs = {"sleep": sleep} if sleep is not None else {}
        try:
            obs = with_retries(lambda: adapter.observations(name, quality_grade), **kwargs)
        except KeyError:
            log.warning("unknown species name %r, skipping", name)
            continue
        except Exception as exc:
            raise RetriableFetchError(
                f"observation source failed for {name}: {exc}",
                attempts=getattr(exc, "attempts", 1),
            ) from exc
        taken = 0
        for o in obs:
            if taken >= max_per_species:
                break
            uri = o["photo_url"]
            stored, failure = _download_one(uri, fetcher, store, limiter, sleep)
            if failure is not None:
                failures.append(failure)
                continue
            checksum, key = stored
            records.append(
                ImageRecord(
                    record_id=make_record_id(SourceKind.TAXON_OBSERVATION, uri),
                    source=SourceKind.TAXON_OBSERVATION,
                    uri=uri,
                    species_tag=name,
                    label=Label.NEGATIVE,
                    checksum=checksum,
                    bytes_path=key,
                    fetched_at=fetched_at,
                )
            )
            taken += 1
    return records, failures


def fetch_query_images(
    engine: SearchEngine,
    store: ImageStore,
    query: str,
    max_results: int = 100,
    fetcher: Optional[Fetcher] = None,
    limiter: Optional[RateLimiter] = None,
    sleep=None,
) -> tuple[list[ImageRecord], list[FetchFailure]]:
    """Background-object images for one search query, deduplicated by checksum."""
    if not query:
        raise ValueError("query must be non-empty")
    fetcher = fetcher or http_fetcher()
    kwargs = {"sleep": sleep} if sleep is not None else {}
    try:
        urls = with_retries(lambda: engine.search(query, max_results), **kwargs)
    except Exception as exc:
        raise RetriableFetchError(
            f"search engine failed: {exc}", attempts=getattr(exc, "attempts", 1)
        ) from exc

    records, failures = [], []
    seen_checksums = set()
    fetched_at = datetime.now(timezone.utc)
    for uri in urls:
        stored, failure = _download_one(uri, fetcher, store, limiter, sleep)
        if failure is not None:
            failures.append(failure)
            continue
        checksum, key = stored
        if checksum in seen_checksums:
            continue
        seen_checksums.add(checksum)
        records.append(
            ImageRecord(
                record_id=make_record_id(SourceKind.WEB_SEARCH, uri),
                source=SourceKind.WEB_SEARCH,
                uri=uri,
                caption=query,
                label=Label.NEGATIVE,
                checksum=checksum,
                bytes_path=key,
                fetched_at=fetched_at,
            )
        )
    return records, failures
