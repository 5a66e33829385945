import io
from datetime import datetime, timezone

import numpy as np
import pytest
from PIL import Image

from cagewatch.records import ImageRecord, Label, SourceKind, make_record_id
from cagewatch.storage import ImageStore


def png_bytes(seed: int = 0, size: int = 8) -> bytes:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture
def store(tmp_path):
    return ImageStore(tmp_path / "store")


def fake_record(uri: str, label: Label, caption=None, background=False,
                source: SourceKind = SourceKind.SYNTHETIC, checksum=None) -> ImageRecord:
    """Record without stored bytes; enough for manifest-level operations."""
    import hashlib

    return ImageRecord(
        record_id=make_record_id(source, uri),
        source=source,
        uri=uri,
        caption=caption,
        label=label,
        checksum=checksum or hashlib.sha256(uri.encode()).hexdigest(),
        bytes_path="",
        fetched_at=datetime(2024, 1, 1, tzinfo=timezone.utc),
        background_marker=background,
    )


def make_record(
    store: ImageStore,
    uri: str,
    label: Label,
    source: SourceKind = SourceKind.SYNTHETIC,
    caption=None,
    seed=None,
    background=False,
) -> ImageRecord:
    checksum, key = store.put(png_bytes(seed if seed is not None else hash(uri) % (2**31)))
    return ImageRecord(
        record_id=make_record_id(source, uri),
        source=source,
        uri=uri,
        caption=caption,
        label=label,
        checksum=checksum,
        bytes_path=key,
        fetched_at=datetime(2024, 1, 1, tzinfo=timezone.utc),
        background_marker=background,
    )
