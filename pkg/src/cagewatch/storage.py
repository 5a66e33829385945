"""Content-addressed image store plus the newline-delimited failure report."""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path
from typing import Iterable, Iterator

from PIL import Image

from .records import FetchFailure


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class NotAnImageError(ValueError):
    pass


class ImageStore:
    """Images stored under ``root/blobs/<checksum>.png`` keyed by content hash.

    Writing the same bytes twice is a no-op, which is what makes reruns
    against a frozen source idempotent.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.blob_dir.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes, validate: bool = True) -> tuple[str, str]:
        """Store raw image bytes; returns (checksum, storage key)."""
        if validate:
            try:
                with Image.open(io.BytesIO(data)) as im:
                    im.verify()
            except Exception as exc:
                raise NotAnImageError(f"payload is not a decodable image: {exc}") from exc
        checksum = sha256_hex(data)
        path = self.blob_dir / f"{checksum}.png"
        if not path.exists():
            path.write_bytes(data)
        return checksum, str(path.relative_to(self.root))

    def put_image(self, image: Image.Image) -> tuple[str, str]:
        buf = io.BytesIO()
        image.save(buf, format="PNG")
        return self.put(buf.getvalue(), validate=False)

    def path_for(self, checksum: str) -> Path:
        return self.blob_dir / f"{checksum}.png"

    def open(self, checksum: str) -> Image.Image:
        path = self.path_for(checksum)
        if not path.exists():
            raise FileNotFoundError(f"no blob for checksum {checksum}")
        return Image.open(path).convert("RGB")

    def read_bytes(self, checksum: str) -> bytes:
        return self.path_for(checksum).read_bytes()

    def __contains__(self, checksum: str) -> bool:
        return self.path_for(checksum).exists()

    def checksums(self) -> Iterator[str]:
        for p in sorted(self.blob_dir.glob("*.png")):
            yield p.stem


def write_failure_report(path: str | Path, failures: Iterable[FetchFailure]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in failures:
            fh.write(json.dumps({"uri": f.uri, "reason": f.reason, "attempts": f.attempts}) + "\n")


def read_failure_report(path: str | Path) -> list[FetchFailure]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out.append(FetchFailure(uri=obj["uri"], reason=obj["reason"], attempts=obj["attempts"]))
    return out
