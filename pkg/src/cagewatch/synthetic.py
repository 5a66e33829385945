"""Procedural desk-scale image corpus for experiments and acceptance checks.

Every image composites a shared foreground shape (an "animal" blob with a
randomized silhouette) over one of two context textures:

* positive context: a regular grid/box texture (cage bars over a wall),
* negative context: irregular low-frequency natural texture.

Background-negative images are the cage texture with no blob at all, playing
the role of the sale-photo background objects in the real corpora.

``ood_shift=True`` resamples the texture statistics (grid spacing and both
palettes) without changing what makes an image positive or negative. A
model trained without background negatives has no reason to learn that cage
texture alone is not evidence of a sale photo, so it false-positives on
background-only images in an out-of-distribution test set; mixing
background negatives into training closes that gap.
"""

from __future__ import annotations

from datetime import datetime, timezone
from typing import Optional

import numpy as np

from .datasets import DatasetManifest, ManifestRow
from .records import ImageRecord, Label, SourceKind, make_record_id
from .storage import ImageStore

DEFAULT_IMAGE_SIZE = 64

# (base color, bar color, spacing) for the cage texture
CAGE_IN = ((205, 172, 128), (55, 45, 40), 8)
CAGE_SHIFT = ((178, 158, 150), (45, 40, 50), 11)
# (primary, secondary) colors for the natural texture
NATURAL_IN = ((66, 130, 64), (110, 96, 52))
NATURAL_SHIFT = ((88, 112, 52), (140, 112, 60))

FUR_COLOR = (128, 98, 70)


def _smooth_noise(rng: np.random.Generator, size: int, octaves: int = 3) -> np.ndarray:
    """Low-frequency noise field in [0,1] via upsampled coarse grids."""
    field = np.zeros((size, size))
    for octave in range(octaves):
        coarse = 4 * (2 ** octave)
        grid = rng.random((coarse, coarse))
        ys = np.linspace(0, coarse - 1, size)
        xs = np.linspace(0, coarse - 1, size)
        y0 = np.clip(ys.astype(int), 0, coarse - 2)
        x0 = np.clip(xs.astype(int), 0, coarse - 2)
        wy = (ys - y0)[:, None]
        wx = (xs - x0)[None, :]
        g = (
            grid[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
            + grid[np.ix_(y0 + 1, x0)] * wy * (1 - wx)
            + grid[np.ix_(y0, x0 + 1)] * (1 - wy) * wx
            + grid[np.ix_(y0 + 1, x0 + 1)] * wy * wx
        )
        field += g / (2 ** octave)
    field -= field.min()
    field /= field.max() + 1e-9
    return field


def _cage_texture(rng: np.random.Generator, size: int, shifted: bool) -> np.ndarray:
    base, bar, spacing = CAGE_SHIFT if shifted else CAGE_IN
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = np.asarray(base, dtype=np.float64)
    img += rng.normal(0, 7, (size, size, 3))
    phase_x = int(rng.integers(0, spacing))
    phase_y = int(rng.integers(0, spacing))
    mask = np.zeros((size, size), dtype=bool)
    for offset in range(phase_x, size, spacing):
        mask[:, offset: offset + 2] = True
    for offset in range(phase_y, size, spacing):
        mask[offset: offset + 2, :] = True
    img[mask] = np.asarray(bar, dtype=np.float64) + rng.normal(0, 4, (int(mask.sum()), 3))
    return img


def _natural_texture(rng: np.random.Generator, size: int, shifted: bool) -> np.ndarray:
    primary, secondary = NATURAL_SHIFT if shifted else NATURAL_IN
    blend = _smooth_noise(rng, size)[..., None]
    img = blend * np.asarray(primary, dtype=np.float64) + (1 - blend) * np.asarray(secondary, dtype=np.float64)
    img += rng.normal(0, 6, (size, size, 3))
    return img


def _blob_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    """Randomized closed silhouette: an ellipse with a wobbled radius."""
    cy = size * rng.uniform(0.38, 0.62)
    cx = size * rng.uniform(0.38, 0.62)
    r0 = size * rng.uniform(0.18, 0.26)
    aspect = rng.uniform(0.75, 1.3)
    n_modes = 3
    amps = rng.uniform(0.0, 0.15, n_modes)
    phases = rng.uniform(0, 2 * np.pi, n_modes)
    ys, xs = np.mgrid[0:size, 0:size]
    dy = (ys - cy) * aspect
    dx = xs - cx
    theta = np.arctan2(dy, dx)
    wobble = sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases)))
    radius = r0 * (1 + wobble)
    return np.hypot(dy, dx) <= radius


def _composite_blob(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    size = img.shape[0]
    mask = _blob_mask(rng, size)
    fur = np.asarray(FUR_COLOR, dtype=np.float64) + rng.normal(0, 10, (int(mask.sum()), 3))
    # coarse "fur" banding so the blob is textured, not flat
    ys = np.nonzero(mask)[0]
    fur += 12 * np.sin(ys / 2.5)[:, None]
    img = img.copy()
    img[mask] = fur
    return img


def synthesize_image(
    kind: str,
    rng: np.random.Generator,
    size: int = DEFAULT_IMAGE_SIZE,
    ood_shift: bool = False,
    positive_context: str = "grid_cage",
) -> np.ndarray:
    """One uint8 image. ``kind``: positive | wild_negative | background_negative."""
    if positive_context not in ("grid_cage", "natural_texture"):
        raise ValueError(f"unknown context cue {positive_context!r}")
    cage_is_positive = positive_context == "grid_cage"

    def cage():
        return _cage_texture(rng, size, ood_shift)

    def natural():
        return _natural_texture(rng, size, ood_shift)

    if kind == "positive":
        img = cage() if cage_is_positive else natural()
        img = _composite_blob(img, rng)
    elif kind == "wild_negative":
        img = natural() if cage_is_positive else cage()
        img = _composite_blob(img, rng)
    elif kind == "background_negative":
        img = cage() if cage_is_positive else natural()
    else:
        raise ValueError(f"unknown image kind {kind!r}")
    return np.clip(img, 0, 255).astype(np.uint8)


def _store_image(
    arr: np.ndarray, store: ImageStore, uri: str, label: Label, background: bool = False
) -> ImageRecord:
    from PIL import Image

    checksum, key = store.put_image(Image.fromarray(arr))
    return ImageRecord(
        record_id=make_record_id(SourceKind.SYNTHETIC, uri),
        source=SourceKind.SYNTHETIC,
        uri=uri,
        checksum=checksum,
        bytes_path=key,
        fetched_at=datetime.fromtimestamp(0, tz=timezone.utc),
        label=label,
        background_marker=background,
    )


def generate_records(
    store: ImageStore,
    n_positive: int,
    n_wild: int,
    n_background: int = 0,
    ood_shift: bool = False,
    seed: int = 0,
    size: int = DEFAULT_IMAGE_SIZE,
    positive_context: str = "grid_cage",
    tag: str = "synth",
) -> tuple[list[ImageRecord], list[ImageRecord], list[ImageRecord]]:
    """Deterministic batches of (positive, wild-negative, background-negative)."""
    rng = np.random.default_rng(seed)
    shift_tag = "shift" if ood_shift else "indist"
    pos, wild, background = [], [], []
    for i in range(n_positive):
        arr = synthesize_image("positive", rng, size, ood_shift, positive_context)
        uri = f"synthetic://{tag}/{shift_tag}/positive/{seed}/{i}"
        pos.append(_store_image(arr, store, uri, Label.POSITIVE))
    for i in range(n_wild):
        arr = synthesize_image("wild_negative", rng, size, ood_shift, positive_context)
        uri = f"synthetic://{tag}/{shift_tag}/wild/{seed}/{i}"
        wild.append(_store_image(arr, store, uri, Label.NEGATIVE))
    for i in range(n_background):
        arr = synthesize_image("background_negative", rng, size, ood_shift, positive_context)
        uri = f"synthetic://{tag}/{shift_tag}/background/{seed}/{i}"
        background.append(_store_image(arr, store, uri, Label.NEGATIVE, background=True))
    return pos, wild, background


def generate_synthetic_corpus(
    n_per_class: int,
    store: ImageStore,
    context_cue: str = "grid_cage",
    ood_shift: bool = False,
    seed: int = 0,
    size: int = DEFAULT_IMAGE_SIZE,
    name: Optional[str] = None,
    created_at: Optional[str] = None,
) -> DatasetManifest:
    """Balanced synthetic manifest: n positives + n wild negatives."""
    if n_per_class < 2:
        raise ValueError("n_per_class must be >= 2")
    pos, wild, _ = generate_records(
        store, n_per_class, n_per_class, 0, ood_shift=ood_shift, seed=seed,
        size=size, positive_context=context_cue, tag=name or "synth",
    )
    rows = [ManifestRow.from_record(r) for r in pos + wild]
    manifest_name = name or f"synthetic_{'shift' if ood_shift else 'indist'}_{seed}"
    return DatasetManifest.create(
        manifest_name, rows, seed=seed,
        created_at=created_at or datetime.fromtimestamp(0, tz=timezone.utc).isoformat(),
    )


def color_histogram(images: list[np.ndarray], bins: int = 16) -> np.ndarray:
    """Concatenated per-channel histograms, normalized to sum 1."""
    hists = []
    for c in range(3):
        counts = np.zeros(bins)
        for img in images:
            h, _ = np.histogram(img[..., c], bins=bins, range=(0, 256))
            counts += h
        hists.append(counts)
    flat = np.concatenate(hists).astype(np.float64)
    return flat / flat.sum()


def histogram_distance(images_a: list[np.ndarray], images_b: list[np.ndarray], bins: int = 16) -> float:
    """Total-variation distance between pooled color histograms."""
    ha = color_histogram(images_a, bins)
    hb = color_histogram(images_b, bins)
    return 0.5 * float(np.abs(ha - hb).sum())
