"""Tissue masks and the dense low-magnification patch grid.

A slide is represented at low magnification by a binary tissue mask.
Dense patching tiles the mask with a fixed stride, patches are filtered
by their tissue fraction, and surviving patches can be mapped to
high-magnification pixel coordinates for later feature extraction.

Mask files use the "MSK1" format: magic ``4D 53 4B 31``, u32-LE width,
u32-LE height, then ``ceil(width*height/8)`` bytes of row-major pixels
packed little-endian within each byte (bit 0 = first pixel).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from ._validation import round_half_away
from .exceptions import FormatError

MASK_MAGIC = b"MSK1"


@dataclass(frozen=True)
class TissueMask:
    """Binary grid marking tissue (True) vs background at low magnification."""

    bits: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got ndim={bits.ndim}")
        if bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be non-empty, got shape {bits.shape}")
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class PatchRef:
    """One square patch: pixel origin, side length, magnification, ordinal."""

    x: int
    y: int
    size: int
    magnification: float
    index: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"patch origin must be non-negative, got ({self.x}, {self.y})")
        if self.size < 1:
            raise ValueError(f"patch size must be >= 1, got {self.size}")


@dataclass(frozen=True)
class PatchingConfig:
    """Grid geometry for dense patching and the low->high magnification map."""

    patch_size: int = 128
    overlap: float = 0.05
    tissue_threshold: float = 0.70
    low_mag: float = 2.5
    high_mag: float = 20.0
    high_patch_size: int = 1024

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        if not 0.0 <= self.tissue_threshold <= 1.0:
            raise ValueError("tissue_threshold must lie in [0, 1]")
        if self.stride < 1:
            raise ValueError("stride rounded to zero; reduce overlap")
        # The magnification ratio and the patch-size ratio must agree, or
        # the high-mag footprint would not cover the low-mag footprint.
        if not math.isclose(
            self.high_mag / self.low_mag,
            self.high_patch_size / self.patch_size,
            rel_tol=1e-9,
        ):
            raise ValueError(
                "scale mismatch: high_mag/low_mag "
                f"({self.high_mag / self.low_mag:g}) != high_patch_size/patch_size "
                f"({self.high_patch_size / self.patch_size:g})"
            )

    @property
    def stride(self) -> int:
        return round_half_away(self.patch_size * (1.0 - self.overlap))


def dense_patch(mask: TissueMask, cfg: PatchingConfig) -> list[PatchRef]:
    """Tile the mask with grid-aligned patches at the configured stride.

    Patches are emitted row-major (y outer, x inner) with sequential
    indices. Partial patches at the right/bottom edge are discarded so
    every tissue-percentage denominator is the full patch area.
    """
    size, stride = cfg.patch_size, cfg.stride
    patches = []
    index = 0
    for y in range(0, mask.height - size + 1, stride):
        for x in range(0, mask.width - size + 1, stride):
            patches.append(PatchRef(x=x, y=y, size=size, magnification=cfg.low_mag, index=index))
            index += 1
    return patches


def tissue_percentage(mask: TissueMask, patch: PatchRef) -> float:
    """Fraction of tissue pixels under the patch footprint."""
    if patch.x + patch.size > mask.width or patch.y + patch.size > mask.height:
        raise IndexError(
            f"patch footprint ({patch.x},{patch.y})+{patch.size} exceeds "
            f"mask bounds {mask.width}x{mask.height}"
        )
    footprint = mask.bits[patch.y : patch.y + patch.size, patch.x : patch.x + patch.size]
    return float(np.count_nonzero(footprint)) / float(patch.size * patch.size)


def filter_by_tissue(
    mask: TissueMask, patches: list[PatchRef], threshold: float
) -> list[PatchRef]:
    """Keep patches whose tissue fraction strictly exceeds ``threshold``.

    Order and original indices are preserved, so the result is stable
    under repeated filtering.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return [p for p in patches if tissue_percentage(mask, p) > threshold]


def to_high_mag(patch: PatchRef, cfg: PatchingConfig) -> PatchRef:
    """Map a low-magnification patch to its high-magnification twin.

    The origin scales by high_mag/low_mag; the index is carried over so
    embeddings computed at either magnification stay aligned.
    """
    # Exact integer arithmetic: floor(x*hp/p + 1/2) without float error.
    hp, p = cfg.high_patch_size, cfg.patch_size
    x = (2 * patch.x * hp + p) // (2 * p)
    y = (2 * patch.y * hp + p) // (2 * p)
    return replace(patch, x=x, y=y, size=hp, magnification=cfg.high_mag)


def segment_tissue(gray: np.ndarray, threshold: float = 0.8) -> TissueMask:
    """Luminance-threshold fallback segmenter for raw grayscale images.

    A pixel counts as tissue when its value is below ``threshold`` times
    the image maximum (stained tissue is darker than glass background).
    Stand-in for a learned segmentation model; masks produced by any
    external segmenter can be supplied as MSK1 files instead.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    peak = gray.max()
    if peak <= 0:
        return TissueMask(np.zeros(gray.shape, dtype=bool))
    return TissueMask(gray < threshold * peak)


def save_mask(mask: TissueMask, path: str | os.PathLike) -> None:
    """Write a mask in MSK1 format."""
    header = MASK_MAGIC + struct.pack("<II", mask.width, mask.height)
    payload = np.packbits(mask.bits.reshape(-1), bitorder="little").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_mask(path: str | os.PathLike) -> TissueMask:
    """Read an MSK1 mask file, validating magic and payload length."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MASK_MAGIC:
        raise FormatError(f"bad mask magic in {path!r}", offset=0)
    if len(data) < 12:
        raise FormatError(f"truncated mask header in {path!r}", offset=len(data))
    width, height = struct.unpack_from("<II", data, 4)
    if width < 1 or height < 1:
        raise FormatError(f"mask dimensions must be positive, got {width}x{height}", offset=4)
    nbytes = (width * height + 7) // 8
    if len(data) != 12 + nbytes:
        raise FormatError(
            f"mask payload length mismatch: expected {12 + nbytes} bytes, got {len(data)}",
            offset=min(len(data), 12 + nbytes),
        )
    bits = np.unpackbits(
        np.frombuffer(data, dtype=np.uint8, offset=12), bitorder="little"
    )[: width * height]
    return TissueMask(bits.astype(bool).reshape(height, width))
