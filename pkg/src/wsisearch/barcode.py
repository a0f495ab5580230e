"""MinMax binary barcodes and bit-packed Hamming distance.

A feature vector of dimension D becomes a barcode of D-1 bits: bit j is
set iff feature[j+1] - feature[j] > 0 (discrete differentiation, ties to
zero so the map is total). Barcodes are packed little-endian within each
byte (bit 0 = first bit); unused trailing bits are kept zero and masked
during distance computation, so popcount over the packed words equals
the per-bit Hamming distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_embedding_matrix, check_vector


@dataclass(frozen=True)
class Barcode:
    """Packed bit vector of known length."""

    bits: np.ndarray  # uint8, shape (ceil(nbits/8),), pad bits zero
    nbits: int

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if self.nbits < 1:
            raise ValueError("barcode must have at least one bit")
        if bits.shape != ((self.nbits + 7) // 8,):
            raise ValueError(
                f"packed length {bits.shape} inconsistent with nbits={self.nbits}"
            )
        bits = _mask_pad(bits.copy(), self.nbits)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bools(cls, bools) -> "Barcode":
        bools = np.asarray(bools, dtype=bool).reshape(-1)
        if bools.size < 1:
            raise ValueError("barcode must have at least one bit")
        return cls(bits=np.packbits(bools, bitorder="little"), nbits=bools.size)

    def unpack(self) -> np.ndarray:
        """Boolean view of the bits, trailing padding dropped."""
        return np.unpackbits(self.bits, bitorder="little")[: self.nbits].astype(bool)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Barcode):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.nbits, self.bits.tobytes()))


def minmax_barcode(feature) -> Barcode:
    """Binarize a feature vector by the sign of its consecutive differences."""
    feature = check_vector(feature)
    if feature.size < 2:
        raise ValueError("MinMax barcoding needs dimension >= 2")
    return Barcode.from_bools(np.diff(feature) > 0)


def hamming(a: Barcode, b: Barcode) -> int:
    """Number of differing bits, computed on the packed representation."""
    if a.nbits != b.nbits:
        raise ValueError(f"barcode length mismatch: {a.nbits} vs {b.nbits}")
    xor = _mask_pad(np.bitwise_xor(a.bits, b.bits), a.nbits)
    return int(np.bitwise_count(xor).sum())


def pack_barcodes(barcodes: list[Barcode]) -> np.ndarray:
    """Stack same-length barcodes into a (K, nbytes) uint8 matrix."""
    if not barcodes:
        raise ValueError("cannot stack zero barcodes")
    nbits = barcodes[0].nbits
    if any(b.nbits != nbits for b in barcodes):
        raise ValueError("barcodes must share one length")
    return np.stack([b.bits for b in barcodes])


def hamming_matrix(q: np.ndarray, t: np.ndarray, nbits: int) -> np.ndarray:
    """All-pairs Hamming distances between two packed barcode matrices.

    ``q`` is (Q, nbytes), ``t`` is (T, nbytes); returns int64 (Q, T).
    """
    q = _mask_pad(np.ascontiguousarray(q, dtype=np.uint8).copy(), nbits)
    t = _mask_pad(np.ascontiguousarray(t, dtype=np.uint8).copy(), nbits)
    xor = np.bitwise_xor(q[:, None, :], t[None, :, :])
    return np.bitwise_count(xor).sum(axis=2, dtype=np.int64)


class MinMaxBarcoder(TransformerMixin, BaseEstimator):
    """Stateless transformer from feature matrices to packed barcodes.

    ``transform`` maps an (n, D) matrix to an (n, ceil((D-1)/8)) uint8
    matrix of packed bits; ``n_bits_`` records the barcode length D-1.
    """

    def fit(self, X, y=None):
        X = check_embedding_matrix(X, allow_empty=True)
        if X.shape[1] < 2:
            raise ValueError("MinMax barcoding needs dimension >= 2")
        self.n_features_in_ = X.shape[1]
        self.n_bits_ = X.shape[1] - 1
        return self

    def transform(self, X) -> np.ndarray:
        X = check_embedding_matrix(X, allow_empty=True)
        if X.shape[1] < 2:
            raise ValueError("MinMax barcoding needs dimension >= 2")
        bools = np.diff(X, axis=1) > 0
        return np.packbits(bools, axis=1, bitorder="little")


def _mask_pad(packed: np.ndarray, nbits: int) -> np.ndarray:
    """Zero the unused high bits of the final byte (in place when writable)."""
    pad = (-nbits) % 8
    if pad:
        packed[..., -1] &= 0xFF >> pad
    return packed
