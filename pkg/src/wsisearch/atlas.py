"""Labeled barcode records, median-of-minimum matching, leave-one-out search.

An atlas is the persistent reference database: one record per WSI with
its id, patient id, class label, and the barcode set derived from its
montage patches. WSI-to-WSI distance is the median of minimum Hamming
distances: for each query barcode take the minimum distance to the
target's barcodes, then take the median over the query's barcodes (even
counts use the mean of the middle two, so halves are legal).

Atlas files use the "ATL1" format: magic ``41 54 4C 31``, u32-LE record
count, u32-LE nbits; per record u16-LE length-prefixed UTF-8 id, patient
and label, u32-LE barcode count K, then K x ceil(nbits/8) barcode bytes
(bit 0 = first bit, little-endian within each byte).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .barcode import Barcode, hamming_matrix, minmax_barcode, pack_barcodes
from .embeddings import EmbeddingSet
from .exceptions import EmptyInputError, FormatError, NotFoundError
from .montage import Montage

ATLAS_MAGIC = b"ATL1"


@dataclass
class WsiRecord:
    """One indexed WSI: identity, label, and its montage barcodes."""

    wsi_id: str
    patient_id: str
    label: str
    barcodes: list[Barcode]

    def __post_init__(self):
        if not self.barcodes:
            raise EmptyInputError(f"record {self.wsi_id!r} has no barcodes")
        nbits = self.barcodes[0].nbits
        if any(b.nbits != nbits for b in self.barcodes):
            raise ValueError(f"record {self.wsi_id!r} mixes barcode lengths")
        if not self.patient_id:
            self.patient_id = self.wsi_id
        self._packed = pack_barcodes(self.barcodes)

    @property
    def nbits(self) -> int:
        return self.barcodes[0].nbits

    @property
    def packed(self) -> np.ndarray:
        """(K, nbytes) uint8 matrix of this record's barcodes."""
        return self._packed


@dataclass
class Atlas:
    """Immutable collection of WSI records sharing one barcode length."""

    records: list[WsiRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.wsi_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("atlas wsi_ids must be unique")
        if self.records:
            nbits = self.records[0].nbits
            if any(r.nbits != nbits for r in self.records):
                raise ValueError("all atlas records must share one barcode length")
        self._by_id = {r.wsi_id: r for r in self.records}

    @property
    def nbits(self) -> int:
        if not self.records:
            raise EmptyInputError("atlas has no records")
        return self.records[0].nbits

    @property
    def label_set(self) -> list[str]:
        return sorted({r.label for r in self.records})

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, wsi_id: str) -> bool:
        return wsi_id in self._by_id

    def get(self, wsi_id: str) -> WsiRecord:
        try:
            return self._by_id[wsi_id]
        except KeyError:
            raise NotFoundError(f"wsi_id {wsi_id!r} not in atlas") from None

    def labels(self) -> dict[str, str]:
        return {r.wsi_id: r.label for r in self.records}


@dataclass(frozen=True)
class Ranking:
    """Hits for one query, ascending by distance (ties by wsi_id)."""

    query_id: str
    hits: tuple[tuple[str, float], ...]

    def top(self, n: int) -> list[tuple[str, float]]:
        return list(self.hits[:n])


def median_of_min(query: WsiRecord, target: WsiRecord) -> float:
    """Median over query barcodes of the minimum Hamming distance to the target.

    Directional by definition: no symmetry is implied or relied upon.
    """
    if query.nbits != target.nbits:
        raise ValueError(f"barcode length mismatch: {query.nbits} vs {target.nbits}")
    mins = hamming_matrix(query.packed, target.packed, query.nbits).min(axis=1)
    return float(np.median(mins))


def leave_one_out(atlas: Atlas, query_id: str, exclude_same_patient: bool = True) -> Ranking:
    """Rank every other record by median-of-minimum distance to the query.

    The query itself is always excluded; records sharing its patient_id
    are excluded too unless ``exclude_same_patient`` is False.
    """
    query = atlas.get(query_id)
    hits = []
    for record in atlas.records:
        if record.wsi_id == query_id:
            continue
        if exclude_same_patient and record.patient_id == query.patient_id:
            continue
        hits.append((record.wsi_id, median_of_min(query, record)))
    hits.sort(key=lambda h: (h[1], h[0]))
    return Ranking(query_id=query_id, hits=tuple(hits))


def build_record(
    wsi_id: str,
    patient_id: str,
    label: str,
    montage: Montage,
    high_mag_embeddings: EmbeddingSet,
) -> WsiRecord:
    """Barcode every montage patch's feature vector, in montage bin order."""
    if len(montage) == 0:
        raise EmptyInputError(f"WSI {wsi_id!r} has an empty montage (missed WSI)")
    barcodes = []
    for selection in montage.selections:
        vector = high_mag_embeddings.vector_for(selection.patch_index)
        if vector is None:
            raise ValueError(
                f"WSI {wsi_id!r}: no embedding for selected patch index "
                f"{selection.patch_index}"
            )
        barcodes.append(minmax_barcode(vector))
    return WsiRecord(wsi_id=wsi_id, patient_id=patient_id, label=label, barcodes=barcodes)


def save_atlas(atlas: Atlas, path: str | os.PathLike) -> None:
    """Write an ATL1 atlas file."""
    nbits = atlas.nbits if atlas.records else 0
    chunks = [ATLAS_MAGIC, struct.pack("<II", len(atlas.records), nbits)]
    for record in atlas.records:
        for text in (record.wsi_id, record.patient_id, record.label):
            raw = text.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"string too long for atlas format: {text[:32]!r}...")
            chunks.append(struct.pack("<H", len(raw)))
            chunks.append(raw)
        chunks.append(struct.pack("<I", len(record.barcodes)))
        chunks.append(record.packed.tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_atlas(path: str | os.PathLike) -> Atlas:
    """Read an ATL1 atlas file, validating structure as it goes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != ATLAS_MAGIC:
        raise FormatError(f"bad atlas magic in {path!r}", offset=0)
    if len(data) < 12:
        raise FormatError(f"truncated atlas header in {path!r}", offset=len(data))
    count, nbits = struct.unpack_from("<II", data, 4)
    if count > 0 and nbits < 1:
        raise FormatError(f"atlas nbits must be >= 1, got {nbits}", offset=8)
    nbytes = (nbits + 7) // 8
    pos = 12
    records = []
    for _ in range(count):
        fields = []
        for _ in range(3):
            if pos + 2 > len(data):
                raise FormatError(f"truncated atlas record in {path!r}", offset=pos)
            (length,) = struct.unpack_from("<H", data, pos)
            pos += 2
            if pos + length > len(data):
                raise FormatError(f"truncated atlas string in {path!r}", offset=pos)
            try:
                fields.append(data[pos : pos + length].decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise FormatError(f"invalid UTF-8 in atlas record: {exc}", offset=pos) from exc
            pos += length
        if pos + 4 > len(data):
            raise FormatError(f"truncated atlas record in {path!r}", offset=pos)
        (k,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if k < 1:
            raise FormatError(f"record {fields[0]!r} has zero barcodes", offset=pos - 4)
        if pos + k * nbytes > len(data):
            raise FormatError(f"truncated barcode payload in {path!r}", offset=pos)
        packed = np.frombuffer(data, dtype=np.uint8, count=k * nbytes, offset=pos)
        pos += k * nbytes
        barcodes = [Barcode(bits=row.copy(), nbits=nbits) for row in packed.reshape(k, nbytes)]
        records.append(
            WsiRecord(wsi_id=fields[0], patient_id=fields[1], label=fields[2], barcodes=barcodes)
        )
    if pos != len(data):
        raise FormatError(f"trailing bytes after atlas records in {path!r}", offset=pos)
    return Atlas(records=records)
