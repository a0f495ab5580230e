"""Per-patch embedding vectors, the EMB1 file format, and a synthetic generator.

The engine never runs a neural network: feature extraction happens
elsewhere and lands here as EMB1 files. Format: magic ``45 4D 42 31``,
u32-LE record count N, u32-LE dimension D, then N records of
(u32-LE patch_index, D x f32-LE values). An optional JSON sidecar
manifest at ``<file>.json`` may carry wsi_id and provenance; its absence
is legal. Values are stored as 32-bit floats; all distance arithmetic
downstream runs in 64-bit.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError

EMB_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


@dataclass
class EmbeddingSet:
    """All embeddings of one WSI, keyed by patch index."""

    wsi_id: str
    patch_indices: np.ndarray  # uint32, shape (N,)
    vectors: np.ndarray  # float32, shape (N, D)
    _by_index: dict = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        idx = np.asarray(self.patch_indices, dtype=np.uint32).reshape(-1)
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got ndim={vec.ndim}")
        if vec.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if idx.shape[0] != vec.shape[0]:
            raise ValueError(
                f"record count mismatch: {idx.shape[0]} indices vs {vec.shape[0]} vectors"
            )
        if len(np.unique(idx)) != len(idx):
            raise ValueError("patch_index values must be unique within one WSI")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embeddings contain non-finite values")
        self.patch_indices = idx
        self.vectors = vec
        self._by_index = {int(i): row for i, row in zip(idx, vec)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def vector_for(self, patch_index: int) -> np.ndarray | None:
        """Embedding row for one patch index, or None when absent."""
        return self._by_index.get(int(patch_index))


def save_embeddings(
    es: EmbeddingSet, path: str | os.PathLike, manifest: dict | None = None
) -> None:
    """Write an EMB1 file (and optional JSON sidecar manifest).

    ``load_embeddings(save_embeddings(x))`` is byte- and value-exact.
    """
    n, d = len(es), es.dim
    records = np.zeros(n, dtype=[("idx", "<u4"), ("vec", "<f4", (d,))])
    records["idx"] = es.patch_indices
    records["vec"] = es.vectors
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(EMB_MAGIC, n, d))
        fh.write(records.tobytes())
    os.replace(tmp, path)
    if manifest is not None:
        sidecar = dict(manifest)
        sidecar.setdefault("wsi_id", es.wsi_id)
        _write_json_atomic(f"{path}.json", sidecar)


def load_embeddings(path: str | os.PathLike, wsi_id: str | None = None) -> EmbeddingSet:
    """Read an EMB1 file, validating structure and finiteness.

    The wsi_id comes from (in priority order) the ``wsi_id`` argument,
    the sidecar manifest, or the file stem.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != EMB_MAGIC:
        raise FormatError(f"bad embedding magic in {path}", offset=0)
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated embedding header in {path}", offset=len(data))
    _, n, d = _HEADER.unpack_from(data)
    if d < 1:
        raise FormatError(f"embedding dimension must be >= 1, got {d}", offset=8)
    expected = _HEADER.size + n * (4 + 4 * d)
    if len(data) != expected:
        raise FormatError(
            f"embedding payload length mismatch: expected {expected} bytes, got {len(data)}",
            offset=min(len(data), expected),
        )
    records = np.frombuffer(
        data, dtype=[("idx", "<u4"), ("vec", "<f4", (d,))], count=n, offset=_HEADER.size
    )
    indices = records["idx"].copy()
    vectors = records["vec"].reshape(n, d).copy()
    bad = ~np.isfinite(vectors)
    if bad.any():
        rec, pos = np.argwhere(bad)[0]
        offset = _HEADER.size + int(rec) * (4 + 4 * d) + 4 + int(pos) * 4
        raise FormatError(f"non-finite embedding value in {path}", offset=offset)
    seen: dict[int, int] = {}
    for rec, idx in enumerate(indices):
        if int(idx) in seen:
            offset = _HEADER.size + rec * (4 + 4 * d)
            raise FormatError(f"duplicate patch_index {int(idx)} in {path}", offset=offset)
        seen[int(idx)] = rec
    if wsi_id is None:
        wsi_id = _sidecar_wsi_id(path) or path.stem
    return EmbeddingSet(wsi_id=wsi_id, patch_indices=indices, vectors=vectors)


def synth_embeddings(
    class_means: np.ndarray,
    sigma: float,
    n: int,
    seed: int,
    wsi_id: str = "synthetic",
) -> EmbeddingSet:
    """Draw ``n`` embeddings around the given class means (test support).

    ``class_means`` is a (C, D) array; patch ``i`` is assigned to class
    ``i % C`` and sampled as mean + Gaussian noise of scale ``sigma``.
    Pure function of its arguments: a fixed seed reproduces the set.
    """
    means = np.asarray(class_means, dtype=np.float32)
    if means.ndim == 1:
        means = means.reshape(1, -1)
    if means.shape[0] < 1:
        raise ValueError("need at least one class mean")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    assign = np.arange(n) % means.shape[0]
    noise = rng.standard_normal((n, means.shape[1]))
    vectors = (means[assign].astype(np.float64) + sigma * noise).astype(np.float32)
    return EmbeddingSet(
        wsi_id=wsi_id, patch_indices=np.arange(n, dtype=np.uint32), vectors=vectors
    )


def _sidecar_wsi_id(path: Path) -> str | None:
    sidecar = Path(f"{path}.json")
    if not sidecar.exists():
        return None
    try:
        manifest = json.loads(sidecar.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    value = manifest.get("wsi_id")
    return value if isinstance(value, str) else None


def _write_json_atomic(path: str | os.PathLike, payload: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
