"""Distinct-morphology patch selection via one-centroid distance binning.

The selector computes the single centroid (arithmetic mean) of all patch
embeddings of a WSI, measures each patch's Euclidean distance to it,
rounds the distances to integers (halves away from zero), groups patches
into one bin per distinct integer key, and picks one patch per bin
uniformly at random. The bin count is data-driven: it equals the number
of distinct rounded distances, so no cluster count or sampling rate is
chosen by the user.

Randomness is pinned to NumPy's PCG64 seeded per (seed, bin_key), so
adding or removing one bin never perturbs the choice made in another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_embedding_matrix, check_seed, check_vector
from .embeddings import EmbeddingSet
from .montage import Montage, Selection


@dataclass(frozen=True)
class DistanceBin:
    """Patches whose rounded centroid distance shares one integer key."""

    key: int
    members: tuple[int, ...]  # patch indices, input order preserved

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        if not self.members:
            raise ValueError("a distance bin cannot be empty")


def centroid(es: EmbeddingSet) -> np.ndarray:
    """Component-wise mean of all embeddings, accumulated in float64."""
    X = check_embedding_matrix(es.vectors)
    return X.mean(axis=0)


def distances(es: EmbeddingSet, c) -> list[tuple[int, float]]:
    """Euclidean distance of every embedding to the centroid, set order."""
    X = check_embedding_matrix(es.vectors)
    c = check_vector(c, dim=X.shape[1])
    d = _euclidean_to_point(X, c)
    return [(int(i), float(v)) for i, v in zip(es.patch_indices, d)]


def bin_distances(dists: list[tuple[int, float]]) -> list[DistanceBin]:
    """Group (patch_index, distance) pairs by rounded integer distance.

    Bins are sorted by key ascending; members keep their input order.
    The tie rule (halves away from zero) is fixed for determinism.
    """
    groups: dict[int, list[int]] = {}
    for patch_index, d in dists:
        if not np.isfinite(d) or d < 0:
            raise ValueError(f"distances must be finite and >= 0, got {d}")
        key = int(np.floor(d + 0.5))
        groups.setdefault(key, []).append(int(patch_index))
    return [DistanceBin(key=k, members=tuple(groups[k])) for k in sorted(groups)]


def select_montage(bins: list[DistanceBin], seed: int, wsi_id: str = "") -> Montage:
    """Pick one member per bin, uniformly, with per-bin streams.

    Each bin draws from PCG64 seeded by (seed, bin_key); the montage is a
    pure function of (bins, seed).
    """
    if not bins:
        raise ValueError("cannot select a montage from zero bins")
    seed = check_seed(seed)
    selections = []
    for b in sorted(bins, key=lambda b: b.key):
        rng = np.random.default_rng([seed, b.key])
        pos = int(rng.integers(len(b.members)))
        selections.append(
            Selection(bin_key=b.key, patch_index=b.members[pos], member_count=len(b.members))
        )
    return Montage(wsi_id=wsi_id, seed=seed, selections=tuple(selections), method="sdm")


def run_sdm(es: EmbeddingSet, seed: int) -> Montage:
    """Full selection for one WSI: centroid -> distances -> bins -> montage."""
    c = centroid(es)
    bins = bin_distances(distances(es, c))
    montage = select_montage(bins, seed, wsi_id=es.wsi_id)
    return montage


class SDMSelector(BaseEstimator):
    """Scikit-learn-style estimator wrapping the distinct-morphology selection.

    Parameters
    ----------
    random_state : int
        Seed for the per-bin selection streams.

    Attributes
    ----------
    centroid_ : ndarray of shape (dim,)
        Mean embedding.
    distances_ : ndarray of shape (n_samples,)
        Euclidean distance of each row to the centroid.
    labels_ : ndarray of shape (n_samples,)
        Integer bin key of each row (analogous to cluster labels).
    bins_ : list of DistanceBin
        Bins over row positions, ascending by key.
    selection_ : ndarray
        Row positions of the selected patches, one per bin.
    """

    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_embedding_matrix(X)
        seed = check_seed(self.random_state)
        self.n_features_in_ = X.shape[1]
        self.centroid_ = X.mean(axis=0)
        self.distances_ = _euclidean_to_point(X, self.centroid_)
        self.labels_ = np.floor(self.distances_ + 0.5).astype(np.int64)
        es = EmbeddingSet(
            wsi_id="", patch_indices=np.arange(X.shape[0], dtype=np.uint32), vectors=X
        )
        self.bins_ = bin_distances(
            [(int(i), float(d)) for i, d in zip(es.patch_indices, self.distances_)]
        )
        montage = select_montage(self.bins_, seed)
        self.selection_ = np.array(montage.patch_indices, dtype=np.int64)
        return self

    def fit_select(self, X) -> np.ndarray:
        """Fit and return the selected row positions."""
        return self.fit(X).selection_


def _euclidean_to_point(X: np.ndarray, c: np.ndarray) -> np.ndarray:
    # Fixed summation order in 64-bit keeps the integer rounding stable
    # regardless of caller-side parallelism.
    diff = X - c
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))
