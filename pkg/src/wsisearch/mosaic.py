"""Mosaic baseline: k-means with a fixed cluster count plus percentage sampling.

The comparison baseline partitions a WSI's patch embeddings into k=9
clusters and samples a fixed fraction (5-20%) of each cluster, with at
least one patch per non-empty cluster. Unlike the distance-binning
selector, both k and the fraction are empirical knobs.

The clustering here runs on the same embeddings the montage selector
uses and samples uniformly within clusters; the original mosaic's
RGB-histogram features and spatial guidance are out of scope, which is
sufficient for compactness/accuracy comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_embedding_matrix, check_seed
from .embeddings import EmbeddingSet
from .exceptions import EmptyInputError
from .montage import Montage, Selection


@dataclass(frozen=True)
class MosaicConfig:
    """Cluster count, per-cluster sampling fraction, and solver knobs."""

    k: int = 9
    sample_fraction: float = 0.05
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


def kmeans(
    es: EmbeddingSet, k: int, seed: int, max_iters: int = 100, tol: float = 1e-6
) -> tuple[dict[int, int], np.ndarray]:
    """Lloyd's k-means over one WSI's embeddings.

    Returns (patch_index -> cluster id, cluster centers). k is capped at
    the number of embeddings; seeding is k-means++ style and fully
    deterministic given the seed.
    """
    X = check_embedding_matrix(es.vectors)
    labels, centers, _, _ = _lloyd(X, min(k, X.shape[0]), check_seed(seed), max_iters, tol)
    assignments = {int(i): int(c) for i, c in zip(es.patch_indices, labels)}
    return assignments, centers


def select_mosaic(es: EmbeddingSet, cfg: MosaicConfig) -> Montage:
    """Sample max(1, floor(fraction * cluster size)) patches per cluster.

    Selection within each cluster draws from PCG64 seeded by
    (seed, cluster id); the mosaic is a pure function of (es, cfg).
    """
    if len(es) == 0:
        raise EmptyInputError(f"WSI {es.wsi_id!r} has no embeddings to cluster")
    assignments, _ = kmeans(es, cfg.k, cfg.seed, cfg.max_iters, cfg.tol)
    members: dict[int, list[int]] = {}
    for patch_index in es.patch_indices:
        members.setdefault(assignments[int(patch_index)], []).append(int(patch_index))
    selections = []
    for cluster in sorted(members):
        pool = members[cluster]
        take = max(1, int(np.floor(cfg.sample_fraction * len(pool))))
        rng = np.random.default_rng([cfg.seed, cluster])
        chosen = sorted(rng.choice(len(pool), size=take, replace=False).tolist())
        selections.extend(
            Selection(bin_key=cluster, patch_index=pool[pos], member_count=len(pool))
            for pos in chosen
        )
    return Montage(wsi_id=es.wsi_id, seed=cfg.seed, selections=tuple(selections), method="mosaic")


class MosaicSelector(BaseEstimator):
    """Scikit-learn-style estimator for the cluster-and-sample baseline.

    Attributes after ``fit``: ``cluster_centers_``, ``labels_`` (cluster
    id per row), ``inertia_``, and ``selection_`` (selected row
    positions).
    """

    def __init__(
        self,
        n_clusters: int = 9,
        sample_fraction: float = 0.05,
        random_state: int = 0,
        max_iter: int = 100,
        tol: float = 1e-6,
    ):
        self.n_clusters = n_clusters
        self.sample_fraction = sample_fraction
        self.random_state = random_state
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        X = check_embedding_matrix(X)
        cfg = MosaicConfig(
            k=self.n_clusters,
            sample_fraction=self.sample_fraction,
            seed=check_seed(self.random_state),
            max_iters=self.max_iter,
            tol=self.tol,
        )
        self.n_features_in_ = X.shape[1]
        labels, centers, inertia, history = _lloyd(
            X, min(cfg.k, X.shape[0]), cfg.seed, cfg.max_iters, cfg.tol
        )
        self.labels_ = labels
        self.cluster_centers_ = centers
        self.inertia_ = inertia
        self.inertia_history_ = history
        es = EmbeddingSet(
            wsi_id="", patch_indices=np.arange(X.shape[0], dtype=np.uint32), vectors=X
        )
        self.selection_ = np.array(select_mosaic(es, cfg).patch_indices, dtype=np.int64)
        return self

    def fit_select(self, X) -> np.ndarray:
        return self.fit(X).selection_


def _plusplus_seeding(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[int(rng.integers(n))]
    if k == 1:
        return centers
    closest = _sq_dist_to(X, centers[0])
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            # All points coincide with an existing center; any choice is
            # equivalent, fall back to a uniform draw.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers[i] = X[idx]
        closest = np.minimum(closest, _sq_dist_to(X, centers[i]))
    return centers


def _lloyd(
    X: np.ndarray, k: int, seed: int, max_iters: int, tol: float
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Deterministic Lloyd iterations.

    Returns (labels, centers, inertia, per-iteration inertia history).
    Empty clusters are reseeded to the point currently farthest from its
    own center (when such a point exists at positive distance), which
    keeps the objective non-increasing. Exact-duplicate degeneracies may
    therefore leave fewer than k effective clusters.
    """
    n = X.shape[0]
    if n == 0:
        raise EmptyInputError("cannot cluster zero embeddings")
    rng = np.random.default_rng(seed)
    centers = _plusplus_seeding(X, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    inertia = np.inf
    history: list[float] = []
    for _ in range(max_iters):
        d2 = _all_sq_dists(X, centers)
        labels = d2.argmin(axis=1)
        own = d2[np.arange(n), labels]
        for c in range(k):
            if not np.any(labels == c):
                far = int(own.argmax())
                if own[far] <= 0:
                    continue
                centers[c] = X[far]
                labels[far] = c
                own[far] = 0.0
        inertia = float(own.sum())
        history.append(inertia)
        new_centers = centers.copy()
        for c in range(k):
            mask = labels == c
            if np.any(mask):
                new_centers[c] = X[mask].mean(axis=0)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break
    return labels, centers, inertia, history


def _sq_dist_to(X: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = X - c
    return np.einsum("ij,ij->i", diff, diff)


def _all_sq_dists(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
