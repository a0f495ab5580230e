"""Compact patch selection and barcode-based whole-slide-image search.

Pipeline: tile a low-magnification tissue mask into patches, select a
compact representative subset per slide (distance-binned montage or the
cluster-sampled mosaic baseline), barcode the selected patches' feature
vectors, and match slides by the median of minimum Hamming distances
under leave-one-patient-out evaluation.
"""

from .atlas import (
    Atlas,
    Ranking,
    WsiRecord,
    build_record,
    leave_one_out,
    load_atlas,
    median_of_min,
    save_atlas,
)
from .barcode import Barcode, MinMaxBarcoder, hamming, hamming_matrix, minmax_barcode
from .embeddings import EmbeddingSet, load_embeddings, save_embeddings, synth_embeddings
from .evaluation import (
    ComparisonTable,
    MetricsReport,
    VoteResult,
    compare_methods,
    compute_metrics,
    evaluate_atlas,
    majority_vote,
)
from .exceptions import EmptyInputError, FormatError, NotFoundError, WsiSearchError
from .montage import Montage, Selection, load_montage, save_montage
from .mosaic import MosaicConfig, MosaicSelector, kmeans, select_mosaic
from .patching import (
    PatchingConfig,
    PatchRef,
    TissueMask,
    dense_patch,
    filter_by_tissue,
    load_mask,
    save_mask,
    segment_tissue,
    tissue_percentage,
    to_high_mag,
)
from .sdm import (
    DistanceBin,
    SDMSelector,
    bin_distances,
    centroid,
    distances,
    run_sdm,
    select_montage,
)

__version__ = "0.1.0"

__all__ = [
    "Atlas",
    "Barcode",
    "ComparisonTable",
    "DistanceBin",
    "EmbeddingSet",
    "EmptyInputError",
    "FormatError",
    "MetricsReport",
    "MinMaxBarcoder",
    "Montage",
    "MosaicConfig",
    "MosaicSelector",
    "NotFoundError",
    "PatchRef",
    "PatchingConfig",
    "Ranking",
    "SDMSelector",
    "Selection",
    "TissueMask",
    "VoteResult",
    "WsiRecord",
    "WsiSearchError",
    "bin_distances",
    "build_record",
    "centroid",
    "compare_methods",
    "compute_metrics",
    "dense_patch",
    "distances",
    "evaluate_atlas",
    "filter_by_tissue",
    "hamming",
    "hamming_matrix",
    "kmeans",
    "leave_one_out",
    "load_atlas",
    "load_embeddings",
    "load_mask",
    "load_montage",
    "majority_vote",
    "median_of_min",
    "minmax_barcode",
    "run_sdm",
    "save_atlas",
    "save_embeddings",
    "save_mask",
    "save_montage",
    "segment_tissue",
    "select_montage",
    "select_mosaic",
    "synth_embeddings",
    "tissue_percentage",
    "to_high_mag",
]
