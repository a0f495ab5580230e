"""Command-line pipeline: synth -> montage -> index -> search/evaluate/compare.

All randomness flows from the single --seed flag. Outputs are written
atomically (temp file + rename) and are byte-identical across reruns and
worker counts; console summaries are ordered by wsi_id.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 partial
failure (some but not all per-WSI work items failed).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .atlas import Atlas, build_record, leave_one_out, load_atlas, save_atlas
from .embeddings import EmbeddingSet, load_embeddings, save_embeddings
from .evaluation import compare_methods, evaluate_atlas, write_confusion_csv
from .exceptions import EmptyInputError, WsiSearchError
from .montage import load_montage, save_montage
from .mosaic import MosaicConfig, select_mosaic
from .patching import PatchingConfig, TissueMask, dense_patch, filter_by_tissue, load_mask, save_mask
from .sdm import run_sdm

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3

MONTAGE_SUFFIX = ".montage.json"


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this pipeline reserves
    # 2 for data errors, so remap.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wsisearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="emit a synthetic masks/embeddings/labels dataset")
    synth.add_argument("--out", required=True, help="output dataset directory")
    synth.add_argument("--classes", type=int, default=3)
    synth.add_argument("--wsis-per-class", type=int, default=20)
    synth.add_argument("--patches", type=int, default=200, help="patch grid size per WSI")
    synth.add_argument("--dim", type=int, default=32, help="embedding dimension")
    synth.add_argument("--sigma", type=float, default=1.0, help="intra-class noise scale")
    synth.add_argument(
        "--mean-scale", type=float, default=10.0, help="scale of the class mean vectors"
    )
    synth.add_argument("--missed", type=int, default=0, help="extra WSIs with empty tissue masks")
    synth.add_argument("--seed", type=int, default=42)
    _add_patching_flags(synth)

    montage = sub.add_parser("montage", help="select a montage/mosaic per WSI")
    montage.add_argument("--masks", required=True, help="directory of MSK1 mask files")
    montage.add_argument("--embeddings", required=True, help="directory of EMB1 files")
    montage.add_argument("--out", required=True, help="output directory for montage JSON")
    montage.add_argument("--method", choices=("sdm", "mosaic"), default="sdm")
    montage.add_argument("--seed", type=int, default=42)
    montage.add_argument("--sample-fraction", type=float, default=0.05)
    montage.add_argument("--clusters", type=int, default=9)
    montage.add_argument("--workers", type=int, default=1)
    _add_patching_flags(montage)

    index = sub.add_parser("index", help="barcode montages into an atlas file")
    index.add_argument("--montages", required=True, help="directory of montage JSON files")
    index.add_argument("--embeddings", required=True, help="directory of EMB1 files")
    index.add_argument("--labels", required=True, help="CSV: wsi_id,patient_id,label")
    index.add_argument("--out", required=True, help="output ATL1 atlas path")
    index.add_argument("--workers", type=int, default=1)

    search = sub.add_parser("search", help="rank atlas records against one query")
    search.add_argument("--atlas", required=True)
    search.add_argument("--query", required=True, help="query wsi_id")
    search.add_argument("--top", type=int, default=5)
    search.add_argument("--include-same-patient", action="store_true")

    evaluate = sub.add_parser("evaluate", help="leave-one-patient-out over the whole atlas")
    evaluate.add_argument("--atlas", required=True)
    evaluate.add_argument("--out", required=True, help="output directory for reports")
    evaluate.add_argument("--method", default="sdm", help="method tag used in report filenames")
    evaluate.add_argument("--n", type=int, nargs="+", default=[1, 3, 5])
    evaluate.add_argument("--missed", type=int, default=None, help="missed-WSI count for the report")
    evaluate.add_argument(
        "--montage-summary", default=None, help="summary.json from the montage step"
    )
    evaluate.add_argument("--include-same-patient", action="store_true")
    evaluate.add_argument("--workers", type=int, default=1)

    compare = sub.add_parser("compare", help="rank two methods' atlases per metric")
    compare.add_argument("--sdm-atlas", required=True)
    compare.add_argument("--mosaic-atlas", required=True)
    compare.add_argument("--out", required=True, help="output directory for comparison.csv")
    compare.add_argument("--n", type=int, nargs="+", default=[1, 3, 5])
    compare.add_argument("--sdm-summary", default=None)
    compare.add_argument("--mosaic-summary", default=None)
    compare.add_argument("--include-same-patient", action="store_true")
    return parser


def _add_patching_flags(parser) -> None:
    parser.add_argument("--patch-size", type=int, default=128)
    parser.add_argument("--overlap", type=float, default=0.05)
    parser.add_argument("--tissue-threshold", type=float, default=0.70)
    parser.add_argument("--low-mag", type=float, default=2.5)
    parser.add_argument("--high-mag", type=float, default=20.0)
    parser.add_argument("--high-patch-size", type=int, default=1024)


def _patching_config(args) -> PatchingConfig:
    return PatchingConfig(
        patch_size=args.patch_size,
        overlap=args.overlap,
        tissue_threshold=args.tissue_threshold,
        low_mag=args.low_mag,
        high_mag=args.high_mag,
        high_patch_size=args.high_patch_size,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "synth": cmd_synth,
        "montage": cmd_montage,
        "index": cmd_index,
        "search": cmd_search,
        "evaluate": cmd_evaluate,
        "compare": cmd_compare,
    }[args.command]
    try:
        return handler(args)
    except WsiSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    if args.classes < 1 or args.wsis_per_class < 1 or args.patches < 1:
        raise ValueError("--classes, --wsis-per-class and --patches must be >= 1")
    if args.dim < 2:
        raise ValueError("--dim must be >= 2 so embeddings can be barcoded")
    cfg = _patching_config(args)
    out = Path(args.out)
    masks_dir, emb_dir = out / "masks", out / "embeddings"
    masks_dir.mkdir(parents=True, exist_ok=True)
    emb_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng([args.seed, 0])
    means = rng.normal(0.0, args.mean_scale, size=(args.classes, args.dim))
    rows, cols = _grid_shape(args.patches)
    height = (rows - 1) * cfg.stride + cfg.patch_size
    width = (cols - 1) * cfg.stride + cfg.patch_size

    labels_rows = []
    for ci in range(args.classes):
        for wi in range(args.wsis_per_class):
            wsi_id = f"wsi-c{ci:02d}-{wi:03d}"
            save_mask(TissueMask(np.ones((height, width), dtype=bool)), masks_dir / f"{wsi_id}.msk")
            noise = np.random.default_rng([args.seed, 1, ci, wi]).standard_normal(
                (args.patches, args.dim)
            )
            vectors = (means[ci] + args.sigma * noise).astype(np.float32)
            es = EmbeddingSet(
                wsi_id=wsi_id,
                patch_indices=np.arange(args.patches, dtype=np.uint32),
                vectors=vectors,
            )
            save_embeddings(es, emb_dir / f"{wsi_id}.emb")
            labels_rows.append((wsi_id, wsi_id, f"class{ci}"))
    for mi in range(args.missed):
        wsi_id = f"wsi-miss-{mi:03d}"
        save_mask(TissueMask(np.zeros((height, width), dtype=bool)), masks_dir / f"{wsi_id}.msk")
        es = EmbeddingSet(
            wsi_id=wsi_id,
            patch_indices=np.zeros(0, dtype=np.uint32),
            vectors=np.zeros((0, args.dim), dtype=np.float32),
        )
        save_embeddings(es, emb_dir / f"{wsi_id}.emb")
        labels_rows.append((wsi_id, wsi_id, f"class{mi % args.classes}"))

    labels_rows.sort()
    tmp = out / "labels.csv.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wsi_id", "patient_id", "label"])
        writer.writerows(labels_rows)
    os.replace(tmp, out / "labels.csv")
    print(
        f"synth: {len(labels_rows)} WSIs ({args.classes} classes x {args.wsis_per_class}, "
        f"{args.missed} empty), {args.patches} patches each, dim {args.dim} -> {out}"
    )
    return EXIT_OK


def _grid_shape(patches: int) -> tuple[int, int]:
    """Near-square (rows, cols) with rows*cols == patches."""
    rows = int(np.sqrt(patches))
    while patches % rows:
        rows -= 1
    return rows, patches // rows


# ---------------------------------------------------------------------------
# montage


def cmd_montage(args) -> int:
    cfg = _patching_config(args)
    masks_dir, emb_dir, out = Path(args.masks), Path(args.embeddings), Path(args.out)
    mask_paths = sorted(masks_dir.glob("*.msk"))
    if not mask_paths:
        raise ValueError(f"no .msk files under {masks_dir}")
    out.mkdir(parents=True, exist_ok=True)

    def work(mask_path: Path) -> tuple[str, dict]:
        wsi_id = mask_path.stem
        try:
            mask = load_mask(mask_path)
            retained = filter_by_tissue(mask, dense_patch(mask, cfg), cfg.tissue_threshold)
            if not retained:
                return wsi_id, {"status": "missed", "retained": 0, "selected": 0}
            es = _embeddings_for(emb_dir / f"{wsi_id}.emb", wsi_id, [p.index for p in retained])
            if args.method == "sdm":
                montage = run_sdm(es, args.seed)
            else:
                montage = select_mosaic(
                    es,
                    MosaicConfig(
                        k=args.clusters,
                        sample_fraction=args.sample_fraction,
                        seed=args.seed,
                    ),
                )
            save_montage(montage, out / f"{wsi_id}{MONTAGE_SUFFIX}")
            return wsi_id, {
                "status": "ok",
                "retained": len(retained),
                "selected": len(montage),
            }
        except EmptyInputError:
            return wsi_id, {"status": "missed", "retained": 0, "selected": 0}
        except (WsiSearchError, OSError, ValueError) as exc:
            return wsi_id, {"status": "error", "message": str(exc)}

    results = dict(_map_workers(work, mask_paths, args.workers))
    statuses = []
    for wsi_id in sorted(results):
        info = results[wsi_id]
        statuses.append(info["status"])
        if info["status"] == "ok":
            print(f"{wsi_id} retained={info['retained']} selected={info['selected']}")
        elif info["status"] == "missed":
            print(f"{wsi_id} MISSED")
        else:
            print(f"{wsi_id} ERROR: {info['message']}", file=sys.stderr)
    summary = {
        "method": args.method,
        "seed": args.seed,
        "missed": sum(s == "missed" for s in statuses),
        "errors": sum(s == "error" for s in statuses),
        "wsis": results,
    }
    _write_json(out / "summary.json", summary)
    if "error" in statuses:
        return EXIT_DATA if all(s == "error" for s in statuses) else EXIT_PARTIAL
    return EXIT_OK


def _embeddings_for(path: Path, wsi_id: str, patch_indices: list[int]) -> EmbeddingSet:
    """Load an EMB1 file and restrict it to the given patch indices."""
    es = load_embeddings(path, wsi_id=wsi_id)
    if len(es) == 0:
        raise EmptyInputError(f"embedding file {path} is empty")
    rows, missing = [], []
    for index in patch_indices:
        vector = es.vector_for(index)
        if vector is None:
            missing.append(index)
        else:
            rows.append((index, vector))
    if missing:
        raise ValueError(
            f"{path} lacks embeddings for {len(missing)} retained patches "
            f"(first missing index {missing[0]})"
        )
    return EmbeddingSet(
        wsi_id=wsi_id,
        patch_indices=np.array([r[0] for r in rows], dtype=np.uint32),
        vectors=np.stack([r[1] for r in rows]),
    )


# ---------------------------------------------------------------------------
# index


def cmd_index(args) -> int:
    montage_dir, emb_dir = Path(args.montages), Path(args.embeddings)
    labels = _read_labels(Path(args.labels))
    montage_paths = sorted(montage_dir.glob(f"*{MONTAGE_SUFFIX}"))
    if not montage_paths:
        raise ValueError(f"no montage files under {montage_dir}")

    def work(path: Path):
        montage = load_montage(path)
        wsi_id = montage.wsi_id
        if wsi_id not in labels:
            raise ValueError(f"labels file has no entry for wsi_id {wsi_id!r}")
        patient_id, label = labels[wsi_id]
        high = emb_dir / f"{wsi_id}.high.emb"
        emb_path = high if high.exists() else emb_dir / f"{wsi_id}.emb"
        es = load_embeddings(emb_path, wsi_id=wsi_id)
        return build_record(wsi_id, patient_id, label, montage, es)

    records = _map_workers(work, montage_paths, args.workers)
    records.sort(key=lambda r: r.wsi_id)
    atlas = Atlas(records=records)
    save_atlas(atlas, args.out)
    missed = len(set(labels) - {r.wsi_id for r in records})
    print(f"indexed {len(atlas)} records, nbits={atlas.nbits}, missed={missed}")
    return EXIT_OK


def _read_labels(path: Path) -> dict[str, tuple[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"wsi_id", "patient_id", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"labels file {path} must have header wsi_id,patient_id,label")
        labels = {}
        for row in reader:
            wsi_id = row["wsi_id"].strip()
            labels[wsi_id] = (row["patient_id"].strip() or wsi_id, row["label"].strip())
    if not labels:
        raise ValueError(f"labels file {path} has no rows")
    return labels


# ---------------------------------------------------------------------------
# search / evaluate / compare


def cmd_search(args) -> int:
    atlas = load_atlas(args.atlas)
    ranking = leave_one_out(
        atlas, args.query, exclude_same_patient=not args.include_same_patient
    )
    label = atlas.get(args.query).label
    print(f"query {args.query} (label {label})")
    for rank, (wsi_id, distance) in enumerate(ranking.top(args.top), start=1):
        print(f"{rank:3d}. {wsi_id}  distance={distance:g}  label={atlas.get(wsi_id).label}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    atlas = load_atlas(args.atlas)
    missed = args.missed if args.missed is not None else _missed_from_summary(args.montage_summary)
    reports = evaluate_atlas(
        atlas,
        n_list=tuple(args.n),
        missed_wsis=missed,
        exclude_same_patient=not args.include_same_patient,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "method": args.method,
        "n_records": len(atlas),
        "missed_wsis": missed,
        "metrics": {str(n): report.to_dict() for n, report in reports.items()},
    }
    _write_json(out / "report.json", payload)
    for n, report in reports.items():
        write_confusion_csv(report, out / f"confusion_{args.method}_{n}.csv")
        print(
            f"n={n}: accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f} "
            f"weighted_f1={report.weighted_f1:.4f} (capped={report.capped_count}, "
            f"ties={report.tie_broken_count})"
        )
    return EXIT_OK


def _missed_from_summary(path: str | None) -> int:
    if path is None:
        return 0
    with open(path) as fh:
        return int(json.load(fh).get("missed", 0))


def cmd_compare(args) -> int:
    atlas_sdm = load_atlas(args.sdm_atlas)
    atlas_mosaic = load_atlas(args.mosaic_atlas)
    missed = (
        _missed_from_summary(args.sdm_summary),
        _missed_from_summary(args.mosaic_summary),
    )
    table = compare_methods(
        atlas_sdm,
        atlas_mosaic,
        n_list=tuple(args.n),
        missed=missed,
        exclude_same_patient=not args.include_same_patient,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "comparison.csv")
    for row in table.rows:
        tag = f"@{row.n}" if row.n is not None else ""
        print(
            f"{row.metric}{tag}: sdm={row.sdm:.4f} (rank {row.ranks[0]}) "
            f"mosaic={row.mosaic:.4f} (rank {row.ranks[1]})"
        )
    avg_sdm, avg_mosaic = table.average_ranks()
    print(f"average rank: sdm={avg_sdm:.2f} mosaic={avg_mosaic:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# helpers


def _map_workers(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_json(path, payload) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


if __name__ == "__main__":
    raise SystemExit(main())
