"""The montage container shared by both patch-selection methods.

A montage records, per bin (distance bin for SDM, cluster for the
mosaic baseline), which patch indices were selected and how many
candidates the bin held. JSON serialization is byte-deterministic so
repeated runs with one seed produce identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .exceptions import FormatError


@dataclass(frozen=True)
class Selection:
    """One selected patch: the bin it came from and the bin's size."""

    bin_key: int
    patch_index: int
    member_count: int


@dataclass(frozen=True)
class Montage:
    """Selected patch set representing one WSI."""

    wsi_id: str
    seed: int
    selections: tuple[Selection, ...]
    method: str = "sdm"

    def __post_init__(self):
        object.__setattr__(self, "selections", tuple(self.selections))
        if self.method not in ("sdm", "mosaic"):
            raise ValueError(f"unknown montage method {self.method!r}")
        keys = [s.bin_key for s in self.selections]
        if self.method == "sdm":
            # SDM picks exactly one patch per bin, bins in ascending key order.
            if any(b <= a for a, b in zip(keys, keys[1:])):
                raise ValueError("SDM montage bin keys must be strictly increasing")
        elif any(b < a for a, b in zip(keys, keys[1:])):
            raise ValueError("mosaic montage cluster ids must be non-decreasing")
        indices = [s.patch_index for s in self.selections]
        if len(set(indices)) != len(indices):
            raise ValueError("montage selections must not repeat a patch index")

    def __len__(self) -> int:
        return len(self.selections)

    @property
    def patch_indices(self) -> list[int]:
        return [s.patch_index for s in self.selections]


def save_montage(montage: Montage, path: str | os.PathLike) -> None:
    payload = {
        "wsi_id": montage.wsi_id,
        "seed": montage.seed,
        "method": montage.method,
        "bins": [
            {
                "key": s.bin_key,
                "member_count": s.member_count,
                "selected_index": s.patch_index,
            }
            for s in montage.selections
        ],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_montage(path: str | os.PathLike) -> Montage:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid montage JSON in {path!r}: {exc}") from exc
    try:
        selections = tuple(
            Selection(
                bin_key=int(b["key"]),
                patch_index=int(b["selected_index"]),
                member_count=int(b["member_count"]),
            )
            for b in payload["bins"]
        )
        return Montage(
            wsi_id=str(payload["wsi_id"]),
            seed=int(payload["seed"]),
            selections=selections,
            method=str(payload.get("method", "sdm")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid montage fields in {path!r}: {exc}") from exc
