"""
Leave-one-out train/test partition with sampled negative candidates
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from data.interactions import BinaryDataset
from utils.numerics import ConfigurationError, RngStream

logger = logging.getLogger("split")

SPLIT_FORMAT_VERSION = "v1"
DEFAULT_NEGATIVES = 200


class SplitFormatError(ValueError):
    """Raised for a malformed split file or one that does not fit the dataset."""
    pass


@dataclass
class SplitSpec:
    seed: int
    train_positives: List[np.ndarray]
    held_out: Dict[int, int] = field(default_factory=dict)
    negatives: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def tested_users(self) -> List[int]:
        return sorted(self.held_out)

    def candidates(self, user: int) -> np.ndarray:
        return np.concatenate(([self.held_out[user]], self.negatives[user])).astype(np.int64)


def _pick_held_out(ds: BinaryDataset, user: int, rng: RngStream) -> int:
    items = ds.positives[user]
    if ds.timestamps is None:
        return int(items[rng.integers(len(items))])
    times = ds.timestamps[user]
    # Latest timestamp; ties go to the larger item index
    order = np.lexsort((items, times))
    return int(items[order[-1]])


def split_leave_one_out(ds: BinaryDataset, rng: RngStream, n_neg: int = DEFAULT_NEGATIVES,
                        profiles: Optional[List[np.ndarray]] = None,
                        timestamps: Optional[List[np.ndarray]] = None) -> SplitSpec:
    """Hold out each user's latest positive and sample up to n_neg never-rated items.

    `profiles`/`timestamps` replace the dataset's positive lists when the
    split is built from an existing training partition (validation split).
    Users with a single positive keep it for training and are not tested.
    """
    if n_neg < 1:
        raise ConfigurationError(f"n_neg must be >= 1, got {n_neg}")

    view = ds
    if profiles is not None:
        view = BinaryDataset(ds.user_ids, ds.item_ids, profiles, ds.rated, timestamps)

    all_items = np.arange(ds.item_count, dtype=np.int64)
    split = SplitSpec(seed=rng.seed, train_positives=[])
    single = 0
    for user in range(ds.user_count):
        items = view.positives[user]
        if len(items) < 2:
            split.train_positives.append(items.copy())
            single += 1
            continue

        held = _pick_held_out(view, user, rng)
        split.held_out[user] = held
        split.train_positives.append(items[items != held])

        unrated = np.setdiff1d(all_items, ds.rated[user], assume_unique=True)
        count = min(n_neg, len(unrated))
        split.negatives[user] = np.asarray(rng.choice(unrated, count, replace=False), dtype=np.int64)

    logger.info(
        f"Leave-one-out split (seed={rng.seed}): {len(split.held_out)} tested users, "
        f"{single} single-positive users kept for training only"
    )
    return split


def make_validation_split(ds: BinaryDataset, split: SplitSpec, seed: int,
                          n_neg: int = DEFAULT_NEGATIVES) -> SplitSpec:
    """Leave one more positive out of each training profile for model selection."""
    timestamps = None
    if ds.timestamps is not None:
        timestamps = []
        for user in range(ds.user_count):
            keep = np.isin(ds.positives[user], split.train_positives[user])
            timestamps.append(ds.timestamps[user][keep])
    return split_leave_one_out(ds, RngStream(seed), n_neg, profiles=split.train_positives, timestamps=timestamps)


def save_split(split: SplitSpec, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"acae-split {SPLIT_FORMAT_VERSION} seed={split.seed}\n")
        for user in split.tested_users:
            negs = ",".join(str(int(i)) for i in split.negatives[user])
            f.write(f"{user}\t{split.held_out[user]}\t{negs}\n")
    logger.info(f"Wrote split for {len(split.held_out)} users to {path}")


def load_split(path: Union[str, Path], ds: BinaryDataset) -> SplitSpec:
    """Read a split file and rebuild the training profiles from the dataset."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise SplitFormatError(f"cannot read split file {path}: {e}") from e

    if not lines:
        raise SplitFormatError(f"{path}: empty split file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "acae-split" or not header[2].startswith("seed="):
        raise SplitFormatError(f"{path}: bad header '{lines[0]}'")
    if header[1] != SPLIT_FORMAT_VERSION:
        raise SplitFormatError(f"{path}: split format {header[1]} unsupported (expected {SPLIT_FORMAT_VERSION})")

    split = SplitSpec(seed=int(header[2][len("seed="):]), train_positives=[])
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            user_s, held_s, negs_s = line.split("\t")
            user, held = int(user_s), int(held_s)
            negs = np.array([int(x) for x in negs_s.split(",") if x], dtype=np.int64)
        except ValueError as e:
            raise SplitFormatError(f"{path}:{lineno}: malformed row ({e})") from e
        if not (0 <= user < ds.user_count) or held not in ds.positives[user]:
            raise SplitFormatError(f"{path}:{lineno}: user {user} / item {held} do not match the dataset")
        if negs.size and (negs.min() < 0 or negs.max() >= ds.item_count):
            raise SplitFormatError(f"{path}:{lineno}: negative item index outside 0..{ds.item_count - 1}")
        clash = np.intersect1d(negs, ds.rated[user])
        if clash.size:
            raise SplitFormatError(f"{path}:{lineno}: negatives {clash.tolist()} were rated by user {user}")
        split.held_out[user] = held
        split.negatives[user] = negs

    for user in range(ds.user_count):
        items = ds.positives[user]
        if user in split.held_out:
            items = items[items != split.held_out[user]]
        split.train_positives.append(items.copy())
    return split
