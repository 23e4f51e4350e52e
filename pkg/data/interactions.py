"""
Rating-log ingestion: parse raw files, merge duplicate ratings, binarize
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from utils.numerics import ConfigurationError

logger = logging.getLogger("data")

SEPARATORS = {"double_colon": "::", "csv": ",", "whitespace": None}
COLUMN_ROLES = {"user", "item", "rating", "timestamp", "date", "skip"}
BINARIZE_MODES = {"above_is_one", "keep_above_drop_rest"}

# Format, column layout and binarization rule of each public dataset
DATASET_PRESETS = {
    "movielens-1m": {
        "format": "double_colon",
        "columns": ["user", "item", "rating", "timestamp"],
        "threshold": 3.0,
        "mode": "above_is_one",
        "dedupe": False,
        "rating_scale": [1.0, 5.0],
        "file": "ml-1m/ratings.dat",
    },
    "ciao": {
        "format": "csv",
        "columns": ["user", "item", "skip", "skip", "rating", "date"],
        "threshold": 3.0,
        "mode": "above_is_one",
        "dedupe": True,
        "rating_scale": [1.0, 5.0],
        "file": "movie-ratings.txt",
    },
    "filmtrust": {
        "format": "whitespace",
        "columns": ["user", "item", "rating"],
        "threshold": 2.0,
        "mode": "keep_above_drop_rest",
        "dedupe": False,
        "rating_scale": [0.5, 4.0],
        "file": "ratings.txt",
    },
}


class LogParseError(Exception):
    """Raised when a rating log cannot be read or lacks required columns."""
    pass


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: Optional[int] = None


@dataclass
class InteractionLog:
    records: List[Interaction] = field(default_factory=list)
    rejected_lines: List[int] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def has_timestamps(self) -> bool:
        return bool(self.records) and all(r.timestamp is not None for r in self.records)


@dataclass
class BinaryDataset:
    """Binarized interactions with dense 0-based user and item indices."""
    user_ids: List[str]
    item_ids: List[str]
    positives: List[np.ndarray]
    rated: List[np.ndarray]
    timestamps: Optional[List[np.ndarray]] = None
    dropped_users: List[str] = field(default_factory=list)
    user_index: Dict[str, int] = field(init=False)
    item_index: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {it: i for i, it in enumerate(self.item_ids)}

    @property
    def user_count(self) -> int:
        return len(self.user_ids)

    @property
    def item_count(self) -> int:
        return len(self.item_ids)

    @property
    def positive_count(self) -> int:
        return int(sum(len(p) for p in self.positives))


class DatasetStats(NamedTuple):
    users: int
    items: int
    ratings: int
    sparsity: float

    def as_row(self) -> List[str]:
        return [str(self.users), str(self.items), str(self.ratings), f"{self.sparsity:.2f}"]


def _parse_time(value: str, role: str) -> int:
    if role == "timestamp":
        return int(float(value))
    # Ciao ships calendar dates
    dt = datetime.strptime(value, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_line(line: str, fmt: str, columns: Sequence[str],
               rating_scale: Optional[Sequence[float]] = None) -> Interaction:
    parts = [p.strip() for p in line.split(SEPARATORS[fmt])]
    if len(parts) < len(columns):
        raise ValueError(f"expected {len(columns)} columns, got {len(parts)}")
    fields = {}
    for role, value in zip(columns, parts):
        if role == "skip":
            continue
        if role in ("timestamp", "date"):
            fields["timestamp"] = _parse_time(value, role)
        elif role == "rating":
            fields["rating"] = float(value)
        else:
            if not value:
                raise ValueError(f"empty {role} id")
            fields[role] = value
    if rating_scale is not None:
        low, high = rating_scale
        if not (low <= fields["rating"] <= high):
            raise ValueError(f"rating {fields['rating']} outside scale [{low}, {high}]")
    return Interaction(fields["user"], fields["item"], fields["rating"], fields.get("timestamp"))


def parse_log(path: Union[str, Path], fmt: str, columns: Sequence[str],
              rating_scale: Optional[Sequence[float]] = None) -> InteractionLog:
    """Parse a rating file. Malformed lines are skipped and reported by line number."""
    if fmt not in SEPARATORS:
        raise ConfigurationError(f"unknown log format '{fmt}', expected one of {sorted(SEPARATORS)}")
    unknown = set(columns) - COLUMN_ROLES
    if unknown or not {"user", "item", "rating"} <= set(columns):
        raise ConfigurationError(f"bad column roles {list(columns)}")

    path = Path(path)
    try:
        with open(path, "rb") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise LogParseError(f"cannot read rating log {path}: {e}") from e

    log = InteractionLog()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            line = raw.decode("utf-8").strip()
            log.records.append(parse_line(line, fmt, columns, rating_scale))
        except (UnicodeDecodeError, ValueError, KeyError) as e:
            logger.warning(f"{path.name}:{lineno}: skipped malformed line ({e})")
            log.rejected_lines.append(lineno)

    logger.info(f"Parsed {len(log.records)} ratings from {path} ({len(log.rejected_lines)} lines rejected)")
    return log


def dedupe_earliest(log: InteractionLog) -> InteractionLog:
    """Keep, for every (user, item) pair, only the record with the smallest timestamp."""
    if log.records and not log.has_timestamps:
        raise LogParseError("dedupe_earliest needs a timestamp on every record")

    earliest: Dict[Tuple[str, str], int] = {}
    for pos, rec in enumerate(log.records):
        key = (rec.user, rec.item)
        kept = earliest.get(key)
        if kept is None or rec.timestamp < log.records[kept].timestamp:
            earliest[key] = pos

    keep = set(earliest.values())
    records = [rec for pos, rec in enumerate(log.records) if pos in keep]
    merged = len(log.records) - len(records)
    if merged:
        logger.info(f"Merged {merged} repeated ratings to their earliest timestamp")
    return InteractionLog(records=records, rejected_lines=list(log.rejected_lines))


def binarize(log: InteractionLog, keep_threshold: float, mode: str = "above_is_one") -> BinaryDataset:
    """Ratings strictly above the threshold become positives; the rest are implicit zeros.

    Both modes yield the same positive set. They only record whether the
    source treats low ratings as explicit zeros or drops them.
    """
    if mode not in BINARIZE_MODES:
        raise ConfigurationError(f"unknown binarize mode '{mode}'")

    item_index: Dict[str, int] = {}
    for rec in log.records:
        item_index.setdefault(rec.item, len(item_index))

    with_time = log.has_timestamps
    rated: Dict[str, set] = {}
    positive_time: Dict[str, Dict[int, Optional[int]]] = {}
    user_order: List[str] = []
    for rec in log.records:
        if rec.user not in rated:
            rated[rec.user] = set()
            positive_time[rec.user] = {}
            user_order.append(rec.user)
        item = item_index[rec.item]
        rated[rec.user].add(item)
        if rec.rating > keep_threshold:
            seen = positive_time[rec.user].get(item)
            if seen is None or (rec.timestamp is not None and rec.timestamp < seen):
                positive_time[rec.user][item] = rec.timestamp

    user_ids, positives, timestamps, rated_lists, dropped = [], [], [], [], []
    for user in user_order:
        items = positive_time[user]
        if not items:
            dropped.append(user)
            continue
        order = sorted(items)
        user_ids.append(user)
        positives.append(np.array(order, dtype=np.int64))
        rated_lists.append(np.array(sorted(rated[user]), dtype=np.int64))
        if with_time:
            timestamps.append(np.array([items[i] for i in order], dtype=np.int64))

    if dropped:
        logger.info(f"Dropped {len(dropped)} users with no rating above {keep_threshold}")

    item_ids = [None] * len(item_index)
    for ext, idx in item_index.items():
        item_ids[idx] = ext

    ds = BinaryDataset(
        user_ids=user_ids,
        item_ids=item_ids,
        positives=positives,
        rated=rated_lists,
        timestamps=timestamps if with_time else None,
        dropped_users=dropped,
    )
    logger.info(f"Binarized dataset: {ds.user_count} users, {ds.item_count} items, {ds.positive_count} positives")
    return ds


def dataset_stats(source: Union[InteractionLog, BinaryDataset]) -> DatasetStats:
    """Users, items, ratings and sparsity (percent) of a raw log or a binarized dataset."""
    if isinstance(source, InteractionLog):
        users = len({r.user for r in source.records})
        items = len({r.item for r in source.records})
        ratings = len(source.records)
    else:
        users, items, ratings = source.user_count, source.item_count, source.positive_count
    cells = users * items
    sparsity = (1.0 - ratings / cells) * 100.0 if cells else 0.0
    return DatasetStats(users, items, ratings, sparsity)


def load_dataset(ds_cfg: dict) -> Tuple[InteractionLog, BinaryDataset]:
    """Parse, optionally dedupe, and binarize the dataset described by a config section."""
    preset = DATASET_PRESETS.get(ds_cfg.get("name") or "", {})
    fmt = ds_cfg.get("format") or preset.get("format", "double_colon")
    columns = ds_cfg.get("columns") or preset.get("columns", ["user", "item", "rating", "timestamp"])
    scale = ds_cfg.get("rating_scale") or preset.get("rating_scale")
    threshold = ds_cfg.get("threshold")
    if threshold is None:
        threshold = preset.get("threshold", 3.0)
    mode = ds_cfg.get("mode") or preset.get("mode", "above_is_one")
    dedupe = ds_cfg.get("dedupe")
    if dedupe is None:
        dedupe = preset.get("dedupe", False)

    log = parse_log(ds_cfg["path"], fmt, columns, scale)
    if dedupe:
        log = dedupe_earliest(log)
    return log, binarize(log, float(threshold), mode)
