import random

import numpy as np
import pytest

from data.interactions import (
    DATASET_PRESETS,
    BinaryDataset,
    Interaction,
    InteractionLog,
    LogParseError,
    binarize,
    dataset_stats,
    dedupe_earliest,
    load_dataset,
    parse_line,
    parse_log,
)
from data.splits import (
    SplitFormatError,
    load_split,
    make_validation_split,
    save_split,
    split_leave_one_out,
)
from tests.conftest import ITEMS, USERS, dataset_file, held_out_item
from utils.numerics import ConfigurationError, RngStream


def test_parse_movielens_line():
    rec = parse_line("1::1193::5::978300760", "double_colon", ["user", "item", "rating", "timestamp"])
    assert rec == Interaction("1", "1193", 5.0, 978300760)


def test_parse_ciao_line_with_date():
    preset = DATASET_PRESETS["ciao"]
    rec = parse_line("7,42,3,1,4,2011-01-02", preset["format"], preset["columns"], preset["rating_scale"])
    assert (rec.user, rec.item, rec.rating) == ("7", "42", 4.0)
    assert rec.timestamp == 1293926400


def test_parse_rejects_out_of_scale_rating():
    with pytest.raises(ValueError):
        parse_line("1 2 4.5", "whitespace", ["user", "item", "rating"], [0.5, 4.0])


def test_parse_log_empty_file(tmp_path):
    path = tmp_path / "empty.dat"
    path.write_text("", encoding="utf-8")
    log = parse_log(path, "double_colon", ["user", "item", "rating", "timestamp"])
    assert len(log) == 0
    assert log.rejected_lines == []


def test_parse_log_skips_malformed_line(tmp_path):
    lines = [f"1::{i}::4::{100 + i}" for i in range(9)]
    lines.insert(4, "1::broken")
    path = tmp_path / "ratings.dat"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log = parse_log(path, "double_colon", ["user", "item", "rating", "timestamp"])
    assert len(log) == 9
    assert log.rejected_lines == [5]


def test_parse_log_skips_undecodable_line(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_bytes(b"1::10::5::100\n\xff\xfe::11::4::101\r\n2::12::5::102\n")
    log = parse_log(path, "double_colon", ["user", "item", "rating", "timestamp"])
    assert [(r.user, r.item) for r in log.records] == [("1", "10"), ("2", "12")]
    assert log.rejected_lines == [2]


def test_parse_log_missing_file(tmp_path):
    with pytest.raises(LogParseError):
        parse_log(tmp_path / "nope.dat", "double_colon", ["user", "item", "rating", "timestamp"])


def test_parse_log_rejects_unknown_format(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_log(tmp_path / "x", "tsv", ["user", "item", "rating"])


def test_dedupe_keeps_earliest():
    log = InteractionLog([Interaction("u", "i", 4.0, 100), Interaction("u", "i", 2.0, 50)])
    assert dedupe_earliest(log).records == [Interaction("u", "i", 2.0, 50)]


def test_dedupe_without_duplicates_is_unchanged(tiny_log):
    assert dedupe_earliest(tiny_log).records == tiny_log.records


def test_dedupe_matches_group_by_min_oracle():
    rnd = random.Random(8)
    records = [
        Interaction(f"u{rnd.randrange(5)}", f"i{rnd.randrange(6)}", float(rnd.randint(1, 5)), t)
        for t in rnd.sample(range(10000), 200)
    ]
    oracle = {}
    for rec in records:
        key = (rec.user, rec.item)
        if key not in oracle or rec.timestamp < oracle[key].timestamp:
            oracle[key] = rec
    kept = dedupe_earliest(InteractionLog(records)).records
    assert sorted(kept) == sorted(oracle.values())


def test_dedupe_requires_timestamps():
    with pytest.raises(LogParseError):
        dedupe_earliest(InteractionLog([Interaction("u", "i", 4.0, None)]))


def test_binarize_movielens_threshold():
    log = InteractionLog([Interaction("u", f"i{r}", float(r), r) for r in (2, 3, 4, 5)])
    ds = binarize(log, 3.0)
    assert [ds.item_ids[i] for i in ds.positives[0]] == ["i4", "i5"]
    assert len(ds.rated[0]) == 4


def test_binarize_filmtrust_threshold():
    log = InteractionLog([Interaction("u", "a", 2.0), Interaction("u", "b", 2.5)])
    ds = binarize(log, 2.0, "keep_above_drop_rest")
    assert [ds.item_ids[i] for i in ds.positives[0]] == ["b"]
    assert ds.timestamps is None


def test_binarize_drops_users_without_positives():
    log = InteractionLog([Interaction("u", "a", 1.0), Interaction("v", "b", 3.0)])
    ds = binarize(log, 3.0)
    assert ds.user_count == 0
    assert ds.dropped_users == ["u", "v"]


def test_binarize_dense_indices(tiny_dataset):
    assert tiny_dataset.user_ids == [f"u{u}" for u in range(USERS)]
    assert tiny_dataset.item_ids == [f"i{i}" for i in range(ITEMS)]
    for user in range(USERS):
        positives = tiny_dataset.positives[user]
        assert np.all(np.diff(positives) > 0)
        assert sorted(positives.tolist()) == sorted((user + k) % ITEMS for k in (0, 2, 3, 4, 6))
        assert len(tiny_dataset.rated[user]) == 8
        assert set(positives) <= set(tiny_dataset.rated[user])


def test_dataset_stats(tiny_log, tiny_dataset):
    raw = dataset_stats(tiny_log)
    assert raw.as_row() == ["6", "12", "48", "33.33"]
    binary = dataset_stats(tiny_dataset)
    assert binary.as_row() == ["6", "12", "30", "58.33"]
    single = binarize(InteractionLog([Interaction("u", "i", 5.0)]), 3.0)
    assert dataset_stats(single).sparsity == 0.0


def _one_user(items, times, rated=None, item_count=4):
    return BinaryDataset(
        user_ids=["u"],
        item_ids=[f"i{i}" for i in range(item_count)],
        positives=[np.array(items)],
        rated=[np.array(rated if rated is not None else items)],
        timestamps=[np.array(times)],
    )


def test_split_holds_out_latest():
    ds = _one_user([0, 1, 2], [1, 9, 5])
    split = split_leave_one_out(ds, RngStream(0))
    assert split.held_out == {0: 1}
    np.testing.assert_array_equal(split.train_positives[0], [0, 2])
    np.testing.assert_array_equal(split.negatives[0], [3])


def test_split_excludes_single_positive_user():
    ds = _one_user([2], [7])
    split = split_leave_one_out(ds, RngStream(0))
    assert split.tested_users == []
    np.testing.assert_array_equal(split.train_positives[0], [2])


def test_split_negatives_come_from_never_rated_items():
    rated = np.arange(0, 300, 2)
    ds = _one_user([0, 2, 4], [1, 2, 3], rated=rated, item_count=300)
    split = split_leave_one_out(ds, RngStream(3), n_neg=200)
    negatives = split.negatives[0]
    assert len(negatives) == 150
    assert len(set(negatives.tolist())) == 150
    assert not set(negatives.tolist()) & set(rated.tolist())


def test_split_on_tiny_dataset(tiny_dataset, tiny_split):
    assert tiny_split.tested_users == list(range(USERS))
    for user in range(USERS):
        held = tiny_split.held_out[user]
        assert held == held_out_item(user)
        assert held not in tiny_split.train_positives[user]
        negatives = set(tiny_split.negatives[user].tolist())
        assert negatives == {(user + k) % ITEMS for k in range(8, 12)}
        assert tiny_split.candidates(user)[0] == held


def test_split_file_is_byte_identical_for_same_seed(tmp_path, tiny_dataset):
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    save_split(split_leave_one_out(tiny_dataset, RngStream(5), n_neg=3), first)
    save_split(split_leave_one_out(tiny_dataset, RngStream(5), n_neg=3), second)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text(encoding="utf-8").startswith("acae-split v1 seed=5\n")


def test_split_file_round_trip(tmp_path, tiny_dataset):
    split = split_leave_one_out(tiny_dataset, RngStream(5), n_neg=3)
    path = tmp_path / "split.txt"
    save_split(split, path)
    loaded = load_split(path, tiny_dataset)
    assert loaded.seed == 5
    assert loaded.held_out == split.held_out
    for user in range(USERS):
        np.testing.assert_array_equal(loaded.negatives[user], split.negatives[user])
        np.testing.assert_array_equal(loaded.train_positives[user], split.train_positives[user])


@pytest.mark.parametrize("content", [
    "",
    "not-a-split v1 seed=1\n",
    "acae-split v9 seed=1\n",
    "acae-split v1 seed=1\n0\t6\n",
    "acae-split v1 seed=1\n99\t6\t1,2\n",
    "acae-split v1 seed=1\n0\t6\t1,500\n",
])
def test_load_split_rejects_bad_files(tmp_path, tiny_dataset, content):
    path = tmp_path / "split.txt"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(SplitFormatError):
        load_split(path, tiny_dataset)


def test_load_split_rejects_rated_negatives(tmp_path, tiny_dataset):
    # user 0 rated item 1 below the threshold, so it is not a positive but still not a negative
    path = tmp_path / "split.txt"
    path.write_text("acae-split v1 seed=1\n0\t6\t8,1,9\n", encoding="utf-8")
    with pytest.raises(SplitFormatError, match=r"negatives \[1\] were rated by user 0"):
        load_split(path, tiny_dataset)


def test_validation_split_leaves_one_more_out(tiny_dataset, tiny_split):
    validation = make_validation_split(tiny_dataset, tiny_split, seed=2019)
    for user in range(USERS):
        held = validation.held_out[user]
        assert held == (user + 4) % ITEMS
        assert held in tiny_split.train_positives[user]
        assert held not in validation.train_positives[user]
        assert tiny_split.held_out[user] not in validation.train_positives[user]
        assert len(validation.train_positives[user]) == 3


def test_load_dataset_uses_presets(ratings_file):
    log, ds = load_dataset({"name": "movielens-1m", "path": str(ratings_file), "rating_scale": [1, 5]})
    assert len(log) == 48
    assert ds.user_count == USERS
    assert ds.positive_count == 30


@pytest.mark.dataset
def test_movielens_raw_statistics():
    path = dataset_file("ACAE_MOVIELENS")
    log, ds = load_dataset({"name": "movielens-1m", "path": str(path)})
    assert dataset_stats(log).as_row() == ["6040", "3706", "1000209", "95.53"]
    assert ds.user_count <= 6040


@pytest.mark.dataset
def test_filmtrust_raw_statistics():
    path = dataset_file("ACAE_FILMTRUST")
    log, _ = load_dataset({"name": "filmtrust", "path": str(path)})
    stats = dataset_stats(log)
    assert (stats.users, stats.items, stats.ratings) == (1508, 2071, 35497)
    assert round(stats.sparsity, 2) == 98.86
