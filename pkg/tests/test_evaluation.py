import csv
import math

import numpy as np
import pytest

from data.interactions import BinaryDataset, load_dataset
from data.splits import SplitSpec, split_leave_one_out
from evaluation import (
    CURVE_HEADER,
    REPORT_HEADER,
    RobustnessCurve,
    evaluate,
    hit,
    item_popularity,
    itempop,
    ndcg_at,
    noise_impact_probe,
    robustness_sweep,
    write_curves_csv,
    write_report_csv,
)
from model import ModelParams, NoiseSite, rank_top_n, zero_noise
from tests.conftest import ITEMS, USERS, dataset_file, held_out_item
from trainer import AdvConfig, PretrainConfig, Trainer, init_params
from utils.numerics import RngStream


def oracle_params():
    """Scores each user's held-out item 10 and everything else 0."""
    K = USERS
    W2 = np.zeros((ITEMS, K))
    for user in range(USERS):
        W2[held_out_item(user), user] = 10.0
    return ModelParams(np.zeros((K, ITEMS)), W2, np.zeros(K), np.zeros(ITEMS), np.eye(K), "identity", "identity")


def test_hit_and_ndcg():
    assert hit([4, 1, 2], 4) == 1
    assert ndcg_at([4, 1, 2], 4) == 1.0
    assert ndcg_at([1, 2, 4], 4) == 0.5
    assert hit([1, 2, 3], 9) == 0
    assert ndcg_at([1, 2, 3], 9) == 0.0


def test_perfect_scores(tiny_dataset, tiny_split):
    report = evaluate(oracle_params(), tiny_dataset, tiny_split, ns=(1, 5, 10))
    assert report.tested_user_count == USERS
    for n in (1, 5, 10):
        assert report.hr(n) == 1.0
        assert report.ndcg(n) == 1.0


def test_metrics_are_bounded_and_monotone_in_n(tiny_dataset, tiny_split):
    params = init_params(USERS, ITEMS, 3, init_std=0.5, rng=RngStream(8))
    report = evaluate(params, tiny_dataset, tiny_split, ns=(1, 2, 3, 5))
    for n in (1, 2, 3, 5):
        assert 0.0 <= report.ndcg(n) <= report.hr(n) <= 1.0
    assert report.hr(1) <= report.hr(2) <= report.hr(3) <= report.hr(5)
    # five candidates per user, so top 5 always contains the held-out item
    assert report.hr(5) == 1.0


def test_batching_does_not_change_metrics(tiny_dataset, tiny_split):
    params = init_params(USERS, ITEMS, 3, init_std=0.5, rng=RngStream(8))
    whole = evaluate(params, tiny_dataset, tiny_split, ns=(1, 3), batch_users=512)
    pieces = evaluate(params, tiny_dataset, tiny_split, ns=(1, 3), batch_users=2)
    for n in (1, 3):
        assert pieces.hr(n) == pytest.approx(whole.hr(n))
        assert pieces.ndcg(n) == pytest.approx(whole.ndcg(n))


def test_zero_noise_equals_clean(tiny_dataset, tiny_split):
    params = init_params(USERS, ITEMS, 3, init_std=0.5, rng=RngStream(8))
    clean = evaluate(params, tiny_dataset, tiny_split, ns=(1, 3))
    for site in NoiseSite:
        assert evaluate(params, tiny_dataset, tiny_split, (1, 3), zero_noise(params, site)).metrics == clean.metrics


def test_itempop_prefers_popular_item():
    ds = BinaryDataset(
        user_ids=["u0", "u1", "u2", "u3"],
        item_ids=["a", "b", "c"],
        positives=[np.array([0, 2]), np.array([0, 2]), np.array([0, 1]), np.array([0])],
        rated=[np.array([0, 2]), np.array([0, 2]), np.array([0, 1]), np.array([0])],
    )
    split = SplitSpec(
        seed=0,
        train_positives=[np.array([0]), np.array([0]), np.array([0]), np.array([1])],
        held_out={0: 0, 1: 0, 2: 0},
        negatives={0: np.array([1]), 1: np.array([1]), 2: np.array([2])},
    )
    counts = item_popularity(ds, split)
    np.testing.assert_array_equal(counts, [3, 1, 0])
    for user in split.tested_users:
        assert rank_top_n(counts, split.candidates(user), 2)[0] == 0
    assert itempop(ds, split, ns=(1,)).hr(1) == 1.0


def test_probe_curves_start_at_clean_point(tiny_dataset, tiny_split):
    params = init_params(USERS, ITEMS, 3, init_std=0.5, rng=RngStream(8))
    clean = evaluate(params, tiny_dataset, tiny_split)
    curves = noise_impact_probe(params, tiny_dataset, tiny_split, [s.value for s in NoiseSite],
                                ["gaussian", "adversarial"], [1.0, 4.0], trials=2, rng=RngStream(3))
    assert len(curves) == 8
    for curve in curves:
        assert [p[0] for p in curve.points] == [0.0, 1.0, 4.0]
        assert curve.points[0][1:] == (clean.hr(5), clean.ndcg(5))
        assert all(0.0 <= hr <= 1.0 for _, hr, _ in curve.points)


def test_probe_is_reproducible(tiny_dataset, tiny_split):
    params = init_params(USERS, ITEMS, 3, init_std=0.5, rng=RngStream(8))
    run = lambda: noise_impact_probe(params, tiny_dataset, tiny_split, ["encoder_weights"], ["gaussian"],
                                     [2.0], trials=3, rng=RngStream(9), ns=(1, 5))
    assert run()[0].points == run()[0].points


def test_robustness_at_zero_is_the_clean_evaluation(tiny_dataset, tiny_split):
    params = init_params(USERS, ITEMS, 3, init_std=0.5, rng=RngStream(8))
    curve = robustness_sweep(params, tiny_dataset, tiny_split, eps_grid=[0])
    clean = evaluate(params, tiny_dataset, tiny_split)
    assert curve.points == [(0.0, clean.hr(5), clean.ndcg(5))]
    assert curve.site == "decoder_weights"
    assert curve.kind == "adversarial"


def test_adversarial_decoder_noise_hurts_perfect_model(tiny_dataset, tiny_split):
    curve = robustness_sweep(oracle_params(), tiny_dataset, tiny_split, eps_grid=[0, 100])
    assert curve.at(0)[1] == 1.0
    assert curve.at(100)[1] <= curve.at(0)[1]


def test_relative_drop():
    curve = RobustnessCurve("decoder_weights", "adversarial", [(0.0, 0.5708, 0.42), (8.0, 0.4152, 0.3)])
    assert math.isclose(curve.relative_drop(8), (0.5708 - 0.4152) / 0.5708)
    with pytest.raises(KeyError):
        curve.at(3)


def test_report_and_curve_csv(tmp_path, tiny_dataset, tiny_split):
    report = evaluate(oracle_params(), tiny_dataset, tiny_split)
    path = write_report_csv(report, tmp_path / "eval.csv")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == REPORT_HEADER
    assert rows[1] == ["hr", "5", "1.000000", str(USERS)]
    assert len(rows) == 5

    curve = RobustnessCurve("encoder_weights", "gaussian", [(0.0, 0.5, 0.25), (0.5, 0.4, 0.2)])
    path = write_curves_csv([curve], tmp_path / "curves.csv")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == CURVE_HEADER
    assert rows[2] == ["encoder_weights", "gaussian", "0.5", "0.400000", "0.200000"]


@pytest.mark.dataset
def test_itempop_on_movielens():
    path = dataset_file("ACAE_MOVIELENS")
    _, ds = load_dataset({"name": "movielens-1m", "path": str(path)})
    split = split_leave_one_out(ds, RngStream(2018), n_neg=200)
    report = itempop(ds, split)
    assert abs(report.hr(5) - 0.3101) < 0.03
    assert abs(report.ndcg(5) - 0.2127) < 0.03


@pytest.mark.dataset
def test_random_scores_on_filmtrust():
    path = dataset_file("ACAE_FILMTRUST")
    _, ds = load_dataset({"name": "filmtrust", "path": str(path)})
    split = split_leave_one_out(ds, RngStream(2018), n_neg=200)
    params = init_params(ds.user_count, ds.item_count, 8, init_std=1.0, rng=RngStream(1))
    report = evaluate(params, ds, split)
    users = report.tested_user_count
    expected = np.mean([5 / len(split.candidates(u)) if len(split.candidates(u)) > 5 else 1.0
                        for u in split.tested_users])
    band = 3 * math.sqrt(expected * (1 - expected) / users) + 0.02
    assert abs(report.hr(5) - expected) < band


@pytest.mark.dataset
def test_noise_impact_ordering_on_filmtrust():
    _, ds = load_dataset({"name": "filmtrust", "path": str(dataset_file("ACAE_FILMTRUST"))})
    split = split_leave_one_out(ds, RngStream(2018), n_neg=200)
    params, _ = Trainer(ds, split).pretrain(PretrainConfig(max_epochs=200), hidden_dim=64)
    curves = noise_impact_probe(params, ds, split, [s.value for s in NoiseSite], ["gaussian", "adversarial"],
                                [8.0], trials=3, rng=RngStream(7))
    drop = {(c.site, c.kind): c.relative_drop(8.0) for c in curves}
    assert drop[("decoder_weights", "adversarial")] > drop[("encoder_weights", "adversarial")]
    assert drop[("user_embedding", "adversarial")] < 0.02
    assert drop[("hidden_layer", "adversarial")] < 0.02
    for site in NoiseSite:
        assert drop[(site.value, "gaussian")] < 0.01


@pytest.mark.dataset
def test_adversarial_training_orders_robustness_on_filmtrust():
    _, ds = load_dataset({"name": "filmtrust", "path": str(dataset_file("ACAE_FILMTRUST"))})
    split = split_leave_one_out(ds, RngStream(2018), n_neg=200)
    trainer = Trainer(ds, split)
    pre, _ = trainer.pretrain(PretrainConfig(max_epochs=200), hidden_dim=64)
    models = [pre]
    for eps in (1.0, 7.0, 15.0):
        adv, _ = trainer.adversarial_train(pre, AdvConfig(epsilon=eps, max_epochs=200), 1e-4)
        models.append(adv)
    drops = [robustness_sweep(m, ds, split, eps_grid=[0, 8]).relative_drop(8.0) for m in models]
    assert all(a > b for a, b in zip(drops, drops[1:])), drops
    assert drops[0] > 0.10
    assert drops[-1] <= drops[0] / 2
