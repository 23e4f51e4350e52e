import os
from pathlib import Path

import numpy as np
import pytest

from data.interactions import Interaction, InteractionLog, binarize
from data.splits import split_leave_one_out
from trainer import init_params
from utils.numerics import RngStream

USERS = 6
ITEMS = 12


def tiny_records():
    """User u rates items (u + k) % 12 for k in 0..7 at time 100*u + k.

    k in {0, 2, 4, 6} rates 5, k = 3 rates 4, the rest rate 2: five positives
    and three low ratings per user, and every item appears.
    """
    records = []
    for u in range(USERS):
        for k in range(8):
            rating = 5.0 if k % 2 == 0 else (4.0 if k == 3 else 2.0)
            records.append(Interaction(f"u{u}", f"i{(u + k) % ITEMS}", rating, 100 * u + k))
    return records


def held_out_item(user: int) -> int:
    return (user + 6) % ITEMS


@pytest.fixture
def tiny_log():
    return InteractionLog(records=tiny_records())


@pytest.fixture
def tiny_dataset(tiny_log):
    return binarize(tiny_log, 3.0)


@pytest.fixture
def tiny_split(tiny_dataset):
    return split_leave_one_out(tiny_dataset, RngStream(1), n_neg=200)


@pytest.fixture
def ratings_file(tmp_path):
    path = tmp_path / "ratings.dat"
    lines = [f"{r.user}::{r.item}::{int(r.rating)}::{r.timestamp}" for r in tiny_records()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def small_params():
    params = init_params(U=4, I=ITEMS, K=3, init_std=0.3, rng=RngStream(11))
    return params


@pytest.fixture
def small_batch():
    rng = np.random.default_rng(3)
    users = np.array([0, 1, 2, 3])
    targets = (rng.random((4, ITEMS)) < 0.4).astype(float)
    return users, targets


def dataset_file(env_var: str) -> Path:
    path = os.environ.get(env_var)
    if not path or not Path(path).exists():
        pytest.skip(f"{env_var} does not point at a raw rating file")
    return Path(path)
