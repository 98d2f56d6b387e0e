import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deeplcc.data import (
    CollectionError, TrajectoryDataset, collect_dataset, hankel, head_random_walk, is_persistently_exciting,
    min_data_length,
)
from deeplcc.vehicle import PlatoonConfig


@given(st.integers(1, 3), st.integers(5, 30), st.integers(1, 5))
def test_hankel_matches_index_oracle(q, T, L):
    seq = np.random.default_rng(q * 100 + T).normal(size=(q, T))
    H = hankel(seq, L)
    assert H.shape == (q * L, T - L + 1)
    for r in range(L):
        for i in range(q):
            for c in range(T - L + 1):
                assert H[r * q + i, c] == seq[i, r + c]


def test_hankel_rejects_bad_order():
    with pytest.raises(ValueError):
        hankel(np.zeros(5), 6)


def test_persistent_excitation_checks():
    rng = np.random.default_rng(0)
    assert is_persistently_exciting(rng.uniform(-1, 1, (2, 200)), 10)
    constant = is_persistently_exciting(np.ones((1, 200)), 3)
    assert not constant and constant.rank == 1
    short = is_persistently_exciting(rng.normal(size=(2, 20)), 10)
    assert not short and short.reason == "insufficient length"


def test_min_data_length():
    assert min_data_length(2, 20, 50, 8) == 257


def test_collection_is_stable_and_exciting(dataset):
    assert dataset.u_d.shape == (2, 2000) and dataset.y_d.shape == (10, 2000)
    assert np.abs(dataset.eps_d).max() <= 1.0 + 1e-12
    assert is_persistently_exciting(dataset.u_hat, 20 + 50 + 16)
    # CAV spacing errors stay far from collision
    assert np.abs(dataset.y_d[8:]).max() < 10


def test_collection_reproducible(platoon):
    a = collect_dataset(platoon, 15.0, 300, seed=4)
    b = collect_dataset(platoon, 15.0, 300, seed=4)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv() != collect_dataset(platoon, 15.0, 300, seed=5).to_csv()


def test_open_loop_collection_collision_carries_seed():
    cfg = PlatoonConfig.heterogeneous(8, (3, 6), seed=0)
    with pytest.raises(CollectionError) as info:
        for seed in range(20):
            collect_dataset(cfg, 15.0, 2000, excitation=3.0, seed=seed, feedback=None)
    assert info.value.seed is not None


def test_csv_round_trip(tmp_path, platoon):
    ds = collect_dataset(platoon, 15.0, 200, seed=1)
    (tmp_path / "d.csv").write_text(ds.to_csv())
    (tmp_path / "d.json").write_text(json.dumps(ds.metadata()))
    back = TrajectoryDataset.from_files(tmp_path / "d.csv", tmp_path / "d.json")
    assert np.array_equal(back.u_d, ds.u_d) and np.array_equal(back.y_d, ds.y_d)
    assert back.cav_set == ds.cav_set


def test_partition_shapes_and_alignment(dataset, blocks):
    assert blocks.Up.shape == (40, 1931) and blocks.Uf.shape == (100, 1931)
    assert blocks.Ep.shape == (20, 1931) and blocks.Ef.shape == (50, 1931)
    assert blocks.Yp.shape == (200, 1931) and blocks.Yf.shape == (500, 1931)
    c = 17
    assert np.array_equal(blocks.Uf[:2, c], dataset.u_d[:, 20 + c])
    assert np.array_equal(blocks.Yp[-10:, c], dataset.y_d[:, 19 + c])


def test_random_walk_bounds():
    rng = np.random.default_rng(0)
    w = head_random_walk(1000, 1.0, 5.0, 0.05, rng)
    assert np.abs(w).max() <= 1.0 and np.abs(np.diff(w)).max() <= 0.25 + 1e-12
