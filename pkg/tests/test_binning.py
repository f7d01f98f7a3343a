import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lobhawkes.binning import (
    N_TIME,
    BinConfig,
    EventOutOfHorizon,
    build_bins,
    bucketize_liquidity,
    bucketize_time,
    load_bins,
    save_bins,
    time_bucket_widths,
)
from lobhawkes.events import ClassifiedEvent, LiquidityPath


def test_time_buckets_tile_the_session():
    w = time_bucket_widths()
    assert w.size == N_TIME == 126
    assert w.sum() == 23400
    assert np.all(w[:30] == 60) and np.all(w[30:96] == 300) and np.all(w[96:] == 60)
    assert bucketize_time(0) == 0
    assert bucketize_time(59.999) == 0 and bucketize_time(60) == 1
    assert bucketize_time(1800) == 30 and bucketize_time(21599.9) == 95
    assert bucketize_time(21600) == 96 and bucketize_time(23399.9) == 125
    with pytest.raises(ValueError):
        bucketize_time(23400)


def test_liquidity_buckets():
    assert bucketize_liquidity(0) == 0
    assert bucketize_liquidity(99) == 0 and bucketize_liquidity(100) == 1
    assert bucketize_liquidity(950) == 9 and bucketize_liquidity(10**6) == 9
    # spreads in dollars: 1 tick -> L2
    assert bucketize_liquidity(0.01, spread=True) == 1
    assert bucketize_liquidity(0.03, spread=True) == 3
    assert list(bucketize_liquidity([0.02, 200.0], spread=[True, False])) == [2, 2]
    with pytest.raises(ValueError):
        bucketize_liquidity(-1)


def test_config_validation():
    cfg = BinConfig()
    assert cfg.lag == 80 and cfg.n_bins == 93600 and cfg.d == 24
    assert BinConfig(delta=0.5).lag == 40
    with pytest.raises(ValueError):
        BinConfig(delta=30, support=20)


def test_bin_boundaries():
    cfg = BinConfig(delta=1.0, support=2.0, horizon=10.0, n_types=2, origin=0.0, use_sizes=False)
    t = np.array([0.0, 1.0, 1.0000001, 2.5, 10.0])
    b = build_bins((t, np.zeros(5, int), np.ones(5, int)), cfg)
    # (k-1, k]; time zero joins the first bin
    assert list(b.counts[0]) == [2, 1, 1, 0, 0, 0, 0, 0, 0, 1]


def test_sizes_and_price_changes():
    cfg = BinConfig(delta=1.0, support=2.0, horizon=10.0, k_levels=1, origin=0.0)
    types = np.array([0, 0, 6, 6])
    sizes = np.array([100, 200, 1, 1])
    b = build_bins((np.array([0.5, 0.7, 0.8, 3.0]), types, sizes), cfg)
    assert b.counts[0, 0] == 300 and b.counts[6, 0] == 1 and b.counts[6, 2] == 1
    nb = build_bins((np.array([0.5, 0.7, 0.8, 3.0]), types, sizes),
                    BinConfig(delta=1.0, support=2.0, horizon=10.0, k_levels=1, origin=0.0, use_sizes=False))
    assert nb.counts[0, 0] == 2


def test_out_of_horizon():
    cfg = BinConfig(delta=1.0, support=2.0, horizon=10.0, n_types=1, origin=0.0)
    with pytest.raises(EventOutOfHorizon):
        build_bins((np.array([11.0]), np.array([0]), np.array([1])), cfg)


def test_liquidity_sampled_at_bin_start():
    cfg = BinConfig(delta=1.0, support=2.0, horizon=5.0, n_types=2, origin=100.0)
    path = LiquidityPath(np.array([-np.inf, 101.0, 102.5]), np.array([[0, 50], [250, 0], [999, 1]], float))
    b = build_bins((np.zeros(0), np.zeros(0, int), np.zeros(0, int)), cfg, path=path)
    # bin starts at 100, 101, 102, 103, 104; a message at exactly 101 counts
    assert list(b.liq_state[0]) == [0, 250, 250, 999, 999]
    assert list(b.liq_cat[0]) == [0, 2, 2, 9, 9]


def test_carry_forward_without_path():
    cfg = BinConfig(delta=1.0, support=2.0, horizon=5.0, n_types=2, origin=0.0)
    evs = [ClassifiedEvent(1.5, 0, 1, 300.0, 0, 0), ClassifiedEvent(3.2, 0, 1, 120.0, 0, 0)]
    b = build_bins(evs, cfg)
    assert list(b.liq_state[0]) == [0, 0, 300, 300, 120]
    assert list(b.liq_state[1]) == [0] * 5


def test_time_categories():
    cfg = BinConfig()
    b = build_bins((np.zeros(0), np.zeros(0, int), np.zeros(0, int)), cfg)
    assert b.time_cat[0] == 0 and b.time_cat[-1] == 125
    assert np.all(np.diff(b.time_cat) >= 0)
    # 240 bins of 0.25 s per one-minute bucket
    assert np.sum(b.time_cat == 0) == 240 and np.sum(b.time_cat == 30) == 1200


def test_archive_round_trip(tmp_path, rng):
    cfg = BinConfig(delta=0.5, support=2.0, horizon=60.0, k_levels=1, origin=0.0)
    t = np.sort(rng.uniform(0, 60, 200))
    b = build_bins((t, rng.integers(0, 12, 200), rng.integers(1, 500, 200)), cfg)
    save_bins(tmp_path / "b.npz", b)
    back = load_bins(tmp_path / "b.npz")
    assert back.config == cfg
    for name in ("counts", "liq_state", "liq_cat", "time_cat"):
        assert np.array_equal(getattr(back, name), getattr(b, name))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 600, allow_nan=False), st.integers(0, 11), st.integers(1, 900)),
                max_size=200),
       st.sampled_from([0.1, 0.25, 0.5, 1.0, 7.0]))
def test_conservation(rows, delta):
    cfg = BinConfig(delta=delta, support=3 * delta, horizon=600.0, k_levels=1, origin=0.0)
    rows.sort()
    t = np.array([r[0] for r in rows])
    types = np.array([r[1] for r in rows], dtype=int)
    sizes = np.array([r[2] for r in rows], dtype=int)
    b = build_bins((t, types, sizes), cfg)
    weight = np.where(types >= 6, 1, sizes)
    # events in a trailing partial bin are dropped
    kept = np.ceil(t / delta - 1e-9) <= cfg.n_bins
    want = np.bincount(types[kept], weights=weight[kept], minlength=12) if kept.any() else np.zeros(12)
    assert np.array_equal(b.counts.sum(axis=1), want)
