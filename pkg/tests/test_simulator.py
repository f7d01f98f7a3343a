import json

import numpy as np
import pytest

from lobhawkes.binning import BinConfig, build_bins
from lobhawkes.events import IngestConfig, event_index, ingest, read_messages
from lobhawkes.book import Action
from lobhawkes.simulator import (
    ExplosionGuard,
    GroundTruth,
    InvalidGroundTruth,
    SimConfig,
    book_truth,
    event_rates_at,
    exp_kernel,
    export_lobster,
    load_truth,
    simulate,
)


def pure_truth(amp, baseline, decay=1.0, delta=0.1, support=10.0):
    amp = np.atleast_2d(amp)
    return GroundTruth(kernels=exp_kernel(amp * decay, decay, delta, support), delta=delta,
                       baseline=baseline)


class TestRates:
    def test_poisson_degeneration(self):
        truth = pure_truth(np.zeros((2, 2)), [1.0, 2.0])
        T, seeds = 1000.0, 50
        counts = np.array([np.bincount(simulate(truth, SimConfig(T, s, "pure")).types, minlength=2)
                           for s in range(seeds)])
        for i, nu in enumerate([1.0, 2.0]):
            z = (counts[:, i].mean() - nu * T) / np.sqrt(nu * T / seeds)
            assert abs(z) < 3, (i, z)

    def test_stationary_rate(self):
        truth = pure_truth(0.5, [0.5])
        assert truth.branching[0, 0] == pytest.approx(0.5, rel=1e-3)
        T = 50000.0
        res = simulate(truth, SimConfig(T, 3, "pure"))
        assert len(res.events) / T == pytest.approx(1.0, rel=0.05)

    def test_deterministic(self):
        truth = book_truth()
        a = simulate(truth, SimConfig(60.0, 11))
        b = simulate(truth, SimConfig(60.0, 11))
        c = simulate(truth, SimConfig(60.0, 12))
        assert a.events == b.events and a.messages == b.messages
        assert a.events != c.events

    @pytest.mark.parametrize("mode", ["pure", "full"])
    def test_intensity_matches_history(self, mode):
        if mode == "pure":
            truth = pure_truth(np.full((3, 3), 0.2), [0.5, 1.0, 0.3])
            cfg = SimConfig(5000.0, 5, "pure", record_intensity=True)
        else:
            truth = book_truth()
            cfg = SimConfig(300.0, 5, "full", record_intensity=True)
        res = simulate(truth, cfg)
        times, rates = res.proposals
        pick = np.random.default_rng(0).choice(len(times), size=min(1000, len(times)), replace=False)
        assert len(pick) == 1000
        for k in pick:
            direct = event_rates_at(res, times[k])
            assert np.allclose(rates[k], direct, rtol=1e-9, atol=1e-12)

    def test_liquidity_dependence(self):
        # insertion rates fall as their queue grows
        truth = book_truth()
        res = simulate(truth, SimConfig(3000.0, 2))
        i = event_index(1, Action.INSERT, 1)
        cfg = BinConfig(delta=1.0, support=5.0, horizon=3000.0, k_levels=1)
        bins = build_bins(res.events, cfg, res.path)
        low = bins.counts[i, bins.liq_cat[i] <= 2].mean()
        high = bins.counts[i, bins.liq_cat[i] >= 7].mean()
        assert high < low


class TestExport:
    def test_round_trip(self, tmp_path):
        truth = book_truth(k_levels=2)
        res = simulate(truth, SimConfig(3000.0, 4, max_events=100))
        assert len(res.events) == 100
        m, o = export_lobster(res, tmp_path)
        back = ingest(m, o, IngestConfig(k_levels=2))
        assert back.events == res.events
        assert back.report["drift_resyncs"] == 0
        assert np.array_equal(back.path.values, res.path.values)

    def test_bins_preserved(self, tmp_path):
        truth = book_truth()
        res = simulate(truth, SimConfig(300.0, 8))
        m, o = export_lobster(res, tmp_path)
        back = ingest(m, o, IngestConfig(k_levels=1))
        cfg = BinConfig(delta=0.25, support=5.0, horizon=300.0, k_levels=1)
        a, b = build_bins(res.events, cfg, res.path), build_bins(back.events, cfg, back.path)
        assert np.array_equal(a.counts, b.counts)
        assert np.array_equal(a.liq_cat, b.liq_cat)

    def test_empty(self, tmp_path):
        res = simulate(book_truth(scale=0.0), SimConfig(100.0, 0))
        assert res.events == []
        m, o = export_lobster(res, tmp_path)
        assert read_messages(m) == []
        assert ingest(m, o, IngestConfig(k_levels=1)).events == []

    def test_messages_are_consistent(self):
        res = simulate(book_truth(), SimConfig(60.0, 1))
        times = [msg.time for msg in res.messages]
        assert times == sorted(times)
        assert len(res.snapshots) == len(res.messages)
        asks, bids = res.snapshots[:, 0::4], res.snapshots[:, 2::4]
        assert np.all(asks[:, 0] > bids[:, 0])


class TestGuards:
    def test_explosion(self):
        truth = pure_truth(0.9, [5.0])
        with pytest.raises(ExplosionGuard):
            simulate(truth, SimConfig(1000.0, 0, "pure", max_rate=10.0))

    def test_invalid(self):
        with pytest.raises(InvalidGroundTruth):
            pure_truth(1.2, [1.0])
        with pytest.raises(InvalidGroundTruth):
            pure_truth(0.2, [-1.0])
        with pytest.raises(InvalidGroundTruth):
            GroundTruth(kernels=-np.ones((1, 1, 3)), delta=0.1, baseline=[1.0])
        with pytest.raises(InvalidGroundTruth):
            simulate(pure_truth(0.2, [1.0]), SimConfig(10.0, 0, "full"))

    def test_truth_file(self, tmp_path):
        cfg = {"delta": 0.1, "support": 2.0, "d": 2, "baseline": [0.5, 0.5],
                "exp_kernel": {"amplitude": [[0.3, 0.0], [0.1, 0.2]], "decay": 2.0}}
        path = tmp_path / "truth.json"
        path.write_text(json.dumps(cfg))
        truth = load_truth(path)
        assert truth.kernels.shape == (2, 2, 20)
        assert truth.kernels[0, 1].sum() == 0.0
        assert len(simulate(truth, SimConfig(100.0, 1, "pure")).events) > 0
