import numpy as np
import pytest

from lobhawkes.binning import BinConfig, BinData
from lobhawkes.estimator import FitDiagnostics, ModelVariant, build_design, calibrate_lambda
from lobhawkes.selection import (
    DegenerateResiduals,
    ModelFit,
    aic_value,
    compute_aic,
    pairwise_differences,
    residual_covariance,
    run_selection,
    summarize_differences,
    write_pairwise,
    write_selection,
)

V = ModelVariant


def brute_covariance(r):
    d, m = r.shape
    out = np.zeros((d, d))
    for k in range(m):
        out += np.outer(r[:, k], r[:, k])
    return out / m


def test_residual_covariance_examples(rng):
    assert np.array_equal(residual_covariance(FitDiagnostics(np.zeros((3, 10)))), np.zeros((3, 3)))
    assert residual_covariance(FitDiagnostics(np.array([[1.0, -1, 1, -1]])))[0, 0] == 1.0
    r = rng.normal(size=(3, 50))
    assert np.allclose(residual_covariance(FitDiagnostics(r)), brute_covariance(r), atol=1e-12, rtol=0)


def test_aic_identity():
    assert compute_aic(ModelFit(V.FULL, np.eye(2), 10, np.nan, 100)) == pytest.approx(0.2, abs=1e-15)


def test_aic_degenerate():
    with pytest.raises(DegenerateResiduals):
        aic_value(np.array([[1.0, 1.0], [1.0, 1.0]]), 1, 10)
    with pytest.raises(DegenerateResiduals):
        aic_value(np.zeros((2, 2)), 1, 10)


def test_aic_matches_eigenvalue_log_det(rng):
    for _ in range(20):
        a = rng.normal(size=(4, 4))
        s = a @ a.T + 0.1 * np.eye(4)
        want = np.sum(np.log(np.linalg.eigvalsh(s))) + 2 * 7 / 300
        assert abs(aic_value(s, 7, 300) - want) < 1e-10


def _bins(rng, d=3, n=6000, noise_only=True):
    cfg = BinConfig(delta=1.0, support=3.0, horizon=float(n), n_types=d)
    counts = rng.poisson(3.0, (d, n)).astype(float)
    liq = rng.integers(0, 10, (d, n))
    tc = np.minimum(np.arange(n) * 126 // n, 125)
    return BinData(counts, liq.astype(float), liq, tc, cfg)


def test_selection_alignment_and_counts(rng):
    b = _bins(rng)
    pr = build_design(b)
    lam = calibrate_lambda(pr)
    fits = run_selection(b, lam=lam, problem=pr)
    assert set(fits) == set(V)
    assert {f.sample_count for f in fits.values()} == {b.n - b.config.lag}
    assert fits[V.FULL_LASSO].d_e < fits[V.FULL].d_e
    assert fits[V.HAWKES_LASSO].d_e <= fits[V.HAWKES].d_e
    d, p = b.d, b.config.lag
    assert fits[V.HAWKES].d_e == d * (d * p + 1)
    assert fits[V.LIQ_TIME].d_e == d * (10 + 125)
    for f in fits.values():
        assert np.allclose(f.sigma_hat, f.sigma_hat.T)
        assert np.all(np.linalg.eigvalsh(f.sigma_hat) >= 0)
        assert f.aic == pytest.approx(compute_aic(f), abs=0)
    # pure noise: nothing beats the categorical fit by much
    diffs = pairwise_differences(fits)
    assert set(diffs) == {"④-③", "⑥-④", "⑤-④", "⑤-③", "⑦-⑥"}
    assert all(abs(v) < 0.2 for v in diffs.values())


def test_penalty_lowers_effective_parameters(rng):
    b = _bins(rng, n=4000)
    pr = build_design(b)
    des = [run_selection(b, lam=lam, problem=pr, variants=[V.FULL_LASSO])[V.FULL_LASSO].d_e
           for lam in (0.0, 50.0, 500.0, 5000.0)]
    assert des == sorted(des, reverse=True)


def test_aic_invariant_to_reference_group(rng):
    b = _bins(rng, n=4000)
    relabel = np.roll(np.arange(126), 17)
    b2 = BinData(b.counts, b.liq_state, b.liq_cat, relabel[b.time_cat], b.config)
    f1 = run_selection(b, lam=0.0, variants=[V.FULL, V.TIME])
    f2 = run_selection(b2, lam=0.0, variants=[V.FULL, V.TIME])
    for v in (V.FULL, V.TIME):
        assert f1[v].aic == pytest.approx(f2[v].aic, abs=1e-10)


def test_summary_and_reports(tmp_path):
    per_day = [{"⑤-④": x} for x in (-0.1, -0.2, 0.05, -0.3)]
    (row,) = summarize_differences(per_day)
    assert row["min"] == -0.3 and row["max"] == 0.05 and row["decreased"] == 3
    assert row["mean"] == pytest.approx(-0.1375) and row["median"] == pytest.approx(-0.15)
    fits = {V.HAWKES: ModelFit(V.HAWKES, None, 10, 1.5, 100), V.HAWKES_LASSO: ModelFit(V.HAWKES_LASSO, None, 8, 1.25, 100)}
    write_selection(tmp_path / "s.csv", {"day1": fits})
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "day,variant,aic,d_e,n_samples" and lines[1] == "day1,4,1.5,10,100"
    rows = write_pairwise(tmp_path / "p.csv", {"day1": pairwise_differences(fits)})
    assert rows[0]["pair"] == "⑤-④" and rows[0]["mean"] == -0.25
