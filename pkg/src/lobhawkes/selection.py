"""Multivariate AIC and the seven-variant model comparison."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from .binning import BinConfig, BinData
from .estimator import (
    DesignProblem,
    FitDiagnostics,
    ModelEstimate,
    ModelVariant,
    build_design,
    fit_variant,
)

# the pairwise differences reported per day, as (minuend, subtrahend)
PAIRS = (
    (ModelVariant.HAWKES, ModelVariant.LIQ_TIME),
    (ModelVariant.FULL, ModelVariant.HAWKES),
    (ModelVariant.HAWKES_LASSO, ModelVariant.HAWKES),
    (ModelVariant.HAWKES_LASSO, ModelVariant.LIQ_TIME),
    (ModelVariant.FULL_LASSO, ModelVariant.FULL),
)


class DegenerateResiduals(ValueError):
    pass


@dataclass
class ModelFit:
    variant: ModelVariant
    sigma_hat: np.ndarray
    d_e: int
    aic: float
    sample_count: int
    estimate: Optional[ModelEstimate] = None


def residual_covariance(diag) -> np.ndarray:
    """``sum_k u_k u_k' / m`` for residuals of shape (d, m)."""
    r = diag.residuals if isinstance(diag, FitDiagnostics) else diag
    r = np.atleast_2d(np.asarray(r, dtype=float))
    return (r @ r.T) / r.shape[1]


def log_det(sigma: np.ndarray) -> float:
    s = 0.5 * (np.asarray(sigma, dtype=float) + np.asarray(sigma, dtype=float).T)
    try:
        c, _ = linalg.cho_factor(s, lower=True)
    except linalg.LinAlgError:
        raise DegenerateResiduals("residual covariance is not positive definite") from None
    diag = np.diag(c)
    if np.any(diag <= 0):
        raise DegenerateResiduals("residual covariance is not positive definite")
    return 2.0 * float(np.sum(np.log(diag)))


def aic_value(sigma: np.ndarray, d_e: int, sample_count: int) -> float:
    """Per-sample AIC: ``log det sigma + 2 d_e / sample_count``."""
    return log_det(sigma) + 2.0 * d_e / sample_count


def compute_aic(fit: ModelFit) -> float:
    return aic_value(fit.sigma_hat, fit.d_e, fit.sample_count)


def fit_model(problem: DesignProblem, cfg: BinConfig, variant, lam=0.0, keep_estimate=True) -> ModelFit:
    est = fit_variant(problem, cfg, variant, lam)
    sigma = residual_covariance(est.diagnostics)
    m = problem.m
    fit = ModelFit(ModelVariant(variant), sigma, est.effective_parameters, np.nan, m,
                   est if keep_estimate else None)
    fit.aic = compute_aic(fit)
    return fit


def run_selection(bins: BinData, cfg: Optional[BinConfig] = None, lam=0.0005,
                  variants: Sequence[ModelVariant] = tuple(ModelVariant),
                  problem: Optional[DesignProblem] = None, max_workers: int = 1,
                  keep_estimates: bool = False) -> Dict[ModelVariant, ModelFit]:
    """Fit every variant on the same samples (bins p+1..n) and compute their AICs.

    ``lam`` may be a scalar or one penalty per event type; it applies to the
    LASSO variants only.
    """
    cfg = cfg or bins.config
    problem = problem or build_design(bins, cfg)
    problem._gram_all()

    def work(v):
        return fit_model(problem, cfg, v, lam, keep_estimates)

    variants = [ModelVariant(v) for v in variants]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            fits = list(pool.map(work, variants))
    else:
        fits = [work(v) for v in variants]
    return dict(zip(variants, fits))


def pairwise_differences(fits: Dict[ModelVariant, ModelFit]) -> Dict[str, float]:
    out = {}
    for a, b in PAIRS:
        if a in fits and b in fits:
            out[f"{a.symbol}-{b.symbol}"] = fits[a].aic - fits[b].aic
    return out


def summarize_differences(per_day: List[Dict[str, float]]) -> List[dict]:
    """Min, quartiles, mean, max and number of days with a decrease, per pair."""
    rows = []
    keys = [k for k in per_day[0]] if per_day else []
    for key in keys:
        x = np.array([day[key] for day in per_day], dtype=float)
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
        rows.append({
            "pair": key,
            "min": float(x.min()),
            "q1": float(q1),
            "median": float(med),
            "mean": float(x.mean()),
            "q3": float(q3),
            "max": float(x.max()),
            "decreased": int(np.sum(x < 0)),
            "days": int(x.size),
        })
    return rows


def write_selection(path, fits_by_day: Dict[str, Dict[ModelVariant, ModelFit]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "variant", "aic", "d_e", "n_samples"])
        for day, fits in fits_by_day.items():
            for v, f in sorted(fits.items()):
                w.writerow([day, int(v), repr(float(f.aic)), f.d_e, f.sample_count])


def write_pairwise(path, per_day: Dict[str, Dict[str, float]]) -> List[dict]:
    rows = summarize_differences(list(per_day.values()))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair", "min", "q1", "median", "mean", "q3", "max", "decreased", "days"])
        for r in rows:
            w.writerow([r["pair"]] + [repr(r[k]) for k in ("min", "q1", "median", "mean", "q3", "max")]
                       + [r["decreased"], r["days"]])
    return rows


def format_table(rows: List[dict]) -> str:
    head = f"{'pair':<6}{'min':>10}{'q1':>10}{'median':>10}{'mean':>10}{'q3':>10}{'max':>10}  decreased"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r['pair']:<6}" + "".join(f"{r[k]:>10.4f}" for k in ("min", "q1", "median", "mean", "q3", "max"))
            + f"  {r['decreased']}/{r['days']}"
        )
    return "\n".join(lines)
