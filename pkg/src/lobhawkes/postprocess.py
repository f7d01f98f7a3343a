"""Smoothing splines over step kernels, multi-day averaging and plot data."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import CubicSpline

from .estimator import EstimatorSet
from .events import event_label, parse_label

N_ALPHA = 41


class TooFewKnots(ValueError):
    pass


class MetadataMismatch(ValueError):
    pass


class UnknownPair(ValueError):
    pass


# --------------------------------------------------------------------------
# smoothing splines


def _penalty_matrix(x: np.ndarray) -> np.ndarray:
    """``Q R^{-1} Q'`` so that ``g' K g`` is the integrated squared curvature
    of the natural cubic spline through ``(x, g)``."""
    n = x.size
    h = np.diff(x)
    Q = np.zeros((n, n - 2))
    R = np.zeros((n - 2, n - 2))
    for j in range(n - 2):
        Q[j, j] = 1.0 / h[j]
        Q[j + 1, j] = -1.0 / h[j] - 1.0 / h[j + 1]
        Q[j + 2, j] = 1.0 / h[j + 1]
        R[j, j] = (h[j] + h[j + 1]) / 3.0
        if j + 1 < n - 2:
            R[j, j + 1] = R[j + 1, j] = h[j + 1] / 6.0
    return Q @ np.linalg.solve(R, Q.T)


@dataclass
class SmoothedKernel:
    knots: np.ndarray
    raw: np.ndarray
    fitted: np.ndarray
    smoothing_param: float
    gcv: float

    def __post_init__(self):
        self._spline = CubicSpline(self.knots, self.fitted, bc_type="natural")
        self._slopes = self._spline(self.knots[[0, -1]], 1)

    def __call__(self, t):
        """Evaluate the spline; it continues linearly outside the knots."""
        t = np.asarray(t, dtype=float)
        out = self._spline(np.clip(t, self.knots[0], self.knots[-1]))
        lo, hi = t < self.knots[0], t > self.knots[-1]
        out = np.where(lo, self.fitted[0] + self._slopes[0] * (t - self.knots[0]), out)
        out = np.where(hi, self.fitted[-1] + self._slopes[1] * (t - self.knots[-1]), out)
        return out if out.ndim else float(out)

    def mass(self, support: Optional[float] = None, n: int = 4001) -> float:
        """Integral of the spline over [0, support]."""
        support = support if support is not None else self.knots[-1] + self.knots[0]
        t = np.linspace(0.0, support, n)
        return float(np.trapezoid(self(t), t))


def smooth_kernel(raw, delta: float, alpha: Optional[float] = None) -> SmoothedKernel:
    """Natural cubic smoothing spline through step estimates at bin midpoints.

    Minimises ``sum (raw_r - f(x_r))^2 + alpha * int f''^2``. When ``alpha`` is
    None it is chosen by generalised cross-validation on a fixed log grid.
    ``alpha = 0`` interpolates and ``alpha = inf`` gives the least-squares line.
    """
    raw = np.asarray(raw, dtype=float)
    p = raw.size
    if p < 4:
        raise TooFewKnots(f"need at least 4 values, got {p}")
    x = (np.arange(1, p + 1) - 0.5) * delta
    K = _penalty_matrix(x)
    kappa, U = np.linalg.eigh(0.5 * (K + K.T))
    kappa = np.clip(kappa, 0.0, None)
    # the two smallest eigenvalues belong to the linear null space
    kappa[:2] = 0.0
    uy = U.T @ raw

    def fit(a):
        if np.isinf(a):
            shrink = (kappa == 0).astype(float)
        else:
            shrink = 1.0 / (1.0 + a * kappa)
        g = U @ (shrink * uy)
        rss = float(np.sum((raw - g) ** 2))
        tr = float(shrink.sum())
        gcv = p * rss / (p - tr) ** 2 if p > tr + 1e-12 else np.inf
        return g, gcv

    if alpha is None:
        pos = kappa[kappa > 0]
        grid = np.logspace(np.log10(1e-3 / pos.max()), np.log10(1e3 / pos.min()), N_ALPHA)
        scores = [fit(a)[1] for a in grid]
        alpha = float(grid[int(np.argmin(scores))])
    g, gcv = fit(alpha)
    if alpha == 0:
        g = raw.copy()
    return SmoothedKernel(x, raw, g, float(alpha), gcv)


# --------------------------------------------------------------------------
# aggregation


@dataclass
class AggregateSet:
    days: List[Optional[str]]
    mean: EstimatorSet
    coverage: Dict[str, np.ndarray]
    per_day: Optional[List[EstimatorSet]] = None


def _key(e: EstimatorSet):
    return (e.delta, e.support, e.k_levels, int(e.variant), e.lam, e.d, e.scale_applied)


def _mean_block(arrays, masks):
    arr = np.stack(arrays)
    ok = np.stack(masks)
    cov = ok.sum(axis=0)
    total = np.where(ok, arr, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cov > 0, total / np.maximum(cov, 1), np.nan)
    return mean, cov


def aggregate_days(sets: Sequence[EstimatorSet], keep_days: bool = False) -> AggregateSet:
    """Elementwise mean over days, each entry averaged where it was estimable."""
    sets = list(sets)
    if not sets:
        raise ValueError("need at least one estimator set")
    ref = _key(sets[0])
    for e in sets[1:]:
        if _key(e) != ref:
            raise MetadataMismatch(f"estimator metadata {_key(e)} differs from {ref}")
    coverage = {}
    first = sets[0]
    kernels = ok = liq = time = icpt = None
    if first.kernels is not None:
        kernels, cov = _mean_block([e.kernels for e in sets], [e.kernel_estimable for e in sets])
        ok = cov > 0
        kernels = np.where(ok, kernels, 0.0)
        coverage["kernels"] = cov
    if first.liq_coef is not None:
        liq, coverage["liquidity"] = _mean_block([e.liq_coef for e in sets],
                                                 [~np.isnan(e.liq_coef) for e in sets])
    if first.time_coef is not None:
        time, coverage["time"] = _mean_block([e.time_coef for e in sets],
                                             [~np.isnan(e.time_coef) for e in sets])
    if first.intercept is not None:
        icpt, coverage["intercept"] = _mean_block([e.intercept for e in sets],
                                                  [~np.isnan(e.intercept) for e in sets])
    mean = replace(first, kernels=kernels, kernel_estimable=ok, liq_coef=liq, time_coef=time,
                   intercept=icpt, day=None if len(sets) > 1 else first.day,
                   lambdas=None if len(sets) > 1 else first.lambdas)
    return AggregateSet([e.day for e in sets], mean, coverage, sets if keep_days else None)


# --------------------------------------------------------------------------
# plot data


def _as_index(x, k: int, d: int) -> int:
    if isinstance(x, str):
        try:
            return parse_label(x, k)
        except ValueError:
            raise UnknownPair(f"unknown event {x!r}") from None
    i = int(x)
    if not 0 <= i < d:
        raise UnknownPair(f"event index {i} outside 0..{d - 1}")
    return i


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, (int, np.integer)) else repr(float(x)) for x in row])


def export_plots(agg: Union[AggregateSet, EstimatorSet], selection, out_dir,
                 curve_points: int = 201) -> List[str]:
    """Write plot data for each requested panel and return the file paths.

    A ``(j, i)`` pair asks for the kernel of source j on target i (kernel
    points plus spline); a single event asks for its liquidity and time
    factor bars. Events are 0-based indices or labels such as ``"+1(i)"``.
    """
    est = agg.mean if isinstance(agg, AggregateSet) else agg
    d, k = est.d, est.k_levels
    selection = list(selection)
    written = []
    if not selection:
        return written
    os.makedirs(out_dir, exist_ok=True)
    for item in selection:
        if isinstance(item, (tuple, list)):
            if len(item) != 2:
                raise UnknownPair(f"expected a (source, target) pair, got {item!r}")
            j, i = (_as_index(x, k, d) for x in item)
            if est.kernels is None:
                raise UnknownPair("estimates have no kernel block")
            raw = est.kernels[i, j]
            sk = smooth_kernel(raw, est.delta)
            path = os.path.join(out_dir, f"kernel_{j + 1}_to_{i + 1}.csv")
            _write(path, ["t", "raw", "smooth"], zip(sk.knots, raw, sk(sk.knots)))
            written.append(path)
            t = np.linspace(0.0, est.support, curve_points)
            path = os.path.join(out_dir, f"kernel_{j + 1}_to_{i + 1}_curve.csv")
            _write(path, ["t", "smooth"], zip(t, sk(t)))
            written.append(path)
        else:
            i = _as_index(item, k, d)
            for name, block in (("liquidity", est.liq_coef), ("time", est.time_coef)):
                if block is None:
                    continue
                path = os.path.join(out_dir, f"{name}_{i + 1}.csv")
                _write(path, ["category", "value"],
                       ((c + 1, v) for c, v in enumerate(block[i])))
                written.append(path)
    return written


def panel_title(j: int, i: int, k: int) -> str:
    return f"{event_label(j, k)} -> {event_label(i, k)}"
