"""Binned least-squares estimation of the Hawkes + liquidity + time model.

For every event type i the response ``y_i = (B_{i,p+1}, ..., B_{i,n})`` is
regressed on a design whose columns are, in this order:

* ``d * p`` lagged counts, lag r block first with all d types inside it;
* 10 liquidity indicators built from type i's own liquidity categories;
* 126 time indicators, the first (T_1) being the all-zero reference column;
* a constant, used only by variants without the liquidity block.

The shared lag block is never materialised at full size: the Gram matrix of
all blocks for all types is accumulated over column chunks.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from ._cd import cd_sweeps
from .binning import N_TIME, BinConfig, BinData

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
MAX_SWEEPS = 10_000
CD_TOL = 1e-8
_POLISH_EVERY = 25


class EstimationError(ValueError):
    pass


class InsufficientSamples(EstimationError):
    pass


class SingularNormalEquations(EstimationError):
    def __init__(self, dimension, columns):
        super().__init__(f"singular normal equations for type {dimension}; columns {list(columns)}")
        self.dimension = dimension
        self.columns = list(columns)


class NonConvergence(EstimationError):
    def __init__(self, dimension, sweeps, kkt_gap):
        super().__init__(
            f"coordinate descent for type {dimension} stopped after {sweeps} sweeps; "
            f"max KKT violation {kkt_gap:.3g}"
        )
        self.kkt_gap = kkt_gap


class ModelVariant(IntEnum):
    """The seven model variants compared by AIC."""

    LIQ = 1
    TIME = 2
    LIQ_TIME = 3
    HAWKES = 4
    HAWKES_LASSO = 5
    FULL = 6
    FULL_LASSO = 7

    @property
    def lags(self) -> bool:
        return self >= ModelVariant.HAWKES

    @property
    def liquidity(self) -> bool:
        return self in (ModelVariant.LIQ, ModelVariant.LIQ_TIME, ModelVariant.FULL, ModelVariant.FULL_LASSO)

    @property
    def time(self) -> bool:
        return self in (ModelVariant.TIME, ModelVariant.LIQ_TIME, ModelVariant.FULL, ModelVariant.FULL_LASSO)

    @property
    def intercept(self) -> bool:
        # without liquidity indicators a constant carries the baseline
        return not self.liquidity

    @property
    def lasso(self) -> bool:
        return self in (ModelVariant.HAWKES_LASSO, ModelVariant.FULL_LASSO)

    @property
    def symbol(self) -> str:
        return "①②③④⑤⑥⑦"[self - 1]


@dataclass(frozen=True)
class Layout:
    """Column positions of the union design for one response dimension."""

    d: int
    p: int
    n_liq: int = 10
    n_time: int = N_TIME

    @property
    def lag(self) -> slice:
        return slice(0, self.d * self.p)

    @property
    def liq(self) -> slice:
        s = self.d * self.p
        return slice(s, s + self.n_liq)

    @property
    def time(self) -> slice:
        s = self.d * self.p + self.n_liq
        return slice(s, s + self.n_time)

    @property
    def intercept(self) -> int:
        return self.d * self.p + self.n_liq + self.n_time

    @property
    def size(self) -> int:
        return self.intercept + 1

    def active(self, variant: ModelVariant) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.lag] = variant.lags
        mask[self.liq] = variant.liquidity
        mask[self.time] = variant.time
        mask[self.intercept] = variant.intercept
        return mask

    def label(self, col: int) -> str:
        if col < self.d * self.p:
            r, j = divmod(col, self.d)
            return f"lag{r + 1}:type{j + 1}"
        if col < self.liq.stop:
            return f"L{col - self.liq.start + 1}"
        if col < self.time.stop:
            return f"T{col - self.time.start + 1}"
        return "const"


@dataclass
class NormalEquations:
    """``Z Z'``, ``Z y`` and ``y'y`` for one response over the union layout."""

    gram: np.ndarray
    zy: np.ndarray
    yy: float
    m: int
    observed: np.ndarray  # column has at least one non-zero entry
    time_seen: Optional[np.ndarray] = None  # samples per time category, T_1 included


@dataclass
class FitDiagnostics:
    residuals: np.ndarray  # (m,) for one type or (d, m)
    zero_count: int = 0
    dropped_categories: List[Tuple[int, str]] = field(default_factory=list)
    sweeps: int = 0


class DesignProblem:
    """Lagged design for all d types sharing one lag block.

    ``lag_block``, ``liq_indicators`` and ``time_indicators`` build dense
    matrices and are meant for small problems and checks; the solvers work
    from :meth:`normal_equations`.
    """

    def __init__(self, counts, liq_cat, time_cat, p, n_liq=10, n_time=N_TIME, chunk=4096):
        self.counts = np.ascontiguousarray(counts, dtype=float)
        d, n = self.counts.shape
        self.liq_cat = np.asarray(liq_cat, dtype=np.int64).reshape(d, n)
        self.time_cat = np.asarray(time_cat, dtype=np.int64).reshape(n)
        self.p = int(p)
        self.layout = Layout(d, self.p, n_liq, n_time)
        self.chunk = int(chunk)
        self._gram = None
        if n <= self.p:
            raise InsufficientSamples(f"n={n} bins cannot support p={self.p} lags")

    @classmethod
    def from_bins(cls, bins: BinData, **kw) -> "DesignProblem":
        return cls(bins.counts, bins.liq_cat, bins.time_cat, bins.config.lag,
                   n_liq=bins.config.n_liquidity, **kw)

    @property
    def d(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    @property
    def m(self) -> int:
        return self.n - self.p

    # dense pieces -------------------------------------------------------

    def _lags(self, start, stop) -> np.ndarray:
        p, d = self.p, self.d
        out = np.empty((p * d, stop - start))
        for r in range(1, p + 1):
            out[(r - 1) * d:r * d] = self.counts[:, p - r + start:p - r + stop]
        return out

    @property
    def lag_block(self) -> np.ndarray:
        return self._lags(0, self.m)

    def liq_indicators(self, i: int) -> np.ndarray:
        cats = self.liq_cat[i, self.p:]
        return (np.arange(self.layout.n_liq)[:, None] == cats[None, :]).astype(float)

    @property
    def time_indicators(self) -> np.ndarray:
        cats = self.time_cat[self.p:]
        out = (np.arange(self.layout.n_time)[:, None] == cats[None, :]).astype(float)
        out[0] = 0.0  # T_1 reference group
        return out

    @property
    def response(self) -> np.ndarray:
        return self.counts[:, self.p:]

    def design(self, i: int) -> np.ndarray:
        """Dense union design for type ``i``, shape ``(layout.size, m)``."""
        return np.vstack([
            self.lag_block,
            self.liq_indicators(i),
            self.time_indicators,
            np.ones((1, self.m)),
        ])

    # Gram accumulation --------------------------------------------------

    def _gram_all(self) -> np.ndarray:
        if self._gram is not None:
            return self._gram
        d, p, m = self.d, self.p, self.m
        nl, nt = self.layout.n_liq, self.layout.n_time
        q = d * p + nt + nl * d + 1 + d
        gram = np.zeros((q, q))
        for start in range(0, m, self.chunk):
            stop = min(start + self.chunk, m)
            w = np.empty((q, stop - start))
            o = d * p
            w[:o] = self._lags(start, stop)
            tc = self.time_cat[p + start:p + stop]
            w[o:o + nt] = np.arange(nt)[:, None] == tc[None, :]
            w[o] = 0.0
            o += nt
            lc = self.liq_cat[:, p + start:p + stop]
            for i in range(d):
                w[o + i * nl:o + (i + 1) * nl] = np.arange(nl)[:, None] == lc[i][None, :]
            o += nl * d
            w[o] = 1.0
            w[o + 1:] = self.counts[:, p + start:p + stop]
            gram += w @ w.T
        self._gram = gram
        return gram

    def normal_equations(self, i: int) -> NormalEquations:
        d, p = self.d, self.p
        nl, nt = self.layout.n_liq, self.layout.n_time
        g = self._gram_all()
        lag = np.arange(d * p)
        time = d * p + np.arange(nt)
        liq = d * p + nt + i * nl + np.arange(nl)
        one = d * p + nt + nl * d
        cols = np.concatenate([lag, liq, time, [one]])
        yi = one + 1 + i
        gram = g[np.ix_(cols, cols)]
        zy = g[cols, yi].copy()
        observed = np.diag(gram) > 0
        seen = np.bincount(self.time_cat[p:], minlength=nt)
        return NormalEquations(gram, zy, float(g[yi, yi]), self.m, observed, seen)

    # fitted values --------------------------------------------------------

    def fitted(self, coef: np.ndarray, rows: Optional[Sequence[int]] = None) -> np.ndarray:
        """Fitted responses for union-layout coefficients ``coef`` of shape (d, P).

        Non-estimable entries must be zero (NaNs are treated as zero).
        """
        coef = np.nan_to_num(np.atleast_2d(coef))
        rows = np.arange(self.d) if rows is None else np.asarray(rows)
        lay = self.layout
        out = np.empty((len(rows), self.m))
        lagc = coef[:, lay.lag]
        use_lags = np.any(lagc != 0)
        tc = self.time_cat[self.p:]
        for k, i in enumerate(rows):
            c = coef[k] if coef.shape[0] == len(rows) else coef[i]
            base = c[lay.liq][self.liq_cat[i, self.p:]] + c[lay.time][tc] + c[lay.intercept]
            base[tc == 0] -= c[lay.time][0]
            out[k] = base
        if use_lags:
            lagc = lagc if coef.shape[0] == len(rows) else lagc[rows]
            for start in range(0, self.m, self.chunk):
                stop = min(start + self.chunk, self.m)
                out[:, start:stop] += lagc @ self._lags(start, stop)
        return out


def build_design(bins: BinData, cfg: Optional[BinConfig] = None, chunk=4096) -> DesignProblem:
    """Design problem for ``bins``; checks there are enough samples for the full model."""
    cfg = cfg or bins.config
    problem = DesignProblem(bins.counts, bins.liq_cat, bins.time_cat, cfg.lag,
                            n_liq=cfg.n_liquidity, chunk=chunk)
    need = problem.d * problem.p + cfg.n_liquidity + N_TIME
    if problem.n <= need:
        raise InsufficientSamples(f"n={problem.n} bins but the full model needs more than {need}")
    return problem


# --------------------------------------------------------------------------
# column selection and solvers


def estimable_columns(ne: NormalEquations, layout: Layout, variant: ModelVariant) -> np.ndarray:
    """Active columns that carry information for this response.

    Unobserved indicator levels and all-zero lag rows are dropped, as is the
    T_1 column. If T_1 itself has no samples, the first observed time level
    becomes the reference instead.
    """
    mask = layout.active(variant) & ne.observed
    if variant.time:
        t0 = layout.time.start
        mask[t0] = False
        seen = ne.time_seen if ne.time_seen is not None else ne.observed[layout.time]
        if not seen[0]:
            present = np.flatnonzero(seen)
            if present.size:
                mask[t0 + present[0]] = False
    return mask


def _equilibrated_cholesky(gram):
    scale = 1.0 / np.sqrt(np.diag(gram))
    a = gram * scale[:, None] * scale[None, :]
    factor = linalg.cho_factor(a, lower=False, check_finite=False)
    diag = np.abs(np.diag(factor[0]))
    if diag.min() ** 2 < 1e-13 * diag.max() ** 2:
        raise np.linalg.LinAlgError("numerically singular")
    return factor, scale


def _singular_columns(gram) -> List[int]:
    scale = 1.0 / np.sqrt(np.diag(gram))
    a = gram * scale[:, None] * scale[None, :]
    _, piv, rank, _ = linalg.lapack.dpstrf(a, lower=0, tol=1e-10)
    return sorted((piv[rank:] - 1).tolist())


def _ols(gram, zy, dimension, col_index):
    try:
        factor, scale = _equilibrated_cholesky(gram)
    except (np.linalg.LinAlgError, linalg.LinAlgError):
        bad = _singular_columns(gram)
        raise SingularNormalEquations(dimension, [int(col_index[b]) for b in bad]) from None
    return scale * linalg.cho_solve(factor, scale * zy, check_finite=False)


def _kkt_gap(gram, zy, c, pen):
    g = zy - gram @ c
    nz = c != 0
    gap = np.where(nz, np.abs(g - pen * np.sign(c)), np.maximum(np.abs(g) - pen, 0.0))
    return float(gap.max()) if gap.size else 0.0


def _polish(gram, zy, c, pen):
    """Exact solution on the current support and signs, or None if it is not optimal."""
    active = (c != 0) | (pen == 0)
    if not active.any():
        cand = np.zeros_like(c)
    else:
        s = np.sign(c) * (pen > 0)
        idx = np.flatnonzero(active)
        ga = gram[np.ix_(idx, idx)]
        try:
            factor, scale = _equilibrated_cholesky(ga)
        except (np.linalg.LinAlgError, linalg.LinAlgError):
            return None
        rhs = zy[idx] - pen[idx] * s[idx]
        cand = np.zeros_like(c)
        cand[idx] = scale * linalg.cho_solve(factor, scale * rhs, check_finite=False)
        pen_a = pen[idx] > 0
        if np.any(np.sign(cand[idx][pen_a]) != s[idx][pen_a]):
            return None
    g = zy - gram @ cand
    inactive = ~((cand != 0) | (pen == 0))
    if np.any(np.abs(g[inactive]) > pen[inactive] * (1 + 1e-9)):
        return None
    return cand


def _lasso(gram, zy, pen, start, dimension, max_sweeps=MAX_SWEEPS, tol=CD_TOL):
    c = np.array(start, dtype=float)
    g = zy - gram @ c
    gram = np.ascontiguousarray(gram)
    done = 0
    while done < max_sweeps:
        step = min(_POLISH_EVERY, max_sweeps - done)
        sweeps, converged = cd_sweeps(gram, zy, c, g, pen, step, tol)
        done += sweeps
        if converged:
            break
        cand = _polish(gram, zy, c, pen)
        if cand is not None:
            trial = cand.copy()
            gt = zy - gram @ trial
            _, ok = cd_sweeps(gram, zy, trial, gt, pen, 1, tol)
            if ok:
                return cand, done + 1
            c, g = trial, gt
    else:
        raise NonConvergence(dimension, done, _kkt_gap(gram, zy, c, pen))
    cand = _polish(gram, zy, c, pen)
    return (cand if cand is not None else c), done


def _solve_dimension(problem: DesignProblem, i: int, variant: ModelVariant, lam: float):
    lay = problem.layout
    ne = problem.normal_equations(i)
    mask = estimable_columns(ne, lay, variant)
    cols = np.flatnonzero(mask)
    coef = np.zeros(lay.size)
    if cols.size:
        gram = ne.gram[np.ix_(cols, cols)]
        zy = ne.zy[cols]
        beta = _ols(gram, zy, i, cols)
        sweeps = 0
        if variant.lasso and lam > 0:
            pen = np.where(cols < lay.lag.stop, lam / 2.0, 0.0)
            beta, sweeps = _lasso(gram, zy, pen, beta, i)
        coef[cols] = beta
    else:
        sweeps = 0
    active = lay.active(variant)
    dropped = [(i, lay.label(c)) for c in np.flatnonzero(active & ~mask)
               if not (lay.lag.start <= c < lay.lag.stop) and c != lay.time.start]
    coef[active & ~mask] = np.nan
    coef[lay.lag][~mask[lay.lag]] = 0.0
    if variant.time:
        coef[lay.time.start] = 0.0
    zero_count = int(np.sum(coef[lay.lag][mask[lay.lag]] == 0)) if variant.lags else 0
    return coef, mask, dropped, zero_count, sweeps


def solve_ols(problem: DesignProblem, dimension: int, variant=ModelVariant.FULL):
    """OLS coefficients for one type over the union layout.

    Returns ``(coef, diagnostics)``; non-estimable indicator coefficients are
    NaN, non-estimable lag coefficients 0, and coefficients outside the
    variant NaN. Coefficients are unscaled (not divided by delta).
    """
    return _solve_one(problem, dimension, ModelVariant(variant), 0.0)


def solve_lasso(problem: DesignProblem, dimension: int, lam: float, variant=ModelVariant.FULL_LASSO):
    """Coordinate-descent LASSO with the l1 penalty on the lag coefficients only."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    variant = ModelVariant(variant)
    if not variant.lasso:
        variant = ModelVariant.FULL_LASSO if variant.liquidity or variant.time else ModelVariant.HAWKES_LASSO
    return _solve_one(problem, dimension, variant, float(lam))


def _solve_one(problem, i, variant, lam):
    coef, mask, dropped, zeros, sweeps = _solve_dimension(problem, i, variant, lam)
    resid = problem.response[i] - problem.fitted(coef[None, :], rows=[i])[0]
    return coef, FitDiagnostics(resid, zeros, dropped, sweeps)


# --------------------------------------------------------------------------
# full model


@dataclass
class EstimatorSet:
    """Scaled estimates (rates per second) for every block in the variant.

    ``kernels[i, j, r]`` is the step r+1 value of the kernel of type j
    exciting type i. Non-estimable liquidity/time levels are NaN; the T_1
    time level is 0 by coding.
    """

    kernels: Optional[np.ndarray]
    liq_coef: Optional[np.ndarray]
    time_coef: Optional[np.ndarray]
    intercept: Optional[np.ndarray]
    kernel_estimable: Optional[np.ndarray]
    delta: float
    support: float
    k_levels: int
    variant: ModelVariant
    lam: object = 0.0  # penalty value, or a rule name such as "auto"
    day: Optional[str] = None
    scale_applied: bool = True
    lambdas: Optional[np.ndarray] = None  # penalty actually used per type

    @property
    def d(self) -> int:
        for a in (self.kernels, self.liq_coef, self.time_coef, self.intercept):
            if a is not None:
                return a.shape[0]
        raise ValueError("empty estimator set")

    @property
    def p(self) -> int:
        return int(np.floor(self.support / self.delta + 1e-9))

    def kernel_mass(self) -> np.ndarray:
        """Integrated kernel per pair, sum_r phi[i, j, r] * delta."""
        return self.kernels.sum(axis=2) * self.delta

    def metadata(self) -> dict:
        return {
            "delta": self.delta,
            "support": self.support,
            "k_levels": self.k_levels,
            "p": int(round(self.support / self.delta)),
            "variant": int(self.variant),
            "lambda": self.lam,
            "day": self.day,
            "scale_applied": self.scale_applied,
            "d": self.d,
            "lambdas": None if self.lambdas is None else [float(x) for x in self.lambdas],
        }


def _coef_count(coef, mask) -> int:
    return int(np.sum(mask & (np.nan_to_num(coef) != 0)))


def _assemble(coefs, masks, layout, cfg, variant, lam, day, delta):
    d, p = layout.d, layout.p
    scale = 1.0 / delta
    kernels = kernel_ok = liq = time = icpt = None
    if variant.lags:
        lagc = coefs[:, layout.lag].reshape(d, p, d)  # [i, r, j]
        kernels = np.transpose(lagc, (0, 2, 1)) * scale
        kernel_ok = np.transpose(masks[:, layout.lag].reshape(d, p, d), (0, 2, 1))
    if variant.liquidity:
        liq = coefs[:, layout.liq] * scale
    if variant.time:
        time = coefs[:, layout.time] * scale
    if variant.intercept:
        icpt = coefs[:, layout.intercept] * scale
    lambdas = None
    lam_meta = 0.0
    if variant.lasso:
        lambdas = np.array(lam, dtype=float)
        lam_meta = float(lambdas[0]) if np.all(lambdas == lambdas[0]) else "per-type"
    return EstimatorSet(kernels, liq, time, icpt, kernel_ok, cfg.delta, cfg.support,
                        cfg.k_levels, variant, lam_meta, day, lambdas=lambdas)


@dataclass
class ModelEstimate:
    """Everything one variant fit produces, before AIC bookkeeping."""

    estimators: EstimatorSet
    diagnostics: FitDiagnostics
    coef: np.ndarray  # unscaled, (d, P)
    estimable: np.ndarray  # (d, P) bool
    effective_parameters: int


def fit_variant(problem: DesignProblem, cfg: BinConfig, variant, lam=0.0, day=None,
                max_workers: int = 1) -> ModelEstimate:
    variant = ModelVariant(variant)
    d = problem.d
    lams = np.broadcast_to(np.asarray(lam, dtype=float), (d,)) if variant.lasso else np.zeros(d)
    problem._gram_all()  # build once before fanning out

    def work(i):
        return _solve_dimension(problem, i, variant, float(lams[i]))

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            results = list(pool.map(work, range(d)))
    else:
        results = [work(i) for i in range(d)]
    coefs = np.stack([r[0] for r in results])
    masks = np.stack([r[1] for r in results])
    dropped = [x for r in results for x in r[2]]
    zeros = sum(r[3] for r in results)
    sweeps = max(r[4] for r in results)
    resid = problem.response - problem.fitted(coefs)
    est = _assemble(coefs, masks, problem.layout, cfg, variant,
                    lams if variant.lasso else 0.0, day, cfg.delta)
    diag = FitDiagnostics(resid, zeros, dropped, sweeps)
    return ModelEstimate(est, diag, coefs, masks, _coef_count(coefs, masks))


def estimate_model(bins: BinData, cfg: Optional[BinConfig] = None, variant=ModelVariant.FULL_LASSO,
                   lam=0.0005, day=None, problem: Optional[DesignProblem] = None,
                   max_workers: int = 1):
    """Fit one variant to one day of bins; returns ``(EstimatorSet, FitDiagnostics)``."""
    cfg = cfg or bins.config
    problem = problem or build_design(bins, cfg)
    fit = fit_variant(problem, cfg, variant, lam, day, max_workers)
    return fit.estimators, fit.diagnostics


# --------------------------------------------------------------------------
# bundle files


def _fmt(x) -> str:
    return repr(float(x))


def save_estimators(directory, est: EstimatorSet) -> None:
    """Write the estimator bundle: ``meta.json`` plus one CSV per block."""
    os.makedirs(directory, exist_ok=True)
    meta = {"version": BUNDLE_VERSION, **est.metadata(), "variant_symbol": est.variant.symbol}
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    d = est.d
    if est.kernels is not None:
        with open(os.path.join(directory, "kernels.csv"), "w") as fh:
            fh.write("i,j,r,value,estimable\n")
            p = est.kernels.shape[2]
            for i in range(d):
                for j in range(d):
                    for r in range(p):
                        fh.write(f"{i + 1},{j + 1},{r + 1},{_fmt(est.kernels[i, j, r])},"
                                 f"{int(est.kernel_estimable[i, j, r])}\n")
    for name, arr in (("liquidity", est.liq_coef), ("time", est.time_coef)):
        if arr is None:
            continue
        with open(os.path.join(directory, f"{name}.csv"), "w") as fh:
            fh.write("i,category,value\n")
            for i in range(d):
                for c in range(arr.shape[1]):
                    fh.write(f"{i + 1},{c + 1},{_fmt(arr[i, c])}\n")
    if est.intercept is not None:
        with open(os.path.join(directory, "intercept.csv"), "w") as fh:
            fh.write("i,value\n")
            for i in range(d):
                fh.write(f"{i + 1},{_fmt(est.intercept[i])}\n")


def load_estimators(directory) -> EstimatorSet:
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    if meta.get("version") != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {meta.get('version')}")
    d = meta["d"]
    variant = ModelVariant(meta["variant"])

    def table(name):
        f = os.path.join(directory, name)
        return np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2) if os.path.exists(f) else None

    kernels = ok = liq = time = icpt = None
    k = table("kernels.csv")
    if k is not None:
        p = int(meta.get("p", k[:, 2].max()))
        kernels = np.zeros((d, d, p))
        ok = np.zeros((d, d, p), dtype=bool)
        idx = (k[:, 0].astype(int) - 1, k[:, 1].astype(int) - 1, k[:, 2].astype(int) - 1)
        kernels[idx] = k[:, 3]
        ok[idx] = k[:, 4] != 0
    for name in ("liquidity", "time"):
        t = table(f"{name}.csv")
        if t is None:
            continue
        arr = np.full((d, int(t[:, 1].max())), np.nan)
        arr[t[:, 0].astype(int) - 1, t[:, 1].astype(int) - 1] = t[:, 2]
        if name == "liquidity":
            liq = arr
        else:
            time = arr
    t = table("intercept.csv")
    if t is not None:
        icpt = np.zeros(d)
        icpt[t[:, 0].astype(int) - 1] = t[:, 1]
    lambdas = meta.get("lambdas")
    return EstimatorSet(kernels, liq, time, icpt, ok, meta["delta"], meta["support"],
                        meta["k_levels"], variant, meta["lambda"], meta["day"],
                        meta["scale_applied"], None if lambdas is None else np.array(lambdas))


# --------------------------------------------------------------------------
# penalty calibration


def zeroing_thresholds(problem: DesignProblem, dimension: int, variant=ModelVariant.FULL_LASSO) -> np.ndarray:
    """Per lag coefficient, ``2 |c_j| / [(Z Z')^{-1}]_jj`` at the OLS solution.

    This is the penalty at which coordinate j alone would reach zero with the
    others re-optimised; for an orthogonal design it is exact.
    """
    variant = ModelVariant(variant)
    lay = problem.layout
    ne = problem.normal_equations(dimension)
    cols = np.flatnonzero(estimable_columns(ne, lay, variant))
    gram = ne.gram[np.ix_(cols, cols)]
    beta = _ols(gram, ne.zy[cols], dimension, cols)
    factor, scale = _equilibrated_cholesky(gram)
    inv_diag = np.diag(linalg.cho_solve(factor, np.eye(cols.size), check_finite=False)) * scale ** 2
    lag = cols < lay.lag.stop
    return 2.0 * np.abs(beta[lag]) / inv_diag[lag]


def calibrate_lambda(problem: DesignProblem, target=0.15, band=(0.10, 0.20),
                     variant=ModelVariant.FULL_LASSO, refine: int = 8) -> np.ndarray:
    """One penalty per type so that a ``target`` share of its kernel coefficients are zero.

    Starts from the ``target`` quantile of :func:`zeroing_thresholds` and
    adjusts geometrically until the realised share falls inside ``band``.
    """
    lams = np.zeros(problem.d)
    for i in range(problem.d):
        thr = zeroing_thresholds(problem, i, variant)
        if thr.size == 0:
            continue
        lam = float(np.quantile(thr, target))
        lo, hi = 0.0, np.inf
        for _ in range(refine):
            coef, diag = solve_lasso(problem, i, lam, variant)
            share = diag.zero_count / thr.size
            if band[0] <= share <= band[1]:
                break
            if share < band[0]:
                lo = lam
                lam = lam * 2 if hi == np.inf else np.sqrt(lam * hi)
            else:
                hi = lam
                lam = lam / 2 if lo == 0 else np.sqrt(lam * lo)
        lams[i] = lam
    return lams
