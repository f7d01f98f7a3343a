"""Bin-count, liquidity-state and time-factor sequences on a Delta grid."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .events import (
    OPEN_SECONDS,
    LiquidityPath,
    is_price_change,
    n_types as lob_types,
    spread_types,
)

N_TIME = 126
SESSION = 23400.0
# 30 one-minute buckets, 66 five-minute buckets, 30 one-minute buckets
TIME_EDGES = np.concatenate([
    np.arange(0, 1800, 60),
    np.arange(1800, 21600, 300),
    np.arange(21600, 23400 + 1, 60),
]).astype(float)

ARCHIVE_VERSION = 1
_EPS = 1e-9


class EventOutOfHorizon(ValueError):
    pass


@dataclass(frozen=True)
class BinConfig:
    delta: float = 0.25
    support: float = 20.0
    horizon: float = SESSION
    use_sizes: bool = True
    k_levels: int = 3
    origin: float = OPEN_SECONDS
    n_liquidity: int = 10
    liquidity_unit: float = 100.0
    spread_unit: float = 0.01
    # generic (non order book) processes: number of types, none price-changing
    n_types: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.delta < self.support < self.horizon:
            raise ValueError("need 0 < delta < support < horizon")
        if self.lag < 1 or self.n_bins <= self.lag:
            raise ValueError("need p >= 1 and n > p")
        if self.n_liquidity < 1:
            raise ValueError("n_liquidity must be positive")

    @property
    def lag(self) -> int:
        return int(math.floor(self.support / self.delta + _EPS))

    @property
    def n_bins(self) -> int:
        return int(math.floor(self.horizon / self.delta + _EPS))

    @property
    def d(self) -> int:
        return self.n_types if self.n_types is not None else lob_types(self.k_levels)

    def price_change_mask(self) -> np.ndarray:
        if self.n_types is not None:
            return np.zeros(self.d, dtype=bool)
        return is_price_change(np.arange(self.d), self.k_levels)

    def spread_mask(self) -> np.ndarray:
        mask = np.zeros(self.d, dtype=bool)
        if self.n_types is None:
            mask[list(spread_types(self.k_levels))] = True
        return mask


@dataclass
class BinData:
    """Aligned sequences over n bins.

    ``counts[i, k]`` is B_{i,k+1}; ``liq_cat`` and ``time_cat`` hold 0-based
    categories (L_1 -> 0, T_1 -> 0).
    """

    counts: np.ndarray  # (d, n)
    liq_state: np.ndarray  # (d, n)
    liq_cat: np.ndarray  # (d, n) int
    time_cat: np.ndarray  # (n,) int
    config: BinConfig

    @property
    def d(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return self.counts.shape[1]


def bucketize_liquidity(l, spread=False, n_categories=10, unit=100.0, spread_unit=0.01):
    """0-based liquidity category: ``min(floor(l / unit), n_categories - 1)``.

    ``spread`` selects the price unit used by p-(i)/p+(i). Accepts arrays;
    ``spread`` broadcasts against ``l``.
    """
    l = np.asarray(l, dtype=float)
    if np.any(l < 0):
        raise ValueError("liquidity state must be non-negative")
    u = np.where(spread, spread_unit, unit)
    cat = np.floor(l / u + _EPS).astype(np.int64)
    out = np.minimum(cat, n_categories - 1)
    return out if out.ndim else int(out)


def bucketize_time(t):
    """0-based time category for seconds since the open (0 <= t < 23400)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t >= SESSION):
        raise ValueError("time must lie in [0, 23400)")
    out = np.searchsorted(TIME_EDGES, t, side="right") - 1
    return out if out.ndim else int(out)


def _bin_index(t, delta, n):
    # bin k covers ((k-1) delta, k delta]; t == 0 goes to the first bin
    k = np.ceil(np.asarray(t) / delta - _EPS).astype(np.int64)
    return np.maximum(k, 1) - 1


def events_to_arrays(events):
    """``(times, types, sizes)`` arrays from ClassifiedEvents or a tuple of arrays."""
    if isinstance(events, tuple) and len(events) == 3:
        return tuple(np.asarray(a) for a in events)
    events = list(events)
    if not events:
        return np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    times = np.fromiter((e.time for e in events), float, len(events))
    types = np.fromiter((e.event_type for e in events), np.int64, len(events))
    sizes = np.fromiter((e.size for e in events), np.int64, len(events))
    return times, types, sizes


def build_bins(events, cfg: BinConfig, path: Optional[LiquidityPath] = None,
               initial_state: Optional[np.ndarray] = None) -> BinData:
    """Allocate events to bins and sample the liquidity state at bin starts.

    Additive types add their size (or 1 when ``use_sizes`` is off); the
    price-change types add 1. The liquidity state of bin k is read from
    ``path`` at (k-1)*delta: the state after all messages up to that time.
    Without a path the state carries forward each type's pre-event liquidity
    from its last event, which is coarser; bare arrays hold ``initial_state``
    (zero by default).
    """
    if not isinstance(events, tuple):
        events = list(events)
    times, types, sizes = events_to_arrays(events)
    d, n, delta = cfg.d, cfg.n_bins, cfg.delta
    rel = times - cfg.origin
    if rel.size and (rel.min() < -_EPS or rel.max() > cfg.horizon + _EPS):
        raise EventOutOfHorizon(
            f"events must lie in [{cfg.origin}, {cfg.origin + cfg.horizon}]"
        )
    if types.size and (types.min() < 0 or types.max() >= d):
        raise ValueError(f"event types must lie in 0..{d - 1}")
    k = _bin_index(rel, delta, n)
    keep = k < n  # a partial bin after n*delta is dropped
    weight = np.where(cfg.price_change_mask()[types] | (not cfg.use_sizes), 1, sizes)
    counts = np.zeros((d, n))
    np.add.at(counts, (types[keep], k[keep]), weight[keep])

    starts = np.arange(n) * delta
    if path is not None:
        liq_state = path.at(cfg.origin + starts).T.copy()
    else:
        liq_state = _carry_forward(events, rel, types, starts, d, initial_state)
    spread = cfg.spread_mask()[:, None]
    liq_cat = bucketize_liquidity(
        liq_state, spread, cfg.n_liquidity, cfg.liquidity_unit, cfg.spread_unit
    )
    tc = np.clip(starts, 0, SESSION - 1e-6)
    time_cat = bucketize_time(tc)
    return BinData(counts, liq_state, liq_cat, time_cat, cfg)


def _carry_forward(events, rel, types, starts, d, initial_state):
    init = np.zeros(d) if initial_state is None else np.asarray(initial_state, float)
    if isinstance(events, tuple):
        # bare arrays carry no liquidity; hold the initial state throughout
        return np.repeat(init[:, None], starts.size, axis=1)
    liq = np.fromiter((e.liquidity_state for e in events), float, len(rel))
    out = np.empty((d, starts.size))
    for i in range(d):
        sel = types == i
        t_i, l_i = rel[sel], liq[sel]
        if not t_i.size:
            out[i] = init[i]
            continue
        idx = np.searchsorted(t_i, starts, side="right") - 1
        out[i] = np.where(idx >= 0, l_i[np.maximum(idx, 0)], init[i])
    return out


def save_bins(path, bins: BinData) -> None:
    header = {"version": ARCHIVE_VERSION, **asdict(bins.config)}
    np.savez_compressed(
        path,
        header=np.array(json.dumps(header, sort_keys=True)),
        counts=bins.counts,
        liq_state=bins.liq_state,
        liq_cat=bins.liq_cat + 1,
        time_cat=bins.time_cat + 1,
    )


def load_bins(path) -> BinData:
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        version = header.pop("version")
        if version != ARCHIVE_VERSION:
            raise ValueError(f"unsupported bin archive version {version}")
        cfg = BinConfig(**header)
        return BinData(z["counts"], z["liq_state"], z["liq_cat"] - 1, z["time_cat"] - 1, cfg)


def time_bucket_widths() -> np.ndarray:
    return np.diff(TIME_EDGES)
