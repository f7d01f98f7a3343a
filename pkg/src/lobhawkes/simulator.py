"""Thinning simulation of the Hawkes + liquidity + time intensity model.

Intensities are share rates: ``lambda_i(t)`` is the expected number of shares
of type i per second. Type i events therefore arrive at rate
``lambda_i / s_i`` where ``s_i`` is the mean drawn size of type i (1 for the
price-change types, whose bin counts are event counts). Each event of type j
with size z adds ``z * phi[i, j, r]`` to ``lambda_i`` while its age lies in
``[r delta, (r+1) delta)``.

In ``full`` mode a synthetic book is kept so that liquidity states evolve
with the events. A drawn type that the current book cannot realise (for
instance a trade at an empty level) is rejected as in thinning, so the
effective intensity of a type is zero while it is infeasible.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .binning import N_TIME, SESSION, TIME_EDGES, bucketize_liquidity, bucketize_time
from .book import ASK, BID, Action, BookState, TickGrid
from .events import (
    DELETE,
    DUMMY_ASK,
    DUMMY_BID,
    EXECUTE,
    OPEN_SECONDS,
    PARTIAL_CANCEL,
    SUBMIT,
    ClassifiedEvent,
    LiquidityPath,
    RawMessage,
    classify,
    event_action,
    event_index,
    event_level,
    liquidity_vector,
    message_delta,
    n_types,
    spread_types,
)

EXTRA_LEVELS = 2  # maintained levels beyond K on each side


class ExplosionGuard(RuntimeError):
    pass


class InvalidGroundTruth(ValueError):
    pass


def exp_kernel(amplitude, decay: float, delta: float, support: float) -> np.ndarray:
    """Bin averages of ``amplitude * exp(-decay t)`` over steps of width ``delta``.

    ``amplitude`` may be a scalar or a (d, d) array; returns (d, d, p).
    """
    p = int(math.floor(support / delta + 1e-9))
    edges = np.arange(p + 1) * delta
    steps = (np.exp(-decay * edges[:-1]) - np.exp(-decay * edges[1:])) / (decay * delta)
    a = np.atleast_2d(np.asarray(amplitude, dtype=float))
    return a[:, :, None] * steps[None, None, :]


@dataclass
class GroundTruth:
    """Generative parameters.

    ``kernels[i, j, r]`` is the step r value of the kernel of type j on type
    i, in share rate per exciting share. Pure mode uses ``baseline``; full
    mode uses ``liq_fn[i, c] + time_fn[i, t]``. Drawn sizes of additive types
    are ``lot[i] * U{1..lots[i]}``.
    """

    kernels: np.ndarray
    delta: float
    baseline: Optional[np.ndarray] = None
    liq_fn: Optional[np.ndarray] = None
    time_fn: Optional[np.ndarray] = None
    k_levels: Optional[int] = None
    lot: Optional[np.ndarray] = None
    lots: Optional[np.ndarray] = None
    depth: int = 500
    start_price: int = 10000  # ticks
    grid: TickGrid = field(default_factory=TickGrid)
    liquidity_unit: float = 100.0
    spread_unit: float = 0.01
    n_liquidity: int = 10

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=float)
        if self.kernels.ndim != 3 or self.kernels.shape[0] != self.kernels.shape[1]:
            raise InvalidGroundTruth("kernels must have shape (d, d, p)")
        d = self.d
        if np.any(self.kernels < 0):
            raise InvalidGroundTruth("kernels must be non-negative")
        rho = self.spectral_radius
        if not rho < 1:
            raise InvalidGroundTruth(f"branching matrix spectral radius {rho:.4f} >= 1")
        if self.baseline is not None:
            self.baseline = np.broadcast_to(np.asarray(self.baseline, dtype=float), (d,)).copy()
            if np.any(self.baseline < 0):
                raise InvalidGroundTruth("baseline must be non-negative")
        if self.liq_fn is not None or self.time_fn is not None:
            self.liq_fn = np.broadcast_to(np.asarray(
                0.0 if self.liq_fn is None else self.liq_fn, dtype=float), (d, self.n_liquidity)).copy()
            self.time_fn = np.broadcast_to(np.asarray(
                0.0 if self.time_fn is None else self.time_fn, dtype=float), (d, N_TIME)).copy()
            low = self.liq_fn.min(axis=1) + self.time_fn.min(axis=1)
            if np.any(low < -1e-12):
                raise InvalidGroundTruth("liq_fn + time_fn must be non-negative")
        if self.k_levels is not None and d != n_types(self.k_levels):
            raise InvalidGroundTruth(f"d={d} does not match K={self.k_levels}")
        self.lot = np.broadcast_to(np.asarray(100 if self.lot is None else self.lot, dtype=np.int64), (d,)).copy()
        self.lots = np.broadcast_to(np.asarray(1 if self.lots is None else self.lots, dtype=np.int64), (d,)).copy()
        if np.any(self.lot < 1) or np.any(self.lots < 1):
            raise InvalidGroundTruth("sizes must be positive")

    @property
    def d(self) -> int:
        return self.kernels.shape[0]

    @property
    def p(self) -> int:
        return self.kernels.shape[2]

    @property
    def support(self) -> float:
        return self.p * self.delta

    @property
    def branching(self) -> np.ndarray:
        return self.kernels.sum(axis=2) * self.delta

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.branching))))

    def price_change_mask(self) -> np.ndarray:
        mask = np.zeros(self.d, dtype=bool)
        if self.k_levels is not None:
            mask[6 * self.k_levels:] = True
        return mask

    def mean_size(self, mode: str) -> np.ndarray:
        if mode == "pure":
            return np.ones(self.d)
        s = self.lot * (1 + self.lots) / 2.0
        return np.where(self.price_change_mask(), 1.0, s)


@dataclass
class SimConfig:
    horizon: float
    seed: int = 0
    mode: str = "full"  # or "pure"
    origin: float = OPEN_SECONDS
    max_rate: float = 1e6
    record_intensity: bool = False
    max_events: Optional[int] = None  # stop early once this many events are accepted

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.mode not in ("full", "pure"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class SimResult:
    events: List[ClassifiedEvent]
    messages: List[RawMessage]
    snapshots: np.ndarray  # (n_messages, 4 * levels)
    initial_book: Optional[BookState]
    path: Optional[LiquidityPath]
    truth: GroundTruth
    config: SimConfig
    proposals: Optional[Tuple[np.ndarray, np.ndarray]] = None  # times, (n, d) event rates
    stats: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    @property
    def types(self) -> np.ndarray:
        return np.array([e.event_type for e in self.events], dtype=np.int64)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([e.size for e in self.events], dtype=np.int64)


# --------------------------------------------------------------------------
# synthetic book


def initial_book(truth: GroundTruth) -> BookState:
    """One-tick spread with levels 1..K+2 filled on both sides."""
    k = truth.k_levels
    n = k + EXTRA_LEVELS
    bb = truth.start_price
    bids = [(bb - m, truth.depth) for m in range(n)]
    asks = [(bb + 1 + m, truth.depth) for m in range(n)]
    return BookState.from_levels(bids, asks, k, truth.grid)


class _Book:
    """The synthetic book plus the message log it produces."""

    def __init__(self, truth: GroundTruth, origin: float):
        self.truth = truth
        self.k = truth.k_levels
        self.grid = truth.grid
        self.book = initial_book(truth)
        self.levels = self.k + EXTRA_LEVELS + 2
        self.messages: List[RawMessage] = []
        self.rows: List[List[int]] = []
        self.order_id = 0
        self.origin = origin

    def _msg(self, t, msg_type, side, price, size) -> RawMessage:
        self.order_id += 1
        return RawMessage(self.origin + t, msg_type, self.order_id, int(size),
                          self.grid.ticks_to_feed(price), 1 if side == BID else -1)

    def _post(self, msg: RawMessage) -> None:
        self.book.apply(message_delta(msg, self.grid))
        self.messages.append(msg)
        self.rows.append(self.snapshot())

    def snapshot(self) -> List[int]:
        row = []
        asks = self.book.top_levels(ASK, self.levels)
        bids = self.book.top_levels(BID, self.levels)
        for m in range(self.levels):
            ap, az = (self.grid.ticks_to_feed(asks[m][0]), asks[m][1]) if m < len(asks) else (DUMMY_ASK, 0)
            bp, bz = (self.grid.ticks_to_feed(bids[m][0]), bids[m][1]) if m < len(bids) else (DUMMY_BID, 0)
            row += [ap, az, bp, bz]
        return row

    def _candidates(self, t, i, z):
        book, k = self.book, self.k
        level = event_level(i, k)
        act = event_action(i, k)
        if level != 0:
            side = ASK if level > 0 else BID
            price = book.level_price(level)
            if act is Action.INSERT:
                return [self._msg(t, SUBMIT, side, price, z)]
            q = book.level_size(level)
            if q == 0:
                return []
            best = book.best_ask if side == ASK else book.best_bid
            if act is Action.TRADE and price != best:
                return []
            size = min(z, q)
            sizes = [size] + ([q - 1] if size == q and q > 1 else [])
            out = []
            for s in sizes:
                typ = EXECUTE if act is Action.TRADE else (DELETE if s == q else PARTIAL_CANCEL)
                out.append(self._msg(t, typ, side, price, s))
            return out
        up = i - 6 * k >= 3
        bb, ba = book.best_bid, book.best_ask
        if act is Action.INSERT:
            if up:
                return [self._msg(t, SUBMIT, BID, x, z) for x in range(bb + 1, ba)]
            return [self._msg(t, SUBMIT, ASK, x, z) for x in range(ba - 1, bb, -1)]
        side, price = (ASK, ba) if up else (BID, bb)
        q = (book.asks if up else book.bids)[price]
        typ = EXECUTE if act is Action.TRADE else DELETE
        return [self._msg(t, typ, side, price, q)]

    def realize(self, t, i, z) -> Optional[ClassifiedEvent]:
        """Post a message realising type ``i`` if the book allows it."""
        for msg in self._candidates(t, i, z):
            after = self.book.copy()
            after.apply(message_delta(msg, self.grid))
            ev = classify(msg, self.book, after)
            if ev is not None and ev.event_type == i:
                self.messages.append(msg)
                self.book = after
                self.rows.append(self.snapshot())
                self._maintain(t)
                return ev
        return None

    def _maintain(self, t) -> None:
        # keep levels K+1..K+2 stocked and drop levels far from p_ref; neither
        # touches the best quotes, so p_ref and levels 1..K are unaffected
        book, k = self.book, self.k
        for side in (BID, ASK):
            sign = 1 if side == ASK else -1
            best = book.best_ask if side == ASK else book.best_bid
            resting = book.asks if side == ASK else book.bids
            for m in range(k + 1, k + EXTRA_LEVELS + 1):
                price = book.level_price(sign * m)
                beyond = price > best if side == ASK else price < best
                if beyond and price not in resting:
                    self._post(self._msg(t, SUBMIT, side, price, self.truth.depth))
            limit = book.level_price(sign * (k + EXTRA_LEVELS + 2))
            for price in sorted(resting):
                far = price > limit if side == ASK else price < limit
                if far and price != best:
                    self._post(self._msg(t, DELETE, side, price, resting[price]))


# --------------------------------------------------------------------------
# simulation


def _suffix_bound(truth: GroundTruth, mean_size: np.ndarray) -> np.ndarray:
    """``B[j, r] = sum_i max_{r' >= r} phi[i, j, r'] / s_i``."""
    sfx = np.maximum.accumulate(truth.kernels[:, :, ::-1], axis=2)[:, :, ::-1]
    return np.einsum("ijr,i->jr", sfx, 1.0 / mean_size)


def simulate(truth: GroundTruth, cfg: SimConfig) -> SimResult:
    """Draw one realisation by Ogata thinning."""
    rng = np.random.default_rng(cfg.seed)
    full = cfg.mode == "full"
    d, delta = truth.d, truth.delta
    support = truth.support
    if full:
        if truth.k_levels is None or truth.liq_fn is None:
            raise InvalidGroundTruth("full mode needs k_levels, liq_fn and time_fn")
        if cfg.horizon > SESSION:
            raise ValueError("full mode covers at most one trading session")
    elif truth.baseline is None:
        raise InvalidGroundTruth("pure mode needs a baseline")

    sbar = truth.mean_size(cfg.mode)
    inv_s = 1.0 / sbar
    bound_j = _suffix_bound(truth, sbar)
    kern = truth.kernels
    if full:
        base_bound = float(np.sum((truth.liq_fn.max(axis=1) + truth.time_fn.max(axis=1)) * inv_s))
        sim_book = _Book(truth, cfg.origin)
        spread = np.zeros(d, dtype=bool)
        spread[list(spread_types(truth.k_levels))] = True
        liq = liquidity_vector(sim_book.book, truth.k_levels)
        liq_cat = bucketize_liquidity(liq, spread, truth.n_liquidity, truth.liquidity_unit, truth.spread_unit)
        path_t = [-math.inf]
        path_v = [liq.copy()]
        init = sim_book.book.copy()
    else:
        base_bound = float(np.sum(truth.baseline * inv_s))
        sim_book = None
        init = None
    rows_i = np.arange(d)

    cap = 1024
    h_t = np.empty(cap)
    h_j = np.empty(cap, dtype=np.int64)
    h_z = np.empty(cap)
    n_hist = 0
    w = 0
    events: List[ClassifiedEvent] = []
    prop_t, prop_v = [], []
    n_prop = n_thin = n_infeasible = 0
    t = 0.0
    while True:
        now = cfg.origin + t
        while w < n_hist and now - h_t[w] >= support:
            w += 1
        if n_hist - w:
            r = ((now - h_t[w:n_hist]) / delta).astype(np.int64)
            excite_bound = float(bound_j[h_j[w:n_hist], r] @ h_z[w:n_hist])
        else:
            excite_bound = 0.0
        lam_bar = base_bound + excite_bound
        if lam_bar > cfg.max_rate:
            raise ExplosionGuard(f"dominating rate {lam_bar:.3g}/s exceeds cap {cfg.max_rate:.3g}")
        if lam_bar <= 0:
            break
        t += rng.exponential(1.0 / lam_bar)
        if t >= cfg.horizon:
            break
        n_prop += 1
        # ages use absolute stamps, exactly as recorded on the events
        now = cfg.origin + t
        while w < n_hist and now - h_t[w] >= support:
            w += 1
        if full:
            tc = bucketize_time(t)
            base = truth.liq_fn[rows_i, liq_cat] + truth.time_fn[:, tc]
        else:
            base = truth.baseline
        if n_hist - w:
            r = ((now - h_t[w:n_hist]) / delta).astype(np.int64)
            excite = kern[:, h_j[w:n_hist], r] @ h_z[w:n_hist]
            rate = (base + excite) * inv_s
        else:
            rate = base * inv_s
        if cfg.record_intensity:
            prop_t.append(t)
            prop_v.append(rate.copy())
        u = rng.uniform() * lam_bar
        cum = np.cumsum(rate)
        if u >= cum[-1]:
            n_thin += 1
            continue
        i = int(np.searchsorted(cum, u, side="right"))
        if full:
            z = int(truth.lot[i] * rng.integers(1, truth.lots[i] + 1))
            ev = sim_book.realize(t, i, z)
            if ev is None:
                n_infeasible += 1
                continue
            liquidity_vector(sim_book.book, truth.k_levels, liq)
            liq_cat = bucketize_liquidity(liq, spread, truth.n_liquidity,
                                          truth.liquidity_unit, truth.spread_unit)
            for _ in range(len(sim_book.messages) - len(path_t) + 1):
                path_t.append(cfg.origin + t)
                path_v.append(liq.copy())
            size = ev.size
        else:
            size = 1
            ev = ClassifiedEvent(cfg.origin + t, i, 1, 0.0, 0, 0)
        events.append(ev)
        if n_hist == cap:
            keep = n_hist - w
            if keep > cap // 2:
                cap *= 2
                h_t = np.resize(h_t, cap)
                h_j = np.resize(h_j, cap)
                h_z = np.resize(h_z, cap)
            h_t[:keep] = h_t[w:n_hist]
            h_j[:keep] = h_j[w:n_hist]
            h_z[:keep] = h_z[w:n_hist]
            n_hist, w = keep, 0
        h_t[n_hist] = ev.time
        h_j[n_hist] = i
        h_z[n_hist] = size
        n_hist += 1
        if cfg.max_events is not None and len(events) >= cfg.max_events:
            break

    stats = {"proposals": n_prop, "thinned": n_thin, "infeasible": n_infeasible, "accepted": len(events)}
    proposals = (np.array(prop_t), np.array(prop_v).reshape(-1, d)) if cfg.record_intensity else None
    if full:
        snaps = np.array(sim_book.rows, dtype=np.int64).reshape(-1, 4 * sim_book.levels)
        path = LiquidityPath(np.array(path_t), np.array(path_v))
        return SimResult(events, sim_book.messages, snaps, init, path, truth, cfg, proposals, stats)
    return SimResult(events, [], np.zeros((0, 4), dtype=np.int64), None, None, truth, cfg, proposals, stats)


def event_rates_at(result: SimResult, t: float) -> np.ndarray:
    """Per-type event rates at relative time ``t``, recomputed from the history.

    A direct re-evaluation used to check the simulator: it walks every
    earlier event and reads the liquidity state just before ``t``.
    """
    truth, cfg = result.truth, result.config
    d = truth.d
    sbar = truth.mean_size(cfg.mode)
    lam = np.zeros(d)
    if cfg.mode == "full":
        state = result.path.before(cfg.origin + t)
        spread = np.zeros(d, dtype=bool)
        spread[list(spread_types(truth.k_levels))] = True
        tc = int(np.searchsorted(TIME_EDGES, t, side="right") - 1)
        for i in range(d):
            unit = truth.spread_unit if spread[i] else truth.liquidity_unit
            c = min(int(math.floor(state[i] / unit + 1e-9)), truth.n_liquidity - 1)
            lam[i] = truth.liq_fn[i, c] + truth.time_fn[i, tc]
    else:
        lam[:] = truth.baseline
    now = cfg.origin + t
    for ev in result.events:
        age = now - ev.time
        if age <= 0:
            break
        r = int(age // truth.delta)
        if r >= truth.p:
            continue
        for i in range(d):
            lam[i] += ev.size * truth.kernels[i, ev.event_type, r]
    return lam / sbar




# --------------------------------------------------------------------------
# files


def lobster_names(levels: int, ticker: str = "SIM", date: str = "2000-01-03") -> Tuple[str, str]:
    stem = f"{ticker}_{date}_34200000_57600000"
    return f"{stem}_message_{levels}.csv", f"{stem}_orderbook_{levels}.csv"


def export_lobster(result: SimResult, directory, ticker: str = "SIM", date: str = "2000-01-03") -> Tuple[str, str]:
    """Write message and orderbook files for a full-mode simulation."""
    if result.config.mode != "full":
        raise ValueError("only full-mode simulations have a book to export")
    os.makedirs(directory, exist_ok=True)
    levels = result.snapshots.shape[1] // 4 if len(result.snapshots) else result.truth.k_levels + EXTRA_LEVELS + 2
    mname, oname = lobster_names(levels, ticker, date)
    mpath, opath = os.path.join(directory, mname), os.path.join(directory, oname)
    with open(mpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for m in result.messages:
            w.writerow([repr(float(m.time)), m.msg_type, m.order_id, m.size, m.price, m.direction])
    with open(opath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in result.snapshots:
            w.writerow([int(x) for x in row])
    return mpath, opath


def _array(value, shape):
    if value is None:
        return None
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def truth_from_dict(cfg: dict) -> GroundTruth:
    """Build a GroundTruth from a JSON-style dict.

    Kernels are given either in full (``kernels``: d x d x p nested lists) or
    as ``exp_kernel``: ``{"amplitude": scalar or d x d, "decay": b}`` together
    with ``support``. ``d`` follows from ``k_levels`` when that is given.
    """
    k = cfg.get("k_levels")
    delta = float(cfg["delta"])
    if "kernels" in cfg:
        kernels = np.asarray(cfg["kernels"], dtype=float)
    else:
        d = n_types(k) if k is not None else int(cfg["d"])
        kern = cfg["exp_kernel"]
        amp = np.broadcast_to(np.asarray(kern["amplitude"], dtype=float), (d, d))
        kernels = exp_kernel(amp, float(kern.get("decay", 1.0)), delta, float(cfg["support"]))
    d = kernels.shape[0]
    kw = {}
    for key in ("depth", "start_price", "liquidity_unit", "spread_unit"):
        if key in cfg:
            kw[key] = cfg[key]
    return GroundTruth(
        kernels=kernels,
        delta=delta,
        baseline=_array(cfg.get("baseline"), (d,)),
        liq_fn=_array(cfg.get("liq_fn"), (d, 10)),
        time_fn=_array(cfg.get("time_fn"), (d, N_TIME)),
        k_levels=k,
        lot=cfg.get("lot"),
        lots=cfg.get("lots"),
        grid=TickGrid(cfg.get("tick_size", 0.01), cfg.get("price_scale", 10000)),
        **kw,
    )


def load_truth(path) -> GroundTruth:
    with open(path) as fh:
        return truth_from_dict(json.load(fh))


def book_truth(k_levels: int = 1, delta: float = 0.25, support: float = 5.0, scale: float = 1.0,
               depth: int = 500, lots: int = 3) -> GroundTruth:
    """A state-dependent book model with sparse exponential kernels.

    Insertions get rarer as their queue grows, cancellations more common;
    activity is U-shaped over the day. Each type excites itself, the
    opposite-action type at its level is excited by trades, and price
    changes excite insertions at the best levels. ``scale`` multiplies the
    baseline rates.
    """
    k = k_levels
    d = n_types(k)
    cats = np.arange(10)
    liq = np.zeros((d, 10))
    for i in range(6 * k):
        level = abs(event_level(i, k))
        act = event_action(i, k)
        base = 80.0 / level
        if act is Action.INSERT:
            liq[i] = base * (2.0 - cats / 6.0)
        elif act is Action.CANCEL:
            liq[i] = base * (0.3 + cats / 6.0)
        else:
            liq[i] = base * 0.6 * (cats > 0)
    # price-change types are counted in events
    pc = 6 * k
    liq[pc:pc + 6] = 0.02
    liq[[pc + 2, pc + 5]] = 0.2 * (cats[None, :] >= 2)
    mid = (np.arange(N_TIME) - (N_TIME - 1) / 2) / ((N_TIME - 1) / 2)
    shape = 0.6 * mid ** 2 - 0.2  # U-shaped, mean near zero
    time = np.outer(liq.min(axis=1) + 0.3 * liq.mean(axis=1), shape)
    time = np.maximum(time, -liq.min(axis=1)[:, None])
    amp = np.zeros((d, d))
    mean = lots * 100 * (1 + lots) / 2 / lots  # mean size in shares
    for i in range(6 * k):
        amp[i, i] = 0.35
        act = event_action(i, k)
        if act is Action.TRADE:
            # trades excite insertions and cancellations at the same level
            amp[i - 2, i] = 0.2
            amp[i - 1, i] = 0.1
    for j in range(pc, pc + 6):
        amp[j, j] = 0.3
        # a move excites insertions at the best levels, in shares per event
        for i in (event_index(1, Action.INSERT, k), event_index(-1, Action.INSERT, k)):
            amp[i, j] = 0.15 * mean
    amp[pc:pc + 6, :6 * k] = 0.0
    decay = 1.5
    kernels = exp_kernel(amp * decay, decay, delta, support)
    return GroundTruth(kernels=kernels, delta=delta, liq_fn=liq * scale, time_fn=time * scale,
                       k_levels=k, lots=lots, depth=depth)

