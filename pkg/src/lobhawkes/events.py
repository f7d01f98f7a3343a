"""LOBSTER ingestion, replay through the book, and 6K+6 event classification.

Event types are 0-based integers in this package. Files and labels use the
1-based numbering ``X_1 .. X_d`` with the ordering

    -K(i), -K(c), -K(t), ..., -1(t), +1(i), ..., +K(t),
    p-(t), p-(c), p-(i), p+(t), p+(c), p+(i).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .book import (
    ASK,
    BID,
    Action,
    BookDelta,
    BookError,
    BookState,
    TickGrid,
    relative_level,
)

log = logging.getLogger(__name__)

OPEN_SECONDS = 34200.0
CLOSE_SECONDS = 57600.0

_ACTIONS = (Action.INSERT, Action.CANCEL, Action.TRADE)
_PRICE_CHANGE_LABELS = ("p-(t)", "p-(c)", "p-(i)", "p+(t)", "p+(c)", "p+(i)")
_PRICE_CHANGE_ACTIONS = {
    (-1, Action.TRADE): 0,
    (-1, Action.CANCEL): 1,
    (-1, Action.INSERT): 2,
    (+1, Action.TRADE): 3,
    (+1, Action.CANCEL): 4,
    (+1, Action.INSERT): 5,
}

# LOBSTER message types
SUBMIT, PARTIAL_CANCEL, DELETE, EXECUTE, HIDDEN_EXECUTE, CROSS, HALT = 1, 2, 3, 4, 5, 6, 7
_KIND_OF_TYPE = {
    SUBMIT: Action.INSERT,
    PARTIAL_CANCEL: Action.CANCEL,
    DELETE: Action.CANCEL,
    EXECUTE: Action.TRADE,
}

DUMMY_ASK = 9999999999
DUMMY_BID = -9999999999


class IngestError(ValueError):
    pass


class MalformedRow(IngestError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class NonMonotoneTime(IngestError):
    pass


# --------------------------------------------------------------------------
# event taxonomy


def n_types(k_levels: int) -> int:
    return 6 * k_levels + 6


def event_index(level: int, action: Action, k_levels: int) -> int:
    """Index of a non-price-change event at signed ``level`` with ``action``."""
    if level == 0 or abs(level) > k_levels:
        raise ValueError(f"level {level} outside 1..{k_levels}")
    a = _ACTIONS.index(Action(action))
    if level < 0:
        return 3 * (k_levels + level) + a
    return 3 * k_levels + 3 * (level - 1) + a


def price_change_index(direction: int, action: Action, k_levels: int) -> int:
    return 6 * k_levels + _PRICE_CHANGE_ACTIONS[(int(direction), Action(action))]


def is_price_change(index, k_levels: int):
    return np.asarray(index) >= 6 * k_levels


def event_level(index: int, k_levels: int) -> int:
    """Signed level of a non-price-change type (0 for price-change types)."""
    if index >= 6 * k_levels:
        return 0
    if index < 3 * k_levels:
        return index // 3 - k_levels
    return (index - 3 * k_levels) // 3 + 1


def event_action(index: int, k_levels: int) -> Action:
    if index >= 6 * k_levels:
        return {0: Action.TRADE, 1: Action.CANCEL, 2: Action.INSERT}[(index - 6 * k_levels) % 3]
    return _ACTIONS[index % 3]


def event_label(index: int, k_levels: int) -> str:
    if not 0 <= index < n_types(k_levels):
        raise ValueError(f"event index {index} outside 0..{n_types(k_levels) - 1}")
    if index >= 6 * k_levels:
        return _PRICE_CHANGE_LABELS[index - 6 * k_levels]
    level = event_level(index, k_levels)
    return f"{level:+d}({event_action(index, k_levels).value})"


def event_labels(k_levels: int) -> List[str]:
    return [event_label(i, k_levels) for i in range(n_types(k_levels))]


def parse_label(label: str, k_levels: int) -> int:
    try:
        return event_labels(k_levels).index(label)
    except ValueError:
        raise ValueError(f"unknown event label {label!r}") from None


def spread_types(k_levels: int) -> Tuple[int, int]:
    """Indices of p-(i) and p+(i), whose liquidity state is the spread."""
    return 6 * k_levels + 2, 6 * k_levels + 5


# --------------------------------------------------------------------------
# messages and classified events


class RawMessage(NamedTuple):
    time: float
    msg_type: int
    order_id: int
    size: int
    price: int  # feed units (dollars * 10000)
    direction: int  # +1 buy (bid side), -1 sell (ask side)

    @property
    def side(self) -> str:
        return BID if self.direction == 1 else ASK


class ClassifiedEvent(NamedTuple):
    time: float
    event_type: int
    size: int
    liquidity_state: float
    best_bid: int
    best_ask: int


@dataclass
class IngestConfig:
    k_levels: int = 3
    grid: TickGrid = field(default_factory=TickGrid)
    window: Tuple[float, float] = (OPEN_SECONDS, CLOSE_SECONDS)
    reconcile: bool = True


def message_delta(msg: RawMessage, grid: TickGrid) -> Optional[BookDelta]:
    """Book change implied by a visible message, or None for types 5/6/7."""
    kind = _KIND_OF_TYPE.get(msg.msg_type)
    if kind is None:
        return None
    return BookDelta(msg.side, grid.feed_to_ticks(msg.price), int(msg.size), kind)


def liquidity_vector(book: BookState, k_levels: int, out=None) -> np.ndarray:
    """Liquidity state l_i of every event type for the current book.

    Level types read the queue magnitude at their level, p-(t)/p-(c) the best
    bid queue, p+(t)/p+(c) the best ask queue, and p-(i)/p+(i) the spread in
    price units.
    """
    d = n_types(k_levels)
    if out is None:
        out = np.empty(d)
    bb, ba = book.best_bid, book.best_ask
    if book.ref2 is None:
        out[:] = 0.0
        return out
    half = book.ref2 // 2
    ceil_half = -((-book.ref2) // 2)
    for m in range(1, k_levels + 1):
        q_bid = book.bids.get(ceil_half - m, 0)
        q_ask = book.asks.get(half + m, 0)
        j = 3 * (k_levels - m)
        out[j:j + 3] = q_bid
        j = 3 * k_levels + 3 * (m - 1)
        out[j:j + 3] = q_ask
    base = 6 * k_levels
    out[base] = out[base + 1] = book.bids.get(bb, 0) if bb is not None else 0
    out[base + 3] = out[base + 4] = book.asks.get(ba, 0) if ba is not None else 0
    spread = (ba - bb) * book.grid.tick_size if bb is not None and ba is not None else 0.0
    out[base + 2] = out[base + 5] = spread
    return out


def classify(msg: RawMessage, book_before: BookState, book_after: BookState) -> Optional[ClassifiedEvent]:
    """Map one message to its event type, or None when it is not modeled.

    A reference-price move takes precedence: the direction of the move and
    the message's action pick one of the six price-change types (size 1).
    Otherwise the message is placed on its level relative to p_ref and
    dropped when deeper than K.
    """
    kind = _KIND_OF_TYPE.get(msg.msg_type)
    if kind is None or book_before.ref2 is None or book_after.ref2 is None:
        return None
    k = book_before.k_levels
    bb, ba = book_before.best_bid, book_before.best_ask
    if book_after.ref2 != book_before.ref2:
        direction = 1 if book_after.ref2 > book_before.ref2 else -1
        idx = price_change_index(direction, kind, k)
        if kind is Action.INSERT:
            liq = (ba - bb) * book_before.grid.tick_size
        elif direction > 0:
            liq = book_before.asks.get(ba, 0)
        else:
            liq = book_before.bids.get(bb, 0)
        return ClassifiedEvent(msg.time, idx, 1, float(liq), bb, ba)
    price = book_before.grid.feed_to_ticks(msg.price)
    try:
        level = relative_level(book_before, price, msg.side)
    except BookError:
        return None
    if abs(level) > k:
        return None
    liq = book_before.level_size(level)
    return ClassifiedEvent(msg.time, event_index(level, kind, k), int(msg.size), float(liq), bb, ba)


# --------------------------------------------------------------------------
# file parsing


def _to_number(text: str, cast, path, line):
    try:
        return cast(text)
    except ValueError:
        raise MalformedRow(path, line, f"cannot parse {text!r}") from None


def _int_field(text: str) -> int:
    # LOBSTER writes integers, but tolerate "100.0"
    try:
        return int(text)
    except ValueError:
        x = float(text)
        if x != int(x):
            raise
        return int(x)


def read_messages(path) -> List[RawMessage]:
    out: List[RawMessage] = []
    last = -math.inf
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 6:
                raise MalformedRow(path, line, f"expected 6 columns, got {len(row)}")
            t = _to_number(row[0], float, path, line)
            typ, oid, size, price, direction = (
                _to_number(x, _int_field, path, line) for x in row[1:]
            )
            if direction not in (1, -1):
                raise MalformedRow(path, line, f"direction must be +1 or -1, got {direction}")
            if t < last:
                raise NonMonotoneTime(f"{path}:{line}: time {t} precedes {last}")
            last = t
            out.append(RawMessage(t, typ, oid, size, price, direction))
    return out


def read_orderbook(path) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 4 or len(row) % 4:
                raise MalformedRow(path, line, f"orderbook rows need 4*L columns, got {len(row)}")
            if width is not None and len(row) != width:
                raise MalformedRow(path, line, f"expected {width} columns, got {len(row)}")
            width = len(row)
            rows.append([_to_number(x, _int_field, path, line) for x in row])
    if not rows:
        return np.zeros((0, 4), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def snapshot_levels(row, grid: TickGrid):
    """``(bids, asks)`` lists of ``(tick, size)`` from one orderbook row."""
    row = np.asarray(row)
    bids, asks = [], []
    for j in range(0, len(row), 4):
        ap, az, bp, bz = (int(x) for x in row[j:j + 4])
        if az > 0 and ap not in (DUMMY_ASK, DUMMY_BID):
            asks.append((grid.feed_to_ticks(ap), az))
        if bz > 0 and bp not in (DUMMY_ASK, DUMMY_BID):
            bids.append((grid.feed_to_ticks(bp), bz))
    return bids, asks


def _revert(book: BookState, delta: BookDelta) -> None:
    side = book.bids if delta.side == BID else book.asks
    if delta.kind is Action.INSERT:
        left = side.get(delta.price, 0) - delta.size
        if left < 0:
            raise BookError("cannot revert insertion not present in snapshot")
        if left:
            side[delta.price] = left
        else:
            side.pop(delta.price, None)
    else:
        side[delta.price] = side.get(delta.price, 0) + delta.size


def parse_lobster(message_path, orderbook_path, config: Optional[IngestConfig] = None):
    """Read a LOBSTER day.

    Returns ``(messages, snapshots, initial_book)``. The initial book is the
    first snapshot row with the first message undone, so every message can be
    classified. Messages outside the trading window are kept here; ``replay``
    applies them to the book without classifying them.
    """
    config = config or IngestConfig()
    messages = read_messages(message_path)
    snapshots = read_orderbook(orderbook_path)
    if len(messages) != len(snapshots):
        raise IngestError(
            f"{len(messages)} messages but {len(snapshots)} orderbook rows"
        )
    if not messages:
        return messages, snapshots, BookState(k_levels=config.k_levels, grid=config.grid)
    bids, asks = snapshot_levels(snapshots[0], config.grid)
    book = BookState(k_levels=config.k_levels, grid=config.grid)
    book.bids = dict(bids)
    book.asks = dict(asks)
    delta = message_delta(messages[0], config.grid)
    if delta is not None:
        try:
            _revert(book, delta)
        except BookError:
            log.warning("could not undo first message; seeding from the first row as-is")
    book._refresh_reference()
    return messages, snapshots, book


# --------------------------------------------------------------------------
# replay


@dataclass
class LiquidityPath:
    """Piecewise-constant liquidity state: ``values[k]`` holds on ``[times[k], times[k+1])``.

    ``times[0]`` is ``-inf`` and ``values[0]`` is the state before the first message.
    """

    times: np.ndarray
    values: np.ndarray

    def at(self, t) -> np.ndarray:
        """State after every message with time <= ``t``."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[idx]

    def before(self, t) -> np.ndarray:
        """State after every message with time < ``t`` (left limit)."""
        idx = np.searchsorted(self.times, t, side="left") - 1
        return self.values[idx]


@dataclass
class IngestResult:
    events: List[ClassifiedEvent]
    path: LiquidityPath
    k_levels: int
    report: dict


def _matches_snapshot(book: BookState, bids, asks, depth: int) -> bool:
    # a side listed with fewer than ``depth`` levels must hold exactly those
    for side, levels, resting in ((BID, bids, book.bids), (ASK, asks, book.asks)):
        if book.top_levels(side, len(levels)) != levels:
            return False
        if len(levels) < depth and len(resting) != len(levels):
            return False
    return True


def replay(messages: Sequence[RawMessage], snapshots, initial_book: BookState,
           config: Optional[IngestConfig] = None) -> IngestResult:
    """Replay messages through the book and classify each one.

    When snapshot rows are given, the top of the rebuilt book is compared with
    the row after every message and resynchronised from it on mismatch.
    """
    config = config or IngestConfig()
    k = config.k_levels
    d = n_types(k)
    lo, hi = config.window
    book = initial_book.copy()
    book.k_levels = k
    have_snapshots = snapshots is not None and len(snapshots) == len(messages)
    counts = Counter()
    events: List[ClassifiedEvent] = []
    times = np.empty(len(messages) + 1)
    values = np.empty((len(messages) + 1, d))
    times[0] = -math.inf
    liquidity_vector(book, k, values[0])
    for n, msg in enumerate(messages):
        before = book.copy()
        delta = message_delta(msg, config.grid)
        ok = True
        if delta is not None:
            try:
                book.apply(delta)
            except BookError:
                ok = False
        if have_snapshots and config.reconcile:
            bids, asks = snapshot_levels(snapshots[n], config.grid)
            if not ok or not _matches_snapshot(book, bids, asks, len(snapshots[n]) // 4):
                book = BookState.from_levels(bids, asks, k, config.grid, previous_ref2=before.ref2)
                counts["drift_resyncs"] += 1
        elif not ok:
            counts["rejected"] += 1
            book = before
        times[n + 1] = msg.time
        liquidity_vector(book, k, values[n + 1])
        if not lo <= msg.time <= hi:
            counts["outside_window"] += 1
            continue
        if delta is None:
            counts[f"skipped_type_{msg.msg_type}"] += 1
            continue
        ev = classify(msg, before, book)
        if ev is None:
            counts["skipped_deep_or_unplaced"] += 1
            continue
        events.append(ev)
    report = {
        "messages": len(messages),
        "classified": len(events),
        "skips": dict(sorted(counts.items())),
        "drift_resyncs": counts.get("drift_resyncs", 0),
        "k_levels": k,
    }
    return IngestResult(events, LiquidityPath(times, values), k, report)


def ingest(message_path, orderbook_path, config: Optional[IngestConfig] = None) -> IngestResult:
    config = config or IngestConfig()
    messages, snapshots, book = parse_lobster(message_path, orderbook_path, config)
    return replay(messages, snapshots, book, config)


# --------------------------------------------------------------------------
# summaries and files


def event_counts(events: Iterable[ClassifiedEvent], d: int):
    """Per-type event count and summed size, as two length-``d`` arrays."""
    count = np.zeros(d, dtype=np.int64)
    size = np.zeros(d, dtype=np.int64)
    for ev in events:
        count[ev.event_type] += 1
        size[ev.event_type] += ev.size
    return count, size


def write_events(path, events: Iterable[ClassifiedEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event_index", "size", "liquidity_state"])
        for ev in events:
            w.writerow([repr(float(ev.time)), ev.event_type + 1, ev.size, repr(float(ev.liquidity_state))])


def read_events(path) -> List[ClassifiedEvent]:
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["time", "event_index", "size", "liquidity_state"]:
            raise MalformedRow(path, 1, f"unexpected header {header}")
        for line, row in enumerate(r, start=2):
            if len(row) != 4:
                raise MalformedRow(path, line, f"expected 4 columns, got {len(row)}")
            out.append(ClassifiedEvent(float(row[0]), int(row[1]) - 1, int(row[2]), float(row[3]), 0, 0))
    return out


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_path(path, lp: LiquidityPath) -> None:
    np.savez_compressed(path, times=lp.times, values=lp.values)


def load_path(path) -> LiquidityPath:
    with np.load(path) as z:
        return LiquidityPath(z["times"], z["values"])
