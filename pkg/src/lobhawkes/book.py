"""Level-K limit order book with a Huang-style reference price.

Prices are held as integer tick counts. The reference price is held in
half-tick units (``ref2 = 2 * p_ref / tick``) so the mid-price case is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

BID = "bid"
ASK = "ask"


class BookError(ValueError):
    pass


class OversizedReduction(BookError):
    pass


class OffGridPrice(BookError):
    pass


class EmptySide(BookError):
    pass


class PriceAtReference(BookError):
    pass


class CrossedBook(BookError):
    pass


class Action(str, Enum):
    INSERT = "i"
    CANCEL = "c"
    TRADE = "t"


@dataclass(frozen=True)
class TickGrid:
    """Tick size in dollars and the integer price scale of the feed."""

    tick_size: float = 0.01
    price_scale: int = 10000

    def __post_init__(self):
        if not self.tick_size > 0:
            raise ValueError("tick_size must be positive")
        units = self.tick_size * self.price_scale
        if abs(units - round(units)) > 1e-9 or round(units) < 1:
            raise ValueError("tick_size must be a whole number of feed price units")

    @property
    def units_per_tick(self) -> int:
        return int(round(self.tick_size * self.price_scale))

    def feed_to_ticks(self, price: int) -> int:
        q, r = divmod(int(price), self.units_per_tick)
        if r:
            raise OffGridPrice(f"price {price} is not a multiple of {self.units_per_tick}")
        return q

    def ticks_to_feed(self, ticks: int) -> int:
        return int(ticks) * self.units_per_tick

    def price_to_ticks(self, price: float) -> int:
        x = price / self.tick_size
        n = round(x)
        if abs(x - n) > 1e-6:
            raise OffGridPrice(f"price {price} is not on the {self.tick_size} grid")
        return int(n)

    def ticks_to_price(self, ticks: float) -> float:
        return ticks * self.tick_size

    def half_ticks_to_price(self, ref2: int) -> float:
        return ref2 * self.tick_size / 2

    def price_to_half_ticks(self, price: float) -> int:
        x = 2 * price / self.tick_size
        n = round(x)
        if abs(x - n) > 1e-6:
            raise OffGridPrice(f"price {price} is not on the half-tick grid")
        return int(n)


@dataclass(frozen=True)
class BookDelta:
    side: str
    price: int  # ticks
    size: int  # shares, > 0
    kind: Action

    def __post_init__(self):
        if self.side not in (BID, ASK):
            raise ValueError(f"unknown side {self.side!r}")
        if self.size <= 0:
            raise ValueError("delta size must be positive")


def reference_half_ticks(best_bid: int, best_ask: int, previous: Optional[int] = None) -> int:
    """Reference price in half ticks for the given best quotes.

    Odd spreads give the mid. Even spreads give mid +/- half a tick, whichever
    is closer to ``previous``; ties and a missing ``previous`` take the lower one.
    """
    if best_ask <= best_bid:
        raise CrossedBook(f"best bid {best_bid} >= best ask {best_ask}")
    mid2 = best_bid + best_ask
    if (best_ask - best_bid) % 2 == 1:
        return mid2
    lo, hi = mid2 - 1, mid2 + 1
    if previous is None:
        return lo
    return hi if abs(hi - previous) < abs(lo - previous) else lo


@dataclass
class BookState:
    """Resting liquidity per side, keyed by tick, with sizes as magnitudes.

    ``queues`` gives the signed view (bids negative).
    """

    k_levels: int = 3
    grid: TickGrid = field(default_factory=TickGrid)
    bids: Dict[int, int] = field(default_factory=dict)
    asks: Dict[int, int] = field(default_factory=dict)
    ref2: Optional[int] = None

    @classmethod
    def from_levels(cls, bids, asks, k_levels=3, grid=None, previous_ref2=None) -> "BookState":
        """Build a book from ``(tick, size)`` pairs and set its reference price."""
        book = cls(k_levels=k_levels, grid=grid or TickGrid())
        book.bids = {int(p): int(q) for p, q in bids if q > 0}
        book.asks = {int(p): int(q) for p, q in asks if q > 0}
        book.ref2 = previous_ref2
        book._refresh_reference()
        return book

    def copy(self) -> "BookState":
        return BookState(self.k_levels, self.grid, dict(self.bids), dict(self.asks), self.ref2)

    @property
    def best_bid(self) -> Optional[int]:
        return max(self.bids) if self.bids else None

    @property
    def best_ask(self) -> Optional[int]:
        return min(self.asks) if self.asks else None

    @property
    def spread_ticks(self) -> int:
        bb, ba = self.best_bid, self.best_ask
        if bb is None or ba is None:
            raise EmptySide("book has an empty side")
        return ba - bb

    @property
    def ref_price(self) -> Optional[float]:
        return None if self.ref2 is None else self.grid.half_ticks_to_price(self.ref2)

    @property
    def queues(self) -> Dict[int, int]:
        out = {p: -q for p, q in self.bids.items()}
        out.update(self.asks)
        return out

    def level_price(self, level: int) -> int:
        """Tick of Q_level relative to the current reference price."""
        if self.ref2 is None:
            raise EmptySide("reference price undefined")
        if level > 0:
            return self.ref2 // 2 + level
        if level < 0:
            return -((-self.ref2) // 2) + level
        raise ValueError("level 0 does not exist")

    def level_size(self, level: int) -> int:
        """Unsigned size at relative level ``level`` (0 if empty)."""
        p = self.level_price(level)
        return (self.asks if level > 0 else self.bids).get(p, 0)

    def apply(self, delta: BookDelta) -> None:
        """Apply ``delta`` in place and recompute the reference price."""
        book = self.bids if delta.side == BID else self.asks
        if delta.kind is Action.INSERT:
            book[delta.price] = book.get(delta.price, 0) + delta.size
        else:
            resting = book.get(delta.price, 0)
            if delta.size > resting:
                raise OversizedReduction(
                    f"{delta.kind.name.lower()} of {delta.size} exceeds {resting} resting at {delta.price}"
                )
            if delta.size == resting:
                del book[delta.price]
            else:
                book[delta.price] = resting - delta.size
        self._refresh_reference()

    def _refresh_reference(self) -> None:
        if self.bids and self.asks:
            self.ref2 = reference_half_ticks(self.best_bid, self.best_ask, self.ref2)

    def top_levels(self, side: str, n: int):
        """The ``n`` best non-empty ``(tick, size)`` pairs on ``side``."""
        if side == BID:
            keys = sorted(self.bids, reverse=True)[:n]
            return [(p, self.bids[p]) for p in keys]
        keys = sorted(self.asks)[:n]
        return [(p, self.asks[p]) for p in keys]


def apply_delta(state: BookState, delta: BookDelta) -> BookState:
    new = state.copy()
    new.apply(delta)
    return new


def update_reference_price(state: BookState, previous_ref2: Optional[int]) -> int:
    """Reference price (half ticks) for ``state`` given the previous one."""
    if state.best_bid is None or state.best_ask is None:
        raise EmptySide("need at least one bid and one ask")
    return reference_half_ticks(state.best_bid, state.best_ask, previous_ref2)


def relative_level(state: BookState, price: int, side: str) -> int:
    """Signed level index of ``price`` (ticks): +i for the i-th tick above p_ref."""
    if state.ref2 is None:
        raise EmptySide("reference price undefined")
    twice = 2 * price
    if twice == state.ref2:
        raise PriceAtReference(f"price {price} sits on the reference price")
    if side == ASK:
        if twice < state.ref2:
            raise CrossedBook(f"ask at {price} below the reference price")
        return price - state.ref2 // 2
    if twice > state.ref2:
        raise CrossedBook(f"bid at {price} above the reference price")
    return price - (-((-state.ref2) // 2))
