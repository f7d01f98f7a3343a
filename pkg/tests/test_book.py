from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from lobhawkes.book import (
    ASK,
    BID,
    Action,
    BookDelta,
    BookState,
    CrossedBook,
    EmptySide,
    OffGridPrice,
    OversizedReduction,
    PriceAtReference,
    TickGrid,
    apply_delta,
    reference_half_ticks,
    relative_level,
    update_reference_price,
)


def book(bids, asks, prev=None):
    return BookState.from_levels(bids, asks, k_levels=3, previous_ref2=prev)


class TestReferencePrice:
    def test_odd_spread_is_mid(self):
        assert reference_half_ticks(100, 101) == 201
        assert reference_half_ticks(100, 103) == 203

    def test_even_spread_without_history_takes_lower(self):
        # bid 1.00, ask 1.02: candidates 1.005 and 1.015
        assert reference_half_ticks(100, 102) == 201

    def test_even_spread_follows_previous(self):
        assert reference_half_ticks(100, 102, previous=203) == 203
        assert reference_half_ticks(100, 102, previous=199) == 201

    def test_even_spread_tie_takes_lower(self):
        # previous exactly at the mid, both candidates equally close
        assert reference_half_ticks(100, 102, previous=202) == 201

    def test_crossed(self):
        with pytest.raises(CrossedBook):
            reference_half_ticks(101, 101)

    @given(st.integers(1, 10_000), st.integers(1, 40), st.one_of(st.none(), st.integers(0, 30_000)))
    def test_always_on_half_tick_inside_spread(self, bid, spread, prev):
        ref2 = reference_half_ticks(bid, bid + spread, prev)
        assert ref2 % 2 == 1
        assert 2 * bid < ref2 < 2 * (bid + spread)
        assert abs(ref2 - (2 * bid + spread)) <= 1


class TestBookState:
    def test_levels_relative_to_reference(self):
        b = book([(100, 5), (99, 7)], [(101, 3), (103, 4)])
        assert b.ref2 == 201
        assert b.level_price(1) == 101 and b.level_price(-1) == 100
        assert b.level_size(3) == 4 and b.level_size(2) == 0 and b.level_size(-2) == 7
        assert b.queues == {100: -5, 99: -7, 101: 3, 103: 4}

    def test_depleting_one_tick_best_keeps_reference(self):
        b = book([(100, 5)], [(101, 3), (102, 4)])
        b.apply(BookDelta(ASK, 101, 3, Action.CANCEL))
        assert b.best_ask == 102 and b.ref2 == 201

    def test_depletion_at_two_tick_spread_moves_reference(self):
        b = book([(100, 5)], [(102, 3), (103, 4)])
        b.apply(BookDelta(ASK, 102, 3, Action.TRADE))
        assert b.ref2 == 203

    def test_oversized(self):
        b = book([(100, 5)], [(101, 3)])
        with pytest.raises(OversizedReduction):
            b.apply(BookDelta(BID, 100, 6, Action.CANCEL))
        with pytest.raises(OversizedReduction):
            b.apply(BookDelta(BID, 98, 1, Action.TRADE))

    def test_apply_delta_does_not_mutate(self):
        b = book([(100, 5)], [(101, 3)])
        b2 = apply_delta(b, BookDelta(BID, 100, 2, Action.INSERT))
        assert b.bids[100] == 5 and b2.bids[100] == 7

    def test_relative_level(self):
        b = book([(100, 5)], [(101, 3)])
        assert relative_level(b, 101, ASK) == 1
        assert relative_level(b, 104, ASK) == 4
        assert relative_level(b, 100, BID) == -1
        assert relative_level(b, 97, BID) == -4
        with pytest.raises(CrossedBook):
            relative_level(b, 100, ASK)

    def test_price_at_reference(self):
        b = BookState(ref2=200)
        with pytest.raises(PriceAtReference):
            relative_level(b, 100, ASK)

    def test_empty_side(self):
        with pytest.raises(EmptySide):
            update_reference_price(BookState(), None)
        with pytest.raises(EmptySide):
            BookState().spread_ticks

    def test_top_levels(self):
        b = book([(100, 5), (98, 1), (99, 2)], [(101, 3), (105, 9)])
        assert b.top_levels(BID, 2) == [(100, 5), (99, 2)]
        assert b.top_levels(ASK, 5) == [(101, 3), (105, 9)]


class TestTickGrid:
    def test_conversions(self):
        g = TickGrid()
        assert g.units_per_tick == 100
        assert g.feed_to_ticks(1_000_000) == 10_000
        assert g.ticks_to_feed(10_000) == 1_000_000
        assert g.half_ticks_to_price(201) == pytest.approx(1.005)

    def test_off_grid(self):
        with pytest.raises(OffGridPrice):
            TickGrid().feed_to_ticks(1_000_050)
        with pytest.raises(OffGridPrice):
            TickGrid().price_to_ticks(1.005)

    @given(st.integers(-10**6, 10**6))
    def test_half_tick_round_trip(self, n):
        g = TickGrid()
        assert g.price_to_half_ticks(g.half_ticks_to_price(n)) == n


@pytest.mark.parametrize("spread", range(1, 7))
def test_reference_rule_exhaustive(spread):
    """Every spread of 1..6 ticks against every nearby previous reference."""
    bid = 1000
    ask = bid + spread
    mid = Fraction(bid + ask, 2)
    for prev2 in range(2 * bid - 8, 2 * ask + 9):
        got = Fraction(reference_half_ticks(bid, ask, prev2), 2)
        if spread % 2:
            assert got == mid
        else:
            lo, hi = mid - Fraction(1, 2), mid + Fraction(1, 2)
            prev = Fraction(prev2, 2)
            want = hi if abs(hi - prev) < abs(lo - prev) else lo
            assert got == want
