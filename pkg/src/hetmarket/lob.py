"""Price-time-priority limit order book for a continuous double auction.

Prices live on a tick grid and are stored internally as integer tick
counts, so price comparisons and level bookkeeping are exact. The default
tick of 0.01 currency units keeps sub-0.1 order-price noise expressible.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

DEFAULT_TICK = 0.01


def to_ticks(price: float, tick: float = DEFAULT_TICK) -> int:
    """Round a currency price to the nearest tick (halves up)."""
    return int(math.floor(price / tick + 0.5))


def from_ticks(ticks: int, tick: float = DEFAULT_TICK) -> float:
    return ticks * tick


class OrderRejected(Exception):
    """Raised when an order violates book-level invariants (e.g. reused id)."""


@dataclass
class Order:
    id: int
    agent_id: int
    side: str               # "buy" or "sell"
    volume: int             # remaining volume, units
    price_ticks: int
    submitted_at: int
    expires_at: int
    price: float = 0.0      # price_ticks on the owning book's grid

    def __post_init__(self):
        if self.price == 0.0:
            self.price = from_ticks(self.price_ticks)

    def validate(self) -> None:
        if self.side not in ("buy", "sell"):
            raise OrderRejected(f"bad side {self.side!r}")
        if self.volume < 1:
            raise OrderRejected("volume must be >= 1")
        if self.price_ticks <= 0:
            raise OrderRejected("price must be positive")
        if self.expires_at <= self.submitted_at:
            raise OrderRejected("expires_at must exceed submitted_at")


@dataclass(frozen=True)
class Trade:
    buy_order_id: int
    sell_order_id: int
    buy_agent: int
    sell_agent: int
    price_ticks: int
    price: float
    volume: int
    executed_at: int


@dataclass
class _Level:
    queue: deque = field(default_factory=deque)

    @property
    def volume(self) -> int:
        return sum(o.volume for o in self.queue)


class OrderBook:
    """Central LOB with FIFO queues per price level.

    Matching is continuous: an incoming order trades against the best
    opposite level while marketable, at the resting order's limit price.
    During halt windows callers pass ``halted=True`` and orders rest
    without matching; ``uncross`` clears any crossed region afterwards.
    """

    def __init__(self, initial_price: float = 300.0, tick: float = DEFAULT_TICK):
        self.initial_price = initial_price
        self.tick = tick
        self._bids: dict[int, _Level] = {}
        self._asks: dict[int, _Level] = {}
        self._seen_ids: set[int] = set()
        self.last_trade_ticks: int | None = None
        self._next_id = 0

    # -- id allocation ------------------------------------------------------

    def new_order(self, agent_id: int, side: str, volume: int, price: float,
                  now: int, tif: int) -> Order:
        ticks = max(to_ticks(price, self.tick), 1)
        order = Order(self._next_id, agent_id, side, volume, ticks,
                      now, now + tif, price=self._price(ticks))
        self._next_id += 1
        return order

    def _price(self, ticks: int) -> float:
        return ticks * self.tick

    # -- views --------------------------------------------------------------

    @property
    def best_bid_ticks(self) -> int | None:
        return max(self._bids) if self._bids else None

    @property
    def best_ask_ticks(self) -> int | None:
        return min(self._asks) if self._asks else None

    @property
    def best_bid(self) -> float | None:
        t = self.best_bid_ticks
        return None if t is None else self._price(t)

    @property
    def best_ask(self) -> float | None:
        t = self.best_ask_ticks
        return None if t is None else self._price(t)

    @property
    def last_trade_price(self) -> float | None:
        t = self.last_trade_ticks
        return None if t is None else self._price(t)

    @property
    def is_crossed(self) -> bool:
        bb, ba = self.best_bid_ticks, self.best_ask_ticks
        return bb is not None and ba is not None and bb >= ba

    def resting_orders(self) -> list[Order]:
        out = []
        for levels in (self._bids, self._asks):
            for level in levels.values():
                out.extend(level.queue)
        return sorted(out, key=lambda o: o.id)

    def mid_price(self, fundamental: float | None = None) -> float:
        """Mid price with the total fallback chain.

        (best bid + best ask)/2 -> last trade price -> current fundamental
        -> initial price.
        """
        bb, ba = self.best_bid_ticks, self.best_ask_ticks
        if bb is not None and ba is not None:
            return self._price(bb + ba) / 2.0
        if self.last_trade_ticks is not None:
            return self._price(self.last_trade_ticks)
        if fundamental is not None:
            return fundamental
        return self.initial_price

    # -- mutation -----------------------------------------------------------

    def submit(self, order: Order, halted: bool = False) -> list[Trade]:
        """Match an incoming order and rest any residual volume.

        Returns the trades in execution order. When ``halted`` the order
        rests untouched (the book may become crossed until uncross runs).
        """
        order.validate()
        if order.id in self._seen_ids:
            raise OrderRejected(f"duplicate order id {order.id}")
        self._seen_ids.add(order.id)

        trades: list[Trade] = []
        if not halted:
            if order.side == "buy":
                opposite, resting_best = self._asks, self.best_ask_ticks
                while (order.volume > 0 and resting_best is not None
                       and resting_best <= order.price_ticks):
                    trades.append(self._fill(order, opposite[resting_best],
                                             resting_best))
                    resting_best = self.best_ask_ticks
            else:
                opposite, resting_best = self._bids, self.best_bid_ticks
                while (order.volume > 0 and resting_best is not None
                       and resting_best >= order.price_ticks):
                    trades.append(self._fill(order, opposite[resting_best],
                                             resting_best))
                    resting_best = self.best_bid_ticks
        if order.volume > 0:
            self._rest(order)
        return trades

    def _fill(self, incoming: Order, level: _Level, price_ticks: int) -> Trade:
        resting = level.queue[0]
        vol = min(incoming.volume, resting.volume)
        incoming.volume -= vol
        resting.volume -= vol
        if resting.volume == 0:
            level.queue.popleft()
            if not level.queue:
                side = self._asks if resting.side == "sell" else self._bids
                del side[price_ticks]
        self.last_trade_ticks = price_ticks
        if incoming.side == "buy":
            return Trade(incoming.id, resting.id, incoming.agent_id,
                         resting.agent_id, price_ticks,
                         self._price(price_ticks), vol,
                         incoming.submitted_at)
        return Trade(resting.id, incoming.id, resting.agent_id,
                     incoming.agent_id, price_ticks,
                     self._price(price_ticks), vol, incoming.submitted_at)

    def _rest(self, order: Order) -> None:
        side = self._bids if order.side == "buy" else self._asks
        side.setdefault(order.price_ticks, _Level()).queue.append(order)

    def uncross(self, now: int) -> list[Trade]:
        """Clear a crossed book left over from a halt window.

        Crossed best levels are matched pairwise in price-time order; each
        trade executes at the older (resting) order's limit price.
        """
        trades: list[Trade] = []
        while self.is_crossed:
            bid_level = self._bids[self.best_bid_ticks]
            ask_level = self._asks[self.best_ask_ticks]
            bid, ask = bid_level.queue[0], ask_level.queue[0]
            price = bid.price_ticks if bid.id < ask.id else ask.price_ticks
            vol = min(bid.volume, ask.volume)
            bid.volume -= vol
            ask.volume -= vol
            trades.append(Trade(bid.id, ask.id, bid.agent_id, ask.agent_id,
                                price, self._price(price), vol, now))
            self.last_trade_ticks = price
            if bid.volume == 0:
                bid_level.queue.popleft()
                if not bid_level.queue:
                    del self._bids[bid.price_ticks]
            if ask.volume == 0:
                ask_level.queue.popleft()
                if not ask_level.queue:
                    del self._asks[ask.price_ticks]
        return trades

    def expire(self, now: int) -> list[Order]:
        """Remove and return (in id order) all orders with expires_at <= now."""
        expired: list[Order] = []
        for side in (self._bids, self._asks):
            for ticks in list(side):
                level = side[ticks]
                keep = deque(o for o in level.queue if o.expires_at > now)
                if len(keep) != len(level.queue):
                    expired.extend(o for o in level.queue
                                   if o.expires_at <= now)
                    if keep:
                        level.queue = keep
                    else:
                        del side[ticks]
        return sorted(expired, key=lambda o: o.id)

    # -- depth --------------------------------------------------------------

    def depth_weighted_volumes(self, xi: float, omega_b: float, omega_s: float,
                               mid: float) -> tuple[float, float]:
        """Distance-weighted resting volumes within the xi band around mid.

        Bid levels strictly inside (mid*(1-xi), mid) and ask levels strictly
        inside (mid, mid*(1+xi)) contribute volume * exp(-omega*|mid-p|/mid).
        """
        lo, hi = mid * (1.0 - xi), mid * (1.0 + xi)
        b = 0.0
        for ticks, level in self._bids.items():
            p = self._price(ticks)
            if lo < p < mid:
                b += level.volume * math.exp(-omega_b * (mid - p) / mid)
        s = 0.0
        for ticks, level in self._asks.items():
            p = self._price(ticks)
            if mid < p < hi:
                s += level.volume * math.exp(-omega_s * (p - mid) / mid)
        return b, s

    def snapshot_rows(self) -> list[tuple[str, float, int]]:
        """(side, price, volume) rows per level, bids descending then asks."""
        rows = [("bid", self._price(t), self._bids[t].volume)
                for t in sorted(self._bids, reverse=True)]
        rows += [("ask", self._price(t), self._asks[t].volume)
                 for t in sorted(self._asks)]
        return rows
