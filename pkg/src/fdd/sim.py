"""Seeded discrete-event scheduler and message-passing network.

Time is in simulated milliseconds.  Events at the same instant fire in the
order they were scheduled, so a fixed seed gives a fixed delivery schedule.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable


class Event:
    __slots__ = ("time", "seq", "fn", "args", "cancelled")

    def __init__(self, time, seq, fn, args):
        self.time, self.seq, self.fn, self.args = time, seq, fn, args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other):
        return (self.time, self.seq) < (other.time, other.seq)


class Simulator:
    def __init__(self, seed: int = 0):
        self.now = 0.0
        self.rng = random.Random(seed)
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(self, delay: float, fn: Callable, *args) -> Event:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        ev = Event(self.now + delay, next(self._seq), fn, args)
        heapq.heappush(self._queue, ev)
        return ev

    def at(self, time: float, fn: Callable, *args) -> Event:
        return self.schedule(max(0.0, time - self.now), fn, *args)

    def pending(self) -> int:
        return sum(not e.cancelled for e in self._queue)

    def step(self) -> bool:
        while self._queue:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            self.processed += 1
            ev.fn(*ev.args)
            return True
        return False

    def run(self, until: float | None = None, max_events: int | None = None) -> None:
        count = 0
        while self._queue:
            if until is not None and self._queue[0].time > until:
                break
            if max_events is not None and count >= max_events:
                break
            if self.step():
                count += 1
        if until is not None and self.now < until:
            self.now = until


@dataclass(frozen=True)
class Partition:
    start: float
    end: float
    pairs: frozenset = frozenset()  # frozensets {a, b} of severed links

    def severs(self, a, b, now: float) -> bool:
        return self.start <= now < self.end and frozenset((a, b)) in self.pairs


@dataclass(frozen=True)
class NetworkModel:
    base_ms: float = 2.0
    jitter_ms: float = 1.0
    loss: float = 0.0
    partitions: tuple[Partition, ...] = ()

    def __post_init__(self):
        if self.base_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency must be non-negative")
        if not 0.0 <= self.loss < 1.0:
            raise ValueError("loss probability must lie in [0, 1)")


@dataclass
class NetStats:
    sent: int = 0
    delivered: int = 0
    lost: int = 0
    partitioned: int = 0
    to_dead: int = 0


class Network:
    """Point-to-point links between registered nodes."""

    def __init__(self, sim: Simulator, model: NetworkModel | None = None, seed: int = 0):
        self.sim = sim
        self.model = model or NetworkModel()
        self.rng = random.Random(seed)
        self.handlers: dict[Hashable, Callable[[Hashable, Any], None]] = {}
        self.down: set = set()
        self.stats = NetStats()
        self.trace: list[tuple] | None = None

    def register(self, node: Hashable, handler: Callable[[Hashable, Any], None]) -> None:
        self.handlers[node] = handler

    def crash(self, node) -> None:
        self.down.add(node)

    def recover(self, node) -> None:
        self.down.discard(node)

    def alive(self, node) -> bool:
        return node in self.handlers and node not in self.down

    def latency(self) -> float:
        m = self.model
        return m.base_ms + (self.rng.random() * m.jitter_ms if m.jitter_ms else 0.0)

    def send(self, src, dst, msg) -> bool:
        """Queue ``msg``; returns False when it is dropped at send time."""
        self.stats.sent += 1
        # always draw, so the rng stream does not depend on which links are up
        delay = self.latency()
        lost = self.model.loss > 0 and self.rng.random() < self.model.loss
        if src in self.down:
            return False
        if any(p.severs(src, dst, self.sim.now) for p in self.model.partitions):
            self.stats.partitioned += 1
            return False
        if lost:
            self.stats.lost += 1
            return False
        self.sim.schedule(delay, self._deliver, src, dst, msg)
        return True

    def broadcast(self, src, dsts: Iterable, msg) -> int:
        return sum(self.send(src, d, msg) for d in dsts)

    def _deliver(self, src, dst, msg) -> None:
        if dst not in self.handlers or dst in self.down:
            self.stats.to_dead += 1
            return
        self.stats.delivered += 1
        if self.trace is not None:
            self.trace.append((round(self.sim.now, 6), src, dst, type(msg).__name__))
        self.handlers[dst](src, msg)


@dataclass
class Processor:
    """FIFO single-server CPU in simulated time.

    ``slowdown`` maps the current backlog (jobs waiting, including this one)
    to a service-time multiplier; the default is a plain queue.
    """

    sim: Simulator
    slowdown: Callable[[int], float] | None = None
    busy_until: float = 0.0
    backlog: int = 0
    busy_ms: float = field(default=0.0)

    def submit(self, cost_ms: float, fn: Callable, *args) -> float:
        self.backlog += 1
        factor = self.slowdown(self.backlog) if self.slowdown else 1.0
        service = cost_ms * factor
        start = max(self.sim.now, self.busy_until)
        self.busy_until = start + service
        self.busy_ms += service
        self.sim.at(self.busy_until, self._done, fn, args)
        return self.busy_until

    def shed(self, cost_ms: float) -> None:
        """Spend CPU on turning a request away without queueing it."""
        start = max(self.sim.now, self.busy_until)
        self.busy_until = start + cost_ms
        self.busy_ms += cost_ms

    def _done(self, fn, args) -> None:
        self.backlog -= 1
        fn(*args)

    def utilisation(self, span_ms: float) -> float:
        return min(1.0, self.busy_ms / span_ms) if span_ms > 0 else 0.0
