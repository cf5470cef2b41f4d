"""Deterministic discrete-event core.

Simulated time is counted in integer CPU cycles (1.2 GHz by default), so
event ordering never depends on floating point. Events with equal fire
times dispatch in (priority, insertion order); given the same seed and the
same schedule of calls, a run is bit-reproducible.

"Actors" are plain string names. The engine is logically single threaded:
concurrency in the modeled system (cores, kernel threads, the protected
daemon) is expressed as interleaved events, and non-preemptible windows are
expressed as atomic sections that hold back other actors' events until the
section closes.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from typing import Callable, Iterable, Optional

DEFAULT_FREQ_HZ = 1_200_000_000

# Lower value means more urgent at equal fire times.
PRIORITY_TIMER = 1
PRIORITY_MONITOR = 2
PRIORITY_NORMAL = 5
PRIORITY_LATE = 9


class PastEventError(ValueError):
    """Attempt to schedule an event before the current clock."""


class NestedAtomicError(RuntimeError):
    """A second atomic section tried to open over an overlapping actor set."""


class Rng:
    """Seeded pseudo-random source (Mersenne Twister via ``random.Random``).

    Identical seeds produce identical draw sequences. ``child`` derives an
    independent, reproducible stream from a string tag, which is how per-trial
    and per-actor streams are split off a single run seed.
    """

    __slots__ = ("seed", "_r")

    def __init__(self, seed: int):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self._r = random.Random(self.seed)

    def child(self, tag: str) -> "Rng":
        digest = hashlib.sha256(f"{self.seed}:{tag}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def random(self) -> float:
        return self._r.random()

    def uniform_int(self, lo: int, hi: int) -> int:
        """Integer uniform on [lo, hi], inclusive."""
        return self._r.randint(lo, hi)

    def trunc_exp(self, mean: float, cap: float) -> int:
        """Exponential with the given raw mean, truncated to [0, cap].

        Sampled by inverse CDF so exactly one uniform draw is consumed per
        sample regardless of the cap.
        """
        if mean <= 0 or cap <= 0:
            return 0
        u = self._r.random()
        x = -mean * math.log1p(-u * (1.0 - math.exp(-cap / mean)))
        return int(round(min(x, cap)))

    def bytes(self, n: int) -> bytes:
        return self._r.getrandbits(n * 8).to_bytes(n, "little") if n else b""

    def shuffle(self, seq: list) -> None:
        self._r.shuffle(seq)

    def choice(self, seq):
        return self._r.choice(seq)


class Event:
    __slots__ = ("fire_at", "priority", "seq", "actor", "fn", "cancelled")

    def __init__(self, fire_at: int, priority: int, seq: int, actor: str,
                 fn: Callable[[], None]):
        self.fire_at = fire_at
        self.priority = priority
        self.seq = seq
        self.actor = actor
        self.fn = fn
        self.cancelled = False

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Event(t={self.fire_at}, prio={self.priority}, seq={self.seq}, actor={self.actor!r})"


class AtomicSection:
    """Non-preemptible window owned by one actor.

    While open, events whose target actor falls inside ``scope`` (every other
    actor when scope is None) are deferred and re-dispatched, in their
    original order, when the section exits. The owner's own events still run,
    which is how a section spanning simulated time advances to its close.
    """

    __slots__ = ("owner", "entered_at", "scope", "deferred", "open")

    def __init__(self, owner: str, entered_at: int, scope: Optional[frozenset]):
        self.owner = owner
        self.entered_at = entered_at
        self.scope = scope  # None = all actors except owner
        self.deferred: list[Event] = []
        self.open = True

    def blocks(self, actor: str) -> bool:
        if not self.open or actor == self.owner:
            return False
        if self.scope is None:
            return True
        return actor in self.scope


class Engine:
    """Event queue + virtual cycle clock + atomic sections."""

    def __init__(self, freq_hz: int = DEFAULT_FREQ_HZ, seed: int = 0):
        self.freq_hz = freq_hz
        self.now = 0
        self.rng = Rng(seed)
        self.dispatched = 0
        self._queue: list[tuple[int, int, int, Event]] = []
        self._seq = 0
        self._sections: list[AtomicSection] = []

    # -- time helpers -----------------------------------------------------

    def us(self, micros: float) -> int:
        """Microseconds to cycles at the engine frequency."""
        return int(round(micros * self.freq_hz / 1_000_000))

    def to_us(self, cycles: int) -> float:
        return cycles * 1_000_000 / self.freq_hz

    # -- scheduling --------------------------------------------------------

    def schedule(self, fire_at: int, fn: Callable[[], None], *, actor: str = "",
                 priority: int = PRIORITY_NORMAL) -> Event:
        if fire_at < self.now:
            raise PastEventError(f"fire_at={fire_at} < now={self.now}")
        ev = Event(fire_at, priority, self._seq, actor, fn)
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, priority, ev.seq, ev))
        return ev

    def schedule_after(self, delay: int, fn: Callable[[], None], *, actor: str = "",
                       priority: int = PRIORITY_NORMAL) -> Event:
        return self.schedule(self.now + delay, fn, actor=actor, priority=priority)

    def cancel(self, ev: Event) -> None:
        ev.cancelled = True

    def pending(self) -> int:
        return sum(1 for *_k, ev in self._queue if not ev.cancelled)

    # -- atomic sections ---------------------------------------------------

    def enter_atomic(self, actor: str, scope: Optional[Iterable[str]] = None) -> AtomicSection:
        fscope = None if scope is None else frozenset(scope)
        for sec in self._sections:
            if sec.scope is None or fscope is None or (sec.scope & fscope) \
                    or sec.blocks(actor) or (fscope and sec.owner in fscope):
                raise NestedAtomicError(
                    f"{actor!r} cannot open atomic section over {sec.owner!r}'s")
        sec = AtomicSection(actor, self.now, fscope)
        self._sections.append(sec)
        return sec

    def exit_atomic(self, section: AtomicSection) -> int:
        if not section.open:
            raise RuntimeError("section already closed")
        section.open = False
        self._sections.remove(section)
        for ev in section.deferred:
            if not ev.cancelled:
                heapq.heappush(self._queue,
                               (max(ev.fire_at, self.now), ev.priority, ev.seq, ev))
        section.deferred.clear()
        return self.now - section.entered_at

    def _blocking_section(self, actor: str) -> Optional[AtomicSection]:
        for sec in self._sections:
            if sec.blocks(actor):
                return sec
        return None

    # -- main loop -----------------------------------------------------------

    def run_until(self, t: int) -> int:
        """Dispatch every event with fire_at <= t; leave the clock at t."""
        if t < self.now:
            raise PastEventError(f"run_until({t}) < now={self.now}")
        dispatched_before = self.dispatched
        q = self._queue
        while q and q[0][0] <= t:
            fire_at, _prio, _seq, ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            sec = self._blocking_section(ev.actor)
            if sec is not None:
                sec.deferred.append(ev)
                continue
            self.now = fire_at
            self.dispatched += 1
            ev.fn()
        self.now = t
        return self.dispatched - dispatched_before

    def drain(self, limit: int = 50_000_000) -> int:
        """Dispatch everything left in the queue, in order."""
        count = 0
        while self._queue and self._queue[0][0] <= limit:
            count += self.run_until(self._queue[0][0])
        return count
