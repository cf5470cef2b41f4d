"""Run-wide event trace.

Records are (order, time_cycles, actor, kind, detail-dict) tuples. The
order index makes same-cycle records totally ordered, which the tampering
recount oracle relies on. Kinds can be filtered at construction so large
runs only pay for what they inspect; ``None`` keeps everything.
"""

from __future__ import annotations

import json
from typing import Iterable, Optional

# kinds emitted by the simulator
KINDS = (
    "smc", "fault", "protect", "emit", "clear", "rotate", "consume",
    "persist", "power", "iago", "admin", "attest", "attack", "block",
    "wake", "sleep", "irq",
)


class Trace:
    __slots__ = ("records", "_kinds", "_order")

    def __init__(self, kinds: Optional[Iterable[str]] = KINDS):
        self.records: list[tuple[int, int, str, str, dict]] = []
        self._kinds = None if kinds is None else frozenset(kinds)
        self._order = 0

    def wants(self, kind: str) -> bool:
        return self._kinds is None or kind in self._kinds

    def record(self, t: int, actor: str, kind: str, **detail) -> None:
        if self._kinds is not None and kind not in self._kinds:
            return
        self.records.append((self._order, t, actor, kind, detail))
        self._order += 1

    def of_kind(self, kind: str) -> list[tuple[int, int, str, str, dict]]:
        return [r for r in self.records if r[3] == kind]

    def count(self, kind: str) -> int:
        return sum(1 for r in self.records if r[3] == kind)

    def to_ndjson(self, path: str) -> None:
        with open(path, "w") as fh:
            for order, t, actor, kind, detail in self.records:
                fh.write(json.dumps(
                    {"order": order, "time_cycles": t, "actor": actor,
                     "kind": kind, "detail": detail},
                    sort_keys=True) + "\n")
