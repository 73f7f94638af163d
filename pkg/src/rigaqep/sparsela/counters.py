"""Per-category operation counters for the eigensolver cost model."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

CATEGORIES = ("fa", "fb", "mv", "vv")


@dataclass
class FlopCounter:
    """Cumulative multiply-add counts and call counts per operation category.

    ``fa`` factorization, ``fb`` forward/backward elimination, ``mv``
    sparse matrix-vector products, ``vv`` length-N vector operations.
    One multiply-add is worth ``flops_per_madd`` real flops in reports.
    """

    flops_per_madd: float = 8.0
    madds: dict = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
    calls: dict = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, category: str, madds: int, calls: int = 1) -> None:
        if category not in self.madds:
            raise KeyError(f"unknown counter category {category!r}")
        if madds < 0 or calls < 0:
            raise ValueError("counters are monotone")
        with self._lock:
            self.madds[category] += int(madds)
            self.calls[category] += int(calls)

    def flops(self, category: str | None = None) -> float:
        if category is None:
            return sum(self.flops(c) for c in CATEGORIES)
        return self.madds[category] * self.flops_per_madd

    def reset(self) -> None:
        with self._lock:
            for c in CATEGORIES:
                self.madds[c] = 0
                self.calls[c] = 0

    def snapshot(self) -> dict:
        snap = {
            "flops_per_madd": self.flops_per_madd,
            "madds": dict(self.madds),
            "calls": dict(self.calls),
            "flops": {c: self.flops(c) for c in CATEGORIES},
        }
        snap["flops"]["total"] = sum(snap["flops"][c] for c in CATEGORIES)
        return snap

    def to_json(self, **kw) -> str:
        return json.dumps(self.snapshot(), **kw)

    def diff(self, earlier: dict) -> dict:
        """Counts accumulated since ``earlier`` (a previous snapshot)."""
        return {c: self.madds[c] - earlier["madds"][c] for c in CATEGORIES}
