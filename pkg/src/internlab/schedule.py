"""Stagewise decay schedules and epoch allocation.

A schedule maps stage t in 1..T onto a value S_t in [0, 1] that starts
at exactly 1 and ends at exactly 0.  With u = (t - 1) / (T - 1):

* ``linear``   S_t = 1 - u
* ``exp``      S_t = (exp(-lam * u) - exp(-lam)) / (1 - exp(-lam))
* ``inv_exp``  S_t = 1 - (exp(lam * u) - 1) / (exp(lam) - 1)

``exp`` front-loads the decay (convex, drops fast then flattens) and
``inv_exp`` back-loads it (concave, stays high then drops), so interior
stages order exp <= linear <= inv_exp.  The total epoch budget E is
split as evenly as possible over stages, earlier stages absorbing the
remainder, so counts sum to E and differ by at most 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from internlab.errors import ScheduleError

PATTERNS = ("linear", "exp", "inv_exp")

DEFAULT_T = 4
DEFAULT_E = 12
DEFAULT_LAM = 3.0


@dataclass(frozen=True)
class SchedulePlan:
    pattern: str
    T: int
    E: int
    lam: float
    values: tuple[float, ...]
    epochs: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "T": self.T,
            "E": self.E,
            "lam": self.lam,
            "values": list(self.values),
            "epochs": list(self.epochs),
        }


def make_schedule(
    pattern: str,
    T: int = DEFAULT_T,
    E: int = DEFAULT_E,
    lam: float = DEFAULT_LAM,
) -> SchedulePlan:
    if pattern not in PATTERNS:
        raise ScheduleError(f"pattern must be one of {PATTERNS}, got {pattern!r}")
    if T < 2:
        raise ScheduleError(f"T must be >= 2 so the schedule can span 1 to 0, got {T}")
    if E < T:
        raise ScheduleError(f"E must be >= T so every stage trains at least once, got E={E}, T={T}")
    if lam <= 0:
        raise ScheduleError(f"lam must be positive, got {lam}")

    values = tuple(_value(pattern, (t - 1) / (T - 1), lam) for t in range(1, T + 1))
    base, rem = divmod(E, T)
    epochs = tuple(base + (1 if i < rem else 0) for i in range(T))
    return SchedulePlan(pattern, T, E, lam, values, epochs)


def _value(pattern: str, u: float, lam: float) -> float:
    if pattern == "linear":
        return 1.0 - u
    if pattern == "exp":
        return (math.exp(-lam * u) - math.exp(-lam)) / (1.0 - math.exp(-lam))
    return 1.0 - (math.exp(lam * u) - 1.0) / (math.exp(lam) - 1.0)


def stage_of_epoch(plan: SchedulePlan, epoch_index: int) -> int:
    """Map a 0-based global epoch index onto its 1-based stage."""
    if not 0 <= epoch_index < plan.E:
        raise ScheduleError(f"epoch_index must be in [0, {plan.E}), got {epoch_index}")
    running = 0
    for t, n in enumerate(plan.epochs, start=1):
        running += n
        if epoch_index < running:
            return t
    raise AssertionError("unreachable: epoch counts sum to E")
