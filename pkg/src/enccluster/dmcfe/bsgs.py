"""Bounded discrete logarithm in the pairing target group (baby-step/giant-step)."""
from __future__ import annotations

import hashlib
import math
import threading

from ..errors import DlogOutOfRange, InvalidArgument

MAX_BABY_STEPS = 1 << 17

_tables: dict = {}
_lock = threading.Lock()


def _key(group, el) -> bytes:
    return hashlib.blake2b(group.gt_key(el), digest_size=16).digest()


class BSGS:
    """Solve ``h = base^x`` for integer ``x`` in ``[-bound, bound]``.

    The baby-step table ``{base^j : j in [0, m)}`` is built once per
    ``(group, m)`` and shared read-only.  Giant steps walk outward from an
    optional ``hint``, so a good guess makes the search cost O(1) steps; the
    hint changes only the search order, never the answer.
    """

    def __init__(self, group, bound: int, baby_steps: int | None = None):
        bound = int(bound)
        if bound < 0:
            raise InvalidArgument("bound must be non-negative")
        self.group = group
        self.bound = bound
        m = baby_steps or min(math.isqrt(2 * bound + 1) + 1, MAX_BABY_STEPS)
        self.m = max(1, int(m))
        self.base = group.gt_generator
        self.table = self._table(group, self.m)
        self._step_fwd = self.base ** (-self.m)  # moves the window up by m
        self._step_back = self.base ** self.m

    @staticmethod
    def _table(group, m: int) -> dict:
        key = (group.name, m)
        with _lock:
            table = _tables.get(key)
            if table is None:
                table = {}
                cur = group.gt_one()
                g = group.gt_generator
                for j in range(m):
                    table.setdefault(_key(group, cur), j)
                    cur = cur * g
                _tables[key] = table
        return table

    def solve(self, h, hint: int = 0) -> int:
        B, m = self.bound, self.m
        hint = max(-B, min(B, int(hint)))
        start = hint - m // 2
        # window k covers exponents [start + k*m, start + (k+1)*m)
        k_lo = -((start + B) // m) - 1
        k_hi = (B - start) // m
        up = h * (self.base ** (-start))
        down = up * self._step_back
        table = self.table
        k_up, k_down = 0, -1
        while k_up <= k_hi or k_down >= k_lo:
            if k_up <= k_hi:
                j = table.get(_key(self.group, up))
                if j is not None:
                    x = start + k_up * m + j
                    if -B <= x <= B:
                        return x
                up = up * self._step_fwd
                k_up += 1
            if k_down >= k_lo:
                j = table.get(_key(self.group, down))
                if j is not None:
                    x = start + k_down * m + j
                    if -B <= x <= B:
                        return x
                down = down * self._step_back
                k_down -= 1
        raise DlogOutOfRange(f"aggregate outside [-{B}, {B}]")
