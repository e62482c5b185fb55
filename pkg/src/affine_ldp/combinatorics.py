"""Integer-partition multiplicity vectors and Faà di Bruno weights."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence, Tuple


@dataclass(frozen=True)
class Partition:
    """Multiplicities ``(m_1, ..., m_n)`` with ``sum_i i * m_i == n``.

    ``n == 0`` carries the empty tuple and represents the empty product.
    """

    n: int
    multiplicities: Tuple[int, ...]

    @property
    def size(self) -> int:
        """Number of blocks, ``sum_i m_i``."""
        return sum(self.multiplicities)

    def fdb_weight(self) -> float:
        """``n! / prod_i (m_i! (i!)^{m_i})``: set partitions of this block shape."""
        return math.factorial(self.n) * self.inverse_weight()

    def inverse_weight(self) -> float:
        """``1 / prod_i (m_i! (i!)^{m_i})``."""
        den = 1
        for i, mi in enumerate(self.multiplicities, start=1):
            den *= math.factorial(mi) * math.factorial(i) ** mi
        return 1.0 / den

    def product(self, values: Sequence[float]) -> float:
        """``prod_i values[i-1] ** m_i`` (``values`` indexed from order 1)."""
        out = 1.0
        for i, mi in enumerate(self.multiplicities, start=1):
            if mi:
                out *= values[i - 1] ** mi
        return out


def _parts(n: int, largest: int) -> Iterator[Tuple[int, ...]]:
    # partitions of n into parts <= largest, as non-increasing tuples
    if n == 0:
        yield ()
        return
    for p in range(min(n, largest), 0, -1):
        for rest in _parts(n - p, p):
            yield (p,) + rest


@lru_cache(maxsize=None)
def partitions(n: int) -> Tuple[Partition, ...]:
    """All multiplicity vectors of order ``n`` (the empty partition for ``n == 0``)."""
    if n < 0:
        raise ValueError("partition order must be nonnegative")
    out = []
    for parts in _parts(n, n):
        mult = [0] * n
        for p in parts:
            mult[p - 1] += 1
        out.append(Partition(n, tuple(mult)))
    return tuple(out)


def composite_derivative(k: int, outer: Sequence[float], inner: Sequence[float]) -> float:
    """k-th derivative of ``f(g(x))`` from derivatives of ``f`` and ``g``.

    Parameters
    ----------
    outer : sequence
        ``outer[j]`` is ``f^{(j)}(g(x))`` for ``j = 0..k``.
    inner : sequence
        ``inner[l-1]`` is ``g^{(l)}(x)`` for ``l = 1..k``.
    """
    if k == 0:
        return outer[0]
    return sum(p.fdb_weight() * outer[p.size] * p.product(inner) for p in partitions(k))
