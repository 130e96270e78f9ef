"""Wide finite-difference stencils: primitive lattice directions grouped into
orthogonal bases.

In 2-D every primitive integer vector v = (a, b) with the max-norm bound pairs
with its quarter-turn (-b, a), so bases come in direction pairs; width 1 gives
the axes plus both diagonals (two bases), width 2 adds the (2, +-1), (1, +-2)
knight directions (four bases).  3-D support is restricted to the coordinate
basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

from .errors import InvalidArgument


def _normalize(v):
    """Flip sign so the first nonzero component is positive."""
    for c in v:
        if c != 0:
            return v if c > 0 else tuple(-x for x in v)
    raise InvalidArgument("zero direction")


def _key(v):
    return (max(abs(c) for c in v), sum(c * c for c in v), v)


@dataclass(frozen=True)
class StencilSet:
    """Directions (one per +- pair, sign-normalized) and orthogonal bases.

    bases holds index tuples into directions; the basis order is fixed and
    is the tie-break order used by the operator linearization.
    """

    n: int
    width: int
    directions: tuple[tuple[int, ...], ...]
    bases: tuple[tuple[int, ...], ...]

    def __str__(self):
        return f"StencilSet(n={self.n}, width={self.width}, bases={len(self.bases)})"


def build_stencil(n: int, width: int = 1) -> StencilSet:
    """All primitive integer directions with max-norm <= width, paired into bases."""
    if width < 1:
        raise InvalidArgument("stencil width must be >= 1")
    if n == 1:
        return StencilSet(1, width, ((1,),), ((0,),))
    if n == 2:
        dirs = set()
        for a in range(0, width + 1):
            for b in range(-width, width + 1):
                if (a, b) == (0, 0):
                    continue
                if gcd(abs(a), abs(b)) != 1:
                    continue
                dirs.add(_normalize((a, b)))
        directions = tuple(sorted(dirs, key=_key))
        index = {v: i for i, v in enumerate(directions)}
        pairs = set()
        for v in directions:
            perp = _normalize((-v[1], v[0]))
            if perp in index:
                pairs.add(tuple(sorted((index[v], index[perp]))))
        bases = tuple(sorted(pairs, key=lambda p: _key(directions[p[0]])))
        return StencilSet(2, width, directions, bases)
    if n == 3:
        # Coordinate basis only; wide 3-D stencils are out of scope.
        directions = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
        return StencilSet(3, width, directions, ((0, 1, 2),))
    raise InvalidArgument(f"unsupported dimension {n}")
