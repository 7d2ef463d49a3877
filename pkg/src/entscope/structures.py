"""Ordered entanglement-structure compositions and their labels.

A structure on ``n`` qubits is an ordered composition of ``n``: block sizes
read left to right along the qubit register. Order matters, so
``One-Bell-One`` and ``One-One-Bell`` are distinct classes and there are
``2**(n-1)`` of them.
"""

import re
from dataclasses import dataclass

import numpy as np

from ._seeds import derive_seed

MAX_ENUMERATION_N = 24

_GHZ_TOKEN = re.compile(r"GHZ_([1-9][0-9]*)")


@dataclass(frozen=True)
class YoungStats:
    h: int  # number of blocks (diagram rows)
    w: int  # largest block (entanglement depth)


def _check_composition(parts):
    parts = tuple(int(p) for p in parts)
    if not parts or any(p < 1 for p in parts):
        raise ValueError(f"invalid composition {parts!r}")
    return parts


def _compositions_lex(n):
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in _compositions_lex(n - first):
            yield (first,) + rest


def enumerate_compositions(n):
    """All ordered compositions of ``n`` in lexicographic order of parts.

    >>> enumerate_compositions(3)
    [(1, 1, 1), (1, 2), (2, 1), (3,)]
    """
    if not 1 <= n <= MAX_ENUMERATION_N:
        raise ValueError(f"n must be in [1, {MAX_ENUMERATION_N}], got {n}")
    return list(_compositions_lex(n))


def composition_from_cuts(n, mask):
    """Composition whose block boundaries sit at the set bits of ``mask``.

    Bit ``i`` (0-based, from the most significant of ``n - 1`` bits) set means
    a cut between qubit ``i`` and ``i + 1``.
    """
    parts, size = [], 1
    for i in range(n - 1):
        if (mask >> (n - 2 - i)) & 1:
            parts.append(size)
            size = 1
        else:
            size += 1
    parts.append(size)
    return tuple(parts)


def sample_compositions(n, count, seed=0):
    """``count`` distinct compositions of ``n``, returned in lexicographic order.

    The single-block (GME) and fully separable compositions are always kept;
    the rest are drawn uniformly without replacement.
    """
    total = 2 ** (n - 1)
    if count < 1 or count > total:
        raise ValueError(f"count must be in [1, {total}] for n={n}, got {count}")
    if count == total:
        return enumerate_compositions(n)
    forced = [0, total - 1]  # no cuts -> (n,), all cuts -> (1,)*n
    forced = forced[:count]
    rest = count - len(forced)
    picked = list(forced)
    if rest:
        rng = np.random.default_rng(derive_seed(seed, n))
        # masks 1..total-2 are the non-forced compositions
        picked += [int(m) + 1 for m in rng.choice(total - 2, size=rest, replace=False)]
    return sorted(composition_from_cuts(n, m) for m in picked)


def block_token(size):
    if size == 1:
        return "One"
    if size == 2:
        return "Bell"
    return f"GHZ_{size}"


def composition_label(parts):
    """``(2, 1, 3)`` -> ``"Bell-One-GHZ_3"``."""
    return "-".join(block_token(p) for p in _check_composition(parts))


def parse_token(token):
    if token == "One":
        return 1
    if token == "Bell":
        return 2
    m = _GHZ_TOKEN.fullmatch(token)
    if m is None or int(m.group(1)) < 3:
        raise ValueError(f"invalid block token {token!r}")
    return int(m.group(1))


def parse_label(text):
    """Inverse of :func:`composition_label`."""
    if not isinstance(text, str) or not text:
        raise ValueError(f"invalid block token in label {text!r}")
    return tuple(parse_token(t) for t in text.split("-"))


def young_stats(parts):
    parts = _check_composition(parts)
    return YoungStats(h=len(parts), w=max(parts))


def class_table(n, count=None, seed=0):
    """Labels indexed by class id for ``n`` qubits.

    All compositions when ``count`` is None, otherwise a seeded sample.
    """
    comps = enumerate_compositions(n) if count is None else sample_compositions(n, count, seed)
    return [composition_label(c) for c in comps]
