"""Geometry of the reachable space-time cone and the site-keyed RNG.

Layer ``t`` of the cone holds the sites ``x`` with ``|x|_1 <= t`` and
``|x|_1 = t (mod 2)``; inside a layer sites are ordered lexicographically.
"""

from __future__ import annotations

from functools import lru_cache

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _zigzag(v):
    # int64 -> uint64 bijection keeping small magnitudes small
    if v >= 0:
        return np.uint64(2 * v)
    return np.uint64(-2 * v - 1)


@nb.njit(cache=True)
def site_uniforms(seed, t, coords):
    """Counter-based uniforms in [0, 1) keyed by ``(seed, t, x)``."""
    m, d = coords.shape
    out = np.empty(m, dtype=np.float64)
    base = _splitmix(_splitmix(np.uint64(seed)) ^ np.uint64(t))
    for i in range(m):
        h = base
        for j in range(d):
            h = _splitmix(h ^ _zigzag(np.int64(coords[i, j])))
        out[i] = np.float64(h >> np.uint64(11)) * _INV53
    return out


def site_bits(seed: int, p: float, t: int, coords: np.ndarray) -> np.ndarray:
    """Bernoulli(p) occupation bits for the given sites of layer ``t``."""
    coords = np.ascontiguousarray(coords, dtype=np.int64)
    if coords.ndim != 2:
        raise ValueError("coords must be a 2-D array")
    return (site_uniforms(np.uint64(seed), t, coords) < p).astype(np.uint8)


@lru_cache(maxsize=64)
def layer_counts(d: int, n: int) -> np.ndarray:
    """Table ``C[k, r]``: sites y in Z^k with |y|_1 <= r, |y|_1 = r mod 2."""
    c = np.zeros((d + 1, n + 1), dtype=np.int64)
    c[0, 0::2] = 1
    for k in range(1, d + 1):
        for r in range(n + 1):
            a = np.arange(-r, r + 1)
            c[k, r] = c[k - 1, r - np.abs(a)].sum()
    return c


@lru_cache(maxsize=64)
def _rank_tables(d: int, n: int) -> np.ndarray:
    # P[k, r, b + r] = sum_{a=-r}^{b-1} C[k-1, r-|a|]  for b in [-r, r+1]
    c = layer_counts(d, n)
    tab = np.zeros((d + 1, n + 1, 2 * n + 2), dtype=np.int64)
    for k in range(1, d + 1):
        for r in range(n + 1):
            a = np.arange(-r, r + 1)
            tab[k, r, 1 : 2 * r + 2] = np.cumsum(c[k - 1, r - np.abs(a)])
    return tab


@nb.njit(cache=True)
def _ranks(tab, t, coords):
    m, d = coords.shape
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        r = t
        acc = 0
        for j in range(d):
            a = coords[i, j]
            acc += tab[d - j, r, a + r]
            r -= abs(a)
        out[i] = acc
    return out


def layer_ranks(d: int, n: int, t: int, coords: np.ndarray) -> np.ndarray:
    """Lexicographic rank of in-cone ``coords`` within layer ``t``."""
    return _ranks(_rank_tables(d, n), t, np.ascontiguousarray(coords, dtype=np.int64))


def layer_offsets(d: int, n: int) -> np.ndarray:
    """``off[t]`` is the storage index of the first site of layer ``t``."""
    sizes = layer_counts(d, n)[d, 1:]
    off = np.zeros(n + 2, dtype=np.int64)
    off[2:] = np.cumsum(sizes)
    return off


def in_cone(t: int, coords: np.ndarray) -> np.ndarray:
    l1 = np.abs(coords).sum(axis=1)
    return (l1 <= t) & ((l1 - t) % 2 == 0)


@lru_cache(maxsize=256)
def _sub_layer(k: int, r: int) -> np.ndarray:
    """Lex-ordered sites of the k-dimensional layer of radius r (read-only)."""
    if k == 0:
        out = np.zeros((1 if r % 2 == 0 else 0, 0), dtype=np.int64)
    else:
        parts = []
        for a in range(-r, r + 1):
            sub = _sub_layer(k - 1, r - abs(a))
            if len(sub):
                parts.append(np.column_stack([np.full(len(sub), a, dtype=np.int64), sub]))
        out = np.concatenate(parts) if parts else np.zeros((0, k), dtype=np.int64)
    out.setflags(write=False)
    return out


def iter_layer_slices(d: int, t: int):
    """Yield the sites of layer ``t`` in lex order, one slab of fixed x_1 at a time."""
    for a in range(-t, t + 1):
        sub = _sub_layer(d - 1, t - abs(a))
        if len(sub):
            yield np.column_stack([np.full(len(sub), a, dtype=np.int64), sub])


def layer_coords(d: int, t: int) -> np.ndarray:
    return np.concatenate(list(iter_layer_slices(d, t)))
