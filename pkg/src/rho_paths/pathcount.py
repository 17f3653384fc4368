"""Exact counts ``Q_n(k)`` of oriented paths by number of open sites.

``count_exact`` runs a layered DP carrying, per site, the vector of path
counts indexed by open-site count, in int64 or modulo several primes.  ``brute_force_count`` enumerates paths
and serves as the independent oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba as nb
import numpy as np

from . import _lattice
from .environment import memory_budget
from .errors import ContractError, ResourceError

__all__ = [
    "BRUTE_FORCE_LIMIT",
    "CountTable",
    "HnExtremes",
    "brute_force_count",
    "count_exact",
    "extremes",
    "extremes_dp",
    "r_n",
]

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True)
class CountTable:
    """Exact path counts ``counts[k] = Q_n(k)`` for ``k = 0..n``."""

    n: int
    d: int
    counts: tuple
    p: float | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.n + 1:
            raise ContractError(f"count table needs n+1={self.n + 1} entries, got {len(counts)}")
        if any(c < 0 for c in counts):
            raise ContractError("path counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def support(self) -> tuple[int, int]:
        nz = [k for k, c in enumerate(self.counts) if c]
        return nz[0], nz[-1]

    def as_float(self) -> np.ndarray:
        return np.array([float(c) for c in self.counts])

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "p": self.p,
            "seed": self.seed,
            "counts": [str(c) for c in self.counts],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CountTable":
        return cls(
            n=int(obj["n"]),
            d=int(obj["d"]),
            counts=tuple(int(c) for c in obj["counts"]),
            p=obj.get("p"),
            seed=obj.get("seed"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CountTable":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class HnExtremes:
    max_h: int
    min_h: int


def _table(env, counts) -> CountTable:
    seed = getattr(env.params, "seed", None)
    return CountTable(n=env.n, d=env.d, counts=tuple(counts), p=env.p, seed=seed)


_PRIME_TOP = 2**31


@lru_cache(maxsize=1)
def _large_primes(count: int = 64) -> tuple:
    """The ``count`` largest primes below 2^31, by trial division against a sieve."""
    lim = int(math.isqrt(_PRIME_TOP)) + 1
    sieve = np.ones(lim + 1, dtype=bool)
    sieve[:2] = False
    for i in range(2, int(math.isqrt(lim)) + 1):
        if sieve[i]:
            sieve[i * i :: i] = False
    small = np.nonzero(sieve)[0].astype(np.int64)
    out: list[int] = []
    hi = _PRIME_TOP
    while len(out) < count:
        cand = np.arange(hi - 4096, hi, dtype=np.int64)
        ok = np.all(cand[:, None] % small[None, :] != 0, axis=1)
        out.extend(int(c) for c in cand[ok][::-1])
        hi -= 4096
    return tuple(out[:count])


@nb.njit(cache=True)
def _count_sweep(nbr0, nbr1, cnt, bits, boff, n, mod, buf0, buf1):
    """Layered count DP; with ``mod > 0`` all arithmetic is modulo ``mod``."""
    K = n + 1
    buf0[0, 0] = 1
    for t in range(1, n + 1):
        if t % 2 == 1:
            new, old, nbr = buf1, buf0, nbr1
        else:
            new, old, nbr = buf0, buf1, nbr0
        off = boff[t]
        for i in range(cnt[t]):
            e = (bits[off + (i >> 3)] >> (i & 7)) & 1
            for k in range(K):
                new[i, k] = 0
            # an open site shifts the count vector up by one
            for j in range(nbr.shape[1]):
                r = nbr[i, j]
                for k in range(K - e):
                    new[i, k + e] += old[r, k]
            if mod > 0:
                for k in range(K):
                    new[i, k] %= mod
    fin = buf0 if n % 2 == 0 else buf1
    tot = np.zeros(K, dtype=np.int64)
    for i in range(cnt[n]):
        for k in range(K):
            tot[k] += fin[i, k]
            if mod > 0:
                tot[k] %= mod
    return tot


def _crt(residues: list, primes: list) -> list[int]:
    m = 1
    for q in primes:
        m *= q
    out = []
    for k in range(len(residues[0])):
        x = 0
        for r, q in zip(residues, primes):
            mi = m // q
            x += int(r[k]) * mi * pow(mi, -1, q)
        out.append(x % m)
    return out


def count_exact(env, budget: int | None = None, *, modular: bool | None = None) -> CountTable:
    """Exact ``Q_n(k)`` by layered dynamic programming over the full cone.

    While ``(2d)^n`` stays below ``2^62`` the DP runs in int64.  Beyond that it
    runs modulo enough 31-bit primes for their product to exceed ``(2d)^n``
    and the counts are rebuilt by Chinese remaindering.  ``modular`` forces
    either path (``None`` picks by size).
    """
    d, n = env.d, env.n
    dom = _lattice.build_domain(d, n, None)
    rows = [len(dom.coords[q]) + 1 for q in (0, 1)]
    need = 8 * (n + 1) * sum(rows)
    limit = memory_budget(budget)
    if need > limit:
        raise ResourceError(
            f"exact counting at d={d}, n={n} needs about {need} bytes, over the budget of "
            f"{limit} bytes; use the scalar polymer DP (log_partition) instead"
        )
    eta = _lattice.domain_eta(env, dom)
    total_bits = n * math.log2(2 * d)
    if modular is None:
        modular = total_bits >= 62
    if not modular:
        if total_bits >= 62:
            raise ContractError("(2d)^n overflows int64; the modular path is required")
        primes = [0]
    else:
        primes, acc = [], 0.0
        for q in _large_primes():
            primes.append(q)
            acc += math.log2(q)
            if acc > total_bits + 1:
                break
    res = []
    for q in primes:
        bufs = [np.zeros((r, n + 1), dtype=np.int64) for r in rows]
        res.append(_count_sweep(dom.nbr[0], dom.nbr[1], dom.cnt, eta.bits, eta.offset, n, q,
                                *bufs))
    counts = [int(c) for c in res[0]] if primes == [0] else _crt(res, primes)
    return _table(env, counts)


def brute_force_count(env) -> CountTable:
    """Histogram of ``H_n(S)`` over all ``(2d)^n`` paths, by explicit enumeration."""
    d, n = env.d, env.n
    if (2 * d) ** n > BRUTE_FORCE_LIMIT:
        raise ContractError(
            f"brute force over (2d)^n = {(2 * d) ** n} paths exceeds the limit {BRUTE_FORCE_LIMIT}"
        )
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    pos = np.zeros((1, d), dtype=np.int64)
    h = np.zeros(1, dtype=np.int64)
    for t in range(1, n + 1):
        pos = (pos[:, None, :] + steps[None, :, :]).reshape(-1, d)
        h = np.repeat(h, 2 * d)
        h += env.bits_at(t, pos)
    hist = np.bincount(h, minlength=n + 1)
    return _table(env, [int(c) for c in hist])


def r_n(table: CountTable, p: float, rho: float) -> int:
    """Number of paths with ``H_n >= n rho`` if ``rho >= p``, else ``H_n <= n rho``."""
    if not 0.0 <= rho <= 1.0:
        raise ContractError(f"rho must lie in [0, 1], got {rho!r}")
    n = table.n
    # tolerate float noise in n*rho so that exact fractions land on integers
    x = n * rho
    if rho >= p:
        lo = math.ceil(x - 1e-9)
        return sum(table.counts[max(lo, 0) :])
    hi = math.floor(x + 1e-9)
    return sum(table.counts[: hi + 1])


def extremes(table: CountTable) -> HnExtremes:
    lo, hi = table.support()
    return HnExtremes(max_h=hi, min_h=lo)


def extremes_dp(env, radius=None) -> HnExtremes:
    """Max-plus and min-plus sweeps for ``max_S H_n`` and ``min_S H_n``.

    With a ``radius`` the extremes are over the paths that stay in the ball,
    matching the support of the truncated polymer sweep.
    """
    d, n = env.d, env.n
    dom = _lattice.build_domain(d, n, _lattice.resolve_radius(d, n, radius))
    big = n + 1
    hi = [np.full(len(dom.coords[q]) + 1, -big, dtype=np.int64) for q in (0, 1)]
    lo = [np.full(len(dom.coords[q]) + 1, big, dtype=np.int64) for q in (0, 1)]
    hi[0][0] = lo[0][0] = 0
    for t in range(1, n + 1):
        q = t % 2
        m = dom.cnt[t]
        nb_ = dom.nbr[q][:m]
        eta = env.bits_at(t, dom.live(t)).astype(np.int64)
        hi[q][:m] = hi[1 - q][nb_].max(axis=1) + eta
        lo[q][:m] = lo[1 - q][nb_].min(axis=1) + eta
    m = dom.cnt[n]
    return HnExtremes(max_h=int(hi[n % 2][:m].max()), min_h=int(lo[n % 2][:m].min()))
