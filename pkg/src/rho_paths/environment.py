"""Bernoulli space-time environments restricted to the reachable cone.

An :class:`Environment` stores one bit per cone site, packed into 64-bit
words in layered order (time-major, then lexicographic in ``x``).  Generated
environments are driven by a counter-based hash of ``(seed, t, x)``; the
same hash lets a lazy environment, or a shifted view of one, regenerate any
site of the infinite field without storing it.
"""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _cone
from .errors import ContractError, ResourceError

__all__ = [
    "DEFAULT_MEMORY_BUDGET",
    "EnvParams",
    "Environment",
    "EnvironmentView",
    "generate",
    "m_event_probability",
    "memory_budget",
]

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
MAGIC = b"RHOPATH1"
_HEADER = struct.Struct("<8sIIdQ")  # 32 bytes


def _parse_bytes(text: str) -> int:
    m = re.fullmatch(r"\s*([0-9.]+)\s*([KMG]?)(?:I?B)?\s*", text.upper())
    if not m:
        raise ContractError(f"cannot parse memory budget {text!r}")
    return int(float(m.group(1)) * {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3}[m.group(2)])


def memory_budget(override: int | None = None) -> int:
    """Resolve the memory budget in bytes.

    An explicit ``override`` wins, then ``RHO_PATHS_MEM_BUDGET``, then 2 GiB.
    """
    if override is not None:
        return int(override)
    env = os.environ.get("RHO_PATHS_MEM_BUDGET")
    if env:
        return _parse_bytes(env)
    return DEFAULT_MEMORY_BUDGET


@dataclass(frozen=True)
class EnvParams:
    d: int
    n: int
    p: float
    seed: int = 0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ContractError(f"dimension d must be an integer >= 1, got {self.d!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ContractError(f"horizon n must be an integer >= 1, got {self.n!r}")
        if not 0.0 < float(self.p) < 1.0:
            raise ContractError(f"p must lie in (0, 1), got {self.p!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ContractError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "seed", int(self.seed))

    def with_n(self, n: int) -> "EnvParams":
        return EnvParams(self.d, n, self.p, self.seed)

    def with_seed(self, seed: int) -> "EnvParams":
        return EnvParams(self.d, self.n, self.p, seed)

    def to_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "p": self.p, "seed": self.seed}


def cone_size(d: int, n: int) -> int:
    """Number of sites in the cone up to horizon ``n``."""
    return int(_cone.layer_offsets(d, n)[n + 1])


def _as_coords(x, d: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if arr.shape != (d,):
        raise ContractError(f"lattice point must have {d} coordinates, got shape {arr.shape}")
    return arr


class _FieldBase:
    """Query interface shared by stored environments and shifted views."""

    params: EnvParams

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def p(self) -> float:
        return self.params.p

    def _check_cone(self, t: int, coords: np.ndarray) -> None:
        if not 1 <= t <= self.n:
            raise ContractError(f"time {t} outside [1, {self.n}]")
        l1 = np.abs(coords).sum(axis=1)
        if np.any(l1 > t):
            raise ContractError(f"site outside the reachable cone at t={t}: |x|_1 > t")
        if np.any((l1 - t) % 2):
            raise ContractError(f"site with wrong parity at t={t}: |x|_1 != t mod 2")

    def query(self, t: int, x) -> int:
        """Occupation bit of the in-cone site ``(t, x)``."""
        coords = _as_coords(x, self.d)[None, :]
        return int(self.bits_at(int(t), coords)[0])

    def bits_at(self, t: int, coords: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`query` for an ``(m, d)`` array of layer-``t`` sites."""
        coords = np.ascontiguousarray(coords, dtype=np.int64).reshape(-1, self.d)
        self._check_cone(t, coords)
        return self._bits_unchecked(t, coords)

    def shifted_view(self, m: int, x0, horizon: int | None = None) -> "EnvironmentView":
        """Read-only view with ``view.query(t, x) == self.query(t + m, x + x0)``."""
        return EnvironmentView(self, int(m), _as_coords(x0, self.d), horizon)


class Environment(_FieldBase):
    """Immutable bit field over the reachable cone of horizon ``params.n``.

    Parameters
    ----------
    params : EnvParams
    words : ndarray of uint64 or None
        Packed bits in layered order.  ``None`` means the environment is lazy
        and every site is regenerated from the counter-based hash.
    regenerable : bool
        Whether the bits are known to equal the hash of ``params.seed``; only
        then may views read sites outside the stored cone.
    """

    def __init__(self, params: EnvParams, words: np.ndarray | None, regenerable: bool):
        self.params = params
        self.regenerable = bool(regenerable)
        self.n_sites = cone_size(params.d, params.n)
        self._offsets = _cone.layer_offsets(params.d, params.n)
        if words is None:
            if not regenerable:
                raise ContractError("a lazy environment must be regenerable")
            self._words = None
        else:
            words = np.ascontiguousarray(words, dtype=np.uint64)
            if words.shape != ((self.n_sites + 63) // 64,):
                raise ContractError("packed word array has the wrong length for this cone")
            words.setflags(write=False)
            self._words = words
        self._bits_cache = None

    # construction -----------------------------------------------------
    @classmethod
    def from_function(cls, params: EnvParams, fn) -> "Environment":
        """Materialise ``fn(t, coords) -> bits`` over the cone (test fixtures)."""
        bits = np.empty(cone_size(params.d, params.n), dtype=np.uint8)
        off = _cone.layer_offsets(params.d, params.n)
        for t in range(1, params.n + 1):
            coords = _cone.layer_coords(params.d, t)
            vals = np.asarray(fn(t, coords), dtype=np.uint8).reshape(-1)
            if vals.shape[0] != coords.shape[0] or np.any(vals > 1):
                raise ContractError("fixture function must return one 0/1 value per site")
            bits[off[t] : off[t + 1]] = vals
        return cls(params, _pack(bits), regenerable=False)

    @classmethod
    def constant(cls, d: int, n: int, value: int, p: float = 0.5) -> "Environment":
        """All-open (``value=1``) or all-closed (``value=0``) fixture."""
        return cls.from_function(
            EnvParams(d, n, p, 0), lambda t, c: np.full(len(c), value, dtype=np.uint8)
        )

    # storage ----------------------------------------------------------
    @property
    def materialized(self) -> bool:
        return self._words is not None

    @property
    def nbytes(self) -> int:
        return 8 * ((self.n_sites + 63) // 64)

    def materialize(self, budget: int | None = None) -> "Environment":
        if self.materialized:
            return self
        return generate(self.params, materialize=True, budget=budget)

    def _unpacked(self) -> np.ndarray:
        if self._bits_cache is None:
            self._bits_cache = _unpack(self._words, self.n_sites)
        return self._bits_cache

    def layer_bits(self, t: int) -> np.ndarray:
        """Bits of layer ``t`` in lexicographic site order."""
        if not 1 <= t <= self.n:
            raise ContractError(f"time {t} outside [1, {self.n}]")
        if self.materialized:
            return self._unpacked()[self._offsets[t] : self._offsets[t + 1]].copy()
        return self._bits_unchecked(t, _cone.layer_coords(self.d, t))

    def _bits_unchecked(self, t: int, coords: np.ndarray) -> np.ndarray:
        if not self.materialized:
            return _cone.site_bits(self.params.seed, self.p, t, coords)
        idx = self._offsets[t] + _cone.layer_ranks(self.d, self.n, t, coords)
        return self._unpacked()[idx]

    def _field(self, t: int, coords: np.ndarray) -> np.ndarray:
        """Bits of arbitrary space-time sites; outside the cone needs regeneration."""
        coords = np.ascontiguousarray(coords, dtype=np.int64).reshape(-1, self.d)
        inside = (1 <= t <= self.n) and bool(np.all(_cone.in_cone(t, coords)))
        if self.regenerable and (not self.materialized or not inside):
            return _cone.site_bits(self.params.seed, self.p, t, coords)
        if not inside:
            raise ContractError(
                "shifted cone escapes the parent slab and the parent cannot regenerate sites"
            )
        return self._bits_unchecked(t, coords)

    # serialization ----------------------------------------------------
    def to_bytes(self, budget: int | None = None) -> bytes:
        env = self.materialize(budget)
        head = _HEADER.pack(MAGIC, env.d, env.n, env.p, env.params.seed)
        return head + env._words.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Environment":
        if len(data) < _HEADER.size:
            raise ContractError("environment file truncated: missing header")
        magic, d, n, p, seed = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ContractError(f"bad magic {magic!r}, expected {MAGIC!r}")
        params = EnvParams(d, n, p, seed)
        nwords = (cone_size(d, n) + 63) // 64
        body = data[_HEADER.size :]
        if len(body) != 8 * nwords:
            raise ContractError(f"environment body has {len(body)} bytes, expected {8 * nwords}")
        words = np.frombuffer(body, dtype="<u8").astype(np.uint64)
        return cls(params, words, regenerable=False)

    def save(self, path, budget: int | None = None) -> None:
        Path(path).write_bytes(self.to_bytes(budget))

    @classmethod
    def load(cls, path) -> "Environment":
        return cls.from_bytes(Path(path).read_bytes())

    def __eq__(self, other):
        if not isinstance(other, Environment) or other.params != self.params:
            return NotImplemented
        a, b = self.materialize(), other.materialize()
        return bool(np.array_equal(a._words, b._words))

    def __hash__(self):
        return hash(self.params)

    def __repr__(self):
        kind = "packed" if self.materialized else "lazy"
        return f"Environment({self.params}, {kind}, sites={self.n_sites})"


class EnvironmentView(_FieldBase):
    """Shifted read-only window onto a parent field."""

    def __init__(self, parent: _FieldBase, m: int, x0: np.ndarray, horizon: int | None):
        if m < 0:
            raise ContractError("time offset m must be nonnegative")
        if isinstance(parent, EnvironmentView):
            m, x0 = m + parent.m, x0 + parent.x0
            parent = parent.parent
        self.parent = parent
        self.m = int(m)
        self.x0 = np.asarray(x0, dtype=np.int64)
        h = parent.n - self.m if horizon is None else int(horizon)
        if h < 1:
            raise ContractError("shifted view has an empty horizon")
        self.params = EnvParams(parent.d, h, parent.p, parent.params.seed)
        fits = (
            self.m + h <= parent.n
            and int(np.abs(self.x0).sum()) <= self.m
            and (int(np.abs(self.x0).sum()) - self.m) % 2 == 0
        )
        self.regenerable = parent.regenerable
        if not fits and not parent.regenerable:
            raise ContractError(
                "shifted cone escapes the parent slab and counter-based regeneration is unavailable"
            )

    def _bits_unchecked(self, t: int, coords: np.ndarray) -> np.ndarray:
        return self.parent._field(t + self.m, coords + self.x0)

    def _field(self, t, coords):
        return self.parent._field(t + self.m, np.asarray(coords, dtype=np.int64) + self.x0)

    def __repr__(self):
        return f"EnvironmentView(m={self.m}, x0={self.x0.tolist()}, horizon={self.n})"


def _pack(bits: np.ndarray) -> np.ndarray:
    n = bits.shape[0]
    nwords = (n + 63) // 64
    padded = np.zeros(nwords * 64, dtype=np.uint8)
    padded[:n] = bits
    return np.packbits(padded, bitorder="little").view("<u8").astype(np.uint64)


def _unpack(words: np.ndarray, n_sites: int) -> np.ndarray:
    raw = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n_sites]


def generate(params: EnvParams, *, materialize: bool = True, budget: int | None = None) -> Environment:
    """Draw the environment of ``params`` from the site-keyed hash.

    With ``materialize=False`` no bits are stored; every query re-derives its
    bit from ``(seed, t, x)``, which is bit-identical to the stored form.
    """
    if not materialize:
        return Environment(params, None, regenerable=True)
    limit = memory_budget(budget)
    n_sites = cone_size(params.d, params.n)
    need = 8 * ((n_sites + 63) // 64)
    if need > limit:
        raise ResourceError(
            f"cone of d={params.d}, n={params.n} needs {need} bytes of packed bits, "
            f"exceeding the memory budget of {limit} bytes (set RHO_PATHS_MEM_BUDGET "
            "or use a lazy environment)"
        )
    bits = np.empty(n_sites, dtype=np.uint8)
    off = _cone.layer_offsets(params.d, params.n)
    for t in range(1, params.n + 1):
        pos = off[t]
        for coords in _cone.iter_layer_slices(params.d, t):
            k = coords.shape[0]
            bits[pos : pos + k] = _cone.site_bits(params.seed, params.p, t, coords)
            pos += k
    return Environment(params, _pack(bits), regenerable=True)


def two_step_intermediates(x) -> np.ndarray:
    """Sites z with |z|_1 = 1 and |x - z|_1 = 1."""
    x = np.asarray(x, dtype=np.int64)
    d = x.shape[0]
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    keep = np.abs(x[None, :] - steps).sum(axis=1) == 1
    return steps[keep]


def m_event_probability(d: int, p: float, x) -> float:
    """Probability that the sites between 0 and the two-step point x disagree.

    With ``c`` the number of intermediate sites (2d, 2 or 1), this is
    ``1 - p**c - (1-p)**c``.
    """
    x = _as_coords(x, d)
    l1 = int(np.abs(x).sum())
    if l1 not in (0, 2):
        raise ContractError(f"{x.tolist()} is not reachable by the walk in two steps")
    c = len(two_step_intermediates(x))
    return 1.0 - (p**c + (1.0 - p) ** c)
