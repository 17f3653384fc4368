"""Sparse site layout shared by the counting and polymer sweeps.

Sites of the DP domain are split by the parity of ``|x|_1`` into two lists,
each sorted by ``(|x|_1, x)``.  The sites live at time ``t`` are then a
prefix of the list of parity ``t mod 2``, and a neighbour table indexes from
one parity list into the other.  Sentinel row ``len(other)`` is kept at zero
and stands for every neighbour outside the domain.

The domain is either the whole cone (``radius=None``, exact) or the cone cut
by the Euclidean ball ``|x|_2 <= radius`` (absorbing boundary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from .errors import ContractError

# full-cone sweeps above this many site-layers switch to a ball under "auto"
AUTO_FULL_CONE_LIMIT = 2.5e7
AUTO_RADIUS_FACTOR = 3.0


@dataclass(frozen=True)
class Domain:
    d: int
    n: int
    radius: float | None
    coords: tuple  # per parity: (N_q, d) int64
    l1: tuple
    r2: tuple
    nbr: tuple  # per parity q: (N_q, 2d) int32 indices into list 1-q
    cnt: np.ndarray  # cnt[t] live prefix length of list t % 2
    site_layers: int

    def live(self, t: int) -> np.ndarray:
        return self.coords[t % 2][: self.cnt[t]]


def cone_site_layers(d: int, n: int) -> int:
    from .environment import cone_size

    return cone_size(d, n)


def resolve_radius(d: int, n: int, radius) -> float | None:
    """Map a user radius argument to ``None`` (full cone) or a float ball radius.

    ``"auto"`` keeps the exact full cone while it costs at most
    ``AUTO_FULL_CONE_LIMIT`` site-layers and otherwise cuts the cone by a
    ball of radius ``3 sqrt(n)``.
    """
    if radius is None:
        return None
    if isinstance(radius, str):
        if radius == "full":
            return None
        if radius != "auto":
            raise ContractError(f"radius must be a number, 'auto', 'full' or None, got {radius!r}")
        if cone_site_layers(d, n) <= AUTO_FULL_CONE_LIMIT:
            return None
        radius = math.ceil(AUTO_RADIUS_FACTOR * math.sqrt(n))
    radius = float(radius)
    if radius <= 0:
        raise ContractError("radius must be positive")
    if radius >= n:
        return None
    return radius


def _enumerate(d: int, n: int, radius: float | None) -> np.ndarray:
    big = n if radius is None else min(n, int(math.floor(radius)))
    r2max = None if radius is None else radius * radius
    parts = []
    if d == 1:
        x = np.arange(-big, big + 1, dtype=np.int64)[:, None]
        parts.append(x)
    else:
        axes = np.arange(-big, big + 1, dtype=np.int64)
        rest = np.stack(np.meshgrid(*([axes] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1)
        rest_l1 = np.abs(rest).sum(axis=1)
        rest_r2 = (rest * rest).sum(axis=1)
        for a in range(-big, big + 1):
            keep = rest_l1 + abs(a) <= n
            if r2max is not None:
                keep &= rest_r2 + a * a <= r2max
            sub = rest[keep]
            parts.append(np.column_stack([np.full(len(sub), a, dtype=np.int64), sub]))
    pts = np.concatenate(parts)
    l1 = np.abs(pts).sum(axis=1)
    keep = l1 <= n
    if r2max is not None:
        keep &= (pts * pts).sum(axis=1) <= r2max
    return pts[keep]


def _keys(pts: np.ndarray, big: int) -> np.ndarray:
    base = 2 * big + 3
    k = np.zeros(len(pts), dtype=np.int64)
    for j in range(pts.shape[1]):
        k = k * base + (pts[:, j] + big + 1)
    return k


@lru_cache(maxsize=6)
def build_domain(d: int, n: int, radius: float | None) -> Domain:
    pts = _enumerate(d, n, radius)
    l1 = np.abs(pts).sum(axis=1)
    big = int(np.abs(pts).max()) if len(pts) else 0
    coords, l1s, r2s = [], [], []
    for q in (0, 1):
        sel = pts[l1 % 2 == q]
        sl1 = np.abs(sel).sum(axis=1)
        order = np.lexsort(tuple(sel[:, j] for j in range(d - 1, -1, -1)) + (sl1,))
        sel = np.ascontiguousarray(sel[order])
        sel.setflags(write=False)
        coords.append(sel)
        l1s.append(sl1[order])
        r2s.append((sel * sel).sum(axis=1))
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    nbrs = []
    for q in (0, 1):
        other = coords[1 - q]
        okeys = _keys(other, big)
        order = np.argsort(okeys, kind="stable")
        skeys = okeys[order]
        tab = np.empty((len(coords[q]), 2 * d), dtype=np.int32)
        for j, s in enumerate(steps):
            k = _keys(coords[q] + s, big)
            pos = np.searchsorted(skeys, k)
            pos = np.minimum(pos, len(skeys) - 1) if len(skeys) else pos
            hit = (skeys[pos] == k) if len(skeys) else np.zeros(len(k), bool)
            tab[:, j] = np.where(hit, order[pos] if len(skeys) else 0, len(other))
        nbrs.append(tab)
    cnt = np.zeros(n + 1, dtype=np.int64)
    for t in range(n + 1):
        cnt[t] = np.searchsorted(l1s[t % 2], t, side="right")
    return Domain(
        d=d,
        n=n,
        radius=radius,
        coords=tuple(coords),
        l1=tuple(l1s),
        r2=tuple(r2s),
        nbr=tuple(nbrs),
        cnt=cnt,
        site_layers=int(cnt[1:].sum()),
    )


@dataclass(frozen=True)
class PackedEta:
    """Occupation bits of the live sites of every layer, bit-packed per layer."""

    bits: np.ndarray  # uint8
    offset: np.ndarray  # byte offset of layer t


def domain_eta(env, dom: Domain) -> PackedEta:
    if env.n < dom.n or env.d != dom.d:
        raise ContractError("environment does not cover the requested domain")
    chunks = []
    offset = np.zeros(dom.n + 2, dtype=np.int64)
    pos = 0
    for t in range(1, dom.n + 1):
        b = env.bits_at(t, dom.live(t))
        packed = np.packbits(b, bitorder="little")
        chunks.append(packed)
        offset[t] = pos
        pos += len(packed)
    offset[dom.n + 1] = pos
    bits = np.concatenate(chunks) if chunks else np.zeros(0, np.uint8)
    return PackedEta(bits, offset)


def eta_layer(eta: PackedEta, dom: Domain, t: int) -> np.ndarray:
    raw = eta.bits[eta.offset[t] : eta.offset[t + 1]]
    return np.unpackbits(raw, bitorder="little")[: dom.cnt[t]]


# --------------------------------------------------------------------------
# numba sweep kernels


@nb.njit(inline="always")
def _mag(v):
    # cheap modulus proxy within a factor sqrt(2) of |v|; any positive layer
    # scale works, and this one avoids a hypot per site
    return abs(v.real) + abs(v.imag)


@nb.njit(cache=True)
def _sweep_z(nbr0, nbr1, cnt, bits, boff, n, w, buf0, buf1):
    """Forward sweep of z_t(x) = w(eta) sum_y z_{t-1}(y) for B weights at once.

    Returns (log_re, log_im) of Z_n with the imaginary part unwrapped along
    the sweep.  The final layer, scaled by exp(-log scale), stays in the
    buffer of parity n % 2.
    """
    B = w.shape[0]
    deg = nbr0.shape[1]
    buf0[0, :] = 1.0
    inv = np.ones(B)
    logscale = np.zeros(B)
    im_prev = np.zeros(B)
    log_re = np.zeros(B)
    acc = np.zeros(B, dtype=buf0.dtype)
    tot = np.zeros(B, dtype=buf0.dtype)
    # per-layer scale for closed (f0) and open (f1) sites
    f0 = np.ones(B, dtype=buf0.dtype)
    f1 = np.ones(B, dtype=buf0.dtype)
    mx = np.zeros(B)
    for t in range(1, n + 1):
        if t % 2 == 1:
            new = buf1
            old = buf0
            nbr = nbr1
        else:
            new = buf0
            old = buf1
            nbr = nbr0
        m = cnt[t]
        off = boff[t]
        for b in range(B):
            tot[b] = 0.0
            mx[b] = 0.0
            f0[b] = inv[b]
            f1[b] = inv[b] * w[b]
        for i in range(m):
            e = (bits[off + (i >> 3)] >> (i & 7)) & 1
            f = f1 if e else f0
            r = nbr[i, 0]
            for b in range(B):
                acc[b] = old[r, b]
            for j in range(1, deg):
                r = nbr[i, j]
                for b in range(B):
                    acc[b] += old[r, b]
            for b in range(B):
                v = acc[b] * f[b]
                new[i, b] = v
                tot[b] += v
                a = _mag(v)
                if a > mx[b]:
                    mx[b] = a
        for b in range(B):
            if mx[b] == 0.0:
                return log_re, im_prev, False
            lt = np.log(tot[b] + 0j)
            log_re[b] = logscale[b] + lt.real
            im = lt.imag
            k = np.round((im_prev[b] - im) / (2.0 * np.pi))
            im_prev[b] = im + 2.0 * np.pi * k
            logscale[b] += np.log(mx[b])
            inv[b] = 1.0 / mx[b]
    return log_re, im_prev, True


@nb.njit(cache=True)
def _sweep_z3(nbr0, nbr1, cnt, bits, boff, n, w, z0, z1, g0, g1, h0, h1):
    """As :func:`_sweep_z`, also propagating the first and second beta-derivatives.

    Returns (log_re, log_im, d1, d2, ok) where d1, d2 are derivatives of ln Z_n.
    """
    B = w.shape[0]
    deg = nbr0.shape[1]
    z0[0, :] = 1.0
    inv = np.ones(B)
    logscale = np.zeros(B)
    im_prev = np.zeros(B)
    log_re = np.zeros(B)
    dt = z0.dtype
    az = np.zeros(B, dtype=dt)
    ag = np.zeros(B, dtype=dt)
    ah = np.zeros(B, dtype=dt)
    tz = np.zeros(B, dtype=dt)
    tg = np.zeros(B, dtype=dt)
    th = np.zeros(B, dtype=dt)
    mx = np.zeros(B)
    for t in range(1, n + 1):
        if t % 2 == 1:
            nz, oz, ng, og, nh, oh, nbr = z1, z0, g1, g0, h1, h0, nbr1
        else:
            nz, oz, ng, og, nh, oh, nbr = z0, z1, g0, g1, h0, h1, nbr0
        m = cnt[t]
        off = boff[t]
        for b in range(B):
            tz[b] = 0.0
            tg[b] = 0.0
            th[b] = 0.0
            mx[b] = 0.0
        for i in range(m):
            e = (bits[off + (i >> 3)] >> (i & 7)) & 1
            for b in range(B):
                az[b] = 0.0
                ag[b] = 0.0
                ah[b] = 0.0
            for j in range(deg):
                r = nbr[i, j]
                for b in range(B):
                    az[b] += oz[r, b]
                    ag[b] += og[r, b]
                    ah[b] += oh[r, b]
            for b in range(B):
                s = inv[b]
                vz = az[b] * s
                vg = ag[b] * s
                vh = ah[b] * s
                if e:
                    wb = w[b]
                    vz = vz * wb
                    vg = vg * wb
                    vh = vh * wb + 2.0 * vg + vz
                    vg = vg + vz
                nz[i, b] = vz
                ng[i, b] = vg
                nh[i, b] = vh
                tz[b] += vz
                tg[b] += vg
                th[b] += vh
                a = _mag(vz)
                if a > mx[b]:
                    mx[b] = a
        for b in range(B):
            if mx[b] == 0.0:
                return log_re, im_prev, tg, th, False
            lt = np.log(tz[b] + 0j)
            log_re[b] = logscale[b] + lt.real
            im = lt.imag
            k = np.round((im_prev[b] - im) / (2.0 * np.pi))
            im_prev[b] = im + 2.0 * np.pi * k
            logscale[b] += np.log(mx[b])
            inv[b] = 1.0 / mx[b]
    d1 = np.zeros(B, dtype=dt)
    d2 = np.zeros(B, dtype=dt)
    for b in range(B):
        d1[b] = tg[b] / tz[b]
        d2[b] = th[b] / tz[b] - d1[b] * d1[b]
    return log_re, im_prev, d1, d2, True
