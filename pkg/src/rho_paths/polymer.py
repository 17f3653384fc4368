"""Partition function of the directed polymer, in the log domain.

``Z_n(beta) = sum_S exp(beta H_n(S))`` is computed by a forward sweep whose
layers are rescaled by their largest modulus; the logs of the scales are
accumulated, so ``|Z_n|`` may span ``e^{+-O(n)}`` without overflow and complex
phases survive intact.  First and second beta-derivatives of ``ln Z_n`` come
from propagating ``(z, dz, d2z)`` triples through the same recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _lattice
from .environment import memory_budget
from .errors import ContractError, DomainError, NumericalError, ResourceError

__all__ = [
    "LogPartition",
    "MartingaleValue",
    "log_partition",
    "log_partition_batch",
    "martingale",
    "tilted_law",
]

_MAX_BATCH = 64


@dataclass(frozen=True)
class LogPartition:
    """``ln Z_n(beta)`` and its first two derivatives.

    For real beta all fields are real; ``d1`` is then the mean and ``d2`` the
    variance of the tilted energy law.  ``edge_mass`` is the share of the
    final-layer weight within 20% of the ball boundary, or ``None`` on the
    untruncated cone.
    """

    beta: complex
    n: int
    log_z: complex
    d1: complex
    d2: complex
    radius: float | None = None
    edge_mass: float | None = None

    def to_dict(self) -> dict:
        b, lz, d1, d2 = (complex(v) for v in (self.beta, self.log_z, self.d1, self.d2))
        return {
            "beta_re": b.real,
            "beta_im": b.imag,
            "n": self.n,
            "log_z_re": lz.real,
            "log_z_im": lz.imag,
            "d1": d1.real,
            "d1_im": d1.imag,
            "d2": d2.real,
            "d2_im": d2.imag,
            "radius": self.radius,
            "edge_mass": self.edge_mass,
        }


@dataclass(frozen=True)
class MartingaleValue:
    beta: complex
    w: complex


def _check_beta(beta, closed=False):
    im = abs(np.imag(beta))
    if im > math.pi or (im == math.pi and not closed):
        raise DomainError(f"|Im beta| must be < pi, got beta={beta!r}")


class _Prepared:
    __slots__ = ("dom", "eta")

    def __init__(self, dom, eta):
        self.dom = dom
        self.eta = eta


def _prepare(env, radius) -> _Prepared:
    r = _lattice.resolve_radius(env.d, env.n, radius)
    cache = env.__dict__.setdefault("_polymer_cache", {})
    if r not in cache:
        dom = _lattice.build_domain(env.d, env.n, r)
        cache.clear()  # one domain per environment keeps memory bounded
        cache[r] = _Prepared(dom, _lattice.domain_eta(env, dom))
    return cache[r]


def _edge_mass(dom, final: np.ndarray) -> np.ndarray | None:
    if dom.radius is None:
        return None
    q = dom.n % 2
    m = dom.cnt[dom.n]
    mag = np.abs(final[:m])
    edge = dom.r2[q][:m] > (0.8 * dom.radius) ** 2
    tot = mag.sum(axis=0)
    return mag[edge].sum(axis=0) / tot


def log_partition_batch(
    env,
    betas,
    *,
    radius=None,
    derivatives: bool = False,
    budget: int | None = None,
    closed: bool = False,
) -> dict:
    """Evaluate ``ln Z_n`` at many inverse temperatures sharing one sweep.

    Parameters
    ----------
    env : Environment or EnvironmentView
    betas : array_like of real or complex
    radius : None, float, "auto" or "full"
        ``None``/"full" sweeps the whole cone exactly; a number cuts it by the
        Euclidean ball of that radius; "auto" picks per problem size.
    derivatives : bool
        Also return ``d1`` and ``d2`` (three times the memory traffic).
    closed : bool
        Admit ``|Im beta| = pi``.  ``Z_n`` is entire, only ``lambda`` needs
        the open strip; the decay profile uses this at ``u = pi``.

    Returns
    -------
    dict with arrays ``log_z`` (complex), ``d1``, ``d2`` (or ``None``),
    ``edge_mass`` (or ``None``) and the resolved ``radius``.
    """
    betas = np.atleast_1d(np.asarray(betas))
    for b in betas:
        _check_beta(b, closed)
    is_complex = np.iscomplexobj(betas) and bool(np.any(np.imag(betas) != 0))
    dtype = np.complex128 if is_complex else np.float64
    betas = betas.astype(dtype)
    prep = _prepare(env, radius)
    dom = prep.dom
    rows = max(len(dom.coords[0]), len(dom.coords[1])) + 1
    nbuf = 6 if derivatives else 2
    per_beta = rows * nbuf * np.dtype(dtype).itemsize
    limit = memory_budget(budget)
    chunk = min(_MAX_BATCH, limit // (2 * per_beta))
    if chunk < 1:
        raise ResourceError(
            f"polymer sweep needs {per_beta} bytes per inverse temperature, over half the "
            f"memory budget of {limit} bytes"
        )
    nb_ = len(betas)
    log_z = np.zeros(nb_, dtype=np.complex128)
    d1 = np.zeros(nb_, dtype=dtype) if derivatives else None
    d2 = np.zeros(nb_, dtype=dtype) if derivatives else None
    edge = np.zeros(nb_) if dom.radius is not None else None
    eta = prep.eta
    for lo in range(0, nb_, chunk):
        bb = betas[lo : lo + chunk]
        w = np.exp(bb)
        k = len(bb)
        bufs = [np.zeros((len(dom.coords[q % 2]) + 1, k), dtype=dtype) for q in range(nbuf)]
        if derivatives:
            lr, li, g, h, ok = _lattice._sweep_z3(
                dom.nbr[0], dom.nbr[1], dom.cnt, eta.bits, eta.offset, dom.n, w, *bufs
            )
            d1[lo : lo + k] = g
            d2[lo : lo + k] = h
        else:
            lr, li, ok = _lattice._sweep_z(
                dom.nbr[0], dom.nbr[1], dom.cnt, eta.bits, eta.offset, dom.n, w, *bufs
            )
        if not ok:
            raise NumericalError(
                "a sweep layer vanished identically", {"betas": bb.tolist(), "n": dom.n}
            )
        log_z[lo : lo + k] = lr + 1j * li
        if edge is not None:
            edge[lo : lo + k] = _edge_mass(dom, bufs[dom.n % 2])
    # Z_n(0) = (2d)^n exactly, also for the untruncated problem behind a ball
    log_z[betas == 0] = dom.n * math.log(2 * dom.d)
    return {"log_z": log_z, "d1": d1, "d2": d2, "edge_mass": edge, "radius": dom.radius}


def log_partition(env, beta, *, radius=None, derivatives: bool = True) -> LogPartition:
    """``ln Z_n(beta)`` with its first and second derivatives."""
    _check_beta(beta)
    out = log_partition_batch(env, [beta], radius=radius, derivatives=derivatives)
    real = np.imag(beta) == 0
    lz = out["log_z"][0]
    d1 = out["d1"][0] if derivatives else np.nan
    d2 = out["d2"][0] if derivatives else np.nan
    em = None if out["edge_mass"] is None else float(out["edge_mass"][0])
    if real:
        return LogPartition(float(np.real(beta)), env.n, float(lz.real), float(np.real(d1)),
                            float(np.real(d2)), out["radius"], em)
    return LogPartition(complex(beta), env.n, complex(lz), complex(d1), complex(d2),
                        out["radius"], em)


def martingale(env, beta, *, radius=None) -> MartingaleValue:
    """``W_n(beta) = Z_n(beta) exp(-n lambda_hat(beta))``."""
    from .thermo import lam

    _check_beta(beta)
    lp = log_partition(env, beta, radius=radius, derivatives=False)
    expo = lp.log_z - env.n * (lam(beta, env.p) + math.log(2 * env.d))
    if np.imag(beta) == 0:
        return MartingaleValue(float(np.real(beta)), float(math.exp(np.real(expo))))
    return MartingaleValue(complex(beta), complex(np.exp(expo)))


def martingale_batch(env, betas, *, radius=None) -> np.ndarray:
    from .thermo import lam

    betas = np.atleast_1d(np.asarray(betas))
    out = log_partition_batch(env, betas, radius=radius)
    expo = out["log_z"] - env.n * (lam(betas, env.p) + math.log(2 * env.d))
    w = np.exp(expo)
    return w.real if not np.iscomplexobj(betas) or np.all(np.imag(betas) == 0) else w


def tilted_law(env, beta: float, table=None) -> np.ndarray:
    """Mass function ``nu(k) = Q_n(k) e^{beta k} / Z_n(beta)`` from the exact table."""
    from .pathcount import count_exact

    if np.iscomplexobj(beta) and np.imag(beta) != 0:
        raise ContractError("the tilted law needs a real beta")
    beta = float(np.real(beta))
    if table is None:
        table = count_exact(env)
    logq = np.array([math.log(c) if c > 0 else -np.inf for c in table.counts])
    a = logq + beta * np.arange(table.n + 1)
    a -= a.max()
    w = np.exp(a)
    return w / w.sum()
